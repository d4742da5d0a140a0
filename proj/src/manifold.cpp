#include "spdnet/manifold.hpp"

#include "spdnet/errors.hpp"

#include <cmath>
#include <sstream>
#include <string>

namespace spdnet {

Matrix sym(const Matrix& a) { return 0.5 * (a + a.transpose()); }

bool is_symmetric(const Matrix& a, double rel_tol) {
  if (a.rows() != a.cols()) return false;
  const double scale = a.cwiseAbs().maxCoeff();
  const double asym = (a - a.transpose()).cwiseAbs().maxCoeff();
  return asym <= rel_tol * scale;
}

void require_finite(const Matrix& a, const char* where) {
  if (!a.allFinite()) {
    throw NumericalError(std::string("non-finite value in ") + where);
  }
}

namespace {

void check_square_nonempty(const Matrix& a, const char* what) {
  if (a.rows() == 0 || a.rows() != a.cols()) {
    std::ostringstream os;
    os << what << ": expected a non-empty square matrix, got " << a.rows()
       << "x" << a.cols();
    throw DimensionMismatchError(os.str());
  }
}

// Flip each eigenvector so that its largest-magnitude entry is positive.
void fix_signs(Matrix& vectors) {
  for (Eigen::Index c = 0; c < vectors.cols(); ++c) {
    Eigen::Index row = 0;
    vectors.col(c).cwiseAbs().maxCoeff(&row);
    if (vectors(row, c) < 0.0) vectors.col(c) = -vectors.col(c);
  }
}

}  // namespace

SymMatrix::SymMatrix(const Matrix& a) {
  check_square_nonempty(a, "SymMatrix");
  require_finite(a, "SymMatrix");
  if (!is_symmetric(a)) {
    throw PreconditionError("SymMatrix: input is not symmetric");
  }
  m_ = sym(a);
}

SymMatrix SymMatrix::symmetrize(const Matrix& a) {
  check_square_nonempty(a, "SymMatrix::symmetrize");
  require_finite(a, "SymMatrix::symmetrize");
  return SymMatrix(sym(a), Unchecked{});
}

SymMatrix SymMatrix::zero(int dim) {
  return SymMatrix(Matrix::Zero(dim, dim), Unchecked{});
}

SymMatrix SymMatrix::identity(int dim) {
  return SymMatrix(Matrix::Identity(dim, dim), Unchecked{});
}

SpdMatrix::SpdMatrix(const Matrix& a) : cache_(std::make_shared<Cache>()) {
  check_square_nonempty(a, "SpdMatrix");
  require_finite(a, "SpdMatrix");
  if (!is_symmetric(a)) {
    throw PreconditionError("SpdMatrix: input is not symmetric");
  }
  m_ = sym(a);
  Eigen::LLT<Matrix> llt(m_);
  if (llt.info() != Eigen::Success) {
    throw NotPositiveDefiniteError("SpdMatrix: input is not positive definite");
  }
}

SpdMatrix SpdMatrix::identity(int dim) {
  return from_eigen(Matrix::Identity(dim, dim), Vector::Ones(dim));
}

SpdMatrix SpdMatrix::from_eigen(const Matrix& vectors, const Vector& values) {
  if (vectors.rows() != vectors.cols() || vectors.cols() != values.size() ||
      values.size() == 0) {
    throw DimensionMismatchError("SpdMatrix::from_eigen: shape mismatch");
  }
  for (Eigen::Index i = 0; i < values.size(); ++i) {
    if (!(values(i) > 0.0) || !std::isfinite(values(i))) {
      throw NotPositiveDefiniteError(
          "SpdMatrix::from_eigen: eigenvalue is not strictly positive");
    }
    if (i > 0 && values(i) < values(i - 1)) {
      throw PreconditionError("SpdMatrix::from_eigen: values not ascending");
    }
  }
  SpdMatrix out;
  out.m_ = reconstruct(vectors, values);
  out.cache_ = std::make_shared<Cache>();
  std::call_once(out.cache_->once, [&] {
    out.cache_->pair = EigenPair{values, vectors};
  });
  return out;
}

const EigenPair& SpdMatrix::eig() const {
  if (!cache_) throw PreconditionError("SpdMatrix: empty matrix");
  std::call_once(cache_->once, [this] {
    cache_->pair = sym_eig(SymMatrix::symmetrize(m_));
  });
  return cache_->pair;
}

SymMatrix SpdMatrix::as_sym() const { return SymMatrix::symmetrize(m_); }

EigenPair sym_eig(const SymMatrix& x) {
  Eigen::SelfAdjointEigenSolver<Matrix> solver(x.matrix());
  if (solver.info() != Eigen::Success) {
    throw NumericalError("sym_eig: eigensolver failed to converge");
  }
  EigenPair out{solver.eigenvalues(), solver.eigenvectors()};
  fix_signs(out.vectors);
  return out;
}

EigenPair sym_eig(const Matrix& x) { return sym_eig(SymMatrix(x)); }

Matrix reconstruct(const Matrix& vectors, const Vector& values) {
  return sym(vectors * values.asDiagonal() * vectors.transpose());
}

SymMatrix spd_log(const SpdMatrix& x) {
  const EigenPair& e = x.eig();
  if (e.values(0) < kLogEigenvalueFloor) {
    throw NotPositiveDefiniteError(
        "spd_log: eigenvalue below the 1e-14 floor");
  }
  return SymMatrix::symmetrize(
      reconstruct(e.vectors, e.values.array().log().matrix()));
}

SpdMatrix spd_exp(const SymMatrix& t) {
  const EigenPair e = sym_eig(t);
  return SpdMatrix::from_eigen(e.vectors, e.values.array().exp().matrix());
}

double lem_distance_sq(const SpdMatrix& x, const SpdMatrix& y) {
  if (x.dim() != y.dim()) {
    throw DimensionMismatchError("lem_distance_sq: dimension mismatch");
  }
  return (spd_log(y).matrix() - spd_log(x).matrix()).squaredNorm();
}

namespace {

void check_same_dims(std::span<const SpdMatrix> xs, const char* what) {
  if (xs.empty()) {
    throw PreconditionError(std::string(what) + ": empty input set");
  }
  for (const auto& x : xs) {
    if (x.dim() != xs.front().dim()) {
      throw DimensionMismatchError(std::string(what) + ": dimension mismatch");
    }
  }
}

}  // namespace

SpdMatrix frechet_mean_lem(std::span<const SpdMatrix> xs) {
  check_same_dims(xs, "frechet_mean_lem");
  if (xs.size() == 1) return xs.front();
  const auto n = static_cast<Eigen::Index>(xs.size());
  return weighted_frechet_mean_lem(
      xs, Vector::Constant(n, 1.0 / static_cast<double>(n)));
}

SpdMatrix weighted_frechet_mean_lem(std::span<const SpdMatrix> xs,
                                    const Vector& weights) {
  check_same_dims(xs, "weighted_frechet_mean_lem");
  if (static_cast<std::size_t>(weights.size()) != xs.size()) {
    throw DimensionMismatchError(
        "weighted_frechet_mean_lem: weight count differs from set size");
  }
  if ((weights.array() <= 0.0).any()) {
    throw PreconditionError(
        "weighted_frechet_mean_lem: weights must be strictly positive");
  }
  if (std::abs(weights.sum() - 1.0) > 1e-10) {
    throw PreconditionError("weighted_frechet_mean_lem: weights must sum to 1");
  }
  Matrix acc = Matrix::Zero(xs.front().dim(), xs.front().dim());
  for (std::size_t i = 0; i < xs.size(); ++i) {
    acc += weights(static_cast<Eigen::Index>(i)) * spd_log(xs[i]).matrix();
  }
  return spd_exp(SymMatrix::symmetrize(acc));
}

}  // namespace spdnet
