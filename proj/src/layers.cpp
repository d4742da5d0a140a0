#include "spdnet/layers.hpp"

#include "spdnet/errors.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <sstream>

namespace spdnet {

namespace {

std::atomic<std::uint64_t> g_degenerate_events{0};

}  // namespace

std::uint64_t degenerate_gap_events() { return g_degenerate_events.load(); }
void reset_degenerate_gap_events() { g_degenerate_events.store(0); }

StiefelParam::StiefelParam(const Matrix& w, double tol) : w_(w) {
  if (w.cols() == 0 || w.cols() > w.rows()) {
    std::ostringstream os;
    os << "StiefelParam: need 0 < d_out <= d_in, got " << w.rows() << "x"
       << w.cols();
    throw DimensionMismatchError(os.str());
  }
  require_finite(w, "StiefelParam");
  if (orthogonality_residual() > tol) {
    throw PreconditionError("StiefelParam: columns are not orthonormal");
  }
}

StiefelParam StiefelParam::identity_columns(int d_in, int d_out) {
  return StiefelParam(Matrix::Identity(d_in, d_out));
}

StiefelParam StiefelParam::random(int d_in, int d_out, std::mt19937_64& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  Matrix g(d_in, d_out);
  for (Eigen::Index j = 0; j < g.cols(); ++j) {
    for (Eigen::Index i = 0; i < g.rows(); ++i) g(i, j) = normal(rng);
  }
  Eigen::HouseholderQR<Matrix> qr(g);
  Matrix q = qr.householderQ() * Matrix::Identity(d_in, d_out);
  const Matrix r = qr.matrixQR().topRows(d_out).triangularView<Eigen::Upper>();
  for (int i = 0; i < d_out; ++i) {
    if (r(i, i) < 0.0) q.col(i) = -q.col(i);
  }
  return StiefelParam(q);
}

double StiefelParam::orthogonality_residual() const {
  return (w_.transpose() * w_ - Matrix::Identity(w_.cols(), w_.cols())).norm();
}

Matrix eig_function_bwd(const Matrix& vectors, const Vector& values,
                        const Vector& f, const Vector& f_prime,
                        const Matrix& dY, const EigBackwardOptions& opts) {
  const Eigen::Index n = values.size();
  if (dY.rows() != n || dY.cols() != n || vectors.rows() != n ||
      f.size() != n || f_prime.size() != n) {
    throw DimensionMismatchError("eig_function_bwd: shape mismatch");
  }
  require_finite(dY, "eig backward input gradient");

  const Matrix& u = vectors;
  const Matrix delta = sym(dY);
  const Matrix omega1 = 2.0 * delta * u * f.asDiagonal();
  const Matrix projected = u.transpose() * delta * u;
  const Vector omega2 = f_prime.cwiseProduct(projected.diagonal());

  const double radius = values.cwiseAbs().maxCoeff();
  const double gap_floor = opts.relative_gap * radius;

  Matrix phi = Matrix::Zero(n, n);
  Matrix degenerate = Matrix::Zero(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < n; ++j) {
      if (i == j) continue;
      const double gap = values(i) - values(j);
      if (std::abs(gap) <= gap_floor) {
        degenerate(i, j) = 1.0;
        continue;
      }
      double denom = gap;
      if (opts.phi == PhiVariant::kSquaredDifference) {
        denom = values(i) * values(i) - values(j) * values(j);
        const double floor_sq = opts.relative_gap * radius * radius;
        if (std::abs(denom) < floor_sq) {
          denom = denom < 0.0 ? -floor_sq : floor_sq;
        }
      }
      phi(i, j) = 1.0 / denom;
    }
  }

  const Matrix scaled = phi.transpose().cwiseProduct(u.transpose() * omega1);
  Matrix inner = sym(scaled);
  inner.diagonal() = omega2;

  std::uint64_t pairs = 0;
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = i + 1; j < n; ++j) {
      if (degenerate(i, j) == 0.0) continue;
      if (opts.degenerate == DegeneratePolicy::kStrict) {
        throw DegenerateSpectrumError(
            "eig backward: eigenvalue gap below the degeneracy threshold");
      }
      const double slope = 0.5 * (f_prime(i) + f_prime(j));
      inner(i, j) = slope * projected(i, j);
      inner(j, i) = slope * projected(j, i);
      ++pairs;
    }
  }
  if (pairs > 0) g_degenerate_events.fetch_add(pairs);

  return sym(u * inner * u.transpose());
}

const char* to_string(LayerKind kind) {
  switch (kind) {
    case LayerKind::kBiMap: return "BiMap";
    case LayerKind::kBiMapUp: return "BiMap(up)";
    case LayerKind::kReEig: return "ReEig";
    case LayerKind::kLogEig: return "LogEig";
    case LayerKind::kExpEig: return "ExpEig";
  }
  return "?";
}

void LayerTape::consume(LayerKind expected) {
  if (kind != expected) {
    throw PreconditionError(std::string("tape belongs to a ") +
                            to_string(kind) + " layer, not " +
                            to_string(expected));
  }
  if (consumed) {
    throw TapeReuseError(std::string(to_string(kind)) +
                         " tape was already consumed by a backward pass");
  }
  consumed = true;
}

Forward<SpdMatrix> bimap_fwd(const StiefelParam& w, const SpdMatrix& x) {
  if (x.dim() != w.d_in()) {
    std::ostringstream os;
    os << "bimap_fwd: input dim " << x.dim() << " != weight rows " << w.d_in();
    throw DimensionMismatchError(os.str());
  }
  const Matrix& wm = w.matrix();
  LayerTape tape;
  tape.kind = LayerKind::kBiMap;
  tape.input = x.matrix();
  tape.weight = wm;
  return {SpdMatrix(sym(wm.transpose() * x.matrix() * wm)), std::move(tape)};
}

Forward<SymMatrix> bimap_up_fwd(const StiefelParam& w, const SpdMatrix& h) {
  if (h.dim() != w.d_out()) {
    std::ostringstream os;
    os << "bimap_up_fwd: input dim " << h.dim() << " != weight cols "
       << w.d_out();
    throw DimensionMismatchError(os.str());
  }
  const Matrix& wm = w.matrix();
  LayerTape tape;
  tape.kind = LayerKind::kBiMapUp;
  tape.input = h.matrix();
  tape.weight = wm;
  return {SymMatrix::symmetrize(wm * h.matrix() * wm.transpose()),
          std::move(tape)};
}

BiMapGrads bimap_bwd(LayerTape& tape, const Matrix& dY) {
  const LayerKind kind =
      tape.kind == LayerKind::kBiMapUp ? LayerKind::kBiMapUp : LayerKind::kBiMap;
  tape.consume(kind);
  require_finite(dY, "BiMap backward input gradient");
  const Matrix g = sym(dY);
  const Matrix& w = tape.weight;
  const Matrix& x = tape.input;
  BiMapGrads out;
  if (kind == LayerKind::kBiMap) {
    if (g.rows() != w.cols()) {
      throw DimensionMismatchError("bimap_bwd: gradient shape mismatch");
    }
    out.dx = sym(w * g * w.transpose());
    out.dw = 2.0 * x * w * g;
  } else {
    if (g.rows() != w.rows()) {
      throw DimensionMismatchError("bimap_bwd: gradient shape mismatch");
    }
    out.dx = sym(w.transpose() * g * w);
    out.dw = 2.0 * g * w * x;
  }
  return out;
}

namespace {

Forward<SpdMatrix> reeig_from_eigen(const EigenPair& e, double eps,
                                    const SpdMatrix* original) {
  if (!(eps > 0.0)) {
    throw PreconditionError("reeig_fwd: eps must be positive");
  }
  LayerTape tape;
  tape.kind = LayerKind::kReEig;
  tape.vectors = e.vectors;
  tape.values = e.values;
  tape.eps = eps;
  const bool clamps = (e.values.array() < eps).any();
  if (!clamps && original != nullptr) return {*original, std::move(tape)};
  const Vector rectified = e.values.cwiseMax(eps);
  return {SpdMatrix::from_eigen(e.vectors, rectified), std::move(tape)};
}

}  // namespace

Forward<SpdMatrix> reeig_fwd(const SpdMatrix& x, double eps) {
  return reeig_from_eigen(x.eig(), eps, &x);
}

Forward<SpdMatrix> reeig_fwd(const SymMatrix& x, double eps) {
  return reeig_from_eigen(sym_eig(x), eps, nullptr);
}

Matrix reeig_bwd(LayerTape& tape, const Matrix& dY,
                 const EigBackwardOptions& opts) {
  tape.consume(LayerKind::kReEig);
  const Vector f = tape.values.cwiseMax(tape.eps);
  const Vector mask =
      (tape.values.array() > tape.eps).cast<double>().matrix();
  return eig_function_bwd(tape.vectors, tape.values, f, mask, dY, opts);
}

Forward<SymMatrix> logeig_fwd(const SpdMatrix& x) {
  SymMatrix out = spd_log(x);
  const EigenPair& e = x.eig();
  LayerTape tape;
  tape.kind = LayerKind::kLogEig;
  tape.vectors = e.vectors;
  tape.values = e.values;
  return {std::move(out), std::move(tape)};
}

Matrix logeig_bwd(LayerTape& tape, const Matrix& dY,
                  const EigBackwardOptions& opts) {
  tape.consume(LayerKind::kLogEig);
  const Vector f = tape.values.array().log().matrix();
  const Vector f_prime = tape.values.cwiseInverse();
  return eig_function_bwd(tape.vectors, tape.values, f, f_prime, dY, opts);
}

Forward<SpdMatrix> expeig_fwd(const SymMatrix& t) {
  const EigenPair e = sym_eig(t);
  LayerTape tape;
  tape.kind = LayerKind::kExpEig;
  tape.vectors = e.vectors;
  tape.values = e.values;
  return {SpdMatrix::from_eigen(e.vectors, e.values.array().exp().matrix()),
          std::move(tape)};
}

Matrix expeig_bwd(LayerTape& tape, const Matrix& dY,
                  const EigBackwardOptions& opts) {
  tape.consume(LayerKind::kExpEig);
  const Vector f = tape.values.array().exp().matrix();
  return eig_function_bwd(tape.vectors, tape.values, f, f, dY, opts);
}

}  // namespace spdnet
