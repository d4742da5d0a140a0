#pragma once

// SPD matrix domain types and Log-Euclidean primitives.

#include <Eigen/Dense>

#include <memory>
#include <mutex>
#include <span>
#include <vector>

namespace spdnet {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

// Eigenvalues ascending; eigenvector columns orthonormal with the
// largest-magnitude entry of each column positive.
struct EigenPair {
  Vector values;
  Matrix vectors;
};

// (A + A^T) / 2
Matrix sym(const Matrix& a);

bool is_symmetric(const Matrix& a, double rel_tol = 1e-12);

// Throws NumericalError naming `where` if any entry is NaN/Inf.
void require_finite(const Matrix& a, const char* where);

/// Symmetric matrix, typically a tangent-space (log-domain) element. It need
/// not be definite.
class SymMatrix {
 public:
  SymMatrix() = default;

  // Validates symmetry to 1e-12 * max|a| and stores the exactly symmetrized
  // matrix. Throws PreconditionError otherwise.
  explicit SymMatrix(const Matrix& a);

  static SymMatrix symmetrize(const Matrix& a);
  static SymMatrix zero(int dim);
  static SymMatrix identity(int dim);

  int dim() const { return static_cast<int>(m_.rows()); }
  const Matrix& matrix() const { return m_; }
  double operator()(int i, int j) const { return m_(i, j); }

 private:
  struct Unchecked {};
  SymMatrix(Matrix a, Unchecked) : m_(std::move(a)) {}

  Matrix m_;
};

/// Symmetric positive-definite matrix. The eigendecomposition is computed at
/// most once and shared between copies.
class SpdMatrix {
 public:
  SpdMatrix() = default;

  // Validates symmetry and strict positive definiteness.
  explicit SpdMatrix(const Matrix& a);

  static SpdMatrix identity(int dim);

  // Builds U diag(values) U^T and seeds the eigen cache with (values, U).
  // `values` must be ascending and strictly positive.
  static SpdMatrix from_eigen(const Matrix& vectors, const Vector& values);

  int dim() const { return static_cast<int>(m_.rows()); }
  const Matrix& matrix() const { return m_; }
  double operator()(int i, int j) const { return m_(i, j); }

  const EigenPair& eig() const;
  double min_eigenvalue() const { return eig().values(0); }

  SymMatrix as_sym() const;

 private:
  struct Cache {
    std::once_flag once;
    EigenPair pair;
  };

  Matrix m_;
  std::shared_ptr<Cache> cache_;
};

EigenPair sym_eig(const SymMatrix& x);
// Raw-matrix overload; throws PreconditionError on asymmetric input.
EigenPair sym_eig(const Matrix& x);

// U f(values) U^T, symmetrized.
Matrix reconstruct(const Matrix& vectors, const Vector& values);

inline constexpr double kLogEigenvalueFloor = 1e-14;

SymMatrix spd_log(const SpdMatrix& x);
SpdMatrix spd_exp(const SymMatrix& t);

double lem_distance_sq(const SpdMatrix& x, const SpdMatrix& y);

SpdMatrix frechet_mean_lem(std::span<const SpdMatrix> xs);
SpdMatrix weighted_frechet_mean_lem(std::span<const SpdMatrix> xs,
                                    const Vector& weights);

}  // namespace spdnet
