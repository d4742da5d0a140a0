#pragma once

// SPDNet layer family: BiMap, ReEig, LogEig and ExpEig with forward passes
// and structured backward passes through the eigendecomposition.

#include "spdnet/manifold.hpp"

#include <cstdint>
#include <random>

namespace spdnet {

/// Semi-orthogonal d_in x d_out weight (d_out <= d_in), i.e. a point on the
/// compact Stiefel manifold St(d_out, d_in).
class StiefelParam {
 public:
  StiefelParam() = default;

  // Throws PreconditionError unless d_out <= d_in and ||W^T W - I||_F <= tol.
  explicit StiefelParam(const Matrix& w, double tol = 1e-8);

  static StiefelParam identity_columns(int d_in, int d_out);

  // Q factor of a QR decomposition of a Gaussian matrix.
  static StiefelParam random(int d_in, int d_out, std::mt19937_64& rng);

  int d_in() const { return static_cast<int>(w_.rows()); }
  int d_out() const { return static_cast<int>(w_.cols()); }
  const Matrix& matrix() const { return w_; }

  double orthogonality_residual() const;

 private:
  Matrix w_;
};

/// Which Phi matrix the eig-backward scaffold uses:
///   kDifference        Phi_ij = 1 / (s_i - s_j)
///   kSquaredDifference Phi_ij = 1 / (s_i^2 - s_j^2)
/// Only kDifference reproduces finite differences; the other is kept so the
/// gradient-check battery can keep arbitrating between them.
enum class PhiVariant { kDifference, kSquaredDifference };

enum class DegeneratePolicy { kRegularize, kStrict };

struct EigBackwardOptions {
  PhiVariant phi = PhiVariant::kDifference;
  DegeneratePolicy degenerate = DegeneratePolicy::kRegularize;
  // Eigenvalue pairs closer than relative_gap * spectral radius are degenerate.
  double relative_gap = 1e-6;
};

// Number of degenerate eigenvalue pairs regularized since the last reset.
std::uint64_t degenerate_gap_events();
void reset_degenerate_gap_events();

/// Backward of Y = U f(S) U^T given dL/dY.
///
/// Follows the two-part split: Omega1 = dL/dU = 2 D U f(S) and
/// Omega2 = dL/dS = f'(S) U^T D U with D = sym(dY), combined as
///
///   dL/dX = U [ (Phi^T o (U^T Omega1))_sym + diag(Omega2) ] U^T.
///
/// Near-degenerate pairs (see EigBackwardOptions) take the limit value
/// f'(s) (U^T D U)_ij instead of dividing by a vanishing gap, or throw
/// DegenerateSpectrumError under DegeneratePolicy::kStrict.
Matrix eig_function_bwd(const Matrix& vectors, const Vector& values,
                        const Vector& f, const Vector& f_prime,
                        const Matrix& dY, const EigBackwardOptions& opts = {});

enum class LayerKind { kBiMap, kBiMapUp, kReEig, kLogEig, kExpEig };

const char* to_string(LayerKind kind);

/// Forward cache for one layer invocation. Backward consumes it exactly once.
struct LayerTape {
  LayerKind kind = LayerKind::kBiMap;
  Matrix input;    // BiMap: X; BiMapUp: H
  Matrix weight;   // BiMap / BiMapUp
  Matrix vectors;  // eig layers: U of the input
  Vector values;   // eig layers: eigenvalues of the input
  double eps = 0.0;
  bool consumed = false;

  // Marks the tape consumed; throws TapeReuseError on a second call or
  // PreconditionError if the tape belongs to another layer kind.
  void consume(LayerKind expected);
};

template <typename T>
struct Forward {
  T out;
  LayerTape tape;
};

struct BiMapGrads {
  Matrix dx;  // symmetric
  Matrix dw;  // Euclidean gradient, d_in x d_out
};

// Y = W^T X W.
Forward<SpdMatrix> bimap_fwd(const StiefelParam& w, const SpdMatrix& x);
// Y = W H W^T (upsampling; output is rank-deficient PSD).
Forward<SymMatrix> bimap_up_fwd(const StiefelParam& w, const SpdMatrix& h);
// Backward for either direction; dispatches on the tape kind.
BiMapGrads bimap_bwd(LayerTape& tape, const Matrix& dY);

// Y = U max(eps I, S) U^T. Returns the input unchanged if nothing is clamped.
Forward<SpdMatrix> reeig_fwd(const SpdMatrix& x, double eps);
// Accepts symmetric PSD input such as an upsampled reconstruction.
Forward<SpdMatrix> reeig_fwd(const SymMatrix& x, double eps);
Matrix reeig_bwd(LayerTape& tape, const Matrix& dY,
                 const EigBackwardOptions& opts = {});

Forward<SymMatrix> logeig_fwd(const SpdMatrix& x);
Matrix logeig_bwd(LayerTape& tape, const Matrix& dY,
                  const EigBackwardOptions& opts = {});

Forward<SpdMatrix> expeig_fwd(const SymMatrix& t);
Matrix expeig_bwd(LayerTape& tape, const Matrix& dY,
                  const EigBackwardOptions& opts = {});

}  // namespace spdnet
