#pragma once

// SPD-manifold self-attention geometric learning module (SMSA-GLM) and the
// Euclidean ablation (EuSA).
//
// Forward chain for query H1, keys K and values V:
//   LEM  D_j   = ||log H1 - log K_j||_F^2
//   SIM  D'_j  = 1 / (1 + log(1 + D_j))
//   SMX  D''   = softmax(D')
//   LogEig     L_j = log V_j
//   WTS  Y     = sum_j D''_j L_j
//   ExpEig out = exp(Y)
// so the output is the Log-Euclidean weighted Frechet mean of V.

#include "spdnet/layers.hpp"
#include "spdnet/manifold.hpp"

#include <optional>
#include <span>
#include <string>
#include <vector>

namespace spdnet {

enum class AttentionMode { kNone, kSmsa, kEusa };
enum class GradMode { kExact, kPaper };

const char* to_string(AttentionMode mode);
const char* to_string(GradMode mode);
AttentionMode parse_attention_mode(const std::string& s);
GradMode parse_grad_mode(const std::string& s);

struct AttentionGradModes {
  // kPaper: 2 H^-1 (log H1 - log Hj), symmetrized. Exact only when H and the
  // log difference commute. kExact: chains through the LogEig backward.
  GradMode lem = GradMode::kExact;
  // kPaper: diagonal softmax Jacobian entry only. kExact: full Jacobian.
  GradMode smx = GradMode::kExact;
  EigBackwardOptions eig;
};

/// Q/K/V partition over the SMAE hidden states H_1..H_E (1-based).
struct QkvSelection {
  int depth = 0;          // E
  int parity_offset = 0;  // x: 1 for odd E, 2 for even E
  int h = 0;              // (E - x) / 2 + 1
  int query = 1;
  std::vector<int> keys;    // 2..h
  std::vector<int> values;  // h+1..E-x+1

  int n_lem() const { return h - 1; }
  int n_wfm() const { return 1; }
  // E - x + 1: the hidden state whose representation the module replaces.
  int output_index() const { return depth - parity_offset + 1; }
};

// E in {3, 4} -> UnsupportedDepthError; E < 3 -> PreconditionError.
QkvSelection select_qkv(int depth);

double lem_layer(const SpdMatrix& h1, const SpdMatrix& hj);

struct LemGrads {
  Matrix d_query;
  Matrix d_key;
};
LemGrads lem_layer_bwd(const SpdMatrix& h1, const SpdMatrix& hj, double grad,
                       GradMode mode, const EigBackwardOptions& opts = {});

double sim_layer(double d);
double sim_layer_bwd(double d, double grad);

Vector smx_layer(const Vector& scores);
// `out` is the forward softmax output.
Vector smx_layer_bwd(const Vector& out, const Vector& grad, GradMode mode);

SymMatrix wts_layer(const Vector& weights, std::span<const SymMatrix> logs);

struct WtsGrads {
  std::vector<Matrix> d_logs;
  Vector d_weights;
};
WtsGrads wts_layer_bwd(const Vector& weights, std::span<const SymMatrix> logs,
                       const Matrix& dY);

struct AttentionTape {
  AttentionMode mode = AttentionMode::kSmsa;
  QkvSelection selection;
  std::vector<SpdMatrix> hidden;  // H_1..H_{E-x+1}
  Vector distances;               // D_1j
  Vector similarities;            // D'_1j
  Vector weights;                 // D''_1j
  std::vector<SymMatrix> value_logs;      // SMSA only
  std::vector<LayerTape> value_log_tapes; // SMSA only
  std::optional<LayerTape> exp_tape;      // SMSA only
  Matrix upsilon;                 // WTS output (SMSA) / convex sum (EuSA)
  bool consumed = false;
};

struct GlmForward {
  SpdMatrix out;
  AttentionTape tape;
};

// `hidden` holds H_1..H_{E-x+1}.
GlmForward smsa_glm_fwd(std::span<const SpdMatrix> hidden,
                        const QkvSelection& sel);
GlmForward eusa_glm_fwd(std::span<const SpdMatrix> hidden,
                        const QkvSelection& sel);
// Dispatches on mode (kNone is rejected).
GlmForward glm_fwd(AttentionMode mode, std::span<const SpdMatrix> hidden,
                   const QkvSelection& sel);

// Returns one gradient per entry of tape.hidden (index i <-> H_{i+1}); states
// that do not take part get zero. All gradients are symmetric.
std::vector<Matrix> glm_bwd(AttentionTape& tape, const Matrix& d_out,
                            const AttentionGradModes& modes = {});
std::vector<Matrix> smsa_glm_bwd(AttentionTape& tape, const Matrix& d_out,
                                 const AttentionGradModes& modes = {});
std::vector<Matrix> eusa_glm_bwd(AttentionTape& tape, const Matrix& d_out,
                                 const AttentionGradModes& modes = {});

}  // namespace spdnet
