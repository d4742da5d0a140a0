#pragma once

// DSPDNet with stacked SPD manifold autoencoders (SMAEs), optional attention
// module, per-stage LogEig -> FC -> cross-entropy heads and the composite
// objective  lambda1 * sum_e CE_e + lambda2 * ||R - H^_E||_F^2.

#include "spdnet/attention.hpp"
#include "spdnet/layers.hpp"

#include <cstdint>
#include <optional>
#include <utility>
#include <vector>

namespace spdnet {

enum class BatchReduction { kMean, kSum };

struct NetworkConfig {
  // BiMap sizes (d_in, d_out); a ReEig sits between consecutive BiMaps.
  std::vector<std::pair<int, int>> backbone{{8, 7}, {7, 6}};
  int depth = 5;       // E, number of stacked SMAEs
  int smae_up = 6;     // SMAE input / reconstruction size
  int smae_down = 4;   // SMAE hidden size
  double eps = 1e-4;
  double lambda1 = 1.0;
  double lambda2 = 1e-2;
  AttentionMode attention = AttentionMode::kSmsa;
  int classes = 3;
  GradMode lem_grad = GradMode::kExact;
  GradMode smx_grad = GradMode::kExact;
  PhiVariant phi = PhiVariant::kDifference;
  bool strict_degenerate = false;
  BatchReduction batch_reduction = BatchReduction::kMean;

  int input_dim() const { return backbone.front().first; }
  int head_inputs() const { return smae_down * smae_down; }
  EigBackwardOptions eig_options() const;
  AttentionGradModes grad_modes() const;

  // ConfigError naming the field, or UnsupportedDepthError for an E that
  // cannot host the attention module.
  void validate() const;

  bool operator==(const NetworkConfig&) const = default;
};

struct ClassifierHead {
  Matrix weight;  // C x d_down^2, acting on the row-major flattened LogEig
  Vector bias;    // C
};

struct SmaeParams {
  StiefelParam down;  // W_e1: d_up x d_down, H_e = W^T pi(in) W
  StiefelParam up;    // W_e2: d_up x d_down, H^_e = W H_e W^T
};

struct ModelState {
  std::vector<StiefelParam> backbone;
  std::vector<SmaeParams> smae;
  std::vector<ClassifierHead> heads;
};

// Stiefel weights from QR of Gaussian draws, FC weights U(-1/sqrt(fan_in),
// 1/sqrt(fan_in)), zero biases. Deterministic in `seed`.
ModelState init_model(const NetworkConfig& config, std::uint64_t seed);

// Throws DimensionMismatchError if the state does not fit the config.
void check_state(const ModelState& state, const NetworkConfig& config);

struct StageTrace {
  LayerTape reeig_tape;
  SpdMatrix activated;       // pi(input)
  LayerTape down_tape;
  SpdMatrix hidden;          // H_e
  SpdMatrix representation;  // H_e, or the attention output at E-x+1
  LayerTape head_log_tape;
  SymMatrix head_log;
  Vector logits;
  LayerTape up_tape;
  SymMatrix reconstruction;  // H^_e, PSD with rank <= d_down
};

struct ForwardTrace {
  SpdMatrix input;
  std::vector<LayerTape> backbone_tapes;  // BiMap, ReEig, BiMap, ...
  SpdMatrix backbone_out;                 // R
  std::vector<StageTrace> stages;
  std::optional<QkvSelection> selection;
  std::optional<AttentionTape> attention;
  std::optional<SpdMatrix> attention_out;
  bool consumed = false;

  const SymMatrix& reconstruction() const { return stages.back().reconstruction; }
};

struct BackboneForward {
  SpdMatrix out;
  std::vector<LayerTape> tapes;
};
BackboneForward backbone_fwd(const SpdMatrix& x, const ModelState& state,
                             const NetworkConfig& config);

struct SmaeForward {
  SpdMatrix hidden;
  SymMatrix reconstruction;
  LayerTape reeig_tape;
  SpdMatrix activated;
  LayerTape down_tape;
  LayerTape up_tape;
};
SmaeForward smae_fwd(const SymMatrix& input, const SmaeParams& params,
                     double eps);

struct HeadForward {
  Vector logits;
  SymMatrix log;
  LayerTape log_tape;
};
HeadForward head_fwd(const SpdMatrix& h, const ClassifierHead& head);

ForwardTrace model_fwd(const SpdMatrix& x, const ModelState& state,
                       const NetworkConfig& config);

double cross_entropy(const Vector& logits, int label);

struct LossBreakdown {
  double total = 0.0;
  double ce = 0.0;     // sum over stages, before lambda1
  double recon = 0.0;  // ||R - H^_E||_F^2, before lambda2
};

// `label` is 1-based.
LossBreakdown loss(const ForwardTrace& trace, int label,
                   const NetworkConfig& config);

struct ModelGrads {
  std::vector<Matrix> backbone;
  std::vector<Matrix> down;
  std::vector<Matrix> up;
  std::vector<Matrix> head_weight;
  std::vector<Vector> head_bias;

  static ModelGrads zeros_like(const ModelState& state);
  ModelGrads& operator+=(const ModelGrads& other);
  ModelGrads& operator*=(double s);
  double dot(const ModelGrads& other) const;
};

// Consumes the trace. Throws TapeReuseError on a consumed trace and
// NumericalError naming the layer where a non-finite gradient appears.
ModelGrads model_bwd(ForwardTrace& trace, int label, const ModelState& state,
                     const NetworkConfig& config);

// Predicted 1-based label from the final stage's head.
int predict(const ForwardTrace& trace);
int predict(const SpdMatrix& x, const ModelState& state,
            const NetworkConfig& config);

// Depth under the DSPDNet counting convention: ten layers per SMAE stage
// offset by -3 (47 layers at E=5, 97 at E=10). The attention module adds one
// LEM and one SIM layer per key, one LogEig per value and one each of SMX,
// WTS and ExpEig.
int layer_count(const NetworkConfig& config);

// Number of layer invocations this implementation runs per forward pass
// (BiMap, ReEig, LogEig, FC, loss and attention sub-layers).
int op_count(const NetworkConfig& config);

}  // namespace spdnet
