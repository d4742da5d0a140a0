#pragma once

// Riemannian SGD on the Stiefel manifold for BiMap/SMAE weights, plain SGD
// for the classifier heads, and the step-decay learning-rate schedule.

#include "spdnet/data.hpp"
#include "spdnet/network.hpp"

#include <cstdint>
#include <optional>
#include <random>

namespace spdnet {

struct OptimizerConfig {
  double lr = 0.01;
  double decay = 0.8;
  int decay_period = 0;  // epochs between decays; 0 disables decay
  int batch_size = 30;
  int epochs = 200;
  std::uint64_t seed = 1;
  std::optional<double> fc_lr;  // classifier learning rate, defaults to lr
  int workers = 0;              // 0 = sequential

  void validate() const;  // ConfigError naming the field
};

// G - W sym(W^T G)
Matrix stiefel_tangent(const Matrix& w, const Matrix& g);

// Q factor of QR(m) with the diagonal of R made positive.
StiefelParam retract_qf(const Matrix& m);

// QR retraction of W - lr * proj(G). A zero step returns W unchanged.
// Throws RetractionError if the QR factor loses rank.
StiefelParam stiefel_step(const StiefelParam& w, const Matrix& eucl_grad,
                          double lr);

// lr * decay^floor(epoch / period)
double lr_schedule(int epoch, const OptimizerConfig& config);

// Shuffling stream for one epoch, derived from (seed, epoch) only so that a
// resumed run draws the same batches.
std::mt19937_64 epoch_rng(std::uint64_t seed, int epoch);

struct EpochMetrics {
  double loss = 0.0;  // per-sample mean of the total objective
  double ce = 0.0;
  double recon = 0.0;
  double accuracy = 0.0;  // training accuracy of the pre-step predictions
  std::size_t samples = 0;
};

struct SampleResult {
  ModelGrads grads;
  LossBreakdown loss;
  int predicted = 0;
};

// Forward + backward for one labelled sample.
SampleResult sample_gradient(const LabeledSpd& item, const ModelState& state,
                             const NetworkConfig& config);

// Gradient of the batch objective (mean or sum over samples per
// config.batch_reduction). Per-sample results are reduced in sample order, so
// the result does not depend on `workers`.
struct BatchResult {
  ModelGrads grads;
  std::vector<SampleResult> samples;  // grads moved out, loss/prediction kept
};
BatchResult batch_gradient(std::span<const LabeledSpd* const> batch,
                           const ModelState& state, const NetworkConfig& config,
                           int workers);

void apply_step(ModelState& state, const ModelGrads& grads, double lr,
                double fc_lr);

// One pass over shuffled mini-batches (the last one may be short).
EpochMetrics train_epoch(const SpdDataset& data, ModelState& state,
                         const NetworkConfig& net, const OptimizerConfig& opt,
                         int epoch, std::mt19937_64& rng);

double evaluate_accuracy(const SpdDataset& data, const ModelState& state,
                         const NetworkConfig& config, int workers = 0);

// Worker count after applying SPD_DETERMINISTIC=1.
int effective_workers(int requested);

}  // namespace spdnet
