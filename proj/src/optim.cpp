#include "spdnet/optim.hpp"

#include "spdnet/errors.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <exception>
#include <numeric>
#include <string>
#include <thread>

namespace spdnet {

void OptimizerConfig::validate() const {
  if (!(lr > 0.0) || !std::isfinite(lr)) {
    throw ConfigError("optim.lr: must be positive");
  }
  if (!(decay > 0.0 && decay <= 1.0)) {
    throw ConfigError("optim.decay: must lie in (0, 1]");
  }
  if (decay_period < 0) throw ConfigError("optim.decay_period: must be >= 0");
  if (batch_size < 1) throw ConfigError("optim.batch_size: must be >= 1");
  if (epochs < 0) throw ConfigError("optim.epochs: must be >= 0");
  if (fc_lr && !(*fc_lr >= 0.0)) {
    throw ConfigError("optim.fc_lr: must be non-negative");
  }
  if (workers < 0) throw ConfigError("optim.workers: must be >= 0");
}

Matrix stiefel_tangent(const Matrix& w, const Matrix& g) {
  return g - w * sym(w.transpose() * g);
}

StiefelParam retract_qf(const Matrix& m) {
  require_finite(m, "QR retraction input");
  Eigen::HouseholderQR<Matrix> qr(m);
  const Eigen::Index p = m.cols();
  Matrix q = qr.householderQ() * Matrix::Identity(m.rows(), p);
  const Matrix& r = qr.matrixQR();
  for (Eigen::Index i = 0; i < p; ++i) {
    if (std::abs(r(i, i)) < 1e-12) {
      throw RetractionError("QR retraction lost rank: |R(" +
                            std::to_string(i) + "," + std::to_string(i) +
                            ")| < 1e-12");
    }
    if (r(i, i) < 0.0) q.col(i) = -q.col(i);
  }
  return StiefelParam(q);
}

StiefelParam stiefel_step(const StiefelParam& w, const Matrix& eucl_grad,
                          double lr) {
  const Matrix& wm = w.matrix();
  if (eucl_grad.rows() != wm.rows() || eucl_grad.cols() != wm.cols()) {
    throw DimensionMismatchError("stiefel_step: gradient shape mismatch");
  }
  require_finite(eucl_grad, "stiefel_step gradient");
  const Matrix tangent = stiefel_tangent(wm, eucl_grad);
  if (lr == 0.0 || tangent.isZero(0.0)) return w;
  return retract_qf(wm - lr * tangent);
}

double lr_schedule(int epoch, const OptimizerConfig& config) {
  if (epoch < 0) throw PreconditionError("lr_schedule: epoch must be >= 0");
  if (config.decay_period <= 0) return config.lr;
  return config.lr * std::pow(config.decay, epoch / config.decay_period);
}

std::mt19937_64 epoch_rng(std::uint64_t seed, int epoch) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed),
                    static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(epoch), 0x5eedu};
  return std::mt19937_64(seq);
}

int effective_workers(int requested) {
  const char* env = std::getenv("SPD_DETERMINISTIC");
  if (env != nullptr && std::string(env) == "1") return 0;
  return std::max(requested, 0);
}

namespace {

// Runs fn(i) for i in [0, n) on up to `workers` threads. Each index is
// handled by exactly one thread; the first exception is rethrown.
template <typename Fn>
void parallel_for(std::size_t n, int workers, Fn&& fn) {
  const std::size_t threads =
      std::min<std::size_t>(static_cast<std::size_t>(effective_workers(workers)), n);
  if (threads <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::exception_ptr> errors(threads);
  std::vector<std::thread> pool;
  for (std::size_t t = 0; t < threads; ++t) {
    pool.emplace_back([&, t] {
      try {
        for (std::size_t i = t; i < n; i += threads) fn(i);
      } catch (...) {
        errors[t] = std::current_exception();
      }
    });
  }
  for (auto& th : pool) th.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

}  // namespace

SampleResult sample_gradient(const LabeledSpd& item, const ModelState& state,
                             const NetworkConfig& config) {
  ForwardTrace trace = model_fwd(item.x, state, config);
  SampleResult out;
  out.loss = loss(trace, item.label, config);
  out.predicted = predict(trace);
  out.grads = model_bwd(trace, item.label, state, config);
  return out;
}

BatchResult batch_gradient(std::span<const LabeledSpd* const> batch,
                           const ModelState& state, const NetworkConfig& config,
                           int workers) {
  BatchResult out;
  out.samples.resize(batch.size());
  parallel_for(batch.size(), workers, [&](std::size_t i) {
    out.samples[i] = sample_gradient(*batch[i], state, config);
  });
  out.grads = ModelGrads::zeros_like(state);
  for (auto& s : out.samples) {
    out.grads += s.grads;
    s.grads = ModelGrads{};
  }
  if (config.batch_reduction == BatchReduction::kMean && !batch.empty()) {
    out.grads *= 1.0 / static_cast<double>(batch.size());
  }
  return out;
}

void apply_step(ModelState& state, const ModelGrads& grads, double lr,
                double fc_lr) {
  for (std::size_t k = 0; k < state.backbone.size(); ++k) {
    state.backbone[k] = stiefel_step(state.backbone[k], grads.backbone[k], lr);
  }
  for (std::size_t e = 0; e < state.smae.size(); ++e) {
    state.smae[e].down = stiefel_step(state.smae[e].down, grads.down[e], lr);
    state.smae[e].up = stiefel_step(state.smae[e].up, grads.up[e], lr);
  }
  if (fc_lr == 0.0) return;
  for (std::size_t e = 0; e < state.heads.size(); ++e) {
    state.heads[e].weight -= fc_lr * grads.head_weight[e];
    state.heads[e].bias -= fc_lr * grads.head_bias[e];
  }
}

EpochMetrics train_epoch(const SpdDataset& data, ModelState& state,
                         const NetworkConfig& net, const OptimizerConfig& opt,
                         int epoch, std::mt19937_64& rng) {
  if (data.items.empty()) {
    throw PreconditionError("train_epoch: dataset is empty");
  }
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);

  const double lr = lr_schedule(epoch, opt);
  const double fc_lr = opt.fc_lr ? *opt.fc_lr * (lr / opt.lr) : lr;
  const auto bsz = static_cast<std::size_t>(opt.batch_size);

  EpochMetrics m;
  std::size_t hits = 0;
  std::vector<const LabeledSpd*> batch;
  for (std::size_t start = 0, index = 0; start < order.size();
       start += bsz, ++index) {
    batch.clear();
    for (std::size_t k = start; k < std::min(start + bsz, order.size()); ++k) {
      batch.push_back(&data.items[order[k]]);
    }
    try {
      BatchResult r = batch_gradient(batch, state, net, opt.workers);
      for (std::size_t i = 0; i < batch.size(); ++i) {
        m.loss += r.samples[i].loss.total;
        m.ce += r.samples[i].loss.ce;
        m.recon += r.samples[i].loss.recon;
        hits += r.samples[i].predicted == batch[i]->label;
      }
      apply_step(state, r.grads, lr, fc_lr);
    } catch (const NumericalError& e) {
      throw NumericalError("epoch " + std::to_string(epoch) + ", batch " +
                           std::to_string(index) + ": " + e.what());
    }
  }
  m.samples = order.size();
  const double n = static_cast<double>(m.samples);
  m.loss /= n;
  m.ce /= n;
  m.recon /= n;
  m.accuracy = static_cast<double>(hits) / n;
  return m;
}

double evaluate_accuracy(const SpdDataset& data, const ModelState& state,
                         const NetworkConfig& config, int workers) {
  if (data.items.empty()) return 0.0;
  std::vector<int> predicted(data.size());
  parallel_for(data.size(), workers, [&](std::size_t i) {
    predicted[i] = predict(data.items[i].x, state, config);
  });
  std::size_t hits = 0;
  for (std::size_t i = 0; i < data.size(); ++i) {
    hits += predicted[i] == data.items[i].label;
  }
  return static_cast<double>(hits) / static_cast<double>(data.size());
}

}  // namespace spdnet
