#pragma once

// Library side of the `spdnet` command-line tool.

#include "spdnet/config.hpp"
#include "spdnet/gradcheck.hpp"

#include <functional>
#include <iosfwd>
#include <string>
#include <vector>

namespace spdnet {

struct EpochRecord {
  int epoch = 0;
  double lr = 0.0;
  EpochMetrics train;
  double test_accuracy = 0.0;
};

struct TrainResult {
  ModelState state;
  std::vector<EpochRecord> history;  // epochs run by this call only
  double train_accuracy = 0.0;
  double test_accuracy = 0.0;
};

// Train split/test split per config.data: SPDD files, or the synthetic
// benchmark split at n_train when no train file is given.
DatasetSplit load_data(const RunConfig& config);

// Checks the data against the network input size and class count.
void check_data(const RunConfig& config, const DatasetSplit& data);

// Trains from `state` for epochs [first_epoch, config.optim.epochs).
// `on_epoch` runs after each epoch with the updated state.
TrainResult fit(const RunConfig& config, const DatasetSplit& data,
                ModelState state, int first_epoch = 0,
                const std::function<void(const EpochRecord&, const ModelState&)>&
                    on_epoch = {});

// Writes into config.out_dir: metrics.csv, config.ini (effective config),
// checkpoint-<epoch>.spdm (+ .state) every checkpoint_interval epochs and
// model.spdm. With a non-empty `resume` checkpoint, training continues from
// the epoch recorded in its .state file.
TrainResult cmd_train(const RunConfig& config, std::ostream& log,
                      const std::string& resume = "");

struct EvalResult {
  double accuracy = 0.0;
  std::size_t samples = 0;
  std::vector<int> predictions;
};
EvalResult cmd_eval(const std::string& model_path,
                    const std::string& dataset_path);

GradcheckReport cmd_gradcheck(const GradcheckOptions& opts, std::ostream& out);

// Writes train.spdd and test.spdd into out_dir.
void cmd_gen(const SynthOptions& synth, int n_train, const std::string& out_dir,
             std::ostream& log);

struct AblationCell {
  AttentionMode mode = AttentionMode::kSmsa;
  std::uint64_t seed = 0;
  bool ok = false;
  std::string error;
  double test_accuracy = 0.0;
  double train_accuracy = 0.0;
  std::vector<EpochRecord> history;
};

// Trains smsa, eusa and none for every seed under the same budget and writes
// ablation.csv and curves.csv into config.out_dir. A failing cell is
// recorded and the remaining cells still run.
std::vector<AblationCell> cmd_ablate(const RunConfig& config,
                                     const std::vector<std::uint64_t>& seeds,
                                     std::ostream& log);

// Stage 0 is the backbone output R, stage e in 1..E the hidden state H_e
// (after attention, for the stage that hosts it). Writes
// stage<e>_item<i>.pgm for `item` and diagonal_energy.csv with the energy of
// that item and the mean over the dataset.
void cmd_dump_features(const std::string& model_path,
                       const std::string& dataset_path,
                       const std::vector<int>& stages, std::size_t item,
                       const std::string& out_dir, std::ostream& log);

}  // namespace spdnet
