#include "spdnet/commands.hpp"

#include "spdnet/checkpoint.hpp"
#include "spdnet/errors.hpp"
#include "spdnet/features.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <ostream>
#include <sstream>

namespace spdnet {

namespace fs = std::filesystem;

namespace {

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string pct(double v) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "%.4f", v);
  return buf;
}

void ensure_dir(const std::string& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) {
    throw ConfigError("run.out_dir: cannot create directory " + dir);
  }
}

constexpr const char* kMetricsHeader =
    "epoch,lr,loss,ce,recon,train_acc,test_acc";

std::string metrics_row(const EpochRecord& r) {
  return std::to_string(r.epoch) + "," + num(r.lr) + "," + num(r.train.loss) +
         "," + num(r.train.ce) + "," + num(r.train.recon) + "," +
         num(r.train.accuracy) + "," + num(r.test_accuracy);
}

// Keeps the header and rows for epochs before `first_epoch`.
void truncate_metrics(const std::string& path, int first_epoch) {
  std::ifstream in(path);
  std::vector<std::string> kept;
  std::string line;
  while (std::getline(in, line)) {
    if (kept.empty()) {
      kept.push_back(line);
      continue;
    }
    const auto comma = line.find(',');
    if (comma == std::string::npos) break;
    try {
      if (std::stoi(line.substr(0, comma)) >= first_epoch) break;
    } catch (const std::exception&) {
      break;
    }
    kept.push_back(line);
  }
  in.close();
  std::ofstream out(path, std::ios::trunc);
  if (kept.empty()) kept.push_back(kMetricsHeader);
  for (const auto& l : kept) out << l << "\n";
}

std::string state_path(const std::string& checkpoint) {
  return checkpoint + ".state";
}

int read_resume_epoch(const std::string& checkpoint) {
  std::ifstream in(state_path(checkpoint));
  if (!in) throw ConfigError("resume: missing " + state_path(checkpoint));
  std::string key, eq;
  int epoch = -1;
  in >> key >> eq >> epoch;
  if (key != "next_epoch" || eq != "=" || epoch < 0) {
    throw ConfigError("resume: malformed " + state_path(checkpoint));
  }
  return epoch;
}

}  // namespace

DatasetSplit load_data(const RunConfig& config) {
  const DataConfig& d = config.data;
  if (d.train.empty()) {
    const SpdDataset all = synth_generate(d.synth);
    if (static_cast<std::size_t>(d.n_train) > all.size()) {
      throw ConfigError("data.n_train: exceeds the synthetic dataset size");
    }
    return split_dataset(all, static_cast<std::size_t>(d.n_train), d.synth.seed);
  }
  if (!fs::exists(d.train)) throw ConfigError("data.train: no such file " + d.train);
  DatasetSplit out;
  out.train = load_dataset(d.train);
  out.train.split = Split::kTrain;
  if (!d.test.empty()) {
    if (!fs::exists(d.test)) throw ConfigError("data.test: no such file " + d.test);
    out.test = load_dataset(d.test);
    out.test.split = Split::kTest;
  } else {
    out.test.dim = out.train.dim;
    out.test.classes = out.train.classes;
    out.test.split = Split::kTest;
  }
  return out;
}

void check_data(const RunConfig& config, const DatasetSplit& data) {
  const NetworkConfig& n = config.network;
  for (const SpdDataset* ds : {&data.train, &data.test}) {
    if (ds->items.empty()) continue;
    if (ds->dim != n.input_dim()) {
      throw ConfigError("network.backbone: input size " +
                        std::to_string(n.input_dim()) +
                        " does not match data dimension " +
                        std::to_string(ds->dim));
    }
    if (ds->classes > n.classes) {
      throw ConfigError("network.classes: data has " +
                        std::to_string(ds->classes) + " classes");
    }
  }
  if (data.train.items.empty()) throw ConfigError("data.train: no training items");
}

TrainResult fit(const RunConfig& config, const DatasetSplit& data,
                ModelState state, int first_epoch,
                const std::function<void(const EpochRecord&, const ModelState&)>&
                    on_epoch) {
  config.validate();
  check_data(config, data);
  TrainResult out;
  for (int epoch = first_epoch; epoch < config.optim.epochs; ++epoch) {
    std::mt19937_64 rng = epoch_rng(config.optim.seed, epoch);
    EpochRecord rec;
    rec.epoch = epoch;
    rec.lr = lr_schedule(epoch, config.optim);
    rec.train = train_epoch(data.train, state, config.network, config.optim,
                            epoch, rng);
    rec.test_accuracy = evaluate_accuracy(data.test, state, config.network,
                                          config.optim.workers);
    out.history.push_back(rec);
    if (on_epoch) on_epoch(rec, state);
  }
  out.train_accuracy = evaluate_accuracy(data.train, state, config.network,
                                         config.optim.workers);
  out.test_accuracy = evaluate_accuracy(data.test, state, config.network,
                                        config.optim.workers);
  out.state = std::move(state);
  return out;
}

TrainResult cmd_train(const RunConfig& config, std::ostream& log,
                      const std::string& resume) {
  config.validate();
  const DatasetSplit data = load_data(config);
  check_data(config, data);
  ensure_dir(config.out_dir);
  const fs::path dir(config.out_dir);
  save_config((dir / "config.ini").string(), config);

  ModelState state;
  int first_epoch = 0;
  const std::string metrics_path = (dir / "metrics.csv").string();
  if (!resume.empty()) {
    first_epoch = read_resume_epoch(resume);
    Checkpoint ck = load_model(resume);
    if (ck.config != config.network) {
      throw ConfigError("resume: checkpoint network config differs from run config");
    }
    state = std::move(ck.state);
    truncate_metrics(metrics_path, first_epoch);
    log << "resuming at epoch " << first_epoch << " from " << resume << "\n";
  } else {
    state = init_model(config.network, config.optim.seed);
    std::ofstream(metrics_path, std::ios::trunc) << kMetricsHeader << "\n";
  }

  std::ofstream metrics(metrics_path, std::ios::app);
  if (!metrics) throw ConfigError("run.out_dir: cannot write " + metrics_path);

  auto on_epoch = [&](const EpochRecord& r, const ModelState& s) {
    metrics << metrics_row(r) << "\n";
    const int done = r.epoch + 1;
    if (done % config.flush_interval == 0) metrics.flush();
    if (config.checkpoint_interval > 0 && done % config.checkpoint_interval == 0) {
      const std::string ck =
          (dir / ("checkpoint-" + std::to_string(done) + ".spdm")).string();
      save_model(ck, config.network, s);
      std::ofstream(state_path(ck), std::ios::trunc) << "next_epoch = " << done << "\n";
    }
    log << "epoch " << r.epoch << " lr " << r.lr << " loss " << r.train.loss
        << " train_acc " << pct(r.train.accuracy) << " test_acc "
        << pct(r.test_accuracy) << "\n";
  };

  TrainResult result = fit(config, data, std::move(state), first_epoch, on_epoch);
  metrics.flush();
  save_model((dir / "model.spdm").string(), config.network, result.state);
  log << "final train_acc " << pct(result.train_accuracy) << " test_acc "
      << pct(result.test_accuracy) << "\n";
  if (!data.test.items.empty()) {
    log << "LEM nearest-centroid baseline test_acc "
        << pct(nearest_centroid_accuracy(data.train, data.test)) << "\n";
  }
  return result;
}

EvalResult cmd_eval(const std::string& model_path,
                    const std::string& dataset_path) {
  const Checkpoint ck = load_model(model_path);
  const SpdDataset ds = load_dataset(dataset_path);
  if (ds.dim != ck.config.input_dim()) {
    throw ConfigError("eval: dataset dimension does not match the model input");
  }
  EvalResult out;
  out.samples = ds.size();
  std::size_t hits = 0;
  for (const auto& item : ds.items) {
    const int p = predict(item.x, ck.state, ck.config);
    out.predictions.push_back(p);
    hits += p == item.label;
  }
  out.accuracy = ds.items.empty() ? 0.0
                                  : static_cast<double>(hits) /
                                        static_cast<double>(ds.size());
  return out;
}

GradcheckReport cmd_gradcheck(const GradcheckOptions& opts, std::ostream& out) {
  opts.model.validate();
  GradcheckReport report = run_gradcheck(opts);
  out << report.format();
  return report;
}

void cmd_gen(const SynthOptions& synth, int n_train, const std::string& out_dir,
             std::ostream& log) {
  const SpdDataset all = synth_generate(synth);
  if (n_train < 0 || static_cast<std::size_t>(n_train) > all.size()) {
    throw ConfigError("data.n_train: must lie in 0.." + std::to_string(all.size()));
  }
  ensure_dir(out_dir);
  const DatasetSplit split =
      split_dataset(all, static_cast<std::size_t>(n_train), synth.seed);
  const fs::path dir(out_dir);
  save_dataset((dir / "train.spdd").string(), split.train);
  save_dataset((dir / "test.spdd").string(), split.test);
  log << "wrote " << split.train.size() << " train and " << split.test.size()
      << " test matrices (d=" << all.dim << ", C=" << all.classes << ") to "
      << out_dir << "\n";
}

std::vector<AblationCell> cmd_ablate(const RunConfig& config,
                                     const std::vector<std::uint64_t>& seeds,
                                     std::ostream& log) {
  ensure_dir(config.out_dir);
  const fs::path dir(config.out_dir);
  std::vector<AblationCell> cells;
  for (const AttentionMode mode :
       {AttentionMode::kSmsa, AttentionMode::kEusa, AttentionMode::kNone}) {
    for (const std::uint64_t seed : seeds) {
      AblationCell cell;
      cell.mode = mode;
      cell.seed = seed;
      try {
        RunConfig rc = config;
        rc.network.attention = mode;
        rc.optim.seed = seed;
        rc.data.synth.seed = seed;
        const DatasetSplit data = load_data(rc);
        TrainResult r = fit(rc, data, init_model(rc.network, seed));
        cell.ok = true;
        cell.test_accuracy = r.test_accuracy;
        cell.train_accuracy = r.train_accuracy;
        cell.history = std::move(r.history);
      } catch (const Error& e) {
        cell.error = e.what();
      }
      log << to_string(mode) << " seed " << seed << ": "
          << (cell.ok ? "test_acc " + pct(cell.test_accuracy) : "error: " + cell.error)
          << "\n";
      cells.push_back(std::move(cell));
    }
  }

  std::ofstream table((dir / "ablation.csv").string(), std::ios::trunc);
  table << "mode,seed,status,final_test_acc,final_train_acc\n";
  std::ofstream curves((dir / "curves.csv").string(), std::ios::trunc);
  curves << "mode,seed,epoch,lr,loss,ce,recon,train_acc,test_acc\n";
  for (const auto& c : cells) {
    std::string status = c.ok ? "ok" : "error: " + c.error;
    for (char& ch : status) {
      if (ch == ',' || ch == '\n') ch = ';';
    }
    table << to_string(c.mode) << "," << c.seed << "," << status << ","
          << num(c.test_accuracy) << "," << num(c.train_accuracy) << "\n";
    for (const auto& r : c.history) {
      curves << to_string(c.mode) << "," << c.seed << "," << metrics_row(r) << "\n";
    }
  }

  std::ofstream summary((dir / "summary.csv").string(), std::ios::trunc);
  summary << "mode,completed,mean_test_acc\n";
  for (const AttentionMode mode :
       {AttentionMode::kSmsa, AttentionMode::kEusa, AttentionMode::kNone}) {
    double sum = 0.0;
    int n = 0;
    for (const auto& c : cells) {
      if (c.mode == mode && c.ok) {
        sum += c.test_accuracy;
        ++n;
      }
    }
    const double mean = n ? sum / n : 0.0;
    summary << to_string(mode) << "," << n << "," << num(mean) << "\n";
    log << "mean test_acc " << to_string(mode) << " " << pct(mean) << " over "
        << n << " seeds\n";
  }
  return cells;
}

void cmd_dump_features(const std::string& model_path,
                       const std::string& dataset_path,
                       const std::vector<int>& stages, std::size_t item,
                       const std::string& out_dir, std::ostream& log) {
  const Checkpoint ck = load_model(model_path);
  const SpdDataset ds = load_dataset(dataset_path);
  if (ds.items.empty()) throw PreconditionError("dump-features: empty dataset");
  if (item >= ds.size()) {
    throw PreconditionError("dump-features: item " + std::to_string(item) +
                            " out of range (dataset has " +
                            std::to_string(ds.size()) + ")");
  }
  for (int s : stages) {
    if (s < 0 || s > ck.config.depth) {
      throw PreconditionError("dump-features: stage " + std::to_string(s) +
                              " out of range 0.." + std::to_string(ck.config.depth));
    }
  }
  ensure_dir(out_dir);
  const fs::path dir(out_dir);

  auto layer = [](const ForwardTrace& t, int s) -> const Matrix& {
    return s == 0 ? t.backbone_out.matrix() : t.stages[s - 1].representation.matrix();
  };
  std::vector<double> mean(stages.size(), 0.0);
  std::vector<double> single(stages.size(), 0.0);
  for (std::size_t i = 0; i < ds.size(); ++i) {
    const ForwardTrace t = model_fwd(ds.items[i].x, ck.state, ck.config);
    for (std::size_t k = 0; k < stages.size(); ++k) {
      const double e = diagonal_energy(layer(t, stages[k]));
      mean[k] += e / static_cast<double>(ds.size());
      if (i == item) {
        single[k] = e;
        const std::string name = "stage" + std::to_string(stages[k]) + "_item" +
                                 std::to_string(item) + ".pgm";
        write_pgm((dir / name).string(), layer(t, stages[k]));
      }
    }
  }
  std::ofstream csv((dir / "diagonal_energy.csv").string(), std::ios::trunc);
  csv << "stage,item_energy,mean_energy\n";
  for (std::size_t k = 0; k < stages.size(); ++k) {
    csv << stages[k] << "," << num(single[k]) << "," << num(mean[k]) << "\n";
    log << "stage " << stages[k] << " diagonal energy " << pct(single[k])
        << " (dataset mean " << pct(mean[k]) << ")\n";
  }
}

}  // namespace spdnet
