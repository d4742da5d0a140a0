#include "spdnet/config.hpp"

#include "spdnet/errors.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>

namespace spdnet {

void RunConfig::validate() const {
  network.validate();
  optim.validate();
  if (flush_interval < 1) throw ConfigError("run.flush_interval: must be >= 1");
  if (checkpoint_interval < 0) {
    throw ConfigError("run.checkpoint_interval: must be >= 0");
  }
  if (out_dir.empty()) throw ConfigError("run.out_dir: must not be empty");
  if (data.train.empty() && data.n_train < 1) {
    throw ConfigError("data.n_train: must be >= 1");
  }
}

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

[[noreturn]] void bad(const std::string& field, const std::string& value,
                      const std::string& why) {
  throw ConfigError(field + ": invalid value '" + value + "' (" + why + ")");
}

long long to_int(const std::string& field, const std::string& v) {
  try {
    std::size_t used = 0;
    const long long out = std::stoll(v, &used);
    if (used == v.size()) return out;
  } catch (const std::exception&) {
  }
  bad(field, v, "expected an integer");
}

int to_i32(const std::string& field, const std::string& v) {
  const long long x = to_int(field, v);
  if (x < -2147483647LL || x > 2147483647LL) bad(field, v, "out of range");
  return static_cast<int>(x);
}

std::uint64_t to_u64(const std::string& field, const std::string& v) {
  try {
    std::size_t used = 0;
    if (!v.empty() && v[0] != '-') {
      const unsigned long long out = std::stoull(v, &used);
      if (used == v.size()) return out;
    }
  } catch (const std::exception&) {
  }
  bad(field, v, "expected an unsigned integer");
}

double to_double(const std::string& field, const std::string& v) {
  try {
    std::size_t used = 0;
    const double out = std::stod(v, &used);
    if (used == v.size()) return out;
  } catch (const std::exception&) {
  }
  bad(field, v, "expected a number");
}

bool to_bool(const std::string& field, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  bad(field, v, "expected true or false");
}

std::vector<std::pair<int, int>> to_backbone(const std::string& field,
                                             const std::string& v) {
  std::vector<std::pair<int, int>> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    const auto x = item.find('x');
    if (x == std::string::npos) bad(field, v, "expected e.g. 8x7,7x6");
    out.emplace_back(to_i32(field, trim(item.substr(0, x))),
                     to_i32(field, trim(item.substr(x + 1))));
  }
  if (out.empty()) bad(field, v, "expected e.g. 8x7,7x6");
  return out;
}

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

void set_config_value(RunConfig& c, const std::string& section,
                      const std::string& key, const std::string& value) {
  const std::string f = section + "." + key;
  const std::string& v = value;
  NetworkConfig& n = c.network;
  OptimizerConfig& o = c.optim;
  DataConfig& d = c.data;
  try {
    if (section == "network") {
      if (key == "backbone") n.backbone = to_backbone(f, v);
      else if (key == "depth") n.depth = to_i32(f, v);
      else if (key == "smae_up") n.smae_up = to_i32(f, v);
      else if (key == "smae_down") n.smae_down = to_i32(f, v);
      else if (key == "eps") n.eps = to_double(f, v);
      else if (key == "lambda1") n.lambda1 = to_double(f, v);
      else if (key == "lambda2") n.lambda2 = to_double(f, v);
      else if (key == "attention") n.attention = parse_attention_mode(v);
      else if (key == "classes") n.classes = to_i32(f, v);
      else if (key == "lem_grad") n.lem_grad = parse_grad_mode(v);
      else if (key == "smx_grad") n.smx_grad = parse_grad_mode(v);
      else if (key == "phi") {
        if (v == "difference") n.phi = PhiVariant::kDifference;
        else if (v == "squared_difference") n.phi = PhiVariant::kSquaredDifference;
        else bad(f, v, "expected difference or squared_difference");
      } else if (key == "strict_degenerate") n.strict_degenerate = to_bool(f, v);
      else if (key == "batch_reduction") {
        if (v == "mean") n.batch_reduction = BatchReduction::kMean;
        else if (v == "sum") n.batch_reduction = BatchReduction::kSum;
        else bad(f, v, "expected mean or sum");
      } else throw ConfigError("unknown config key " + f);
    } else if (section == "optim") {
      if (key == "lr") o.lr = to_double(f, v);
      else if (key == "decay") o.decay = to_double(f, v);
      else if (key == "decay_period") o.decay_period = to_i32(f, v);
      else if (key == "batch_size") o.batch_size = to_i32(f, v);
      else if (key == "epochs") o.epochs = to_i32(f, v);
      else if (key == "seed") o.seed = to_u64(f, v);
      else if (key == "fc_lr") {
        if (v.empty()) o.fc_lr.reset();
        else o.fc_lr = to_double(f, v);
      } else if (key == "workers") o.workers = to_i32(f, v);
      else throw ConfigError("unknown config key " + f);
    } else if (section == "data") {
      if (key == "train") d.train = v;
      else if (key == "test") d.test = v;
      else if (key == "n_train") d.n_train = to_i32(f, v);
      else if (key == "synth_classes") d.synth.classes = to_i32(f, v);
      else if (key == "synth_per_class") d.synth.per_class = to_i32(f, v);
      else if (key == "synth_dim") d.synth.dim = to_i32(f, v);
      else if (key == "synth_separation") d.synth.separation = to_double(f, v);
      else if (key == "synth_frames") d.synth.frames = to_i32(f, v);
      else if (key == "synth_seed") d.synth.seed = to_u64(f, v);
      else throw ConfigError("unknown config key " + f);
    } else if (section == "run") {
      if (key == "out_dir") c.out_dir = v;
      else if (key == "flush_interval") c.flush_interval = to_i32(f, v);
      else if (key == "checkpoint_interval") c.checkpoint_interval = to_i32(f, v);
      else throw ConfigError("unknown config key " + f);
    } else {
      throw ConfigError("unknown config section [" + section + "]");
    }
  } catch (const ConfigError& e) {
    const std::string msg = e.what();
    if (msg.rfind(f, 0) == 0 || msg.rfind("unknown", 0) == 0) throw;
    throw ConfigError(f + ": " + msg);
  }
}

RunConfig parse_config(const std::string& text) {
  RunConfig c;
  std::istringstream in(text);
  std::string line;
  std::string section;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto hash = line.find_first_of("#;");
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') {
        throw ConfigError("line " + std::to_string(line_no) +
                          ": unterminated section header");
      }
      section = trim(line.substr(1, line.size() - 2));
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("line " + std::to_string(line_no) +
                        ": expected key = value");
    }
    if (section.empty()) {
      throw ConfigError("line " + std::to_string(line_no) +
                        ": key outside of a [section]");
    }
    set_config_value(c, section, trim(line.substr(0, eq)),
                     trim(line.substr(eq + 1)));
  }
  return c;
}

RunConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

std::string write_config(const RunConfig& c) {
  const NetworkConfig& n = c.network;
  const OptimizerConfig& o = c.optim;
  const DataConfig& d = c.data;
  std::ostringstream out;
  out << "[network]\nbackbone = ";
  for (std::size_t k = 0; k < n.backbone.size(); ++k) {
    out << (k ? "," : "") << n.backbone[k].first << "x" << n.backbone[k].second;
  }
  out << "\ndepth = " << n.depth
      << "\nsmae_up = " << n.smae_up
      << "\nsmae_down = " << n.smae_down
      << "\neps = " << fmt(n.eps)
      << "\nlambda1 = " << fmt(n.lambda1)
      << "\nlambda2 = " << fmt(n.lambda2)
      << "\nattention = " << to_string(n.attention)
      << "\nclasses = " << n.classes
      << "\nlem_grad = " << to_string(n.lem_grad)
      << "\nsmx_grad = " << to_string(n.smx_grad)
      << "\nphi = "
      << (n.phi == PhiVariant::kDifference ? "difference" : "squared_difference")
      << "\nstrict_degenerate = " << (n.strict_degenerate ? "true" : "false")
      << "\nbatch_reduction = "
      << (n.batch_reduction == BatchReduction::kMean ? "mean" : "sum");
  out << "\n\n[optim]"
      << "\nlr = " << fmt(o.lr)
      << "\ndecay = " << fmt(o.decay)
      << "\ndecay_period = " << o.decay_period
      << "\nbatch_size = " << o.batch_size
      << "\nepochs = " << o.epochs
      << "\nseed = " << o.seed
      << "\nfc_lr = " << (o.fc_lr ? fmt(*o.fc_lr) : "")
      << "\nworkers = " << o.workers;
  out << "\n\n[data]"
      << "\ntrain = " << d.train
      << "\ntest = " << d.test
      << "\nn_train = " << d.n_train
      << "\nsynth_classes = " << d.synth.classes
      << "\nsynth_per_class = " << d.synth.per_class
      << "\nsynth_dim = " << d.synth.dim
      << "\nsynth_separation = " << fmt(d.synth.separation)
      << "\nsynth_frames = " << d.synth.frames
      << "\nsynth_seed = " << d.synth.seed;
  out << "\n\n[run]"
      << "\nout_dir = " << c.out_dir
      << "\nflush_interval = " << c.flush_interval
      << "\ncheckpoint_interval = " << c.checkpoint_interval << "\n";
  return out.str();
}

void save_config(const std::string& path, const RunConfig& config) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error("cannot write " + path);
  out << write_config(config);
}

}  // namespace spdnet
