// spdnet: train, evaluate and inspect SPD manifold networks.
//
// Exit codes: 0 success, 1 other failure (I/O, malformed file, failed
// gradient check), 2 configuration error, 3 numerical failure,
// 4 unsupported SMAE depth for the attention module.

#include "spdnet/commands.hpp"
#include "spdnet/errors.hpp"

#include <CLI11.hpp>

#include <iostream>
#include <optional>
#include <sstream>
#include <string>

namespace {

struct CommonFlags {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<int> workers;
  std::optional<std::string> out;
  std::optional<std::string> attention;
  std::optional<std::string> grad_mode;
  std::optional<int> epochs;
};

void add_common(CLI::App* cmd, CommonFlags& f) {
  cmd->add_option("--config", f.config, "config file (key = value, [sections])")
      ->check(CLI::ExistingFile);
  cmd->add_option("--seed", f.seed, "random seed");
  cmd->add_option("--workers", f.workers, "worker threads, 0 = sequential");
  cmd->add_option("--out", f.out, "output directory");
  cmd->add_option("--attention", f.attention, "smsa | eusa | none")
      ->check(CLI::IsMember({"smsa", "eusa", "none"}));
  cmd->add_option("--grad-mode", f.grad_mode,
                  "LEM and SMX backward mode: exact | paper")
      ->check(CLI::IsMember({"exact", "paper"}));
  cmd->add_option("--epochs", f.epochs, "epoch budget");
}

spdnet::RunConfig resolve(const CommonFlags& f) {
  spdnet::RunConfig c =
      f.config.empty() ? spdnet::RunConfig{} : spdnet::load_config(f.config);
  if (f.seed) c.optim.seed = *f.seed;
  if (f.workers) c.optim.workers = *f.workers;
  if (f.out) c.out_dir = *f.out;
  if (f.attention) c.network.attention = spdnet::parse_attention_mode(*f.attention);
  if (f.grad_mode) {
    c.network.lem_grad = c.network.smx_grad = spdnet::parse_grad_mode(*f.grad_mode);
  }
  if (f.epochs) c.optim.epochs = *f.epochs;
  c.optim.workers = spdnet::effective_workers(c.optim.workers);
  c.validate();
  return c;
}

std::vector<int> parse_stages(const std::string& s) {
  std::vector<int> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      out.push_back(std::stoi(item));
    } catch (const std::exception&) {
      throw spdnet::ConfigError("--stages: not an integer list: " + s);
    }
  }
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"SPD manifold networks with manifold self-attention"};
  app.require_subcommand(1);

  CommonFlags common;
  std::string resume;
  auto* train = app.add_subcommand("train", "train a model");
  add_common(train, common);
  train->add_option("--resume", resume, "checkpoint to continue from")
      ->check(CLI::ExistingFile);

  std::string model_path, data_path;
  auto* eval = app.add_subcommand("eval", "accuracy of a model on a dataset");
  eval->add_option("--model", model_path, "model file")->required()->check(CLI::ExistingFile);
  eval->add_option("--data", data_path, "dataset file")->required()->check(CLI::ExistingFile);

  int instances = 10;
  auto* gradcheck = app.add_subcommand("gradcheck", "finite-difference audit of every backward pass");
  add_common(gradcheck, common);
  gradcheck->add_option("--instances", instances, "random instances per layer")
      ->check(CLI::PositiveNumber);

  spdnet::SynthOptions synth;
  int n_train = 200;
  std::string gen_out = "data";
  auto* gen = app.add_subcommand("gen", "generate the synthetic SPD benchmark");
  gen->add_option("--classes", synth.classes);
  gen->add_option("--per-class", synth.per_class);
  gen->add_option("--dim", synth.dim);
  gen->add_option("--separation", synth.separation);
  gen->add_option("--frames", synth.frames);
  gen->add_option("--n-train", n_train);
  gen->add_option("--seed", synth.seed);
  gen->add_option("--out", gen_out);

  int n_seeds = 10;
  auto* ablate = app.add_subcommand("ablate", "smsa / eusa / none under identical seeds");
  add_common(ablate, common);
  ablate->add_option("--seeds", n_seeds, "seeds 1..N")->check(CLI::PositiveNumber);

  std::string stages = "0,1,2,3,4,5";
  std::size_t item = 0;
  std::string dump_out = "features";
  auto* dump = app.add_subcommand("dump-features", "render hidden SPD states as PGM images");
  dump->add_option("--model", model_path, "model file")->required()->check(CLI::ExistingFile);
  dump->add_option("--data", data_path, "dataset file")->required()->check(CLI::ExistingFile);
  dump->add_option("--stages", stages, "comma-separated stage indices, 0 = backbone");
  dump->add_option("--item", item, "dataset item to render");
  dump->add_option("--out", dump_out, "output directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (*train) {
      spdnet::cmd_train(resolve(common), std::cout, resume);
    } else if (*eval) {
      const auto r = spdnet::cmd_eval(model_path, data_path);
      std::cout << "accuracy " << r.accuracy << " on " << r.samples << " samples\n";
    } else if (*gradcheck) {
      const spdnet::RunConfig rc = resolve(common);
      spdnet::GradcheckOptions opts;
      opts.seed = rc.optim.seed;
      opts.instances = instances;
      opts.model.lem_grad = rc.network.lem_grad;
      opts.model.smx_grad = rc.network.smx_grad;
      opts.model.attention = rc.network.attention;
      if (!spdnet::cmd_gradcheck(opts, std::cout).ok()) return 1;
    } else if (*gen) {
      spdnet::cmd_gen(synth, n_train, gen_out, std::cout);
    } else if (*ablate) {
      std::vector<std::uint64_t> seeds;
      for (int s = 1; s <= n_seeds; ++s) seeds.push_back(static_cast<std::uint64_t>(s));
      spdnet::cmd_ablate(resolve(common), seeds, std::cout);
    } else if (*dump) {
      spdnet::cmd_dump_features(model_path, data_path, parse_stages(stages), item,
                                dump_out, std::cout);
    }
  } catch (const spdnet::UnsupportedDepthError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 4;
  } catch (const spdnet::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const spdnet::NumericalError& e) {
    std::cerr << "numerical failure: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
