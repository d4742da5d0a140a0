// Prints one PASS/FAIL line per acceptance criterion and exits nonzero if any
// criterion fails.

#include "spdnet/attention.hpp"
#include "spdnet/checkpoint.hpp"
#include "spdnet/commands.hpp"
#include "spdnet/data.hpp"
#include "spdnet/errors.hpp"
#include "spdnet/layers.hpp"
#include "spdnet/network.hpp"
#include "spdnet/optim.hpp"
#include "support/oracles.hpp"

#include <chrono>
#include <cstdio>
#include <functional>
#include <sstream>
#include <string>

using namespace spdnet;
using oracle::Rng;

namespace {

constexpr double kStep = 1e-5;
constexpr double kLayerTol = 1e-4;

int failures = 0;

void report(int n, bool ok, const std::string& what, const std::string& detail,
            double seconds) {
  std::printf("%s criterion %d: %s (%s; %.2f s)\n", ok ? "PASS" : "FAIL", n,
              what.c_str(), detail.c_str(), seconds);
  std::fflush(stdout);
  if (!ok) ++failures;
}

double since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

Matrix sym_dir(int d, Rng& rng) { return oracle::random_sym(d, rng); }

// Spectrum spaced by at least 0.1.
Matrix spaced_spd(int d, Rng& rng) { return oracle::random_spd(d, rng, 0.1, 0.3); }
Matrix spaced_sym(int d, Rng& rng) {
  return oracle::compose(oracle::random_orthogonal(d, rng),
                         oracle::spaced_spectrum(d, -1.0, 0.1, rng));
}

// Relative error between <grad, dir> and the central difference of f.
double check(const std::function<double(double)>& f, double analytic) {
  return oracle::rel_err(analytic, oracle::central(f, kStep));
}

// ---------------------------------------------------------------- 1

void criterion1() {
  const auto t0 = std::chrono::steady_clock::now();
  Rng rng(101);
  std::uniform_int_distribution<int> count(3, 5);
  std::uniform_int_distribution<int> dim(3, 8);
  std::uniform_real_distribution<double> u(0.05, 1.0);
  double worst = 0.0;
  for (int t = 0; t < 20; ++t) {
    const int n = count(rng);
    const int d = dim(rng);
    std::vector<SpdMatrix> xs;
    std::vector<Matrix> raw;
    Vector w(n);
    for (int i = 0; i < n; ++i) {
      raw.push_back(oracle::random_spd_wishart(d, rng));
      xs.emplace_back(raw.back());
      w(i) = u(rng);
    }
    w /= w.sum();
    const Matrix closed = weighted_frechet_mean_lem(xs, w).matrix();
    const Matrix gd = oracle::frechet_gd(raw, w);
    worst = std::max(worst, std::sqrt(oracle::lem_sq(closed, gd)));
  }
  const double s = since(t0);
  report(1, worst < 1e-6 && s < 10.0, "closed-form weighted Frechet mean matches descent minimizer",
         "max LEM distance " + fmt("%.2e", worst), s);
}

// ---------------------------------------------------------------- 2

struct EigLayerErrors {
  double reeig = 0.0;
  double logeig = 0.0;
  double expeig = 0.0;
  double max() const { return std::max({reeig, logeig, expeig}); }
};

EigLayerErrors eig_layer_errors(PhiVariant phi, int instances, std::uint64_t seed) {
  Rng rng(seed);
  EigBackwardOptions opts;
  opts.phi = phi;
  EigLayerErrors e;
  for (int t = 0; t < instances; ++t) {
    const int d = 3 + t % 4;
    {
      const Matrix x = spaced_spd(d, rng);
      const Vector lam = sym_eig(x).values;
      const double eps = lam(1) - 0.05;  // clamps the smallest eigenvalue only
      const Matrix g = sym_dir(d, rng);
      const Matrix v = sym_dir(d, rng);
      auto fwd = reeig_fwd(SpdMatrix(x), eps);
      const Matrix dx = reeig_bwd(fwd.tape, g, opts);
      e.reeig = std::max(e.reeig, check([&](double h) {
        return oracle::inner(g, reeig_fwd(SpdMatrix(x + h * v), eps).out.matrix());
      }, oracle::inner(dx, v)));
    }
    {
      const Matrix x = spaced_spd(d, rng);
      const Matrix g = sym_dir(d, rng);
      const Matrix v = sym_dir(d, rng);
      auto fwd = logeig_fwd(SpdMatrix(x));
      const Matrix dx = logeig_bwd(fwd.tape, g, opts);
      e.logeig = std::max(e.logeig, check([&](double h) {
        return oracle::inner(g, oracle::logm(x + h * v));
      }, oracle::inner(dx, v)));
    }
    {
      const Matrix x = spaced_sym(d, rng);
      const Matrix g = sym_dir(d, rng);
      const Matrix v = sym_dir(d, rng);
      auto fwd = expeig_fwd(SymMatrix(x));
      const Matrix dx = expeig_bwd(fwd.tape, g, opts);
      e.expeig = std::max(e.expeig, check([&](double h) {
        return oracle::inner(g, oracle::expm(x + h * v));
      }, oracle::inner(dx, v)));
    }
  }
  return e;
}

void criterion2() {
  const auto t0 = std::chrono::steady_clock::now();
  constexpr int kInstances = 50;
  Rng rng(202);
  double bimap_x = 0.0, bimap_w = 0.0, sim = 0.0, smx = 0.0, wts = 0.0, glm = 0.0;

  for (int t = 0; t < kInstances; ++t) {
    const int d_in = 4 + t % 4;
    const int d_out = 2 + t % 2;
    const Matrix x = spaced_spd(d_in, rng);
    const StiefelParam w = StiefelParam::random(d_in, d_out, rng);
    const Matrix g = sym_dir(d_out, rng);
    const Matrix vx = sym_dir(d_in, rng);
    const Matrix vw = oracle::gaussian(d_in, d_out, rng);
    auto fwd = bimap_fwd(w, SpdMatrix(x));
    const BiMapGrads grads = bimap_bwd(fwd.tape, g);
    const Matrix& wm = w.matrix();
    bimap_x = std::max(bimap_x, check([&](double h) {
      return oracle::inner(g, wm.transpose() * (x + h * vx) * wm);
    }, oracle::inner(grads.dx, vx)));
    bimap_w = std::max(bimap_w, check([&](double h) {
      const Matrix wh = wm + h * vw;
      return oracle::inner(g, wh.transpose() * x * wh);
    }, oracle::inner(grads.dw, vw)));
  }

  std::uniform_real_distribution<double> dist(0.0, 5.0);
  std::normal_distribution<double> normal(0.0, 1.0);
  for (int t = 0; t < kInstances; ++t) {
    const double d = dist(rng);
    const double gs = normal(rng);
    sim = std::max(sim, check([&](double h) { return gs * sim_layer(d + h); },
                              sim_layer_bwd(d, gs)));

    const int n = 2 + t % 4;
    const Vector s = oracle::gaussian(n, 1, rng);
    const Vector gv = oracle::gaussian(n, 1, rng);
    const Vector dir = oracle::gaussian(n, 1, rng);
    const Vector ds = smx_layer_bwd(smx_layer(s), gv, GradMode::kExact);
    smx = std::max(smx, check([&](double h) { return gv.dot(smx_layer(s + h * dir)); },
                              ds.dot(dir)));

    const int dim = 3 + t % 3;
    std::vector<SymMatrix> logs;
    std::vector<Matrix> dirs;
    for (int i = 0; i < n; ++i) {
      logs.emplace_back(sym_dir(dim, rng));
      dirs.push_back(sym_dir(dim, rng));
    }
    Vector weights = oracle::gaussian(n, 1, rng).cwiseAbs();
    weights /= weights.sum();
    const Vector wdir = oracle::gaussian(n, 1, rng);
    const Matrix gy = sym_dir(dim, rng);
    const WtsGrads wg = wts_layer_bwd(weights, logs, gy);
    double analytic = wg.d_weights.dot(wdir);
    for (int i = 0; i < n; ++i) analytic += oracle::inner(wg.d_logs[i], dirs[i]);
    wts = std::max(wts, check([&](double h) {
      std::vector<SymMatrix> moved;
      for (int i = 0; i < n; ++i) moved.emplace_back(logs[i].matrix() + h * dirs[i]);
      return oracle::inner(gy, wts_layer(weights + h * wdir, moved).matrix());
    }, analytic));
  }

  const QkvSelection sel = select_qkv(5);
  for (int t = 0; t < kInstances; ++t) {
    const int d = 3 + t % 3;
    std::vector<SpdMatrix> hidden;
    for (int i = 0; i < 5; ++i) hidden.emplace_back(spaced_spd(d, rng));
    const Matrix g = sym_dir(d, rng);
    std::vector<Matrix> dirs(5, Matrix::Zero(d, d));
    for (int v : sel.values) dirs[v - 1] = sym_dir(d, rng);
    GlmForward fwd = smsa_glm_fwd(hidden, sel);
    const std::vector<Matrix> dh = smsa_glm_bwd(fwd.tape, g);
    double analytic = 0.0;
    for (int i = 0; i < 5; ++i) analytic += oracle::inner(dh[i], dirs[i]);
    glm = std::max(glm, check([&](double h) {
      std::vector<SpdMatrix> moved;
      for (int i = 0; i < 5; ++i) moved.emplace_back(hidden[i].matrix() + h * dirs[i]);
      // Independent reference: exp of the weighted sum of matrix logs.
      Vector sims(static_cast<Eigen::Index>(sel.keys.size()));
      const Matrix lq = oracle::logm(moved[0].matrix());
      for (std::size_t k = 0; k < sel.keys.size(); ++k) {
        const double dist2 = (lq - oracle::logm(moved[sel.keys[k] - 1].matrix())).squaredNorm();
        sims(static_cast<Eigen::Index>(k)) = 1.0 / (1.0 + std::log1p(dist2));
      }
      const Vector a = (sims.array() - sims.maxCoeff()).exp().matrix();
      const Vector wts_ref = a / a.sum();
      Matrix y = Matrix::Zero(d, d);
      for (std::size_t k = 0; k < sel.values.size(); ++k) {
        y += wts_ref(static_cast<Eigen::Index>(k)) *
             oracle::logm(moved[sel.values[k] - 1].matrix());
      }
      return oracle::inner(g, oracle::expm(0.5 * (y + y.transpose())));
    }, analytic));
  }

  const EigLayerErrors diff = eig_layer_errors(PhiVariant::kDifference, kInstances, 303);
  const double worst =
      std::max({bimap_x, bimap_w, sim, smx, wts, glm, diff.max()});
  std::ostringstream detail;
  detail.precision(2);
  detail << std::scientific << "max rel err: BiMap dX " << bimap_x << ", BiMap dW " << bimap_w
         << ", ReEig " << diff.reeig << ", LogEig " << diff.logeig << ", ExpEig "
         << diff.expeig << ", SIM " << sim << ", SMX " << smx << ", WTS " << wts
         << ", SMSA-GLM value path " << glm;
  const double s = since(t0);
  report(2, worst < kLayerTol && s < 60.0, "exact-mode layer backward matches finite differences",
         detail.str(), s);

}

// ---------------------------------------------------------------- 3

void criterion3() {
  const auto t0 = std::chrono::steady_clock::now();
  Rng rng(404);
  double on_locus = 0.0;
  double off_locus = 0.0;
  for (int t = 0; t < 20; ++t) {
    const int d = 3 + t % 4;
    const Matrix u = oracle::random_orthogonal(d, rng);
    const Matrix h1 = oracle::compose(u, oracle::spaced_spectrum(d, 0.4, 0.1, rng));
    const Matrix hj = oracle::compose(u, oracle::spaced_spectrum(d, 0.6, 0.1, rng));
    const Matrix v = sym_dir(d, rng);
    const Matrix vj = sym_dir(d, rng);
    const LemGrads g = lem_layer_bwd(SpdMatrix(h1), SpdMatrix(hj), 1.0, GradMode::kPaper);
    on_locus = std::max(on_locus, check([&](double h) {
      return oracle::lem_sq(h1 + h * v, hj);
    }, oracle::inner(g.d_query, v)));
    on_locus = std::max(on_locus, check([&](double h) {
      return oracle::lem_sq(h1, hj + h * vj);
    }, oracle::inner(g.d_key, vj)));

    const Matrix k = spaced_spd(d, rng);
    const LemGrads p = lem_layer_bwd(SpdMatrix(h1), SpdMatrix(k), 1.0, GradMode::kPaper);
    off_locus = std::max(off_locus, check([&](double h) {
      return oracle::lem_sq(h1 + h * v, k);
    }, oracle::inner(p.d_query, v)));
  }
  report(3, on_locus < kLayerTol, "paper-mode LEM gradient exact on commuting pairs",
         "commuting max rel err " + fmt("%.2e", on_locus) +
             "; non-commuting discrepancy " + fmt("%.2e", off_locus) + " (reported only)",
         since(t0));
}

// ---------------------------------------------------------------- 4

void criterion4() {
  const auto t1 = std::chrono::steady_clock::now();
  constexpr int kInstances = 50;
  const EigLayerErrors diff = eig_layer_errors(PhiVariant::kDifference, kInstances, 303);
  const EigLayerErrors squared =
      eig_layer_errors(PhiVariant::kSquaredDifference, kInstances, 303);
  const bool diff_ok = diff.max() < kLayerTol;
  const bool sq_ok = squared.max() < kLayerTol;
  const bool default_ok = (EigBackwardOptions{}.phi == PhiVariant::kDifference) == diff_ok;
  std::ostringstream d4;
  d4.precision(2);
  d4 << std::scientific << "1/(di-dj) max err " << diff.max() << (diff_ok ? " passes" : " fails")
     << ", 1/(di^2-dj^2) max err " << squared.max() << (sq_ok ? " passes" : " fails")
     << "; default is " << (EigBackwardOptions{}.phi == PhiVariant::kDifference
                                ? "1/(di-dj)" : "1/(di^2-dj^2)");
  report(4, (diff_ok != sq_ok) && default_ok, "exactly one Phi variant passes and is the default",
         d4.str(), since(t1));
}

// ---------------------------------------------------------------- 5

int numeric_rank(const Matrix& m) {
  return static_cast<int>(
      (Eigen::SelfAdjointEigenSolver<Matrix>(m, Eigen::EigenvaluesOnly).eigenvalues().array() >
       1e-10).count());
}

void criterion5() {
  const auto t0 = std::chrono::steady_clock::now();
  NetworkConfig c;  // 8 -> 7 -> 6, SMAE 6 -> 4, E = 5, SMSA
  Rng rng(505);
  int violations = 0;
  int rank_violations = 0;
  for (int t = 0; t < 1000; ++t) {
    try {
      const ModelState s = init_model(c, static_cast<std::uint64_t>(t));
      const ForwardTrace tr = model_fwd(SpdMatrix(oracle::random_spd_wishart(8, rng)), s, c);
      auto spd = [](const Matrix& m) {
        return (m - m.transpose()).norm() == 0.0 &&
               Eigen::SelfAdjointEigenSolver<Matrix>(m, Eigen::EigenvaluesOnly)
                       .eigenvalues()
                       .minCoeff() > 0.0;
      };
      bool ok = spd(tr.backbone_out.matrix()) && spd(tr.attention_out->matrix());
      for (const auto& st : tr.stages) {
        ok = ok && spd(st.activated.matrix()) && spd(st.hidden.matrix()) &&
             spd(st.representation.matrix());
        if (numeric_rank(st.reconstruction.matrix()) > c.smae_down) ++rank_violations;
      }
      if (!ok) ++violations;
    } catch (const Error&) {
      ++violations;
    }
  }
  const double s = since(t0);
  report(5, violations == 0 && rank_violations == 0 && s < 60.0,
         "SPD preserved through 1000 full E=5 forward passes",
         std::to_string(violations) + " SPD violations, " + std::to_string(rank_violations) +
             " reconstructions above rank d_down",
         s);
}

// ---------------------------------------------------------------- 6

void criterion6() {
  const auto t0 = std::chrono::steady_clock::now();
  const QkvSelection e5 = select_qkv(5);
  const QkvSelection e9 = select_qkv(9);
  const QkvSelection e10 = select_qkv(10);
  bool ok = e5.query == 1 && e5.keys == std::vector<int>{2, 3} &&
            e5.values == std::vector<int>{4, 5};
  ok = ok && e9.h == 5 && e9.keys == std::vector<int>{2, 3, 4, 5} &&
       e9.values == std::vector<int>{6, 7, 8, 9};
  ok = ok && e10.parity_offset == 2 && e10.keys == std::vector<int>{2, 3, 4, 5} &&
       e10.values == std::vector<int>{6, 7, 8, 9};
  int rejected = 0;
  for (int e : {3, 4}) {
    try {
      select_qkv(e);
    } catch (const UnsupportedDepthError&) {
      ++rejected;
    }
  }
  report(6, ok && rejected == 2, "Q/K/V selection rule",
         "E=5 {1 | 2,3 | 4,5}, E=9 {1 | 2..5 | 6..9}, E in {3,4} rejected " +
             std::to_string(rejected) + "/2",
         since(t0));
}

// ---------------------------------------------------------------- 7, 8

void criterion7_and_8() {
  const auto t0 = std::chrono::steady_clock::now();
  constexpr int kSeeds = 10;
  int good = 0;
  double sum_smsa = 0.0;
  double sum_eusa = 0.0;
  int smsa_wins = 0;
  std::ostringstream per_seed;
  for (int seed = 1; seed <= kSeeds; ++seed) {
    RunConfig rc;  // defaults: 3 classes, d=8, separation 2, 200/100 split, 200 epochs
    rc.optim.seed = static_cast<std::uint64_t>(seed);
    rc.data.synth.seed = static_cast<std::uint64_t>(seed);
    const DatasetSplit data = load_data(rc);
    const double baseline = nearest_centroid_accuracy(data.train, data.test);

    rc.network.attention = AttentionMode::kSmsa;
    const double smsa = fit(rc, data, init_model(rc.network, rc.optim.seed)).test_accuracy;
    rc.network.attention = AttentionMode::kEusa;
    const double eusa = fit(rc, data, init_model(rc.network, rc.optim.seed)).test_accuracy;

    if (smsa >= baseline && smsa >= 0.90) ++good;
    if (smsa >= eusa) ++smsa_wins;
    sum_smsa += smsa;
    sum_eusa += eusa;
    per_seed << (seed > 1 ? " " : "") << seed << ":" << smsa << "/" << eusa << "/" << baseline;
  }
  const double s = since(t0);
  report(7, good >= 8 && s < 900.0, "SMSA-E5 beats the nearest-centroid baseline and 0.90",
         std::to_string(good) + "/10 seeds; seed:smsa/eusa/baseline " + per_seed.str(), s);
  const double mean_smsa = sum_smsa / kSeeds;
  const double mean_eusa = sum_eusa / kSeeds;
  report(8, mean_smsa >= mean_eusa, "mean SMSA accuracy is at least mean EuSA accuracy",
         "SMSA " + fmt("%.4f", mean_smsa) + ", EuSA " + fmt("%.4f", mean_eusa) +
             ", signed gap " + fmt("%+.4f", mean_smsa - mean_eusa) + ", SMSA >= EuSA in " +
             std::to_string(smsa_wins) + "/10 seeds",
         0.0);
}

// ---------------------------------------------------------------- 9

void criterion9() {
  const auto t0 = std::chrono::steady_clock::now();
  NetworkConfig c;
  c.backbone = {{8, 6}};
  c.smae_up = 6;
  c.smae_down = 4;
  c.depth = 5;
  const ModelState s = init_model(c, 909);
  Rng rng(909);
  const SpdMatrix x(oracle::random_spd_wishart(8, rng));
  const int label = 2;
  ForwardTrace tr = model_fwd(x, s, c);
  const ModelGrads g = model_bwd(tr, label, s, c);
  double worst = 0.0;
  for (int k = 0; k < 10; ++k) {
    ModelGrads dir = ModelGrads::zeros_like(s);
    for (std::size_t i = 0; i < dir.backbone.size(); ++i) {
      dir.backbone[i] = stiefel_tangent(s.backbone[i].matrix(),
                                        oracle::gaussian(8, 6, rng));
    }
    for (int e = 0; e < 5; ++e) {
      dir.down[e] = stiefel_tangent(s.smae[e].down.matrix(), oracle::gaussian(6, 4, rng));
      dir.up[e] = stiefel_tangent(s.smae[e].up.matrix(), oracle::gaussian(6, 4, rng));
      dir.head_weight[e] = oracle::gaussian(3, 16, rng);
      dir.head_bias[e] = oracle::gaussian(3, 1, rng);
    }
    const double numeric = oracle::central([&](double h) {
      ModelState m = s;
      for (std::size_t i = 0; i < m.backbone.size(); ++i) {
        m.backbone[i] = retract_qf(s.backbone[i].matrix() + h * dir.backbone[i]);
      }
      for (int e = 0; e < 5; ++e) {
        m.smae[e].down = retract_qf(s.smae[e].down.matrix() + h * dir.down[e]);
        m.smae[e].up = retract_qf(s.smae[e].up.matrix() + h * dir.up[e]);
        m.heads[e].weight += h * dir.head_weight[e];
        m.heads[e].bias += h * dir.head_bias[e];
      }
      return loss(model_fwd(x, m, c), label, c).total;
    }, kStep);
    worst = std::max(worst, oracle::rel_err(g.dot(dir), numeric));
  }
  const double secs = since(t0);
  report(9, worst < 1e-3 && secs < 60.0, "whole-model directional derivative",
         "max rel err over 10 directions " + fmt("%.2e", worst), secs);
}

// ---------------------------------------------------------------- 10

void criterion10() {
  const auto t0 = std::chrono::steady_clock::now();
  RunConfig rc;
  rc.network.backbone = {{6, 5}};
  rc.network.smae_up = 5;
  rc.network.smae_down = 3;
  rc.data.synth.dim = 6;
  rc.data.synth.per_class = 12;
  rc.data.synth.frames = 40;
  rc.data.n_train = 24;
  rc.optim.epochs = 5;
  rc.optim.batch_size = 7;
  const DatasetSplit data = load_data(rc);
  const TrainResult a = fit(rc, data, init_model(rc.network, rc.optim.seed));
  const TrainResult b = fit(rc, data, init_model(rc.network, rc.optim.seed));
  bool same_run = encode_model(rc.network, a.state) == encode_model(rc.network, b.state);
  for (std::size_t i = 0; i < a.history.size(); ++i) {
    same_run = same_run && a.history[i].train.loss == b.history[i].train.loss &&
               a.history[i].test_accuracy == b.history[i].test_accuracy;
  }
  const auto model_bytes = encode_model(rc.network, a.state);
  const Checkpoint ck = decode_model(model_bytes);
  const bool model_rt = ck.config == rc.network && encode_model(ck.config, ck.state) == model_bytes;
  const auto ds_bytes = encode_dataset(data.train);
  const bool data_rt = encode_dataset(decode_dataset(ds_bytes)) == ds_bytes;
  report(10, same_run && model_rt && data_rt, "determinism and bit-exact serialization",
         std::string("repeat run ") + (same_run ? "identical" : "differs") + ", model file " +
             (model_rt ? "round-trips" : "differs") + ", dataset file " +
             (data_rt ? "round-trips" : "differs"),
         since(t0));
}

// ---------------------------------------------------------------- 11

void criterion11() {
  const auto t0 = std::chrono::steady_clock::now();
  NetworkConfig c;
  c.attention = AttentionMode::kNone;
  c.depth = 5;
  const int e5 = layer_count(c);
  c.depth = 10;
  const int e10 = layer_count(c);
  c.attention = AttentionMode::kSmsa;
  const int e10_glm = layer_count(c);
  report(11, e5 == 47 && e10 == 97 && e10_glm == 112, "layer count bookkeeping",
         "E=5 " + std::to_string(e5) + ", E=10 " + std::to_string(e10) + ", E=10 with SMSA-GLM " +
             std::to_string(e10_glm),
         since(t0));
}

}  // namespace

int main() {
  const std::vector<std::pair<int, std::function<void()>>> steps = {
      {1, criterion1}, {2, criterion2}, {3, criterion3},   {4, criterion4},
      {5, criterion5}, {6, criterion6}, {7, criterion7_and_8}, {9, criterion9},
      {10, criterion10}, {11, criterion11}};
  for (const auto& [n, fn] : steps) {
    try {
      fn();
    } catch (const std::exception& e) {
      report(n, false, "raised an exception", e.what(), 0.0);
    }
  }
  std::printf("%d criteria failed\n", failures);
  return failures == 0 ? 0 : 1;
}
