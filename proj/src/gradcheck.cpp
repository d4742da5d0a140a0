#include "spdnet/gradcheck.hpp"

#include "spdnet/attention.hpp"
#include "spdnet/errors.hpp"
#include "spdnet/optim.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <functional>
#include <random>

namespace spdnet {

double relative_error(double a, double b) {
  const double scale = std::max({std::abs(a), std::abs(b), 1e-12});
  return std::abs(a - b) / scale;
}

bool GradcheckReport::ok() const {
  return std::all_of(entries.begin(), entries.end(), [](const auto& e) {
    return !e.fatal || e.passed();
  });
}

std::string GradcheckReport::format() const {
  std::string out;
  char line[160];
  for (const auto& e : entries) {
    const char* status = e.passed() ? "ok" : (e.fatal ? "FAIL" : "differs");
    std::snprintf(line, sizeof line, "%-32s %-6s max_rel_err=%.3e tol=%.0e %s\n",
                  e.name.c_str(), e.mode.c_str(), e.max_rel_err, e.tol, status);
    out += line;
  }
  out += ok() ? "gradcheck: all exact-mode checks passed\n"
              : "gradcheck: exact-mode failures present\n";
  return out;
}

namespace {

using Rng = std::mt19937_64;

Matrix gaussian(Eigen::Index r, Eigen::Index c, Rng& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  Matrix m(r, c);
  for (Eigen::Index i = 0; i < r; ++i) {
    for (Eigen::Index j = 0; j < c; ++j) m(i, j) = n(rng);
  }
  return m;
}

Matrix random_sym(int d, Rng& rng) { return sym(gaussian(d, d, rng)); }

Matrix random_orthogonal(int d, Rng& rng) {
  return StiefelParam::random(d, d, rng).matrix();
}

// Eigenvalues base, base+0.3, ... with jitter < 0.1, so gaps exceed 0.2.
Vector gapped_spectrum(int d, double base, Rng& rng) {
  std::uniform_real_distribution<double> jitter(0.0, 0.1);
  Vector v(d);
  for (int i = 0; i < d; ++i) v(i) = base + 0.3 * i + jitter(rng);
  return v;
}

SpdMatrix gapped_spd(int d, Rng& rng, const Matrix* basis = nullptr) {
  const Matrix u = basis ? *basis : random_orthogonal(d, rng);
  return SpdMatrix(reconstruct(u, gapped_spectrum(d, 0.5, rng)));
}

double inner(const Matrix& a, const Matrix& b) { return a.cwiseProduct(b).sum(); }

double central(const std::function<double(double)>& f, double h) {
  return (f(h) - f(-h)) / (2.0 * h);
}

class Checker {
 public:
  explicit Checker(const GradcheckOptions& o) : opts_(o), rng_(o.seed) {}

  Rng& rng() { return rng_; }
  double h() const { return opts_.step; }

  // Runs `instance` opts.instances times; each returns (analytic, numeric).
  void add(const std::string& name, bool paper, double tol,
           const std::function<std::pair<double, double>(Rng&)>& instance,
           int count = -1, const char* mode = nullptr) {
    GradcheckEntry e;
    e.name = name;
    e.mode = mode ? mode : (paper ? "paper" : "exact");
    e.fatal = !paper;
    e.tol = tol;
    const int n = count > 0 ? count : opts_.instances;
    for (int i = 0; i < n; ++i) {
      const auto [analytic, numeric] = instance(rng_);
      e.max_rel_err = std::max(e.max_rel_err, relative_error(analytic, numeric));
      if (!std::isfinite(analytic) || !std::isfinite(numeric)) {
        e.max_rel_err = INFINITY;
      }
    }
    report_.entries.push_back(e);
  }

  GradcheckReport take() { return std::move(report_); }

 private:
  GradcheckOptions opts_;
  Rng rng_;
  GradcheckReport report_;
};

// Symmetric-input eig layer check: f(X) = <G, layer(X)>.
template <typename Fwd, typename Bwd>
std::pair<double, double> eig_layer_instance(const Matrix& x, Fwd fwd, Bwd bwd,
                                             double h, Rng& rng) {
  auto out = fwd(x);
  const Matrix g = random_sym(out.out.dim(), rng);
  const Matrix v = random_sym(static_cast<int>(x.rows()), rng);
  const double analytic = inner(bwd(out.tape, g), v);
  const double numeric = central(
      [&](double t) { return inner(g, fwd(Matrix(x + t * v)).out.matrix()); },
      h);
  return {analytic, numeric};
}

std::vector<SpdMatrix> random_hidden(int count, int d, Rng& rng) {
  std::vector<SpdMatrix> hs;
  for (int i = 0; i < count; ++i) hs.push_back(gapped_spd(d, rng));
  return hs;
}

void perturb(std::vector<SpdMatrix>& hs, const std::vector<SpdMatrix>& base,
             const std::vector<Matrix>& dirs, double t) {
  for (std::size_t i = 0; i < hs.size(); ++i) {
    hs[i] = SpdMatrix(base[i].matrix() + t * dirs[i]);
  }
}

// GLM check with directions only on the hidden states listed in `which`.
std::pair<double, double> glm_instance(AttentionMode mode,
                                       const std::vector<int>& which,
                                       double h, Rng& rng) {
  const int d = 4;
  const QkvSelection sel = select_qkv(5);
  const auto base = random_hidden(sel.output_index(), d, rng);
  std::vector<Matrix> dirs(base.size(), Matrix::Zero(d, d));
  for (int i : which) dirs[i - 1] = random_sym(d, rng);
  const Matrix g = random_sym(d, rng);

  auto fwd = glm_fwd(mode, base, sel);
  const auto grads = glm_bwd(fwd.tape, g);
  double analytic = 0.0;
  for (std::size_t i = 0; i < base.size(); ++i) analytic += inner(grads[i], dirs[i]);

  std::vector<SpdMatrix> hs = base;
  const double numeric = central(
      [&](double t) {
        perturb(hs, base, dirs, t);
        return inner(g, glm_fwd(mode, hs, sel).out.matrix());
      },
      h);
  return {analytic, numeric};
}

ModelState displaced(const ModelState& s, const ModelGrads& dir, double t) {
  ModelState out = s;
  for (std::size_t k = 0; k < s.backbone.size(); ++k) {
    out.backbone[k] = retract_qf(s.backbone[k].matrix() + t * dir.backbone[k]);
  }
  for (std::size_t e = 0; e < s.smae.size(); ++e) {
    out.smae[e].down = retract_qf(s.smae[e].down.matrix() + t * dir.down[e]);
    out.smae[e].up = retract_qf(s.smae[e].up.matrix() + t * dir.up[e]);
  }
  for (std::size_t e = 0; e < s.heads.size(); ++e) {
    out.heads[e].weight += t * dir.head_weight[e];
    out.heads[e].bias += t * dir.head_bias[e];
  }
  return out;
}

}  // namespace

GradcheckReport run_gradcheck(const GradcheckOptions& opts) {
  Checker c(opts);
  const double h = opts.step;
  const double tol = opts.layer_tol;
  const int d = 5;

  c.add("BiMap dX", false, tol, [&](Rng& rng) {
    const StiefelParam w = StiefelParam::random(d, 3, rng);
    return eig_layer_instance(
        gapped_spd(d, rng).matrix(),
        [&](const Matrix& x) { return bimap_fwd(w, SpdMatrix(x)); },
        [](LayerTape& t, const Matrix& g) { return bimap_bwd(t, g).dx; }, h, rng);
  });
  c.add("BiMap dW", false, tol, [&](Rng& rng) {
    const StiefelParam w = StiefelParam::random(d, 3, rng);
    const SpdMatrix x = gapped_spd(d, rng);
    const Matrix g = random_sym(3, rng);
    const Matrix xi = stiefel_tangent(w.matrix(), gaussian(d, 3, rng));
    auto fwd = bimap_fwd(w, x);
    const double analytic = inner(bimap_bwd(fwd.tape, g).dw, xi);
    const double numeric = central(
        [&](double t) {
          return inner(g, bimap_fwd(retract_qf(w.matrix() + t * xi), x).out.matrix());
        },
        h);
    return std::pair{analytic, numeric};
  });
  c.add("BiMap(up) dH", false, tol, [&](Rng& rng) {
    const StiefelParam w = StiefelParam::random(d, 3, rng);
    return eig_layer_instance(
        gapped_spd(3, rng).matrix(),
        [&](const Matrix& x) { return bimap_up_fwd(w, SpdMatrix(x)); },
        [](LayerTape& t, const Matrix& g) { return bimap_bwd(t, g).dx; }, h, rng);
  });
  c.add("BiMap(up) dW", false, tol, [&](Rng& rng) {
    const StiefelParam w = StiefelParam::random(d, 3, rng);
    const SpdMatrix x = gapped_spd(3, rng);
    const Matrix g = random_sym(d, rng);
    const Matrix xi = stiefel_tangent(w.matrix(), gaussian(d, 3, rng));
    auto fwd = bimap_up_fwd(w, x);
    const double analytic = inner(bimap_bwd(fwd.tape, g).dw, xi);
    const double numeric = central(
        [&](double t) {
          return inner(g,
                       bimap_up_fwd(retract_qf(w.matrix() + t * xi), x).out.matrix());
        },
        h);
    return std::pair{analytic, numeric};
  });

  for (const PhiVariant phi : {PhiVariant::kDifference, PhiVariant::kSquaredDifference}) {
    EigBackwardOptions eo;
    eo.phi = phi;
    const bool alt = phi == PhiVariant::kSquaredDifference;
    const std::string tag = alt ? " phi=1/(s_i^2-s_j^2)" : "";
    c.add("ReEig" + tag, alt, tol, [&](Rng& rng) {
      // eps sits midway between the 2nd and 3rd eigenvalues: off the kink.
      const SpdMatrix x = gapped_spd(d, rng);
      const double eps = 0.5 * (x.eig().values(1) + x.eig().values(2));
      return eig_layer_instance(
          x.matrix(), [&](const Matrix& m) { return reeig_fwd(SpdMatrix(m), eps); },
          [&](LayerTape& t, const Matrix& g) { return reeig_bwd(t, g, eo); }, h, rng);
    }, -1, alt ? "alt" : nullptr);
    c.add("LogEig" + tag, alt, tol, [&](Rng& rng) {
      return eig_layer_instance(
          gapped_spd(d, rng).matrix(),
          [](const Matrix& m) { return logeig_fwd(SpdMatrix(m)); },
          [&](LayerTape& t, const Matrix& g) { return logeig_bwd(t, g, eo); }, h, rng);
    }, -1, alt ? "alt" : nullptr);
    c.add("ExpEig" + tag, alt, tol, [&](Rng& rng) {
      const Matrix u = random_orthogonal(d, rng);
      const Matrix t0 = reconstruct(u, gapped_spectrum(d, -0.6, rng));
      return eig_layer_instance(
          t0, [](const Matrix& m) { return expeig_fwd(SymMatrix(m)); },
          [&](LayerTape& t, const Matrix& g) { return expeig_bwd(t, g, eo); }, h, rng);
    }, -1, alt ? "alt" : nullptr);
  }

  c.add("SIM", false, tol, [&](Rng& rng) {
    std::uniform_real_distribution<double> u(0.1, 5.0);
    const double x = u(rng);
    return std::pair{sim_layer_bwd(x, 1.0),
                     central([&](double t) { return sim_layer(x + t); }, h)};
  });
  for (const GradMode m : {GradMode::kExact, GradMode::kPaper}) {
    c.add("SMX", m == GradMode::kPaper, tol, [&](Rng& rng) {
      const Vector s = gaussian(4, 1, rng);
      const Vector g = gaussian(4, 1, rng);
      const Vector v = gaussian(4, 1, rng);
      const double analytic = smx_layer_bwd(smx_layer(s), g, m).dot(v);
      const double numeric = central(
          [&](double t) { return g.dot(smx_layer(s + t * v)); }, h);
      return std::pair{analytic, numeric};
    });
  }
  c.add("WTS", false, tol, [&](Rng& rng) {
    const int n = 3;
    std::vector<SymMatrix> logs, dirs;
    for (int i = 0; i < n; ++i) {
      logs.push_back(SymMatrix(random_sym(d, rng)));
      dirs.push_back(SymMatrix(random_sym(d, rng)));
    }
    const Vector w = smx_layer(gaussian(n, 1, rng));
    const Vector dw = gaussian(n, 1, rng);
    const Matrix g = random_sym(d, rng);
    const WtsGrads grads = wts_layer_bwd(w, logs, g);
    double analytic = grads.d_weights.dot(dw);
    for (int i = 0; i < n; ++i) analytic += inner(grads.d_logs[i], dirs[i].matrix());
    const double numeric = central(
        [&](double t) {
          std::vector<SymMatrix> moved;
          for (int i = 0; i < n; ++i) {
            moved.push_back(SymMatrix(logs[i].matrix() + t * dirs[i].matrix()));
          }
          return inner(g, wts_layer(w + t * dw, moved).matrix());
        },
        h);
    return std::pair{analytic, numeric};
  });

  auto lem_instance = [&](GradMode mode, bool commuting) {
    return [&, mode, commuting](Rng& rng) {
      const Matrix u = random_orthogonal(d, rng);
      const SpdMatrix h1 = gapped_spd(d, rng, &u);
      const SpdMatrix hj = commuting ? gapped_spd(d, rng, &u) : gapped_spd(d, rng);
      const Matrix v1 = commuting ? reconstruct(u, gaussian(d, 1, rng)) : random_sym(d, rng);
      const Matrix vj = commuting ? reconstruct(u, gaussian(d, 1, rng)) : random_sym(d, rng);
      const LemGrads g = lem_layer_bwd(h1, hj, 1.0, mode);
      const double analytic = inner(g.d_query, v1) + inner(g.d_key, vj);
      const double numeric = central(
          [&](double t) {
            return lem_layer(SpdMatrix(h1.matrix() + t * v1),
                             SpdMatrix(hj.matrix() + t * vj));
          },
          h);
      return std::pair{analytic, numeric};
    };
  };
  c.add("LEM", false, tol, lem_instance(GradMode::kExact, false));
  c.add("LEM commuting", true, tol, lem_instance(GradMode::kPaper, true));
  c.add("LEM non-commuting", true, tol, lem_instance(GradMode::kPaper, false));

  const QkvSelection sel5 = select_qkv(5);
  c.add("SMSA-GLM value path", false, tol, [&](Rng& rng) {
    return glm_instance(AttentionMode::kSmsa, sel5.values, h, rng);
  });
  c.add("SMSA-GLM all inputs", false, tol, [&](Rng& rng) {
    return glm_instance(AttentionMode::kSmsa, {1, 2, 3, 4, 5}, h, rng);
  });
  c.add("EuSA-GLM all inputs", false, tol, [&](Rng& rng) {
    return glm_instance(AttentionMode::kEusa, {1, 2, 3, 4, 5}, h, rng);
  });

  // Whole network: directional derivative along random tangent directions.
  const NetworkConfig& net = opts.model;
  const ModelState state = init_model(net, opts.seed);
  const SpdMatrix x = gapped_spd(net.input_dim(), c.rng());
  const int label = 1 + static_cast<int>(opts.seed % net.classes);
  ForwardTrace trace = model_fwd(x, state, net);
  const ModelGrads grads = model_bwd(trace, label, state, net);
  auto objective = [&](const ModelState& s) {
    return loss(model_fwd(x, s, net), label, net).total;
  };
  const bool paper_model =
      net.lem_grad == GradMode::kPaper || net.smx_grad == GradMode::kPaper;
  c.add("model directional derivative", paper_model, opts.model_tol, [&](Rng& rng) {
    ModelGrads dir = ModelGrads::zeros_like(state);
    for (std::size_t k = 0; k < dir.backbone.size(); ++k) {
      dir.backbone[k] = stiefel_tangent(state.backbone[k].matrix(),
                                        gaussian(dir.backbone[k].rows(),
                                                 dir.backbone[k].cols(), rng));
    }
    for (std::size_t e = 0; e < dir.down.size(); ++e) {
      dir.down[e] = stiefel_tangent(state.smae[e].down.matrix(),
                                    gaussian(dir.down[e].rows(), dir.down[e].cols(), rng));
      dir.up[e] = stiefel_tangent(state.smae[e].up.matrix(),
                                  gaussian(dir.up[e].rows(), dir.up[e].cols(), rng));
      dir.head_weight[e] = gaussian(dir.head_weight[e].rows(),
                                    dir.head_weight[e].cols(), rng);
      dir.head_bias[e] = gaussian(dir.head_bias[e].size(), 1, rng);
    }
    dir *= 1.0 / std::sqrt(dir.dot(dir));
    const double analytic = grads.dot(dir);
    const double numeric = central(
        [&](double t) { return objective(displaced(state, dir, t)); }, h);
    return std::pair{analytic, numeric};
  }, opts.model_directions);

  return c.take();
}

}  // namespace spdnet
