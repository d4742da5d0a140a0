#include "spdnet/network.hpp"

#include "spdnet/errors.hpp"

#include <cmath>
#include <random>
#include <sstream>
#include <string>

namespace spdnet {

EigBackwardOptions NetworkConfig::eig_options() const {
  EigBackwardOptions o;
  o.phi = phi;
  o.degenerate = strict_degenerate ? DegeneratePolicy::kStrict
                                   : DegeneratePolicy::kRegularize;
  return o;
}

AttentionGradModes NetworkConfig::grad_modes() const {
  AttentionGradModes m;
  m.lem = lem_grad;
  m.smx = smx_grad;
  m.eig = eig_options();
  return m;
}

void NetworkConfig::validate() const {
  auto fail = [](const std::string& field, const std::string& why) {
    throw ConfigError("network." + field + ": " + why);
  };
  if (backbone.empty()) fail("backbone", "at least one BiMap is required");
  for (std::size_t k = 0; k < backbone.size(); ++k) {
    const auto [d_in, d_out] = backbone[k];
    if (d_in <= 0 || d_out <= 0 || d_out > d_in) {
      fail("backbone", "each layer needs 0 < d_out <= d_in");
    }
    if (k > 0 && d_in != backbone[k - 1].second) {
      fail("backbone", "layer " + std::to_string(k + 1) +
                           " input does not match previous output");
    }
    if (k > 0 && d_out >= backbone[k - 1].second) {
      fail("backbone", "output sizes must be strictly decreasing");
    }
  }
  if (backbone.back().second != smae_up) {
    fail("smae_up", "must equal the last backbone output size");
  }
  if (smae_down <= 0 || smae_down > smae_up) {
    fail("smae_down", "need 0 < smae_down <= smae_up");
  }
  if (depth < 1) fail("depth", "need at least one SMAE");
  if (!(eps > 0.0)) fail("eps", "must be positive");
  if (!(lambda1 >= 0.0)) fail("lambda1", "must be non-negative");
  if (!(lambda2 >= 0.0)) fail("lambda2", "must be non-negative");
  if (classes < 2) fail("classes", "need at least two classes");
  if (attention != AttentionMode::kNone) select_qkv(depth);
}

ModelState init_model(const NetworkConfig& config, std::uint64_t seed) {
  config.validate();
  std::mt19937_64 rng(seed);
  ModelState s;
  for (const auto& [d_in, d_out] : config.backbone) {
    s.backbone.push_back(StiefelParam::random(d_in, d_out, rng));
  }
  for (int e = 0; e < config.depth; ++e) {
    SmaeParams p;
    p.down = StiefelParam::random(config.smae_up, config.smae_down, rng);
    p.up = StiefelParam::random(config.smae_up, config.smae_down, rng);
    s.smae.push_back(std::move(p));
  }
  const int fan_in = config.head_inputs();
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  std::uniform_real_distribution<double> uniform(-bound, bound);
  for (int e = 0; e < config.depth; ++e) {
    ClassifierHead h;
    h.weight.resize(config.classes, fan_in);
    for (Eigen::Index i = 0; i < h.weight.rows(); ++i) {
      for (Eigen::Index j = 0; j < h.weight.cols(); ++j) {
        h.weight(i, j) = uniform(rng);
      }
    }
    h.bias = Vector::Zero(config.classes);
    s.heads.push_back(std::move(h));
  }
  return s;
}

void check_state(const ModelState& state, const NetworkConfig& config) {
  auto fail = [](const std::string& what) {
    throw DimensionMismatchError("model state: " + what);
  };
  if (state.backbone.size() != config.backbone.size()) {
    fail("backbone layer count differs from config");
  }
  for (std::size_t k = 0; k < state.backbone.size(); ++k) {
    if (state.backbone[k].d_in() != config.backbone[k].first ||
        state.backbone[k].d_out() != config.backbone[k].second) {
      fail("backbone layer " + std::to_string(k + 1) + " shape");
    }
  }
  const auto depth = static_cast<std::size_t>(config.depth);
  if (state.smae.size() != depth || state.heads.size() != depth) {
    fail("SMAE/head count differs from depth");
  }
  for (std::size_t e = 0; e < depth; ++e) {
    for (const StiefelParam* w : {&state.smae[e].down, &state.smae[e].up}) {
      if (w->d_in() != config.smae_up || w->d_out() != config.smae_down) {
        fail("SMAE " + std::to_string(e + 1) + " weight shape");
      }
    }
    if (state.heads[e].weight.rows() != config.classes ||
        state.heads[e].weight.cols() != config.head_inputs() ||
        state.heads[e].bias.size() != config.classes) {
      fail("head " + std::to_string(e + 1) + " shape");
    }
  }
}

BackboneForward backbone_fwd(const SpdMatrix& x, const ModelState& state,
                             const NetworkConfig& config) {
  if (x.dim() != config.input_dim()) {
    throw DimensionMismatchError("backbone_fwd: input dim " +
                                 std::to_string(x.dim()) + " != " +
                                 std::to_string(config.input_dim()));
  }
  BackboneForward out{x, {}};
  for (std::size_t k = 0; k < state.backbone.size(); ++k) {
    if (k > 0) {
      auto r = reeig_fwd(out.out, config.eps);
      out.out = std::move(r.out);
      out.tapes.push_back(std::move(r.tape));
    }
    auto b = bimap_fwd(state.backbone[k], out.out);
    out.out = std::move(b.out);
    out.tapes.push_back(std::move(b.tape));
  }
  return out;
}

SmaeForward smae_fwd(const SymMatrix& input, const SmaeParams& params,
                     double eps) {
  if (input.dim() != params.down.d_in()) {
    throw DimensionMismatchError("smae_fwd: input dim mismatch");
  }
  auto r = reeig_fwd(input, eps);
  auto d = bimap_fwd(params.down, r.out);
  auto u = bimap_up_fwd(params.up, d.out);
  return SmaeForward{std::move(d.out), std::move(u.out), std::move(r.tape),
                     std::move(r.out),  std::move(d.tape), std::move(u.tape)};
}

namespace {

// Row-major flattening. LogEig outputs are symmetric, so this coincides with
// Eigen's column-major storage.
Eigen::Map<const Vector> flatten(const Matrix& m) {
  return Eigen::Map<const Vector>(m.data(), m.size());
}

Vector softmax(const Vector& logits) {
  const Vector e = (logits.array() - logits.maxCoeff()).exp().matrix();
  return e / e.sum();
}

void check_label(int label, int classes) {
  if (label < 1 || label > classes) {
    throw PreconditionError("label " + std::to_string(label) +
                            " outside 1.." + std::to_string(classes));
  }
}

std::string stage_name(int e) { return "SMAE " + std::to_string(e); }

// Prefixes numerical failures with the layer they surfaced in.
template <typename Fn>
auto named(const std::string& layer, Fn&& fn) {
  try {
    return fn();
  } catch (const NumericalError& e) {
    throw NumericalError(layer + ": " + e.what());
  }
}

}  // namespace

HeadForward head_fwd(const SpdMatrix& h, const ClassifierHead& head) {
  if (head.weight.cols() != static_cast<Eigen::Index>(h.dim()) * h.dim() ||
      head.bias.size() != head.weight.rows()) {
    throw DimensionMismatchError("head_fwd: classifier shape mismatch");
  }
  auto lg = logeig_fwd(h);
  Vector logits = head.weight * flatten(lg.out.matrix()) + head.bias;
  return HeadForward{std::move(logits), std::move(lg.out), std::move(lg.tape)};
}

ForwardTrace model_fwd(const SpdMatrix& x, const ModelState& state,
                       const NetworkConfig& config) {
  config.validate();
  check_state(state, config);

  ForwardTrace trace;
  trace.input = x;
  auto bb = backbone_fwd(x, state, config);
  trace.backbone_out = std::move(bb.out);
  trace.backbone_tapes = std::move(bb.tapes);

  int glm_index = -1;
  if (config.attention != AttentionMode::kNone) {
    trace.selection = select_qkv(config.depth);
    glm_index = trace.selection->output_index();
  }

  std::vector<SpdMatrix> hidden;
  SymMatrix stage_input = trace.backbone_out.as_sym();
  for (int e = 1; e <= config.depth; ++e) {
    const SmaeParams& p = state.smae[e - 1];
    StageTrace st;
    auto r = reeig_fwd(stage_input, config.eps);
    st.reeig_tape = std::move(r.tape);
    st.activated = std::move(r.out);
    auto d = bimap_fwd(p.down, st.activated);
    st.down_tape = std::move(d.tape);
    st.hidden = std::move(d.out);
    hidden.push_back(st.hidden);

    st.representation = st.hidden;
    if (e == glm_index) {
      auto g = glm_fwd(config.attention, hidden, *trace.selection);
      trace.attention = std::move(g.tape);
      trace.attention_out = g.out;
      st.representation = std::move(g.out);
    }

    auto head = head_fwd(st.representation, state.heads[e - 1]);
    st.logits = std::move(head.logits);
    st.head_log = std::move(head.log);
    st.head_log_tape = std::move(head.log_tape);

    auto u = bimap_up_fwd(p.up, st.representation);
    st.up_tape = std::move(u.tape);
    st.reconstruction = std::move(u.out);
    stage_input = st.reconstruction;
    trace.stages.push_back(std::move(st));
  }
  return trace;
}

double cross_entropy(const Vector& logits, int label) {
  check_label(label, static_cast<int>(logits.size()));
  const double m = logits.maxCoeff();
  const double lse = m + std::log((logits.array() - m).exp().sum());
  return lse - logits(label - 1);
}

LossBreakdown loss(const ForwardTrace& trace, int label,
                   const NetworkConfig& config) {
  LossBreakdown out;
  for (const auto& st : trace.stages) out.ce += cross_entropy(st.logits, label);
  out.recon = (trace.backbone_out.matrix() - trace.reconstruction().matrix())
                  .squaredNorm();
  out.total = config.lambda1 * out.ce + config.lambda2 * out.recon;
  return out;
}

ModelGrads ModelGrads::zeros_like(const ModelState& state) {
  ModelGrads g;
  for (const auto& w : state.backbone) {
    g.backbone.push_back(Matrix::Zero(w.d_in(), w.d_out()));
  }
  for (const auto& p : state.smae) {
    g.down.push_back(Matrix::Zero(p.down.d_in(), p.down.d_out()));
    g.up.push_back(Matrix::Zero(p.up.d_in(), p.up.d_out()));
  }
  for (const auto& h : state.heads) {
    g.head_weight.push_back(Matrix::Zero(h.weight.rows(), h.weight.cols()));
    g.head_bias.push_back(Vector::Zero(h.bias.size()));
  }
  return g;
}

ModelGrads& ModelGrads::operator+=(const ModelGrads& o) {
  for (std::size_t i = 0; i < backbone.size(); ++i) backbone[i] += o.backbone[i];
  for (std::size_t i = 0; i < down.size(); ++i) down[i] += o.down[i];
  for (std::size_t i = 0; i < up.size(); ++i) up[i] += o.up[i];
  for (std::size_t i = 0; i < head_weight.size(); ++i) {
    head_weight[i] += o.head_weight[i];
    head_bias[i] += o.head_bias[i];
  }
  return *this;
}

ModelGrads& ModelGrads::operator*=(double s) {
  for (auto& m : backbone) m *= s;
  for (auto& m : down) m *= s;
  for (auto& m : up) m *= s;
  for (auto& m : head_weight) m *= s;
  for (auto& v : head_bias) v *= s;
  return *this;
}

double ModelGrads::dot(const ModelGrads& o) const {
  double acc = 0.0;
  for (std::size_t i = 0; i < backbone.size(); ++i) {
    acc += backbone[i].cwiseProduct(o.backbone[i]).sum();
  }
  for (std::size_t i = 0; i < down.size(); ++i) {
    acc += down[i].cwiseProduct(o.down[i]).sum();
    acc += up[i].cwiseProduct(o.up[i]).sum();
  }
  for (std::size_t i = 0; i < head_weight.size(); ++i) {
    acc += head_weight[i].cwiseProduct(o.head_weight[i]).sum();
    acc += head_bias[i].dot(o.head_bias[i]);
  }
  return acc;
}

ModelGrads model_bwd(ForwardTrace& trace, int label, const ModelState& state,
                     const NetworkConfig& config) {
  if (trace.consumed) {
    throw TapeReuseError("model_bwd: forward trace was already consumed");
  }
  check_label(label, config.classes);
  check_state(state, config);
  trace.consumed = true;

  const EigBackwardOptions eig = config.eig_options();
  const int depth = config.depth;
  const int d = config.smae_down;
  ModelGrads grads = ModelGrads::zeros_like(state);

  const Matrix recon_diff =
      trace.backbone_out.matrix() - trace.reconstruction().matrix();
  const Matrix d_backbone_recon = 2.0 * config.lambda2 * recon_diff;
  Matrix d_next = -2.0 * config.lambda2 * recon_diff;  // dL/dH^_E

  std::vector<Matrix> attention_extra(static_cast<std::size_t>(depth),
                                      Matrix::Zero(d, d));
  const int glm_index =
      trace.selection ? trace.selection->output_index() : -1;

  for (int e = depth; e >= 1; --e) {
    StageTrace& st = trace.stages[e - 1];
    const std::string name = stage_name(e);

    BiMapGrads up = named(name + " up-map BiMap", [&] {
      BiMapGrads g = bimap_bwd(st.up_tape, d_next);
      require_finite(g.dw, "weight gradient");
      return g;
    });
    grads.up[e - 1] = up.dw;
    Matrix d_rep = up.dx;

    // Cross-entropy head: dL/dlogits = lambda1 (softmax - onehot)
    Vector d_logits = softmax(st.logits);
    d_logits(label - 1) -= 1.0;
    d_logits *= config.lambda1;
    named(name + " FC head", [&] {
      require_finite(d_logits, "logit gradient");
      return 0;
    });
    grads.head_weight[e - 1] = d_logits * flatten(st.head_log.matrix()).transpose();
    grads.head_bias[e - 1] = d_logits;
    const Vector d_flat = state.heads[e - 1].weight.transpose() * d_logits;
    const Matrix d_log = Eigen::Map<const Matrix>(d_flat.data(), d, d);
    d_rep += named(name + " head LogEig", [&] {
      return logeig_bwd(st.head_log_tape, sym(d_log), eig);
    });

    Matrix d_hidden;
    if (e == glm_index) {
      std::vector<Matrix> g = named("attention module", [&] {
        return glm_bwd(*trace.attention, d_rep, config.grad_modes());
      });
      for (int i = 0; i + 1 < glm_index; ++i) attention_extra[i] += g[i];
      d_hidden = g[glm_index - 1];
    } else {
      d_hidden = d_rep + attention_extra[e - 1];
    }

    BiMapGrads down = named(name + " down-map BiMap", [&] {
      BiMapGrads g = bimap_bwd(st.down_tape, d_hidden);
      require_finite(g.dw, "weight gradient");
      return g;
    });
    grads.down[e - 1] = down.dw;
    d_next = named(name + " ReEig", [&] {
      Matrix g = reeig_bwd(st.reeig_tape, down.dx, eig);
      require_finite(g, "input gradient");
      return g;
    });
  }

  Matrix d_x = d_next + d_backbone_recon;
  int bimap = static_cast<int>(state.backbone.size());
  int reeig = bimap - 1;
  for (auto it = trace.backbone_tapes.rbegin();
       it != trace.backbone_tapes.rend(); ++it) {
    if (it->kind == LayerKind::kReEig) {
      d_x = named("backbone ReEig " + std::to_string(reeig--), [&] {
        Matrix g = reeig_bwd(*it, d_x, eig);
        require_finite(g, "input gradient");
        return g;
      });
    } else {
      BiMapGrads g = named("backbone BiMap " + std::to_string(bimap), [&] {
        BiMapGrads b = bimap_bwd(*it, d_x);
        require_finite(b.dw, "weight gradient");
        return b;
      });
      grads.backbone[--bimap] = g.dw;
      d_x = g.dx;
    }
  }
  return grads;
}

int predict(const ForwardTrace& trace) {
  Eigen::Index best = 0;
  trace.stages.back().logits.maxCoeff(&best);
  return static_cast<int>(best) + 1;
}

int predict(const SpdMatrix& x, const ModelState& state,
            const NetworkConfig& config) {
  return predict(model_fwd(x, state, config));
}

int layer_count(const NetworkConfig& config) {
  constexpr int kLayersPerStage = 10;
  constexpr int kStageOffset = -3;
  int count = kLayersPerStage * config.depth + kStageOffset;
  if (config.attention != AttentionMode::kNone) {
    const QkvSelection sel = select_qkv(config.depth);
    const int keys = static_cast<int>(sel.keys.size());
    const int values = static_cast<int>(sel.values.size());
    count += 2 * keys + values + 3;
  }
  return count;
}

int op_count(const NetworkConfig& config) {
  const int bimaps = static_cast<int>(config.backbone.size());
  int count = 2 * bimaps - 1;
  // ReEig, BiMap down, BiMap up, LogEig, FC, cross-entropy
  count += 6 * config.depth;
  count += 1;  // reconstruction term
  if (config.attention != AttentionMode::kNone) {
    const QkvSelection sel = select_qkv(config.depth);
    count += 2 * static_cast<int>(sel.keys.size()) +
             static_cast<int>(sel.values.size()) + 3;
  }
  return count;
}

}  // namespace spdnet
