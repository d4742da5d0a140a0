#include "spdnet/attention.hpp"

#include "spdnet/errors.hpp"

#include <cmath>
#include <sstream>

namespace spdnet {

const char* to_string(AttentionMode mode) {
  switch (mode) {
    case AttentionMode::kNone: return "none";
    case AttentionMode::kSmsa: return "smsa";
    case AttentionMode::kEusa: return "eusa";
  }
  return "?";
}

const char* to_string(GradMode mode) {
  return mode == GradMode::kExact ? "exact" : "paper";
}

AttentionMode parse_attention_mode(const std::string& s) {
  if (s == "none") return AttentionMode::kNone;
  if (s == "smsa") return AttentionMode::kSmsa;
  if (s == "eusa") return AttentionMode::kEusa;
  throw ConfigError("attention: expected one of smsa|eusa|none, got '" + s +
                    "'");
}

GradMode parse_grad_mode(const std::string& s) {
  if (s == "exact") return GradMode::kExact;
  if (s == "paper") return GradMode::kPaper;
  throw ConfigError("grad mode: expected exact|paper, got '" + s + "'");
}

QkvSelection select_qkv(int depth) {
  if (depth < 3) {
    throw PreconditionError("select_qkv: need at least 3 stacked SMAEs, got " +
                            std::to_string(depth));
  }
  if (depth <= 4) {
    throw UnsupportedDepthError(
        "select_qkv: E=" + std::to_string(depth) +
        " cannot host the attention module; the Q/K/V rule needs E > 4 so "
        "that N_W = N_V >= 2 (Q={H1}, K={H2..H_h}, V={H_h+1..H_E-x+1}, "
        "h=(E-x)/2+1, x=1 for odd E, x=2 for even E)");
  }
  QkvSelection sel;
  sel.depth = depth;
  sel.parity_offset = depth % 2 == 1 ? 1 : 2;
  sel.h = (depth - sel.parity_offset) / 2 + 1;
  sel.query = 1;
  for (int k = 2; k <= sel.h; ++k) sel.keys.push_back(k);
  for (int v = sel.h + 1; v <= sel.output_index(); ++v) sel.values.push_back(v);
  return sel;
}

double lem_layer(const SpdMatrix& h1, const SpdMatrix& hj) {
  return lem_distance_sq(h1, hj);
}

namespace {

Matrix spd_inverse(const SpdMatrix& x) {
  const EigenPair& e = x.eig();
  return reconstruct(e.vectors, e.values.cwiseInverse());
}

Matrix log_bwd_at(const SpdMatrix& x, const Matrix& d_log,
                  const EigBackwardOptions& opts) {
  const EigenPair& e = x.eig();
  return eig_function_bwd(e.vectors, e.values, e.values.array().log().matrix(),
                          e.values.cwiseInverse(), d_log, opts);
}

}  // namespace

LemGrads lem_layer_bwd(const SpdMatrix& h1, const SpdMatrix& hj, double grad,
                       GradMode mode, const EigBackwardOptions& opts) {
  if (h1.dim() != hj.dim()) {
    throw DimensionMismatchError("lem_layer_bwd: dimension mismatch");
  }
  const Matrix diff = spd_log(h1).matrix() - spd_log(hj).matrix();
  LemGrads out;
  if (mode == GradMode::kPaper) {
    out.d_query = sym(2.0 * spd_inverse(h1) * diff) * grad;
    out.d_key = sym(-2.0 * spd_inverse(hj) * diff) * grad;
  } else {
    out.d_query = log_bwd_at(h1, 2.0 * grad * diff, opts);
    out.d_key = log_bwd_at(hj, -2.0 * grad * diff, opts);
  }
  return out;
}

double sim_layer(double d) {
  if (!(d >= 0.0)) {
    throw PreconditionError("sim_layer: distance must be non-negative");
  }
  return 1.0 / (1.0 + std::log1p(d));
}

double sim_layer_bwd(double d, double grad) {
  const double denom = 1.0 + std::log1p(d);
  return -1.0 / (denom * denom) * (1.0 / (1.0 + d)) * grad;
}

Vector smx_layer(const Vector& scores) {
  if (scores.size() < 2) {
    throw PreconditionError("smx_layer: need at least two scores");
  }
  if (!scores.allFinite()) {
    throw NumericalError("smx_layer: non-finite score");
  }
  const Vector shifted = scores.array() - scores.maxCoeff();
  const Vector e = shifted.array().exp().matrix();
  return e / e.sum();
}

Vector smx_layer_bwd(const Vector& out, const Vector& grad, GradMode mode) {
  if (out.size() != grad.size()) {
    throw DimensionMismatchError("smx_layer_bwd: length mismatch");
  }
  if (mode == GradMode::kPaper) {
    // exp(a_j) (S - exp(a_j)) / S^2 == s_j (1 - s_j)
    return out.cwiseProduct((Vector::Ones(out.size()) - out))
        .cwiseProduct(grad);
  }
  const double inner = out.dot(grad);
  return out.cwiseProduct((grad.array() - inner).matrix());
}

SymMatrix wts_layer(const Vector& weights, std::span<const SymMatrix> logs) {
  if (static_cast<std::size_t>(weights.size()) != logs.size() || logs.empty()) {
    throw DimensionMismatchError("wts_layer: weight/matrix count mismatch");
  }
  Matrix acc = Matrix::Zero(logs.front().dim(), logs.front().dim());
  for (std::size_t j = 0; j < logs.size(); ++j) {
    if (logs[j].dim() != logs.front().dim()) {
      throw DimensionMismatchError("wts_layer: dimension mismatch");
    }
    acc += weights(static_cast<Eigen::Index>(j)) * logs[j].matrix();
  }
  return SymMatrix::symmetrize(acc);
}

WtsGrads wts_layer_bwd(const Vector& weights, std::span<const SymMatrix> logs,
                       const Matrix& dY) {
  if (static_cast<std::size_t>(weights.size()) != logs.size()) {
    throw DimensionMismatchError("wts_layer_bwd: weight/matrix count mismatch");
  }
  const Matrix g = sym(dY);
  WtsGrads out;
  out.d_weights.resize(weights.size());
  for (std::size_t j = 0; j < logs.size(); ++j) {
    const auto jj = static_cast<Eigen::Index>(j);
    out.d_logs.push_back(weights(jj) * g);
    // trace(L_j G) for symmetric operands
    out.d_weights(jj) = logs[j].matrix().cwiseProduct(g).sum();
  }
  return out;
}

namespace {

void check_hidden(std::span<const SpdMatrix> hidden, const QkvSelection& sel) {
  if (static_cast<int>(hidden.size()) != sel.output_index()) {
    std::ostringstream os;
    os << "attention module: expected " << sel.output_index()
       << " hidden states for E=" << sel.depth << ", got " << hidden.size();
    throw DimensionMismatchError(os.str());
  }
  for (const auto& h : hidden) {
    if (h.dim() != hidden.front().dim()) {
      throw DimensionMismatchError("attention module: hidden dims differ");
    }
  }
}

// SIM + SMX over the raw distances.
void fill_weights(AttentionTape& tape) {
  const Eigen::Index m = tape.distances.size();
  tape.similarities.resize(m);
  for (Eigen::Index j = 0; j < m; ++j) {
    tape.similarities(j) = sim_layer(tape.distances(j));
  }
  tape.weights = smx_layer(tape.similarities);
}

}  // namespace

GlmForward smsa_glm_fwd(std::span<const SpdMatrix> hidden,
                        const QkvSelection& sel) {
  check_hidden(hidden, sel);
  AttentionTape tape;
  tape.mode = AttentionMode::kSmsa;
  tape.selection = sel;
  tape.hidden.assign(hidden.begin(), hidden.end());

  const SpdMatrix& query = hidden[sel.query - 1];
  const Matrix log_query = spd_log(query).matrix();
  tape.distances.resize(sel.n_lem());
  for (std::size_t j = 0; j < sel.keys.size(); ++j) {
    const Matrix log_key = spd_log(hidden[sel.keys[j] - 1]).matrix();
    tape.distances(static_cast<Eigen::Index>(j)) =
        (log_query - log_key).squaredNorm();
  }
  fill_weights(tape);

  for (int v : sel.values) {
    auto [log_v, log_tape] = logeig_fwd(hidden[v - 1]);
    tape.value_logs.push_back(std::move(log_v));
    tape.value_log_tapes.push_back(std::move(log_tape));
  }
  const SymMatrix upsilon = wts_layer(tape.weights, tape.value_logs);
  tape.upsilon = upsilon.matrix();
  auto [out, exp_tape] = expeig_fwd(upsilon);
  tape.exp_tape = std::move(exp_tape);
  return {std::move(out), std::move(tape)};
}

GlmForward eusa_glm_fwd(std::span<const SpdMatrix> hidden,
                        const QkvSelection& sel) {
  check_hidden(hidden, sel);
  AttentionTape tape;
  tape.mode = AttentionMode::kEusa;
  tape.selection = sel;
  tape.hidden.assign(hidden.begin(), hidden.end());

  const Matrix& query = hidden[sel.query - 1].matrix();
  tape.distances.resize(sel.n_lem());
  for (std::size_t j = 0; j < sel.keys.size(); ++j) {
    tape.distances(static_cast<Eigen::Index>(j)) =
        (query - hidden[sel.keys[j] - 1].matrix()).squaredNorm();
  }
  fill_weights(tape);

  Matrix acc = Matrix::Zero(query.rows(), query.cols());
  for (std::size_t j = 0; j < sel.values.size(); ++j) {
    acc += tape.weights(static_cast<Eigen::Index>(j)) *
           hidden[sel.values[j] - 1].matrix();
  }
  tape.upsilon = sym(acc);
  SpdMatrix out(tape.upsilon);
  return {std::move(out), std::move(tape)};
}

GlmForward glm_fwd(AttentionMode mode, std::span<const SpdMatrix> hidden,
                   const QkvSelection& sel) {
  switch (mode) {
    case AttentionMode::kSmsa: return smsa_glm_fwd(hidden, sel);
    case AttentionMode::kEusa: return eusa_glm_fwd(hidden, sel);
    case AttentionMode::kNone: break;
  }
  throw PreconditionError("glm_fwd: attention mode is 'none'");
}

namespace {

// Gradient w.r.t. the raw distances D_1j from a gradient w.r.t. the weights.
Vector distance_grads(const AttentionTape& tape, const Vector& d_weights,
                      GradMode smx_mode) {
  const Vector d_sim = smx_layer_bwd(tape.weights, d_weights, smx_mode);
  Vector d_dist(d_sim.size());
  for (Eigen::Index j = 0; j < d_sim.size(); ++j) {
    d_dist(j) = sim_layer_bwd(tape.distances(j), d_sim(j));
  }
  return d_dist;
}

std::vector<Matrix> smsa_bwd(AttentionTape& tape, const Matrix& d_out,
                             const AttentionGradModes& modes) {
  const QkvSelection& sel = tape.selection;
  const int dim = tape.hidden.front().dim();
  std::vector<Matrix> grads(tape.hidden.size(), Matrix::Zero(dim, dim));

  const Matrix d_upsilon = expeig_bwd(*tape.exp_tape, d_out, modes.eig);
  const WtsGrads wts = wts_layer_bwd(tape.weights, tape.value_logs, d_upsilon);
  for (std::size_t j = 0; j < sel.values.size(); ++j) {
    grads[sel.values[j] - 1] +=
        logeig_bwd(tape.value_log_tapes[j], wts.d_logs[j], modes.eig);
  }

  const Vector d_dist = distance_grads(tape, wts.d_weights, modes.smx);
  const SpdMatrix& query = tape.hidden[sel.query - 1];
  if (modes.lem == GradMode::kPaper) {
    for (std::size_t j = 0; j < sel.keys.size(); ++j) {
      const LemGrads g =
          lem_layer_bwd(query, tape.hidden[sel.keys[j] - 1],
                        d_dist(static_cast<Eigen::Index>(j)), GradMode::kPaper,
                        modes.eig);
      grads[sel.query - 1] += g.d_query;
      grads[sel.keys[j] - 1] += g.d_key;
    }
  } else {
    // The query takes part in every pair: accumulate in the log domain and
    // run a single LogEig backward.
    const Matrix log_query = spd_log(query).matrix();
    Matrix d_log_query = Matrix::Zero(dim, dim);
    for (std::size_t j = 0; j < sel.keys.size(); ++j) {
      const SpdMatrix& key = tape.hidden[sel.keys[j] - 1];
      const Matrix diff = log_query - spd_log(key).matrix();
      const double g = d_dist(static_cast<Eigen::Index>(j));
      d_log_query += 2.0 * g * diff;
      grads[sel.keys[j] - 1] += log_bwd_at(key, -2.0 * g * diff, modes.eig);
    }
    grads[sel.query - 1] += log_bwd_at(query, d_log_query, modes.eig);
  }
  return grads;
}

std::vector<Matrix> eusa_bwd(AttentionTape& tape, const Matrix& d_out,
                             const AttentionGradModes& modes) {
  const QkvSelection& sel = tape.selection;
  const int dim = tape.hidden.front().dim();
  std::vector<Matrix> grads(tape.hidden.size(), Matrix::Zero(dim, dim));
  const Matrix g = sym(d_out);

  Vector d_weights(static_cast<Eigen::Index>(sel.values.size()));
  for (std::size_t j = 0; j < sel.values.size(); ++j) {
    const auto jj = static_cast<Eigen::Index>(j);
    const Matrix& v = tape.hidden[sel.values[j] - 1].matrix();
    grads[sel.values[j] - 1] += tape.weights(jj) * g;
    d_weights(jj) = v.cwiseProduct(g).sum();
  }
  const Vector d_dist = distance_grads(tape, d_weights, modes.smx);
  const Matrix& query = tape.hidden[sel.query - 1].matrix();
  for (std::size_t j = 0; j < sel.keys.size(); ++j) {
    const Matrix diff = query - tape.hidden[sel.keys[j] - 1].matrix();
    const double gj = d_dist(static_cast<Eigen::Index>(j));
    grads[sel.query - 1] += 2.0 * gj * diff;
    grads[sel.keys[j] - 1] -= 2.0 * gj * diff;
  }
  return grads;
}

}  // namespace

std::vector<Matrix> glm_bwd(AttentionTape& tape, const Matrix& d_out,
                            const AttentionGradModes& modes) {
  if (tape.consumed) {
    throw TapeReuseError("attention tape was already consumed");
  }
  if (tape.hidden.empty()) {
    throw PreconditionError("glm_bwd: empty attention tape");
  }
  tape.consumed = true;
  require_finite(d_out, "attention module output gradient");
  std::vector<Matrix> grads = tape.mode == AttentionMode::kSmsa
                                  ? smsa_bwd(tape, d_out, modes)
                                  : eusa_bwd(tape, d_out, modes);
  for (auto& g : grads) {
    g = sym(g);
    require_finite(g, "attention module hidden-state gradient");
  }
  return grads;
}

}  // namespace spdnet

namespace spdnet {

std::vector<Matrix> smsa_glm_bwd(AttentionTape& tape, const Matrix& d_out,
                                 const AttentionGradModes& modes) {
  if (tape.mode != AttentionMode::kSmsa) {
    throw PreconditionError("smsa_glm_bwd: tape was recorded by EuSA");
  }
  return glm_bwd(tape, d_out, modes);
}

std::vector<Matrix> eusa_glm_bwd(AttentionTape& tape, const Matrix& d_out,
                                 const AttentionGradModes& modes) {
  if (tape.mode != AttentionMode::kEusa) {
    throw PreconditionError("eusa_glm_bwd: tape was recorded by SMSA");
  }
  return glm_bwd(tape, d_out, modes);
}

}  // namespace spdnet
