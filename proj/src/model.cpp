#include "casif/model.hpp"

#include <algorithm>
#include <cassert>
#include <cmath>
#include <limits>

#include <fmt/format.h>

#include "casif/error.hpp"
#include "casif/rng.hpp"

namespace casif {
namespace {

constexpr std::array<std::string_view, kNumParams> kParamNames = {
    "embedding",     "in_weight",     "out_weight",    "in_bias_pre",   "out_bias_pre",
    "in_bias_post",  "out_bias_post", "update_gate_w", "reset_gate_w",  "candidate_w",
    "update_gate_p", "reset_gate_p",  "candidate_p",   "attn_query",    "attn_item_w",
    "attn_last_w",   "attn_mean_w",   "attn_bias",     "general_mlp_w", "current_mlp_w",
    "general_mlp_b", "current_mlp_b", "simple_attn_w", "simple_attn_b",
};

std::array<std::pair<std::size_t, std::size_t>, kNumParams> param_shapes(std::size_t num_items,
                                                                          std::size_t d,
                                                                          Variant variant) {
  const std::pair<std::size_t, std::size_t> sq{d, d};
  const std::pair<std::size_t, std::size_t> bias{1, d};
  const std::pair<std::size_t, std::size_t> tall{2 * d, d};
  const bool simple = variant == Variant::kCasifS;
  return {{
      {num_items, d}, sq, sq, bias, bias, bias, bias,         // embedding, propagation
      tall, tall, tall, sq, sq, sq,                            // gates
      bias, sq, sq, sq, bias,                                  // attention
      sq, sq, bias, bias,                                      // interest MLPs
      simple ? sq : std::pair<std::size_t, std::size_t>{0, 0}, // ablation attention
      simple ? bias : std::pair<std::size_t, std::size_t>{0, 0},
  }};
}

// X * W + 1 b^T
Matrix affine_rows(const Matrix& x, const Matrix& w, const Matrix& b) {
  Matrix out = matmul(x, w);
  for (std::size_t i = 0; i < out.rows(); ++i) {
    axpy(1.0, b.row(0), out.row(i));
  }
  return out;
}

Vector add_vectors(std::span<const double> a, std::span<const double> b) {
  Vector out(a.begin(), a.end());
  axpy(1.0, b, out);
  return out;
}

void add_into(std::span<double> dst, std::span<const double> src) { axpy(1.0, src, dst); }

GnnStepTrace ggnn_step(const SessionGraph& g, const Matrix& state, const ParamSet& p) {
  const std::size_t q = state.rows();
  const std::size_t d = state.cols();
  GnnStepTrace st;
  st.state = state;

  const Matrix in_agg = matmul(g.m_in, affine_rows(state, p[Param::kInWeight], p[Param::kInBiasPre]));
  const Matrix out_agg =
      matmul(g.m_out, affine_rows(state, p[Param::kOutWeight], p[Param::kOutBiasPre]));
  st.message = Matrix(q, 2 * d);
  for (std::size_t i = 0; i < q; ++i) {
    for (std::size_t j = 0; j < d; ++j) {
      st.message(i, j) = in_agg(i, j) + p[Param::kInBiasPost][j];
      st.message(i, d + j) = out_agg(i, j) + p[Param::kOutBiasPost][j];
    }
  }

  const Matrix z_pre = matmul(st.message, p[Param::kUpdateGateW]);
  const Matrix z_rec = matmul(state, p[Param::kUpdateGateP]);
  const Matrix r_pre = matmul(st.message, p[Param::kResetGateW]);
  const Matrix r_rec = matmul(state, p[Param::kResetGateP]);
  st.update = Matrix(q, d);
  st.reset = Matrix(q, d);
  Matrix gated_state(q, d);
  for (std::size_t k = 0; k < q * d; ++k) {
    st.update[k] = sigmoid(z_pre[k] + z_rec[k]);
    st.reset[k] = sigmoid(r_pre[k] + r_rec[k]);
    gated_state[k] = st.reset[k] * state[k];
  }
  const Matrix h_pre = matmul(st.message, p[Param::kCandidateW]);
  const Matrix h_rec = matmul(gated_state, p[Param::kCandidateP]);
  st.candidate = Matrix(q, d);
  for (std::size_t k = 0; k < q * d; ++k) {
    st.candidate[k] = std::tanh(h_pre[k] + h_rec[k]);
  }
  return st;
}

Matrix gru_output(const GnnStepTrace& st) {
  Matrix out(st.state.rows(), st.state.cols());
  for (std::size_t k = 0; k < out.size(); ++k) {
    out[k] = (1.0 - st.update[k]) * st.state[k] + st.update[k] * st.candidate[k];
  }
  return out;
}

template <typename Index>
Matrix gather_rows(const Matrix& source, const std::vector<Index>& rows) {
  Matrix out(rows.size(), source.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto src = source.row(rows[i]);
    std::copy(src.begin(), src.end(), out.row(i).begin());
  }
  return out;
}

AttentionResult attend(const Matrix& pos, const Vector& shared_pre, const Matrix& item_w,
                       const Matrix& query) {
  const std::size_t n = pos.rows();
  const std::size_t d = pos.cols();
  AttentionResult res;
  res.gates = Matrix(n, d);
  res.alpha.assign(n, 0.0);
  res.attended.assign(d, 0.0);
  for (std::size_t t = 0; t < n; ++t) {
    const Vector pre = add_vectors(vecmat(pos.row(t), item_w), shared_pre);
    auto gate = res.gates.row(t);
    for (std::size_t j = 0; j < d; ++j) {
      gate[j] = sigmoid(pre[j]);
    }
    res.alpha[t] = dot(query.row(0), gate);
  }
  for (std::size_t t = 0; t < n; ++t) {
    axpy(res.alpha[t], pos.row(t), res.attended);
  }
  return res;
}

Vector tanh_affine(std::span<const double> x, const Matrix& w, const Matrix& b) {
  Vector y = vecmat(x, w);
  for (std::size_t j = 0; j < y.size(); ++j) {
    y[j] = std::tanh(y[j] + b[j]);
  }
  return y;
}

// log(1 - p_i) and p_i / (1 - p_i) for a softmax entry, given the shifted
// exponentials and their sum. The complement is summed directly when p_i is
// large so that it keeps full relative precision.
struct Complement {
  double log_one_minus;
  double odds;
};

Complement softmax_complement(std::span<const double> shifted_exp, double total, std::size_t i) {
  const double p = shifted_exp[i] / total;
  if (p < 0.5) {
    return {std::log1p(-p), p / (1.0 - p)};
  }
  double rest = 0.0;
  for (std::size_t j = 0; j < shifted_exp.size(); ++j) {
    if (j != i) {
      rest += shifted_exp[j];
    }
  }
  return {std::log(rest) - std::log(total), shifted_exp[i] / rest};
}

// Neumaier's compensated summation.
class CompensatedSum {
 public:
  void add(double x) {
    const double t = sum_ + x;
    if (std::abs(sum_) >= std::abs(x)) {
      compensation_ += (sum_ - t) + x;
    } else {
      compensation_ += (x - t) + sum_;
    }
    sum_ = t;
  }
  double value() const { return sum_ + compensation_; }

 private:
  double sum_ = 0.0;
  double compensation_ = 0.0;
};

struct SoftmaxParts {
  double max = 0.0;
  double total = 0.0;
  double log_total = 0.0;  // log1p of the non-max terms, positive even when they are tiny
  Vector shifted_exp;
};

SoftmaxParts softmax_parts(std::span<const double> logits) {
  SoftmaxParts s;
  const auto top = std::max_element(logits.begin(), logits.end()) - logits.begin();
  s.max = logits[static_cast<std::size_t>(top)];
  s.shifted_exp.resize(logits.size());
  CompensatedSum rest;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    s.shifted_exp[i] = std::exp(logits[i] - s.max);
    if (i != static_cast<std::size_t>(top)) {
      rest.add(s.shifted_exp[i]);
    }
  }
  s.total = 1.0 + rest.value();
  s.log_total = std::log1p(rest.value());
  return s;
}

}  // namespace

void HyperParams::validate() const {
  if (dim < 1) {
    throw ConfigError("embedding dimension must be at least 1");
  }
  if (gnn_steps < 1) {
    throw ConfigError("gnn_steps must be at least 1");
  }
}

std::string_view to_string(Variant v) { return v == Variant::kCasif ? "casif" : "casif_s"; }
std::string_view to_string(LossVariant v) {
  return v == LossVariant::kEq13 ? "eq13" : "softmax_ce";
}
std::string_view to_string(CurrentInterestInput v) {
  return v == CurrentInterestInput::kLastItem ? "h_n" : "c_a";
}

Variant parse_variant(std::string_view text) {
  if (text == "casif") return Variant::kCasif;
  if (text == "casif_s") return Variant::kCasifS;
  throw ConfigError(fmt::format("unknown variant '{}' (expected casif | casif_s)", text));
}

LossVariant parse_loss_variant(std::string_view text) {
  if (text == "eq13") return LossVariant::kEq13;
  if (text == "softmax_ce") return LossVariant::kSoftmaxCe;
  throw ConfigError(fmt::format("unknown loss variant '{}' (expected eq13 | softmax_ce)", text));
}

CurrentInterestInput parse_current_input(std::string_view text) {
  if (text == "h_n") return CurrentInterestInput::kLastItem;
  if (text == "c_a") return CurrentInterestInput::kGlobalInterest;
  throw ConfigError(fmt::format("unknown eq10_input '{}' (expected h_n | c_a)", text));
}

std::string_view param_name(Param p) { return kParamNames[static_cast<std::size_t>(p)]; }

ParamSet::ParamSet(std::size_t num_items, const HyperParams& hp)
    : num_items_(num_items), dim_(hp.dim), variant_(hp.variant) {
  const auto shapes = param_shapes(num_items, hp.dim, hp.variant);
  for (std::size_t i = 0; i < kNumParams; ++i) {
    tensors_[i] = Matrix(shapes[i].first, shapes[i].second);
  }
}

std::size_t ParamSet::total_size() const {
  std::size_t n = 0;
  for (const auto& t : tensors_) {
    n += t.size();
  }
  return n;
}

ParamSet ParamSet::zeros_like() const {
  ParamSet out = *this;
  for (auto& t : out.tensors_) {
    t.fill(0.0);
  }
  return out;
}

void ParamSet::add(const ParamSet& other) {
  assert(same_shape(other));
  for (std::size_t i = 0; i < kNumParams; ++i) {
    axpy(1.0, other.tensors_[i].flat(), tensors_[i].flat());
  }
}

bool ParamSet::same_shape(const ParamSet& other) const {
  for (std::size_t i = 0; i < kNumParams; ++i) {
    if (!tensors_[i].same_shape(other.tensors_[i])) {
      return false;
    }
  }
  return true;
}

ParamSet init_params(std::size_t num_items, const HyperParams& hp, std::uint64_t seed) {
  if (num_items < 1) {
    throw ArgumentError("init_params: num_items must be at least 1");
  }
  hp.validate();
  ParamSet params(num_items, hp);
  Rng rng(seed, Stream::kInit);
  for (std::size_t i = 0; i < kNumParams; ++i) {
    for (double& v : params.at(i).flat()) {
      v = rng.gaussian(0.0, 0.1);
    }
  }
  return params;
}

Matrix ggnn_forward(const SessionGraph& graph, const ParamSet& params, const HyperParams& hp) {
  hp.validate();
  Matrix state = gather_rows(params[Param::kEmbedding], graph.nodes);
  for (std::size_t s = 0; s < hp.gnn_steps; ++s) {
    state = gru_output(ggnn_step(graph, state, params));
  }
  return state;
}

Vector session_mean_pool(const Matrix& position_latents) {
  const std::size_t n = position_latents.rows();
  Vector mean(position_latents.cols(), 0.0);
  for (std::size_t t = 0; t < n; ++t) {
    add_into(mean, position_latents.row(t));
  }
  for (double& v : mean) {
    v /= static_cast<double>(n);
  }
  return mean;
}

AttentionResult attention_global_interest(const Matrix& position_latents,
                                          std::span<const double> last,
                                          std::span<const double> session_mean,
                                          const ParamSet& params) {
  Vector shared = add_vectors(vecmat(last, params[Param::kAttnLastW]),
                              vecmat(session_mean, params[Param::kAttnMeanW]));
  add_into(shared, params[Param::kAttnBias].row(0));
  return attend(position_latents, shared, params[Param::kAttnItemW], params[Param::kAttnQuery]);
}

AttentionResult casif_s_attention(const Matrix& position_latents, const ParamSet& params) {
  if (params.variant() != Variant::kCasifS) {
    throw ArgumentError("casif_s_attention requires casif_s parameters");
  }
  const auto bias = params[Param::kSimpleAttnB].row(0);
  return attend(position_latents, Vector(bias.begin(), bias.end()), params[Param::kSimpleAttnW],
                params[Param::kAttnQuery]);
}

InterestResult interest_mlp(std::span<const double> global_interest, std::span<const double> last,
                            const ParamSet& params, const HyperParams& hp) {
  const auto current_in =
      hp.current_input == CurrentInterestInput::kLastItem ? last : global_interest;
  return {tanh_affine(global_interest, params[Param::kGeneralMlpW], params[Param::kGeneralMlpB]),
          tanh_affine(current_in, params[Param::kCurrentMlpW], params[Param::kCurrentMlpB])};
}

ScoreResult score_query(std::span<const double> query, const Matrix& embedding) {
  ScoreResult res;
  res.logits = matvec(embedding, query);
  const auto parts = softmax_parts(res.logits);
  res.probs.resize(res.logits.size());
  for (std::size_t i = 0; i < res.probs.size(); ++i) {
    res.probs[i] = parts.shifted_exp[i] / parts.total;
  }
  return res;
}

ScoreResult score_and_predict(std::span<const double> general, std::span<const double> current,
                              const Matrix& embedding) {
  Vector query(general.size());
  for (std::size_t j = 0; j < query.size(); ++j) {
    query[j] = general[j] * current[j];
  }
  return score_query(query, embedding);
}

double loss(std::span<const double> probs, ItemIndex label, LossVariant variant) {
  assert(label < probs.size());
  double l = -std::log(probs[label]);
  if (variant == LossVariant::kEq13) {
    for (std::size_t i = 0; i < probs.size(); ++i) {
      if (i != label) {
        l -= std::log1p(-probs[i]);
      }
    }
  }
  return l;
}

double loss_from_logits(std::span<const double> logits, ItemIndex label, LossVariant variant) {
  assert(label < logits.size());
  const auto parts = softmax_parts(logits);
  // The eq13 sum has |V| terms; compensated summation keeps its rounding
  // error near one ulp, which finite-difference checks depend on.
  CompensatedSum l;
  l.add(-(logits[label] - parts.max));
  l.add(parts.log_total);
  if (variant == LossVariant::kEq13) {
    for (std::size_t i = 0; i < logits.size(); ++i) {
      if (i != label) {
        l.add(-softmax_complement(parts.shifted_exp, parts.total, i).log_one_minus);
      }
    }
  }
  return l.value();
}

Vector loss_gradient(std::span<const double> logits, std::span<const double> probs, ItemIndex label,
                     LossVariant variant) {
  Vector grad(probs.begin(), probs.end());
  grad[label] -= 1.0;
  if (variant == LossVariant::kEq13) {
    // d/dz_k of -sum_{i != label} log(1 - p_i) = [k != label] odds_k - p_k * sum_{i != label} odds_i
    const auto parts = softmax_parts(logits);
    Vector odds(probs.size(), 0.0);
    double odds_sum = 0.0;
    for (std::size_t i = 0; i < probs.size(); ++i) {
      if (i != label) {
        odds[i] = softmax_complement(parts.shifted_exp, parts.total, i).odds;
        odds_sum += odds[i];
      }
    }
    for (std::size_t k = 0; k < probs.size(); ++k) {
      grad[k] += odds[k] - probs[k] * odds_sum;
    }
  }
  return grad;
}

namespace {

// Forward pass up to the logits.
ForwardTrace forward_scores(std::span<const ItemIndex> prefix, const ParamSet& params,
                            const HyperParams& hp) {
  hp.validate();
  if (params.variant() != hp.variant || params.dim() != hp.dim) {
    throw ArgumentError("parameter shapes do not match hyperparameters");
  }
  for (const auto item : prefix) {
    if (item >= params.num_items()) {
      throw ArgumentError(fmt::format("item index {} out of range [0, {})", item, params.num_items()));
    }
  }
  ForwardTrace tr;
  tr.graph = build_session_graph(prefix);

  Matrix state = gather_rows(params[Param::kEmbedding], tr.graph.nodes);
  tr.steps.reserve(hp.gnn_steps);
  for (std::size_t s = 0; s < hp.gnn_steps; ++s) {
    tr.steps.push_back(ggnn_step(tr.graph, state, params));
    state = gru_output(tr.steps.back());
  }
  tr.node_latents = std::move(state);
  tr.position_latents = gather_rows(tr.node_latents, tr.graph.alias);

  const std::size_t n = tr.position_latents.rows();
  const auto last = tr.position_latents.row(n - 1);
  if (hp.variant == Variant::kCasif) {
    tr.session_mean = session_mean_pool(tr.position_latents);
    tr.attention = attention_global_interest(tr.position_latents, last, tr.session_mean, params);
    tr.interest = interest_mlp(tr.attention.attended, last, params, hp);
    tr.query.resize(hp.dim);
    for (std::size_t j = 0; j < hp.dim; ++j) {
      tr.query[j] = tr.interest.general[j] * tr.interest.current[j];
    }
  } else {
    tr.attention = casif_s_attention(tr.position_latents, params);
    tr.query = tr.attention.attended;
  }
  tr.scores = score_query(tr.query, params[Param::kEmbedding]);
  return tr;
}

// Backpropagates d loss / d attention output and the explicit extra
// gradients on the last position and session mean into position latents.
void attention_backward(const ForwardTrace& tr, std::span<const double> d_attended,
                        const ParamSet& params, bool simple, ParamSet& g, Matrix& d_pos,
                        Vector& d_last, Vector& d_mean) {
  const Matrix& pos = tr.position_latents;
  const std::size_t n = pos.rows();
  const std::size_t d = pos.cols();
  const auto query = params[Param::kAttnQuery].row(0);
  const Matrix& item_w = simple ? params[Param::kSimpleAttnW] : params[Param::kAttnItemW];
  Matrix& d_item_w = simple ? g[Param::kSimpleAttnW] : g[Param::kAttnItemW];
  Matrix& d_bias = simple ? g[Param::kSimpleAttnB] : g[Param::kAttnBias];

  Matrix d_pre(n, d);
  for (std::size_t t = 0; t < n; ++t) {
    const double d_alpha = dot(d_attended, pos.row(t));
    axpy(tr.attention.alpha[t], d_attended, d_pos.row(t));
    const auto gate = tr.attention.gates.row(t);
    axpy(d_alpha, gate, g[Param::kAttnQuery].row(0));
    auto dp = d_pre.row(t);
    for (std::size_t j = 0; j < d; ++j) {
      dp[j] = d_alpha * query[j] * gate[j] * (1.0 - gate[j]);
    }
  }
  Vector d_pre_sum(d, 0.0);
  for (std::size_t t = 0; t < n; ++t) {
    const auto dp = d_pre.row(t);
    add_outer(pos.row(t), dp, d_item_w);
    add_into(d_pos.row(t), matvec(item_w, dp));
    add_into(d_pre_sum, dp);
  }
  add_into(d_bias.row(0), d_pre_sum);
  if (!simple) {
    const auto last = pos.row(n - 1);
    add_outer(last, d_pre_sum, g[Param::kAttnLastW]);
    add_into(d_last, matvec(params[Param::kAttnLastW], d_pre_sum));
    add_outer(tr.session_mean, d_pre_sum, g[Param::kAttnMeanW]);
    add_into(d_mean, matvec(params[Param::kAttnMeanW], d_pre_sum));
  }
}

// Backward through one propagation step; returns d loss / d input state.
Matrix ggnn_step_backward(const SessionGraph& graph, const GnnStepTrace& st, const Matrix& d_out,
                          const ParamSet& p, ParamSet& g) {
  const std::size_t q = st.state.rows();
  const std::size_t d = st.state.cols();
  Matrix d_state(q, d);
  Matrix d_update_pre(q, d);
  Matrix d_cand_pre(q, d);
  for (std::size_t k = 0; k < q * d; ++k) {
    const double z = st.update[k];
    const double h = st.candidate[k];
    d_state[k] = d_out[k] * (1.0 - z);
    d_update_pre[k] = d_out[k] * (h - st.state[k]) * z * (1.0 - z);
    d_cand_pre[k] = d_out[k] * z * (1.0 - h * h);
  }

  Matrix gated_state(q, d);
  for (std::size_t k = 0; k < q * d; ++k) {
    gated_state[k] = st.reset[k] * st.state[k];
  }
  add_matmul_at_b(st.message, d_cand_pre, g[Param::kCandidateW]);
  add_matmul_at_b(gated_state, d_cand_pre, g[Param::kCandidateP]);
  Matrix d_message = matmul_a_bt(d_cand_pre, p[Param::kCandidateW]);
  const Matrix d_gated = matmul_a_bt(d_cand_pre, p[Param::kCandidateP]);
  Matrix d_reset_pre(q, d);
  for (std::size_t k = 0; k < q * d; ++k) {
    const double r = st.reset[k];
    d_state[k] += d_gated[k] * r;
    d_reset_pre[k] = d_gated[k] * st.state[k] * r * (1.0 - r);
  }

  add_matmul_at_b(st.message, d_update_pre, g[Param::kUpdateGateW]);
  add_matmul_at_b(st.state, d_update_pre, g[Param::kUpdateGateP]);
  add_matmul_at_b(st.message, d_reset_pre, g[Param::kResetGateW]);
  add_matmul_at_b(st.state, d_reset_pre, g[Param::kResetGateP]);
  const Matrix dm_z = matmul_a_bt(d_update_pre, p[Param::kUpdateGateW]);
  const Matrix dm_r = matmul_a_bt(d_reset_pre, p[Param::kResetGateW]);
  const Matrix ds_z = matmul_a_bt(d_update_pre, p[Param::kUpdateGateP]);
  const Matrix ds_r = matmul_a_bt(d_reset_pre, p[Param::kResetGateP]);
  for (std::size_t k = 0; k < q * 2 * d; ++k) {
    d_message[k] += dm_z[k] + dm_r[k];
  }
  for (std::size_t k = 0; k < q * d; ++k) {
    d_state[k] += ds_z[k] + ds_r[k];
  }

  // message = [M_in (S W_in + b_in_pre) + b_in_post | M_out (S W_out + b_out_pre) + b_out_post]
  struct Half {
    const Matrix& adjacency;
    Param weight, bias_pre, bias_post;
    std::size_t offset;
  };
  for (const Half& half : {Half{graph.m_in, Param::kInWeight, Param::kInBiasPre, Param::kInBiasPost, 0},
                           Half{graph.m_out, Param::kOutWeight, Param::kOutBiasPre,
                                Param::kOutBiasPost, d}}) {
    Matrix d_agg(q, d);
    for (std::size_t i = 0; i < q; ++i) {
      for (std::size_t j = 0; j < d; ++j) {
        d_agg(i, j) = d_message(i, half.offset + j);
      }
      add_into(g[half.bias_post].row(0), d_agg.row(i));
    }
    Matrix d_affine(q, d);
    add_matmul_at_b(half.adjacency, d_agg, d_affine);
    add_matmul_at_b(st.state, d_affine, g[half.weight]);
    for (std::size_t i = 0; i < q; ++i) {
      add_into(g[half.bias_pre].row(0), d_affine.row(i));
    }
    const Matrix ds = matmul_a_bt(d_affine, p[half.weight]);
    add_into(d_state.flat(), ds.flat());
  }
  return d_state;
}

}  // namespace

ForwardTrace forward(const PrefixExample& example, const ParamSet& params, const HyperParams& hp) {
  if (example.label >= params.num_items()) {
    throw ArgumentError(fmt::format("label {} out of range [0, {})", example.label, params.num_items()));
  }
  ForwardTrace tr = forward_scores(example.prefix, params, hp);
  tr.label = example.label;
  tr.loss = loss_from_logits(tr.scores.logits, tr.label, hp.loss);
  return tr;
}

Vector score_prefix(std::span<const ItemIndex> prefix, const ParamSet& params, const HyperParams& hp) {
  return forward_scores(prefix, params, hp).scores.logits;
}

ExampleGradient example_backward(const ForwardTrace& tr, const ParamSet& params,
                                 const HyperParams& hp) {
  ExampleGradient out;
  example_backward(tr, params, hp, out);
  return out;
}

void example_backward(const ForwardTrace& tr, const ParamSet& params, const HyperParams& hp,
                      ExampleGradient& out) {
  const std::size_t d = hp.dim;
  const std::size_t n = tr.position_latents.rows();
  out.loss = tr.loss;
  const bool reusable = out.dense.num_items() == params.num_items() &&
                        out.dense.dim() == params.dim() && out.dense.variant() == params.variant();
  if (reusable) {
    for (std::size_t i = 0; i < kNumParams; ++i) {
      out.dense.at(i).fill(0.0);
    }
  } else {
    out.dense = params.zeros_like();
    out.dense[Param::kEmbedding] = Matrix();
  }
  ParamSet& g = out.dense;

  out.candidate_coef = loss_gradient(tr.scores.logits, tr.scores.probs, tr.label, hp.loss);
  out.candidate_query = tr.query;
  const Vector d_query = vecmat(out.candidate_coef, params[Param::kEmbedding]);

  Matrix d_pos(n, d);
  Vector d_last(d, 0.0);
  Vector d_mean(d, 0.0);
  if (hp.variant == Variant::kCasif) {
    const auto& a_s = tr.interest.general;
    const auto& a_t = tr.interest.current;
    Vector d_gen_pre(d), d_cur_pre(d);
    for (std::size_t j = 0; j < d; ++j) {
      d_gen_pre[j] = d_query[j] * a_t[j] * (1.0 - a_s[j] * a_s[j]);
      d_cur_pre[j] = d_query[j] * a_s[j] * (1.0 - a_t[j] * a_t[j]);
    }
    const auto& global = tr.attention.attended;
    const auto last = tr.position_latents.row(n - 1);
    add_outer(global, d_gen_pre, g[Param::kGeneralMlpW]);
    add_into(g[Param::kGeneralMlpB].row(0), d_gen_pre);
    Vector d_global = matvec(params[Param::kGeneralMlpW], d_gen_pre);
    const Vector d_cur_in = matvec(params[Param::kCurrentMlpW], d_cur_pre);
    if (hp.current_input == CurrentInterestInput::kLastItem) {
      add_outer(last, d_cur_pre, g[Param::kCurrentMlpW]);
      add_into(d_last, d_cur_in);
    } else {
      add_outer(global, d_cur_pre, g[Param::kCurrentMlpW]);
      add_into(d_global, d_cur_in);
    }
    add_into(g[Param::kCurrentMlpB].row(0), d_cur_pre);

    attention_backward(tr, d_global, params, false, g, d_pos, d_last, d_mean);
    add_into(d_pos.row(n - 1), d_last);
    for (std::size_t t = 0; t < n; ++t) {
      axpy(1.0 / static_cast<double>(n), d_mean, d_pos.row(t));
    }
  } else {
    attention_backward(tr, d_query, params, true, g, d_pos, d_last, d_mean);
  }

  Matrix d_state(tr.node_latents.rows(), d);
  for (std::size_t t = 0; t < n; ++t) {
    add_into(d_state.row(tr.graph.alias[t]), d_pos.row(t));
  }
  for (std::size_t s = tr.steps.size(); s-- > 0;) {
    d_state = ggnn_step_backward(tr.graph, tr.steps[s], d_state, params, g);
  }
  out.lookup_items = tr.graph.nodes;
  out.lookup_grad = std::move(d_state);
}

void accumulate(const ExampleGradient& grad, ParamSet& acc) {
  for (std::size_t i = 0; i < kNumParams; ++i) {
    if (static_cast<Param>(i) == Param::kEmbedding) {
      continue;
    }
    axpy(1.0, grad.dense.at(i).flat(), acc.at(i).flat());
  }
  Matrix& emb = acc[Param::kEmbedding];
  for (std::size_t i = 0; i < emb.rows(); ++i) {
    axpy(grad.candidate_coef[i], grad.candidate_query, emb.row(i));
  }
  for (std::size_t k = 0; k < grad.lookup_items.size(); ++k) {
    axpy(1.0, grad.lookup_grad.row(k), emb.row(grad.lookup_items[k]));
  }
}

ParamSet backward(const ForwardTrace& trace, const ParamSet& params, const HyperParams& hp) {
  ParamSet grads = params.zeros_like();
  accumulate(example_backward(trace, params, hp), grads);
  return grads;
}

double l2_penalty(const ParamSet& params, double lambda) {
  double sum = 0.0;
  for (std::size_t i = 0; i < kNumParams; ++i) {
    for (const double v : params.at(i).flat()) {
      sum += v * v;
    }
  }
  return lambda * sum;
}

void add_l2_gradient(const ParamSet& params, double lambda, ParamSet& grads) {
  for (std::size_t i = 0; i < kNumParams; ++i) {
    axpy(2.0 * lambda, params.at(i).flat(), grads.at(i).flat());
  }
}

Vector central_differences(std::span<double> x, const std::function<double()>& f, double h) {
  Vector grad(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double saved = x[i];
    x[i] = saved + h;
    const double plus = f();
    x[i] = saved - h;
    const double minus = f();
    x[i] = saved;
    grad[i] = (plus - minus) / (2.0 * h);
  }
  return grad;
}

ParamSet finite_difference_grad(const PrefixExample& example, const ParamSet& params,
                                const HyperParams& hp, double h) {
  ParamSet probe = params;
  ParamSet grads = params.zeros_like();
  const auto objective = [&] { return forward(example, probe, hp).loss; };
  for (std::size_t i = 0; i < kNumParams; ++i) {
    const Vector g = central_differences(probe.at(i).flat(), objective, h);
    std::copy(g.begin(), g.end(), grads.at(i).flat().begin());
  }
  return grads;
}

}  // namespace casif
