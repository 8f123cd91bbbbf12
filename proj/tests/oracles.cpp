#include "oracles.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

using casif::ItemIndex;
using casif::Param;

namespace oracle {

namespace {

double logistic(double x) { return 1.0 / (1.0 + std::exp(-x)); }

// y_k = sum_l x_l * W[l][k]
Vec apply_transposed(const Mat& w, const Vec& x) {
  Vec y(w.empty() ? 0 : w[0].size(), 0.0);
  for (std::size_t k = 0; k < y.size(); ++k)
    for (std::size_t l = 0; l < x.size(); ++l) y[k] += w[l][k] * x[l];
  return y;
}

}  // namespace

Mat to_mat(const casif::Matrix& m) {
  Mat out(m.rows(), Vec(m.cols()));
  for (std::size_t r = 0; r < m.rows(); ++r)
    for (std::size_t c = 0; c < m.cols(); ++c) out[r][c] = m(r, c);
  return out;
}

Vec to_vec(const casif::Matrix& m) {
  Vec out;
  for (std::size_t r = 0; r < m.rows(); ++r)
    for (std::size_t c = 0; c < m.cols(); ++c) out.push_back(m(r, c));
  return out;
}

std::int64_t civil_to_epoch_ms(int year, int month, int day, int hour, int minute, int second,
                               int millis) {
  // Day count by walking whole years and months from 1970.
  auto leap = [](int y) { return (y % 4 == 0 && y % 100 != 0) || y % 400 == 0; };
  static const int kMonthDays[] = {31, 28, 31, 30, 31, 30, 31, 31, 30, 31, 30, 31};
  std::int64_t days = 0;
  for (int y = 1970; y < year; ++y) days += leap(y) ? 366 : 365;
  for (int y = year; y < 1970; ++y) days -= leap(y) ? 366 : 365;
  for (int m = 1; m < month; ++m) days += kMonthDays[m - 1] + (m == 2 && leap(year) ? 1 : 0);
  days += day - 1;
  return ((days * 24 + hour) * 60 + minute) * 60'000 + second * 1000 + millis;
}

PairGraph pair_count_graph(std::span<const ItemIndex> seq) {
  PairGraph g;
  for (ItemIndex item : seq) {
    auto it = std::find(g.nodes.begin(), g.nodes.end(), item);
    g.alias.push_back(static_cast<std::size_t>(it - g.nodes.begin()));
    if (it == g.nodes.end()) g.nodes.push_back(item);
  }
  const std::size_t q = g.nodes.size();
  g.m_in.assign(q, Vec(q, 0.0));
  g.m_out.assign(q, Vec(q, 0.0));
  for (std::size_t i = 0; i < q; ++i) {
    for (std::size_t j = 0; j < q; ++j) {
      int ij = 0, out_i = 0, ji = 0, in_i = 0;
      for (std::size_t t = 1; t < seq.size(); ++t) {
        const ItemIndex a = seq[t - 1], b = seq[t];
        ij += a == g.nodes[i] && b == g.nodes[j];
        ji += a == g.nodes[j] && b == g.nodes[i];
        out_i += a == g.nodes[i];
        in_i += b == g.nodes[i];
      }
      if (out_i > 0) g.m_out[i][j] = static_cast<double>(ij) / out_i;
      if (in_i > 0) g.m_in[i][j] = static_cast<double>(ji) / in_i;
    }
  }
  return g;
}

Mat ggnn(const PairGraph& g, const casif::ParamSet& p, std::size_t steps) {
  const Mat E = to_mat(p[Param::kEmbedding]);
  const std::size_t q = g.nodes.size();
  const std::size_t d = p.dim();
  Mat s(q);
  for (std::size_t i = 0; i < q; ++i) s[i] = E[g.nodes[i]];

  const Mat w_in = to_mat(p[Param::kInWeight]), w_out = to_mat(p[Param::kOutWeight]);
  const Vec bi_pre = to_vec(p[Param::kInBiasPre]), bo_pre = to_vec(p[Param::kOutBiasPre]);
  const Vec bi_post = to_vec(p[Param::kInBiasPost]), bo_post = to_vec(p[Param::kOutBiasPost]);
  const Mat wz = to_mat(p[Param::kUpdateGateW]), wr = to_mat(p[Param::kResetGateW]),
            wh = to_mat(p[Param::kCandidateW]);
  const Mat pz = to_mat(p[Param::kUpdateGateP]), pr = to_mat(p[Param::kResetGateP]),
            ph = to_mat(p[Param::kCandidateP]);

  for (std::size_t step = 0; step < steps; ++step) {
    Mat next(q, Vec(d));
    for (std::size_t i = 0; i < q; ++i) {
      Vec m(2 * d, 0.0);
      for (std::size_t k = 0; k < d; ++k) {
        double in = bi_post[k], out = bo_post[k];
        for (std::size_t j = 0; j < q; ++j) {
          double tin = bi_pre[k], tout = bo_pre[k];
          for (std::size_t l = 0; l < d; ++l) {
            tin += s[j][l] * w_in[l][k];
            tout += s[j][l] * w_out[l][k];
          }
          in += g.m_in[i][j] * tin;
          out += g.m_out[i][j] * tout;
        }
        m[k] = in;
        m[d + k] = out;
      }
      const Vec zm = apply_transposed(wz, m), zs = apply_transposed(pz, s[i]);
      const Vec rm = apply_transposed(wr, m), rs = apply_transposed(pr, s[i]);
      Vec z(d), r(d), rsv(d);
      for (std::size_t k = 0; k < d; ++k) {
        z[k] = logistic(zm[k] + zs[k]);
        r[k] = logistic(rm[k] + rs[k]);
        rsv[k] = r[k] * s[i][k];
      }
      const Vec hm = apply_transposed(wh, m), hs = apply_transposed(ph, rsv);
      for (std::size_t k = 0; k < d; ++k) {
        const double cand = std::tanh(hm[k] + hs[k]);
        next[i][k] = (1.0 - z[k]) * s[i][k] + z[k] * cand;
      }
    }
    s = next;
  }
  return s;
}

Attention attention(const Mat& pos, const Vec& last, const Vec& mean, const casif::ParamSet& p) {
  const Vec q = to_vec(p[Param::kAttnQuery]), b = to_vec(p[Param::kAttnBias]);
  const Mat w1 = to_mat(p[Param::kAttnItemW]), w2 = to_mat(p[Param::kAttnLastW]),
            w3 = to_mat(p[Param::kAttnMeanW]);
  const std::size_t d = q.size();
  const Vec u2 = apply_transposed(w2, last), u3 = apply_transposed(w3, mean);
  Attention a{Vec(pos.size(), 0.0), Vec(d, 0.0)};
  for (std::size_t t = 0; t < pos.size(); ++t) {
    const Vec u1 = apply_transposed(w1, pos[t]);
    for (std::size_t k = 0; k < d; ++k) a.alpha[t] += q[k] * logistic(u1[k] + u2[k] + u3[k] + b[k]);
  }
  for (std::size_t t = 0; t < pos.size(); ++t)
    for (std::size_t k = 0; k < d; ++k) a.attended[k] += a.alpha[t] * pos[t][k];
  return a;
}

Attention simple_attention(const Mat& pos, const casif::ParamSet& p) {
  const Vec q = to_vec(p[Param::kAttnQuery]), b = to_vec(p[Param::kSimpleAttnB]);
  const Mat w = to_mat(p[Param::kSimpleAttnW]);
  const std::size_t d = q.size();
  Attention a{Vec(pos.size(), 0.0), Vec(d, 0.0)};
  for (std::size_t t = 0; t < pos.size(); ++t) {
    const Vec u = apply_transposed(w, pos[t]);
    for (std::size_t k = 0; k < d; ++k) a.alpha[t] += q[k] * logistic(u[k] + b[k]);
    for (std::size_t k = 0; k < d; ++k) a.attended[k] += a.alpha[t] * pos[t][k];
  }
  return a;
}

Interest interest(const Vec& global, const Vec& last, const casif::ParamSet& p,
                  casif::CurrentInterestInput input) {
  const Vec gs = apply_transposed(to_mat(p[Param::kGeneralMlpW]), global);
  const Vec& cur_in = input == casif::CurrentInterestInput::kLastItem ? last : global;
  const Vec gt = apply_transposed(to_mat(p[Param::kCurrentMlpW]), cur_in);
  const Vec bs = to_vec(p[Param::kGeneralMlpB]), bt = to_vec(p[Param::kCurrentMlpB]);
  Interest out{Vec(gs.size()), Vec(gt.size())};
  for (std::size_t k = 0; k < gs.size(); ++k) {
    out.general[k] = std::tanh(gs[k] + bs[k]);
    out.current[k] = std::tanh(gt[k] + bt[k]);
  }
  return out;
}

double eq13_loss(const Vec& probs, std::size_t label) {
  double sum = std::log(probs[label]);
  for (std::size_t i = 0; i < probs.size(); ++i)
    if (i != label) sum += std::log(1.0 - probs[i]);
  return -sum;
}

Prediction forward(const casif::PrefixExample& ex, const casif::ParamSet& p,
                   const casif::HyperParams& hp) {
  const PairGraph g = pair_count_graph(ex.prefix);
  const Mat h = ggnn(g, p, hp.gnn_steps);
  const std::size_t n = ex.prefix.size(), d = p.dim();
  Prediction out;
  for (std::size_t t = 0; t < n; ++t) out.position_latents.push_back(h[g.alias[t]]);
  const Vec& last = out.position_latents.back();

  Vec query(d);
  if (hp.variant == casif::Variant::kCasif) {
    out.session_mean.assign(d, 0.0);
    for (const Vec& row : out.position_latents)
      for (std::size_t k = 0; k < d; ++k) out.session_mean[k] += row[k] / static_cast<double>(n);
    out.attention = attention(out.position_latents, last, out.session_mean, p);
    const Interest it = interest(out.attention.attended, last, p, hp.current_input);
    for (std::size_t k = 0; k < d; ++k) query[k] = it.general[k] * it.current[k];
  } else {
    out.attention = simple_attention(out.position_latents, p);
    query = out.attention.attended;
  }

  const Mat E = to_mat(p[Param::kEmbedding]);
  double total = 0.0;
  for (const Vec& e : E) {
    double z = 0.0;
    for (std::size_t k = 0; k < d; ++k) z += e[k] * query[k];
    out.logits.push_back(z);
    total += std::exp(z);
  }
  for (double z : out.logits) out.probs.push_back(std::exp(z) / total);
  out.loss = hp.loss == casif::LossVariant::kEq13 ? eq13_loss(out.probs, ex.label)
                                                   : -std::log(out.probs[ex.label]);
  return out;
}

std::size_t full_sort_rank(std::span<const double> scores, std::size_t label) {
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  return static_cast<std::size_t>(std::find(order.begin(), order.end(), label) - order.begin()) + 1;
}

double recall(const std::vector<Vec>& scores, const std::vector<std::size_t>& labels, std::size_t k) {
  double hits = 0;
  for (std::size_t i = 0; i < scores.size(); ++i) hits += full_sort_rank(scores[i], labels[i]) <= k;
  return hits / static_cast<double>(scores.size());
}

double mrr(const std::vector<Vec>& scores, const std::vector<std::size_t>& labels, std::size_t k) {
  double sum = 0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    const std::size_t r = full_sort_rank(scores[i], labels[i]);
    if (r <= k) sum += 1.0 / static_cast<double>(r);
  }
  return sum / static_cast<double>(scores.size());
}

std::vector<std::size_t> popularity_counts(const std::vector<casif::PrefixExample>& train,
                                           std::size_t num_items) {
  std::vector<std::size_t> counts(num_items, 0);
  for (const auto& ex : train) {
    for (ItemIndex i : ex.prefix) ++counts[i];
    ++counts[ex.label];
  }
  return counts;
}

}  // namespace oracle
