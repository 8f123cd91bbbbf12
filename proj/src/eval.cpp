#include "casif/eval.hpp"

#include <algorithm>
#include <map>
#include <numeric>

#include <fmt/format.h>

#include "casif/error.hpp"
#include "casif/kernels.hpp"

namespace casif {
namespace {

bool ranks_before(std::span<const double> scores, std::size_t a, std::size_t b) {
  return scores[a] > scores[b] || (scores[a] == scores[b] && a < b);
}

void check_inputs(std::size_t lists, std::size_t labels) {
  if (lists == 0) {
    throw ArgumentError("metric undefined on empty input");
  }
  if (lists != labels) {
    throw ArgumentError("ranked lists and labels differ in length");
  }
}

std::size_t position_in(const RankedList& list, ItemIndex label, std::size_t k) {
  const auto end = list.begin() + static_cast<std::ptrdiff_t>(std::min(k, list.size()));
  const auto it = std::find(list.begin(), end, label);
  return it == end ? 0 : static_cast<std::size_t>(it - list.begin()) + 1;
}

}  // namespace

RankedList rank_topk(std::span<const double> scores, std::size_t k) {
  if (k < 1 || k > scores.size()) {
    throw ArgumentError(fmt::format("k = {} outside [1, {}]", k, scores.size()));
  }
  RankedList items(scores.size());
  std::iota(items.begin(), items.end(), ItemIndex{0});
  const auto cmp = [&](ItemIndex a, ItemIndex b) { return ranks_before(scores, a, b); };
  std::partial_sort(items.begin(), items.begin() + static_cast<std::ptrdiff_t>(k), items.end(), cmp);
  items.resize(k);
  return items;
}

std::size_t rank_of(std::span<const double> scores, ItemIndex label) {
  if (label >= scores.size()) {
    throw ArgumentError(fmt::format("label {} out of range [0, {})", label, scores.size()));
  }
  std::size_t rank = 1;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (i != label && ranks_before(scores, i, label)) {
      ++rank;
    }
  }
  return rank;
}

double recall_at_k(std::span<const RankedList> lists, std::span<const ItemIndex> labels,
                   std::size_t k) {
  check_inputs(lists.size(), labels.size());
  std::size_t hits = 0;
  for (std::size_t e = 0; e < lists.size(); ++e) {
    hits += position_in(lists[e], labels[e], k) > 0 ? 1 : 0;
  }
  return static_cast<double>(hits) / static_cast<double>(lists.size());
}

double mrr_at_k(std::span<const RankedList> lists, std::span<const ItemIndex> labels, std::size_t k) {
  check_inputs(lists.size(), labels.size());
  std::vector<std::size_t> ranks(lists.size());
  for (std::size_t e = 0; e < lists.size(); ++e) {
    const auto pos = position_in(lists[e], labels[e], k);
    ranks[e] = pos == 0 ? k + 1 : pos;
  }
  return mrr_from_ranks(ranks, k);
}

double recall_from_ranks(std::span<const std::size_t> ranks, std::size_t k) {
  if (ranks.empty()) {
    throw ArgumentError("metric undefined on empty input");
  }
  const auto hits = std::count_if(ranks.begin(), ranks.end(), [&](std::size_t r) { return r <= k; });
  return static_cast<double>(hits) / static_cast<double>(ranks.size());
}

double mrr_from_ranks(std::span<const std::size_t> ranks, std::size_t k) {
  if (ranks.empty()) {
    throw ArgumentError("metric undefined on empty input");
  }
  std::vector<std::size_t> count(k + 1, 0);
  for (const auto r : ranks) {
    if (r >= 1 && r <= k) {
      ++count[r];
    }
  }
  double sum = 0.0;
  for (std::size_t r = 1; r <= k; ++r) {
    sum += static_cast<double>(count[r]) / static_cast<double>(r);
  }
  return sum / static_cast<double>(ranks.size());
}

std::string_view to_string(Bucket b) {
  switch (b) {
    case Bucket::kAll:
      return "all";
    case Bucket::kShort:
      return "short";
    case Bucket::kLong:
      return "long";
  }
  return "?";
}

std::optional<MetricRow> MetricsReport::find(std::size_t k, Bucket bucket) const {
  for (const auto& row : rows) {
    if (row.k == k && row.bucket == bucket) {
      return row;
    }
  }
  return std::nullopt;
}

nlohmann::json MetricsReport::to_json() const {
  auto out = nlohmann::json::array();
  for (const auto& row : rows) {
    out.push_back({{"k", row.k},
                   {"recall", row.recall},
                   {"mrr", row.mrr},
                   {"bucket", to_string(row.bucket)},
                   {"n", row.n}});
  }
  return out;
}

std::string MetricsReport::to_table() const {
  std::vector<Bucket> buckets;
  std::vector<std::size_t> ks;
  for (const auto& row : rows) {
    if (std::find(buckets.begin(), buckets.end(), row.bucket) == buckets.end()) {
      buckets.push_back(row.bucket);
    }
    if (std::find(ks.begin(), ks.end(), row.k) == ks.end()) {
      ks.push_back(row.k);
    }
  }
  std::string out = fmt::format("{:<14}", "Measure");
  for (const auto b : buckets) {
    out += fmt::format("{:>10}", to_string(b));
  }
  out += '\n';
  const auto line = [&](std::string label, auto value) {
    out += fmt::format("{:<14}", label);
    for (const auto b : buckets) {
      out += value(b);
    }
    out += '\n';
  };
  for (const auto k : ks) {
    line(fmt::format("Recall@{}(%)", k), [&](Bucket b) {
      const auto row = find(k, b);
      return row ? fmt::format("{:>10.2f}", 100.0 * row->recall) : fmt::format("{:>10}", "-");
    });
    line(fmt::format("MRR@{}(%)", k), [&](Bucket b) {
      const auto row = find(k, b);
      return row ? fmt::format("{:>10.2f}", 100.0 * row->mrr) : fmt::format("{:>10}", "-");
    });
  }
  if (!ks.empty()) {
    line("N", [&](Bucket b) {
      const auto row = find(ks.front(), b);
      return fmt::format("{:>10}", row ? row->n : 0);
    });
  }
  return out;
}

MetricsReport metrics_from_ranks(std::span<const std::size_t> ranks,
                                 std::span<const std::size_t> prefix_lengths,
                                 std::span<const std::size_t> ks) {
  if (ranks.size() != prefix_lengths.size()) {
    throw ArgumentError("ranks and prefix lengths differ in length");
  }
  std::vector<std::size_t> short_ranks, long_ranks;
  for (std::size_t e = 0; e < ranks.size(); ++e) {
    (prefix_lengths[e] <= kShortSessionMax ? short_ranks : long_ranks).push_back(ranks[e]);
  }
  MetricsReport report;
  const std::pair<Bucket, std::span<const std::size_t>> groups[] = {
      {Bucket::kAll, ranks}, {Bucket::kShort, short_ranks}, {Bucket::kLong, long_ranks}};
  for (const auto k : ks) {
    for (const auto& [bucket, group] : groups) {
      if (group.empty()) {
        continue;
      }
      report.rows.push_back(
          {k, bucket, recall_from_ranks(group, k), mrr_from_ranks(group, k), group.size()});
    }
  }
  return report;
}

namespace {

std::vector<std::size_t> prefix_lengths_of(std::span<const PrefixExample> examples) {
  std::vector<std::size_t> lengths(examples.size());
  std::transform(examples.begin(), examples.end(), lengths.begin(),
                 [](const PrefixExample& ex) { return ex.prefix.size(); });
  return lengths;
}

}  // namespace

MetricsReport evaluate_model(const ParamSet& params, const HyperParams& hp,
                             std::span<const PrefixExample> test, std::span<const std::size_t> ks) {
  if (test.empty()) {
    throw ArgumentError("evaluate_model: empty test set");
  }
  const auto ranks = label_ranks_parallel(test, params, hp);
  return metrics_from_ranks(ranks, prefix_lengths_of(test), ks);
}

Vector popularity_scores(std::span<const PrefixExample> train, std::size_t num_items) {
  Vector counts(num_items, 0.0);
  for (const auto& ex : train) {
    for (const auto item : ex.prefix) {
      counts.at(item) += 1.0;
    }
    counts.at(ex.label) += 1.0;
  }
  return counts;
}

MetricsReport pop_baseline(std::span<const PrefixExample> train, std::span<const PrefixExample> test,
                           std::size_t num_items, std::span<const std::size_t> ks) {
  if (train.empty()) {
    throw ArgumentError("pop_baseline: empty training set");
  }
  if (test.empty()) {
    throw ArgumentError("pop_baseline: empty test set");
  }
  const Vector scores = popularity_scores(train, num_items);
  std::vector<std::size_t> ranks(test.size());
  for (std::size_t e = 0; e < test.size(); ++e) {
    ranks[e] = rank_of(scores, test[e].label);
  }
  return metrics_from_ranks(ranks, prefix_lengths_of(test), ks);
}

}  // namespace casif
