#pragma once

#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "casif/corpus.hpp"
#include "casif/model.hpp"

namespace casif {

/// Item indices by descending score, ties broken by ascending index.
using RankedList = std::vector<ItemIndex>;

/// The k best items. Throws ArgumentError unless 1 <= k <= scores.size().
RankedList rank_topk(std::span<const double> scores, std::size_t k);

/// 1-based position of label in the full ranking induced by rank_topk.
std::size_t rank_of(std::span<const double> scores, ItemIndex label);

/// Fraction of examples whose label is within the first k entries of its list.
/// Throws ArgumentError on empty or mismatched input.
double recall_at_k(std::span<const RankedList> lists, std::span<const ItemIndex> labels,
                   std::size_t k);
/// Mean of 1/rank over examples, a term being 0 when the label is outside the first k.
double mrr_at_k(std::span<const RankedList> lists, std::span<const ItemIndex> labels, std::size_t k);

double recall_from_ranks(std::span<const std::size_t> ranks, std::size_t k);
/// Sums reciprocal ranks grouped by rank, so the result does not depend on example order.
double mrr_from_ranks(std::span<const std::size_t> ranks, std::size_t k);

enum class Bucket { kAll, kShort, kLong };
std::string_view to_string(Bucket b);

/// Prefixes of at most this many items fall in the short bucket.
inline constexpr std::size_t kShortSessionMax = 5;

struct MetricRow {
  std::size_t k = 0;
  Bucket bucket = Bucket::kAll;
  double recall = 0.0;
  double mrr = 0.0;
  std::size_t n = 0;
};

struct MetricsReport {
  std::vector<MetricRow> rows;

  std::optional<MetricRow> find(std::size_t k, Bucket bucket) const;
  /// Array of {"k","recall","mrr","bucket","n"} records.
  nlohmann::json to_json() const;
  /// Aligned table, one "Recall@k(%)" and "MRR@k(%)" line per cutoff and one column per bucket.
  std::string to_table() const;
};

inline const std::vector<std::size_t> kDefaultCutoffs = {5, 10, 20};

/// Aggregates per-example ranks for every cutoff, overall and per length bucket
/// (buckets keyed on prefix length). Empty buckets produce no rows.
MetricsReport metrics_from_ranks(std::span<const std::size_t> ranks,
                                 std::span<const std::size_t> prefix_lengths,
                                 std::span<const std::size_t> ks);

MetricsReport evaluate_model(const ParamSet& params, const HyperParams& hp,
                             std::span<const PrefixExample> test,
                             std::span<const std::size_t> ks = kDefaultCutoffs);

/// Item scores = occurrence count over training prefixes and labels.
Vector popularity_scores(std::span<const PrefixExample> train, std::size_t num_items);

MetricsReport pop_baseline(std::span<const PrefixExample> train, std::span<const PrefixExample> test,
                           std::size_t num_items, std::span<const std::size_t> ks = kDefaultCutoffs);

}  // namespace casif
