#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include <json.hpp>

namespace casif {

using ItemIndex = std::uint32_t;

struct ClickEvent {
  std::string session_id;
  std::int64_t timestamp_ms = 0;
  std::string item_id;

  friend bool operator==(const ClickEvent&, const ClickEvent&) = default;
};

/// Column layout of a delimited click log. Column indices are 0-based.
struct LogFormat {
  std::size_t session_col = 0;
  std::size_t time_col = 1;
  std::size_t item_col = 2;
  char delimiter = ',';
  bool has_header = false;
  /// Abort on the first malformed line instead of skipping it.
  bool strict = false;
};

struct ParsedLog {
  std::vector<ClickEvent> events;
  std::size_t skipped = 0;
};

/// Parses integer epoch milliseconds or an ISO-8601 timestamp
/// ("YYYY-MM-DD", "YYYY-MM-DDThh:mm:ss[.fff][Z|+hh:mm|-hh:mm]").
/// Throws DataError when the text is neither.
std::int64_t parse_timestamp(std::string_view text);

/// Reads one ClickEvent per valid line, in file order. Malformed lines are
/// counted and skipped, or rethrown with their line number in strict mode.
ParsedLog parse_click_log(std::istream& in, const LogFormat& format);

template <typename Item>
struct BasicSession {
  std::vector<Item> items;
  std::int64_t start_time = 0;

  friend bool operator==(const BasicSession&, const BasicSession&) = default;
};

using RawSession = BasicSession<std::string>;
using Session = BasicSession<ItemIndex>;

struct PrefixExample {
  std::vector<ItemIndex> prefix;
  ItemIndex label = 0;

  friend bool operator==(const PrefixExample&, const PrefixExample&) = default;
};

struct FilterConfig {
  std::size_t min_item_support = 5;
  std::size_t min_session_len = 2;
  /// Sessions longer than this keep only their most recent items; 0 disables the cap.
  std::size_t max_session_len = 50;
};

/// Groups events into sessions (clicks ordered by timestamp, ties by input
/// order), removes items whose total occurrence count is below the support
/// threshold, drops short sessions, and caps length. Single pass. Output is
/// ordered by session start time, ties by first appearance in the input.
std::vector<RawSession> sessionize_and_filter(const std::vector<ClickEvent>& events,
                                              const FilterConfig& config);

/// Sessions starting strictly before split_ts go to train, the rest to test.
std::pair<std::vector<RawSession>, std::vector<RawSession>> time_split(
    const std::vector<RawSession>& sessions, std::int64_t split_ts);

struct Fraction {
  std::uint64_t num = 1;
  std::uint64_t den = 1;

  /// Accepts "a/b" or a plain integer. Throws ConfigError outside (0, 1].
  static Fraction parse(std::string_view text);
  std::string to_string() const;
  friend bool operator==(const Fraction&, const Fraction&) = default;
};

/// The last ceil(fraction * n) sessions. Throws ConfigError for a fraction outside (0, 1].
std::vector<RawSession> take_recent_fraction(const std::vector<RawSession>& train,
                                             Fraction fraction);

std::vector<PrefixExample> expand_prefixes(const Session& session);

class ItemVocabulary {
 public:
  /// Returns the index of raw, inserting it if unseen.
  ItemIndex add(const std::string& raw);
  bool contains(const std::string& raw) const { return raw_to_index_.contains(raw); }
  /// Throws DataError for an unknown id.
  ItemIndex index_of(const std::string& raw) const;
  const std::string& raw_of(ItemIndex index) const { return index_to_raw_.at(index); }
  std::size_t size() const { return index_to_raw_.size(); }
  const std::vector<std::string>& raw_ids() const { return index_to_raw_; }

  friend bool operator==(const ItemVocabulary& a, const ItemVocabulary& b) {
    return a.index_to_raw_ == b.index_to_raw_;
  }

 private:
  std::unordered_map<std::string, ItemIndex> raw_to_index_;
  std::vector<std::string> index_to_raw_;
};

/// Table-1 style summary of the kept sessions.
struct CorpusStats {
  std::size_t clicks = 0;
  std::size_t train_sessions = 0;
  std::size_t test_sessions = 0;
  std::size_t items = 0;
  double average_length = 0.0;
};

struct ProcessedDataset {
  std::vector<PrefixExample> train;
  std::vector<PrefixExample> test;
  ItemVocabulary vocab;
  /// Filter thresholds, split timestamp, fraction, corpus stats and the
  /// effective configuration that produced the dataset.
  nlohmann::json provenance = nlohmann::json::object();

  std::size_t num_items() const { return vocab.size(); }
  friend bool operator==(const ProcessedDataset&, const ProcessedDataset&) = default;
};

/// Builds the vocabulary from train items in first-occurrence order,
/// reindexes both splits (test items unknown to the vocabulary are removed,
/// then test sessions shorter than two are dropped), and expands prefixes.
/// Stats are written to provenance["stats"]. Throws DataError on empty train.
ProcessedDataset build_vocab_and_reindex(const std::vector<RawSession>& train,
                                         const std::vector<RawSession>& test,
                                         nlohmann::json provenance = nlohmann::json::object());

CorpusStats stats_from_provenance(const ProcessedDataset& ds);

struct PreprocessConfig {
  LogFormat format;
  FilterConfig filter;
  /// Explicit split timestamp. When absent, split at (last click - test_window_ms).
  std::optional<std::int64_t> split_ts;
  std::int64_t test_window_ms = 86'400'000;
  Fraction fraction;

  nlohmann::json to_json() const;
};

/// Full pipeline from parsed events: filter, split, fraction, vocabulary.
ProcessedDataset preprocess(const std::vector<ClickEvent>& events, const PreprocessConfig& config);

inline constexpr std::string_view kDatasetFile = "dataset.jsonl";
inline constexpr std::string_view kVocabFile = "vocab.jsonl";
inline constexpr int kDatasetVersion = 1;

/// Writes dataset.jsonl and vocab.jsonl into dir (created if needed).
void persist_dataset(const ProcessedDataset& ds, const std::filesystem::path& dir);
ProcessedDataset load_dataset(const std::filesystem::path& dir);

}  // namespace casif
