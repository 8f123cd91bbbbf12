#include "casif/corpus.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <fstream>
#include <istream>
#include <map>
#include <numeric>
#include <sstream>

#include <fmt/format.h>

#include "casif/error.hpp"

namespace casif {
namespace {

template <typename Int>
bool parse_int(std::string_view text, Int& out) {
  if (text.empty()) {
    return false;
  }
  const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), out);
  return ec == std::errc{} && ptr == text.data() + text.size();
}

// Fixed-width unsigned field, e.g. the "07" in a date.
bool parse_digits(std::string_view text, std::size_t pos, std::size_t width, int& out) {
  if (pos + width > text.size()) {
    return false;
  }
  const auto field = text.substr(pos, width);
  if (!std::all_of(field.begin(), field.end(), [](char c) { return c >= '0' && c <= '9'; })) {
    return false;
  }
  return parse_int(field, out);
}

std::int64_t parse_iso8601(std::string_view t) {
  using namespace std::chrono;
  const auto fail = [&] { return DataError(fmt::format("unparseable timestamp '{}'", t)); };

  int y = 0, mo = 0, d = 0;
  if (!parse_digits(t, 0, 4, y) || t.size() < 10 || t[4] != '-' || !parse_digits(t, 5, 2, mo) ||
      t[7] != '-' || !parse_digits(t, 8, 2, d)) {
    throw fail();
  }
  const year_month_day ymd{year{y}, month{static_cast<unsigned>(mo)}, day{static_cast<unsigned>(d)}};
  if (!ymd.ok()) {
    throw fail();
  }
  std::int64_t ms = duration_cast<milliseconds>(sys_days{ymd}.time_since_epoch()).count();
  if (t.size() == 10) {
    return ms;
  }

  int hh = 0, mm = 0, ss = 0;
  if ((t[10] != 'T' && t[10] != ' ') || !parse_digits(t, 11, 2, hh) || t.size() < 19 ||
      t[13] != ':' || !parse_digits(t, 14, 2, mm) || t[16] != ':' || !parse_digits(t, 17, 2, ss) ||
      hh > 23 || mm > 59 || ss > 60) {
    throw fail();
  }
  ms += ((hh * 60LL + mm) * 60LL + ss) * 1000LL;

  std::size_t pos = 19;
  if (pos < t.size() && t[pos] == '.') {
    ++pos;
    const std::size_t begin = pos;
    std::int64_t frac_ms = 0;
    int scale = 100;
    while (pos < t.size() && t[pos] >= '0' && t[pos] <= '9') {
      frac_ms += (t[pos] - '0') * scale;
      scale /= 10;
      ++pos;
    }
    if (pos == begin) {
      throw fail();
    }
    ms += frac_ms;
  }

  const auto zone = t.substr(pos);
  if (zone.empty() || zone == "Z") {
    return ms;
  }
  int oh = 0, om = 0;
  if (zone.size() != 6 || (zone[0] != '+' && zone[0] != '-') || !parse_digits(zone, 1, 2, oh) ||
      zone[3] != ':' || !parse_digits(zone, 4, 2, om)) {
    throw fail();
  }
  const std::int64_t offset = (oh * 60LL + om) * 60'000LL;
  return zone[0] == '+' ? ms - offset : ms + offset;
}

std::vector<std::string_view> split_fields(std::string_view line, char delimiter) {
  std::vector<std::string_view> fields;
  std::size_t begin = 0;
  while (true) {
    const auto end = line.find(delimiter, begin);
    fields.push_back(line.substr(begin, end == std::string_view::npos ? std::string_view::npos
                                                                      : end - begin));
    if (end == std::string_view::npos) {
      break;
    }
    begin = end + 1;
  }
  return fields;
}

ClickEvent parse_line(std::string_view line, const LogFormat& f) {
  const auto fields = split_fields(line, f.delimiter);
  const auto needed = std::max({f.session_col, f.time_col, f.item_col}) + 1;
  if (fields.size() < needed) {
    throw DataError(fmt::format("expected at least {} fields, found {}", needed, fields.size()));
  }
  ClickEvent ev;
  ev.session_id = std::string(fields[f.session_col]);
  ev.item_id = std::string(fields[f.item_col]);
  if (ev.session_id.empty() || ev.item_id.empty()) {
    throw DataError("empty session or item id");
  }
  ev.timestamp_ms = parse_timestamp(fields[f.time_col]);
  return ev;
}

}  // namespace

std::int64_t parse_timestamp(std::string_view text) {
  std::int64_t value = 0;
  if (!text.empty() && text.front() != '-' && parse_int(text, value)) {
    return value;
  }
  return parse_iso8601(text);
}

ParsedLog parse_click_log(std::istream& in, const LogFormat& format) {
  ParsedLog out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') {
      line.pop_back();
    }
    if (line_no == 1 && format.has_header) {
      continue;
    }
    if (line.empty()) {
      continue;
    }
    try {
      out.events.push_back(parse_line(line, format));
    } catch (const DataError& e) {
      if (format.strict) {
        throw DataError(fmt::format("line {}: {}", line_no, e.what()));
      }
      ++out.skipped;
    }
  }
  return out;
}

std::vector<RawSession> sessionize_and_filter(const std::vector<ClickEvent>& events,
                                              const FilterConfig& config) {
  // Group by session id, remembering first appearance for stable tie-breaks.
  std::unordered_map<std::string, std::size_t> slot_of;
  std::vector<std::vector<const ClickEvent*>> grouped;
  for (const auto& ev : events) {
    const auto [it, inserted] = slot_of.try_emplace(ev.session_id, grouped.size());
    if (inserted) {
      grouped.emplace_back();
    }
    grouped[it->second].push_back(&ev);
  }

  std::vector<RawSession> sessions;
  sessions.reserve(grouped.size());
  std::unordered_map<std::string, std::size_t> support;
  for (auto& clicks : grouped) {
    std::stable_sort(clicks.begin(), clicks.end(), [](const ClickEvent* a, const ClickEvent* b) {
      return a->timestamp_ms < b->timestamp_ms;
    });
    RawSession s;
    s.start_time = clicks.front()->timestamp_ms;
    s.items.reserve(clicks.size());
    for (const auto* ev : clicks) {
      s.items.push_back(ev->item_id);
      ++support[ev->item_id];
    }
    sessions.push_back(std::move(s));
  }

  std::vector<RawSession> kept;
  for (auto& s : sessions) {
    std::erase_if(s.items, [&](const std::string& item) {
      return support[item] < config.min_item_support;
    });
    if (s.items.size() < config.min_session_len || s.items.empty()) {
      continue;
    }
    if (config.max_session_len > 0 && s.items.size() > config.max_session_len) {
      s.items.erase(s.items.begin(),
                    s.items.end() - static_cast<std::ptrdiff_t>(config.max_session_len));
    }
    kept.push_back(std::move(s));
  }
  std::stable_sort(kept.begin(), kept.end(), [](const RawSession& a, const RawSession& b) {
    return a.start_time < b.start_time;
  });
  return kept;
}

std::pair<std::vector<RawSession>, std::vector<RawSession>> time_split(
    const std::vector<RawSession>& sessions, std::int64_t split_ts) {
  std::pair<std::vector<RawSession>, std::vector<RawSession>> out;
  for (const auto& s : sessions) {
    (s.start_time < split_ts ? out.first : out.second).push_back(s);
  }
  return out;
}

Fraction Fraction::parse(std::string_view text) {
  Fraction f;
  const auto slash = text.find('/');
  bool ok = false;
  if (slash == std::string_view::npos) {
    ok = parse_int(text, f.num);
    f.den = 1;
  } else {
    ok = parse_int(text.substr(0, slash), f.num) && parse_int(text.substr(slash + 1), f.den);
  }
  if (!ok || f.den == 0 || f.num == 0 || f.num > f.den) {
    throw ConfigError(fmt::format("fraction '{}' must be a rational in (0, 1]", text));
  }
  return f;
}

std::string Fraction::to_string() const { return fmt::format("{}/{}", num, den); }

std::vector<RawSession> take_recent_fraction(const std::vector<RawSession>& train,
                                             Fraction fraction) {
  if (fraction.den == 0 || fraction.num == 0 || fraction.num > fraction.den) {
    throw ConfigError("fraction must lie in (0, 1]");
  }
  const auto n = static_cast<unsigned __int128>(train.size());
  const auto keep = static_cast<std::size_t>((n * fraction.num + fraction.den - 1) / fraction.den);
  return {train.end() - static_cast<std::ptrdiff_t>(keep), train.end()};
}

std::vector<PrefixExample> expand_prefixes(const Session& session) {
  std::vector<PrefixExample> out;
  if (session.items.size() < 2) {
    return out;
  }
  out.reserve(session.items.size() - 1);
  for (std::size_t k = 1; k < session.items.size(); ++k) {
    out.push_back({{session.items.begin(), session.items.begin() + static_cast<std::ptrdiff_t>(k)},
                   session.items[k]});
  }
  return out;
}

ItemIndex ItemVocabulary::add(const std::string& raw) {
  const auto [it, inserted] = raw_to_index_.try_emplace(raw, static_cast<ItemIndex>(index_to_raw_.size()));
  if (inserted) {
    index_to_raw_.push_back(raw);
  }
  return it->second;
}

ItemIndex ItemVocabulary::index_of(const std::string& raw) const {
  const auto it = raw_to_index_.find(raw);
  if (it == raw_to_index_.end()) {
    throw DataError(fmt::format("unknown item id '{}'", raw));
  }
  return it->second;
}

ProcessedDataset build_vocab_and_reindex(const std::vector<RawSession>& train,
                                         const std::vector<RawSession>& test,
                                         nlohmann::json provenance) {
  if (train.empty()) {
    throw DataError("training split is empty");
  }
  ProcessedDataset ds;
  CorpusStats stats;
  for (const auto& raw : train) {
    Session s{{}, raw.start_time};
    for (const auto& item : raw.items) {
      s.items.push_back(ds.vocab.add(item));
    }
    auto examples = expand_prefixes(s);
    ds.train.insert(ds.train.end(), examples.begin(), examples.end());
    stats.clicks += s.items.size();
    ++stats.train_sessions;
  }
  for (const auto& raw : test) {
    Session s{{}, raw.start_time};
    for (const auto& item : raw.items) {
      if (ds.vocab.contains(item)) {
        s.items.push_back(ds.vocab.index_of(item));
      }
    }
    if (s.items.size() < 2) {
      continue;
    }
    auto examples = expand_prefixes(s);
    ds.test.insert(ds.test.end(), examples.begin(), examples.end());
    stats.clicks += s.items.size();
    ++stats.test_sessions;
  }
  stats.items = ds.vocab.size();
  stats.average_length =
      static_cast<double>(stats.clicks) / static_cast<double>(stats.train_sessions + stats.test_sessions);

  ds.provenance = std::move(provenance);
  ds.provenance["stats"] = {{"clicks", stats.clicks},
                            {"train_sessions", stats.train_sessions},
                            {"test_sessions", stats.test_sessions},
                            {"items", stats.items},
                            {"average_length", stats.average_length}};
  return ds;
}

CorpusStats stats_from_provenance(const ProcessedDataset& ds) {
  CorpusStats s;
  const auto it = ds.provenance.find("stats");
  if (it == ds.provenance.end()) {
    return s;
  }
  s.clicks = it->value("clicks", std::size_t{0});
  s.train_sessions = it->value("train_sessions", std::size_t{0});
  s.test_sessions = it->value("test_sessions", std::size_t{0});
  s.items = it->value("items", std::size_t{0});
  s.average_length = it->value("average_length", 0.0);
  return s;
}

nlohmann::json PreprocessConfig::to_json() const {
  nlohmann::json j;
  j["session_col"] = format.session_col;
  j["time_col"] = format.time_col;
  j["item_col"] = format.item_col;
  j["delimiter"] = std::string(1, format.delimiter);
  j["has_header"] = format.has_header;
  j["min_item_support"] = filter.min_item_support;
  j["min_session_len"] = filter.min_session_len;
  j["max_session_len"] = filter.max_session_len;
  j["test_window_ms"] = test_window_ms;
  if (split_ts) {
    j["split_ts"] = *split_ts;
  }
  j["fraction"] = fraction.to_string();
  return j;
}

ProcessedDataset preprocess(const std::vector<ClickEvent>& events, const PreprocessConfig& config) {
  const auto sessions = sessionize_and_filter(events, config.filter);
  std::int64_t split_ts = 0;
  if (config.split_ts) {
    split_ts = *config.split_ts;
  } else {
    std::int64_t last = 0;
    for (const auto& ev : events) {
      last = std::max(last, ev.timestamp_ms);
    }
    split_ts = last - config.test_window_ms;
  }
  auto [train, test] = time_split(sessions, split_ts);
  train = take_recent_fraction(train, config.fraction);

  nlohmann::json provenance;
  provenance["min_item_support"] = config.filter.min_item_support;
  provenance["min_session_len"] = config.filter.min_session_len;
  provenance["max_session_len"] = config.filter.max_session_len;
  provenance["split_ts"] = split_ts;
  provenance["fraction"] = config.fraction.to_string();
  provenance["config"] = config.to_json();
  return build_vocab_and_reindex(train, test, std::move(provenance));
}

namespace {

nlohmann::json example_record(std::string_view split, const PrefixExample& ex) {
  return {{"split", split}, {"prefix", ex.prefix}, {"label", ex.label}};
}

}  // namespace

void persist_dataset(const ProcessedDataset& ds, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  {
    std::ofstream out(dir / kDatasetFile, std::ios::binary | std::ios::trunc);
    if (!out) {
      throw DataError(fmt::format("cannot write {}", (dir / kDatasetFile).string()));
    }
    nlohmann::json header = {{"format", "casif-dataset"},
                             {"version", kDatasetVersion},
                             {"num_items", ds.num_items()},
                             {"provenance", ds.provenance}};
    out << header.dump() << '\n';
    for (const auto& ex : ds.train) {
      out << example_record("train", ex).dump() << '\n';
    }
    for (const auto& ex : ds.test) {
      out << example_record("test", ex).dump() << '\n';
    }
    if (!out) {
      throw DataError("write failure while persisting dataset");
    }
  }
  std::ofstream vocab(dir / kVocabFile, std::ios::binary | std::ios::trunc);
  if (!vocab) {
    throw DataError(fmt::format("cannot write {}", (dir / kVocabFile).string()));
  }
  for (std::size_t i = 0; i < ds.vocab.size(); ++i) {
    vocab << nlohmann::json{{"raw", ds.vocab.raw_of(static_cast<ItemIndex>(i))}, {"index", i}}.dump()
          << '\n';
  }
  if (!vocab) {
    throw DataError("write failure while persisting vocabulary");
  }
}

ProcessedDataset load_dataset(const std::filesystem::path& dir) {
  const auto data_path = dir / kDatasetFile;
  std::ifstream in(data_path, std::ios::binary);
  if (!in) {
    throw DataError(fmt::format("cannot open {}", data_path.string()));
  }
  ProcessedDataset ds;
  std::string line;
  std::size_t line_no = 0;
  std::size_t num_items = 0;

  const auto bad = [&](std::string_view what) {
    return DataError(fmt::format("{}:{}: {}", data_path.string(), line_no, what));
  };

  if (!std::getline(in, line)) {
    throw DataError(fmt::format("{}: empty file", data_path.string()));
  }
  ++line_no;
  try {
    const auto header = nlohmann::json::parse(line);
    if (!header.is_object() || header.value("format", "") != "casif-dataset" ||
        header.value("version", -1) != kDatasetVersion) {
      throw bad(fmt::format("version mismatch: expected casif-dataset version {}", kDatasetVersion));
    }
    num_items = header.at("num_items").get<std::size_t>();
    ds.provenance = header.value("provenance", nlohmann::json::object());
  } catch (const nlohmann::json::exception& e) {
    throw bad(fmt::format("version mismatch: unreadable header ({})", e.what()));
  }

  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) {
      continue;
    }
    PrefixExample ex;
    std::string split;
    try {
      const auto rec = nlohmann::json::parse(line);
      split = rec.at("split").get<std::string>();
      ex.prefix = rec.at("prefix").get<std::vector<ItemIndex>>();
      ex.label = rec.at("label").get<ItemIndex>();
    } catch (const nlohmann::json::exception& e) {
      throw bad(e.what());
    }
    if (ex.prefix.empty()) {
      throw bad("empty prefix");
    }
    if (ex.label >= num_items ||
        std::any_of(ex.prefix.begin(), ex.prefix.end(), [&](ItemIndex i) { return i >= num_items; })) {
      throw bad("item index out of range");
    }
    if (split == "train") {
      ds.train.push_back(std::move(ex));
    } else if (split == "test") {
      ds.test.push_back(std::move(ex));
    } else {
      throw bad(fmt::format("unknown split '{}'", split));
    }
  }

  const auto vocab_path = dir / kVocabFile;
  std::ifstream vin(vocab_path, std::ios::binary);
  if (!vin) {
    throw DataError(fmt::format("cannot open {}", vocab_path.string()));
  }
  line_no = 0;
  while (std::getline(vin, line)) {
    ++line_no;
    if (line.empty()) {
      continue;
    }
    try {
      const auto rec = nlohmann::json::parse(line);
      const auto index = rec.at("index").get<std::size_t>();
      if (index != ds.vocab.size() || ds.vocab.contains(rec.at("raw").get<std::string>())) {
        throw DataError(fmt::format("{}:{}: vocabulary indices must be contiguous and unique",
                                    vocab_path.string(), line_no));
      }
      ds.vocab.add(rec.at("raw").get<std::string>());
    } catch (const nlohmann::json::exception& e) {
      throw DataError(fmt::format("{}:{}: {}", vocab_path.string(), line_no, e.what()));
    }
  }
  if (ds.vocab.size() != num_items) {
    throw DataError(fmt::format("vocabulary has {} entries, header declares {}", ds.vocab.size(),
                                num_items));
  }
  return ds;
}

}  // namespace casif
