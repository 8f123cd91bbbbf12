#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

#include "casif/corpus.hpp"
#include "casif/error.hpp"
#include "casif/rng.hpp"
#include "oracles.hpp"

using namespace casif;
namespace fs = std::filesystem;

namespace {

std::vector<ClickEvent> events_of(const std::map<std::string, std::vector<std::string>>& sessions) {
  std::vector<ClickEvent> out;
  std::int64_t ts = 1000;
  for (const auto& [id, items] : sessions)
    for (const auto& item : items) out.push_back({id, ts++, item});
  return out;
}

std::vector<std::vector<std::string>> items_of(const std::vector<RawSession>& sessions) {
  std::vector<std::vector<std::string>> out;
  for (const auto& s : sessions) out.push_back(s.items);
  return out;
}

std::vector<RawSession> sessions_at(std::initializer_list<std::int64_t> starts) {
  std::vector<RawSession> out;
  for (auto t : starts) out.push_back({{"i" + std::to_string(t), "j"}, t});
  return out;
}

fs::path scratch_dir(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("casif_corpus_" + name);
  fs::remove_all(dir);
  return dir;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

ProcessedDataset small_dataset() {
  const std::vector<RawSession> train = {{{"x", "y", "z"}, 1}, {{"y", "x"}, 2}};
  const std::vector<RawSession> test = {{{"z", "x", "q", "y"}, 5}};
  return build_vocab_and_reindex(train, test, {{"note", "unit"}});
}

}  // namespace

TEST_SUITE("timestamps") {
  TEST_CASE("iso timestamp with zulu suffix") {
    CHECK(parse_timestamp("2014-04-07T10:51:09Z") == 1396867869000);
    CHECK(parse_timestamp("2014-04-07T10:51:09Z") == oracle::civil_to_epoch_ms(2014, 4, 7, 10, 51, 9));
  }

  TEST_CASE("fractions, offsets and plain dates") {
    CHECK(parse_timestamp("2014-04-07T10:51:09.027Z") ==
          oracle::civil_to_epoch_ms(2014, 4, 7, 10, 51, 9, 27));
    CHECK(parse_timestamp("2014-04-07T12:51:09+02:00") == 1396867869000);
    CHECK(parse_timestamp("2014-04-07T05:51:09-05:00") == 1396867869000);
    CHECK(parse_timestamp("2016-01-01") == oracle::civil_to_epoch_ms(2016, 1, 1));
    CHECK(parse_timestamp("2016-02-29 23:59:59") == oracle::civil_to_epoch_ms(2016, 2, 29, 23, 59, 59));
    CHECK(parse_timestamp("1396867869000") == 1396867869000);
  }

  TEST_CASE("random calendar dates agree with the day-walk oracle") {
    Rng rng(5);
    for (int i = 0; i < 500; ++i) {
      const int y = static_cast<int>(rng.range(1970, 2099)), mo = static_cast<int>(rng.range(1, 12));
      const int d = static_cast<int>(rng.range(1, 28)), h = static_cast<int>(rng.range(0, 23));
      const int mi = static_cast<int>(rng.range(0, 59)), s = static_cast<int>(rng.range(0, 59));
      char buf[40];
      std::snprintf(buf, sizeof buf, "%04d-%02d-%02dT%02d:%02d:%02dZ", y, mo, d, h, mi, s);
      CHECK(parse_timestamp(buf) == oracle::civil_to_epoch_ms(y, mo, d, h, mi, s));
    }
  }

  TEST_CASE("garbage is rejected") {
    for (const char* bad : {"notatime", "", "2014-13-01", "2014-02-30", "2014-04-07T25:00:00Z", "12ab"})
      CHECK_THROWS_AS(parse_timestamp(bad), DataError);
  }
}

TEST_SUITE("parse_click_log") {
  TEST_CASE("one event per valid line") {
    std::istringstream in("s1,2014-04-07T10:51:09Z,214536502\n");
    const ParsedLog log = parse_click_log(in, {});
    REQUIRE(log.events.size() == 1);
    CHECK(log.events[0] == ClickEvent{"s1", 1396867869000, "214536502"});
    CHECK(log.skipped == 0);
  }

  TEST_CASE("empty stream") {
    std::istringstream in("");
    const ParsedLog log = parse_click_log(in, {});
    CHECK(log.events.empty());
    CHECK(log.skipped == 0);
  }

  TEST_CASE("lenient mode counts and skips bad lines") {
    std::istringstream in("s1,notatime,42\ns1,5,43\ns2,7\n");
    const ParsedLog log = parse_click_log(in, {});
    REQUIRE(log.events.size() == 1);
    CHECK(log.events[0] == ClickEvent{"s1", 5, "43"});
    CHECK(log.skipped == 2);
  }

  TEST_CASE("strict mode reports the line number") {
    std::istringstream in("s1,1,42\ns1,notatime,42\n");
    LogFormat fmt;
    fmt.strict = true;
    try {
      parse_click_log(in, fmt);
      FAIL("expected an error");
    } catch (const DataError& e) {
      CHECK(std::string(e.what()).find("line 2") != std::string::npos);
    }
  }

  TEST_CASE("custom layout with header") {
    std::istringstream in("sessionId;userId;itemId;timeframe;eventdate\n1;;81766;526309;1462060800000\n");
    LogFormat fmt;
    fmt.delimiter = ';';
    fmt.has_header = true;
    fmt.time_col = 4;
    const ParsedLog log = parse_click_log(in, fmt);
    REQUIRE(log.events.size() == 1);
    CHECK(log.events[0] == ClickEvent{"1", 1462060800000, "81766"});
  }
}

TEST_SUITE("sessionize_and_filter") {
  TEST_CASE("low-support items then short sessions are removed") {
    const auto events = events_of({{"A", {"x", "y"}}, {"B", {"x"}}, {"C", {"x", "y", "x"}}});
    const auto out = sessionize_and_filter(events, {2, 2, 0});
    CHECK(items_of(out) == std::vector<std::vector<std::string>>{{"x", "y"}, {"x", "y", "x"}});
  }

  TEST_CASE("support threshold can remove everything") {
    const auto events = events_of({{"A", {"x", "y"}}});
    CHECK(sessionize_and_filter(events, {5, 2, 0}).empty());
  }

  TEST_CASE("unit thresholds only group") {
    const auto events = events_of({{"A", {"x", "y"}}, {"B", {"x"}}, {"C", {"x", "y", "x"}}});
    const auto out = sessionize_and_filter(events, {1, 1, 0});
    CHECK(items_of(out) == std::vector<std::vector<std::string>>{{"x", "y"}, {"x"}, {"x", "y", "x"}});
  }

  TEST_CASE("clicks sorted by time, ties keep file order, sessions by start") {
    const std::vector<ClickEvent> events = {
        {"late", 50, "a"}, {"early", 30, "c"}, {"early", 10, "b"}, {"early", 30, "d"}, {"late", 40, "e"}};
    const auto out = sessionize_and_filter(events, {1, 1, 0});
    REQUIRE(out.size() == 2);
    CHECK(out[0].items == std::vector<std::string>{"b", "c", "d"});
    CHECK(out[0].start_time == 10);
    CHECK(out[1].items == std::vector<std::string>{"e", "a"});
    CHECK(out[1].start_time == 40);
  }

  TEST_CASE("length cap keeps the most recent clicks") {
    const auto events = events_of({{"A", {"a", "b", "c", "d"}}});
    CHECK(sessionize_and_filter(events, {1, 2, 3})[0].items == std::vector<std::string>{"b", "c", "d"});
  }

  TEST_CASE("second pass is a no-op when the first pass leaves supports intact") {
    Rng rng(21);
    int stable_cases = 0;
    for (int trial = 0; trial < 300; ++trial) {
      std::vector<ClickEvent> events;
      const auto sessions = rng.range(1, 12);
      for (std::int64_t s = 0; s < sessions; ++s) {
        const auto len = rng.range(1, 6);
        for (std::int64_t j = 0; j < len; ++j)
          events.push_back({"s" + std::to_string(s), s * 1000 + j, std::to_string(rng.below(6))});
      }
      const FilterConfig cfg{2, 2, 0};
      const auto first = sessionize_and_filter(events, cfg);
      std::map<std::string, std::size_t> support;
      std::vector<ClickEvent> flat;
      for (std::size_t s = 0; s < first.size(); ++s)
        for (std::size_t j = 0; j < first[s].items.size(); ++j) {
          ++support[first[s].items[j]];
          flat.push_back({"r" + std::to_string(s), first[s].start_time + static_cast<std::int64_t>(j),
                          first[s].items[j]});
        }
      bool meets = true;
      for (const auto& [item, count] : support) meets = meets && count >= cfg.min_item_support;
      if (!meets) continue;
      ++stable_cases;
      CHECK(sessionize_and_filter(flat, cfg) == first);
    }
    CHECK(stable_cases > 50);
  }
}

TEST_SUITE("split and fraction") {
  TEST_CASE("time split is strict") {
    const auto s = sessions_at({10, 20, 30});
    auto [train, test] = time_split(s, 25);
    CHECK(train.size() == 2);
    CHECK(test.size() == 1);
    std::tie(train, test) = time_split(s, 0);
    CHECK(train.empty());
    CHECK(test.size() == 3);
    std::tie(train, test) = time_split(s, 20);
    CHECK(train.size() == 1);
    CHECK(test.front().start_time == 20);
  }

  TEST_CASE("recent fraction uses the ceiling") {
    std::vector<RawSession> s64;
    for (int i = 0; i < 64; ++i) s64.push_back({{"a", "b"}, i});
    const auto one = take_recent_fraction(s64, Fraction::parse("1/64"));
    REQUIRE(one.size() == 1);
    CHECK(one[0].start_time == 63);
    CHECK(take_recent_fraction(s64, Fraction::parse("1")) == s64);

    const std::vector<RawSession> s10(s64.begin(), s64.begin() + 10);
    const auto quarter = take_recent_fraction(s10, Fraction::parse("1/4"));
    REQUIRE(quarter.size() == 3);
    CHECK(quarter.front().start_time == 7);
  }

  TEST_CASE("fractions outside (0, 1] are configuration errors") {
    for (const char* bad : {"0", "0/4", "5/4", "1/0", "a/b", "-1/2", ""})
      CHECK_THROWS_AS(Fraction::parse(bad), ConfigError);
    CHECK_THROWS_AS(take_recent_fraction({}, Fraction{0, 1}), ConfigError);
    CHECK(Fraction::parse("1/64").to_string() == "1/64");
  }
}

TEST_SUITE("prefixes and vocabulary") {
  TEST_CASE("prefix expansion") {
    const auto abc = expand_prefixes({{0, 1, 2}, 0});
    CHECK(abc == std::vector<PrefixExample>{{{0}, 1}, {{0, 1}, 2}});
    CHECK(expand_prefixes({{0, 1}, 0}) == std::vector<PrefixExample>{{{0}, 1}});
    CHECK(expand_prefixes({{0}, 0}).empty());
  }

  TEST_CASE("unknown test items dropped before the length check") {
    const auto ds = build_vocab_and_reindex({{{"x", "y"}, 0}}, {{{"x", "z", "y"}, 1}});
    CHECK(ds.vocab.raw_ids() == std::vector<std::string>{"x", "y"});
    CHECK(ds.vocab.index_of("y") == 1);
    CHECK(ds.test == std::vector<PrefixExample>{{{0}, 1}});
  }

  TEST_CASE("all-unknown test session vanishes") {
    const auto ds = build_vocab_and_reindex({{{"x", "y"}, 0}}, {{{"z", "w"}, 1}});
    CHECK(ds.test.empty());
  }

  TEST_CASE("vocabulary in first-occurrence order") {
    const auto ds = build_vocab_and_reindex({{{"x", "y"}, 0}, {{"y", "x"}, 1}}, {});
    CHECK(ds.num_items() == 2);
    CHECK(ds.train == std::vector<PrefixExample>{{{0}, 1}, {{1}, 0}});
  }

  TEST_CASE("empty train is a data error") {
    CHECK_THROWS_AS(build_vocab_and_reindex({}, {{{"x", "y"}, 0}}), DataError);
    ItemVocabulary v;
    CHECK_THROWS_AS(v.index_of("nope"), DataError);
  }

  TEST_CASE("prefix count and vocabulary closure on random corpora") {
    Rng rng(8);
    for (int trial = 0; trial < 100; ++trial) {
      std::vector<ClickEvent> events;
      for (int s = 0; s < 30; ++s) {
        const auto len = rng.range(1, 7);
        for (std::int64_t j = 0; j < len; ++j)
          events.push_back({"s" + std::to_string(s), s * 100 + j, std::to_string(rng.below(15))});
      }
      PreprocessConfig cfg;
      cfg.filter = {2, 2, 50};
      cfg.split_ts = 2000;
      const auto sessions = sessionize_and_filter(events, cfg.filter);
      auto [train, test] = time_split(sessions, 2000);
      if (train.empty()) continue;
      const auto ds = preprocess(events, cfg);
      std::size_t expected = 0;
      for (const auto& s : train) expected += s.items.size() - 1;
      CHECK(ds.train.size() == expected);
      for (const auto* split : {&ds.train, &ds.test})
        for (const auto& ex : *split) {
          CHECK(ex.label < ds.num_items());
          for (auto i : ex.prefix) CHECK(i < ds.num_items());
        }
    }
  }

  TEST_CASE("default split keeps the final window for test") {
    std::vector<ClickEvent> events;
    for (int s = 0; s < 10; ++s)
      for (int j = 0; j < 3; ++j)
        events.push_back({"s" + std::to_string(s), s * 86'400'000LL + j, std::to_string(j)});
    PreprocessConfig cfg;
    cfg.filter = {1, 2, 50};
    const auto ds = preprocess(events, cfg);
    const CorpusStats st = stats_from_provenance(ds);
    // Last click is at day 9 + 2 ms; the split lands at day 8 + 2 ms.
    CHECK(st.train_sessions == 9);
    CHECK(st.test_sessions == 1);
    CHECK(ds.provenance["split_ts"].get<std::int64_t>() == 8 * 86'400'000LL + 2);
  }
}

TEST_SUITE("persistence") {
  TEST_CASE("round trip") {
    const auto ds = small_dataset();
    const auto dir = scratch_dir("roundtrip");
    persist_dataset(ds, dir);
    CHECK(load_dataset(dir) == ds);
  }

  TEST_CASE("empty test split round trips") {
    const auto ds = build_vocab_and_reindex({{{"x", "y"}, 0}}, {});
    const auto dir = scratch_dir("empty_test");
    persist_dataset(ds, dir);
    const auto back = load_dataset(dir);
    CHECK(back.test.empty());
    CHECK(back == ds);
  }

  TEST_CASE("persisting twice is byte-identical") {
    const auto a = scratch_dir("bytes_a"), b = scratch_dir("bytes_b");
    persist_dataset(small_dataset(), a);
    persist_dataset(small_dataset(), b);
    CHECK(slurp(a / kDatasetFile) == slurp(b / kDatasetFile));
    CHECK(slurp(a / kVocabFile) == slurp(b / kVocabFile));
  }

  TEST_CASE("wrong header is a version mismatch") {
    const auto dir = scratch_dir("bad_header");
    persist_dataset(small_dataset(), dir);
    std::string text = slurp(dir / kDatasetFile);
    text.replace(text.find("casif-dataset"), 13, "other-dataset");
    std::ofstream(dir / kDatasetFile, std::ios::binary) << text;
    try {
      load_dataset(dir);
      FAIL("expected an error");
    } catch (const DataError& e) {
      CHECK(std::string(e.what()).find("version mismatch") != std::string::npos);
    }
  }

  TEST_CASE("malformed record names its line") {
    const auto dir = scratch_dir("bad_line");
    persist_dataset(small_dataset(), dir);
    std::ofstream(dir / kDatasetFile, std::ios::app) << "{\"split\":\"train\",\"prefix\":[0],\n";
    try {
      load_dataset(dir);
      FAIL("expected an error");
    } catch (const DataError& e) {
      const auto lines = small_dataset().train.size() + small_dataset().test.size() + 2;
      CHECK(std::string(e.what()).find(":" + std::to_string(lines) + ":") != std::string::npos);
    }
  }
}
