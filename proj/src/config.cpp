#include "casif/config.hpp"

#include <fstream>
#include <set>

#include <fmt/format.h>

#include "casif/error.hpp"

namespace casif {
namespace {

const std::set<std::string, std::less<>> kKnownKeys = {
    "preset",         "session_col",     "time_col",        "item_col",      "delimiter",
    "has_header",     "strict",          "min_item_support", "min_session_len",
    "max_session_len", "split_ts",       "test_window_ms",  "fraction",      "dim",
    "gnn_steps",      "loss_variant",    "variant",         "eq10_input",    "batch_size",
    "lr0",            "lr_decay_factor", "lr_decay_every",  "l2_lambda",     "epochs",
    "seed",           "threads",
};

constexpr std::int64_t kDayMs = 86'400'000;

template <typename T>
T get_as(const nlohmann::json& j, std::string_view key) {
  try {
    return j.get<T>();
  } catch (const nlohmann::json::exception&) {
    throw ConfigError(fmt::format("config key '{}' has the wrong type", key));
  }
}

std::size_t get_count(const nlohmann::json& j, std::string_view key) {
  if (!j.is_number_unsigned() && !(j.is_number_integer() && j.get<std::int64_t>() >= 0)) {
    throw ConfigError(fmt::format("config key '{}' must be a non-negative integer", key));
  }
  return j.get<std::size_t>();
}

}  // namespace

void Config::merge(const nlohmann::json& j) {
  if (!j.is_object()) {
    throw ConfigError("config must be a JSON object");
  }
  for (const auto& [key, value] : j.items()) {
    if (!kKnownKeys.contains(key)) {
      throw ConfigError(fmt::format("unknown config key '{}'", key));
    }
  }
  if (const auto it = j.find("preset"); it != j.end()) {
    const auto preset = get_as<std::string>(*it, "preset");
    if (preset == "yoochoose") {
      preprocess.format = LogFormat{0, 1, 2, ',', false, preprocess.format.strict};
      preprocess.test_window_ms = kDayMs;
      train.lr0 = 0.001;
    } else if (preset == "diginetica") {
      // sessionId;userId;itemId;timeframe;eventdate
      preprocess.format = LogFormat{0, 4, 2, ';', true, preprocess.format.strict};
      preprocess.test_window_ms = 7 * kDayMs;
      train.lr0 = 0.003;
    } else {
      throw ConfigError(fmt::format("unknown preset '{}' (expected yoochoose | diginetica)", preset));
    }
  }

  for (const auto& [key, v] : j.items()) {
    if (key == "preset") continue;
    if (key == "session_col") preprocess.format.session_col = get_count(v, key);
    else if (key == "time_col") preprocess.format.time_col = get_count(v, key);
    else if (key == "item_col") preprocess.format.item_col = get_count(v, key);
    else if (key == "delimiter") {
      const auto d = get_as<std::string>(v, key);
      if (d.size() != 1) {
        throw ConfigError("delimiter must be a single character");
      }
      preprocess.format.delimiter = d[0];
    }
    else if (key == "has_header") preprocess.format.has_header = get_as<bool>(v, key);
    else if (key == "strict") preprocess.format.strict = get_as<bool>(v, key);
    else if (key == "min_item_support") preprocess.filter.min_item_support = get_count(v, key);
    else if (key == "min_session_len") preprocess.filter.min_session_len = get_count(v, key);
    else if (key == "max_session_len") preprocess.filter.max_session_len = get_count(v, key);
    else if (key == "split_ts") {
      if (v.is_null()) preprocess.split_ts.reset();
      else preprocess.split_ts = get_as<std::int64_t>(v, key);
    }
    else if (key == "test_window_ms") preprocess.test_window_ms = get_as<std::int64_t>(v, key);
    else if (key == "fraction") preprocess.fraction = Fraction::parse(get_as<std::string>(v, key));
    else if (key == "dim") train.hp.dim = get_count(v, key);
    else if (key == "gnn_steps") train.hp.gnn_steps = get_count(v, key);
    else if (key == "loss_variant") train.hp.loss = parse_loss_variant(get_as<std::string>(v, key));
    else if (key == "variant") train.hp.variant = parse_variant(get_as<std::string>(v, key));
    else if (key == "eq10_input") train.hp.current_input = parse_current_input(get_as<std::string>(v, key));
    else if (key == "batch_size") train.batch_size = get_count(v, key);
    else if (key == "lr0") train.lr0 = get_as<double>(v, key);
    else if (key == "lr_decay_factor") train.lr_decay_factor = get_as<double>(v, key);
    else if (key == "lr_decay_every") train.lr_decay_every = get_count(v, key);
    else if (key == "l2_lambda") train.l2_lambda = get_as<double>(v, key);
    else if (key == "epochs") train.epochs = get_count(v, key);
    else if (key == "seed") train.seed = get_as<std::uint64_t>(v, key);
    else if (key == "threads") threads = get_count(v, key);
  }
}

Config Config::from_json(const nlohmann::json& j) {
  Config c;
  c.merge(j);
  c.validate();
  return c;
}

Config Config::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) {
    throw ConfigError(fmt::format("cannot open config file {}", path.string()));
  }
  try {
    return from_json(nlohmann::json::parse(in));
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(fmt::format("{}: {}", path.string(), e.what()));
  }
}

nlohmann::json Config::to_json() const {
  nlohmann::json j = preprocess.to_json();
  j["strict"] = preprocess.format.strict;
  j["dim"] = train.hp.dim;
  j["gnn_steps"] = train.hp.gnn_steps;
  j["loss_variant"] = to_string(train.hp.loss);
  j["variant"] = to_string(train.hp.variant);
  j["eq10_input"] = to_string(train.hp.current_input);
  j["batch_size"] = train.batch_size;
  j["lr0"] = train.lr0;
  j["lr_decay_factor"] = train.lr_decay_factor;
  j["lr_decay_every"] = train.lr_decay_every;
  j["l2_lambda"] = train.l2_lambda;
  j["epochs"] = train.epochs;
  j["seed"] = train.seed;
  j["threads"] = threads;
  return j;
}

void Config::validate() const {
  train.validate();
  if (preprocess.filter.min_session_len < 1) {
    throw ConfigError("min_session_len must be at least 1");
  }
  if (preprocess.filter.max_session_len != 0 &&
      preprocess.filter.max_session_len < preprocess.filter.min_session_len) {
    throw ConfigError("max_session_len must be 0 or at least min_session_len");
  }
  if (preprocess.test_window_ms < 0) {
    throw ConfigError("test_window_ms must be non-negative");
  }
}

}  // namespace casif
