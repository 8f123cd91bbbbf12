// casif: command-line front end for preprocessing, training, evaluation,
// prediction, gradient checking and synthetic data generation.
//
// Exit codes: 0 success, 1 usage/config error, 2 data error, 3 verification failure.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <fmt/format.h>

#include "casif/checkpoint.hpp"
#include "casif/config.hpp"
#include "casif/corpus.hpp"
#include "casif/error.hpp"
#include "casif/eval.hpp"
#include "casif/gradcheck.hpp"
#include "casif/graph.hpp"
#include "casif/kernels.hpp"
#include "casif/synth.hpp"
#include "casif/trainer.hpp"

namespace fs = std::filesystem;
using namespace casif;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitData = 2;
constexpr int kExitVerification = 3;

// Config file named by --config, else $CASIF_CONFIG, else defaults. Flags
// given on the command line are merged on top.
struct ConfigSource {
  std::string path;
  nlohmann::json overrides = nlohmann::json::object();

  Config resolve() const {
    Config cfg;
    std::string file = path;
    if (file.empty()) {
      if (const char* env = std::getenv("CASIF_CONFIG"); env != nullptr) {
        file = env;
      }
    }
    if (!file.empty()) {
      cfg = Config::load(file);
    }
    cfg.merge(overrides);
    cfg.validate();
    return cfg;
  }
};

// Registers a flag whose value, when given, lands in overrides[key].
template <typename T>
void override_flag(CLI::App* app, ConfigSource& src, const std::string& flag, const std::string& key,
                   const std::string& help) {
  app->add_option_function<T>(
      flag, [&src, key](const T& v) { src.overrides[key] = v; }, help);
}

void write_json_file(const fs::path& path, const nlohmann::json& j) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) {
    throw DataError(fmt::format("cannot write {}", path.string()));
  }
  out << j.dump(2) << '\n';
}

fs::path provenance_path(const fs::path& p) { return fs::path(p.string() + ".provenance.json"); }

std::vector<std::size_t> parse_ks(const std::string& text) {
  std::vector<std::size_t> ks;
  std::stringstream ss(text);
  std::string part;
  while (std::getline(ss, part, ',')) {
    try {
      std::size_t pos = 0;
      const auto k = std::stoul(part, &pos);
      if (pos != part.size() || k == 0) {
        throw std::invalid_argument(part);
      }
      ks.push_back(k);
    } catch (const std::exception&) {
      throw ConfigError(fmt::format("invalid cutoff '{}' in --ks", part));
    }
  }
  if (ks.empty()) {
    throw ConfigError("--ks must list at least one cutoff");
  }
  return ks;
}

std::vector<std::string> split_items(const std::string& text) {
  std::vector<std::string> out;
  std::stringstream ss(text);
  std::string part;
  while (std::getline(ss, part, ',')) {
    if (!part.empty()) {
      out.push_back(part);
    }
  }
  return out;
}

// preprocess ------------------------------------------------------------------

struct PreprocessArgs {
  ConfigSource config;
  std::string input;
  std::string out_dir;
  std::string dump_graphs;
};

int run_preprocess(const PreprocessArgs& args) {
  const Config cfg = args.config.resolve();
  std::ifstream in(args.input, std::ios::binary);
  if (!in) {
    throw DataError(fmt::format("cannot open input log {}", args.input));
  }
  const ParsedLog log = parse_click_log(in, cfg.preprocess.format);
  ProcessedDataset ds = preprocess(log.events, cfg.preprocess);
  ds.provenance["config"] = cfg.to_json();
  ds.provenance["skipped_lines"] = log.skipped;

  // Write into a sibling staging directory and rename, so a failure leaves no partial output.
  const fs::path out_dir(args.out_dir);
  const fs::path staging = out_dir.string() + ".tmp";
  fs::remove_all(staging);
  try {
    persist_dataset(ds, staging);
    if (!args.dump_graphs.empty()) {
      std::ofstream graphs(staging / "graphs.jsonl", std::ios::binary);
      for (const auto* split : {&ds.train, &ds.test}) {
        for (const auto& ex : *split) {
          graphs << graph_to_json(build_session_graph(ex.prefix)).dump() << '\n';
        }
      }
    }
  } catch (...) {
    fs::remove_all(staging);
    throw;
  }
  fs::remove_all(out_dir);
  fs::rename(staging, out_dir);
  if (!args.dump_graphs.empty()) {
    fs::rename(out_dir / "graphs.jsonl", args.dump_graphs);
  }

  const CorpusStats s = stats_from_provenance(ds);
  std::cout << fmt::format("{:<16}{:>12}\n", "Statistics", "value")
            << fmt::format("{:<16}{:>12}\n", "all the clicks", s.clicks)
            << fmt::format("{:<16}{:>12}\n", "train sessions", s.train_sessions)
            << fmt::format("{:<16}{:>12}\n", "test sessions", s.test_sessions)
            << fmt::format("{:<16}{:>12}\n", "all the items", s.items)
            << fmt::format("{:<16}{:>12.2f}\n", "average length", s.average_length)
            << fmt::format("{:<16}{:>12}\n", "train examples", ds.train.size())
            << fmt::format("{:<16}{:>12}\n", "test examples", ds.test.size())
            << fmt::format("{:<16}{:>12}\n", "skipped lines", log.skipped);
  return kExitOk;
}

// train -----------------------------------------------------------------------

struct TrainArgs {
  ConfigSource config;
  std::string dataset;
  std::string checkpoint;
  std::string log;
  std::string resume;
  bool print_config = false;
};

int run_train(const TrainArgs& args) {
  const Config cfg = args.config.resolve();
  std::cout << "effective config: " << cfg.to_json().dump() << '\n';
  if (args.print_config) {
    return kExitOk;
  }
  if (args.dataset.empty() || args.checkpoint.empty()) {
    throw ConfigError("train requires --dataset and --checkpoint");
  }
  set_worker_threads(cfg.threads);
  const ProcessedDataset ds = load_dataset(args.dataset);

  TrainState state;
  if (!args.resume.empty()) {
    const Checkpoint prev = load_checkpoint(args.resume);
    if (!(prev.hp == cfg.train.hp)) {
      throw ConfigError("resume checkpoint hyperparameters differ from the configuration");
    }
    if (prev.params.num_items() != ds.num_items()) {
      throw DataError(fmt::format("checkpoint has {} items, dataset has {}", prev.params.num_items(),
                                  ds.num_items()));
    }
    state = prev.to_state();
  } else {
    state = init_train_state(ds.num_items(), cfg.train);
  }

  std::ofstream log_out;
  if (!args.log.empty()) {
    const auto mode = args.resume.empty() ? std::ios::trunc : std::ios::app;
    log_out.open(args.log, std::ios::binary | mode);
    if (!log_out) {
      throw DataError(fmt::format("cannot write log {}", args.log));
    }
  }
  const EpochHook hook = [&](EpochLog& log, const ParamSet&) {
    const auto line = log.to_json().dump();
    std::cout << line << std::endl;
    if (log_out.is_open()) {
      log_out << line << '\n' << std::flush;
    }
  };
  train_epochs(ds.train, cfg.train, state, hook);

  save_checkpoint(args.checkpoint, Checkpoint::from_state(state, cfg.train.hp));
  write_json_file(provenance_path(args.checkpoint),
                  {{"command", "train"},
                   {"config", cfg.to_json()},
                   {"dataset", args.dataset},
                   {"dataset_provenance", ds.provenance},
                   {"resumed_from", args.resume}});
  return kExitOk;
}

// evaluate --------------------------------------------------------------------

struct EvaluateArgs {
  std::string dataset;
  std::string checkpoint;
  std::string baseline;
  std::string ks = "5,10,20";
  std::string split = "test";
  std::string out;
  bool split_length = false;
  std::size_t threads = 1;
};

int run_evaluate(const EvaluateArgs& args) {
  const auto ks = parse_ks(args.ks);
  if (args.split != "test" && args.split != "train") {
    throw ConfigError("--split must be test or train");
  }
  if (!args.baseline.empty() && args.baseline != "pop") {
    throw ConfigError(fmt::format("unknown baseline '{}' (expected pop)", args.baseline));
  }
  if (args.baseline.empty() && args.checkpoint.empty()) {
    throw ConfigError("evaluate requires --checkpoint unless --baseline pop is given");
  }
  set_worker_threads(args.threads);
  const ProcessedDataset ds = load_dataset(args.dataset);
  const auto& examples = args.split == "test" ? ds.test : ds.train;
  if (examples.empty()) {
    throw DataError(fmt::format("the {} split is empty", args.split));
  }

  MetricsReport report;
  nlohmann::json provenance = {{"command", "evaluate"}, {"dataset", args.dataset},
                               {"split", args.split},   {"ks", ks},
                               {"dataset_provenance", ds.provenance}};
  if (args.baseline == "pop") {
    report = pop_baseline(ds.train, examples, ds.num_items(), ks);
    provenance["model"] = "pop";
  } else {
    const Checkpoint ckpt = load_checkpoint(args.checkpoint);
    if (ckpt.params.num_items() != ds.num_items()) {
      throw DataError(fmt::format(
          "incompatible checkpoint: it scores {} items but the dataset vocabulary has {}",
          ckpt.params.num_items(), ds.num_items()));
    }
    report = evaluate_model(ckpt.params, ckpt.hp, examples, ks);
    provenance["model"] = to_string(ckpt.hp.variant);
    provenance["checkpoint"] = args.checkpoint;
  }
  if (!args.split_length) {
    std::erase_if(report.rows, [](const MetricRow& r) { return r.bucket != Bucket::kAll; });
  }

  std::cout << report.to_table();
  if (!args.out.empty()) {
    write_json_file(args.out, {{"provenance", provenance}, {"metrics", report.to_json()}});
  }
  return kExitOk;
}

// predict ---------------------------------------------------------------------

struct PredictArgs {
  std::string checkpoint;
  std::string dataset;
  std::string items;
  std::size_t k = 20;
};

int run_predict(const PredictArgs& args) {
  const Checkpoint ckpt = load_checkpoint(args.checkpoint);
  const ProcessedDataset ds = load_dataset(args.dataset);
  if (ckpt.params.num_items() != ds.num_items()) {
    throw DataError("incompatible checkpoint and dataset vocabulary");
  }
  const auto raw = split_items(args.items);
  if (raw.empty()) {
    throw ConfigError("--items must list at least one item id");
  }
  std::vector<std::string> unknown;
  std::vector<ItemIndex> prefix;
  for (const auto& id : raw) {
    if (ds.vocab.contains(id)) {
      prefix.push_back(ds.vocab.index_of(id));
    } else {
      unknown.push_back(id);
    }
  }
  if (!unknown.empty()) {
    std::string list;
    for (const auto& id : unknown) {
      list += (list.empty() ? "" : ", ") + id;
    }
    throw DataError(fmt::format("unknown item ids: {}", list));
  }
  if (args.k < 1 || args.k > ds.num_items()) {
    throw ConfigError(fmt::format("k = {} must lie in [1, {}]", args.k, ds.num_items()));
  }
  const Vector scores = score_prefix(prefix, ckpt.params, ckpt.hp);
  for (const auto item : rank_topk(scores, args.k)) {
    std::cout << fmt::format("{}\t{:.6f}\n", ds.vocab.raw_of(item), scores[item]);
  }
  return kExitOk;
}

// gradcheck -------------------------------------------------------------------

struct GradcheckArgs {
  std::string variant = "both";
  std::size_t seeds = 20;
  std::uint64_t seed = 0;
  bool sabotage = false;
};

int run_gradcheck_cmd(const GradcheckArgs& args) {
  GradcheckOptions opts;
  opts.seeds = args.seeds;
  opts.base_seed = args.seed;
  opts.sabotage = args.sabotage;
  if (args.variant != "both") {
    opts.variants = {parse_variant(args.variant)};
  }
  const GradcheckReport report = run_gradcheck(opts);
  for (const auto& c : report.cases) {
    std::cout << fmt::format("seed={:<3} variant={:<8} loss={:<11} steps={} n={} worst={:.3e} ({})\n",
                             c.seed, to_string(c.hp.variant), to_string(c.hp.loss), c.hp.gnn_steps,
                             c.prefix_len, c.worst_error, c.worst_param);
  }
  std::cout << fmt::format("gradcheck {}: {} cases, worst relative error {:.3e} (tolerance {:.0e})\n",
                           report.passed ? "PASS" : "FAIL", report.cases.size(), report.worst_error,
                           opts.tolerance);
  return report.passed ? kExitOk : kExitVerification;
}

// synth -----------------------------------------------------------------------

struct SynthArgs {
  SynthSpec spec;
  std::string mode = "markov";
  std::string out;
};

int run_synth(SynthArgs args) {
  args.spec.model = parse_transition_model(args.mode);
  args.spec.validate();
  std::ostringstream buffer;
  write_synth_log(buffer, args.spec);
  if (args.out.empty() || args.out == "-") {
    std::cout << buffer.str();
    return kExitOk;
  }
  std::ofstream out(args.out, std::ios::binary | std::ios::trunc);
  if (!out) {
    throw DataError(fmt::format("cannot write {}", args.out));
  }
  out << buffer.str();
  write_json_file(provenance_path(args.out), {{"command", "synth"}, {"spec", args.spec.to_json()}});
  return kExitOk;
}

void add_config_flags(CLI::App* app, ConfigSource& src) {
  app->add_option("--config", src.path, "JSON config file (falls back to $CASIF_CONFIG)");
  override_flag<std::uint64_t>(app, src, "--seed", "seed", "random seed");
  override_flag<std::size_t>(app, src, "--threads", "threads", "worker threads (default 1)");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Session-based next-item recommendation with gated graph propagation"};
  app.require_subcommand(1);

  PreprocessArgs pre;
  auto* pre_cmd = app.add_subcommand("preprocess", "filter, split and index a raw click log");
  pre_cmd->add_option("--input", pre.input, "raw click log")->required();
  pre_cmd->add_option("--out", pre.out_dir, "output dataset directory")->required();
  pre_cmd->add_option("--dump-graphs", pre.dump_graphs, "write every prefix graph as JSON lines");
  add_config_flags(pre_cmd, pre.config);
  override_flag<std::string>(pre_cmd, pre.config, "--preset", "preset", "yoochoose | diginetica");
  override_flag<std::string>(pre_cmd, pre.config, "--delimiter", "delimiter", "field delimiter");
  override_flag<std::size_t>(pre_cmd, pre.config, "--session-col", "session_col", "session id column");
  override_flag<std::size_t>(pre_cmd, pre.config, "--time-col", "time_col", "timestamp column");
  override_flag<std::size_t>(pre_cmd, pre.config, "--item-col", "item_col", "item id column");
  override_flag<bool>(pre_cmd, pre.config, "--has-header", "has_header", "skip the first line");
  override_flag<bool>(pre_cmd, pre.config, "--strict", "strict", "abort on malformed lines");
  override_flag<std::size_t>(pre_cmd, pre.config, "--min-support", "min_item_support",
                             "minimum item occurrences");
  override_flag<std::size_t>(pre_cmd, pre.config, "--min-len", "min_session_len", "minimum session length");
  override_flag<std::size_t>(pre_cmd, pre.config, "--max-len", "max_session_len",
                             "session length cap (0 = none)");
  override_flag<std::int64_t>(pre_cmd, pre.config, "--split-ts", "split_ts", "split timestamp (ms)");
  override_flag<std::int64_t>(pre_cmd, pre.config, "--test-window-ms", "test_window_ms",
                              "test window before the last click (ms)");
  override_flag<std::string>(pre_cmd, pre.config, "--fraction", "fraction",
                             "most recent fraction of training sessions, e.g. 1/64");

  TrainArgs tr;
  auto* train_cmd = app.add_subcommand("train", "train a model on a processed dataset");
  train_cmd->add_option("--dataset", tr.dataset, "processed dataset directory");
  train_cmd->add_option("--checkpoint", tr.checkpoint, "checkpoint to write");
  train_cmd->add_option("--log", tr.log, "append per-epoch JSON records here");
  train_cmd->add_option("--resume", tr.resume, "continue from this checkpoint");
  train_cmd->add_flag("--print-config", tr.print_config, "print the effective config and exit");
  add_config_flags(train_cmd, tr.config);
  override_flag<std::string>(train_cmd, tr.config, "--preset", "preset", "yoochoose | diginetica");
  override_flag<std::size_t>(train_cmd, tr.config, "--dim", "dim", "embedding dimension");
  override_flag<std::size_t>(train_cmd, tr.config, "--gnn-steps", "gnn_steps", "propagation steps");
  override_flag<std::string>(train_cmd, tr.config, "--variant", "variant", "casif | casif_s");
  override_flag<std::string>(train_cmd, tr.config, "--loss", "loss_variant", "eq13 | softmax_ce");
  override_flag<std::string>(train_cmd, tr.config, "--eq10-input", "eq10_input",
                             "current-interest MLP input: h_n | c_a");
  override_flag<std::size_t>(train_cmd, tr.config, "--batch-size", "batch_size", "batch size");
  override_flag<double>(train_cmd, tr.config, "--lr", "lr0", "initial learning rate");
  override_flag<double>(train_cmd, tr.config, "--lr-decay", "lr_decay_factor", "decay factor");
  override_flag<std::size_t>(train_cmd, tr.config, "--lr-decay-every", "lr_decay_every",
                             "epochs between decays (0 = never)");
  override_flag<double>(train_cmd, tr.config, "--l2", "l2_lambda", "L2 penalty");
  override_flag<std::size_t>(train_cmd, tr.config, "--epochs", "epochs", "number of epochs");

  EvaluateArgs ev;
  auto* eval_cmd = app.add_subcommand("evaluate", "Recall@k and MRR@k on a dataset split");
  eval_cmd->add_option("--dataset", ev.dataset, "processed dataset directory")->required();
  eval_cmd->add_option("--checkpoint", ev.checkpoint, "trained checkpoint");
  eval_cmd->add_option("--baseline", ev.baseline, "evaluate a baseline instead (pop)");
  eval_cmd->add_option("--ks", ev.ks, "comma-separated cutoffs")->capture_default_str();
  eval_cmd->add_option("--split", ev.split, "test | train")->capture_default_str();
  eval_cmd->add_option("--out", ev.out, "write the report as JSON");
  eval_cmd->add_option("--threads", ev.threads, "worker threads")->capture_default_str();
  eval_cmd->add_flag("--split-length", ev.split_length, "add short (<= 5) and long prefix rows");

  PredictArgs pr;
  auto* pred_cmd = app.add_subcommand("predict", "top-k next items for a session");
  pred_cmd->add_option("--checkpoint", pr.checkpoint, "trained checkpoint")->required();
  pred_cmd->add_option("--dataset", pr.dataset, "dataset directory holding the vocabulary")->required();
  pred_cmd->add_option("--items", pr.items, "comma-separated raw item ids in click order")->required();
  pred_cmd->add_option("-k,--k", pr.k, "number of recommendations")->capture_default_str();

  GradcheckArgs gc;
  auto* gc_cmd = app.add_subcommand("gradcheck", "compare analytic and finite-difference gradients");
  gc_cmd->add_option("--variant", gc.variant, "casif | casif_s | both")->capture_default_str();
  gc_cmd->add_option("--seeds", gc.seeds, "random instances per configuration")->capture_default_str();
  gc_cmd->add_option("--seed", gc.seed, "first seed")->capture_default_str();
  gc_cmd->add_flag("--sabotage", gc.sabotage, "perturb the analytic gradient (negative control)");

  SynthArgs sy;
  auto* synth_cmd = app.add_subcommand("synth", "generate a synthetic click log");
  synth_cmd->add_option("--out", sy.out, "output file ('-' for stdout)");
  synth_cmd->add_option("--mode", sy.mode, "markov | functional")->capture_default_str();
  synth_cmd->add_option("--items", sy.spec.num_items, "number of items")->capture_default_str();
  synth_cmd->add_option("--sessions", sy.spec.num_sessions, "number of sessions")->capture_default_str();
  synth_cmd->add_option("--min-len", sy.spec.min_len, "minimum session length")->capture_default_str();
  synth_cmd->add_option("--max-len", sy.spec.max_len, "maximum session length")->capture_default_str();
  synth_cmd->add_option("--successors", sy.spec.successors, "markov successors per item")
      ->capture_default_str();
  synth_cmd->add_option("--seed", sy.spec.seed, "random seed")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (*pre_cmd) return run_preprocess(pre);
    if (*train_cmd) return run_train(tr);
    if (*eval_cmd) return run_evaluate(ev);
    if (*pred_cmd) return run_predict(pr);
    if (*gc_cmd) return run_gradcheck_cmd(gc);
    if (*synth_cmd) return run_synth(sy);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const ArgumentError& e) {
    std::cerr << "argument error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const NumericError& e) {
    std::cerr << "numeric error: " << e.what() << '\n';
    return kExitData;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitData;
  }
  return kExitUsage;
}
