#include <doctest.h>

#include <sys/wait.h>

#include <algorithm>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

#include <json.hpp>

namespace fs = std::filesystem;

namespace {

struct Result {
  int code = -1;
  std::string output;
};

Result run(const std::string& args, const std::string& env = "") {
  const std::string cmd = env + " " + CASIF_CLI_PATH + " " + args + " 2>&1";
  Result r;
  FILE* pipe = popen(cmd.c_str(), "r");
  REQUIRE(pipe != nullptr);
  char buf[4096];
  std::size_t n = 0;
  while ((n = std::fread(buf, 1, sizeof buf, pipe)) > 0) r.output.append(buf, n);
  const int status = pclose(pipe);
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

nlohmann::json json_tail(const std::string& out) { return nlohmann::json::parse(out.substr(out.find('{'))); }

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

// Fresh working directory per test case.
struct Workdir {
  fs::path dir;
  explicit Workdir(const std::string& name) : dir(fs::temp_directory_path() / ("casif_cli_" + name)) {
    fs::remove_all(dir);
    fs::create_directories(dir);
  }
  std::string operator/(const std::string& f) const { return (dir / f).string(); }
};

// a=[x,y]  b=[x]  c=[x,y,z]  d=[x,y] (after the split). z occurs once.
const char* kTinyLog =
    "a,1000,x\n"
    "a,2000,y\n"
    "b,3000,x\n"
    "c,4000,x\n"
    "c,5000,y\n"
    "c,6000,z\n"
    "d,90000000,x\n"
    "d,90001000,y\n";

// Trains a small model on functional synthetic data; returns the checkpoint path.
std::string trained_model(const Workdir& w, const std::string& extra = "") {
  REQUIRE(run("synth --mode functional --items 8 --sessions 60 --max-len 5 --seed 3 --out " + w / "log.csv").code == 0);
  REQUIRE(run("preprocess --input " + w / "log.csv" + " --out " + w / "ds" + " --min-support 1 --test-window-ms 600000")
              .code == 0);
  const auto r = run("train --dataset " + w / "ds" + " --checkpoint " + w / "m.ckpt" +
                     " --dim 8 --epochs 3 --lr 0.01 --seed 2 --log " + w / "log.jsonl " + extra);
  REQUIRE_MESSAGE(r.code == 0, r.output);
  return w / "m.ckpt";
}

}  // namespace

TEST_SUITE("preprocess") {
  TEST_CASE("tiny log statistics by hand") {
    Workdir w("pre_tiny");
    std::ofstream(w / "log.csv") << kTinyLog;
    const auto r = run("preprocess --input " + w / "log.csv" + " --out " + w / "ds" +
                       " --min-support 2 --split-ts 86400000");
    REQUIRE_MESSAGE(r.code == 0, r.output);
    // Kept: a=[x,y], c=[x,y] in train, d=[x,y] in test; b is too short.
    CHECK(r.output.find("all the clicks             6") != std::string::npos);
    CHECK(r.output.find("train sessions             2") != std::string::npos);
    CHECK(r.output.find("test sessions              1") != std::string::npos);
    CHECK(r.output.find("all the items              2") != std::string::npos);
    CHECK(r.output.find("average length          2.00") != std::string::npos);
    CHECK(fs::exists(w / "ds/dataset.jsonl"));
    CHECK(fs::exists(w / "ds/vocab.jsonl"));
    const std::string text = slurp(w / "ds/dataset.jsonl");
    const auto header = nlohmann::json::parse(text.substr(0, text.find('\n')));
    CHECK(header["format"] == "casif-dataset");
    CHECK(header["num_items"] == 2);
    CHECK(header["provenance"]["config"]["min_item_support"] == 2);
  }

  TEST_CASE("fraction keeps the ceiling of recent sessions") {
    Workdir w("pre_fraction");
    {
      std::ofstream log(w / "log.csv");
      for (int s = 0; s < 130; ++s) log << "s" << s << "," << s * 1000 << ",x\n" << "s" << s << "," << s * 1000 + 1 << ",y\n";
    }
    const auto r = run("preprocess --input " + w / "log.csv" + " --out " + w / "ds" +
                       " --min-support 1 --split-ts 1000000000 --fraction 1/64");
    REQUIRE_MESSAGE(r.code == 0, r.output);
    CHECK(r.output.find("train sessions             3") != std::string::npos);
  }

  TEST_CASE("missing input leaves nothing behind") {
    Workdir w("pre_missing");
    const auto r = run("preprocess --input " + w / "nope.csv" + " --out " + w / "ds");
    CHECK(r.code == 2);
    CHECK_FALSE(fs::exists(w / "ds"));
    CHECK_FALSE(fs::exists(w / "ds.tmp"));
  }

  TEST_CASE("graph dump") {
    Workdir w("pre_graphs");
    std::ofstream(w / "log.csv") << kTinyLog;
    REQUIRE(run("preprocess --input " + w / "log.csv" + " --out " + w / "ds" +
                " --min-support 2 --split-ts 86400000 --dump-graphs " + w / "g.jsonl")
                .code == 0);
    std::ifstream in(w / "g.jsonl");
    std::string line;
    int lines = 0;
    while (std::getline(in, line)) {
      const auto j = nlohmann::json::parse(line);
      CHECK(j.contains("m_in"));
      ++lines;
    }
    CHECK(lines == 3);
  }
}

TEST_SUITE("train") {
  TEST_CASE("default configuration echo") {
    const auto r = run("train --print-config");
    REQUIRE(r.code == 0);
    const auto j = json_tail(r.output);
    CHECK(j["dim"] == 100);
    CHECK(j["batch_size"] == 128);
    CHECK(j["lr0"] == 0.001);
  }

  TEST_CASE("config file, environment fallback and flag precedence") {
    Workdir w("train_cfg");
    std::ofstream(w / "c.json") << R"({"dim": 12, "epochs": 4})";
    auto j = json_tail(run("train --print-config --config " + w / "c.json").output);
    CHECK(j["dim"] == 12);
    j = json_tail(run("train --print-config --dim 5", "CASIF_CONFIG=" + w / "c.json").output);
    CHECK(j["dim"] == 5);
    CHECK(j["epochs"] == 4);
  }

  TEST_CASE("invalid config fails before training") {
    Workdir w("train_bad");
    std::ofstream(w / "c.json") << R"({"dim": 12, "learning_rate": 4})";
    auto r = run("train --config " + w / "c.json" + " --dataset " + w / "ds --checkpoint " + w / "m.ckpt");
    CHECK(r.code == 1);
    CHECK(r.output.find("learning_rate") != std::string::npos);
    r = run("train --epochs 0 --dataset " + w / "ds --checkpoint " + w / "m.ckpt");
    CHECK(r.code == 1);
    CHECK_FALSE(fs::exists(w / "m.ckpt"));
    CHECK(run("frobnicate").code == 1);
  }

  TEST_CASE("rerun gives identical checkpoint bytes and a JSON log") {
    Workdir w("train_determinism");
    const auto ckpt = trained_model(w);
    const std::string first = slurp(ckpt);
    const auto r = run("train --dataset " + w / "ds" + " --checkpoint " + w / "m2.ckpt" +
                       " --dim 8 --epochs 3 --lr 0.01 --seed 2");
    REQUIRE(r.code == 0);
    CHECK(slurp(w / "m2.ckpt") == first);
    std::ifstream log(w / "log.jsonl");
    std::string line;
    int epochs = 0;
    while (std::getline(log, line)) {
      const auto j = nlohmann::json::parse(line);
      CHECK(j["epoch"] == epochs++);
      CHECK(j.contains("mean_loss"));
    }
    CHECK(epochs == 3);
    const auto prov = nlohmann::json::parse(slurp(ckpt + ".provenance.json"));
    CHECK(prov["config"]["dim"] == 8);
  }

  TEST_CASE("ablation variant routes through") {
    Workdir w("train_ablation");
    trained_model(w, "--variant casif_s");
    const auto r = run("evaluate --dataset " + w / "ds" + " --checkpoint " + w / "m.ckpt" + " --out " + w / "r.json");
    REQUIRE(r.code == 0);
    CHECK(nlohmann::json::parse(slurp(w / "r.json"))["provenance"]["model"] == "casif_s");
  }

  TEST_CASE("resume continues the run") {
    Workdir w("train_resume");
    const auto ckpt = trained_model(w);
    REQUIRE(run("train --dataset " + w / "ds" + " --checkpoint " + w / "two.ckpt --dim 8 --epochs 2 --lr 0.01 --seed 2").code == 0);
    const auto r = run("train --dataset " + w / "ds" + " --resume " + w / "two.ckpt" + " --checkpoint " + w / "three.ckpt" +
                       " --dim 8 --epochs 3 --lr 0.01 --seed 2");
    REQUIRE_MESSAGE(r.code == 0, r.output);
    CHECK(slurp(w / "three.ckpt") == slurp(ckpt));
    CHECK(run("train --dataset " + w / "ds" + " --resume " + w / "two.ckpt" + " --checkpoint " + w / "x.ckpt --dim 9 --epochs 3")
              .code != 0);
  }
}

TEST_SUITE("evaluate") {
  TEST_CASE("pop needs no checkpoint; three rows per bucket") {
    Workdir w("eval_pop");
    trained_model(w);
    auto r = run("evaluate --baseline pop --dataset " + w / "ds" + " --out " + w / "pop.json");
    REQUIRE_MESSAGE(r.code == 0, r.output);
    auto rows = nlohmann::json::parse(slurp(w / "pop.json"))["metrics"];
    CHECK(rows.size() == 3);
    r = run("evaluate --baseline pop --split-length --dataset " + w / "ds" + " --out " + w / "pop.json");
    rows = nlohmann::json::parse(slurp(w / "pop.json"))["metrics"];
    std::map<std::string, int> per_bucket;
    for (const auto& row : rows) ++per_bucket[row["bucket"].get<std::string>()];
    CHECK(per_bucket["all"] == 3);
    for (const auto& [bucket, count] : per_bucket) CHECK(count == 3);
    CHECK(r.output.find("Recall@20(%)") != std::string::npos);
    CHECK(run("evaluate --dataset " + w / "ds").code == 1);
  }

  TEST_CASE("vocabulary mismatch is reported") {
    Workdir w("eval_mismatch");
    trained_model(w);
    std::ofstream(w / "other.csv") << kTinyLog;
    REQUIRE(run("preprocess --input " + w / "other.csv" + " --out " + w / "other --min-support 2 --split-ts 86400000").code == 0);
    const auto r = run("evaluate --dataset " + w / "other" + " --checkpoint " + w / "m.ckpt");
    CHECK(r.code == 2);
    CHECK(r.output.find("incompatible") != std::string::npos);
  }
}

TEST_SUITE("predict") {
  TEST_CASE("deterministic top-k and error reporting") {
    Workdir w("predict");
    trained_model(w);
    const std::string base = "predict --checkpoint " + w / "m.ckpt" + " --dataset " + w / "ds";
    const auto a = run(base + " --items 3 --k 4"), b = run(base + " --items 3 --k 4");
    REQUIRE_MESSAGE(a.code == 0, a.output);
    CHECK(a.output == b.output);
    CHECK(std::count(a.output.begin(), a.output.end(), '\n') == 4);
    const auto unknown = run(base + " --items 3,zzz --k 2");
    CHECK(unknown.code != 0);
    CHECK(unknown.output.find("zzz") != std::string::npos);
    CHECK(run(base + " --items 3 --k 999").code != 0);
  }
}

TEST_SUITE("gradcheck") {
  TEST_CASE("passes, ablation path, and the negative control") {
    auto r = run("gradcheck");
    CHECK(r.code == 0);
    CHECK(r.output.find("PASS") != std::string::npos);
    r = run("gradcheck --variant casif_s --seeds 2");
    CHECK(r.code == 0);
    CHECK(r.output.find("variant=casif ") == std::string::npos);
    r = run("gradcheck --sabotage --seeds 1");
    CHECK(r.code == 3);
  }
}

TEST_SUITE("synth") {
  TEST_CASE("byte-identical output with a provenance sidecar") {
    Workdir w("synth");
    REQUIRE(run("synth --items 5 --sessions 100 --seed 9 --out " + w / "a.csv").code == 0);
    REQUIRE(run("synth --items 5 --sessions 100 --seed 9 --out " + w / "b.csv").code == 0);
    CHECK(slurp(w / "a.csv") == slurp(w / "b.csv"));
    CHECK(nlohmann::json::parse(slurp(w / "a.csv.provenance.json"))["spec"]["seed"] == 9);
    CHECK(run("synth --mode functional --items 1 --out " + w / "c.csv").code == 1);
  }
}
