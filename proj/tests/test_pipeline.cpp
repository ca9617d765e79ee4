#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "gem/config.hpp"
#include "gem/error.hpp"
#include "gem/pipeline.hpp"

using namespace gem;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("gem_test_pipeline_" + name);
  fs::remove_all(dir);
  return dir;
}

std::string read_text(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// A BA-shapes run small enough to finish in a few seconds.
nlohmann::json small_config(const fs::path& out) {
  nlohmann::json doc = {{"dataset", "ba_shapes"}, {"seed", 3}, {"output_dir", out.string()}};
  apply_override(doc, "data.base_nodes=60");
  apply_override(doc, "data.attachment=3");
  apply_override(doc, "data.motifs=12");
  apply_override(doc, "split.train=40");
  apply_override(doc, "split.val=10");
  apply_override(doc, "split.test=10");
  apply_override(doc, "gnn.epochs=150");
  apply_override(doc, "gnn.lr=0.01");
  apply_override(doc, "explainer.epochs=10");
  return doc;
}

int run_cli(const std::string& args, const fs::path& log) {
  const std::string cmd = std::string(GEM_CLI) + " " + args + " > " + log.string() + " 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

template <typename F>
std::string error_message(F&& f) {
  try {
    f();
  } catch (const std::exception& e) {
    return e.what();
  }
  return "";
}

}  // namespace

TEST_CASE("config defaults resolve for the synthetic datasets") {
  for (const char* name : {"ba_shapes", "tree_cycles"}) {
    const RunConfig c = config_from_json({{"dataset", name}});
    CHECK(c.dataset_name() == name);
    CHECK_NOTHROW(validate(c));
    CHECK(c.distill.K == c.eval.K_grid.back());
    CHECK(config_from_json(config_to_json(c)).dataset == c.dataset);
    CHECK(config_to_json(config_from_json(config_to_json(c))) == config_to_json(c));
  }
  const RunConfig ba = config_from_json({{"dataset", "ba_shapes"}});
  CHECK(ba.split.train == 300);
  CHECK(ba.eval.K_grid == std::vector<std::size_t>{5, 6, 7, 8, 9});
  const RunConfig tc = config_from_json({{"dataset", "tree_cycles"}});
  CHECK(tc.eval.K_grid == std::vector<std::size_t>{6, 7, 8, 9, 10});
}

TEST_CASE("config rejects unknown keys, wrong types and bad values") {
  CHECK_THROWS_AS(config_from_json(nlohmann::json::object()), InputError);
  CHECK_THROWS_AS(config_from_json({{"dataset", "cora"}}), InputError);
  CHECK_THROWS_AS(config_from_json({{"dataset", "ba_shapes"}, {"sede", 1}}), InputError);
  CHECK_THROWS_AS(config_from_json({{"dataset", "ba_shapes"}, {"gnn", {{"epochs", "many"}}}}), InputError);
  CHECK_THROWS_AS(config_from_json({{"dataset", "ba_shapes"}, {"gnn", {{"epoch", 3}}}}), InputError);
  const std::string msg = error_message([] { config_from_json({{"dataset", "ba_shapes"}, {"gnn", {{"epoch", 3}}}}); });
  CHECK(msg.find("gnn.epoch") != std::string::npos);

  RunConfig c = config_from_json({{"dataset", "ba_shapes"}});
  c.distill.K = 0;
  CHECK_THROWS_AS(validate(c), InputError);
  CHECK_THROWS_AS(config_from_json({{"dataset", "tu:MUTAG:/nonexistent/dir"}}), InputError);
}

TEST_CASE("overrides parse JSON values and fall back to strings") {
  nlohmann::json doc = {{"dataset", "ba_shapes"}};
  apply_override(doc, "explainer.lr=0.001");
  apply_override(doc, "eval.K_grid=[5,7]");
  apply_override(doc, "eval.connectivity=false");
  apply_override(doc, "output_dir=runs/x");
  const RunConfig c = config_from_json(doc);
  CHECK(c.explainer.lr == 0.001);
  CHECK(c.eval.K_grid == std::vector<std::size_t>{5, 7});
  CHECK_FALSE(c.eval.connectivity);
  CHECK(c.output_dir == "runs/x");
  CHECK_THROWS_AS(apply_override(doc, "novalue"), InputError);
  CHECK_THROWS_AS(apply_override(doc, "=3"), InputError);
  apply_override(doc, "seed=5");
  CHECK_THROWS_AS(apply_override(doc, "seed.x=3"), InputError);
  CHECK_THROWS_AS(config_from_json({{"dataset", "ba_shapes"}, {"seed", -1}}), InputError);
}

TEST_CASE("split and JSON-lines helpers round trip") {
  SplitSpec s{{1, 2, 3}, {4}, {5, 6}, 9};
  const SplitSpec back = split_from_json(split_to_json(s));
  CHECK(back.train_ids == s.train_ids);
  CHECK(back.test_ids == s.test_ids);
  CHECK(back.seed == 9);

  const fs::path dir = scratch("jsonl");
  fs::create_directories(dir);
  write_jsonl(dir / "a.jsonl", "fmt-v1", {{{"x", 1}}, {{"x", 2}}});
  const auto records = read_jsonl(dir / "a.jsonl", "fmt-v1");
  REQUIRE(records.size() == 2);
  CHECK(records[1]["x"] == 2);
  CHECK_THROWS_AS(read_jsonl(dir / "a.jsonl", "other-v1"), FormatError);
  CHECK(sha256_hex("abc") == "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
}

TEST_CASE("a stage without its inputs names the producing command") {
  const fs::path dir = scratch("missing");
  Pipeline p(config_from_json(small_config(dir)), 1);
  const std::string msg = error_message([&] { p.train_gnn(); });
  CHECK(msg.find("gem gen-data") != std::string::npos);
  CHECK_THROWS_AS(p.train_gnn(), MissingArtifactError);
  CHECK_THROWS_AS(p.run_stage("bogus"), InputError);
}

TEST_CASE("run-all writes every artifact and is deterministic") {
  const fs::path a = scratch("run_a");
  const fs::path b = scratch("run_b");
  Pipeline(config_from_json(small_config(a)), 1).run_all();
  Pipeline(config_from_json(small_config(b)), 3).run_all();

  for (const char* name : {artifact::kDataset, artifact::kSplit, artifact::kGnn, artifact::kDistill,
                           artifact::kExplainer, artifact::kExplain, artifact::kAccuracy, artifact::kLogOdds,
                           artifact::kLogOddsHistogram, artifact::kTiming, artifact::kMetrics, artifact::kManifest}) {
    CHECK_MESSAGE(fs::exists(a / name), name);
  }

  std::istringstream csv(read_text(a / artifact::kAccuracy));
  std::string line;
  std::vector<std::string> lines;
  while (std::getline(csv, line)) lines.push_back(line);
  REQUIRE(lines.size() == 6);
  CHECK(lines[0] == "dataset,method,K,accuracy");
  CHECK(lines[1].rfind("ba_shapes,gem,5,", 0) == 0);
  CHECK(lines[5].rfind("ba_shapes,gem,9,", 0) == 0);

  const auto metrics = nlohmann::json::parse(read_text(a / artifact::kMetrics));
  CHECK(metrics.at("test_instances") == 10);
  CHECK(metrics.at("explanation").size() == 5);
  CHECK(metrics.contains("log_odds"));
  CHECK(metrics.contains("timing"));

  const auto manifest = nlohmann::json::parse(read_text(a / artifact::kManifest));
  CHECK(manifest.at("format") == kManifestFormat);
  CHECK(manifest.at("stages").size() == 6);

  // wall-clock files aside, both runs match byte for byte
  for (const char* name : {artifact::kDataset, artifact::kSplit, artifact::kGnn, artifact::kDistill,
                           artifact::kExplainer, artifact::kExplain, artifact::kAccuracy, artifact::kLogOdds,
                           artifact::kLogOddsHistogram}) {
    CHECK_MESSAGE(sha256_file(a / name) == sha256_file(b / name), name);
  }
}

TEST_CASE("upstream edits and config changes are detected") {
  const fs::path dir = scratch("tamper");
  const RunConfig config = config_from_json(small_config(dir));
  Pipeline p(config, 1);
  p.gen_data();
  p.train_gnn();

  {
    std::ofstream out(dir / artifact::kSplit, std::ios::app);
    out << ' ';
  }
  const std::string msg = error_message([&] { p.distill(); });
  CHECK(msg.find("changed") != std::string::npos);
  CHECK_THROWS_AS(p.distill(), FormatError);

  // regenerating data invalidates the classifier
  p.gen_data();
  const std::string stale = error_message([&] { p.distill(); });
  CHECK(stale.find("gem train-gnn") != std::string::npos);
  CHECK_THROWS_AS(p.distill(), MissingArtifactError);

  nlohmann::json other = small_config(dir);
  other["seed"] = 4;
  Pipeline q(config_from_json(other), 1);
  const std::string changed = error_message([&] { q.train_gnn(); });
  CHECK(changed.find("different config") != std::string::npos);
}

TEST_CASE("command-line exit codes") {
  const fs::path dir = scratch("cli");
  fs::create_directories(dir);
  const fs::path log = dir / "log.txt";
  const fs::path config = dir / "config.json";
  {
    std::ofstream out(config);
    out << small_config(dir / "run").dump(2);
  }

  CHECK(run_cli("--help", log) == 0);
  CHECK(run_cli("config --config " + config.string(), log) == 0);
  CHECK(nlohmann::json::parse(read_text(log)).at("seed") == 3);
  CHECK(run_cli("config --config " + config.string() + " --set seed=11", log) == 0);
  CHECK(nlohmann::json::parse(read_text(log)).at("seed") == 11);

  CHECK(run_cli("", log) == 1);
  CHECK(run_cli("frobnicate", log) == 1);
  CHECK(run_cli("config --set dataset=ba_shapes --set gnn.nope=1", log) == 1);
  CHECK(read_text(log).find("gnn.nope") != std::string::npos);
  CHECK(run_cli("train-gnn --config " + config.string(), log) == 1);
  CHECK(read_text(log).find("gem gen-data") != std::string::npos);

  CHECK(run_cli("gen-data --config " + config.string(), log) == 0);
  {
    std::ofstream out(dir / "run" / artifact::kDataset, std::ios::app);
    out << ' ';
  }
  CHECK(run_cli("train-gnn --config " + config.string(), log) == 2);
  CHECK(read_text(log).find("changed") != std::string::npos);
}
