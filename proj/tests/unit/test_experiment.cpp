#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <random>
#include <set>
#include <sstream>

#include "crowdcal/csv.hpp"
#include "crowdcal/error.hpp"
#include "crowdcal/experiment.hpp"

using namespace crowdcal;
namespace fs = std::filesystem;

namespace {

fs::path fresh_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("crowdcal_test_" + name);
  fs::remove_all(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void spit(const fs::path& p, const std::string& text) {
  fs::create_directories(p.parent_path());
  std::ofstream(p, std::ios::binary) << text;
}

std::vector<std::map<std::string, std::string>> read_rows(const fs::path& p) {
  std::ifstream in(p);
  csv::Reader reader(in);
  std::vector<std::map<std::string, std::string>> rows;
  if (!reader.read_header()) return rows;
  while (auto r = reader.next()) {
    std::map<std::string, std::string> row;
    for (std::size_t i = 0; i < r->size(); ++i) row[reader.header()[i]] = (*r)[i];
    rows.push_back(std::move(row));
  }
  return rows;
}

ExperimentConfig small_config() {
  ExperimentConfig cfg;
  cfg.seed = 5;
  cfg.corpus = {20, 20, 10, 10, 1, 0};
  cfg.conditions = {{"gs20", 3}, {"gs50", 0}};
  cfg.population.n_annotators = 40;
  cfg.n_trials = 60;
  cfg.min_trials = 40;
  cfg.k = 3;
  cfg.n_replicates = 4;
  cfg.sweep_sizes = {1, 2, 3};
  cfg.search_repeats = 1;
  cfg.eval_repeats = 1;
  cfg.grid = {{5}, {0.1}, {1e-3}, {16}};
  return cfg;
}

std::set<std::string> files_under(const fs::path& root) {
  std::set<std::string> out;
  for (const auto& e : fs::recursive_directory_iterator(root)) {
    if (e.is_regular_file()) out.insert(fs::relative(e.path(), root).generic_string());
  }
  return out;
}

}  // namespace

TEST_CASE("config: JSON round trip and hash") {
  const ExperimentConfig a = small_config();
  const ExperimentConfig b = ExperimentConfig::from_json(nlohmann::json(a.to_json()));
  CHECK(b.to_json().dump() == a.to_json().dump());
  CHECK(b.hash() == a.hash());
  CHECK(a.hash().size() == 64);

  ExperimentConfig c = a;
  c.jobs = 8;
  CHECK(c.hash() == a.hash());
  c.seed = 6;
  CHECK(c.hash() != a.hash());
}

TEST_CASE("config: overrides and validation") {
  nlohmann::json doc = nlohmann::json(ExperimentConfig{}.to_json());
  apply_override(doc, "aggregation.k=5");
  apply_override(doc, "conditions.1.gs_negative_augmentation=1");
  apply_override(doc, "aggregation.sampling=with_replacement");
  apply_override(doc, "downstream.grid.epochs=[3,4]");
  const ExperimentConfig cfg = ExperimentConfig::from_json(doc);
  CHECK(cfg.k == 5);
  CHECK(cfg.conditions[1].gs_negative_augmentation == 1);
  CHECK(cfg.sampling == Sampling::WithReplacement);
  CHECK(cfg.grid.epochs == std::vector<std::size_t>{3, 4});

  CHECK_THROWS_AS(ExperimentConfig::from_json({{"aggregation", {{"kk", 3}}}}), ConfigError);
  CHECK_THROWS_AS(ExperimentConfig::from_json({{"aggregation", {{"sampling", "sometimes"}}}}), ConfigError);
  CHECK_THROWS_AS(ExperimentConfig::from_json({{"aggregation", {{"k", "nine"}}}}), ConfigError);
  CHECK_THROWS_AS(ExperimentConfig::from_json({{"aggregation", {{"k", 0}}}}).validate(), ConfigError);
  CHECK_THROWS_AS(ExperimentConfig::from_json({{"recalibration", {{"epsilon", 0.7}}}}).validate(),
                  ConfigError);
  CHECK_THROWS_AS(apply_override(doc, "no_equals_sign"), ConfigError);
}

TEST_CASE("config: load_config reads a file and applies overrides") {
  const fs::path dir = fresh_dir("load");
  spit(dir / "c.json", R"({"seed": 77, "aggregation": {"n_replicates": 10}})");
  const ExperimentConfig cfg = load_config(dir / "c.json", {"aggregation.k=7", "jobs=3"});
  CHECK(cfg.seed == 77);
  CHECK(cfg.n_replicates == 10);
  CHECK(cfg.k == 7);
  CHECK(cfg.jobs == 3);
  CHECK(load_config("").to_json().dump() == ExperimentConfig{}.to_json().dump());
  CHECK_THROWS_AS(load_config(dir / "missing.json"), ConfigError);
  spit(dir / "bad.json", "{ not json");
  CHECK_THROWS_AS(load_config(dir / "bad.json"), ConfigError);
}

TEST_CASE("run_command: manifest covers every file and reruns are identical") {
  const ExperimentConfig cfg = small_config();
  for (const std::string sub : {"simulate", "aggregate", "recalibrate", "evaluate", "sweep", "train"}) {
    CAPTURE(sub);
    const fs::path a = fresh_dir("idem_a_" + sub), b = fresh_dir("idem_b_" + sub);
    const RunManifest ma = run_command(sub, cfg, a);
    ExperimentConfig parallel = cfg;
    parallel.jobs = 3;
    const RunManifest mb = run_command(sub, parallel, b);
    CHECK(ma.status == "complete");
    CHECK(ma.config_hash == mb.config_hash);

    std::set<std::string> listed;
    for (const auto& art : ma.artifacts) {
      listed.insert(art.file);
      CHECK(sha256_file(a / art.file) == art.sha256);
      CHECK(fs::file_size(a / art.file) == art.bytes);
    }
    std::set<std::string> present = files_under(a);
    present.erase("manifest.json");
    CHECK(present == listed);

    // config.json records jobs; every other artifact must match byte for byte
    REQUIRE(ma.artifacts.size() == mb.artifacts.size());
    for (std::size_t i = 0; i < ma.artifacts.size(); ++i) {
      CHECK(ma.artifacts[i].file == mb.artifacts[i].file);
      if (ma.artifacts[i].file != "config.json") CHECK(ma.artifacts[i].sha256 == mb.artifacts[i].sha256);
    }
    const fs::path c = fresh_dir("idem_c_" + sub);
    const RunManifest mc = run_command(sub, cfg, c);
    REQUIRE(mc.artifacts.size() == ma.artifacts.size());
    for (std::size_t i = 0; i < ma.artifacts.size(); ++i) CHECK(mc.artifacts[i].sha256 == ma.artifacts[i].sha256);
    const RunManifest back = read_manifest(a / "manifest.json");
    CHECK(back.status == "complete");
    CHECK(back.artifacts.size() == ma.artifacts.size());
  }
}

TEST_CASE("run_command: a used run directory is refused") {
  const ExperimentConfig cfg = small_config();
  const fs::path dir = fresh_dir("reuse");
  run_command("simulate", cfg, dir);
  const std::string before = slurp(dir / "manifest.json");
  CHECK_THROWS_AS(run_command("simulate", cfg, dir), ConfigError);
  CHECK(slurp(dir / "manifest.json") == before);
  CHECK_THROWS_AS(run_command("dance", cfg, fresh_dir("unknown")), ConfigError);
  CHECK_FALSE(fs::exists(fresh_dir("unknown")));
}

TEST_CASE("run_command: validation happens before any work") {
  ExperimentConfig bad = small_config();
  bad.k = 0;
  const fs::path dir = fresh_dir("invalid");
  CHECK_THROWS_AS(run_command("simulate", bad, dir), ConfigError);
  CHECK_FALSE(fs::exists(dir / "manifest.json"));
  CHECK_THROWS_AS(run_command("train", small_config(), dir, {std::nullopt, std::nullopt, dir / "w.csv"}),
                  ConfigError);
}

TEST_CASE("run_command: a failed run leaves an incomplete manifest") {
  const fs::path dir = fresh_dir("fail");
  spit(dir / "in" / "corpus.csv", "item_id,source_id,set,true_label\nq1,q1,QA,1\nq2,q2,QA,0\ng1,g1,GS,1\ng2,g2,GS,0\n");
  spit(dir / "in" / "woc.csv", "replicate,variant,item_id,label\n0,EB,q1,0.9\n0,EB,nope,0.2\n");
  CHECK_THROWS(run_command("evaluate", small_config(), dir / "run",
                           {dir / "in" / "corpus.csv", std::nullopt, dir / "in" / "woc.csv"}));
  const RunManifest m = read_manifest(dir / "run" / "manifest.json");
  CHECK(m.status == "incomplete");
  CHECK_FALSE(m.error.empty());
  REQUIRE_FALSE(m.artifacts.empty());
  CHECK(m.artifacts[0].file == "config.json");
}

TEST_CASE("evaluate: hand-written WoC file reproduces the metric fixtures") {
  const fs::path dir = fresh_dir("evaluate");
  spit(dir / "in" / "corpus.csv",
       "item_id,source_id,set,true_label\n"
       "q1,q1,QA,1\nq2,q2,QA,1\nq3,q3,QA,0\nq4,q4,QA,1\ng1,g1,GS,1\ng2,g2,GS,0\n");
  spit(dir / "in" / "woc.csv",
       "replicate,variant,item_id,label\n"
       "0,EB,q1,0.9\n0,EB,q2,0.9\n0,EB,q3,0.1\n0,EB,q4,0.1\n0,EB,g1,0.7\n0,EB,g2,0.2\n"
       "0,BC,q1,1\n0,BC,q2,1\n0,BC,q3,1\n0,BC,q4,1\n0,BC,g1,1\n0,BC,g2,0\n");
  const RunManifest m = run_command("evaluate", small_config(), dir / "run",
                                    {dir / "in" / "corpus.csv", std::nullopt, dir / "in" / "woc.csv"});
  CHECK(m.status == "complete");
  const auto rows = read_rows(dir / "run" / "metrics.csv");
  std::map<std::string, std::map<std::string, std::string>> by_variant;
  for (const auto& r : rows) {
    if (r.at("replicate") == "0") by_variant[r.at("variant")] = r;
  }
  REQUIRE(by_variant.size() == 2);
  CHECK(by_variant["EB"]["ece"] == "0.25");
  CHECK(csv::parse_double(by_variant["EB"]["miss"]) == doctest::Approx(1.0 / 3.0).epsilon(1e-15));
  CHECK(by_variant["EB"]["fa"] == "0");
  CHECK(by_variant["BC"]["ece"] == "0.25");
  CHECK(by_variant["BC"]["miss"] == "0");
  CHECK(by_variant["BC"]["fa"] == "1");
  CHECK(by_variant["BC"]["gs_prevalence"] == "0.5");
}

TEST_CASE("evaluate: every reported ECE is recoverable from its curve") {
  const fs::path dir = fresh_dir("ece_curves");
  run_command("evaluate", small_config(), dir);
  for (const std::string cond : {"gs20", "gs50"}) {
    std::ifstream in(dir / ("ece_curves_" + cond + ".csv"));
    const auto curves = read_curve_csv(in);
    std::map<std::string, double> from_curves;
    for (const auto& row : curves) {
      CHECK(row.curve.n_bins == 10);
      from_curves[row.variant] = ece_from_curve(row.curve);
    }
    std::size_t checked = 0;
    for (const auto& r : read_rows(dir / ("metrics_" + cond + ".csv"))) {
      const std::string& rep = r.at("replicate");
      if (rep == "mean" || rep == "lower" || rep == "upper") continue;
      const std::string key = r.at("variant") + "/" + rep;
      REQUIRE(from_curves.count(key) == 1);
      CHECK(csv::parse_double(r.at("ece")) == from_curves.at(key));
      ++checked;
    }
    CHECK(checked == 4 * small_config().n_replicates);
  }
}

TEST_CASE("reproduce-study2: full artifact set on a small config") {
  const fs::path dir = fresh_dir("reproduce");
  const RunManifest m = run_command("reproduce-study2", small_config(), dir);
  CHECK(m.status == "complete");
  std::set<std::string> files;
  for (const auto& a : m.artifacts) files.insert(a.file);
  for (const std::string f : {"config.json", "report.txt", "report.json", "model_metrics.csv",
                              "model_weights.csv", "hyperparameters.csv", "woc_gs20.csv",
                              "sweep_gs50.csv", "curves_gs20.csv", "metrics_gs50.csv",
                              "llo_params_gs20.csv", "judgments_gs50_reb.csv"}) {
    CHECK_MESSAGE(files.count(f) == 1, f);
  }
  std::set<std::string> summaries;
  for (const auto& r : read_rows(dir / "model_metrics.csv")) {
    if (r.at("replicate") == "mean") summaries.insert(r.at("variant") + "@" + r.at("gs_prevalence"));
  }
  CHECK(summaries.size() == 8);
  const auto report = nlohmann::json::parse(slurp(dir / "report.json"));
  CHECK(report.is_object());
  CHECK_FALSE(slurp(dir / "report.txt").empty());
}
