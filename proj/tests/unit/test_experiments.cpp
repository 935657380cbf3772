#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>

#include "doctest.h"
#include "optvq/error.hpp"
#include "optvq/experiments.hpp"

using namespace optvq;

namespace {

const std::string kData = OPTVQ_TEST_DATA_DIR;

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

TEST_CASE("metrics.csv golden file parses and re-emits byte for byte") {
  const std::string golden = slurp(kData + "/metrics_golden.csv");
  const auto rows = parse_metrics_csv(golden);
  REQUIRE(rows.size() == 3);
  CHECK(rows[0].step == 1);
  CHECK(rows[0].l1 == 0.5);
  CHECK(rows[0].commit == 0.125);
  CHECK(rows[0].perplexity == 3.5);
  CHECK(rows[2].l2 == 1e-5);
  CHECK(rows[2].usage_frac == 1.0);
  CHECK(rows[2].perplexity == 1024.0);
  CHECK(metrics_csv(rows) == golden);
}

TEST_CASE("metrics.csv parse errors") {
  CHECK_THROWS_AS(parse_metrics_csv("step,l1\n1,2\n"), DataError);
  const std::string h = std::string(kMetricsHeader) + "\n";
  CHECK_THROWS_AS(parse_metrics_csv(h + "1,2,3\n"), DataError);
  CHECK_THROWS_AS(parse_metrics_csv(h + "1,a,0,0,0,0,0\n"), DataError);
  CHECK(parse_metrics_csv(h).empty());
}

TEST_CASE("dynamics2d: OptVQ keeps every code alive") {
  Dynamics2dOptions opt;
  opt.steps = 60;
  opt.seed = 3;
  const auto r = run_dynamics2d(opt);
  CHECK(r.points.rows() == 100);
  CHECK(r.initial_codes.rows() == 25);
  CHECK(r.optvq.trajectory.size() == 61);
  CHECK(r.optvq.trajectory.front() == r.initial_codes);
  CHECK(r.nearest.usage < r.optvq.usage);
  CHECK(run_dynamics2d(opt).optvq.trajectory.back() == r.optvq.trajectory.back());

  const auto j = dynamics2d_json(r);
  const auto parsed = nlohmann::json::parse(j.dump());
  for (const char* key : {"steps", "usage_nn", "usage_optvq", "trajectories", "points"})
    CHECK(parsed.contains(key));
  CHECK(parsed["trajectories"]["optvq"].size() == 61);
  CHECK(parsed["trajectories"]["optvq"][0].size() == 25);
  CHECK(parsed["trajectories"]["optvq"][0][0].size() == 2);
}

TEST_CASE("consistency: separated pairs agree, mismatched clouds do not") {
  const auto r = run_consistency({});
  CHECK(r.separated.agreement == 1.0);
  CHECK(r.separated.nn_indices == r.separated.optvq_indices);
  CHECK(r.mismatched.agreement < 1.0);
  CHECK(r.mismatched.optvq_usage == 1.0);
  const auto j = consistency_json(r);
  CHECK(j["separated"]["nn_indices"].size() == 16);
  CHECK(j["mismatched"].contains("optvq_indices"));
}

TEST_CASE("sinkhorn study shape") {
  SinkhornStudyOptions opt;
  opt.trials = 10;
  opt.max_iters = 12;
  const auto rows = run_sinkhorn_study(opt);
  CHECK(rows.size() == 12);
  for (std::size_t t = 0; t < rows.size(); ++t) {
    CHECK(rows[t].iteration == static_cast<int>(t + 1));
    CHECK(rows[t].median_residual <= rows[t].max_residual);
  }
  const std::string csv = sinkhorn_study_csv(rows);
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 13);
}

TEST_CASE("sinkhorn residuals agree with the fixed-iteration solver") {
  SeededRng rng(1);
  Matrix d(5, 5);
  for (double& v : d.data()) v = rng.uniform();
  const auto res = sinkhorn_residuals(d, 10.0, 4);
  REQUIRE(res.size() == 4);
  SinkhornConfig cfg;
  cfg.iterations = 3;
  const Matrix a3 = sinkhorn(d, cfg).plan;
  cfg.iterations = 4;
  const Matrix a4 = sinkhorn(d, cfg).plan;
  CHECK(res[3] == doctest::Approx(max_abs_diff(a3, a4)).epsilon(1e-12));
}

TEST_CASE("normalize study") {
  const auto rows = run_normalize_study({});
  REQUIRE(rows.size() == 7);
  for (const auto& r : rows) {
    CHECK(r.norm_min == 0.0);
    CHECK(std::abs(r.norm_std - 1.0) < 1e-9);
    CHECK(r.norm_plan_finite);
    CHECK(r.argmax_matches);
    std::uint64_t raw = 0, norm = 0;
    for (auto c : r.raw_hist) raw += c;
    for (auto c : r.norm_hist) norm += c;
    CHECK(raw == 64 * 64);
    CHECK(norm == 64 * 64);
  }
  CHECK(rows.back().exponent == 3);
  CHECK(rows.back().raw_underflow_row);
  CHECK(!rows.front().raw_underflow_row);
  CHECK(has_underflow_row(Matrix(2, 2, 1e4), 10.0));
  CHECK(!has_underflow_row(Matrix(2, 2, 1.0), 10.0));
}

TEST_CASE("ablation grid on synthetic data") {
  RunConfig rc;
  rc.set("dataset", "synthetic");
  rc.set("train_images", "32");
  rc.set("val_images", "16");
  const auto data = load_datasets(rc);
  TrainConfig base = rc.train_config();
  base.epochs = 1;
  base.hidden_dim = 8;
  AblationOptions opt;
  opt.latent_dims = {4};
  opt.codebook_sizes = {8, 16};
  const auto cells = run_ablation(base, data, opt);
  CHECK(cells.size() == 4);
  std::set<std::pair<std::size_t, QuantizerKind>> seen;
  for (const auto& c : cells) seen.insert({c.codebook_size, c.kind});
  CHECK(seen.size() == 4);
  const std::string csv = ablation_csv(cells);
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 5);
}

TEST_CASE("load_datasets errors") {
  RunConfig rc;
  rc.set("data_dir", "/nonexistent");
  CHECK_THROWS_AS(load_datasets(rc), DataError);
  rc.set("dataset", "cifar");
  CHECK_THROWS_AS(load_datasets(rc), ConfigError);
}
