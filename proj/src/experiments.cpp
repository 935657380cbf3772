#include "optvq/experiments.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "optvq/checkpoint.hpp"
#include "optvq/error.hpp"
#include "optvq/transport.hpp"

namespace optvq {

namespace fs = std::filesystem;

void write_text_file(const std::string& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw DataError("cannot write " + path);
  f << text;
  if (!f) throw DataError("failed writing " + path);
}

std::string read_text_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot read " + path);
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

namespace {

std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string find_idx(const fs::path& dir, const std::string& stem) {
  for (const fs::path& p : {dir / stem, dir / (stem + ".gz")}) {
    if (fs::exists(p)) return p.string();
  }
  throw DataError("no " + stem + "[.gz] in " + dir.string());
}

void ensure_dir(const std::string& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw DataError("cannot create output directory " + dir + ": " + ec.message());
}

std::size_t distinct(const std::vector<std::size_t>& idx) {
  std::vector<std::size_t> s = idx;
  std::sort(s.begin(), s.end());
  return static_cast<std::size_t>(std::unique(s.begin(), s.end()) - s.begin());
}

Matrix gaussian_points(std::size_t count, std::size_t dim, double mean, double sd, SeededRng& rng) {
  Matrix m(count, dim);
  for (double& v : m.data()) v = mean + sd * rng.normal();
  return m;
}

std::vector<std::size_t> row_argmax(const Matrix& plan) {
  std::vector<std::size_t> out(plan.rows());
  for (std::size_t i = 0; i < plan.rows(); ++i) {
    const auto r = plan.row(i);
    out[i] = static_cast<std::size_t>(std::max_element(r.begin(), r.end()) - r.begin());
  }
  return out;
}

double agreement(const std::vector<std::size_t>& a, const std::vector<std::size_t>& b) {
  std::size_t same = 0;
  for (std::size_t i = 0; i < a.size(); ++i) same += a[i] == b[i] ? 1 : 0;
  return a.empty() ? 1.0 : static_cast<double>(same) / static_cast<double>(a.size());
}

std::vector<std::uint64_t> histogram(const Matrix& m, std::size_t bins, double& lo, double& hi) {
  lo = *std::min_element(m.data().begin(), m.data().end());
  hi = *std::max_element(m.data().begin(), m.data().end());
  std::vector<std::uint64_t> h(bins, 0);
  const double width = hi > lo ? (hi - lo) / static_cast<double>(bins) : 1.0;
  for (double v : m.data()) {
    auto b = static_cast<std::size_t>((v - lo) / width);
    ++h[std::min(b, bins - 1)];
  }
  return h;
}

nlohmann::json matrix_json(const Matrix& m) {
  nlohmann::json rows = nlohmann::json::array();
  for (std::size_t i = 0; i < m.rows(); ++i) {
    const auto r = m.row(i);
    rows.push_back(std::vector<double>(r.begin(), r.end()));
  }
  return rows;
}

}  // namespace

DatasetSplit load_datasets(const RunConfig& cfg) {
  const std::string kind = cfg.get("dataset");
  const std::size_t n_train = cfg.get_count("train_images");
  const std::size_t n_val = cfg.get_count("val_images");
  auto take = [](const ImageDataset& ds, std::size_t n, const char* split) {
    if (n > ds.count()) {
      throw DataError(std::string(split) + " split has " + std::to_string(ds.count()) +
                      " images; requested " + std::to_string(n));
    }
    return slice_dataset(ds, 0, n, split);
  };
  if (kind == "mnist") {
    const fs::path dir = cfg.get("data_dir");
    const ImageDataset train =
        load_mnist_idx(find_idx(dir, "train-images-idx3-ubyte"), find_idx(dir, "train-labels-idx1-ubyte"));
    const ImageDataset test =
        load_mnist_idx(find_idx(dir, "t10k-images-idx3-ubyte"), find_idx(dir, "t10k-labels-idx1-ubyte"));
    return {take(train, n_train, "train"), take(test, n_val, "val")};
  }
  if (kind == "synthetic") {
    const ImageDataset all = make_synthetic_images(n_train + n_val, kMnistPaddedSide,
                                                   SeededRng::derive(cfg.get_u64("seed"), 7));
    return {slice_dataset(all, 0, n_train, "train"), slice_dataset(all, n_train, n_val, "val")};
  }
  throw ConfigError("unknown dataset '" + kind + "' (expected mnist or synthetic)");
}

std::string metrics_csv(const std::vector<StepMetrics>& steps) {
  std::string out = std::string(kMetricsHeader) + "\n";
  for (const auto& s : steps) {
    out += std::to_string(s.step) + "," + fmt_double(s.l1) + "," + fmt_double(s.l2) + "," +
           fmt_double(s.commit) + "," + fmt_double(s.total) + "," + fmt_double(s.usage_frac) +
           "," + fmt_double(s.perplexity) + "\n";
  }
  return out;
}

std::vector<StepMetrics> parse_metrics_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line) || line != kMetricsHeader) {
    throw DataError("metrics.csv: unexpected header '" + line + "'");
  }
  std::vector<StepMetrics> out;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string cell;
    std::vector<std::string> cells;
    while (std::getline(ls, cell, ',')) cells.push_back(cell);
    if (cells.size() != 7) throw DataError("metrics.csv: expected 7 columns in '" + line + "'");
    StepMetrics s;
    try {
      std::size_t used = 0;
      s.step = std::stoull(cells[0], &used);
      if (used != cells[0].size()) throw std::invalid_argument(cells[0]);
      double* fields[] = {&s.l1, &s.l2, &s.commit, &s.total, &s.usage_frac, &s.perplexity};
      for (std::size_t c = 0; c < 6; ++c) {
        *fields[c] = std::stod(cells[c + 1], &used);
        if (used != cells[c + 1].size()) throw std::invalid_argument(cells[c + 1]);
      }
    } catch (const std::logic_error&) {
      throw DataError("metrics.csv: malformed number in '" + line + "'");
    }
    out.push_back(s);
  }
  return out;
}

TrainRunResult run_training(const TrainConfig& cfg, const DatasetSplit& data) {
  TrainReport rep = train(cfg, data.train);
  TrainRunResult out;
  out.validation = evaluate(rep.state, cfg, data.val);
  out.steps = std::move(rep.steps);
  out.state = std::move(rep.state);
  return out;
}

nlohmann::json eval_to_json(const EvalReport& r) {
  std::uint64_t lo = UINT64_MAX, hi = 0;
  for (std::uint64_t c : r.histogram) {
    lo = std::min(lo, c);
    hi = std::max(hi, c);
  }
  return {{"psnr", r.psnr},          {"l1", r.l1},
          {"l2", r.l2},              {"l_rec", r.l_rec},
          {"commit", r.commit},      {"usage_frac", r.usage_frac},
          {"perplexity", r.perplexity}, {"min_code_count", lo},
          {"max_code_count", hi},    {"code_histogram", r.histogram}};
}

TrainRunResult cmd_train(const RunConfig& cfg) {
  const TrainConfig tc = cfg.train_config();
  const DatasetSplit data = load_datasets(cfg);
  TrainRunResult res = run_training(tc, data);

  const std::string out_dir = cfg.get("out_dir");
  ensure_dir(out_dir);
  write_text_file(out_dir + "/metrics.csv", metrics_csv(res.steps));
  write_text_file(out_dir + "/config.txt", cfg.to_text());
  nlohmann::json summary = {
      {"quantizer", to_string(tc.quantizer)},
      {"codebook_size", tc.codebook_size},
      {"latent_dim", tc.latent_dim},
      {"heads", tc.heads},
      {"seed", tc.seed},
      {"steps", res.steps.size()},
      {"train_images", data.train.count()},
      {"val_images", data.val.count()},
      {"validation", eval_to_json(res.validation)},
      {"psnr", res.validation.psnr},
      {"usage_frac", res.validation.usage_frac},
  };
  write_text_file(out_dir + "/summary.json", summary.dump(2) + "\n");
  save_checkpoint(out_dir + "/checkpoint.ovq", {res.state, cfg.to_text()});
  return res;
}

EvalReport cmd_eval(const RunConfig& cfg, const std::string& checkpoint) {
  const std::string path = checkpoint.empty() ? cfg.get("out_dir") + "/checkpoint.ovq" : checkpoint;
  const Checkpoint ck = load_checkpoint(path);
  // Quantizer settings come from the current config; shapes from the file.
  TrainConfig tc = cfg.train_config();
  tc.latent_dim = ck.state.model.shape.latent;
  tc.heads = ck.state.books.size();
  tc.codebook_size = ck.state.books.front().size();
  const DatasetSplit data = load_datasets(cfg);
  const EvalReport r = evaluate(ck.state, tc, data.val);
  const std::string out_dir = cfg.get("out_dir");
  ensure_dir(out_dir);
  write_text_file(out_dir + "/eval.json", eval_to_json(r).dump(2) + "\n");
  return r;
}

// ---- dynamics --------------------------------------------------------------

namespace {

Dynamics2dRun train_codes_2d(const Matrix& points, const Matrix& init_codes, QuantizerKind kind,
                             const Dynamics2dOptions& opt) {
  QuantizerConfig qc;
  qc.kind = kind;
  qc.heads = 1;
  qc.sinkhorn.epsilon = opt.epsilon;
  qc.sinkhorn.iterations = opt.sinkhorn_iters;

  Dynamics2dRun run{kind, {}, {}, 0};
  Codebook book(init_codes);
  AdamState adam;
  adam.lr = opt.lr;
  const double inv_l = 1.0 / static_cast<double>(points.rows());
  for (std::size_t step = 0; step < opt.steps; ++step) {
    run.trajectory.push_back(book.codes);
    const Assignment a = assign(points, book, qc);
    Matrix grad(book.size(), 2);
    for (std::size_t i = 0; i < points.rows(); ++i) {
      const std::size_t k = a.indices[i];
      for (std::size_t c = 0; c < 2; ++c) grad(k, c) += 2.0 * (book.codes(k, c) - points(i, c)) * inv_l;
    }
    const std::span<double> pv[] = {book.codes.data()};
    const std::span<double> gv[] = {grad.data()};
    adam_step(pv, gv, adam);
  }
  run.trajectory.push_back(book.codes);
  run.final_indices = assign(points, book, qc).indices;
  run.usage = distinct(run.final_indices);
  return run;
}

}  // namespace

Dynamics2dResult run_dynamics2d(const Dynamics2dOptions& opt) {
  if (opt.points == 0 || opt.codes == 0) throw ConfigError("dynamics2d: empty problem");
  MixtureSpec data_spec;
  data_spec.components = {{{0.0, 0.0}, {1.0, 0.0, 0.0, 1.0}, 1.0}};
  MixtureSpec code_spec;
  code_spec.components = {{{1.5, 1.5}, {0.25, 0.0, 0.0, 0.25}, 1.0}};

  Dynamics2dResult r;
  r.points = gen_gaussian_mixture(data_spec, opt.points, SeededRng::derive(opt.seed, 11)).points;
  r.initial_codes = gen_gaussian_mixture(code_spec, opt.codes, SeededRng::derive(opt.seed, 12)).points;
  r.nearest = train_codes_2d(r.points, r.initial_codes, QuantizerKind::nearest, opt);
  r.optvq = train_codes_2d(r.points, r.initial_codes, QuantizerKind::optvq, opt);
  return r;
}

nlohmann::json dynamics2d_json(const Dynamics2dResult& r) {
  auto traj = [](const Dynamics2dRun& run) {
    nlohmann::json t = nlohmann::json::array();
    for (const auto& m : run.trajectory) t.push_back(matrix_json(m));
    return t;
  };
  return {
      {"steps", r.optvq.trajectory.empty() ? 0 : r.optvq.trajectory.size() - 1},
      {"num_points", r.points.rows()},
      {"num_codes", r.initial_codes.rows()},
      {"usage_nn", r.nearest.usage},
      {"usage_optvq", r.optvq.usage},
      {"points", matrix_json(r.points)},
      {"final_indices", {{"nn", r.nearest.final_indices}, {"optvq", r.optvq.final_indices}}},
      {"trajectories", {{"nn", traj(r.nearest)}, {"optvq", traj(r.optvq)}}},
  };
}

// ---- consistency -----------------------------------------------------------

ConsistencyResult run_consistency(const ConsistencyOptions& opt) {
  if (opt.codes == 0 || !(opt.gap > 0.0)) throw ConfigError("consistency: need codes >= 1 and gap > 0");
  SeededRng rng(SeededRng::derive(opt.seed, 21));
  ConsistencyResult res;

  // Grid with spacing 5*gap, jittered by at most gap/2 per axis, keeps codes
  // at least 4*gap apart; features sit within gap of their own code.
  {
    auto& c = res.separated;
    const std::size_t n = opt.codes;
    const auto side = static_cast<std::size_t>(std::ceil(std::sqrt(static_cast<double>(n))));
    const double spacing = 5.0 * opt.gap;
    c.codes = Matrix(n, 2);
    for (std::size_t j = 0; j < n; ++j) {
      c.codes(j, 0) = spacing * static_cast<double>(j % side) + rng.uniform(-0.25, 0.25) * opt.gap;
      c.codes(j, 1) = spacing * static_cast<double>(j / side) + rng.uniform(-0.25, 0.25) * opt.gap;
    }
    std::vector<std::size_t> perm(n);
    for (std::size_t i = 0; i < n; ++i) perm[i] = i;
    for (std::size_t i = n - 1; i > 0; --i) std::swap(perm[i], perm[rng.below(i + 1)]);
    c.features = Matrix(n, 2);
    for (std::size_t i = 0; i < n; ++i) {
      const double radius = opt.gap * rng.uniform();
      const double angle = 2.0 * 3.14159265358979323846 * rng.uniform();
      c.features(i, 0) = c.codes(perm[i], 0) + radius * std::cos(angle);
      c.features(i, 1) = c.codes(perm[i], 1) + radius * std::sin(angle);
    }
    Codebook book(c.codes);
    c.nn_indices = nn_assign(c.features, book).indices;
    const TransportPlan tp =
        sinkhorn_converged(pairwise_sq_distances(c.features, c.codes), opt.epsilon, 1e-12, 100000);
    c.optvq_indices = row_argmax(tp.plan);
    c.agreement = agreement(c.nn_indices, c.optvq_indices);
    c.nn_usage = static_cast<double>(distinct(c.nn_indices)) / static_cast<double>(n);
    c.optvq_usage = static_cast<double>(distinct(c.optvq_indices)) / static_cast<double>(n);
  }

  {
    auto& c = res.mismatched;
    c.features = gaussian_points(opt.mismatch_points, 2, 0.0, 1.0, rng);
    c.codes = gaussian_points(opt.codes, 2, 0.0, 0.3, rng);
    for (std::size_t j = 0; j < opt.codes; ++j) c.codes(j, 0) += 3.0;
    Codebook book(c.codes);
    c.nn_indices = nn_assign(c.features, book).indices;
    SinkhornConfig sc;
    sc.epsilon = opt.epsilon;
    sc.iterations = opt.sinkhorn_iters;
    c.optvq_indices = optvq_assign(c.features, book, sc).indices;
    c.agreement = agreement(c.nn_indices, c.optvq_indices);
    c.nn_usage = static_cast<double>(distinct(c.nn_indices)) / static_cast<double>(opt.codes);
    c.optvq_usage = static_cast<double>(distinct(c.optvq_indices)) / static_cast<double>(opt.codes);
  }
  return res;
}

nlohmann::json consistency_json(const ConsistencyResult& r) {
  auto one = [](const ConsistencyCase& c) {
    return nlohmann::json{{"agreement", c.agreement},
                          {"nn_usage", c.nn_usage},
                          {"optvq_usage", c.optvq_usage},
                          {"nn_indices", c.nn_indices},
                          {"optvq_indices", c.optvq_indices},
                          {"features", matrix_json(c.features)},
                          {"codes", matrix_json(c.codes)}};
  };
  return {{"separated", one(r.separated)}, {"mismatched", one(r.mismatched)}};
}

// ---- Sinkhorn convergence ----------------------------------------------------

std::vector<double> sinkhorn_residuals(const Matrix& cost, double epsilon, int max_iters) {
  TransportPlan tp = sinkhorn_init(normalize_cost(cost), epsilon);
  std::vector<double> out;
  out.reserve(static_cast<std::size_t>(max_iters));
  for (int t = 0; t < max_iters; ++t) {
    const Matrix prev = tp.plan;
    sinkhorn_resume(tp, 1);
    out.push_back(max_abs_diff(tp.plan, prev));
  }
  return out;
}

std::vector<SinkhornStudyRow> run_sinkhorn_study(const SinkhornStudyOptions& opt) {
  if (opt.max_iters < 1 || opt.trials < 1) throw ConfigError("sinkhorn study: need iterations and trials");
  std::vector<std::vector<double>> per_iter(static_cast<std::size_t>(opt.max_iters));
  for (std::size_t trial = 0; trial < opt.trials; ++trial) {
    SeededRng rng(SeededRng::derive(opt.seed, 100 + trial));
    const Matrix z = gaussian_points(opt.points, opt.dim, 0.0, 1.0, rng);
    const Matrix c = gaussian_points(opt.codes, opt.dim, 0.0, 1.0, rng);
    const auto res = sinkhorn_residuals(pairwise_sq_distances(z, c), opt.epsilon, opt.max_iters);
    for (std::size_t t = 0; t < res.size(); ++t) per_iter[t].push_back(res[t]);
  }
  std::vector<SinkhornStudyRow> rows;
  for (std::size_t t = 0; t < per_iter.size(); ++t) {
    auto v = per_iter[t];
    std::sort(v.begin(), v.end());
    const std::size_t n = v.size();
    const double median = n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
    rows.push_back({static_cast<int>(t + 1), median, v.back()});
  }
  return rows;
}

std::string sinkhorn_study_csv(const std::vector<SinkhornStudyRow>& rows) {
  std::string out = "iteration,median_residual,max_residual\n";
  for (const auto& r : rows)
    out += std::to_string(r.iteration) + "," + fmt_double(r.median_residual) + "," +
           fmt_double(r.max_residual) + "\n";
  return out;
}

// ---- normalization -------------------------------------------------------------

bool has_underflow_row(const Matrix& cost, double epsilon) {
  for (std::size_t i = 0; i < cost.rows(); ++i) {
    bool all_zero = true;
    for (double d : cost.row(i)) {
      if (std::exp(-epsilon * d) != 0.0) {
        all_zero = false;
        break;
      }
    }
    if (all_zero) return true;
  }
  return false;
}

std::vector<NormalizeStudyScale> run_normalize_study(const NormalizeStudyOptions& opt) {
  if (opt.min_exp > 0 || opt.max_exp < 0) throw ConfigError("normalize study: scale range must include 10^0");
  SeededRng rng(SeededRng::derive(opt.seed, 31));
  const Matrix z = gaussian_points(opt.points, opt.dim, 0.0, 1.0, rng);
  const Matrix c = gaussian_points(opt.codes, opt.dim, 0.0, 1.0, rng);
  const Matrix base = pairwise_sq_distances(z, c);

  SinkhornConfig norm_cfg;
  norm_cfg.epsilon = opt.epsilon;
  norm_cfg.iterations = opt.sinkhorn_iters;
  SinkhornConfig raw_cfg = norm_cfg;
  raw_cfg.normalize = false;

  auto all_finite = [](const Matrix& m) {
    return std::all_of(m.data().begin(), m.data().end(), [](double v) { return std::isfinite(v); });
  };

  std::vector<NormalizeStudyScale> rows;
  std::vector<std::size_t> reference;
  for (int k = opt.min_exp; k <= opt.max_exp; ++k) {
    Matrix cost = base;
    const double scale = std::pow(10.0, k);
    for (double& v : cost.data()) v *= scale;

    NormalizeStudyScale row;
    row.exponent = k;
    const Matrix normed = normalize_cost(cost);
    const auto st = matrix_stats(normed);
    row.norm_min = *std::min_element(normed.data().begin(), normed.data().end());
    row.norm_std = st.std;
    const TransportPlan tp = sinkhorn(cost, norm_cfg);
    row.norm_plan_finite = all_finite(tp.plan);
    row.argmax = row_argmax(tp.plan);

    row.raw_underflow_row = has_underflow_row(cost, opt.epsilon);
    try {
      row.raw_plan_finite = all_finite(sinkhorn(cost, raw_cfg).plan);
    } catch (const NumericalError&) {
      row.raw_plan_finite = false;
    }
    row.raw_hist = histogram(cost, opt.bins, row.raw_lo, row.raw_hi);
    row.norm_hist = histogram(normed, opt.bins, row.norm_lo, row.norm_hi);
    if (k == 0) reference = row.argmax;
    rows.push_back(std::move(row));
  }
  for (auto& row : rows) row.argmax_matches = row.argmax == reference;
  return rows;
}

std::string normalize_summary_csv(const std::vector<NormalizeStudyScale>& rows) {
  std::string out =
      "scale_exp,norm_min,norm_std,norm_plan_finite,argmax_matches,raw_underflow_row,raw_plan_finite\n";
  for (const auto& r : rows)
    out += std::to_string(r.exponent) + "," + fmt_double(r.norm_min) + "," + fmt_double(r.norm_std) +
           "," + (r.norm_plan_finite ? "1" : "0") + "," + (r.argmax_matches ? "1" : "0") + "," +
           (r.raw_underflow_row ? "1" : "0") + "," + (r.raw_plan_finite ? "1" : "0") + "\n";
  return out;
}

std::string normalize_histogram_csv(const std::vector<NormalizeStudyScale>& rows) {
  std::string out = "scale_exp,matrix,bin,bin_lo,bin_hi,count\n";
  auto emit = [&](int k, const char* name, const std::vector<std::uint64_t>& h, double lo, double hi) {
    const double w = hi > lo ? (hi - lo) / static_cast<double>(h.size()) : 1.0;
    for (std::size_t b = 0; b < h.size(); ++b)
      out += std::to_string(k) + "," + name + "," + std::to_string(b) + "," +
             fmt_double(lo + w * static_cast<double>(b)) + "," +
             fmt_double(lo + w * static_cast<double>(b + 1)) + "," + std::to_string(h[b]) + "\n";
  };
  for (const auto& r : rows) {
    emit(r.exponent, "raw", r.raw_hist, r.raw_lo, r.raw_hi);
    emit(r.exponent, "normalized", r.norm_hist, r.norm_lo, r.norm_hi);
  }
  return out;
}

// ---- ablation -----------------------------------------------------------------

std::vector<AblationCell> run_ablation(const TrainConfig& base, const DatasetSplit& data,
                                       const AblationOptions& opt) {
  std::vector<AblationCell> cells;
  for (std::size_t d : opt.latent_dims)
    for (std::size_t n : opt.codebook_sizes)
      for (QuantizerKind kind : {QuantizerKind::nearest, QuantizerKind::optvq}) {
        TrainConfig cfg = base;
        cfg.latent_dim = d;
        cfg.codebook_size = n;
        cfg.quantizer = kind;
        const TrainRunResult r = run_training(cfg, data);
        cells.push_back({d, n, kind, r.validation.l_rec, r.validation.usage_frac, r.validation.psnr});
      }
  return cells;
}

std::string ablation_csv(const std::vector<AblationCell>& cells) {
  std::string out = "latent_dim,codebook_size,quantizer,l_rec,usage_frac,psnr\n";
  for (const auto& c : cells)
    out += std::to_string(c.latent_dim) + "," + std::to_string(c.codebook_size) + "," +
           to_string(c.kind) + "," + fmt_double(c.l_rec) + "," + fmt_double(c.usage_frac) + "," +
           fmt_double(c.psnr) + "\n";
  return out;
}

}  // namespace optvq
