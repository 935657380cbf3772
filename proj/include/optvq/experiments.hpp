#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "optvq/config.hpp"
#include "optvq/data.hpp"
#include "optvq/model.hpp"
#include "optvq/quantizer.hpp"

namespace optvq {

// ---- training runs -------------------------------------------------------

struct DatasetSplit {
  ImageDataset train;
  ImageDataset val;
};

// dataset=mnist takes the first train_images of <data_dir>/train-*-ubyte[.gz]
// for training and the first val_images of t10k-*-ubyte[.gz] for validation.
// dataset=synthetic draws stroke images.
DatasetSplit load_datasets(const RunConfig& cfg);

inline constexpr const char* kMetricsHeader = "step,l1,l2,commit,total,usage_frac,perplexity";

std::string metrics_csv(const std::vector<StepMetrics>& steps);
std::vector<StepMetrics> parse_metrics_csv(const std::string& text);

struct TrainRunResult {
  std::vector<StepMetrics> steps;
  EvalReport validation;
  TrainState state;
};

TrainRunResult run_training(const TrainConfig& cfg, const DatasetSplit& data);

nlohmann::json eval_to_json(const EvalReport& r);

// Writes metrics.csv, summary.json and checkpoint.ovq into out_dir.
TrainRunResult cmd_train(const RunConfig& cfg);
// Loads <out_dir>/checkpoint.ovq (or `checkpoint`) and evaluates on the
// validation split; writes eval.json.
EvalReport cmd_eval(const RunConfig& cfg, const std::string& checkpoint = {});

// ---- 2D dynamics ---------------------------------------------------------

struct Dynamics2dOptions {
  std::size_t points = 100;
  std::size_t codes = 25;
  std::size_t steps = 300;
  double lr = 0.03;  // Adam step on the code positions
  double epsilon = 10.0;
  int sinkhorn_iters = 5;
  std::uint64_t seed = 0;
};

struct Dynamics2dRun {
  QuantizerKind kind;
  std::vector<Matrix> trajectory;  // code positions before each step, plus final
  std::vector<std::size_t> final_indices;
  std::size_t usage = 0;           // distinct codes in the final assignment
};

struct Dynamics2dResult {
  Matrix points;
  Matrix initial_codes;
  Dynamics2dRun nearest;
  Dynamics2dRun optvq;
};

// Data ~ N(0, I); codes start in N((1.5, 1.5), 0.25 I), overlapping one flank
// of the data. Codes are trained with Adam on the codebook
// term of the commitment loss under each assignment rule.
Dynamics2dResult run_dynamics2d(const Dynamics2dOptions& opt);
nlohmann::json dynamics2d_json(const Dynamics2dResult& r);

// ---- consistency ----------------------------------------------------------

struct ConsistencyOptions {
  std::size_t codes = 16;
  double gap = 0.05;             // feature-to-own-code distance bound
  std::size_t mismatch_points = 64;
  double epsilon = 10.0;
  int sinkhorn_iters = 5;
  std::uint64_t seed = 0;
};

struct ConsistencyCase {
  Matrix features;
  Matrix codes;
  std::vector<std::size_t> nn_indices;
  std::vector<std::size_t> optvq_indices;
  double agreement = 0.0;
  double nn_usage = 0.0;
  double optvq_usage = 0.0;
};

struct ConsistencyResult {
  ConsistencyCase separated;
  ConsistencyCase mismatched;
};

// Separated: one feature per code, within `gap` of its code and at least
// 3*gap from every other code; OptVQ uses the converged plan.
// Mismatched: features and codes from different Gaussians; OptVQ uses the
// fixed-iteration solver.
ConsistencyResult run_consistency(const ConsistencyOptions& opt);
nlohmann::json consistency_json(const ConsistencyResult& r);

// ---- Sinkhorn convergence -------------------------------------------------

struct SinkhornStudyOptions {
  std::size_t points = 10;
  std::size_t codes = 10;
  std::size_t dim = 16;
  double epsilon = 10.0;
  int max_iters = 20;
  std::size_t trials = 100;
  std::uint64_t seed = 0;
};

struct SinkhornStudyRow {
  int iteration = 0;
  double median_residual = 0.0;
  double max_residual = 0.0;
};

// residual(t) = max |A^t - A^(t-1)|, A^0 the initial kernel.
std::vector<double> sinkhorn_residuals(const Matrix& cost, double epsilon, int max_iters);
std::vector<SinkhornStudyRow> run_sinkhorn_study(const SinkhornStudyOptions& opt);
std::string sinkhorn_study_csv(const std::vector<SinkhornStudyRow>& rows);

// ---- normalization --------------------------------------------------------

struct NormalizeStudyOptions {
  std::size_t points = 64;
  std::size_t codes = 64;
  std::size_t dim = 8;
  double epsilon = 10.0;
  int sinkhorn_iters = 5;
  std::size_t bins = 20;
  int min_exp = -3;
  int max_exp = 3;
  std::uint64_t seed = 0;
};

struct NormalizeStudyScale {
  int exponent = 0;
  double norm_min = 0.0;
  double norm_std = 0.0;
  bool norm_plan_finite = false;
  bool argmax_matches = false;  // same indices as exponent 0
  bool raw_underflow_row = false;
  bool raw_plan_finite = false;
  std::vector<std::size_t> argmax;
  std::vector<std::uint64_t> raw_hist;
  std::vector<std::uint64_t> norm_hist;
  double raw_lo = 0.0, raw_hi = 0.0, norm_lo = 0.0, norm_hi = 0.0;
};

std::vector<NormalizeStudyScale> run_normalize_study(const NormalizeStudyOptions& opt);
std::string normalize_summary_csv(const std::vector<NormalizeStudyScale>& rows);
std::string normalize_histogram_csv(const std::vector<NormalizeStudyScale>& rows);

// True if some row of exp(-epsilon * cost) is entirely zero in double precision.
bool has_underflow_row(const Matrix& cost, double epsilon);

// ---- ablation grid --------------------------------------------------------

struct AblationCell {
  std::size_t latent_dim = 0;
  std::size_t codebook_size = 0;
  QuantizerKind kind = QuantizerKind::optvq;
  double l_rec = 0.0;
  double usage_frac = 0.0;
  double psnr = 0.0;
};

struct AblationOptions {
  std::vector<std::size_t> latent_dims{8, 32};
  std::vector<std::size_t> codebook_sizes{128, 1024};
};

// Trains one model per (latent_dim, codebook_size, quantizer) cell with the
// remaining settings taken from `base`; each cell reseeds from base.seed.
std::vector<AblationCell> run_ablation(const TrainConfig& base, const DatasetSplit& data,
                                       const AblationOptions& opt = {});
std::string ablation_csv(const std::vector<AblationCell>& cells);

// ---- helpers ---------------------------------------------------------------

void write_text_file(const std::string& path, const std::string& text);
std::string read_text_file(const std::string& path);

}  // namespace optvq
