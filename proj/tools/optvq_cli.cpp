// optvq: training, evaluation and experiment driver.
//
// Exit codes: 0 success, 1 unexpected failure, 2 config error,
// 3 data error, 4 numerical failure.

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "optvq/checkpoint.hpp"
#include "optvq/config.hpp"
#include "optvq/error.hpp"
#include "optvq/experiments.hpp"

namespace {

struct Common {
  std::string config_path;
  std::string out_dir;
  std::vector<std::string> overrides;
  bool seed_given = false;
  std::uint64_t seed = 0;
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--config", c.config_path, "key=value config file");
  cmd->add_option("--out", c.out_dir, "output directory (overrides out_dir)");
  cmd->add_option("--set", c.overrides, "override a config key, key=value")->take_all();
  cmd->add_option_function<std::uint64_t>(
      "--seed",
      [&c](const std::uint64_t& s) {
        c.seed_given = true;
        c.seed = s;
      },
      "random seed (overrides seed)");
}

optvq::RunConfig resolve(const Common& c) {
  optvq::RunConfig cfg;
  if (!c.config_path.empty()) cfg.load_file(c.config_path);
  for (const auto& o : c.overrides) cfg.set_override(o);
  if (c.seed_given) cfg.set("seed", std::to_string(c.seed));
  if (!c.out_dir.empty()) cfg.set("out_dir", c.out_dir);
  return cfg;
}

void ensure_out(const optvq::RunConfig& cfg) {
  std::error_code ec;
  std::filesystem::create_directories(cfg.get("out_dir"), ec);
  if (ec) throw optvq::DataError("cannot create " + cfg.get("out_dir") + ": " + ec.message());
}

std::string out_path(const optvq::RunConfig& cfg, const std::string& name) {
  return cfg.get("out_dir") + "/" + name;
}

int run_train(const Common& c) {
  const auto cfg = resolve(c);
  const auto res = optvq::cmd_train(cfg);
  std::printf("steps=%zu val_psnr=%.3f val_usage=%.4f perplexity=%.1f\n", res.steps.size(),
              res.validation.psnr, res.validation.usage_frac, res.validation.perplexity);
  return 0;
}

int run_eval(const Common& c, const std::string& checkpoint) {
  const auto cfg = resolve(c);
  const auto r = optvq::cmd_eval(cfg, checkpoint);
  std::printf("val_psnr=%.3f val_usage=%.4f l_rec=%.5f\n", r.psnr, r.usage_frac, r.l_rec);
  return 0;
}

int run_dynamics(const Common& c, optvq::Dynamics2dOptions opt) {
  const auto cfg = resolve(c);
  opt.seed = cfg.get_u64("seed");
  opt.epsilon = cfg.get_double("epsilon");
  opt.sinkhorn_iters = static_cast<int>(cfg.get_count("sinkhorn_iters"));
  const auto r = optvq::run_dynamics2d(opt);
  ensure_out(cfg);
  optvq::write_text_file(out_path(cfg, "dynamics2d.json"), optvq::dynamics2d_json(r).dump() + "\n");
  std::printf("usage_nn=%zu/%zu usage_optvq=%zu/%zu\n", r.nearest.usage, opt.codes, r.optvq.usage,
              opt.codes);
  return 0;
}

int run_consistency(const Common& c, optvq::ConsistencyOptions opt) {
  const auto cfg = resolve(c);
  opt.seed = cfg.get_u64("seed");
  opt.epsilon = cfg.get_double("epsilon");
  opt.sinkhorn_iters = static_cast<int>(cfg.get_count("sinkhorn_iters"));
  const auto r = optvq::run_consistency(opt);
  ensure_out(cfg);
  optvq::write_text_file(out_path(cfg, "consistency.json"), optvq::consistency_json(r).dump() + "\n");
  std::printf("separated_agreement=%.3f mismatched_agreement=%.3f mismatched_optvq_usage=%.3f\n",
              r.separated.agreement, r.mismatched.agreement, r.mismatched.optvq_usage);
  return 0;
}

int run_sinkhorn_study(const Common& c, optvq::SinkhornStudyOptions opt) {
  const auto cfg = resolve(c);
  opt.seed = cfg.get_u64("seed");
  opt.epsilon = cfg.get_double("epsilon");
  const auto rows = optvq::run_sinkhorn_study(opt);
  ensure_out(cfg);
  optvq::write_text_file(out_path(cfg, "sinkhorn_study.csv"), optvq::sinkhorn_study_csv(rows));
  for (const auto& r : rows) {
    if (r.iteration <= 8) std::printf("iter %d: median %.3e max %.3e\n", r.iteration, r.median_residual, r.max_residual);
  }
  return 0;
}

int run_normalize_study(const Common& c, optvq::NormalizeStudyOptions opt) {
  const auto cfg = resolve(c);
  opt.seed = cfg.get_u64("seed");
  opt.epsilon = cfg.get_double("epsilon");
  opt.sinkhorn_iters = static_cast<int>(cfg.get_count("sinkhorn_iters"));
  const auto rows = optvq::run_normalize_study(opt);
  ensure_out(cfg);
  optvq::write_text_file(out_path(cfg, "normalize_summary.csv"), optvq::normalize_summary_csv(rows));
  optvq::write_text_file(out_path(cfg, "normalize_histograms.csv"), optvq::normalize_histogram_csv(rows));
  std::fputs(optvq::normalize_summary_csv(rows).c_str(), stdout);
  return 0;
}

int run_ablate(const Common& c) {
  const auto cfg = resolve(c);
  const auto base = cfg.train_config();
  const auto data = optvq::load_datasets(cfg);
  const auto cells = optvq::run_ablation(base, data);
  ensure_out(cfg);
  optvq::write_text_file(out_path(cfg, "ablation.csv"), optvq::ablation_csv(cells));
  std::fputs(optvq::ablation_csv(cells).c_str(), stdout);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"OptVQ: vector quantization with entropic optimal transport"};
  app.require_subcommand(1);

  Common common;
  std::string checkpoint;
  optvq::Dynamics2dOptions dyn;
  optvq::ConsistencyOptions cons;
  optvq::SinkhornStudyOptions sk;
  optvq::NormalizeStudyOptions ns;

  auto* train = app.add_subcommand("train", "train an autoencoder; writes metrics.csv, summary.json, checkpoint.ovq");
  add_common(train, common);
  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint on the validation split");
  add_common(eval, common);
  eval->add_option("--checkpoint", checkpoint, "checkpoint path (default <out_dir>/checkpoint.ovq)");
  auto* dynamics = app.add_subcommand("dynamics2d", "2D code-trajectory experiment");
  add_common(dynamics, common);
  dynamics->add_option("--steps", dyn.steps, "training steps")->capture_default_str();
  auto* consistency = app.add_subcommand("consistency", "nearest vs transport assignment agreement");
  add_common(consistency, common);
  auto* sinkhorn = app.add_subcommand("sinkhorn-study", "per-iteration Sinkhorn residuals");
  add_common(sinkhorn, common);
  sinkhorn->add_option("--max-iters", sk.max_iters, "iterations per trial")->capture_default_str();
  sinkhorn->add_option("--trials", sk.trials, "random problems")->capture_default_str();
  auto* normalize = app.add_subcommand("normalize-study", "cost normalization across input scales");
  add_common(normalize, common);
  auto* ablate = app.add_subcommand("ablate", "latent_dim x codebook_size x quantizer grid");
  add_common(ablate, common);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  try {
    if (*train) return run_train(common);
    if (*eval) return run_eval(common, checkpoint);
    if (*dynamics) return run_dynamics(common, dyn);
    if (*consistency) return run_consistency(common, cons);
    if (*sinkhorn) return run_sinkhorn_study(common, sk);
    if (*normalize) return run_normalize_study(common, ns);
    if (*ablate) return run_ablate(common);
  } catch (const optvq::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const optvq::DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 3;
  } catch (const optvq::NumericalError& e) {
    std::cerr << "numerical error: " << e.what() << "\n";
    return 4;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}
