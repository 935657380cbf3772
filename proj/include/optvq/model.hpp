#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "optvq/data.hpp"
#include "optvq/numerics.hpp"
#include "optvq/quantizer.hpp"

namespace optvq {

// y = x W^T + b, W is out x in.
struct Linear {
  Matrix weight;
  std::vector<double> bias;

  Linear() = default;
  Linear(std::size_t in, std::size_t out) : weight(out, in), bias(out, 0.0) {}
  std::size_t in() const { return weight.cols(); }
  std::size_t out() const { return weight.rows(); }

  Matrix forward(const Matrix& x) const;
  bool operator==(const Linear&) const = default;
};

struct AutoencoderShape {
  std::size_t side = 32;
  std::size_t channels = 1;
  std::size_t patch = 4;
  std::size_t hidden = 64;
  std::size_t latent = 8;

  std::size_t patches_per_side() const { return side / patch; }
  std::size_t tokens_per_image() const { return patches_per_side() * patches_per_side(); }
  std::size_t patch_dim() const { return patch * patch * channels; }
  std::size_t image_dim() const { return side * side * channels; }
  void validate() const;
  bool operator==(const AutoencoderShape&) const = default;
};

// encoder: patch -> hidden (ReLU) -> latent
// decoder: latent -> hidden (ReLU) -> patch (sigmoid)
struct AutoencoderParams {
  Linear enc1, enc2, dec1, dec2;
  bool operator==(const AutoencoderParams&) const = default;
};

struct PatchAutoencoder {
  AutoencoderShape shape;
  AutoencoderParams params;

  // All-zero weights.
  explicit PatchAutoencoder(const AutoencoderShape& shape);
  PatchAutoencoder() : PatchAutoencoder(AutoencoderShape{}) {}
  // Weights and biases uniform in [-1/sqrt(fan_in), 1/sqrt(fan_in)].
  static PatchAutoencoder random_init(const AutoencoderShape& shape, SeededRng& rng);

  bool operator==(const PatchAutoencoder&) const = default;
};

// images (batch x side*side*ch, HWC) -> patches (batch*m x p*p*ch).
// Tokens are ordered image-major, then patch row, then patch column.
Matrix extract_patches(const Matrix& images, const AutoencoderShape& shape);
Matrix assemble_patches(const Matrix& patches, const AutoencoderShape& shape);

struct EncodeTrace {
  Matrix patches;
  Matrix hidden_pre;
  Matrix hidden;
  Matrix z_e;
};

struct DecodeTrace {
  Matrix z_in;
  Matrix hidden_pre;
  Matrix hidden;
  Matrix out_patches;  // after sigmoid
  Matrix images;
};

EncodeTrace encode_trace(const PatchAutoencoder& model, const Matrix& images);
DecodeTrace decode_trace(const PatchAutoencoder& model, const Matrix& z_q);
Matrix encode(const PatchAutoencoder& model, const Matrix& images);
Matrix decode(const PatchAutoencoder& model, const Matrix& z_q);

struct LossBreakdown {
  double l1 = 0.0;      // mean |x - xhat| per pixel
  double l2 = 0.0;      // mean (x - xhat)^2 per pixel
  double commit = 0.0;  // commitment loss, per token
  double total = 0.0;   // l1 + l2 + commit
};

struct ForwardPass {
  Matrix x;
  EncodeTrace enc;
  MultiheadResult quant;
  DecodeTrace dec;
  CommitmentLoss commit;
  LossBreakdown loss;
};

// Encodes, assigns with cfg.kind (updating codebook usage), decodes through
// the straight-through path and evaluates the composite loss.
ForwardPass forward_loss(const PatchAutoencoder& model, std::vector<Codebook>& books,
                         const QuantizerConfig& cfg, const Matrix& x);

// Same as forward_loss but with the per-head assignments fixed.
ForwardPass forward_with_assignments(const PatchAutoencoder& model,
                                     const std::vector<Codebook>& books,
                                     const QuantizerConfig& cfg, const Matrix& x,
                                     const std::vector<Assignment>& assignments);

struct GradientBundle {
  AutoencoderParams model;
  std::vector<Matrix> codebooks;
};

GradientBundle backward(const PatchAutoencoder& model, const std::vector<Codebook>& books,
                        const QuantizerConfig& cfg, const ForwardPass& fp);

// Flat views over every trainable array, in a fixed order:
// enc1.W enc1.b enc2.W enc2.b dec1.W dec1.b dec2.W dec2.b codebook[0..B).
std::vector<std::span<double>> parameter_views(AutoencoderParams& params,
                                               std::vector<Codebook>& books);
std::vector<std::span<double>> gradient_views(GradientBundle& grads);

struct AdamState {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::uint64_t step = 0;
  std::vector<std::vector<double>> m;
  std::vector<std::vector<double>> v;

  bool operator==(const AdamState&) const = default;
};

// Bias-corrected Adam, no weight decay. Moment buffers are created lazily on
// the first call.
void adam_step(std::span<const std::span<double>> params,
               std::span<const std::span<double>> grads, AdamState& state);

struct TrainConfig {
  QuantizerKind quantizer = QuantizerKind::optvq;
  std::size_t codebook_size = 1024;
  std::size_t latent_dim = 8;
  std::size_t heads = 1;
  double epsilon = 10.0;
  int sinkhorn_iters = 5;
  double beta = 0.25;
  bool balanced_marginals = false;
  std::size_t batch_size = 16;
  std::size_t epochs = 5;
  double lr = 1e-3;
  std::uint64_t seed = 0;
  std::size_t patch_size = 4;
  std::size_t hidden_dim = 64;
  double codebook_init_range = 2.0;  // codes uniform in [-r, r]; 0 means 1/n

  QuantizerConfig quantizer_config() const;
  AutoencoderShape model_shape(std::size_t side, std::size_t channels) const;
  void validate() const;
};

struct TrainState {
  PatchAutoencoder model;
  std::vector<Codebook> books;
  AdamState adam;
  std::uint64_t step = 0;

  bool operator==(const TrainState&) const = default;
};

TrainState init_train_state(const TrainConfig& cfg, std::size_t side, std::size_t channels);

struct StepMetrics {
  std::uint64_t step = 0;
  double l1 = 0.0;
  double l2 = 0.0;
  double commit = 0.0;
  double total = 0.0;
  double usage_frac = 0.0;  // codes hit within the step's batch
  double perplexity = 0.0;
};

struct TrainReport {
  std::vector<StepMetrics> steps;
  TrainState state;
};

// One optimizer step on a batch of images. Returns the batch metrics.
StepMetrics train_step(TrainState& state, const TrainConfig& cfg, const Matrix& batch);

using StepCallback = std::function<void(const StepMetrics&)>;

TrainReport train(const TrainConfig& cfg, const ImageDataset& dataset,
                  const StepCallback& on_step = {});

// Continues training an existing state for cfg.epochs more epochs.
void train_more(TrainState& state, const TrainConfig& cfg, const ImageDataset& dataset,
                std::vector<StepMetrics>& log, const StepCallback& on_step = {});

struct EvalReport {
  double psnr = 0.0;
  double l1 = 0.0;
  double l2 = 0.0;
  double l_rec = 0.0;  // l1 + l2
  double commit = 0.0;
  double usage_frac = 0.0;
  double perplexity = 0.0;
  std::vector<std::uint64_t> histogram;  // concatenated over heads
};

// Quantizes the dataset in batches with the configured assignment rule
// and reports reconstruction and code-usage statistics over the whole set.
EvalReport evaluate(const TrainState& state, const TrainConfig& cfg, const ImageDataset& dataset);

}  // namespace optvq
