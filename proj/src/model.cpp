#include "optvq/model.hpp"

#include <cmath>

#include "optvq/error.hpp"

namespace optvq {

namespace {

double sigmoid(double v) {
  if (v >= 0.0) return 1.0 / (1.0 + std::exp(-v));
  const double e = std::exp(v);
  return e / (1.0 + e);
}

void relu_inplace(Matrix& m) {
  for (double& v : m.data()) v = v > 0.0 ? v : 0.0;
}

// Accumulates dW = gy^T x and db = colsum(gy); returns gx = gy W when wanted.
void linear_backward(const Linear& layer, const Matrix& x, const Matrix& gy, Linear& grad,
                     Matrix* gx) {
  const std::size_t in = layer.in();
  const std::size_t out = layer.out();
  if (gx) *gx = Matrix(x.rows(), in);
  for (std::size_t i = 0; i < x.rows(); ++i) {
    const double* xi = x.row(i).data();
    const double* gi = gy.row(i).data();
    double* gxi = gx ? gx->row(i).data() : nullptr;
    for (std::size_t o = 0; o < out; ++o) {
      const double g = gi[o];
      if (g == 0.0) continue;
      grad.bias[o] += g;
      double* gw = grad.weight.row(o).data();
      const double* w = layer.weight.row(o).data();
      for (std::size_t k = 0; k < in; ++k) {
        gw[k] += g * xi[k];
        if (gxi) gxi[k] += g * w[k];
      }
    }
  }
}

Linear zeros_like(const Linear& l) { return Linear(l.in(), l.out()); }

void init_uniform(Linear& l, SeededRng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(l.in()));
  for (double& w : l.weight.data()) w = rng.uniform(-bound, bound);
  for (double& b : l.bias) b = rng.uniform(-bound, bound);
}

void check_batch(const Matrix& images, const AutoencoderShape& shape) {
  if (images.cols() != shape.image_dim()) {
    throw ShapeError("image batch " + images.shape_str() + " does not match " +
                     std::to_string(shape.side) + "x" + std::to_string(shape.side) + "x" +
                     std::to_string(shape.channels) + " images");
  }
  if (images.rows() == 0) throw ShapeError("empty image batch");
}

}  // namespace

Matrix Linear::forward(const Matrix& x) const {
  if (x.cols() != in()) {
    throw ShapeError("linear layer expects " + std::to_string(in()) + " inputs, got " +
                     x.shape_str());
  }
  Matrix y(x.rows(), out());
  for (std::size_t i = 0; i < x.rows(); ++i) {
    const double* xi = x.row(i).data();
    double* yi = y.row(i).data();
    for (std::size_t o = 0; o < out(); ++o) {
      const double* w = weight.row(o).data();
      double acc = bias[o];
      for (std::size_t k = 0; k < in(); ++k) acc += w[k] * xi[k];
      yi[o] = acc;
    }
  }
  return y;
}

void AutoencoderShape::validate() const {
  if (side == 0 || channels == 0 || patch == 0 || hidden == 0 || latent == 0) {
    throw ConfigError("autoencoder dimensions must be >= 1");
  }
  if (side % patch != 0) {
    throw ConfigError("image side " + std::to_string(side) + " is not divisible by patch size " +
                      std::to_string(patch));
  }
}

PatchAutoencoder::PatchAutoencoder(const AutoencoderShape& s) : shape(s) {
  shape.validate();
  params.enc1 = Linear(shape.patch_dim(), shape.hidden);
  params.enc2 = Linear(shape.hidden, shape.latent);
  params.dec1 = Linear(shape.latent, shape.hidden);
  params.dec2 = Linear(shape.hidden, shape.patch_dim());
}

PatchAutoencoder PatchAutoencoder::random_init(const AutoencoderShape& shape, SeededRng& rng) {
  PatchAutoencoder m(shape);
  init_uniform(m.params.enc1, rng);
  init_uniform(m.params.enc2, rng);
  init_uniform(m.params.dec1, rng);
  init_uniform(m.params.dec2, rng);
  return m;
}

Matrix extract_patches(const Matrix& images, const AutoencoderShape& shape) {
  check_batch(images, shape);
  const std::size_t p = shape.patch;
  const std::size_t g = shape.patches_per_side();
  const std::size_t ch = shape.channels;
  const std::size_t m = shape.tokens_per_image();
  Matrix out(images.rows() * m, shape.patch_dim());
  for (std::size_t b = 0; b < images.rows(); ++b) {
    const auto img = images.row(b);
    for (std::size_t pr = 0; pr < g; ++pr)
      for (std::size_t pc = 0; pc < g; ++pc) {
        auto dst = out.row(b * m + pr * g + pc);
        std::size_t k = 0;
        for (std::size_t dy = 0; dy < p; ++dy)
          for (std::size_t dx = 0; dx < p; ++dx)
            for (std::size_t c = 0; c < ch; ++c)
              dst[k++] = img[((pr * p + dy) * shape.side + (pc * p + dx)) * ch + c];
      }
  }
  return out;
}

Matrix assemble_patches(const Matrix& patches, const AutoencoderShape& shape) {
  const std::size_t m = shape.tokens_per_image();
  if (patches.cols() != shape.patch_dim() || patches.rows() % m != 0) {
    throw ShapeError("patch matrix " + patches.shape_str() + " does not tile " +
                     std::to_string(shape.side) + "-pixel images");
  }
  const std::size_t p = shape.patch;
  const std::size_t g = shape.patches_per_side();
  const std::size_t ch = shape.channels;
  Matrix out(patches.rows() / m, shape.image_dim());
  for (std::size_t b = 0; b < out.rows(); ++b) {
    auto img = out.row(b);
    for (std::size_t pr = 0; pr < g; ++pr)
      for (std::size_t pc = 0; pc < g; ++pc) {
        const auto src = patches.row(b * m + pr * g + pc);
        std::size_t k = 0;
        for (std::size_t dy = 0; dy < p; ++dy)
          for (std::size_t dx = 0; dx < p; ++dx)
            for (std::size_t c = 0; c < ch; ++c)
              img[((pr * p + dy) * shape.side + (pc * p + dx)) * ch + c] = src[k++];
      }
  }
  return out;
}

EncodeTrace encode_trace(const PatchAutoencoder& model, const Matrix& images) {
  EncodeTrace t;
  t.patches = extract_patches(images, model.shape);
  t.hidden_pre = model.params.enc1.forward(t.patches);
  t.hidden = t.hidden_pre;
  relu_inplace(t.hidden);
  t.z_e = model.params.enc2.forward(t.hidden);
  return t;
}

DecodeTrace decode_trace(const PatchAutoencoder& model, const Matrix& z_q) {
  const std::size_t m = model.shape.tokens_per_image();
  if (z_q.cols() != model.shape.latent || z_q.rows() == 0 || z_q.rows() % m != 0) {
    throw ShapeError("decode: latent matrix " + z_q.shape_str() + " is not a multiple of " +
                     std::to_string(m) + " tokens of width " + std::to_string(model.shape.latent));
  }
  DecodeTrace t;
  t.z_in = z_q;
  t.hidden_pre = model.params.dec1.forward(z_q);
  t.hidden = t.hidden_pre;
  relu_inplace(t.hidden);
  t.out_patches = model.params.dec2.forward(t.hidden);
  for (double& v : t.out_patches.data()) v = sigmoid(v);
  t.images = assemble_patches(t.out_patches, model.shape);
  return t;
}

Matrix encode(const PatchAutoencoder& model, const Matrix& images) {
  return encode_trace(model, images).z_e;
}

Matrix decode(const PatchAutoencoder& model, const Matrix& z_q) {
  return decode_trace(model, z_q).images;
}

namespace {

ForwardPass finish_forward(const PatchAutoencoder& model, const QuantizerConfig& cfg,
                           const Matrix& x, EncodeTrace enc, MultiheadResult quant) {
  ForwardPass fp;
  fp.x = x;
  fp.enc = std::move(enc);
  fp.quant = std::move(quant);
  const StraightThrough ste = ste_combine(fp.enc.z_e, fp.quant.quantized);
  fp.dec = decode_trace(model, ste.forward);
  fp.commit = commitment_loss(fp.enc.z_e, fp.quant.quantized, cfg.beta);

  const double count = static_cast<double>(x.size());
  double l1 = 0.0;
  double l2 = 0.0;
  for (std::size_t k = 0; k < x.size(); ++k) {
    const double diff = fp.dec.images.data()[k] - x.data()[k];
    l1 += std::abs(diff);
    l2 += diff * diff;
  }
  fp.loss.l1 = l1 / count;
  fp.loss.l2 = l2 / count;
  fp.loss.commit = fp.commit.loss;
  fp.loss.total = fp.loss.l1 + fp.loss.l2 + fp.loss.commit;
  return fp;
}

}  // namespace

ForwardPass forward_loss(const PatchAutoencoder& model, std::vector<Codebook>& books,
                         const QuantizerConfig& cfg, const Matrix& x) {
  check_batch(x, model.shape);
  EncodeTrace enc = encode_trace(model, x);
  MultiheadResult quant = multihead_quantize(enc.z_e, books, cfg);
  return finish_forward(model, cfg, x, std::move(enc), std::move(quant));
}

ForwardPass forward_with_assignments(const PatchAutoencoder& model,
                                     const std::vector<Codebook>& books,
                                     const QuantizerConfig& cfg, const Matrix& x,
                                     const std::vector<Assignment>& assignments) {
  check_batch(x, model.shape);
  if (assignments.size() != books.size()) throw ShapeError("one assignment per head required");
  EncodeTrace enc = encode_trace(model, x);
  const std::size_t width = enc.z_e.cols() / books.size();
  MultiheadResult quant{Matrix(enc.z_e.rows(), enc.z_e.cols()), assignments};
  for (std::size_t h = 0; h < books.size(); ++h) {
    if (assignments[h].indices.size() != enc.z_e.rows()) {
      throw ShapeError("assignment length does not match token count");
    }
    set_column_slice(quant.quantized, h * width, gather_codes(books[h], assignments[h]));
  }
  return finish_forward(model, cfg, x, std::move(enc), std::move(quant));
}

GradientBundle backward(const PatchAutoencoder& model, const std::vector<Codebook>& books,
                        const QuantizerConfig& cfg, const ForwardPass& fp) {
  (void)cfg;
  const auto& p = model.params;
  GradientBundle g{{zeros_like(p.enc1), zeros_like(p.enc2), zeros_like(p.dec1), zeros_like(p.dec2)},
                   {}};

  // d(l1 + l2)/d xhat, per-pixel means; sign(0) = 0.
  const double inv_count = 1.0 / static_cast<double>(fp.x.size());
  Matrix g_img(fp.x.rows(), fp.x.cols());
  for (std::size_t k = 0; k < fp.x.size(); ++k) {
    const double diff = fp.dec.images.data()[k] - fp.x.data()[k];
    const double sign = diff > 0.0 ? 1.0 : (diff < 0.0 ? -1.0 : 0.0);
    g_img.data()[k] = (sign + 2.0 * diff) * inv_count;
  }
  Matrix g_out = extract_patches(g_img, model.shape);
  for (std::size_t k = 0; k < g_out.size(); ++k) {
    const double y = fp.dec.out_patches.data()[k];
    g_out.data()[k] *= y * (1.0 - y);
  }

  Matrix g_hidden;
  linear_backward(p.dec2, fp.dec.hidden, g_out, g.model.dec2, &g_hidden);
  for (std::size_t k = 0; k < g_hidden.size(); ++k)
    if (!(fp.dec.hidden_pre.data()[k] > 0.0)) g_hidden.data()[k] = 0.0;
  Matrix g_zq_forward;
  linear_backward(p.dec1, fp.dec.z_in, g_hidden, g.model.dec1, &g_zq_forward);

  // Straight-through: the decoder-side gradient reaches z_e unchanged.
  const StraightThrough ste{fp.dec.z_in};
  Matrix g_ze = ste.grad_wrt_ze(g_zq_forward);
  for (std::size_t k = 0; k < g_ze.size(); ++k) g_ze.data()[k] += fp.commit.grad_ze.data()[k];

  const std::size_t width = fp.enc.z_e.cols() / books.size();
  for (std::size_t h = 0; h < books.size(); ++h) {
    const Matrix part = books.size() == 1 ? fp.commit.grad_zq
                                          : column_slice(fp.commit.grad_zq, h * width, width);
    g.codebooks.push_back(scatter_code_grad(part, fp.quant.assignments[h], books[h].size()));
  }

  Matrix g_enc_hidden;
  linear_backward(p.enc2, fp.enc.hidden, g_ze, g.model.enc2, &g_enc_hidden);
  for (std::size_t k = 0; k < g_enc_hidden.size(); ++k)
    if (!(fp.enc.hidden_pre.data()[k] > 0.0)) g_enc_hidden.data()[k] = 0.0;
  linear_backward(p.enc1, fp.enc.patches, g_enc_hidden, g.model.enc1, nullptr);
  return g;
}

namespace {

void push_linear(std::vector<std::span<double>>& out, Linear& l) {
  out.emplace_back(l.weight.data());
  out.emplace_back(l.bias);
}

}  // namespace

std::vector<std::span<double>> parameter_views(AutoencoderParams& params,
                                               std::vector<Codebook>& books) {
  std::vector<std::span<double>> out;
  push_linear(out, params.enc1);
  push_linear(out, params.enc2);
  push_linear(out, params.dec1);
  push_linear(out, params.dec2);
  for (auto& b : books) out.emplace_back(b.codes.data());
  return out;
}

std::vector<std::span<double>> gradient_views(GradientBundle& grads) {
  std::vector<std::span<double>> out;
  push_linear(out, grads.model.enc1);
  push_linear(out, grads.model.enc2);
  push_linear(out, grads.model.dec1);
  push_linear(out, grads.model.dec2);
  for (auto& c : grads.codebooks) out.emplace_back(c.data());
  return out;
}

void adam_step(std::span<const std::span<double>> params,
               std::span<const std::span<double>> grads, AdamState& state) {
  if (params.size() != grads.size()) throw ShapeError("adam_step: parameter/gradient count mismatch");
  if (state.m.empty()) {
    for (const auto& p : params) {
      state.m.emplace_back(p.size(), 0.0);
      state.v.emplace_back(p.size(), 0.0);
    }
  }
  if (state.m.size() != params.size()) throw ShapeError("adam_step: optimizer state mismatch");
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double bc1 = 1.0 - std::pow(state.beta1, t);
  const double bc2 = 1.0 - std::pow(state.beta2, t);
  for (std::size_t a = 0; a < params.size(); ++a) {
    auto p = params[a];
    auto g = grads[a];
    auto& m = state.m[a];
    auto& v = state.v[a];
    if (p.size() != g.size() || p.size() != m.size()) {
      throw ShapeError("adam_step: shape mismatch in parameter " + std::to_string(a));
    }
    for (std::size_t k = 0; k < p.size(); ++k) {
      m[k] = state.beta1 * m[k] + (1.0 - state.beta1) * g[k];
      v[k] = state.beta2 * v[k] + (1.0 - state.beta2) * g[k] * g[k];
      const double mhat = m[k] / bc1;
      const double vhat = v[k] / bc2;
      p[k] -= state.lr * mhat / (std::sqrt(vhat) + state.eps);
    }
  }
}

QuantizerConfig TrainConfig::quantizer_config() const {
  QuantizerConfig q;
  q.kind = quantizer;
  q.sinkhorn.epsilon = epsilon;
  q.sinkhorn.iterations = sinkhorn_iters;
  q.sinkhorn.balanced = balanced_marginals;
  q.heads = heads;
  q.beta = beta;
  return q;
}

AutoencoderShape TrainConfig::model_shape(std::size_t side, std::size_t channels) const {
  return {side, channels, patch_size, hidden_dim, latent_dim};
}

void TrainConfig::validate() const {
  if (codebook_size < 1 || latent_dim < 1 || batch_size < 1 || epochs < 1 || hidden_dim < 1 ||
      patch_size < 1) {
    throw ConfigError("all counts must be >= 1");
  }
  if (!(lr > 0.0)) throw ConfigError("lr must be positive");
  if (!(codebook_init_range >= 0.0) || !std::isfinite(codebook_init_range))
    throw ConfigError("codebook_init_range must be >= 0");
  quantizer_config().validate(latent_dim);
}

TrainState init_train_state(const TrainConfig& cfg, std::size_t side, std::size_t channels) {
  cfg.validate();
  TrainState s;
  SeededRng model_rng(SeededRng::derive(cfg.seed, 1));
  s.model = PatchAutoencoder::random_init(cfg.model_shape(side, channels), model_rng);
  SeededRng book_rng(SeededRng::derive(cfg.seed, 2));
  for (std::size_t h = 0; h < cfg.heads; ++h) {
    s.books.push_back(Codebook::uniform_init(cfg.codebook_size, cfg.latent_dim / cfg.heads, book_rng,
                                           cfg.codebook_init_range));
  }
  s.adam.lr = cfg.lr;
  return s;
}

namespace {

UsageStats head_usage(const std::vector<Assignment>& assignments, std::size_t n) {
  std::vector<std::uint64_t> counts(n * assignments.size(), 0);
  for (std::size_t h = 0; h < assignments.size(); ++h)
    for (std::size_t k : assignments[h].indices) ++counts[h * n + k];
  return usage_stats_from_counts(counts);
}

}  // namespace

StepMetrics train_step(TrainState& state, const TrainConfig& cfg, const Matrix& batch) {
  const QuantizerConfig qcfg = cfg.quantizer_config();
  const ForwardPass fp = forward_loss(state.model, state.books, qcfg, batch);
  if (!std::isfinite(fp.loss.total)) {
    throw NumericalError("non-finite training loss at step " + std::to_string(state.step + 1));
  }
  GradientBundle grads = backward(state.model, state.books, qcfg, fp);
  const auto pv = parameter_views(state.model.params, state.books);
  const auto gv = gradient_views(grads);
  adam_step(pv, gv, state.adam);
  ++state.step;

  const UsageStats us = head_usage(fp.quant.assignments, cfg.codebook_size);
  StepMetrics m;
  m.step = state.step;
  m.l1 = fp.loss.l1;
  m.l2 = fp.loss.l2;
  m.commit = fp.loss.commit;
  m.total = fp.loss.total;
  m.usage_frac = us.fraction_used;
  m.perplexity = us.perplexity;
  return m;
}

void train_more(TrainState& state, const TrainConfig& cfg, const ImageDataset& dataset,
                std::vector<StepMetrics>& log, const StepCallback& on_step) {
  cfg.validate();
  if (dataset.count() == 0) throw DataError("training dataset is empty");
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    BatchIterator it(dataset.count(), cfg.batch_size,
                     SeededRng::derive(cfg.seed, 1000 + state.step), true);
    while (!it.done()) {
      const Matrix batch = gather_images(dataset, it.next());
      log.push_back(train_step(state, cfg, batch));
      if (on_step) on_step(log.back());
    }
  }
}

TrainReport train(const TrainConfig& cfg, const ImageDataset& dataset, const StepCallback& on_step) {
  TrainReport r{{}, init_train_state(cfg, dataset.side, dataset.channels)};
  train_more(r.state, cfg, dataset, r.steps, on_step);
  return r;
}

EvalReport evaluate(const TrainState& state, const TrainConfig& cfg, const ImageDataset& dataset) {
  if (dataset.count() == 0) throw DataError("evaluation dataset is empty");
  const QuantizerConfig qcfg = cfg.quantizer_config();
  std::vector<Codebook> books = state.books;
  for (auto& b : books) b.reset_usage();

  double abs_sum = 0.0;
  double sq_sum = 0.0;
  double commit_sum = 0.0;
  std::size_t batches = 0;
  BatchIterator it(dataset.count(), cfg.batch_size, 0, false);
  while (!it.done()) {
    const Matrix x = gather_images(dataset, it.next());
    const ForwardPass fp = forward_loss(state.model, books, qcfg, x);
    for (std::size_t k = 0; k < x.size(); ++k) {
      const double diff = fp.dec.images.data()[k] - x.data()[k];
      abs_sum += std::abs(diff);
      sq_sum += diff * diff;
    }
    commit_sum += fp.loss.commit;
    ++batches;
  }
  const double count = static_cast<double>(dataset.count() * dataset.pixels());
  EvalReport r;
  r.l1 = abs_sum / count;
  r.l2 = sq_sum / count;
  r.l_rec = r.l1 + r.l2;
  r.commit = commit_sum / static_cast<double>(batches);
  r.psnr = r.l2 == 0.0 ? kPsnrCap : 10.0 * std::log10(1.0 / r.l2);

  std::vector<std::uint64_t> counts;
  for (const auto& b : books) counts.insert(counts.end(), b.usage.begin(), b.usage.end());
  const UsageStats us = usage_stats_from_counts(counts);
  r.usage_frac = us.fraction_used;
  r.perplexity = us.perplexity;
  r.histogram = std::move(counts);
  return r;
}

}  // namespace optvq
