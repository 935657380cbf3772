#include <algorithm>
#include <cmath>
#include <numeric>

#include "doctest.h"
#include "fd_check.hpp"
#include "optvq/error.hpp"
#include "optvq/model.hpp"

using namespace optvq;

namespace {

double relu(double v) { return v > 0.0 ? v : 0.0; }
double sigm(double v) { return 1.0 / (1.0 + std::exp(-v)); }

std::vector<double> linear_ref(const Linear& l, const std::vector<double>& x) {
  std::vector<double> y(l.out());
  for (std::size_t o = 0; o < l.out(); ++o) {
    y[o] = l.bias[o];
    for (std::size_t i = 0; i < l.in(); ++i) y[o] += l.weight(o, i) * x[i];
  }
  return y;
}

AutoencoderShape tiny_shape() { return {4, 1, 2, 3, 2}; }

Matrix tiny_images(std::size_t count, std::uint64_t seed) {
  SeededRng rng(seed);
  Matrix x(count, 16);
  for (double& v : x.data()) v = rng.uniform();
  return x;
}

TrainConfig smoke_config(std::uint64_t seed) {
  TrainConfig cfg;
  cfg.codebook_size = 32;
  cfg.latent_dim = 4;
  cfg.batch_size = 4;
  cfg.epochs = 3;
  cfg.lr = 3e-3;
  cfg.seed = seed;
  cfg.hidden_dim = 16;
  return cfg;
}

}  // namespace

TEST_CASE("patch extraction order and round trip") {
  AutoencoderShape s{4, 1, 2, 3, 2};
  Matrix img(1, 16);
  for (std::size_t k = 0; k < 16; ++k) img(0, k) = static_cast<double>(k);
  const Matrix p = extract_patches(img, s);
  REQUIRE(p.rows() == 4);
  CHECK(std::vector<double>(p.row(0).begin(), p.row(0).end()) == std::vector<double>{0, 1, 4, 5});
  CHECK(std::vector<double>(p.row(1).begin(), p.row(1).end()) == std::vector<double>{2, 3, 6, 7});
  CHECK(std::vector<double>(p.row(3).begin(), p.row(3).end()) ==
        std::vector<double>{10, 11, 14, 15});
  CHECK(assemble_patches(p, s) == img);

  AutoencoderShape rgb{4, 3, 2, 3, 2};
  SeededRng rng(1);
  Matrix imgs(2, 48);
  for (double& v : imgs.data()) v = rng.uniform();
  CHECK(assemble_patches(extract_patches(imgs, rgb), rgb) == imgs);
  CHECK_THROWS_AS(extract_patches(Matrix(1, 15), s), ShapeError);
}

TEST_CASE("shape validation") {
  AutoencoderShape bad{30, 1, 4, 8, 2};
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  CHECK_NOTHROW(AutoencoderShape{}.validate());
}

TEST_CASE("encode and decode match a per-token reference") {
  SeededRng rng(2);
  const auto model = PatchAutoencoder::random_init(tiny_shape(), rng);
  const Matrix x = tiny_images(2, 3);
  const Matrix patches = extract_patches(x, model.shape);
  const Matrix z = encode(model, x);
  REQUIRE(z.rows() == 8);
  for (std::size_t t = 0; t < patches.rows(); ++t) {
    std::vector<double> h = linear_ref(model.params.enc1, {patches.row(t).begin(), patches.row(t).end()});
    for (double& v : h) v = relu(v);
    const auto ze = linear_ref(model.params.enc2, h);
    for (std::size_t k = 0; k < 2; ++k) CHECK(z(t, k) == doctest::Approx(ze[k]).epsilon(1e-14));
  }
  const Matrix recon = decode(model, z);
  const Matrix rpatches = extract_patches(recon, model.shape);
  for (std::size_t t = 0; t < z.rows(); ++t) {
    std::vector<double> h = linear_ref(model.params.dec1, {z.row(t).begin(), z.row(t).end()});
    for (double& v : h) v = relu(v);
    auto y = linear_ref(model.params.dec2, h);
    for (std::size_t k = 0; k < y.size(); ++k)
      CHECK(rpatches(t, k) == doctest::Approx(sigm(y[k])).epsilon(1e-14));
  }
}

TEST_CASE("random init respects fan-in bounds and is seeded") {
  SeededRng a(5), b(5);
  const auto m1 = PatchAutoencoder::random_init(AutoencoderShape{}, a);
  const auto m2 = PatchAutoencoder::random_init(AutoencoderShape{}, b);
  CHECK(m1 == m2);
  const double bound = 1.0 / std::sqrt(16.0);
  for (double v : m1.params.enc1.weight.data()) CHECK(std::abs(v) <= bound);
  CHECK(PatchAutoencoder(AutoencoderShape{}).params.enc1.weight == Matrix(64, 16, 0.0));
}

TEST_CASE("forward loss components") {
  SeededRng rng(6);
  const auto model = PatchAutoencoder::random_init(tiny_shape(), rng);
  std::vector<Codebook> books{Codebook::uniform_init(5, 2, rng, 0.5)};
  QuantizerConfig cfg;
  cfg.kind = QuantizerKind::nearest;
  cfg.heads = 1;
  const Matrix x = tiny_images(3, 7);
  const auto fp = forward_loss(model, books, cfg, x);
  CHECK(fp.loss.total == doctest::Approx(fp.loss.l1 + fp.loss.l2 + fp.loss.commit));
  const Matrix xhat = decode(model, fp.quant.quantized);
  double l1 = 0.0;
  for (std::size_t k = 0; k < x.size(); ++k) l1 += std::abs(xhat.data()[k] - x.data()[k]);
  CHECK(fp.loss.l1 == doctest::Approx(l1 / x.size()));
  const auto usage = std::accumulate(books[0].usage.begin(), books[0].usage.end(), std::uint64_t{0});
  CHECK(usage == 12);
  const auto again = forward_with_assignments(model, books, cfg, x, fp.quant.assignments);
  CHECK(again.loss.total == fp.loss.total);
}

TEST_CASE("backward matches finite differences of the straight-through surrogate") {
  SeededRng rng(8);
  for (std::size_t heads : {1, 2}) {
    for (auto kind : {QuantizerKind::nearest, QuantizerKind::optvq}) {
      const AutoencoderShape shape{8, 1, 4, 6, 4};
      const auto model = PatchAutoencoder::random_init(shape, rng);
      std::vector<Codebook> books;
      for (std::size_t h = 0; h < heads; ++h) books.push_back(Codebook::uniform_init(6, 4 / heads, rng, 0.5));
      QuantizerConfig cfg;
      cfg.kind = kind;
      cfg.heads = heads;
      SeededRng img_rng(9);
      Matrix x(2, 64);
      for (double& v : x.data()) v = img_rng.uniform();
      const auto r = testing::fd_check(model, books, cfg, x);
      CAPTURE(heads);
      CAPTURE(r.worst);
      CHECK(r.max_rel_error < 1e-4);
    }
  }
}

TEST_CASE("unassigned codes receive exactly zero gradient") {
  SeededRng rng(10);
  const auto model = PatchAutoencoder::random_init(tiny_shape(), rng);
  std::vector<Codebook> books{Codebook::uniform_init(50, 2, rng, 0.5)};
  QuantizerConfig cfg;
  cfg.kind = QuantizerKind::nearest;
  cfg.heads = 1;
  const Matrix x = tiny_images(1, 11);
  auto scratch = books;
  const auto fp = forward_loss(model, scratch, cfg, x);
  const auto g = backward(model, books, cfg, fp);
  std::vector<bool> used(50, false);
  for (auto k : fp.quant.assignments[0].indices) used[k] = true;
  for (std::size_t j = 0; j < 50; ++j)
    if (!used[j]) {
      CHECK(g.codebooks[0](j, 0) == 0.0);
      CHECK(g.codebooks[0](j, 1) == 0.0);
    }
}

TEST_CASE("STE gradient equals the identity-quantizer gradient plus the commitment term") {
  SeededRng rng(12);
  const auto model = PatchAutoencoder::random_init(tiny_shape(), rng);
  const Matrix x = tiny_images(2, 13);
  QuantizerConfig cfg;
  cfg.kind = QuantizerKind::nearest;
  cfg.heads = 1;
  // A codebook holding exactly the current features makes z_q == z_e, so the
  // commitment term vanishes and the STE path is the identity network.
  const Matrix ze = encode(model, x);
  std::vector<Codebook> books{Codebook(ze)};
  auto scratch = books;
  const auto fp = forward_loss(model, scratch, cfg, x);
  CHECK(fp.loss.commit == 0.0);
  const auto g = backward(model, books, cfg, fp);

  // Identity-quantizer loss, differentiated numerically in enc2.bias.
  auto plain = [&](const PatchAutoencoder& m) {
    const Matrix xhat = decode(m, encode(m, x));
    double s = 0.0;
    for (std::size_t k = 0; k < x.size(); ++k) {
      const double d = xhat.data()[k] - x.data()[k];
      s += std::abs(d) + d * d;
    }
    return s / static_cast<double>(x.size());
  };
  for (std::size_t k = 0; k < 2; ++k) {
    auto up = model, down = model;
    up.params.enc2.bias[k] += 1e-6;
    down.params.enc2.bias[k] -= 1e-6;
    const double fd = (plain(up) - plain(down)) / 2e-6;
    CHECK(testing::fd_relative_error(g.model.enc2.bias[k], fd) < 1e-5);
  }
}

TEST_CASE("adam hand trace") {
  std::vector<double> p{1.0, -0.5};
  std::vector<double> g{2.0, 0.0};
  AdamState st;
  st.lr = 0.1;
  std::vector<std::span<double>> ps{std::span<double>(p)};
  std::vector<std::span<double>> gs{std::span<double>(g)};
  adam_step(ps, gs, st);
  CHECK(st.step == 1);
  CHECK(st.m[0][0] == doctest::Approx(0.2));
  CHECK(st.v[0][0] == doctest::Approx(0.004));
  CHECK(p[0] == doctest::Approx(1.0 - 0.1 * 2.0 / (2.0 + 1e-8)).epsilon(1e-14));
  CHECK(p[1] == -0.5);
  g[0] = -1.0;
  adam_step(ps, gs, st);
  const double m = 0.9 * 0.2 + 0.1 * -1.0;
  const double v = 0.999 * 0.004 + 0.001 * 1.0;
  const double mhat = m / (1 - 0.81), vhat = v / (1 - 0.999 * 0.999);
  CHECK(p[0] == doctest::Approx(1.0 - 0.1 * 2.0 / (2.0 + 1e-8) - 0.1 * mhat / (std::sqrt(vhat) + 1e-8))
                     .epsilon(1e-12));
  std::vector<std::span<double>> none;
  CHECK_THROWS_AS(adam_step(ps, none, st), ShapeError);
}

TEST_CASE("training is deterministic and lowers the loss") {
  const auto data = make_synthetic_images(24, 8, 1);
  std::vector<double> first, last;
  for (std::uint64_t seed : {0, 1, 2}) {
    TrainConfig cfg = smoke_config(seed);
    const auto a = train(cfg, data);
    const auto b = train(cfg, data);
    CHECK(a.state == b.state);
    REQUIRE(a.steps.size() == 18);
    for (std::size_t i = 0; i < a.steps.size(); ++i) CHECK(a.steps[i].total == b.steps[i].total);
    first.push_back(a.steps.front().total);
    last.push_back(a.steps.back().total);
  }
  std::sort(first.begin(), first.end());
  std::sort(last.begin(), last.end());
  CHECK(last[1] < first[1]);
}

TEST_CASE("resumed training equals uninterrupted training") {
  const auto data = make_synthetic_images(16, 8, 2);
  TrainConfig cfg = smoke_config(4);
  cfg.epochs = 2;
  const auto full = train(cfg, data);
  cfg.epochs = 1;
  auto half = train(cfg, data);
  std::vector<StepMetrics> log = half.steps;
  train_more(half.state, cfg, data, log);
  CHECK(half.state == full.state);
  CHECK(log.size() == full.steps.size());
}

TEST_CASE("evaluate reports dataset-level statistics") {
  const auto data = make_synthetic_images(12, 8, 3);
  TrainConfig cfg = smoke_config(5);
  cfg.epochs = 1;
  const auto rep = train(cfg, data);
  const auto ev = evaluate(rep.state, cfg, data);
  CHECK(ev.l_rec == doctest::Approx(ev.l1 + ev.l2));
  CHECK(ev.psnr == doctest::Approx(-10.0 * std::log10(ev.l2)));
  CHECK(ev.histogram.size() == 32);
  std::uint64_t tokens = 0;
  for (auto c : ev.histogram) tokens += c;
  CHECK(tokens == 12 * 4);
  // evaluation does not touch the trained state
  CHECK(evaluate(rep.state, cfg, data).psnr == ev.psnr);
}

TEST_CASE("train config validation") {
  TrainConfig cfg;
  cfg.lr = 0.0;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = TrainConfig{};
  cfg.heads = 3;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = TrainConfig{};
  cfg.batch_size = 0;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
}

TEST_CASE("zero weights: bias-pattern latents and a flat 0.5 reconstruction") {
  PatchAutoencoder model(AutoencoderShape{32, 1, 8, 16, 4});
  model.params.enc2.bias = {0.1, -0.2, 0.3, 0.0};
  SeededRng rng(14);
  Matrix x(2, 1024);
  for (double& v : x.data()) v = rng.uniform();
  const Matrix z = encode(model, x);
  CHECK(z.rows() == 32);
  for (std::size_t t = 0; t < z.rows(); ++t)
    for (std::size_t k = 0; k < 4; ++k) CHECK(z(t, k) == model.params.enc2.bias[k]);
  const Matrix y = decode(model, z);
  CHECK(y.rows() == 2);
  CHECK(y.cols() == 1024);
  for (double v : y.data()) CHECK(v == 0.5);
  CHECK_THROWS_AS(decode(model, Matrix(15, 4)), ShapeError);
}

TEST_CASE("loss is zero for a perfect reconstruction already on the codebook") {
  const AutoencoderShape shape{8, 1, 4, 4, 2};
  PatchAutoencoder model(shape);
  // Identical tokens tie across codes in the plan; the tie resolves to code 0.
  std::vector<Codebook> books{Codebook(Matrix::from_rows({{0, 0}, {1, 1}}))};
  QuantizerConfig cfg;
  cfg.heads = 1;
  const auto fp = forward_loss(model, books, cfg, Matrix(3, 64, 0.5));
  CHECK(fp.loss.total == 0.0);
  CHECK(fp.loss.l1 >= 0.0);
}

TEST_CASE("decoder output bias gradient at the sigmoid fixed point") {
  const AutoencoderShape shape{8, 1, 4, 4, 2};
  PatchAutoencoder model(shape);
  std::vector<Codebook> books{Codebook(Matrix::from_rows({{0.5, -0.5}, {2, 2}}))};
  QuantizerConfig cfg;
  cfg.kind = QuantizerKind::nearest;
  cfg.heads = 1;
  const Matrix x(2, 64, 0.0);
  auto scratch = books;
  const auto fp = forward_loss(model, scratch, cfg, x);
  const auto g = backward(model, books, cfg, fp);
  // xhat = 0.5 everywhere: dL/dxhat = (1 + 2 * 0.5) / count, times sigmoid' = 1/4,
  // summed over all tokens for each output unit.
  const double expect = 0.5 / static_cast<double>(shape.patch_dim());
  for (double v : g.model.dec2.bias) CHECK(v == doctest::Approx(expect).epsilon(1e-14));
}

TEST_CASE("adam: zero gradient leaves parameters unchanged") {
  std::vector<double> p{0.3, -0.7, 1.1};
  const auto before = p;
  std::vector<double> g(3, 0.0);
  AdamState st;
  std::vector<std::span<double>> ps{std::span<double>(p)};
  std::vector<std::span<double>> gs{std::span<double>(g)};
  for (int i = 0; i < 3; ++i) adam_step(ps, gs, st);
  CHECK(p == before);
}

TEST_CASE("adam matches a scalar reference over a gradient history") {
  const std::vector<double> history{0.5, -1.0, 2.0, 0.25, -0.125};
  double ref = 1.0, m = 0.0, v = 0.0;
  for (std::size_t t = 1; t <= history.size(); ++t) {
    const double g = history[t - 1];
    m = 0.9 * m + 0.1 * g;
    v = 0.999 * v + 0.001 * g * g;
    const double mh = m / (1.0 - std::pow(0.9, static_cast<double>(t)));
    const double vh = v / (1.0 - std::pow(0.999, static_cast<double>(t)));
    ref -= 1e-3 * mh / (std::sqrt(vh) + 1e-8);
  }
  std::vector<double> p{1.0}, g{0.0};
  AdamState st;
  std::vector<std::span<double>> ps{std::span<double>(p)};
  std::vector<std::span<double>> gs{std::span<double>(g)};
  for (double h : history) {
    g[0] = h;
    adam_step(ps, gs, st);
  }
  CHECK(p[0] == doctest::Approx(ref).epsilon(1e-15));
}
