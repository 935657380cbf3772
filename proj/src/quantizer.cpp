#include "optvq/quantizer.hpp"

#include <algorithm>
#include <cassert>
#include <cmath>

#include "optvq/error.hpp"

namespace optvq {

Codebook::Codebook(Matrix codes_in) : codes(std::move(codes_in)), usage(codes.rows(), 0) {}

void Codebook::reset_usage() { std::fill(usage.begin(), usage.end(), 0); }

Codebook Codebook::uniform_init(std::size_t n, std::size_t d, SeededRng& rng, double bound) {
  if (n == 0 || d == 0) throw ConfigError("codebook size and dimension must be >= 1");
  if (!(bound >= 0.0) || !std::isfinite(bound)) throw ConfigError("codebook init range must be >= 0");
  if (bound == 0.0) bound = 1.0 / static_cast<double>(n);
  Matrix codes(n, d);
  for (double& v : codes.data()) v = rng.uniform(-bound, bound);
  return Codebook(std::move(codes));
}

QuantizerKind parse_quantizer_kind(const std::string& name) {
  if (name == "nearest" || name == "nn" || name == "vq") return QuantizerKind::nearest;
  if (name == "optvq" || name == "ot") return QuantizerKind::optvq;
  throw ConfigError("unknown quantizer '" + name + "' (expected nearest or optvq)");
}

std::string to_string(QuantizerKind kind) {
  return kind == QuantizerKind::nearest ? "nearest" : "optvq";
}

void QuantizerConfig::validate(std::size_t latent_dim) const {
  sinkhorn.validate();
  if (heads < 1) throw ConfigError("heads must be >= 1");
  if (latent_dim % heads != 0) {
    throw ConfigError("latent dimension " + std::to_string(latent_dim) +
                      " is not divisible by heads " + std::to_string(heads));
  }
  if (!(beta >= 0.0)) throw ConfigError("beta must be >= 0");
}

namespace {

void check_dims(const Matrix& z, const Codebook& book, const char* who) {
  if (book.size() == 0) throw ShapeError(std::string(who) + ": empty codebook");
  if (z.rows() == 0) throw ShapeError(std::string(who) + ": no features to assign");
  if (z.cols() != book.dim()) {
    throw ShapeError(std::string(who) + ": features " + z.shape_str() + " vs codebook " +
                     book.codes.shape_str());
  }
}

void count_usage(Codebook& book, const Assignment& a) {
  for (std::size_t k : a.indices) ++book.usage[k];
}

}  // namespace

Assignment nn_assign(const Matrix& z, Codebook& book) {
  check_dims(z, book, "nn_assign");
  const Matrix dist = pairwise_sq_distances(z, book.codes);
  Assignment a;
  a.indices.resize(z.rows());
  for (std::size_t i = 0; i < z.rows(); ++i) {
    const auto r = dist.row(i);
    a.indices[i] = static_cast<std::size_t>(std::min_element(r.begin(), r.end()) - r.begin());
  }
  count_usage(book, a);
  return a;
}

Assignment optvq_assign(const Matrix& z, Codebook& book, const SinkhornConfig& cfg) {
  check_dims(z, book, "optvq_assign");
  const TransportPlan tp = sinkhorn(pairwise_sq_distances(z, book.codes), cfg);
  Assignment a;
  a.indices.resize(z.rows());
  a.plan_diag.emplace(z.rows());
  for (std::size_t i = 0; i < z.rows(); ++i) {
    const auto r = tp.plan.row(i);
    const auto best = std::max_element(r.begin(), r.end());
    a.indices[i] = static_cast<std::size_t>(best - r.begin());
    (*a.plan_diag)[i] = *best;
  }
  count_usage(book, a);
  return a;
}

Assignment assign(const Matrix& z, Codebook& book, const QuantizerConfig& cfg) {
  return cfg.kind == QuantizerKind::nearest ? nn_assign(z, book)
                                            : optvq_assign(z, book, cfg.sinkhorn);
}

Matrix gather_codes(const Codebook& book, const Assignment& a) {
  Matrix out(a.indices.size(), book.dim());
  for (std::size_t i = 0; i < a.indices.size(); ++i) {
    const std::size_t k = a.indices[i];
    assert(k < book.size());
    if (k >= book.size()) throw ShapeError("gather_codes: index out of range");
    const auto src = book.codes.row(k);
    std::copy(src.begin(), src.end(), out.row(i).begin());
  }
  return out;
}

Matrix StraightThrough::grad_wrt_ze(const Matrix& upstream) const { return upstream; }

Matrix StraightThrough::grad_wrt_zq(const Matrix& upstream) const {
  return Matrix(upstream.rows(), upstream.cols());
}

StraightThrough ste_combine(const Matrix& z_e, const Matrix& z_q) {
  if (z_e.rows() != z_q.rows() || z_e.cols() != z_q.cols()) {
    throw ShapeError("ste_combine: " + z_e.shape_str() + " vs " + z_q.shape_str());
  }
  // z_e + (z_q - z_e) can differ from z_q by rounding; the forward value is
  // defined as z_q exactly.
  return {z_q};
}

CommitmentLoss commitment_loss(const Matrix& z_e, const Matrix& z_q, double beta) {
  if (z_e.rows() != z_q.rows() || z_e.cols() != z_q.cols()) {
    throw ShapeError("commitment_loss: " + z_e.shape_str() + " vs " + z_q.shape_str());
  }
  CommitmentLoss out{0.0, Matrix(z_e.rows(), z_e.cols()), Matrix(z_e.rows(), z_e.cols())};
  if (z_e.rows() == 0) return out;
  const double inv_l = 1.0 / static_cast<double>(z_e.rows());
  double sq = 0.0;
  for (std::size_t k = 0; k < z_e.size(); ++k) {
    const double diff = z_e.data()[k] - z_q.data()[k];
    sq += diff * diff;
    out.grad_ze.data()[k] = 2.0 * beta * diff * inv_l;
    out.grad_zq.data()[k] = -2.0 * diff * inv_l;
  }
  out.loss = (1.0 + beta) * sq * inv_l;
  return out;
}

Matrix scatter_code_grad(const Matrix& grad_zq, const Assignment& a, std::size_t n) {
  Matrix g(n, grad_zq.cols());
  for (std::size_t i = 0; i < a.indices.size(); ++i) {
    auto dst = g.row(a.indices[i]);
    const auto src = grad_zq.row(i);
    for (std::size_t k = 0; k < src.size(); ++k) dst[k] += src[k];
  }
  return g;
}

Matrix column_slice(const Matrix& m, std::size_t begin, std::size_t width) {
  Matrix out(m.rows(), width);
  for (std::size_t i = 0; i < m.rows(); ++i) {
    const auto r = m.row(i);
    std::copy(r.begin() + begin, r.begin() + begin + width, out.row(i).begin());
  }
  return out;
}

void set_column_slice(Matrix& m, std::size_t begin, const Matrix& part) {
  for (std::size_t i = 0; i < m.rows(); ++i) {
    const auto r = part.row(i);
    std::copy(r.begin(), r.end(), m.row(i).begin() + begin);
  }
}

MultiheadResult multihead_quantize(const Matrix& z, std::vector<Codebook>& books,
                                   const QuantizerConfig& cfg) {
  const std::size_t heads = books.size();
  if (heads == 0) throw ShapeError("multihead_quantize: no codebooks");
  if (z.cols() % heads != 0) {
    throw ShapeError("multihead_quantize: feature dim " + std::to_string(z.cols()) +
                     " not divisible by " + std::to_string(heads) + " heads");
  }
  const std::size_t width = z.cols() / heads;
  MultiheadResult out{Matrix(z.rows(), z.cols()), {}};
  out.assignments.reserve(heads);
  for (std::size_t h = 0; h < heads; ++h) {
    const Matrix seg = heads == 1 ? z : column_slice(z, h * width, width);
    Assignment a = assign(seg, books[h], cfg);
    set_column_slice(out.quantized, h * width, gather_codes(books[h], a));
    out.assignments.push_back(std::move(a));
  }
  return out;
}

UsageStats usage_stats_from_counts(std::span<const std::uint64_t> counts) {
  if (counts.empty()) throw ConfigError("usage_stats: n must be >= 1");
  UsageStats s;
  s.histogram.assign(counts.begin(), counts.end());
  std::uint64_t total = 0;
  std::size_t used = 0;
  for (std::uint64_t c : counts) {
    total += c;
    used += c > 0 ? 1 : 0;
  }
  s.fraction_used = static_cast<double>(used) / static_cast<double>(counts.size());
  double entropy = 0.0;
  if (total > 0) {
    for (std::uint64_t c : counts) {
      if (c == 0) continue;
      const double p = static_cast<double>(c) / static_cast<double>(total);
      entropy -= p * std::log(p);
    }
  }
  s.perplexity = total > 0 ? std::exp(entropy) : 0.0;
  return s;
}

UsageStats usage_stats(std::span<const std::size_t> indices, std::size_t n) {
  if (n == 0) throw ConfigError("usage_stats: n must be >= 1");
  std::vector<std::uint64_t> counts(n, 0);
  for (std::size_t k : indices) {
    if (k >= n) throw ShapeError("usage_stats: index " + std::to_string(k) + " >= n");
    ++counts[k];
  }
  return usage_stats_from_counts(counts);
}

std::vector<double> sgd_feature_update(std::span<const double> z, std::span<const double> c,
                                       double gamma) {
  if (!(gamma > 0.0 && gamma < 1.0)) throw ConfigError("sgd_feature_update: gamma must be in (0, 1)");
  if (z.size() != c.size()) throw ShapeError("sgd_feature_update: dimension mismatch");
  std::vector<double> out(z.size());
  for (std::size_t k = 0; k < z.size(); ++k) out[k] = z[k] + gamma * (c[k] - z[k]);
  return out;
}

}  // namespace optvq
