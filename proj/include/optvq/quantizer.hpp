#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "optvq/numerics.hpp"
#include "optvq/transport.hpp"

namespace optvq {

struct Codebook {
  Matrix codes;                      // n x d
  std::vector<std::uint64_t> usage;  // per-code assignment counters

  Codebook() = default;
  explicit Codebook(Matrix codes_in);

  std::size_t size() const { return codes.rows(); }
  std::size_t dim() const { return codes.cols(); }
  void reset_usage();
  bool operator==(const Codebook&) const = default;

  // Entries uniform in [-bound, bound]; bound 0 means 1/n.
  static Codebook uniform_init(std::size_t n, std::size_t d, SeededRng& rng, double bound = 0.0);
};

struct Assignment {
  std::vector<std::size_t> indices;
  // For OptVQ: the plan value at the chosen column of each row.
  std::optional<std::vector<double>> plan_diag;
};

enum class QuantizerKind { nearest, optvq };

QuantizerKind parse_quantizer_kind(const std::string& name);
std::string to_string(QuantizerKind kind);

struct QuantizerConfig {
  QuantizerKind kind = QuantizerKind::optvq;
  SinkhornConfig sinkhorn;
  std::size_t heads = 4;
  double beta = 0.25;

  void validate(std::size_t latent_dim) const;
};

// argmin_j ||z_i - c_j||^2, ties to the lowest index. Updates usage.
Assignment nn_assign(const Matrix& z, Codebook& book);

// Pools all rows of z into one transport problem and takes the row argmax of
// the Sinkhorn plan, ties to the lowest index. Updates usage.
Assignment optvq_assign(const Matrix& z, Codebook& book, const SinkhornConfig& cfg);

Assignment assign(const Matrix& z, Codebook& book, const QuantizerConfig& cfg);

// Row i of the result is codes[indices[i]].
Matrix gather_codes(const Codebook& book, const Assignment& a);

// Straight-through composition z_e + sg(z_q - z_e): the forward value is
// z_q; the gradient reaching z_e is the upstream gradient unchanged and
// nothing flows to z_q along this path.
struct StraightThrough {
  Matrix forward;

  Matrix grad_wrt_ze(const Matrix& upstream) const;
  Matrix grad_wrt_zq(const Matrix& upstream) const;
};

StraightThrough ste_combine(const Matrix& z_e, const Matrix& z_q);

struct CommitmentLoss {
  double loss = 0.0;
  Matrix grad_ze;  // 2 beta (z_e - z_q) / l
  Matrix grad_zq;  // 2 (z_q - z_e) / l, to be scattered onto assigned codes
};

// (1/l) sum_i ||sg(z_e) - z_q||^2 + beta ||z_e - sg(z_q)||^2
CommitmentLoss commitment_loss(const Matrix& z_e, const Matrix& z_q, double beta);

// Accumulates per-row gradients into an n x d gradient for the codebook.
Matrix scatter_code_grad(const Matrix& grad_zq, const Assignment& a, std::size_t n);

struct MultiheadResult {
  Matrix quantized;                     // l x d
  std::vector<Assignment> assignments;  // one per head
  std::size_t heads() const { return assignments.size(); }
  // Index of token i under head h.
  std::size_t index(std::size_t token, std::size_t head) const {
    return assignments[head].indices[token];
  }
};

Matrix column_slice(const Matrix& m, std::size_t begin, std::size_t width);
void set_column_slice(Matrix& m, std::size_t begin, const Matrix& part);

// Splits each feature into books.size() equal segments, quantizes segment s
// with books[s] and concatenates the results in segment order.
MultiheadResult multihead_quantize(const Matrix& z, std::vector<Codebook>& books,
                                   const QuantizerConfig& cfg);

struct UsageStats {
  double fraction_used = 0.0;
  std::vector<std::uint64_t> histogram;
  double perplexity = 0.0;
};

UsageStats usage_stats(std::span<const std::size_t> indices, std::size_t n);
UsageStats usage_stats_from_counts(std::span<const std::uint64_t> counts);

// z + gamma (c - z), 0 < gamma < 1.
std::vector<double> sgd_feature_update(std::span<const double> z, std::span<const double> c,
                                       double gamma);

}  // namespace optvq
