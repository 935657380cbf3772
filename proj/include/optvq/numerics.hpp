#pragma once

#include <cstddef>
#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace optvq {

// Dense row-major matrix of doubles.
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
  Matrix(std::size_t rows, std::size_t cols, std::vector<double> data);
  static Matrix from_rows(const std::vector<std::vector<double>>& rows);

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  double& operator()(std::size_t i, std::size_t j) { return data_[i * cols_ + j]; }
  double operator()(std::size_t i, std::size_t j) const { return data_[i * cols_ + j]; }

  std::span<double> row(std::size_t i) { return {data_.data() + i * cols_, cols_}; }
  std::span<const double> row(std::size_t i) const { return {data_.data() + i * cols_, cols_}; }

  std::vector<double>& data() { return data_; }
  const std::vector<double>& data() const { return data_; }

  Matrix transposed() const;
  std::string shape_str() const;

  bool operator==(const Matrix& other) const = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

// Deterministic generator: 64-bit Mersenne Twister (std::mt19937_64, whose
// output sequence is fixed by the standard) with portable conversions to
// uniform and normal variates. std::*_distribution is avoided because its
// output is implementation-defined.
class SeededRng {
 public:
  explicit SeededRng(std::uint64_t seed);

  std::uint64_t seed() const { return seed_; }
  std::uint64_t next_u64();
  // Uniform in [0, 1) with 53 random bits.
  double uniform();
  double uniform(double lo, double hi);
  // Standard normal via Box-Muller (caches the second variate).
  double normal();
  // Uniform integer in [0, bound), rejection sampled.
  std::uint64_t below(std::uint64_t bound);

  // Derives an independent seed for a named sub-stream (splitmix64 mix).
  static std::uint64_t derive(std::uint64_t seed, std::uint64_t stream);

 private:
  std::uint64_t seed_;
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

struct MatrixStats {
  double mean;
  double std;  // population standard deviation
};

// out[i][j] = sum_k (Z[i][k] - C[j][k])^2
Matrix pairwise_sq_distances(const Matrix& z, const Matrix& c);

MatrixStats matrix_stats(const Matrix& m);

inline constexpr double kPsnrCap = 100.0;

// 10 log10(peak^2 / MSE), capped at kPsnrCap when MSE is zero.
double psnr(const Matrix& x, const Matrix& xhat, double peak = 1.0);

}  // namespace optvq
