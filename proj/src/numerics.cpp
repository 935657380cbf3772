#include "optvq/numerics.hpp"

#include <cmath>
#include <numbers>
#include <sstream>

#include "optvq/error.hpp"

namespace optvq {

Matrix::Matrix(std::size_t rows, std::size_t cols, std::vector<double> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
  if (data_.size() != rows_ * cols_) {
    throw ShapeError("matrix data length " + std::to_string(data_.size()) +
                     " does not match shape " + shape_str());
  }
}

Matrix Matrix::from_rows(const std::vector<std::vector<double>>& rows) {
  const std::size_t r = rows.size();
  const std::size_t c = r == 0 ? 0 : rows.front().size();
  Matrix m(r, c);
  for (std::size_t i = 0; i < r; ++i) {
    if (rows[i].size() != c) throw ShapeError("ragged rows in Matrix::from_rows");
    std::copy(rows[i].begin(), rows[i].end(), m.row(i).begin());
  }
  return m;
}

Matrix Matrix::transposed() const {
  Matrix t(cols_, rows_);
  for (std::size_t i = 0; i < rows_; ++i)
    for (std::size_t j = 0; j < cols_; ++j) t(j, i) = (*this)(i, j);
  return t;
}

std::string Matrix::shape_str() const {
  std::ostringstream os;
  os << rows_ << "x" << cols_;
  return os.str();
}

SeededRng::SeededRng(std::uint64_t seed) : seed_(seed), engine_(seed) {}

std::uint64_t SeededRng::next_u64() { return engine_(); }

double SeededRng::uniform() {
  return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

double SeededRng::uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

double SeededRng::normal() {
  if (has_spare_) {
    has_spare_ = false;
    return spare_;
  }
  // 1 - uniform() lies in (0, 1], so the log is finite.
  const double u1 = 1.0 - uniform();
  const double u2 = uniform();
  const double r = std::sqrt(-2.0 * std::log(u1));
  const double theta = 2.0 * std::numbers::pi * u2;
  spare_ = r * std::sin(theta);
  has_spare_ = true;
  return r * std::cos(theta);
}

std::uint64_t SeededRng::below(std::uint64_t bound) {
  if (bound == 0) throw Error("SeededRng::below: bound must be positive");
  const std::uint64_t limit = UINT64_MAX - UINT64_MAX % bound;
  std::uint64_t x;
  do {
    x = next_u64();
  } while (x >= limit);
  return x % bound;
}

std::uint64_t SeededRng::derive(std::uint64_t seed, std::uint64_t stream) {
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

Matrix pairwise_sq_distances(const Matrix& z, const Matrix& c) {
  if (z.empty() || c.empty() || z.cols() != c.cols()) {
    throw ShapeError("pairwise_sq_distances: incompatible shapes " + z.shape_str() + " and " +
                     c.shape_str());
  }
  const std::size_t d = z.cols();
  Matrix out(z.rows(), c.rows());
  for (std::size_t i = 0; i < z.rows(); ++i) {
    const double* zi = z.row(i).data();
    double* oi = out.row(i).data();
    for (std::size_t j = 0; j < c.rows(); ++j) {
      const double* cj = c.row(j).data();
      double acc = 0.0;
      for (std::size_t k = 0; k < d; ++k) {
        const double diff = zi[k] - cj[k];
        acc += diff * diff;
      }
      oi[j] = acc;
    }
  }
  return out;
}

MatrixStats matrix_stats(const Matrix& m) {
  if (m.empty()) throw ShapeError("matrix_stats: empty matrix");
  const double count = static_cast<double>(m.size());
  double sum = 0.0;
  for (double v : m.data()) sum += v;
  const double mean = sum / count;
  double sq = 0.0;
  for (double v : m.data()) sq += (v - mean) * (v - mean);
  return {mean, std::sqrt(sq / count)};
}

double psnr(const Matrix& x, const Matrix& xhat, double peak) {
  if (x.rows() != xhat.rows() || x.cols() != xhat.cols()) {
    throw ShapeError("psnr: shape mismatch " + x.shape_str() + " vs " + xhat.shape_str());
  }
  if (!(peak > 0.0)) throw Error("psnr: peak must be positive");
  if (x.empty()) throw ShapeError("psnr: empty input");
  double se = 0.0;
  for (std::size_t k = 0; k < x.size(); ++k) {
    const double diff = x.data()[k] - xhat.data()[k];
    se += diff * diff;
  }
  const double mse = se / static_cast<double>(x.size());
  if (mse == 0.0) return kPsnrCap;
  return 10.0 * std::log10(peak * peak / mse);
}

}  // namespace optvq
