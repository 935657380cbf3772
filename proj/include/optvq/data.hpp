#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "optvq/numerics.hpp"

namespace optvq {

struct GaussianComponent {
  std::array<double, 2> mean{0.0, 0.0};
  // Row-major 2x2 covariance; must be symmetric positive semi-definite.
  std::array<double, 4> cov{1.0, 0.0, 0.0, 1.0};
  double weight = 1.0;
};

struct MixtureSpec {
  std::vector<GaussianComponent> components;
};

struct PointCloud2D {
  Matrix points;  // count x 2
  std::uint64_t seed = 0;
  MixtureSpec spec;
};

PointCloud2D gen_gaussian_mixture(const MixtureSpec& spec, std::size_t count, std::uint64_t seed);

struct ImageDataset {
  Matrix images;  // count x (side * side * channels), HWC, values in [0, 1]
  std::vector<std::uint8_t> labels;
  std::size_t side = 0;
  std::size_t channels = 1;
  std::string split;

  std::size_t count() const { return images.rows(); }
  std::size_t pixels() const { return side * side * channels; }
};

inline constexpr std::uint32_t kIdxImageMagic = 2051;
inline constexpr std::uint32_t kIdxLabelMagic = 2049;
inline constexpr std::size_t kMnistPaddedSide = 32;

// Reads an IDX image/label pair (plain or gzip-compressed). Bytes are scaled
// to [0, 1] and 28x28 images are zero-padded to 32x32 (2 pixels per side).
ImageDataset load_mnist_idx(const std::string& images_path, const std::string& labels_path);

// Items [begin, begin + count) as a new dataset tagged `split`.
ImageDataset slice_dataset(const ImageDataset& ds, std::size_t begin, std::size_t count,
                           const std::string& split);

// Rows `indices` of the dataset, in order.
Matrix gather_images(const ImageDataset& ds, const std::vector<std::size_t>& indices);

// Synthetic stroke images for smoke tests: each image is a few random
// axis-aligned bars on a dark background.
ImageDataset make_synthetic_images(std::size_t count, std::size_t side, std::uint64_t seed);

// Index batches covering every item exactly once; the last batch may be short.
class BatchIterator {
 public:
  BatchIterator(std::size_t items, std::size_t batch_size, std::uint64_t seed, bool shuffle);

  bool done() const { return cursor_ >= order_.size(); }
  std::vector<std::size_t> next();
  std::size_t batch_count() const;
  const std::vector<std::size_t>& order() const { return order_; }

 private:
  std::vector<std::size_t> order_;
  std::size_t batch_size_;
  std::size_t cursor_ = 0;
};

std::vector<std::vector<std::size_t>> batch_iter(std::size_t items, std::size_t batch_size,
                                                 std::uint64_t seed, bool shuffle);

}  // namespace optvq
