#include "optvq/data.hpp"

#include <zlib.h>

#include <algorithm>
#include <cmath>
#include <memory>

#include "optvq/error.hpp"

namespace optvq {

namespace {

// Lower-triangular factor of a 2x2 PSD matrix.
std::array<double, 3> cholesky_2x2(const std::array<double, 4>& c) {
  constexpr double kTol = 1e-12;
  if (std::abs(c[1] - c[2]) > kTol * std::max(1.0, std::abs(c[1]))) {
    throw DataError("covariance is not symmetric");
  }
  if (c[0] < -kTol || c[3] < -kTol) throw DataError("covariance has a negative variance");
  const double l00 = std::sqrt(std::max(c[0], 0.0));
  const double l10 = l00 > 0.0 ? c[2] / l00 : 0.0;
  const double rem = c[3] - l10 * l10;
  if (rem < -kTol * std::max(1.0, c[3])) throw DataError("covariance is not positive semi-definite");
  if (l00 == 0.0 && std::abs(c[2]) > kTol) throw DataError("covariance is not positive semi-definite");
  return {l00, l10, std::sqrt(std::max(rem, 0.0))};
}

struct GzCloser {
  void operator()(gzFile f) const {
    if (f) gzclose(f);
  }
};
using GzHandle = std::unique_ptr<gzFile_s, GzCloser>;

class IdxReader {
 public:
  explicit IdxReader(const std::string& path) : path_(path), f_(gzopen(path.c_str(), "rb")) {
    if (!f_) throw DataError("cannot open " + path);
  }

  std::uint32_t u32() {
    unsigned char b[4];
    read(b, 4, "header");
    return (std::uint32_t{b[0]} << 24) | (std::uint32_t{b[1]} << 16) |
           (std::uint32_t{b[2]} << 8) | std::uint32_t{b[3]};
  }

  void read(void* dst, std::size_t bytes, const char* what) {
    const int got = gzread(f_.get(), dst, static_cast<unsigned>(bytes));
    if (got < 0 || static_cast<std::size_t>(got) != bytes) {
      throw DataError(path_ + ": truncated " + what + " (wanted " + std::to_string(bytes) +
                      " bytes, got " + std::to_string(std::max(got, 0)) + ")");
    }
  }

 private:
  std::string path_;
  GzHandle f_;
};

}  // namespace

PointCloud2D gen_gaussian_mixture(const MixtureSpec& spec, std::size_t count, std::uint64_t seed) {
  if (count == 0) throw DataError("gen_gaussian_mixture: count must be >= 1");
  if (spec.components.empty()) throw DataError("gen_gaussian_mixture: no components");
  std::vector<std::array<double, 3>> factors;
  double total_weight = 0.0;
  for (const auto& comp : spec.components) {
    if (!(comp.weight > 0.0)) throw DataError("gen_gaussian_mixture: weights must be positive");
    factors.push_back(cholesky_2x2(comp.cov));
    total_weight += comp.weight;
  }

  SeededRng rng(seed);
  PointCloud2D cloud{Matrix(count, 2), seed, spec};
  for (std::size_t i = 0; i < count; ++i) {
    std::size_t k = 0;
    if (spec.components.size() > 1) {
      double u = rng.uniform() * total_weight;
      while (k + 1 < spec.components.size() && u >= spec.components[k].weight) {
        u -= spec.components[k].weight;
        ++k;
      }
    }
    const auto& comp = spec.components[k];
    const auto& l = factors[k];
    const double e0 = rng.normal();
    const double e1 = rng.normal();
    cloud.points(i, 0) = comp.mean[0] + l[0] * e0;
    cloud.points(i, 1) = comp.mean[1] + l[1] * e0 + l[2] * e1;
  }
  return cloud;
}

ImageDataset load_mnist_idx(const std::string& images_path, const std::string& labels_path) {
  IdxReader img(images_path);
  const std::uint32_t img_magic = img.u32();
  if (img_magic != kIdxImageMagic) {
    throw DataError(images_path + ": bad magic " + std::to_string(img_magic) + " (expected " +
                    std::to_string(kIdxImageMagic) + ")");
  }
  const std::uint32_t count = img.u32();
  const std::uint32_t rows = img.u32();
  const std::uint32_t cols = img.u32();
  if (count == 0) throw DataError(images_path + ": header declares zero images");
  if (rows != cols || rows > kMnistPaddedSide) {
    throw DataError(images_path + ": unsupported image size " + std::to_string(rows) + "x" +
                    std::to_string(cols));
  }

  IdxReader lab(labels_path);
  const std::uint32_t lab_magic = lab.u32();
  if (lab_magic != kIdxLabelMagic) {
    throw DataError(labels_path + ": bad magic " + std::to_string(lab_magic) + " (expected " +
                    std::to_string(kIdxLabelMagic) + ")");
  }
  const std::uint32_t lab_count = lab.u32();
  if (lab_count != count) {
    throw DataError("count mismatch: " + images_path + " has " + std::to_string(count) +
                    " images, " + labels_path + " has " + std::to_string(lab_count) + " labels");
  }

  const std::size_t side = kMnistPaddedSide;
  const std::size_t pad = (side - rows) / 2;
  ImageDataset ds;
  ds.side = side;
  ds.channels = 1;
  ds.split = "all";
  ds.images = Matrix(count, side * side);
  ds.labels.resize(count);

  std::vector<unsigned char> raw(static_cast<std::size_t>(rows) * cols);
  for (std::size_t n = 0; n < count; ++n) {
    img.read(raw.data(), raw.size(), "image payload");
    auto dst = ds.images.row(n);
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < cols; ++c)
        dst[(r + pad) * side + (c + pad)] = static_cast<double>(raw[r * cols + c]) / 255.0;
  }
  lab.read(ds.labels.data(), ds.labels.size(), "label payload");
  return ds;
}

ImageDataset slice_dataset(const ImageDataset& ds, std::size_t begin, std::size_t count,
                           const std::string& split) {
  if (count == 0 || begin + count > ds.count()) {
    throw DataError("slice_dataset: range [" + std::to_string(begin) + ", " +
                    std::to_string(begin + count) + ") exceeds " + std::to_string(ds.count()) +
                    " items");
  }
  ImageDataset out;
  out.side = ds.side;
  out.channels = ds.channels;
  out.split = split;
  out.images = Matrix(count, ds.pixels());
  for (std::size_t i = 0; i < count; ++i) {
    const auto src = ds.images.row(begin + i);
    std::copy(src.begin(), src.end(), out.images.row(i).begin());
  }
  if (!ds.labels.empty()) {
    out.labels.assign(ds.labels.begin() + static_cast<std::ptrdiff_t>(begin),
                      ds.labels.begin() + static_cast<std::ptrdiff_t>(begin + count));
  }
  return out;
}

Matrix gather_images(const ImageDataset& ds, const std::vector<std::size_t>& indices) {
  Matrix out(indices.size(), ds.pixels());
  for (std::size_t i = 0; i < indices.size(); ++i) {
    const auto src = ds.images.row(indices[i]);
    std::copy(src.begin(), src.end(), out.row(i).begin());
  }
  return out;
}

ImageDataset make_synthetic_images(std::size_t count, std::size_t side, std::uint64_t seed) {
  if (count == 0 || side == 0) throw DataError("make_synthetic_images: empty request");
  SeededRng rng(seed);
  ImageDataset ds;
  ds.side = side;
  ds.channels = 1;
  ds.split = "synthetic";
  ds.images = Matrix(count, side * side);
  ds.labels.assign(count, 0);
  for (std::size_t n = 0; n < count; ++n) {
    auto img = ds.images.row(n);
    const std::size_t bars = 1 + rng.below(3);
    for (std::size_t b = 0; b < bars; ++b) {
      const bool horizontal = rng.below(2) == 0;
      const std::size_t pos = rng.below(side);
      const std::size_t start = rng.below(side / 2);
      const std::size_t len = side / 4 + rng.below(side / 2);
      const double level = rng.uniform(0.5, 1.0);
      for (std::size_t t = start; t < std::min(side, start + len); ++t) {
        const std::size_t r = horizontal ? pos : t;
        const std::size_t c = horizontal ? t : pos;
        img[r * side + c] = level;
      }
    }
  }
  return ds;
}

BatchIterator::BatchIterator(std::size_t items, std::size_t batch_size, std::uint64_t seed,
                             bool shuffle)
    : order_(items), batch_size_(batch_size) {
  if (batch_size == 0) throw ConfigError("batch size must be >= 1");
  for (std::size_t i = 0; i < items; ++i) order_[i] = i;
  if (shuffle && items > 1) {
    // Fisher-Yates with the portable generator.
    SeededRng rng(seed);
    for (std::size_t i = items - 1; i > 0; --i) std::swap(order_[i], order_[rng.below(i + 1)]);
  }
}

std::vector<std::size_t> BatchIterator::next() {
  const std::size_t end = std::min(order_.size(), cursor_ + batch_size_);
  std::vector<std::size_t> batch(order_.begin() + static_cast<std::ptrdiff_t>(cursor_),
                                 order_.begin() + static_cast<std::ptrdiff_t>(end));
  cursor_ = end;
  return batch;
}

std::size_t BatchIterator::batch_count() const {
  return (order_.size() + batch_size_ - 1) / batch_size_;
}

std::vector<std::vector<std::size_t>> batch_iter(std::size_t items, std::size_t batch_size,
                                                 std::uint64_t seed, bool shuffle) {
  BatchIterator it(items, batch_size, seed, shuffle);
  std::vector<std::vector<std::size_t>> out;
  while (!it.done()) out.push_back(it.next());
  return out;
}

}  // namespace optvq
