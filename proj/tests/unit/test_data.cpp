#include <zlib.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>

#include "doctest.h"
#include "optvq/data.hpp"
#include "optvq/error.hpp"

using namespace optvq;
namespace fs = std::filesystem;

namespace {

const std::string kData = OPTVQ_TEST_DATA_DIR;

std::vector<char> read_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

void write_bytes(const fs::path& path, const std::vector<char>& bytes) {
  std::ofstream out(path, std::ios::binary);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

fs::path scratch_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("optvq_test_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

double pixel(const ImageDataset& ds, std::size_t img, std::size_t y, std::size_t x) {
  return ds.images(img, y * ds.side + x);
}

}  // namespace

TEST_CASE("gaussian mixture basics") {
  SUBCASE("zero covariance collapses to the mean") {
    MixtureSpec spec{{GaussianComponent{{1.5, -2.0}, {0, 0, 0, 0}, 1.0}}};
    const auto pc = gen_gaussian_mixture(spec, 50, 1);
    for (std::size_t i = 0; i < 50; ++i) {
      CHECK(pc.points(i, 0) == 1.5);
      CHECK(pc.points(i, 1) == -2.0);
    }
  }
  SUBCASE("seeded draws repeat") {
    MixtureSpec spec{{GaussianComponent{{0, 0}, {1, 0.3, 0.3, 2}, 1.0},
                      GaussianComponent{{4, 4}, {0.5, 0, 0, 0.5}, 2.0}}};
    CHECK(gen_gaussian_mixture(spec, 200, 9).points == gen_gaussian_mixture(spec, 200, 9).points);
    CHECK(gen_gaussian_mixture(spec, 200, 9).points != gen_gaussian_mixture(spec, 200, 10).points);
  }
  SUBCASE("invalid covariance and counts") {
    MixtureSpec asym{{GaussianComponent{{0, 0}, {1, 0.5, 0.2, 1}, 1.0}}};
    CHECK_THROWS_AS(gen_gaussian_mixture(asym, 5, 0), DataError);
    MixtureSpec indef{{GaussianComponent{{0, 0}, {1, 2, 2, 1}, 1.0}}};
    CHECK_THROWS_AS(gen_gaussian_mixture(indef, 5, 0), DataError);
    MixtureSpec ok{{GaussianComponent{}}};
    CHECK_THROWS_AS(gen_gaussian_mixture(ok, 0, 0), DataError);
    CHECK_THROWS_AS(gen_gaussian_mixture(MixtureSpec{}, 5, 0), DataError);
  }
}

TEST_CASE("gaussian mixture moments match the spec") {
  const std::array<double, 4> cov{2.0, 0.6, 0.6, 0.5};
  MixtureSpec spec{{GaussianComponent{{1.0, -3.0}, cov, 1.0}}};
  const std::size_t n = 100000;
  const auto pc = gen_gaussian_mixture(spec, n, 4);
  double m0 = 0, m1 = 0;
  for (std::size_t i = 0; i < n; ++i) {
    m0 += pc.points(i, 0);
    m1 += pc.points(i, 1);
  }
  m0 /= n;
  m1 /= n;
  CHECK(std::abs(m0 - 1.0) < 3 * std::sqrt(cov[0] / n));
  CHECK(std::abs(m1 + 3.0) < 3 * std::sqrt(cov[3] / n));
  double c00 = 0, c01 = 0, c11 = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const double a = pc.points(i, 0) - m0, b = pc.points(i, 1) - m1;
    c00 += a * a;
    c01 += a * b;
    c11 += b * b;
  }
  CHECK(c00 / n == doctest::Approx(cov[0]).epsilon(0.05));
  CHECK(c01 / n == doctest::Approx(cov[1]).epsilon(0.05));
  CHECK(c11 / n == doctest::Approx(cov[3]).epsilon(0.05));
}

TEST_CASE("handcrafted IDX fixture loads and pads") {
  const auto ds = load_mnist_idx(kData + "/tiny-images-idx3-ubyte", kData + "/tiny-labels-idx1-ubyte");
  REQUIRE(ds.count() == 2);
  CHECK(ds.side == 32);
  CHECK(ds.channels == 1);
  CHECK(ds.labels == std::vector<std::uint8_t>{3, 7});
  CHECK(pixel(ds, 0, 2, 2) == 1.0);
  CHECK(pixel(ds, 0, 29, 29) == doctest::Approx(128.0 / 255.0));
  CHECK(pixel(ds, 1, 7, 9) == doctest::Approx(64.0 / 255.0));
  double total = 0.0;
  for (double v : ds.images.data()) {
    CHECK((v >= 0.0 && v <= 1.0));
    total += v;
  }
  CHECK(total == doctest::Approx((255.0 + 128.0 + 64.0) / 255.0));
  // padding border stays dark
  for (std::size_t k = 0; k < 32; ++k) {
    CHECK(pixel(ds, 0, 0, k) == 0.0);
    CHECK(pixel(ds, 0, k, 31) == 0.0);
  }
}

TEST_CASE("gzip-compressed IDX reads identically") {
  const auto dir = scratch_dir("gz");
  for (const char* name : {"tiny-images-idx3-ubyte", "tiny-labels-idx1-ubyte"}) {
    const auto bytes = read_bytes(kData + "/" + name);
    gzFile f = gzopen((dir / (std::string(name) + ".gz")).c_str(), "wb");
    REQUIRE(f != nullptr);
    gzwrite(f, bytes.data(), static_cast<unsigned>(bytes.size()));
    gzclose(f);
  }
  const auto plain = load_mnist_idx(kData + "/tiny-images-idx3-ubyte", kData + "/tiny-labels-idx1-ubyte");
  const auto gz = load_mnist_idx((dir / "tiny-images-idx3-ubyte.gz").string(),
                                 (dir / "tiny-labels-idx1-ubyte.gz").string());
  CHECK(gz.images == plain.images);
  CHECK(gz.labels == plain.labels);
}

TEST_CASE("IDX errors") {
  const auto dir = scratch_dir("idx_err");
  const auto images = read_bytes(kData + "/tiny-images-idx3-ubyte");
  const auto labels = read_bytes(kData + "/tiny-labels-idx1-ubyte");
  const std::string lab = kData + "/tiny-labels-idx1-ubyte";

  SUBCASE("bad image magic") {
    auto bad = images;
    bad[3] = 0x04;
    write_bytes(dir / "img", bad);
    CHECK_THROWS_WITH_AS(load_mnist_idx((dir / "img").string(), lab),
                         doctest::Contains("bad magic"), DataError);
  }
  SUBCASE("labels file passed as images") {
    CHECK_THROWS_AS(load_mnist_idx(lab, lab), DataError);
  }
  SUBCASE("bad label magic") {
    auto bad = labels;
    bad[3] = 0x03;
    write_bytes(dir / "lab", bad);
    CHECK_THROWS_WITH_AS(load_mnist_idx(kData + "/tiny-images-idx3-ubyte", (dir / "lab").string()),
                         doctest::Contains("bad magic"), DataError);
  }
  SUBCASE("truncated payload") {
    auto cut = images;
    cut.resize(cut.size() - 10);
    write_bytes(dir / "img", cut);
    CHECK_THROWS_WITH_AS(load_mnist_idx((dir / "img").string(), lab),
                         doctest::Contains("truncated"), DataError);
  }
  SUBCASE("truncated header") {
    auto cut = images;
    cut.resize(6);
    write_bytes(dir / "img", cut);
    CHECK_THROWS_AS(load_mnist_idx((dir / "img").string(), lab), DataError);
  }
  SUBCASE("count mismatch") {
    auto one = labels;
    one[7] = 1;
    one.pop_back();
    write_bytes(dir / "lab", one);
    CHECK_THROWS_WITH_AS(load_mnist_idx(kData + "/tiny-images-idx3-ubyte", (dir / "lab").string()),
                         doctest::Contains("count mismatch"), DataError);
  }
  SUBCASE("missing file") {
    CHECK_THROWS_AS(load_mnist_idx((dir / "nope").string(), lab), DataError);
  }
}

TEST_CASE("dataset slicing and gathering") {
  const auto ds = make_synthetic_images(10, 16, 3);
  CHECK(ds.count() == 10);
  for (double v : ds.images.data()) CHECK((v >= 0.0 && v <= 1.0));
  CHECK(make_synthetic_images(10, 16, 3).images == ds.images);
  const auto part = slice_dataset(ds, 4, 3, "val");
  CHECK(part.count() == 3);
  CHECK(part.split == "val");
  for (std::size_t k = 0; k < ds.pixels(); ++k) CHECK(part.images(1, k) == ds.images(5, k));
  CHECK_THROWS_AS(slice_dataset(ds, 8, 3, "x"), DataError);
  const Matrix g = gather_images(ds, {9, 0});
  for (std::size_t k = 0; k < ds.pixels(); ++k) {
    CHECK(g(0, k) == ds.images(9, k));
    CHECK(g(1, k) == ds.images(0, k));
  }
}

TEST_CASE("batch iteration") {
  SUBCASE("10 items in batches of 3") {
    const auto b = batch_iter(10, 3, 0, false);
    REQUIRE(b.size() == 4);
    CHECK(b[0] == std::vector<std::size_t>{0, 1, 2});
    CHECK(b[3] == std::vector<std::size_t>{9});
    BatchIterator it(10, 3, 0, false);
    CHECK(it.batch_count() == 4);
  }
  SUBCASE("shuffled epochs cover everything and repeat with the seed") {
    const auto a = batch_iter(37, 8, 5, true);
    const auto b = batch_iter(37, 8, 5, true);
    CHECK(a == b);
    std::multiset<std::size_t> seen;
    for (const auto& batch : a) seen.insert(batch.begin(), batch.end());
    CHECK(seen.size() == 37);
    CHECK(std::set<std::size_t>(seen.begin(), seen.end()).size() == 37);
    CHECK(batch_iter(37, 8, 6, true) != a);
  }
  SUBCASE("zero batch size") { CHECK_THROWS_AS(batch_iter(5, 0, 0, false), ConfigError); }
}
