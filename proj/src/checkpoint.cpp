#include "optvq/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

namespace optvq {

namespace {

class Writer {
 public:
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
  void f64s(std::span<const double> vs) {
    for (double v : vs) f64(v);
  }
  void bytes(const void* p, std::size_t n) {
    const auto* b = static_cast<const std::uint8_t*>(p);
    out_.insert(out_.end(), b, b + n);
  }
  std::vector<std::uint8_t> take() { return std::move(out_); }

 private:
  std::vector<std::uint8_t> out_;
};

class Reader {
 public:
  explicit Reader(const std::vector<std::uint8_t>& in) : in_(in) {}

  void need(std::size_t n, const char* what) {
    if (in_.size() - pos_ < n) {
      throw CheckpointError(CheckpointError::Kind::truncated,
                            std::string("checkpoint truncated while reading ") + what + " (need " +
                                std::to_string(n) + " bytes at offset " + std::to_string(pos_) +
                                ", file has " + std::to_string(in_.size()) + ")");
    }
  }
  std::uint32_t u32(const char* what) {
    need(4, what);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= std::uint32_t{in_[pos_++]} << (8 * i);
    return v;
  }
  std::uint64_t u64(const char* what) {
    need(8, what);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= std::uint64_t{in_[pos_++]} << (8 * i);
    return v;
  }
  double f64(const char* what) { return std::bit_cast<double>(u64(what)); }
  void f64s(std::span<double> dst, const char* what) {
    need(dst.size() * 8, what);
    for (double& v : dst) v = f64(what);
  }
  std::string str(std::size_t n, const char* what) {
    need(n, what);
    std::string s(reinterpret_cast<const char*>(in_.data() + pos_), n);
    pos_ += n;
    return s;
  }
  bool at_end() const { return pos_ == in_.size(); }

 private:
  const std::vector<std::uint8_t>& in_;
  std::size_t pos_ = 0;
};

}  // namespace

std::vector<std::uint8_t> serialize_checkpoint(const Checkpoint& ckpt) {
  TrainState s = ckpt.state;
  const auto& shape = s.model.shape;
  if (s.books.empty()) throw Error("checkpoint: train state has no codebooks");
  Writer w;
  w.bytes(kCheckpointMagic, 4);
  w.u32(kCheckpointVersion);
  for (std::size_t v : {shape.side, shape.channels, shape.patch, shape.hidden, shape.latent})
    w.u32(static_cast<std::uint32_t>(v));
  w.u32(static_cast<std::uint32_t>(s.books.size()));
  w.u32(static_cast<std::uint32_t>(s.books.front().size()));
  w.u32(static_cast<std::uint32_t>(s.books.front().dim()));
  w.u64(s.step);
  w.u64(s.adam.step);
  w.f64(s.adam.lr);
  w.f64(s.adam.beta1);
  w.f64(s.adam.beta2);
  w.f64(s.adam.eps);
  w.u32(s.adam.m.empty() ? 0 : 1);
  for (auto view : parameter_views(s.model.params, s.books)) w.f64s(view);
  for (const auto& b : s.books)
    for (std::uint64_t u : b.usage) w.u64(u);
  if (!s.adam.m.empty()) {
    for (const auto& m : s.adam.m) w.f64s(m);
    for (const auto& v : s.adam.v) w.f64s(v);
  }
  w.u32(static_cast<std::uint32_t>(ckpt.config_text.size()));
  w.bytes(ckpt.config_text.data(), ckpt.config_text.size());
  return w.take();
}

Checkpoint deserialize_checkpoint(const std::vector<std::uint8_t>& bytes) {
  Reader r(bytes);
  const std::string magic = r.str(4, "magic");
  if (std::memcmp(magic.data(), kCheckpointMagic, 4) != 0) {
    throw CheckpointError(CheckpointError::Kind::bad_magic, "checkpoint has bad magic (expected OVQ1)");
  }
  const std::uint32_t version = r.u32("version");
  if (version != kCheckpointVersion) {
    throw CheckpointError(CheckpointError::Kind::version_mismatch,
                          "checkpoint version mismatch: file has " + std::to_string(version) +
                              ", expected " + std::to_string(kCheckpointVersion));
  }
  AutoencoderShape shape;
  shape.side = r.u32("shape");
  shape.channels = r.u32("shape");
  shape.patch = r.u32("shape");
  shape.hidden = r.u32("shape");
  shape.latent = r.u32("shape");
  const std::uint32_t heads = r.u32("shape");
  const std::uint32_t n = r.u32("shape");
  const std::uint32_t code_dim = r.u32("shape");
  if (heads == 0 || n == 0 || code_dim * heads != shape.latent) {
    throw CheckpointError(CheckpointError::Kind::malformed, "checkpoint codebook header is inconsistent");
  }
  // Bound the allocation by what the file could possibly hold.
  const double param_count =
      static_cast<double>(shape.patch) * shape.patch * shape.channels * shape.hidden * 2.0 +
      static_cast<double>(shape.hidden) * shape.latent * 2.0 + static_cast<double>(n) * shape.latent;
  if (param_count * 8.0 > static_cast<double>(bytes.size())) {
    throw CheckpointError(CheckpointError::Kind::truncated,
                          "checkpoint truncated: header promises more parameters than the file holds");
  }

  Checkpoint ck;
  TrainState& s = ck.state;
  try {
    s.model = PatchAutoencoder(shape);
  } catch (const ConfigError& e) {
    throw CheckpointError(CheckpointError::Kind::malformed, std::string("checkpoint shape: ") + e.what());
  }
  for (std::uint32_t h = 0; h < heads; ++h) s.books.emplace_back(Matrix(n, code_dim));
  s.step = r.u64("step");
  s.adam.step = r.u64("adam step");
  s.adam.lr = r.f64("adam hyperparameters");
  s.adam.beta1 = r.f64("adam hyperparameters");
  s.adam.beta2 = r.f64("adam hyperparameters");
  s.adam.eps = r.f64("adam hyperparameters");
  const bool has_moments = r.u32("moment flag") != 0;
  const auto views = parameter_views(s.model.params, s.books);
  for (auto view : views) r.f64s(view, "parameters");
  for (auto& b : s.books)
    for (std::uint64_t& u : b.usage) u = r.u64("usage counters");
  if (has_moments) {
    for (auto view : views) {
      s.adam.m.emplace_back(view.size());
      r.f64s(s.adam.m.back(), "adam first moments");
    }
    for (auto view : views) {
      s.adam.v.emplace_back(view.size());
      r.f64s(s.adam.v.back(), "adam second moments");
    }
  }
  const std::uint32_t cfg_len = r.u32("config length");
  ck.config_text = r.str(cfg_len, "config text");
  if (!r.at_end()) {
    throw CheckpointError(CheckpointError::Kind::malformed, "checkpoint has trailing bytes");
  }
  return ck;
}

void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
  const auto bytes = serialize_checkpoint(ckpt);
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw CheckpointError(CheckpointError::Kind::io, "cannot write checkpoint " + path);
  f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw CheckpointError(CheckpointError::Kind::io, "failed writing checkpoint " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw CheckpointError(CheckpointError::Kind::io, "cannot read checkpoint " + path);
  const std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(f)),
                                        std::istreambuf_iterator<char>());
  try {
    return deserialize_checkpoint(bytes);
  } catch (const CheckpointError& e) {
    throw CheckpointError(e.kind(), path + ": " + e.what());
  }
}

}  // namespace optvq
