#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "optvq/error.hpp"
#include "optvq/model.hpp"

namespace optvq {

// Binary layout (all integers and floats little-endian):
//   "OVQ1"                       4 bytes
//   u32 version                  kCheckpointVersion
//   u32 side, channels, patch, hidden, latent
//   u32 heads, codebook_size, code_dim
//   u64 train step, u64 adam step
//   f64 adam lr, beta1, beta2, eps
//   u32 has_moments
//   f64[] parameters             enc1.W enc1.b enc2.W enc2.b dec1.W dec1.b
//                                dec2.W dec2.b codebook[0..heads), row-major
//   u64[] usage counters         heads * codebook_size
//   f64[] adam m, adam v         same layout as parameters, if has_moments
//   u32 config length, bytes     run configuration text (may be empty)
inline constexpr char kCheckpointMagic[4] = {'O', 'V', 'Q', '1'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

class CheckpointError : public DataError {
 public:
  enum class Kind { io, bad_magic, version_mismatch, truncated, malformed };
  CheckpointError(Kind kind, const std::string& what) : DataError(what), kind_(kind) {}
  Kind kind() const { return kind_; }

 private:
  Kind kind_;
};

struct Checkpoint {
  TrainState state;
  std::string config_text;
};

std::vector<std::uint8_t> serialize_checkpoint(const Checkpoint& ckpt);
Checkpoint deserialize_checkpoint(const std::vector<std::uint8_t>& bytes);

void save_checkpoint(const std::string& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace optvq
