#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "optvq/model.hpp"

namespace optvq {

// Flat key=value run configuration. Every key has a default; unknown keys
// and malformed values raise ConfigError.
//
//   quantizer           optvq            nearest | optvq
//   codebook_size       1024
//   latent_dim          8
//   heads               1
//   epsilon             10
//   sinkhorn_iters      5
//   beta                0.25
//   batch_size          16               images per step (16 x 64 tokens)
//   epochs              5
//   lr                  0.001
//   seed                0
//   dataset             mnist            mnist | synthetic
//   data_dir            data/mnist       directory with the IDX pair
//   train_images        10000            first N of the training file
//   val_images          10000            first N of the test file
//   patch_size          4
//   hidden_dim          64
//   out_dir             runs/default
//   balanced_marginals  false
//   codebook_init_range 2                codes uniform in [-r, r]; 0 means 1/n
class RunConfig {
 public:
  RunConfig();

  static const std::vector<std::string>& keys();
  static const std::map<std::string, std::string>& defaults();

  // Reads a config file: one key=value per line, '#' starts a comment.
  void load_file(const std::string& path);
  void parse_text(const std::string& text, const std::string& origin = "<text>");
  // "key=value" override as passed to --set.
  void set_override(const std::string& assignment);
  void set(const std::string& key, const std::string& value);

  const std::string& get(const std::string& key) const;
  double get_double(const std::string& key) const;
  std::uint64_t get_u64(const std::string& key) const;
  std::size_t get_count(const std::string& key) const;
  bool get_bool(const std::string& key) const;

  TrainConfig train_config() const;
  std::string to_text() const;

  const std::map<std::string, std::string>& values() const { return values_; }

 private:
  std::map<std::string, std::string> values_;
};

}  // namespace optvq
