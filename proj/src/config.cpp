#include "optvq/config.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

#include "optvq/error.hpp"

namespace optvq {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

}  // namespace

const std::map<std::string, std::string>& RunConfig::defaults() {
  static const std::map<std::string, std::string> d = {
      {"quantizer", "optvq"},   {"codebook_size", "1024"}, {"latent_dim", "8"},
      {"heads", "1"},           {"epsilon", "10"},         {"sinkhorn_iters", "5"},
      {"beta", "0.25"},         {"batch_size", "16"},      {"epochs", "5"},
      {"lr", "0.001"},          {"seed", "0"},             {"dataset", "mnist"},
      {"data_dir", "data/mnist"}, {"train_images", "10000"}, {"val_images", "10000"},
      {"patch_size", "4"},      {"hidden_dim", "64"},      {"out_dir", "runs/default"},
      {"balanced_marginals", "false"}, {"codebook_init_range", "2"},
  };
  return d;
}

const std::vector<std::string>& RunConfig::keys() {
  static const std::vector<std::string> k = [] {
    std::vector<std::string> out;
    for (const auto& [key, _] : defaults()) out.push_back(key);
    return out;
  }();
  return k;
}

RunConfig::RunConfig() : values_(defaults()) {}

void RunConfig::set(const std::string& key, const std::string& value) {
  if (!defaults().contains(key)) throw ConfigError("unknown config key '" + key + "'");
  values_[key] = value;
}

void RunConfig::set_override(const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos) {
    throw ConfigError("override '" + assignment + "' is not of the form key=value");
  }
  set(trim(assignment.substr(0, eq)), trim(assignment.substr(eq + 1)));
}

void RunConfig::parse_text(const std::string& text, const std::string& origin) {
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError(origin + ":" + std::to_string(lineno) + ": expected key=value");
    }
    const std::string key = trim(line.substr(0, eq));
    if (!defaults().contains(key)) {
      throw ConfigError(origin + ":" + std::to_string(lineno) + ": unknown config key '" + key + "'");
    }
    values_[key] = trim(line.substr(eq + 1));
  }
}

void RunConfig::load_file(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError("cannot read config file " + path);
  std::ostringstream ss;
  ss << f.rdbuf();
  parse_text(ss.str(), path);
}

const std::string& RunConfig::get(const std::string& key) const {
  const auto it = values_.find(key);
  if (it == values_.end()) throw ConfigError("unknown config key '" + key + "'");
  return it->second;
}

double RunConfig::get_double(const std::string& key) const {
  const std::string& s = get(key);
  std::size_t used = 0;
  double v = 0.0;
  try {
    v = std::stod(s, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used == 0 || used != s.size() || !std::isfinite(v)) {
    throw ConfigError("config key '" + key + "': '" + s + "' is not a finite number");
  }
  return v;
}

std::uint64_t RunConfig::get_u64(const std::string& key) const {
  const std::string& s = get(key);
  std::uint64_t v = 0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size()) {
    throw ConfigError("config key '" + key + "': '" + s + "' is not an unsigned integer");
  }
  return v;
}

std::size_t RunConfig::get_count(const std::string& key) const {
  const std::uint64_t v = get_u64(key);
  if (v < 1) throw ConfigError("config key '" + key + "' must be >= 1");
  return static_cast<std::size_t>(v);
}

bool RunConfig::get_bool(const std::string& key) const {
  std::string s = get(key);
  std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return std::tolower(c); });
  if (s == "true" || s == "1" || s == "yes" || s == "on") return true;
  if (s == "false" || s == "0" || s == "no" || s == "off") return false;
  throw ConfigError("config key '" + key + "': '" + s + "' is not a boolean");
}

TrainConfig RunConfig::train_config() const {
  TrainConfig c;
  c.quantizer = parse_quantizer_kind(get("quantizer"));
  c.codebook_size = get_count("codebook_size");
  c.latent_dim = get_count("latent_dim");
  c.heads = get_count("heads");
  c.epsilon = get_double("epsilon");
  const std::uint64_t iters = get_count("sinkhorn_iters");
  if (iters > 1'000'000) throw ConfigError("sinkhorn_iters is unreasonably large");
  c.sinkhorn_iters = static_cast<int>(iters);
  c.beta = get_double("beta");
  c.balanced_marginals = get_bool("balanced_marginals");
  c.batch_size = get_count("batch_size");
  c.epochs = get_count("epochs");
  c.lr = get_double("lr");
  c.seed = get_u64("seed");
  c.patch_size = get_count("patch_size");
  c.hidden_dim = get_count("hidden_dim");
  c.codebook_init_range = get_double("codebook_init_range");
  c.validate();
  return c;
}

std::string RunConfig::to_text() const {
  std::ostringstream os;
  for (const auto& [k, v] : values_) os << k << "=" << v << "\n";
  return os.str();
}

}  // namespace optvq
