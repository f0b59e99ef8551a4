#pragma once

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <map>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "pslab/errors.hpp"

// Flat `key = value` experiment configuration. Every key has a default; an
// unknown key is a contract violation, a malformed line a format error.
namespace pslab::cli {

struct KeyInfo {
  const char* key;
  const char* default_value;
  const char* doc;
};

// clang-format off
inline const std::vector<KeyInfo>& key_table() {
  static const std::vector<KeyInfo> table = {
    {"seed", "1", "experiment seed: poisons, training, evaluation views"},
    {"workers", "1", "parallel sweep cells"},
    {"data.seed", "1", "dataset generation and labeled split seed"},
    {"data.n_per_class", "500", "training images per class"},
    {"data.test_per_class", "100", "test images per class"},
    {"data.classes", "10", "number of classes C"},
    {"data.image_size", "24", "image side H = W"},
    {"split.n_labeled", "250", "labeled samples N_l"},
    {"split.balanced", "true", "class-balanced labeled split"},
    {"augment.pad", "2", "weak view crop padding"},
    {"augment.flip_prob", "0.5", "weak view flip probability"},
    {"augment.strong_ops", "intensity-shift,contrast-scale,translate,small-rotate", "strong op set"},
    {"augment.strong_ops_per_image", "2", "strong ops per view"},
    {"augment.magnitude", "1", "strong op magnitude bound in [0,1]"},
    {"augment.final_cutout", "true", "cutout after the strong ops"},
    {"poison.percent", "1", "poisons as a percentage of the full training set; 0 disables"},
    {"poison.target_class", "0", "target class y_t"},
    {"poison.lambda", "1", "fraction of backdoor-creating poisons"},
    {"poison.weak_mode", "interpolate", "backdoor-creating modification: none, perturb, interpolate"},
    {"poison.weak_strength", "0.4", "alpha or epsilon of the backdoor-creating poisons"},
    {"poison.strong_mode", "interpolate", "strengthening modification; none uses clean non-target images"},
    {"poison.strong_strength", "0.8", "alpha or epsilon of the strengthening poisons"},
    {"poison.trigger", "four_corner", "four_corner or patch"},
    {"poison.trigger_size", "3", "trigger side k"},
    {"pgd.steps", "40", "PGD iterations"},
    {"pgd.step_scale", "2.5", "PGD step size is step_scale * epsilon / steps"},
    {"pgd.random_start", "true", "uniform start inside the epsilon ball"},
    {"model.conv1", "8", "first conv channels"},
    {"model.conv2", "16", "second conv channels"},
    {"model.hidden", "48", "hidden affine width"},
    {"train.variant", "fixmatch", "fixmatch, uda or supervised"},
    {"train.batch_size", "16", "labeled batch B"},
    {"train.mu", "4", "unlabeled ratio mu"},
    {"train.tau", "0.95", "confidence threshold"},
    {"train.lambda_u", "1", "unsupervised loss weight"},
    {"train.eta", "0.03", "initial learning rate"},
    {"train.steps", "8000", "total steps K"},
    {"train.ema_decay", "0.999", "EMA decay of the evaluated model"},
    {"train.warmup_steps", "0", "labeled-only steps before the consistency term"},
    {"train.uda_temperature", "0.4", "sharpening temperature of the uda variant"},
    {"train.unsup_norm", "mask_sum", "consistency normalization: mask_sum or batch"},
    {"train.eval_interval", "200", "steps between trace rows"},
    {"train.momentum", "0.9", "SGD momentum"},
    {"train.weight_decay", "0.0005", "SGD weight decay"},
    {"train.nesterov", "true", "Nesterov momentum"},
    {"surrogate.steps", "2000", "supervised surrogate steps"},
    {"surrogate.batch_size", "64", "surrogate batch size"},
    {"surrogate.eta", "0.05", "surrogate initial learning rate"},
    {"surrogate.gamma", "0.1", "multistep decay at 40% and 60% of the steps"},
    {"profile.n_images", "500", "images per target class in the label profile"},
    {"profile.target_classes", "0", "classes whose images are profiled (results averaged)"},
    {"profile.alphas", "0,0.2,0.4,0.6,0.8", "interpolation grid"},
    {"profile.epsilons", "0,0.0078431,0.015686,0.031373,0.062745", "perturbation grid"},
    {"profile.entropy_base", "e", "entropy log base: e, 2 or 10"},
    {"profile.check_trend", "true", "print monotone trend PASS/FAIL lines"},
    {"sweep.alphas", "", "interpolation strengths; each becomes a cell"},
    {"sweep.epsilons", "", "perturbation strengths; each becomes a cell"},
    {"sweep.lambdas", "", "lambda axis"},
    {"sweep.percents", "", "poison percentage axis"},
    {"sweep.targets", "", "target class axis (aggregated by mean)"},
  };
  return table;
}
// clang-format on

inline std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

class Config {
 public:
  Config() {
    for (const auto& k : key_table()) values_[k.key] = k.default_value;
  }

  static bool known(const std::string& key) {
    const auto& t = key_table();
    return std::any_of(t.begin(), t.end(), [&](const KeyInfo& k) { return key == k.key; });
  }

  void set(const std::string& key, const std::string& value) {
    expects(known(key), "unknown config key '" + key + "'");
    values_[key] = value;
  }

  // Parses one `key = value` assignment.
  void set_assignment(std::string_view line) {
    const auto eq = line.find('=');
    expects(eq != std::string_view::npos, "expected key=value, got '" + std::string(line) + "'");
    set(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }

  void load_text(std::string_view text, const std::string& what = "config") {
    std::istringstream in{std::string(text)};
    std::string line;
    int lineno = 0;
    std::size_t offset = 0;
    while (std::getline(in, line)) {
      ++lineno;
      const std::size_t line_offset = offset;
      offset += line.size() + 1;
      const auto hash = line.find('#');
      const auto body = trim(hash == std::string::npos ? line : line.substr(0, hash));
      if (body.empty()) continue;
      const auto eq = body.find('=');
      if (eq == std::string::npos || trim(body.substr(0, eq)).empty())
        throw FormatError(what + ":" + std::to_string(lineno) + ": expected 'key = value'",
                          line_offset);
      set(trim(body.substr(0, eq)), trim(body.substr(eq + 1)));
    }
  }

  const std::string& str(const std::string& key) const {
    const auto it = values_.find(key);
    expects(it != values_.end(), "unknown config key '" + key + "'");
    return it->second;
  }

  double real(const std::string& key) const { return parse_real(key, str(key)); }
  long integer(const std::string& key) const { return parse_int(key, str(key)); }
  std::uint64_t u64(const std::string& key) const {
    const auto& s = str(key);
    std::uint64_t v = 0;
    const auto r = std::from_chars(s.data(), s.data() + s.size(), v);
    expects(r.ec == std::errc() && r.ptr == s.data() + s.size(),
            key + ": expected an unsigned integer, got '" + s + "'");
    return v;
  }
  bool boolean(const std::string& key) const {
    const auto& s = str(key);
    if (s == "true" || s == "1") return true;
    if (s == "false" || s == "0") return false;
    throw ContractViolation(key + ": expected true or false, got '" + s + "'");
  }

  std::vector<std::string> list(const std::string& key) const {
    std::vector<std::string> out;
    const auto& s = str(key);
    if (trim(s).empty()) return out;
    std::size_t start = 0;
    while (true) {
      const auto comma = s.find(',', start);
      out.push_back(trim(std::string_view(s).substr(start, comma - start)));
      expects(!out.back().empty(), key + ": empty list element");
      if (comma == std::string::npos) break;
      start = comma + 1;
    }
    return out;
  }
  std::vector<double> reals(const std::string& key) const {
    std::vector<double> out;
    for (const auto& s : list(key)) out.push_back(parse_real(key, s));
    return out;
  }
  std::vector<long> integers(const std::string& key) const {
    std::vector<long> out;
    for (const auto& s : list(key)) out.push_back(parse_int(key, s));
    return out;
  }

  // Canonical text form: every key in table order.
  std::string to_text() const {
    std::string out;
    for (const auto& k : key_table()) out += std::string(k.key) + " = " + str(k.key) + "\n";
    return out;
  }

  bool operator==(const Config&) const = default;

  // Accepts decimal numbers and simple fractions such as 8/255.
  static double parse_real(const std::string& key, const std::string& s) {
    const auto slash = s.find('/');
    if (slash != std::string::npos)
      return parse_real(key, s.substr(0, slash)) / parse_real(key, s.substr(slash + 1));
    double v = 0.0;
    const auto r = std::from_chars(s.data(), s.data() + s.size(), v);
    expects(r.ec == std::errc() && r.ptr == s.data() + s.size() && std::isfinite(v),
            key + ": expected a number, got '" + s + "'");
    return v;
  }
  static long parse_int(const std::string& key, const std::string& s) {
    long v = 0;
    const auto r = std::from_chars(s.data(), s.data() + s.size(), v);
    expects(r.ec == std::errc() && r.ptr == s.data() + s.size(),
            key + ": expected an integer, got '" + s + "'");
    return v;
  }

 private:
  std::map<std::string, std::string> values_;
};

}  // namespace pslab::cli
