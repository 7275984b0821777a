#pragma once

// Flat "key = value" experiment configuration. Lines starting with '#' are
// comments. Relative paths resolve against the config file's directory.

#include <charconv>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "isr/error.hpp"
#include "isr/model.hpp"
#include "isr/scorers.hpp"
#include "isr/selection.hpp"
#include "isr/synthetic.hpp"

namespace isr {

using KeyValues = std::map<std::string, std::string>;

inline std::string trim(std::string s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return s.substr(first, last - first + 1);
}

inline KeyValues parse_key_values(std::istream& in, const std::string& source = "config") {
  KeyValues kv;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    line = trim(line);
    if (line.empty() || line[0] == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw UsageError(source + ":" + std::to_string(line_no) + ": expected key = value");
    auto key = trim(line.substr(0, eq));
    if (key.empty()) throw UsageError(source + ":" + std::to_string(line_no) + ": empty key");
    kv[key] = trim(line.substr(eq + 1));
  }
  return kv;
}

inline std::vector<std::string> split_list(const std::string& text) {
  std::vector<std::string> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

namespace detail {

template <typename T>
T parse_number(const std::string& key, const std::string& text) {
  T value{};
  const auto* end = text.data() + text.size();
  auto [ptr, ec] = std::from_chars(text.data(), end, value);
  if (ec != std::errc() || ptr != end) throw UsageError("config key '" + key + "': bad number '" + text + "'");
  return value;
}

inline bool parse_bool(const std::string& key, const std::string& text) {
  if (text == "true" || text == "1" || text == "on" || text == "yes") return true;
  if (text == "false" || text == "0" || text == "off" || text == "no") return false;
  throw UsageError("config key '" + key + "': expected a boolean, got '" + text + "'");
}

}  // namespace detail

// Default rationale ratios per dataset.
inline std::optional<double> preset_ratio(const std::string& name) {
  if (name == "sst" || name == "ag" || name == "multirc") return 0.2;
  if (name == "evinf") return 0.1;
  return std::nullopt;
}

struct ExperimentConfig {
  std::string train_path;
  std::string dev_path;
  std::string test_path;
  std::string model_dir;  // load model.bin + vocab.tsv from here instead of training
  std::size_t num_classes = 2;
  std::size_t min_freq = 1;
  std::size_t max_instances = 0;  // 0 = all test instances
  TrainHyper hyper;
  SelectionConfig selection;
  std::string preset;
  double ratio_multiplier = 1.0;
  bool gold_f1 = false;
  std::string out_dir = "out";
  std::optional<std::uint64_t> seed;
  std::size_t workers = 1;
  std::vector<double> timing_skips;
  std::vector<Method> ablation_order;
  SyntheticSpec synthetic;

  std::uint64_t require_seed() const {
    if (!seed) throw UsageError("a seed is required (config key 'seed' or --seed)");
    return *seed;
  }
};

// Applies key/value pairs on top of `cfg`. Unknown keys are rejected.
inline void apply_config(ExperimentConfig& cfg, const KeyValues& kv, const std::filesystem::path& base_dir = {}) {
  using detail::parse_bool;
  using detail::parse_number;
  auto path = [&base_dir](const std::string& p) {
    std::filesystem::path fp(p);
    return (fp.is_relative() && !base_dir.empty() ? base_dir / fp : fp).lexically_normal().string();
  };
  std::optional<double> ratio;
  auto& sel = cfg.selection;
  auto& syn = cfg.synthetic;
  for (const auto& [key, value] : kv) {
    if (key == "train") cfg.train_path = path(value);
    else if (key == "dev") cfg.dev_path = path(value);
    else if (key == "test") cfg.test_path = path(value);
    else if (key == "model") cfg.model_dir = path(value);
    else if (key == "out") cfg.out_dir = path(value);
    else if (key == "num_classes") cfg.num_classes = parse_number<std::size_t>(key, value);
    else if (key == "min_freq") cfg.min_freq = parse_number<std::size_t>(key, value);
    else if (key == "max_instances") cfg.max_instances = parse_number<std::size_t>(key, value);
    else if (key == "embed_dim") cfg.hyper.embed_dim = parse_number<std::size_t>(key, value);
    else if (key == "hidden_dim") cfg.hyper.hidden_dim = parse_number<std::size_t>(key, value);
    else if (key == "lr") cfg.hyper.lr = parse_number<double>(key, value);
    else if (key == "epochs") cfg.hyper.epochs = parse_number<std::size_t>(key, value);
    else if (key == "batch") cfg.hyper.batch = parse_number<std::size_t>(key, value);
    else if (key == "scorers") {
      sel.scorers.clear();
      for (const auto& name : split_list(value)) sel.scorers.push_back(parse_method(name));
    } else if (key == "scorer_mode") sel.scorer_mode = parse_mode(value);
    else if (key == "length_mode") sel.length_mode = parse_mode(value);
    else if (key == "type_mode") sel.type_mode = parse_mode(value);
    else if (key == "fixed_type") sel.fixed_type = parse_rationale_type(value);
    else if (key == "ratio") ratio = parse_number<double>(key, value);
    else if (key == "preset") {
      if (!preset_ratio(value)) throw UsageError("unknown preset '" + value + "' (sst | ag | evinf | multirc)");
      cfg.preset = value;
    } else if (key == "ratio_multiplier") cfg.ratio_multiplier = parse_number<double>(key, value);
    else if (key == "skip") sel.skip = parse_number<double>(key, value);
    else if (key == "divergence") sel.divergence = parse_divergence(value);
    else if (key == "early_stop") sel.early_stop_threshold = parse_number<double>(key, value);
    else if (key == "ig_steps") sel.scorer_options.ig_steps = parse_number<std::size_t>(key, value);
    else if (key == "lime_samples") sel.scorer_options.lime_samples = parse_number<std::size_t>(key, value);
    else if (key == "lime_ridge") sel.scorer_options.lime_ridge = parse_number<double>(key, value);
    else if (key == "lime_kernel_width") sel.scorer_options.lime_kernel_width = parse_number<double>(key, value);
    else if (key == "gold_f1") cfg.gold_f1 = parse_bool(key, value);
    else if (key == "seed") cfg.seed = parse_number<std::uint64_t>(key, value);
    else if (key == "workers") cfg.workers = parse_number<std::size_t>(key, value);
    else if (key == "timing_skips") {
      cfg.timing_skips.clear();
      for (const auto& s : split_list(value)) cfg.timing_skips.push_back(parse_number<double>(key, s));
    } else if (key == "ablation_order") {
      cfg.ablation_order.clear();
      for (const auto& name : split_list(value)) cfg.ablation_order.push_back(parse_method(name));
    }
    else if (key == "synthetic.n_train") syn.n_train = parse_number<std::size_t>(key, value);
    else if (key == "synthetic.n_dev") syn.n_dev = parse_number<std::size_t>(key, value);
    else if (key == "synthetic.n_test") syn.n_test = parse_number<std::size_t>(key, value);
    else if (key == "synthetic.min_length") syn.min_length = parse_number<std::size_t>(key, value);
    else if (key == "synthetic.max_length") syn.max_length = parse_number<std::size_t>(key, value);
    else if (key == "synthetic.neutral_vocab") syn.neutral_vocab = parse_number<std::size_t>(key, value);
    else if (key == "synthetic.signal_per_class") syn.signal_per_class = parse_number<std::size_t>(key, value);
    else if (key == "synthetic.signals_min") syn.signals_min = parse_number<std::size_t>(key, value);
    else if (key == "synthetic.signals_max") syn.signals_max = parse_number<std::size_t>(key, value);
    else if (key == "synthetic.distractor_rate") syn.distractor_rate = parse_number<double>(key, value);
    else if (key == "synthetic.label_noise") syn.label_noise = parse_number<double>(key, value);
    else throw UsageError("unknown config key '" + key + "'");
  }
  if (auto it = kv.find("num_classes"); it != kv.end()) syn.num_classes = cfg.num_classes;
  if (ratio) {
    sel.ratio = *ratio;
  } else if (!cfg.preset.empty()) {
    sel.ratio = *preset_ratio(cfg.preset);
  }
  if (kv.count("ratio_multiplier") || kv.count("ratio") || kv.count("preset"))
    sel.ratio = std::min(1.0, sel.ratio * cfg.ratio_multiplier);
}

inline void set_seed(ExperimentConfig& cfg, std::uint64_t seed) {
  cfg.seed = seed;
  cfg.hyper.seed = seed;
  cfg.selection.scorer_options.seed = seed;
  cfg.synthetic.seed = seed;
}

inline ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open config: " + path);
  ExperimentConfig cfg;
  apply_config(cfg, parse_key_values(in, path), std::filesystem::path(path).parent_path());
  if (cfg.seed) set_seed(cfg, *cfg.seed);
  return cfg;
}

// Canonical text form of the effective configuration (used for the run
// manifest and its hash).
inline std::string canonical(const ExperimentConfig& cfg) {
  std::ostringstream os;
  os.precision(17);
  const auto& s = cfg.selection;
  os << "train=" << cfg.train_path << "\ndev=" << cfg.dev_path << "\ntest=" << cfg.test_path
     << "\nmodel=" << cfg.model_dir << "\nnum_classes=" << cfg.num_classes << "\nmin_freq=" << cfg.min_freq
     << "\nmax_instances=" << cfg.max_instances << "\nembed_dim=" << cfg.hyper.embed_dim
     << "\nhidden_dim=" << cfg.hyper.hidden_dim << "\nlr=" << cfg.hyper.lr << "\nepochs=" << cfg.hyper.epochs
     << "\nbatch=" << cfg.hyper.batch << "\nscorers=" << [&] {
          std::string out;
          for (std::size_t i = 0; i < s.scorers.size(); ++i) out += (i ? "," : "") + std::string(to_string(s.scorers[i]));
          return out;
        }()
     << "\nscorer_mode=" << to_string(s.scorer_mode) << "\nlength_mode=" << to_string(s.length_mode)
     << "\ntype_mode=" << to_string(s.type_mode) << "\nfixed_type=" << to_string(s.fixed_type)
     << "\nratio=" << s.ratio << "\nskip=" << s.skip << "\ndivergence=" << to_string(s.divergence)
     << "\nearly_stop=" << (s.early_stop_threshold ? std::to_string(*s.early_stop_threshold) : "off")
     << "\nig_steps=" << s.scorer_options.ig_steps << "\nlime_samples=" << s.scorer_options.lime_samples
     << "\nlime_ridge=" << s.scorer_options.lime_ridge
     << "\nlime_kernel_width=" << s.scorer_options.lime_kernel_width << "\ngold_f1=" << cfg.gold_f1
     << "\nseed=" << (cfg.seed ? std::to_string(*cfg.seed) : "unset") << "\ntiming_skips=";
  for (std::size_t i = 0; i < cfg.timing_skips.size(); ++i) os << (i ? "," : "") << cfg.timing_skips[i];
  os << "\nablation_order=";
  for (std::size_t i = 0; i < cfg.ablation_order.size(); ++i)
    os << (i ? "," : "") << to_string(cfg.ablation_order[i]);
  os << '\n';
  return os.str();
}

}  // namespace isr
