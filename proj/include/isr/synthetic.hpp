#pragma once

// Synthetic corpus with planted class-indicative tokens.
//
// Each class c owns `signal_per_class` tokens "c<c>_s<i>". An instance of
// class c carries between signals_min and signals_max of its class tokens
// at random positions; with probability `distractor_rate` one token of a
// different class is added (only when the instance has at least two
// signals, so the label stays recoverable). Every other position holds a
// neutral token "n<i>".

#include <cstdint>
#include <string>
#include <vector>

#include "isr/corpus.hpp"
#include "isr/error.hpp"
#include "isr/random.hpp"

namespace isr {

struct SyntheticSpec {
  std::size_t n_train = 400;
  std::size_t n_dev = 100;
  std::size_t n_test = 200;
  std::size_t num_classes = 2;
  std::size_t min_length = 8;
  std::size_t max_length = 24;
  std::size_t neutral_vocab = 60;
  std::size_t signal_per_class = 5;
  std::size_t signals_min = 1;
  std::size_t signals_max = 3;
  double distractor_rate = 0.2;
  double label_noise = 0.0;
  std::uint64_t seed = 7;
};

inline void validate(const SyntheticSpec& s) {
  if (s.num_classes < 2) throw UsageError("synthetic corpus needs at least 2 classes");
  if (s.min_length < 1 || s.max_length < s.min_length) throw UsageError("invalid synthetic length range");
  if (s.signals_min < 1 || s.signals_max < s.signals_min) throw UsageError("invalid synthetic signal range");
  if (s.signals_max + 1 > s.min_length) throw UsageError("min_length too small for the signal count");
  if (s.neutral_vocab < 1 || s.signal_per_class < 1) throw UsageError("synthetic vocabularies must be non-empty");
}

inline std::string signal_token(std::size_t cls, std::size_t i) {
  return "c" + std::to_string(cls) + "_s" + std::to_string(i);
}

inline bool is_signal_token(const std::string& tok) {
  return tok.size() > 1 && tok[0] == 'c' && tok.find("_s") != std::string::npos;
}

inline std::vector<Instance> generate_split(const SyntheticSpec& spec, std::size_t count,
                                            const std::string& prefix, std::uint64_t salt) {
  validate(spec);
  Rng rng(mix_seed(spec.seed, salt));
  std::vector<Instance> out;
  out.reserve(count);
  for (std::size_t n = 0; n < count; ++n) {
    const std::size_t label = rng.below(spec.num_classes);
    const std::size_t length = spec.min_length + rng.below(spec.max_length - spec.min_length + 1);
    const std::size_t signals = spec.signals_min + rng.below(spec.signals_max - spec.signals_min + 1);

    Instance inst;
    inst.id = prefix + "-" + std::to_string(n);
    inst.tokens.resize(length);
    for (auto& tok : inst.tokens) tok = "n" + std::to_string(rng.below(spec.neutral_vocab));

    std::vector<std::size_t> slots(length);
    for (std::size_t i = 0; i < length; ++i) slots[i] = i;
    for (std::size_t i = length; i > 1; --i) std::swap(slots[i - 1], slots[rng.below(i)]);
    std::size_t used = 0;
    for (std::size_t s = 0; s < signals; ++s)
      inst.tokens[slots[used++]] = signal_token(label, rng.below(spec.signal_per_class));
    if (signals >= 2 && rng.uniform() < spec.distractor_rate) {
      const std::size_t other = (label + 1 + rng.below(spec.num_classes - 1)) % spec.num_classes;
      inst.tokens[slots[used++]] = signal_token(other, rng.below(spec.signal_per_class));
    }
    inst.label = rng.uniform() < spec.label_noise ? rng.below(spec.num_classes) : label;
    out.push_back(std::move(inst));
  }
  return out;
}

struct SyntheticCorpus {
  std::vector<Instance> train, dev, test;
};

inline SyntheticCorpus generate_synthetic(const SyntheticSpec& spec) {
  return {generate_split(spec, spec.n_train, "train", 1), generate_split(spec, spec.n_dev, "dev", 2),
          generate_split(spec, spec.n_test, "test", 3)};
}

}  // namespace isr
