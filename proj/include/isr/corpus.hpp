#pragma once

// Datasets, vocabularies and encoding of instances into vocabulary ids.

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <fstream>
#include <iosfwd>
#include <map>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include <nlohmann/json.hpp>

#include "isr/error.hpp"

namespace isr {

using TokenId = std::uint32_t;

struct Instance {
  std::string id;
  std::vector<std::string> tokens;
  std::size_t label = 0;

  friend bool operator==(const Instance&, const Instance&) = default;
};

struct EncodedInstance {
  std::string id;
  std::vector<TokenId> token_ids;
  std::size_t label = 0;

  std::size_t length() const { return token_ids.size(); }
};

class Vocab {
 public:
  static constexpr TokenId kPad = 0;
  static constexpr TokenId kMask = 1;
  static constexpr TokenId kUnk = 2;
  static constexpr TokenId kFirstRegular = 3;

  Vocab() : tokens_{"<pad>", "<mask>", "<unk>"} {
    for (TokenId i = 0; i < tokens_.size(); ++i) index_.emplace(tokens_[i], i);
  }

  std::size_t size() const { return tokens_.size(); }

  TokenId lookup(const std::string& token) const {
    auto it = index_.find(token);
    return it == index_.end() ? kUnk : it->second;
  }

  bool contains(const std::string& token) const { return index_.count(token) != 0; }

  const std::string& token(TokenId id) const {
    if (id >= tokens_.size()) throw UsageError("vocab index out of range: " + std::to_string(id));
    return tokens_[id];
  }

  // Appends a new regular token; returns its index.
  TokenId add(const std::string& token) {
    if (auto it = index_.find(token); it != index_.end()) return it->second;
    const auto id = static_cast<TokenId>(tokens_.size());
    tokens_.push_back(token);
    index_.emplace(token, id);
    return id;
  }

  const std::vector<std::string>& tokens() const { return tokens_; }

  friend bool operator==(const Vocab& a, const Vocab& b) { return a.tokens_ == b.tokens_; }

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, TokenId> index_;
};

// Parses one {"id", "tokens", "label"} record. `line_no` is 1-based and only
// used in error messages.
inline Instance parse_instance(const std::string& line, std::size_t line_no) {
  const std::string where = "line " + std::to_string(line_no) + ": ";
  nlohmann::json record;
  try {
    record = nlohmann::json::parse(line);
  } catch (const nlohmann::json::parse_error& e) {
    throw DataError(where + "malformed record (" + e.what() + ")");
  }
  if (!record.is_object()) throw DataError(where + "record is not an object");
  for (const char* field : {"id", "tokens", "label"}) {
    if (!record.contains(field)) throw DataError(where + "missing field '" + field + "'");
  }
  if (!record["id"].is_string()) throw DataError(where + "'id' must be a string");
  if (!record["tokens"].is_array()) throw DataError(where + "'tokens' must be a list");
  if (!record["label"].is_number_integer() || record["label"].get<std::int64_t>() < 0)
    throw DataError(where + "'label' must be a non-negative integer");

  Instance inst;
  inst.id = record["id"].get<std::string>();
  for (const auto& tok : record["tokens"]) {
    if (!tok.is_string()) throw DataError(where + "tokens must be strings");
    inst.tokens.push_back(tok.get<std::string>());
  }
  inst.label = record["label"].get<std::size_t>();
  if (inst.tokens.empty()) throw DataError("instance '" + inst.id + "' has no tokens");
  return inst;
}

inline std::vector<Instance> read_dataset(std::istream& in) {
  std::vector<Instance> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    out.push_back(parse_instance(line, line_no));
  }
  return out;
}

inline std::vector<Instance> load_dataset(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open dataset: " + path);
  return read_dataset(in);
}

inline std::string instance_record(const Instance& inst) {
  nlohmann::json record = {{"id", inst.id}, {"tokens", inst.tokens}, {"label", inst.label}};
  return record.dump();
}

inline void write_dataset(const std::vector<Instance>& data, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write dataset: " + path);
  for (const auto& inst : data) out << instance_record(inst) << '\n';
}

// Tokens with frequency >= min_freq get indices from 3 upwards, ordered by
// frequency (descending) then lexicographically.
inline Vocab build_vocab(const std::vector<Instance>& dataset, std::size_t min_freq = 1) {
  if (dataset.empty()) throw DataError("cannot build a vocabulary from an empty dataset");
  if (min_freq < 1) throw UsageError("min_freq must be >= 1");
  std::map<std::string, std::size_t> counts;
  for (const auto& inst : dataset)
    for (const auto& tok : inst.tokens) ++counts[tok];

  std::vector<std::pair<std::string, std::size_t>> kept;
  for (const auto& [tok, n] : counts)
    if (n >= min_freq) kept.emplace_back(tok, n);
  std::stable_sort(kept.begin(), kept.end(),
                   [](const auto& a, const auto& b) { return a.second > b.second; });

  Vocab vocab;
  for (const auto& [tok, n] : kept) vocab.add(tok);
  return vocab;
}

inline EncodedInstance encode(const Instance& inst, const Vocab& vocab, std::size_t num_classes) {
  if (inst.label >= num_classes)
    throw DataError("instance '" + inst.id + "': label " + std::to_string(inst.label) +
                    " out of range for " + std::to_string(num_classes) + " classes");
  if (inst.tokens.empty()) throw DataError("instance '" + inst.id + "' has no tokens");
  EncodedInstance enc{inst.id, {}, inst.label};
  enc.token_ids.reserve(inst.tokens.size());
  for (const auto& tok : inst.tokens) enc.token_ids.push_back(vocab.lookup(tok));
  return enc;
}

inline std::vector<EncodedInstance> encode_all(const std::vector<Instance>& data,
                                               const Vocab& vocab, std::size_t num_classes) {
  std::vector<EncodedInstance> out;
  out.reserve(data.size());
  for (const auto& inst : data) out.push_back(encode(inst, vocab, num_classes));
  return out;
}

inline Instance decode(const EncodedInstance& enc, const Vocab& vocab) {
  Instance inst{enc.id, {}, enc.label};
  for (auto id : enc.token_ids) inst.tokens.push_back(vocab.token(id));
  return inst;
}

// Two-column "token<TAB>index" text file.
inline void save_vocab(const Vocab& vocab, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write vocabulary: " + path);
  for (TokenId i = 0; i < vocab.size(); ++i) out << vocab.token(i) << '\t' << i << '\n';
}

inline Vocab load_vocab(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open vocabulary: " + path);
  std::vector<std::pair<TokenId, std::string>> rows;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const auto tab = line.rfind('\t');
    if (tab == std::string::npos)
      throw DataError(path + ": line " + std::to_string(line_no) + ": expected token<TAB>index");
    try {
      rows.emplace_back(static_cast<TokenId>(std::stoul(line.substr(tab + 1))), line.substr(0, tab));
    } catch (const std::exception&) {
      throw DataError(path + ": line " + std::to_string(line_no) + ": bad index");
    }
  }
  std::sort(rows.begin(), rows.end());
  Vocab vocab;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i].first != i) throw DataError(path + ": indices are not dense");
    if (i < Vocab::kFirstRegular) {
      if (vocab.token(static_cast<TokenId>(i)) != rows[i].second)
        throw DataError(path + ": special token mismatch at index " + std::to_string(i));
      continue;
    }
    if (vocab.add(rows[i].second) != i) throw DataError(path + ": duplicate token '" + rows[i].second + "'");
  }
  return vocab;
}

}  // namespace isr
