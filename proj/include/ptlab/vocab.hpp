#pragma once

#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "ptlab/common.hpp"

namespace ptlab {

inline constexpr const char* kBos = "<s>";
inline constexpr const char* kEos = "</s>";
inline constexpr const char* kMask = "[MASK]";
inline constexpr const char* kPad = "[PAD]";

// Ordered token list with the four special tokens. Token ids are list
// positions, so the token order is part of a model's identity.
class Vocab {
 public:
  explicit Vocab(std::vector<std::string> tokens) : tokens_(std::move(tokens)) {
    for (std::size_t i = 0; i < tokens_.size(); ++i) {
      auto [it, inserted] = index_.emplace(tokens_[i], static_cast<int>(i));
      if (!inserted) throw VocabError("vocab: duplicate token '" + tokens_[i] + "'");
    }
    bos_ = require(kBos);
    eos_ = require(kEos);
    mask_ = require(kMask);
    pad_ = require(kPad);
  }

  int size() const { return static_cast<int>(tokens_.size()); }

  int id(std::string_view tok) const {
    auto it = index_.find(std::string(tok));
    if (it == index_.end()) throw VocabError("vocab: unknown token '" + std::string(tok) + "'");
    return it->second;
  }

  std::optional<int> find(std::string_view tok) const {
    auto it = index_.find(std::string(tok));
    if (it == index_.end()) return std::nullopt;
    return it->second;
  }

  const std::string& token(int id) const {
    if (id < 0 || id >= size()) throw VocabError("vocab: id " + std::to_string(id) + " out of range");
    return tokens_[static_cast<std::size_t>(id)];
  }

  const std::vector<std::string>& tokens() const { return tokens_; }

  std::vector<int> ids_with_prefix(std::string_view prefix) const {
    std::vector<int> out;
    for (std::size_t i = 0; i < tokens_.size(); ++i)
      if (tokens_[i].rfind(prefix, 0) == 0) out.push_back(static_cast<int>(i));
    return out;
  }

  int bos() const { return bos_; }
  int eos() const { return eos_; }
  int mask() const { return mask_; }
  int pad() const { return pad_; }

  bool operator==(const Vocab& other) const { return tokens_ == other.tokens_; }

 private:
  int require(const char* tok) const {
    auto it = index_.find(tok);
    if (it == index_.end())
      throw VocabError("vocab: missing required special token '" + std::string(tok) + "'");
    return it->second;
  }

  std::vector<std::string> tokens_;
  std::unordered_map<std::string, int> index_;
  int bos_, eos_, mask_, pad_;
};

}  // namespace ptlab
