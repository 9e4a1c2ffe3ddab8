// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <filesystem>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace tce {

// Lowercase (ASCII), split on whitespace, drop ASCII punctuation. Tokens that
// end up empty are discarded.
std::vector<std::string> tokenize(std::string_view text);

/// Dense token -> index map with reserved UNK and PAD entries.
///
/// File form: UTF-8, one token per line, 0-based line number = index. The
/// first two lines are the reserved tokens "<unk>" and "<pad>".
class Vocabulary {
 public:
  static constexpr std::size_t kUnk = 0;
  static constexpr std::size_t kPad = 1;
  static constexpr std::string_view kUnkToken = "<unk>";
  static constexpr std::string_view kPadToken = "<pad>";

  Vocabulary();

  static Vocabulary load(const std::filesystem::path& path);
  void save(const std::filesystem::path& path) const;

  // Returns the existing index for a known token.
  std::size_t add(std::string_view token);
  std::size_t index_of(std::string_view token) const;
  const std::string& token(std::size_t index) const { return tokens_.at(index); }
  std::size_t size() const { return tokens_.size(); }

  // tokenize() then index_of() per token; unknown surface forms map to UNK.
  std::vector<std::size_t> encode(std::string_view text) const;

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, std::size_t> index_;
};

}  // namespace tce
