// SPDX-License-Identifier: Apache-2.0
#include "tce/vocabulary.hpp"

#include <cctype>
#include <fstream>

#include "tce/error.hpp"

namespace tce {

std::vector<std::string> tokenize(std::string_view text) {
  std::vector<std::string> out;
  std::string current;
  auto flush = [&] {
    if (!current.empty()) out.push_back(std::move(current));
    current.clear();
  };
  for (char ch : text) {
    const auto u = static_cast<unsigned char>(ch);
    if (u < 0x80 && std::isspace(u)) {
      flush();
    } else if (u < 0x80 && std::ispunct(u)) {
      continue;
    } else {
      current.push_back(u < 0x80 ? static_cast<char>(std::tolower(u)) : ch);
    }
  }
  flush();
  return out;
}

Vocabulary::Vocabulary() {
  add(kUnkToken);
  add(kPadToken);
}

Vocabulary Vocabulary::load(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw FormatError("vocabulary: cannot open " + path.string());
  Vocabulary v;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (lineno == kUnk || lineno == kPad) {
      const auto expected = lineno == kUnk ? kUnkToken : kPadToken;
      if (line != expected) {
        throw FormatError("vocabulary " + path.string() + ": line " + std::to_string(lineno + 1) + " must be " +
                          std::string(expected));
      }
    } else {
      if (line.empty()) throw FormatError("vocabulary " + path.string() + ": empty token on line " + std::to_string(lineno + 1));
      if (v.index_.contains(line)) {
        throw FormatError("vocabulary " + path.string() + ": duplicate token '" + line + "' on line " +
                          std::to_string(lineno + 1));
      }
      v.add(line);
    }
    ++lineno;
  }
  if (lineno < 2) throw FormatError("vocabulary " + path.string() + ": missing reserved tokens");
  return v;
}

void Vocabulary::save(const std::filesystem::path& path) const {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw FormatError("vocabulary: cannot write " + path.string());
  for (const auto& t : tokens_) os << t << '\n';
}

std::size_t Vocabulary::add(std::string_view token) {
  std::string key(token);
  if (auto it = index_.find(key); it != index_.end()) return it->second;
  tokens_.push_back(key);
  index_.emplace(std::move(key), tokens_.size() - 1);
  return tokens_.size() - 1;
}

std::size_t Vocabulary::index_of(std::string_view token) const {
  auto it = index_.find(std::string(token));
  return it == index_.end() ? kUnk : it->second;
}

std::vector<std::size_t> Vocabulary::encode(std::string_view text) const {
  std::vector<std::size_t> out;
  for (const auto& t : tokenize(text)) out.push_back(index_of(t));
  return out;
}

}  // namespace tce
