#pragma once

#include <filesystem>
#include <string>
#include <unordered_map>
#include <vector>

#include "istt/error.hpp"

namespace istt {

// Token <-> id mapping with fixed ids for the special labels.
class Vocabulary {
 public:
  static constexpr int kPad = 0;
  static constexpr int kEos = 1;
  static constexpr int kRecog = 2;
  static constexpr int kTrans = 3;
  static constexpr int kDelay = 4;
  static constexpr int kNumSpecials = 5;

  Vocabulary() = default;

  // specials occupy ids 0..4, content tokens follow in the given order
  static Vocabulary with_content(const std::vector<std::string>& content_tokens);

  int size() const { return static_cast<int>(tokens_.size()); }
  int content_size() const { return size() - kNumSpecials; }
  const std::string& token(int id) const;
  int id(const std::string& token) const;  // throws InputError if unknown
  bool contains(const std::string& token) const { return ids_.count(token) != 0; }
  static bool is_special(int id) { return id >= 0 && id < kNumSpecials; }

  // one token per line, line number == id
  void save(const std::filesystem::path& path) const;
  static Vocabulary load(const std::filesystem::path& path);

  bool operator==(const Vocabulary& other) const { return tokens_ == other.tokens_; }

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, int> ids_;
  void rebuild_index();
};

}  // namespace istt
