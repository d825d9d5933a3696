#include "istt/vocab.hpp"

#include <fstream>

namespace istt {

namespace {
const char* kSpecialTokens[] = {"<pad>", "<eos>", "<recog>", "<trans>", "<delay>"};
}

Vocabulary Vocabulary::with_content(const std::vector<std::string>& content_tokens) {
  Vocabulary v;
  for (const char* s : kSpecialTokens) v.tokens_.emplace_back(s);
  for (const auto& t : content_tokens) {
    if (t.empty()) throw InputError("empty content token in vocabulary");
    v.tokens_.push_back(t);
  }
  v.rebuild_index();
  return v;
}

void Vocabulary::rebuild_index() {
  ids_.clear();
  for (size_t i = 0; i < tokens_.size(); ++i) {
    if (!ids_.emplace(tokens_[i], static_cast<int>(i)).second)
      throw InputError("duplicate token in vocabulary: " + tokens_[i]);
  }
}

const std::string& Vocabulary::token(int id) const {
  if (id < 0 || id >= size())
    throw InputError("token id " + std::to_string(id) + " outside vocabulary of " +
                     std::to_string(size()));
  return tokens_[static_cast<size_t>(id)];
}

int Vocabulary::id(const std::string& token) const {
  auto it = ids_.find(token);
  if (it == ids_.end()) throw InputError("unknown token: " + token);
  return it->second;
}

void Vocabulary::save(const std::filesystem::path& path) const {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw IoError("cannot open vocabulary file for writing: " + path.string());
  for (const auto& t : tokens_) os << t << '\n';
  if (!os) throw IoError("failed writing vocabulary file: " + path.string());
}

Vocabulary Vocabulary::load(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open vocabulary file: " + path.string());
  Vocabulary v;
  std::string line;
  while (std::getline(is, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    v.tokens_.push_back(line);
  }
  if (v.size() < kNumSpecials)
    throw IoError("vocabulary file too short (missing specials): " + path.string());
  for (int i = 0; i < kNumSpecials; ++i) {
    if (v.tokens_[static_cast<size_t>(i)] != kSpecialTokens[i])
      throw IoError("vocabulary file does not reserve special ids: " + path.string());
  }
  v.rebuild_index();
  return v;
}

}  // namespace istt
