#pragma once

#include <algorithm>
#include <cctype>
#include <istream>
#include <ostream>
#include <string>
#include <unordered_map>
#include <vector>

namespace tkgr {

/// Word-level tokenizer: lowercasing, punctuation splitting, whitespace
/// tokenization. Special tokens are atomic and occupy the first ids.
class Tokenizer {
 public:
  static constexpr int kCls = 0;
  static constexpr int kSep = 1;
  static constexpr int kUnk = 2;
  static constexpr int kPad = 3;

  Tokenizer() {
    for (const char* sp : {"<cls>", "<sep>", "<unk>", "<pad>"}) add_token(sp);
  }

  static std::vector<std::string> basic_tokens(const std::string& text) {
    std::vector<std::string> out;
    size_t i = 0;
    const size_t n = text.size();
    auto is_space = [](char c) { return std::isspace(static_cast<unsigned char>(c)) != 0; };
    auto is_word = [](char c) {
      return std::isalnum(static_cast<unsigned char>(c)) != 0 || c == '\'';
    };
    while (i < n) {
      if (is_space(text[i])) {
        ++i;
        continue;
      }
      if (text[i] == '<') {  // special token?
        const size_t close = text.find('>', i);
        if (close != std::string::npos) {
          const std::string cand = text.substr(i, close - i + 1);
          if (cand == "<cls>" || cand == "<sep>" || cand == "<unk>" || cand == "<pad>") {
            out.push_back(cand);
            i = close + 1;
            continue;
          }
        }
      }
      if (is_word(text[i])) {
        size_t j = i;
        while (j < n && is_word(text[j])) ++j;
        std::string w = text.substr(i, j - i);
        for (char& c : w) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
        out.push_back(std::move(w));
        i = j;
      } else {
        out.push_back(std::string(1, text[i]));
        ++i;
      }
    }
    return out;
  }

  /// Extends the vocabulary with every token of the text.
  void add_text(const std::string& text) {
    for (const std::string& tok : basic_tokens(text)) add_token(tok);
  }

  /// Deterministic ids; out-of-vocabulary words map to <unk>. Truncation to
  /// n_max keeps a trailing <sep>. Every text maps to at least one token.
  std::vector<int> tokenize(const std::string& text, int n_max) const {
    std::vector<int> ids;
    for (const std::string& tok : basic_tokens(text)) {
      auto it = index_.find(tok);
      ids.push_back(it == index_.end() ? kUnk : it->second);
    }
    if (ids.empty()) ids.push_back(kUnk);
    if (n_max > 0 && ids.size() > static_cast<size_t>(n_max)) {
      ids.resize(n_max);
      ids.back() = kSep;
    }
    return ids;
  }

  int size() const { return static_cast<int>(tokens_.size()); }
  const std::string& token(int id) const { return tokens_.at(id); }

  /// One token per line, line number = id, specials first.
  void save(std::ostream& out) const {
    for (const std::string& t : tokens_) out << t << '\n';
  }

  static Tokenizer load(std::istream& in) {
    Tokenizer tok;
    std::string line;
    int id = 0;
    while (std::getline(in, line)) {
      if (!line.empty() && line.back() == '\r') line.pop_back();
      if (id < 4) {
        if (line != tok.tokens_[id])
          throw std::runtime_error("vocabulary file: special tokens must come first");
      } else {
        tok.add_token(line);
      }
      ++id;
    }
    return tok;
  }

 private:
  int add_token(const std::string& t) {
    auto it = index_.find(t);
    if (it != index_.end()) return it->second;
    tokens_.push_back(t);
    index_.emplace(t, static_cast<int>(tokens_.size()) - 1);
    return static_cast<int>(tokens_.size()) - 1;
  }

  std::vector<std::string> tokens_;
  std::unordered_map<std::string, int> index_;
};

}  // namespace tkgr
