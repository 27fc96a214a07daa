#pragma once

// Word-level tokenizer with a frequency-capped vocabulary. Specials occupy
// the first ids; everything out of vocabulary maps to <unk>.

#include <algorithm>
#include <cctype>
#include <map>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

namespace msum {

class Vocab {
 public:
  static constexpr int kPad = 0;
  static constexpr int kBos = 1;
  static constexpr int kEos = 2;
  static constexpr int kUnk = 3;
  static constexpr int kMask = 4;

  Vocab() {
    for (const char* s : {"<pad>", "<bos>", "<eos>", "<unk>", "<mask>"})
      add_word(s);
  }

  // Lowercase, split into alphanumeric runs; punctuation marks become their
  // own tokens.
  static std::vector<std::string> split_words(const std::string& text) {
    std::vector<std::string> out;
    std::string cur;
    for (char ch : text) {
      unsigned char c = static_cast<unsigned char>(ch);
      if (std::isalnum(c)) {
        cur.push_back(static_cast<char>(std::tolower(c)));
      } else {
        if (!cur.empty()) {
          out.push_back(cur);
          cur.clear();
        }
        if (!std::isspace(c)) out.push_back(std::string(1, ch));
      }
    }
    if (!cur.empty()) out.push_back(cur);
    return out;
  }

  // Builds a vocabulary from texts, keeping at most max_size words (specials
  // included) by descending frequency, ties by lexicographic order.
  static Vocab build(const std::vector<std::string>& texts, size_t max_size) {
    if (max_size < 6) throw std::invalid_argument("vocab size too small");
    std::map<std::string, long> freq;
    for (const auto& t : texts)
      for (const auto& w : split_words(t)) ++freq[w];
    std::vector<std::pair<std::string, long>> items(freq.begin(), freq.end());
    std::sort(items.begin(), items.end(), [](const auto& a, const auto& b) {
      if (a.second != b.second) return a.second > b.second;
      return a.first < b.first;
    });
    Vocab v;
    for (const auto& [w, n] : items) {
      if (v.size() >= max_size) break;
      if (!v.contains(w)) v.add_word(w);
    }
    return v;
  }

  int add_word(const std::string& w) {
    auto it = ids_.find(w);
    if (it != ids_.end()) return it->second;
    int id = static_cast<int>(words_.size());
    ids_[w] = id;
    words_.push_back(w);
    return id;
  }

  bool contains(const std::string& w) const { return ids_.count(w) > 0; }

  int id(const std::string& w) const {
    auto it = ids_.find(w);
    return it == ids_.end() ? kUnk : it->second;
  }

  const std::string& word(int id) const {
    if (id < 0 || id >= static_cast<int>(words_.size()))
      throw std::out_of_range("vocab id out of range");
    return words_[static_cast<size_t>(id)];
  }

  size_t size() const { return words_.size(); }
  const std::vector<std::string>& words() const { return words_; }

  // <bos> tokens <eos>, truncated so the whole sequence fits in max_len.
  std::vector<int> encode(const std::string& text, size_t max_len) const {
    std::vector<int> out{kBos};
    for (const auto& w : split_words(text)) {
      if (out.size() + 1 >= max_len) break;
      out.push_back(id(w));
    }
    out.push_back(kEos);
    return out;
  }

  std::string decode(const std::vector<int>& ids) const {
    std::string out;
    for (int t : ids) {
      if (t == kBos || t == kEos || t == kPad) continue;
      if (!out.empty()) out.push_back(' ');
      out += word(t);
    }
    return out;
  }

 private:
  std::unordered_map<std::string, int> ids_;
  std::vector<std::string> words_;
};

}  // namespace msum
