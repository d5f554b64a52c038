#pragma once

#include <string>
#include <unordered_map>
#include <vector>

#include "attrsim/tensor.hpp"

namespace attrsim {

// Closed word-level vocabulary over the synthetic grammars. Specials occupy
// the reserved ids 0-3.
class Vocabulary {
public:
    static constexpr int kCls = 0;
    static constexpr int kSep = 1;
    static constexpr int kPad = 2;
    static constexpr int kMask = 3;

    // full word list used by all three generators
    static const Vocabulary& builtin();

    explicit Vocabulary(std::vector<std::string> words);

    int id(const std::string& word) const;
    bool contains(const std::string& word) const { return index_.count(word) > 0; }
    const std::string& word(int id) const;
    int size() const { return static_cast<int>(words_.size()); }
    const std::vector<std::string>& words() const { return words_; }

private:
    std::vector<std::string> words_;
    std::unordered_map<std::string, int> index_;
};

}  // namespace attrsim
