#pragma once

#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace kvedit {

// Word-level closed-vocabulary tokenizer. Words are whitespace-separated; a
// trailing English possessive is split off as its own token "'s", so the last
// token of a possessive-marked subject is always its final name word.
// Encoding an out-of-vocabulary word is an error, never a silent <unk>.
class Tokenizer {
public:
    struct WordSpan {
        int first = 0; // first token index of the word
        int last = 0;  // last token index (inclusive)
    };

    Tokenizer() = default;

    // Builds the vocabulary: specials first, then the given words, deduplicated
    // and sorted, with "'s" added if absent. Ids are dense in [0, size()).
    static Tokenizer build(const std::vector<std::string>& words);

    std::vector<int> encode(std::string_view text) const;
    std::vector<int> encode(std::string_view text, std::vector<WordSpan>& spans) const;

    // Inverse of encode up to whitespace normalization: tokens joined by single
    // spaces, with "'s" attached to the preceding token.
    std::string decode(std::span<const int> ids) const;

    int id_of(std::string_view token) const; // throws UnknownToken
    const std::string& token(int id) const;
    bool contains(std::string_view token) const;

    int size() const { return static_cast<int>(vocab_.size()); }
    int pad_id() const { return pad_id_; }
    int bos_id() const { return bos_id_; }
    int eos_id() const { return eos_id_; }
    int unk_id() const { return unk_id_; }
    int possessive_id() const { return possessive_id_; }

    const std::vector<std::string>& vocab() const { return vocab_; }

    // Rebuilds the id map from an explicit vocabulary list (checkpoint load).
    static Tokenizer from_vocab(std::vector<std::string> vocab);

    bool operator==(const Tokenizer& other) const { return vocab_ == other.vocab_; }

private:
    std::vector<std::string> vocab_;
    std::unordered_map<std::string, int> token_to_id_;
    int pad_id_ = 0;
    int bos_id_ = 1;
    int eos_id_ = 2;
    int unk_id_ = 3;
    int possessive_id_ = -1;

    void index_specials();
};

} // namespace kvedit
