#include "kvedit/tokenizer.hpp"

#include <algorithm>
#include <cctype>
#include <set>

#include "kvedit/error.hpp"

namespace kvedit {

namespace {

constexpr const char* kPad = "<pad>";
constexpr const char* kBos = "<bos>";
constexpr const char* kEos = "<eos>";
constexpr const char* kUnk = "<unk>";
constexpr const char* kPossessive = "'s";

bool has_possessive_suffix(std::string_view word) {
    return word.size() > 2 && word.substr(word.size() - 2) == kPossessive;
}

} // namespace

void Tokenizer::index_specials() {
    token_to_id_.clear();
    token_to_id_.reserve(vocab_.size());
    for (int i = 0; i < static_cast<int>(vocab_.size()); i++) {
        token_to_id_.emplace(vocab_[i], i);
    }
    auto need = [&](const char* tok) {
        auto it = token_to_id_.find(tok);
        if (it == token_to_id_.end()) {
            fail(ErrorKind::Format, std::string("vocabulary missing special token ") + tok);
        }
        return it->second;
    };
    pad_id_ = need(kPad);
    bos_id_ = need(kBos);
    eos_id_ = need(kEos);
    unk_id_ = need(kUnk);
    possessive_id_ = need(kPossessive);
}

Tokenizer Tokenizer::build(const std::vector<std::string>& words) {
    std::set<std::string> uniq;
    for (const auto& w : words) {
        if (w.empty()) continue;
        if (has_possessive_suffix(w)) {
            uniq.insert(std::string(w.substr(0, w.size() - 2)));
        } else {
            uniq.insert(w);
        }
    }
    uniq.insert(kPossessive);
    uniq.erase(kPad);
    uniq.erase(kBos);
    uniq.erase(kEos);
    uniq.erase(kUnk);

    Tokenizer t;
    t.vocab_ = {kPad, kBos, kEos, kUnk};
    t.vocab_.insert(t.vocab_.end(), uniq.begin(), uniq.end());
    t.index_specials();
    return t;
}

Tokenizer Tokenizer::from_vocab(std::vector<std::string> vocab) {
    Tokenizer t;
    t.vocab_ = std::move(vocab);
    t.index_specials();
    return t;
}

int Tokenizer::id_of(std::string_view token) const {
    auto it = token_to_id_.find(std::string(token));
    if (it == token_to_id_.end()) {
        fail(ErrorKind::UnknownToken, "word '" + std::string(token) + "' is not in the vocabulary");
    }
    return it->second;
}

bool Tokenizer::contains(std::string_view token) const {
    return token_to_id_.count(std::string(token)) > 0;
}

const std::string& Tokenizer::token(int id) const {
    if (id < 0 || id >= size()) {
        fail(ErrorKind::Shape, "token id " + std::to_string(id) + " out of range");
    }
    return vocab_[static_cast<size_t>(id)];
}

std::vector<int> Tokenizer::encode(std::string_view text) const {
    std::vector<WordSpan> spans;
    return encode(text, spans);
}

std::vector<int> Tokenizer::encode(std::string_view text, std::vector<WordSpan>& spans) const {
    std::vector<int> ids;
    spans.clear();
    size_t pos = 0;
    while (pos < text.size()) {
        while (pos < text.size() && std::isspace(static_cast<unsigned char>(text[pos]))) pos++;
        if (pos >= text.size()) break;
        size_t end = pos;
        while (end < text.size() && !std::isspace(static_cast<unsigned char>(text[end]))) end++;
        std::string_view word = text.substr(pos, end - pos);
        WordSpan span;
        span.first = static_cast<int>(ids.size());
        if (has_possessive_suffix(word)) {
            ids.push_back(id_of(word.substr(0, word.size() - 2)));
            ids.push_back(possessive_id_);
        } else {
            ids.push_back(id_of(word));
        }
        span.last = static_cast<int>(ids.size()) - 1;
        spans.push_back(span);
        pos = end;
    }
    return ids;
}

std::string Tokenizer::decode(std::span<const int> ids) const {
    std::string out;
    for (size_t i = 0; i < ids.size(); i++) {
        const std::string& tok = token(ids[i]);
        if (!out.empty() && ids[i] != possessive_id_) out += ' ';
        out += tok;
    }
    return out;
}

} // namespace kvedit
