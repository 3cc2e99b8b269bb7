#include "lclip/tokenizer.hpp"

#include <sstream>

namespace lclip {

int TokenSequence::eos_position() const {
    for (int i = 0; i < kMaxTokens; ++i)
        if (ids[static_cast<size_t>(i)] == Tokenizer::kEos) return i;
    fail("token sequence has no EOS");
}

const Tokenizer& Tokenizer::instance() {
    static const Tokenizer tok;
    return tok;
}

Tokenizer::Tokenizer() {
    vocab_ = {"<pad>", "<bos>", "<eos>", "<unk>"};
    // Alphabetical closed word list covering the caption grammar and the
    // zero-shot templates.
    const char* words[] = {
        "a",      "an",       "and",    "background", "black",   "blue",
        "circle", "circles",  "gray",   "green",      "image",   "of",
        "on",     "orange",   "picture", "purple",    "red",     "square",
        "squares", "star",    "stars",  "three",      "triangle", "triangles",
        "two",    "white",    "yellow",
    };
    for (const char* w : words) vocab_.emplace_back(w);
    check(vocab_.size() <= 64, "tokenizer: vocabulary exceeds 64 entries");
}

TokenSequence Tokenizer::tokenize(const std::string& caption, bool strict) const {
    std::istringstream ss(caption);
    std::vector<uint16_t> content;
    for (std::string word; ss >> word;) {
        uint16_t id = kUnk;
        for (size_t i = 4; i < vocab_.size(); ++i)
            if (vocab_[i] == word) {
                id = static_cast<uint16_t>(i);
                break;
            }
        if (id == kUnk && strict)
            fail("tokenize: unknown word \"", word, "\" in: ", caption);
        content.push_back(id);
    }
    check(!content.empty(), "tokenize: empty caption");
    check(content.size() <= kMaxContentTokens, "tokenize: caption has ", content.size(),
          " tokens, limit is ", kMaxContentTokens, ": ", caption);
    TokenSequence seq;
    seq.ids.fill(kPad);
    seq.ids[0] = kBos;
    for (size_t i = 0; i < content.size(); ++i) seq.ids[i + 1] = content[i];
    seq.ids[content.size() + 1] = kEos;
    return seq;
}

std::string Tokenizer::detokenize(const TokenSequence& seq) const {
    validate(seq);
    std::string out;
    for (int i = 1; i < kMaxTokens; ++i) {
        const uint16_t id = seq.ids[static_cast<size_t>(i)];
        if (id == kEos) break;
        if (!out.empty()) out += ' ';
        out += vocab_[id];
    }
    return out;
}

void Tokenizer::validate(const TokenSequence& seq) const {
    check(seq.ids[0] == kBos, "token sequence must begin with BOS");
    int eos_count = 0;
    int eos_at = -1;
    for (int i = 0; i < kMaxTokens; ++i) {
        const uint16_t id = seq.ids[static_cast<size_t>(i)];
        check(id < vocab_.size(), "token id ", id, " outside the vocabulary");
        if (id == kEos) {
            ++eos_count;
            eos_at = i;
        }
    }
    check(eos_count == 1, "token sequence must contain exactly one EOS");
    for (int i = eos_at + 1; i < kMaxTokens; ++i)
        check(seq.ids[static_cast<size_t>(i)] == kPad,
              "non-PAD token after EOS at position ", i);
    for (int i = 1; i < eos_at; ++i)
        check(seq.ids[static_cast<size_t>(i)] != kPad && seq.ids[static_cast<size_t>(i)] != kBos,
              "PAD/BOS inside the content span at position ", i);
}

TokenBatch TokenBatch::from(const std::vector<TokenSequence>& seqs) {
    const auto& tok = Tokenizer::instance();
    TokenBatch batch;
    batch.batch = static_cast<int64_t>(seqs.size());
    batch.ids.reserve(seqs.size() * kMaxTokens);
    batch.valid.reserve(seqs.size() * kMaxTokens);
    batch.eos_pos.reserve(seqs.size());
    for (const TokenSequence& s : seqs) {
        tok.validate(s);
        const int eos = s.eos_position();
        batch.eos_pos.push_back(eos);
        for (int i = 0; i < kMaxTokens; ++i) {
            batch.ids.push_back(static_cast<int32_t>(s.ids[static_cast<size_t>(i)]));
            batch.valid.push_back(i <= eos ? 1 : 0);
        }
    }
    return batch;
}

} // namespace lclip
