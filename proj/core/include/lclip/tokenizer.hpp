#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "lclip/common.hpp"

namespace lclip {

inline constexpr int kMaxTokens = 16;       // fixed sequence length incl. BOS/EOS
inline constexpr int kMaxContentTokens = 14;

// Fixed-length token-id sequence: BOS, content, exactly one EOS, PAD tail.
struct TokenSequence {
    std::array<uint16_t, kMaxTokens> ids{};

    int eos_position() const; // throws if malformed
    int content_count() const { return eos_position() - 1; }
};

// Closed-vocabulary whitespace tokenizer over the caption grammar and the
// zero-shot template language. The vocabulary is fixed in code.
class Tokenizer {
public:
    static constexpr uint16_t kPad = 0;
    static constexpr uint16_t kBos = 1;
    static constexpr uint16_t kEos = 2;
    static constexpr uint16_t kUnk = 3;

    static const Tokenizer& instance();

    const std::vector<std::string>& vocabulary() const { return vocab_; }
    int vocab_size() const { return static_cast<int>(vocab_.size()); }

    // strict: unknown words are an error; otherwise they map to UNK.
    TokenSequence tokenize(const std::string& caption, bool strict = true) const;
    std::string detokenize(const TokenSequence& seq) const;

    // Throws unless the invariants hold (BOS first, single EOS, PAD-only tail).
    void validate(const TokenSequence& seq) const;

private:
    Tokenizer();
    std::vector<std::string> vocab_;
};

// Flattened batch for the encoders: ids and validity per position plus the
// EOS index per row.
struct TokenBatch {
    int64_t batch = 0;
    int64_t length = kMaxTokens;
    std::vector<int32_t> ids;        // batch * length
    std::vector<uint8_t> valid;      // 1 = BOS..EOS inclusive
    std::vector<int64_t> eos_pos;    // per row

    static TokenBatch from(const std::vector<TokenSequence>& seqs);
};

} // namespace lclip
