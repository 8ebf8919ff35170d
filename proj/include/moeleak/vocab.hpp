#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

namespace moeleak {

using TokenId = std::int32_t;
using TokenSequence = std::vector<TokenId>;

// Character-level toy vocabulary:
//   0        <bos>
//   1        <pad> (deprioritized by the router)
//   2..27    'a'..'z'
//   28       ' '
//   29..     opaque tokens, used as the blocker vocabulary
namespace vocab {

inline constexpr TokenId kBos = 0;
inline constexpr TokenId kPad = 1;
inline constexpr TokenId kFirstChar = 2;
inline constexpr int kCharCount = 27;
inline constexpr TokenId kFirstOpaque = kFirstChar + kCharCount;

/// Tokens for "abc...z ".
std::vector<TokenId> guess_vocabulary();

/// Token of a lowercase letter or space; throws InvalidInput otherwise.
TokenId encode_char(char c);
char decode_char(TokenId token);

TokenSequence encode(std::string_view text);
/// Characters of guess-vocabulary tokens; other tokens render as '?'.
std::string decode(const TokenSequence& tokens);

/// Opaque tokens [kFirstOpaque, vocab_size).
std::vector<TokenId> blocker_vocabulary(int vocab_size);

}  // namespace vocab
}  // namespace moeleak
