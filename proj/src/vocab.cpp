#include "moeleak/vocab.hpp"

#include <string>

#include "moeleak/errors.hpp"

namespace moeleak::vocab {

std::vector<TokenId> guess_vocabulary() {
  std::vector<TokenId> out;
  out.reserve(kCharCount);
  for (int i = 0; i < kCharCount; ++i) out.push_back(kFirstChar + i);
  return out;
}

TokenId encode_char(char c) {
  if (c >= 'a' && c <= 'z') return kFirstChar + (c - 'a');
  if (c == ' ') return kFirstChar + 26;
  throw InvalidInput(std::string("character outside the toy vocabulary: '") + c + "'");
}

char decode_char(TokenId token) {
  if (token >= kFirstChar && token < kFirstChar + 26) return static_cast<char>('a' + (token - kFirstChar));
  if (token == kFirstChar + 26) return ' ';
  return '?';
}

TokenSequence encode(std::string_view text) {
  TokenSequence out;
  out.reserve(text.size());
  for (char c : text) out.push_back(encode_char(c));
  return out;
}

std::string decode(const TokenSequence& tokens) {
  std::string out;
  out.reserve(tokens.size());
  for (TokenId t : tokens) out.push_back(decode_char(t));
  return out;
}

std::vector<TokenId> blocker_vocabulary(int vocab_size) {
  std::vector<TokenId> out;
  for (TokenId t = kFirstOpaque; t < vocab_size; ++t) out.push_back(t);
  return out;
}

}  // namespace moeleak::vocab
