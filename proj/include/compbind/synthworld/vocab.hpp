#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "compbind/synthworld/scene.hpp"

namespace compbind::synth {

using TokenId = std::uint16_t;

inline constexpr TokenId kPad = 0;
inline constexpr TokenId kBos = 1;
inline constexpr TokenId kEos = 2;
inline constexpr TokenId kArticle = 3;  // "a"
inline constexpr TokenId kAnd = 4;
inline constexpr TokenId kFirstColor = 5;
inline constexpr TokenId kFirstShape = kFirstColor + kNumColors;
inline constexpr int kVocabSize = kFirstShape + kNumShapes;
inline constexpr std::uint16_t kAbsentSlot = 0xFFFF;

std::string_view token_text(TokenId id);
// Throws ValidationError on a word outside the vocabulary.
TokenId word_token(std::string_view word);

// Whitespace-separated words -> [BOS, ..., EOS].
std::vector<TokenId> tokenize(std::string_view text);
// Drops BOS/EOS/PAD and joins with single spaces.
std::string detokenize(const std::vector<TokenId>& tokens);

// Slot token indices for "a1 o1 and a2 o2"; a2/o2 are kAbsentSlot for
// single-object prompts.
struct Slots {
  std::uint16_t a1 = kAbsentSlot;
  std::uint16_t o1 = kAbsentSlot;
  std::uint16_t a2 = kAbsentSlot;
  std::uint16_t o2 = kAbsentSlot;

  bool complete() const {
    return a1 != kAbsentSlot && o1 != kAbsentSlot && a2 != kAbsentSlot && o2 != kAbsentSlot;
  }
  std::array<std::uint16_t, 4> as_array() const { return {a1, o1, a2, o2}; }
  bool operator==(const Slots&) const = default;
};

struct PromptTemplate {
  std::vector<TokenId> tokens;
  Slots slots;

  std::size_t length() const { return tokens.size(); }
  bool operator==(const PromptTemplate&) const = default;
};

void validate(const PromptTemplate& prompt);

// "a {color1} {shape1} and a {color2} {shape2}" or "a {color} {shape}".
std::string prompt_text(const SceneSpec& spec);
PromptTemplate make_prompt(const SceneSpec& spec);
// Inverse of make_prompt; throws ValidationError if the tokens are not a
// well-formed scene caption.
SceneSpec parse_prompt(const std::vector<TokenId>& tokens);

}  // namespace compbind::synth
