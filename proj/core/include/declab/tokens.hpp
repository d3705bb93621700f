#pragma once

namespace declab {

// Reserved token ids, fixed across vocabularies, checkpoints and decoding.
inline constexpr int kBosId = 0;
inline constexpr int kEosId = 1;
inline constexpr int kPadId = 2;
inline constexpr int kSepId = 3;
inline constexpr int kUnkId = 4;
inline constexpr int kNumReservedTokens = 5;

}  // namespace declab
