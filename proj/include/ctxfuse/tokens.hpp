#pragma once

namespace ctxfuse::tok_id {

// reserved ids shared by the source/target word vocabularies; content words
// start at first_content
inline constexpr int pad = 0;
inline constexpr int unk = 1;
inline constexpr int bos = 2;
inline constexpr int eos = 3;
inline constexpr int first_content = 4;

}  // namespace ctxfuse::tok_id
