#pragma once

namespace gradsam {

inline constexpr const char* kToolName = "gradsam";
inline constexpr const char* kToolVersion = "0.1.0";

}  // namespace gradsam
