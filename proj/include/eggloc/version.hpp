#pragma once

namespace eggloc {

inline constexpr const char* kVersion = "0.1.0";

}  // namespace eggloc
