#pragma once

namespace opgran {

inline constexpr const char* kVersion = "0.1.0";

}  // namespace opgran
