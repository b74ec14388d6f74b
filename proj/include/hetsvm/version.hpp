#pragma once

namespace hetsvm {

inline constexpr const char* kVersion = "0.1.0";

}  // namespace hetsvm
