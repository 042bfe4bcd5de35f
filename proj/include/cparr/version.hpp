#pragma once

namespace cparr {

inline constexpr const char* kVersion = "cparr 0.1.0";

}  // namespace cparr
