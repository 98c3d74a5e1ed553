#pragma once

namespace imgscc {

inline constexpr const char* kVersion = "0.1.0";

}  // namespace imgscc
