#pragma once

namespace dmopt {

inline constexpr const char* kVersion = "0.1.0";

}  // namespace dmopt
