#pragma once

namespace ternarylm {

inline constexpr const char* kVersion = "0.1.0";

}  // namespace ternarylm
