#pragma once

namespace parafreq {

inline constexpr const char* version = "0.1.0";

} // namespace parafreq
