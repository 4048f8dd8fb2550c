#pragma once

namespace sphar {

inline constexpr const char* kVersion = "0.1.0";

}  // namespace sphar
