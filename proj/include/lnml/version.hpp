#pragma once

namespace lnml {

inline constexpr const char* kVersion = "1.0.0";
inline constexpr int kModelSchemaVersion = 1;

}  // namespace lnml
