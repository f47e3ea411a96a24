#pragma once

#include <json.hpp>

namespace wce {

using Json = nlohmann::json;

/// Version tag carried by every structured document this library writes.
inline constexpr int kFormatVersion = 1;

}  // namespace wce
