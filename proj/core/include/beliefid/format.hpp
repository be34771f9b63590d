#pragma once

#include <string>

namespace beliefid {

/// Shortest round-trip decimal representation ("nan"/"inf" for non-finite).
std::string format_double(double x);

}  // namespace beliefid
