#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>

#include "beliefid/pomdp.hpp"

namespace beliefid {

/// JSON document with nested arrays for every table. Noise rows nest in the
/// layout of the decomposition class, e.g. class D is [a][z][s'][z'].
std::string pomdp_to_json(const FactoredPOMDP& p);
/// Parses and validates; throws FormatError on shape problems and InvalidModel
/// when the tables are not a valid POMDP.
FactoredPOMDP pomdp_from_json(const std::string& text);

void save_pomdp(const std::filesystem::path& path, const FactoredPOMDP& p);
FactoredPOMDP load_pomdp(const std::filesystem::path& path);

}  // namespace beliefid
