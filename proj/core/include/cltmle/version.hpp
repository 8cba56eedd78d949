#pragma once

#include <string>

namespace cltmle {

// "<semver> (<git describe>)"
std::string version_string();

}  // namespace cltmle
