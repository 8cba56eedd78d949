#include "cltmle/version.hpp"

namespace cltmle {

std::string version_string() { return std::string(CLTMLE_VERSION_STRING) + " (" + CLTMLE_GIT_DESCRIBE + ")"; }

}  // namespace cltmle
