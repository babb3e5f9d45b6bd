#include "common/version.hpp"

namespace dfba {

const char* version_string() { return "0.1.0"; }

} // namespace dfba
