// extern "C" bridge from the public header to the C++ core. Exceptions are
// caught here and converted to status codes plus a thread-local message.
#include "dfba.h"

#include <string>

#include "common/errors.hpp"
#include "common/version.hpp"

namespace {

thread_local std::string g_last_error = "ok";

[[maybe_unused]] dfba_status fail(dfba_status code, const std::string& msg) {
    g_last_error = msg;
    return code;
}

} // namespace

extern "C" {

const char* dfba_version(void) { return dfba::version_string(); }

const char* dfba_last_error(void) { return g_last_error.c_str(); }

} // extern "C"
