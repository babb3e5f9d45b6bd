#pragma once

namespace dfba {

const char* version_string();

} // namespace dfba
