#pragma once

#include <string>

namespace cerberus {

enum class LogLevel { Error = 0, Info = 1, Debug = 2 };

// Level comes from the CERBERUS_LOG environment variable ({error,info,debug},
// default info) unless overridden programmatically.
LogLevel log_level();
void set_log_level(LogLevel level);

void log_error(const std::string& msg);
void log_info(const std::string& msg);
void log_debug(const std::string& msg);

}  // namespace cerberus
