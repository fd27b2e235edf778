#include "soda/log.hpp"

#include <atomic>
#include <iostream>

namespace soda {

namespace {
std::atomic<int> g_level{static_cast<int>(LogLevel::kWarning)};
}

void set_log_level(LogLevel level) { g_level = static_cast<int>(level); }
LogLevel log_level() { return static_cast<LogLevel>(g_level.load()); }

void log_warning(std::string_view message) {
  if (g_level >= static_cast<int>(LogLevel::kWarning)) std::cerr << "[soda] warning: " << message << '\n';
}

void log_info(std::string_view message) {
  if (g_level >= static_cast<int>(LogLevel::kInfo)) std::cerr << "[soda] " << message << '\n';
}

}  // namespace soda
