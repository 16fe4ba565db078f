#include "v2m/log.hpp"

#include <atomic>

namespace v2m::log {
namespace {
std::atomic<Level> g_level{Level::kWarn};
}

Level level() { return g_level.load(); }
void set_level(Level l) { g_level.store(l); }

void warn(std::string_view msg) {
  if (level() >= Level::kWarn) std::cerr << "warning: " << msg << '\n';
}

void info(std::string_view msg) {
  if (level() >= Level::kInfo) std::cerr << msg << '\n';
}

}  // namespace v2m::log
