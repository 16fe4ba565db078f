#pragma once

#include <iostream>
#include <string_view>

namespace v2m::log {

enum class Level { kQuiet, kWarn, kInfo };

Level level();
void set_level(Level l);

void warn(std::string_view msg);
void info(std::string_view msg);

}  // namespace v2m::log
