#pragma once

#include <atomic>
#include <iostream>
#include <sstream>
#include <string>

namespace mindcap::log {

enum class Level { quiet = 0, warn = 1, info = 2 };

inline std::atomic<int>& verbosity() {
  static std::atomic<int> v{static_cast<int>(Level::warn)};
  return v;
}

inline void set_level(Level l) { verbosity() = static_cast<int>(l); }

template <typename... Args>
void info(Args&&... args) {
  if (verbosity() < static_cast<int>(Level::info)) return;
  std::ostringstream os;
  (os << ... << args);
  std::clog << "[mindcap] " << os.str() << "\n";
}

template <typename... Args>
void warn(Args&&... args) {
  if (verbosity() < static_cast<int>(Level::warn)) return;
  std::ostringstream os;
  (os << ... << args);
  std::clog << "[mindcap] warning: " << os.str() << "\n";
}

}  // namespace mindcap::log
