#pragma once

#include <iostream>
#include <mutex>
#include <set>
#include <string>

namespace pgd::log {

enum class Level { quiet = 0, warn = 1, info = 2 };

namespace detail {
inline Level& level() {
  static Level lvl = Level::warn;
  return lvl;
}
inline std::mutex& mutex() {
  static std::mutex m;
  return m;
}
inline std::set<std::string>& seen() {
  static std::set<std::string> s;
  return s;
}
}  // namespace detail

inline void set_level(Level lvl) { detail::level() = lvl; }

inline void warn(const std::string& msg) {
  if (detail::level() < Level::warn) return;
  std::lock_guard<std::mutex> lock(detail::mutex());
  std::clog << "[pgd] warning: " << msg << '\n';
}

// Emits each distinct message once per process.
inline void warn_once(const std::string& msg) {
  if (detail::level() < Level::warn) return;
  std::lock_guard<std::mutex> lock(detail::mutex());
  if (!detail::seen().insert(msg).second) return;
  std::clog << "[pgd] warning: " << msg << '\n';
}

inline void info(const std::string& msg) {
  if (detail::level() < Level::info) return;
  std::lock_guard<std::mutex> lock(detail::mutex());
  std::clog << "[pgd] " << msg << '\n';
}

}  // namespace pgd::log
