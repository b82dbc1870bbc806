#pragma once

#include <functional>
#include <string>
#include <string_view>

namespace natscan::log {

using Sink = std::function<void(std::string_view level, std::string_view message)>;

/// Replaces the process-wide sink and returns the previous one. The default
/// sink writes "[natscan] <level>: <message>" lines to stderr.
Sink set_sink(Sink sink);

void warn(std::string_view message);
void info(std::string_view message);

/// Installs a sink for the lifetime of the object, restoring the old one
/// afterwards. Handy in tests that assert on warnings.
class ScopedSink {
 public:
  explicit ScopedSink(Sink sink) : previous_(set_sink(std::move(sink))) {}
  ~ScopedSink() { set_sink(std::move(previous_)); }
  ScopedSink(const ScopedSink&) = delete;
  ScopedSink& operator=(const ScopedSink&) = delete;

 private:
  Sink previous_;
};

}  // namespace natscan::log
