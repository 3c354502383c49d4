#include "asca/log.hpp"

#include <iostream>
#include <mutex>

namespace asca {

namespace {

std::mutex g_mutex;
LogSink g_sink = [](LogLevel level, const std::string& message) {
    std::cerr << (level == LogLevel::kWarning ? "warning: " : "") << message << '\n';
};

}  // namespace

void set_log_sink(LogSink sink) {
    std::lock_guard lock(g_mutex);
    g_sink = std::move(sink);
}

void log_message(LogLevel level, const std::string& message) {
    std::lock_guard lock(g_mutex);
    if (g_sink) g_sink(level, message);
}

}  // namespace asca
