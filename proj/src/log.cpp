// SPDX-License-Identifier: Apache-2.0
#include "gltr/log.hpp"

#include <iostream>
#include <mutex>

namespace gltr {

namespace {

std::mutex& handler_mutex() {
    static std::mutex m;
    return m;
}

WarningHandler& handler() {
    static WarningHandler h;
    return h;
}

} // namespace

void set_warning_handler(WarningHandler h) {
    std::lock_guard lock(handler_mutex());
    handler() = std::move(h);
}

void warn(const std::string& message) {
    std::lock_guard lock(handler_mutex());
    if (handler()) {
        handler()(message);
    } else {
        std::cerr << "gltr: warning: " << message << '\n';
    }
}

} // namespace gltr
