// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <functional>
#include <string>

namespace gltr {

using WarningHandler = std::function<void(const std::string&)>;

// Library warnings go to stderr unless a handler is installed. Passing an
// empty handler restores the default.
void set_warning_handler(WarningHandler handler);
void warn(const std::string& message);

} // namespace gltr
