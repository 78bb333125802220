// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <string>
#include <vector>

namespace wxlab {

// Emits a warning to stderr, or into the active capture if one is installed.
// Warnings flag recoverable oddities (degenerate stds, excluded channels);
// hard failures throw instead.
void log_warning(const std::string& msg);

// RAII capture used by tests to assert that a warning was (or was not)
// emitted. Only one capture may be active at a time.
class WarningCapture {
public:
    WarningCapture();
    ~WarningCapture();
    WarningCapture(const WarningCapture&) = delete;
    WarningCapture& operator=(const WarningCapture&) = delete;

    const std::vector<std::string>& messages() const { return messages_; }
    bool contains(const std::string& substring) const;

private:
    std::vector<std::string> messages_;
};

}  // namespace wxlab
