// SPDX-License-Identifier: Apache-2.0

#include "wxlab/log.hpp"

#include <cstdio>
#include <stdexcept>

namespace wxlab {

static std::vector<std::string>* g_capture = nullptr;

void log_warning(const std::string& msg) {
    if (g_capture) {
        g_capture->push_back(msg);
        return;
    }
    std::fprintf(stderr, "warning: %s\n", msg.c_str());
}

WarningCapture::WarningCapture() {
    if (g_capture) throw std::runtime_error("nested WarningCapture not supported");
    g_capture = &messages_;
}

WarningCapture::~WarningCapture() { g_capture = nullptr; }

bool WarningCapture::contains(const std::string& substring) const {
    for (const auto& m : messages_) {
        if (m.find(substring) != std::string::npos) return true;
    }
    return false;
}

}  // namespace wxlab
