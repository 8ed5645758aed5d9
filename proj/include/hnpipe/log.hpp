#pragma once
#include <atomic>
#include <iostream>
#include <mutex>
#include <string_view>

namespace hnpipe {

inline std::atomic<bool>& warnings_enabled()
{
    static std::atomic<bool> enabled{true};
    return enabled;
}

inline void warn(std::string_view msg)
{
    static std::mutex m;
    if (!warnings_enabled().load()) return;
    std::lock_guard<std::mutex> lock(m);
    std::cerr << "warning: " << msg << '\n';
}

} // namespace hnpipe
