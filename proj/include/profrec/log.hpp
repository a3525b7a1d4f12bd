#pragma once

#include <atomic>
#include <iostream>
#include <string_view>

namespace profrec {

// Process-wide warning counter; stages report it in their logs.
inline std::atomic<std::uint64_t>& warning_count() {
    static std::atomic<std::uint64_t> n{0};
    return n;
}

inline void log_warn(std::string_view msg) {
    warning_count().fetch_add(1, std::memory_order_relaxed);
    std::cerr << "[warn] " << msg << "\n";
}

inline void log_info(std::string_view msg) { std::cerr << "[info] " << msg << "\n"; }

}  // namespace profrec
