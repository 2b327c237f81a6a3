#include "etcn/common.hpp"

#include <algorithm>
#include <cctype>
#include <iostream>
#include <mutex>
#include <stdexcept>

namespace etcn {

std::string_view class_name(FaultClass c) {
    switch (c) {
        case FaultClass::Normal: return "NO";
        case FaultClass::Loca: return "LOCA";
        case FaultClass::Mslb: return "MSLB";
        case FaultClass::Sgtr: return "SGTR";
    }
    return "?";
}

std::string_view class_name(int class_id) {
    if (class_id < 0 || class_id >= kNumClasses) return "?";
    return class_name(static_cast<FaultClass>(class_id));
}

FaultClass parse_class(std::string_view text) {
    std::string upper(text);
    std::transform(upper.begin(), upper.end(), upper.begin(),
                   [](unsigned char ch) { return static_cast<char>(std::toupper(ch)); });
    if (upper == "NO" || upper == "0") return FaultClass::Normal;
    if (upper == "LOCA" || upper == "1") return FaultClass::Loca;
    if (upper == "MSLB" || upper == "2") return FaultClass::Mslb;
    if (upper == "SGTR" || upper == "3") return FaultClass::Sgtr;
    throw std::invalid_argument("unknown class '" + std::string(text) + "'");
}

std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

std::uint64_t derive_seed(std::uint64_t master, std::string_view tag, std::uint64_t index) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char ch : tag) {
        h ^= ch;
        h *= 0x100000001b3ULL;
    }
    return splitmix64(splitmix64(master ^ h) + index);
}

namespace {
std::mutex g_warn_mutex;
WarningHandler g_warn_handler;
}  // namespace

void set_warning_handler(WarningHandler handler) {
    std::lock_guard lock(g_warn_mutex);
    g_warn_handler = std::move(handler);
}

void warn(const std::string& message) {
    std::lock_guard lock(g_warn_mutex);
    if (g_warn_handler) {
        g_warn_handler(message);
    } else {
        std::cerr << "warning: " << message << '\n';
    }
}

}  // namespace etcn
