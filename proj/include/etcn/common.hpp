#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <functional>
#include <random>
#include <string>
#include <string_view>

namespace etcn {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

/// Diagnostic classes of the plant data.
enum class FaultClass : int { Normal = 0, Loca = 1, Mslb = 2, Sgtr = 3 };

inline constexpr int kNumClasses = 4;

std::string_view class_name(FaultClass c);
std::string_view class_name(int class_id);
/// Accepts "NO", "LOCA", "MSLB", "SGTR" (case-insensitive) or the numeric id.
FaultClass parse_class(std::string_view text);

// Seed fan-out. Every random stream in the toolkit is derived from one
// master seed as derive_seed(master, tag, index), where the tag names the
// consumer ("noise", "split", "init", ...). The mix is splitmix64 over the
// master seed, an FNV-1a hash of the tag and the index.
std::uint64_t splitmix64(std::uint64_t x);
std::uint64_t derive_seed(std::uint64_t master, std::string_view tag, std::uint64_t index = 0);

using Rng = std::mt19937_64;

// Warnings are non-fatal (receptive field too short, tiny classes in a
// split). They go to stderr unless a handler is installed.
using WarningHandler = std::function<void(const std::string&)>;
void set_warning_handler(WarningHandler handler);
void warn(const std::string& message);

}  // namespace etcn
