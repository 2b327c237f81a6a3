#pragma once

#include "etcn/io.hpp"
#include "etcn/network.hpp"
#include "etcn/ssa.hpp"
#include "etcn/training.hpp"

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

namespace etcn::cli {

inline constexpr const char* kToolVersion = "0.1.0";

/// Runs one command line (args[0] is the subcommand). Returns the exit
/// code; failures print a single "error: ..." line to `err`.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

/// Output directory used when a command is given no --out:
/// $ETCN_OUT_DIR/<command>, or ./etcn-out/<command>.
std::filesystem::path default_output(const std::string& command);

/// "6:2:2" -> {6, 2, 2}.
SplitRatios parse_ratios(const std::string& text);
/// "1,2,4" -> {1, 2, 4}.
std::vector<int> parse_int_list(const std::string& text);

/// Search-space file: one `name = spec` line per dimension, where spec is
/// `a:n:b` (grid from a to b at interval n), a comma-separated option
/// list, or a single value.
SearchSpace search_space_from(const KeyValueConfig& kv);

/// Network / training keys of a --config file: tcn_channels,
/// tcn_kernel_size, tcn_dilations, dropout_rate, attention_dim,
/// res_block_kind, res_kernel_size, sa_enabled, res_enabled, variant,
/// epochs, batch_size, learning_rate, seed, shuffle.
void apply_model_config(const KeyValueConfig& kv, NetworkConfig& net, TrainConfig& train);

struct OutputFile {
    std::string path;
    std::uint64_t checksum = 0;  // FNV-1a of the file bytes
};

/// Reproduction record written next to every command's outputs.
struct RunManifest {
    std::string command;
    std::vector<std::string> args;
    std::string cwd;
    std::string config_json;  // resolved configuration
    std::uint64_t seed = 0;
    std::string version = kToolVersion;
    std::vector<std::string> inputs;
    std::vector<OutputFile> outputs;
    double duration_seconds = 0.0;
};

std::string manifest_json(const RunManifest& m);
RunManifest parse_manifest(const std::string& text);

}  // namespace etcn::cli
