#pragma once

#include "etcn/data_pipeline.hpp"
#include "etcn/network.hpp"

#include <filesystem>
#include <string>

namespace etcn {

inline constexpr int kCheckpointVersion = 1;

/// Everything needed to rebuild a trained classifier and to check that a
/// dataset was preprocessed the way the training data was.
struct Checkpoint {
    Model model;
    NormalizerStats normalizer;
    int window_width = 0;
};

/// JSON document: {"format": "etcn-checkpoint", "version": 1, "config": {...},
/// "params": {name: {rows, cols, data}}, "buffers": {...},
/// "normalizer": {x_min, x_max}, "window_width": w}. Doubles are written in
/// shortest round-trip form so a reload is bit-exact.
std::string serialize_checkpoint(const Checkpoint& ckpt);
Checkpoint parse_checkpoint(const std::string& text);

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

std::string network_config_json(const NetworkConfig& config);
NetworkConfig network_config_from_json(const std::string& text);

/// Throws unless the dataset uses the same width and normalizer statistics.
void check_compatible(const Checkpoint& ckpt, const WindowedDataset& ds);

}  // namespace etcn
