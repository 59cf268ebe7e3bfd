#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "fsm/graph.hpp"
#include "fsm/tensor.hpp"

namespace fsm {

/// Writes <stem>.manifest (json: layer kinds, hyperparameters, tensor shapes,
/// byte offsets, blob checksum) and <stem>.blob (little-endian f32, manifest
/// order). The graph must validate.
void save_model(const ModelGraph& g, const std::string& stem);

/// Loads and validates an archive written by save_model. Offset overruns,
/// overlapping regions, checksum mismatches and malformed manifests raise
/// IoError naming the offending entry; structural problems raise GraphError.
ModelGraph load_model(const std::string& stem);

struct Dataset {
    Tensor images;            // (n, 3, 32, 32)
    std::vector<int> labels;  // values 0..9
    int64_t size() const { return static_cast<int64_t>(labels.size()); }
};

struct Normalize {
    std::array<double, 3> mean{0.0, 0.0, 0.0};
    std::array<double, 3> stddev{1.0, 1.0, 1.0};
};

/// Reads CIFAR-10 binary batches: records of 3073 bytes, 1 label + 3072
/// channel-planar pixels, scaled to [0,1]. `path` may be a directory
/// (split "train" reads data_batch_*.bin, "test" reads test_batch.bin)
/// or a single batch file (split ignored). `limit` caps record count.
Dataset load_cifar10(const std::string& path, const std::string& split = "train",
                     int64_t limit = -1, const Normalize* norm = nullptr);

struct RateConfig {
    std::map<int, double> rates;  // per prunable unit, absent means 0 (keep all)
    bool use_lambda = true;
    double var_coeff = 1.0;
    int finetune_epochs = 1;
    uint64_t seed = 0;
    std::optional<Normalize> normalize;

    double rate_for(int unit) const;
};

/// Json config; an empty file yields all defaults. Rates outside [0,1)
/// raise ConfigError.
RateConfig load_rates(const std::string& path);

}  // namespace fsm
