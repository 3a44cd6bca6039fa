#pragma once

#include <cstdint>
#include <string>

namespace maunet {

// Architecture hyperparameters. Disabling all three toggles yields a plain
// U-Net used for parameter comparison.
struct ModelConfig {
    int in_channels = 1;
    int base_width = 64;   // channels at the first encoder stage
    int depth = 4;         // number of x2 downsamplings
    int bottleneck_ratio = 4;  // r of the global-context block
    bool enable_attention_gates = true;
    bool enable_dual_attention = true;
    bool enable_multiscale = true;
    int fused_channels = 0;  // width of the fusion conv output; 0 means base_width

    int resolved_fused_channels() const { return fused_channels > 0 ? fused_channels : base_width; }

    // Channel width of the feature the prediction head consumes (and dual
    // attention operates on).
    int head_width() const { return enable_multiscale ? resolved_fused_channels() : base_width; }

    int bottleneck_width() const;  // base_width * 2^depth

    // Throws ConfigError naming the violated invariant.
    void validate() const;

    bool operator==(const ModelConfig&) const = default;
};

struct TrainConfig {
    enum class Reduction { Sum, Mean };
    enum class Monitor { Mdc, Miou };

    double learning_rate = 0.001;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    int batch_size = 1;
    int epochs = 1;
    std::uint64_t seed = 0;
    Reduction loss_reduction = Reduction::Mean;
    Monitor monitor = Monitor::Mdc;

    void validate() const;

    bool operator==(const TrainConfig&) const = default;
};

std::string to_string(TrainConfig::Reduction r);
std::string to_string(TrainConfig::Monitor m);

}  // namespace maunet
