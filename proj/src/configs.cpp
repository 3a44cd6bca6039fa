#include "maunet/configs.hpp"

#include "maunet/error.hpp"

namespace maunet {

int ModelConfig::bottleneck_width() const {
    int w = base_width;
    for (int i = 0; i < depth; ++i) w *= 2;
    return w;
}

void ModelConfig::validate() const {
    if (in_channels < 1) throw ConfigError("model config: in_channels must be >= 1");
    if (base_width < 1) throw ConfigError("model config: base_width must be >= 1");
    if (depth < 1) throw ConfigError("model config: depth must be >= 1");
    if (depth > 16) throw ConfigError("model config: depth is implausibly large");
    if (fused_channels < 0) throw ConfigError("model config: fused_channels must be >= 0");
    if (bottleneck_ratio < 1) throw ConfigError("model config: bottleneck_ratio must be >= 1");
    if (enable_dual_attention && head_width() % bottleneck_ratio != 0) {
        throw ConfigError("model config: bottleneck_ratio " + std::to_string(bottleneck_ratio) +
                          " does not divide the attended feature width " +
                          std::to_string(head_width()));
    }
}

void TrainConfig::validate() const {
    // learning_rate 0 is accepted: a null update is a meaningful degenerate
    // run (and exercised by tests), anything negative is not.
    if (learning_rate < 0) throw ConfigError("train config: learning_rate must be >= 0");
    if (!(beta1 >= 0 && beta1 < 1)) throw ConfigError("train config: beta1 must be in [0,1)");
    if (!(beta2 >= 0 && beta2 < 1)) throw ConfigError("train config: beta2 must be in [0,1)");
    if (eps <= 0) throw ConfigError("train config: eps must be > 0");
    if (batch_size < 1) throw ConfigError("train config: batch_size must be >= 1");
    if (epochs < 1) throw ConfigError("train config: epochs must be >= 1");
}

std::string to_string(TrainConfig::Reduction r) {
    return r == TrainConfig::Reduction::Sum ? "sum" : "mean";
}

std::string to_string(TrainConfig::Monitor m) {
    return m == TrainConfig::Monitor::Mdc ? "mdc" : "miou";
}

}  // namespace maunet
