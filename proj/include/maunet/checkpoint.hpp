#pragma once

#include <string>

#include "maunet/model.hpp"
#include "maunet/run_config.hpp"

namespace maunet {

// Binary checkpoint, bit-exact by construction:
//   magic                   8 bytes "MAUNET01"
//   config block            u32 LE length + canonical key=value text
//   records, until EOF:     name_len u32 LE, name UTF-8,
//                           dtype u8 (0 = f32, 1 = f64), ndim u8,
//                           dims u32 LE each, payload little-endian values
// Writes are atomic (temp file + rename).
inline constexpr char kCheckpointMagic[8] = {'M', 'A', 'U', 'N', 'E', 'T', '0', '1'};

template <typename S>
void save_checkpoint(const std::string& path, const ParamStore<S>& params,
                     const RunConfig& config);

struct LoadedCheckpoint {
    RunConfig config;
    MaUnet<float> model;  // rebuilt from the config with tensors from the file
};

// Validates magic and rebuilds the model census from the embedded ModelConfig;
// every record must match an expected tensor's dims exactly.
LoadedCheckpoint load_checkpoint(const std::string& path);

extern template void save_checkpoint(const std::string&, const ParamStore<float>&,
                                     const RunConfig&);
extern template void save_checkpoint(const std::string&, const ParamStore<double>&,
                                     const RunConfig&);

}  // namespace maunet
