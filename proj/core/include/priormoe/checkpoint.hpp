#pragma once

#include <array>
#include <cstdint>
#include <string>

#include "priormoe/optim.hpp"
#include "priormoe/params.hpp"
#include "priormoe/rng.hpp"

namespace priormoe {

inline constexpr uint32_t kCheckpointVersion = 1;

// Little-endian binary container: magic + version, a name -> (dtype, shape,
// offset) manifest, then raw tensor payloads. Parameters serialize alongside
// optimizer moments, the training RNG state, the iteration counter and the
// config text, so a resumed run continues bit-for-bit.
struct CheckpointMeta {
    uint64_t iteration = 0;
    int64_t optimizer_step = 0;
    std::array<uint64_t, 4> rng_state{};
    std::string config_text;
};

void save_checkpoint(const std::string& path, const ParamStore& store, const AdamW* optim,
                     const CheckpointMeta& meta, bool fp32 = false);

// Loads tensors by name into an already-constructed store. Missing or extra
// names, shape mismatches and version mismatches are errors.
CheckpointMeta load_checkpoint(const std::string& path, ParamStore& store, AdamW* optim);

// Reads only the embedded config text (to rebuild the model before loading).
std::string peek_checkpoint_config(const std::string& path);

}  // namespace priormoe
