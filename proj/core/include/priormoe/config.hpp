#pragma once

#include <cstdint>
#include <string>

#include "priormoe/model.hpp"

namespace priormoe {

// Full run configuration. Defaults are the desk profile; profiles/ ships the
// paper-scale settings as a config file.
struct TrainConfig {
    int image_size = 64;
    int backbone_dim = 128;
    int backbone_layers = 24;
    int backbone_heads = 4;
    int extractor_width = 32;
    int decoder_width = 64;
    int adapter_heads = 4;
    int adapter_points = 4;
    int stages = 4;

    double lr = 1e-3;
    double weight_decay = 0.01;
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double adam_eps = 1e-8;
    int iterations = 2000;
    int batch_size = 4;
    double alpha = 5.0;  // bce weight
    double beta = 2.0;   // dice weight
    uint64_t seed = 7;
    int checkpoint_interval = 500;
    bool checkpoint_fp32 = false;

    bool ablate_dmlp = false;
    bool ablate_cda = false;
    bool ablate_case = false;

    void validate() const;  // throws with the offending key on violation
    ModelConfig model_config() const;
    std::string serialize() const;  // key=value text, parse_config-compatible
};

// Flat key=value parser (TOML-compatible subset: '#' comments, bare keys,
// numbers/booleans/strings). Unknown keys and type errors are reported with
// the key name and line number. Empty input yields the desk defaults.
TrainConfig parse_config_text(const std::string& text);
TrainConfig parse_config(const std::string& path);

}  // namespace priormoe
