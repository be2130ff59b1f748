#pragma once

#include <string>
#include <vector>

#include "svp/common.hpp"

namespace svp {

// Flat `key = value` run configuration. Unknown keys are rejected; every
// field participates in the config hash, so any change is visible in dataset
// manifests and checkpoints.
struct RunConfig {
    std::string model = "slamp";
    std::string world = "sprites";

    // protocol; -1 resolves to the world defaults
    // (sprites 5/10/20, egoworld 10/10/20, bevworld 3/4/12)
    int64_t k = -1;
    int64_t train_horizon = -1;
    int64_t eval_horizon = -1;

    int64_t seq_count = 64;
    uint64_t seed = 1;
    int64_t n_samples = 10;

    // optimization
    double beta = 1e-4;
    double lr = 2e-4;
    double lr_finetune = -1;  // defaults to lr / 10
    int64_t steps = 2000;
    int64_t pretrain_steps = 0;
    int64_t checkpoint_every = 0;  // 0: steps / 5

    // network sizes
    int64_t enc_base = 12;
    int64_t feat = 64;
    int64_t hidden = 96;
    int64_t z_dim = 16;        // z^p / z^s chain
    int64_t z_motion_dim = 16; // z^f / z^d chain
    int64_t y_dim = 24;
    int64_t content_dim = 32;
    int64_t cell_ch = 28;
    int64_t head_ch = 20;
    int64_t y_ch = 32;
    int64_t z_ch = 8;
    int64_t gru_ch = 32;
    int64_t hidden_ch = 32;
    int64_t label_base = 8;
    double delta_t = 1.0;
    int64_t euler_substeps = 1;

    // world geometry; -1 resolves to world defaults
    int64_t height = -1, width = -1;
    int64_t sprite_count = 2;
    double sprite_size = 8.0;
    double speed_min = 1.0, speed_max = 3.0;
    int64_t grid = 48;
    int64_t agent_count = 3;
    double turn_prob = 0.15;
    double state_noise = 0.25;
    double state_atten = 0.5;
};

extern const std::vector<std::string> kModelKinds;

// Parses, applies defaults, validates model/world compatibility.
RunConfig parse_config_text(const std::string& text);
RunConfig parse_config_file(const std::string& path);
void validate(const RunConfig& cfg);

// Canonical `key = value` rendering of every field, in fixed order.
std::string canonical_text(const RunConfig& cfg);
// FNV-1a over the canonical text, hex-encoded.
std::string config_hash(const RunConfig& cfg);

}  // namespace svp
