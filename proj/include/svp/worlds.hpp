#pragma once

#include <string>
#include <vector>

#include "svp/rng.hpp"
#include "svp/tensor.hpp"
#include "svp/warp.hpp"

namespace svp {

// Bouncing soft sprites on a dark background; the stochastic events are the
// wall bounces, where direction and speed are re-sampled.
struct SpriteWorldConfig {
    int64_t height = 32, width = 32;
    int sprite_count = 2;
    double sprite_size = 8.0;
    double speed_min = 1.0, speed_max = 3.0;
    int64_t t = 15;
};

// A camera driving toward a textured wall over a textured ground plane, with
// one independently moving box. Every frame carries exact depth, the
// camera pose step, the box residual flow, and the box mask.
struct EgoWorldConfig {
    int64_t height = 48, width = 32;
    double fx = 28.0, fy = 28.0;  // principal point defaults to the center
    double cam_height = 1.5;
    double wall_z = 30.0;
    double ego_speed_min = 0.1, ego_speed_max = 0.4;
    double ego_yaw_max = 0.006;  // radians per frame, sampled once per sequence
    double box_z = 12.0;
    double box_size = 2.2;
    double box_speed_min = 0.04, box_speed_max = 0.22;
    double d_min = 1.0, d_max = 50.0;
    int64_t t = 20;
};

// Grid world of rigid square agents moving at integer velocities along the
// four compass headings, with random turn events and bounces. States degrade
// with distance from the grid center (attenuation plus noise); labels are
// exact everywhere.
struct BEVWorldConfig {
    int64_t grid = 48;
    int agent_count = 3;
    int agent_size_min = 3, agent_size_max = 5;  // odd side lengths
    int speed_max = 2;
    double turn_prob = 0.15;
    double center_sigma = 1.5;
    double state_atten = 0.5;
    double state_noise = 0.25;
    int64_t t = 15;
};

struct LabeledSequence {
    std::vector<Tensor> frames;  // [C,H,W] frames or BEV feature states

    // BEV label heads (empty for worlds without them)
    std::vector<Tensor> seg;           // [1,H,W] in {0,1}
    std::vector<Tensor> instance_ids;  // [1,H,W], 0 = background
    std::vector<Tensor> centers;       // [1,H,W] heatmap
    std::vector<Tensor> offsets;       // [2,H,W] pixel -> its instance centroid
    std::vector<Tensor> future_flow;   // [2,H,W] instance displacement t -> t+1

    // ego-world ground truth
    std::vector<Tensor> depth;          // [1,H,W]
    std::vector<Tensor> poses;          // [6] target->source camera; index 0 is zero
    std::vector<Tensor> residual_flow;  // [2,H,W] beyond the rigid flow
    std::vector<Tensor> fg_mask;        // [1,H,W] moving-object pixels

    int64_t length() const { return static_cast<int64_t>(frames.size()); }
};

LabeledSequence gen_sprites(const SpriteWorldConfig& cfg, uint64_t seed);
LabeledSequence gen_egoworld(const EgoWorldConfig& cfg, uint64_t seed);
LabeledSequence gen_bevworld(const BEVWorldConfig& cfg, uint64_t seed);

CameraIntrinsics egoworld_intrinsics(const EgoWorldConfig& cfg);

// ---------------------------------------------------------------------------
// dataset directory layout: manifest.txt plus one record file per sequence,
// each a fixed-order concatenation of binary tensor records
// ---------------------------------------------------------------------------

struct DatasetManifest {
    std::string world;
    int64_t sequence_count = 0;
    int64_t t = 0;
    Shape frame_shape;  // [C,H,W]
    uint64_t seed = 0;
    std::string config_hash;
    std::vector<std::string> fields;
};

std::vector<std::string> world_fields(const std::string& world);
std::string sequence_filename(int64_t index);

void write_manifest(const std::string& dir, const DatasetManifest& m);
DatasetManifest read_manifest(const std::string& dir);
void write_sequence_file(const std::string& path, const LabeledSequence& seq,
                         const std::string& world);
LabeledSequence read_sequence_file(const std::string& path, const std::string& world);

// [T,C,H,W] <-> vector of [C,H,W]
Tensor stack_time(const std::vector<Tensor>& frames);
std::vector<Tensor> unstack_time(const Tensor& stacked);

}  // namespace svp
