#pragma once

#include <string>

#include "gmmt/denoiser.hpp"
#include "gmmt/schedule.hpp"

namespace gmmt {

enum class Challenge : std::uint8_t { Clean = 0, RgbDegraded = 1, TirDegraded = 2, BothNoisy = 3 };

enum class GenMode { Raw, Cgan, Dm };

const char* challenge_name(Challenge c);
const char* gen_mode_name(GenMode m);
GenMode parse_gen_mode(const std::string& name);  // "raw" | "cgan" | "dm"

struct BBox {
    double cx = 0, cy = 0, w = 1, h = 1;  // feature-grid units
};

// Synthetic-world geometry and construction constants. The generator plants a
// Gaussian-bump target into both modality maps, adds modality-specific
// distractor bumps away from the target, and degrades one or both modalities
// according to the challenge tag. The world's constants are frozen by
// construction: nothing here is ever trained.
struct ScenarioConfig {
    int channels = 4;
    int height = 8;
    int width = 8;
    double base_noise_sigma = 0.02;   // always-on background noise
    double heavy_noise_sigma = 0.3;   // extra noise for BothNoisy
    double degraded_target_gain = 0.1;  // amplitude factor in the degraded modality
    int distractors_per_modality = 2;
    int min_distractor_distance = 4;  // cells away from the target center
};

struct Scenario {
    Tensor f_rgb;
    Tensor f_tir;
    Tensor fused_oracle;  // oracle_fuse(f_rgb, f_tir), exactly
    BBox bbox;
    Challenge challenge = Challenge::Clean;
};

struct Prediction {
    BBox bbox;
    Tensor response_map;  // [1,H,W]; bbox center is its argmax (row-major tie-break)
};

Scenario synth_scenario(Rng& rng, Challenge challenge, const ScenarioConfig& geo);

// Reliability-gated convex mix. Per position, weight =
// E_rgb / (E_rgb + E_tir + eps) with E_* the 3x3-window sum of squares over
// all channels; fused = weight*f_rgb + (1-weight)*f_tir.
Tensor oracle_fuse(const Tensor& f_rgb, const Tensor& f_tir, double eps = 1e-6);

// The baseline "typical" fusion block: concatenation followed by one
// convolutional layer back to C channels.
struct TypicalFusion {
    int channels = 4;
    Param weight;  // [C,2C,3,3]
    Param bias;    // [C]

    std::vector<Param*> params() { return {&weight, &bias}; }
    std::vector<std::pair<std::string, Tensor*>> named_tensors();
};

TypicalFusion build_typical_fusion(int channels, Rng& rng);
Tape::NodeId typical_fuse(Tape& tape, TypicalFusion& block, Tape::NodeId f_rgb, Tape::NodeId f_tir);
Tensor typical_fuse_apply(TypicalFusion& block, const Tensor& f_rgb, const Tensor& f_tir);

// Two-conv tracking head: a hidden conv block then a projection to a
// 1-channel response map and a 2-channel size map. The head standardizes its
// input per channel, and the size channels carry grid-normalized extents
// (w/W, h/H); both keep the head loss and its gradients at unit scale no
// matter how hot the generated features run.
struct TrackHead {
    int in_channels = 4;
    int hidden_channels = 8;
    Param w1, b1;  // [K,C,3,3], [K]
    Param w2, b2;  // [3,K,3,3], [3]

    std::vector<Param*> params() { return {&w1, &b1, &w2, &b2}; }
    std::vector<std::pair<std::string, Tensor*>> named_tensors();
};

TrackHead build_track_head(int in_channels, int hidden_channels, Rng& rng);

struct HeadMaps {
    Tape::NodeId response;  // [1,H,W]
    Tape::NodeId size;      // [2,H,W]
};
HeadMaps track_head_forward(Tape& tape, TrackHead& head, Tape::NodeId fused);

// Reads the response/size maps into a Prediction. Center = argmax of the
// response (ties broken by the smallest row-major index); sizes are read at
// the argmax cell and clamped to be non-negative.
Prediction track_head_predict(TrackHead& head, const Tensor& fused);

// Gaussian response target rendered at the ground-truth box center with
// sigma_x = max(1, w/2), sigma_y = max(1, h/2), unit peak.
Tensor render_response_target(const BBox& box, int height, int width);

// loss_track = mse(response, rendered target) + mse(size at truth cell, (w,h)).
Tape::NodeId track_loss(Tape& tape, TrackHead& head, Tape::NodeId fused, const BBox& truth);

struct InferStats {
    int denoiser_calls = 0;
    std::vector<int> timesteps;
};

// Generative fusion at inference. DM mode iterates deterministic DDIM over
// the plan starting from standard-normal noise; RAW/CGAN modes make a single
// generator pass on noise with a zero time flag.
Tensor gmmt_infer(DenoiserParams& net, const Tensor& f_rgb, const Tensor& f_tir,
                  const StepPlan& plan, GenMode mode, const NoiseSchedule& sched, double eta,
                  Rng& rng, InferStats* stats = nullptr);

enum class FusionRoute { Typical, Gmmt };

// Full pipeline: fuse (typical or generative), then track.
struct PipelineModel {
    FusionRoute route = FusionRoute::Gmmt;
    GenMode mode = GenMode::Dm;
    DenoiserParams net;
    TypicalFusion typical;
    TrackHead head;
};

Prediction predict(PipelineModel& model, const Scenario& scenario, const StepPlan& plan,
                   const NoiseSchedule& sched, double eta, Rng& rng);

// Flat binary scenario container: magic "GMMT", version u32, C,H,W u32
// (little-endian), then f_rgb, f_tir, fused_oracle as 64-bit little-endian
// reals, the bbox as four 64-bit reals, and the challenge tag byte.
void write_scenario(const std::string& path, const Scenario& s);
Scenario read_scenario(const std::string& path);

// Same header followed by a single [C,H,W] map; used for fused* dumps.
void write_feature_map(const std::string& path, const Tensor& map);
Tensor read_feature_map(const std::string& path);

}  // namespace gmmt
