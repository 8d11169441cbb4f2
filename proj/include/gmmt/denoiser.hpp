#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "gmmt/tape.hpp"

namespace gmmt {

// Geometry of the conditional U-shaped network. Spatial resolution is kept
// constant through the network (3x3, stride 1, pad 1); the U topology lives
// in the skip concatenations across the bottleneck.
struct DenoiserConfig {
    int blocks = 2;            // n encoder/decoder block pairs
    int base_channels = 16;
    int feature_channels = 4;  // C of x_t / f_rgb / f_tir / outputs
    int height = 8;
    int width = 8;
    int time_embed_dim = 8;    // even; adds this many conditioning channels

    void validate() const;
    // Closed-form learnable-scalar count; kept in sync with build_denoiser by
    // an assertion and a unit test. With B = base_channels, C = feature
    // channels, E = time_embed_dim, n = blocks:
    //   time projection          E*E + E
    //   input projection conv    B*(3C+E)*9 + B
    //   n encoder blocks         n * (B*B*9 + B + 2B)
    //   n decoder blocks         n * (B*2B*9 + B + 2B)
    //   output projection conv   C*B*9 + C
    std::int64_t param_count() const;
};

struct ConvBlockParams {
    Param weight;  // [Cout,Cin,3,3]
    Param bias;    // [Cout]
    Param gamma;   // [Cout] per-channel norm gain
    Param beta;    // [Cout] per-channel norm shift
};

// Parameters of the U-shaped network (diffusion denoiser and CGAN generator
// share this; the roles differ only in what the output is interpreted as).
struct DenoiserParams {
    DenoiserConfig config;
    Param time_proj_w;  // [E,E]
    Param time_proj_b;  // [E]
    Param in_proj_w;    // [B,3C+E,3,3]
    Param in_proj_b;    // [B]
    std::vector<ConvBlockParams> encoder;  // n blocks, B -> B
    std::vector<ConvBlockParams> decoder;  // n blocks, 2B -> B
    Param out_proj_w;   // [C,B,3,3], zero-initialized
    Param out_proj_b;   // [C]

    std::vector<Param*> params();
    std::vector<std::pair<std::string, Tensor*>> named_tensors();  // values + momenta
    std::int64_t param_count();
};

// Four-block conditional discriminator. Blocks 1-3 carry
// batch normalization and relu; block 4 carries neither. A 3x3 projection to
// one channel, a spatial mean and a sigmoid produce the realness probability.
struct DiscriminatorParams {
    int feature_channels = 16;
    int base_channels = 16;
    int height = 16;
    int width = 16;
    struct Block {
        Param weight;
        Param bias;
        Param gamma;
        Param beta;
        BatchNormState bn;
        bool has_norm_act = true;
    };
    std::vector<Block> blocks;  // exactly four, stride 2 each
    Param final_w;              // [1,B,3,3]
    Param final_b;              // [1]

    std::vector<Param*> params();
    std::vector<std::pair<std::string, Tensor*>> named_tensors();  // values + momenta + bn buffers
};

// Sinusoidal position code for the timestep, before the learned projection.
// Element 2k = sin(t / 10000^(2k/dim)), element 2k+1 = cos of the same angle.
Tensor sinusoid_embedding(int t, int dim);

// Fan-in-scaled uniform init (bound sqrt(6/fan_in)), zero biases, zero output
// projection so an untrained denoiser predicts zero noise.
DenoiserParams build_denoiser(const DenoiserConfig& config, Rng& rng);
DiscriminatorParams build_discriminator(int feature_channels, int base_channels, int height,
                                        int width, Rng& rng);

// Forward pass on the caller's tape. x_t, f_rgb, f_tir: [C,H,W]; returns a
// [C,H,W] node (noise prediction in DM mode, generated fused* in generator
// mode). Conditioning is concatenated at the input in the fixed order
// (x_t, f_rgb, f_tir, time embedding).
Tape::NodeId denoiser_forward(Tape& tape, DenoiserParams& net, Tape::NodeId x_t, Tape::NodeId f_rgb,
                              Tape::NodeId f_tir, int t);

// Convenience overload building its own tape; returns the output tensor.
Tensor denoiser_apply(DenoiserParams& net, const Tensor& x_t, const Tensor& f_rgb,
                      const Tensor& f_tir, int t);

// Batched forward: x is [N,3C,H,W] already concatenated conditions
// (x, f_rgb, f_tir per sample). Returns per-sample probabilities [N].
Tape::NodeId discriminator_forward(Tape& tape, DiscriminatorParams& net, Tape::NodeId cond_batch,
                                   bool training, bool update_running = true);

// Single-sample convenience: eval-mode probability in (0,1).
real discriminator_apply(DiscriminatorParams& net, const Tensor& x, const Tensor& f_rgb,
                         const Tensor& f_tir);

}  // namespace gmmt
