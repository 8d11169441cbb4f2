#pragma once

#include "gmmt/runconfig.hpp"

namespace gmmt {

// Binary checkpoint: magic "GMCK", version u32, method byte, network
// geometry, training state, the RunConfig snapshot as INI text, named
// little-endian f64 sections (parameter values, momentum buffers and batch
// norm statistics), and a trailing FNV-1a 64 checksum over everything before
// it. Round-trips are bit-exact in the 64-bit build.
struct Checkpoint {
    Method method = Method::Dm;
    DenoiserConfig dcfg;
    int head_hidden_channels = 8;
    int disc_base_channels = 16;
    int epoch = 0;
    std::uint64_t step = 0;
    std::string config_ini;

    TrainedModels models;  // reconstructed on load
};

void save_checkpoint(const std::string& path, const Checkpoint& ckpt, TrainedModels& models);

// Verifies magic/version/checksum before touching anything; rejects files
// whose geometry disagrees with `expect` (when given) without partial loads.
Checkpoint load_checkpoint(const std::string& path, const RunConfig* expect = nullptr);

}  // namespace gmmt
