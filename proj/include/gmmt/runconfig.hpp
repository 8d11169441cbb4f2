#pragma once

#include <string>
#include <vector>

#include "gmmt/trainers.hpp"

namespace gmmt {

// Whole-run configuration. Serialized as flat-keyed INI text ([section] with
// key = value lines); the key names below are normative and round-trip
// losslessly. Defaults are the desk-scale toy-world configuration.
struct RunConfig {
    // [run]
    std::uint64_t seed = 2024;
    std::string out_dir = "out";

    // [scenario]
    int channels = 16;
    int height = 16;
    int width = 16;

    // [schedule]
    int total_steps = 1000;
    double beta_start = 1e-4;
    double beta_end = 0.02;
    int steps = 1;    // reverse steps s at inference
    double eta = 0.0;

    // [denoiser]
    int blocks = 2;
    int base_channels = 32;
    int time_embed_dim = 8;
    int head_hidden_channels = 8;
    int disc_base_channels = 16;

    // [trainer] ; desk-scale schedule (the full-scale values are the
    // TrainConfig defaults)
    std::string mode = "dm";
    double lambda = 1.0;
    int epochs = 100;
    int steps_per_epoch = 50;
    int batch_size = 1;
    double lr_warmup_start = 0.001;
    double lr_warmup_end = 0.02;
    int lr_warmup_epochs = 20;
    double lr_decay_end = 2e-4;
    double momentum = 0.9;
    double weight_decay = 1e-4;

    // [metrics]
    double pr_threshold = 2.0;
    double npr_threshold = 0.2;
    int eval_scenarios = 200;

    // [ablate] ; reduced budget so the four-method comparison stays desk-scale
    int ablate_epochs = 24;
    int ablate_batch_size = 2;

    // [sweep]
    std::vector<int> steps_values{1, 2, 3, 4, 5, 6, 7, 8, 9, 15, 20, 30, 40};
    std::vector<double> lambda_values{0, 1, 2, 3, 5, 10, 100};
    std::vector<int> blocks_values{1, 2, 3};
    int sweep_epochs = 8;

    static RunConfig parse_ini(const std::string& text);
    static RunConfig load(const std::string& path);
    std::string to_ini() const;

    ScenarioConfig scenario_config() const;
    DenoiserConfig denoiser_config() const;
    NoiseSchedule schedule() const;
    TrainConfig train_config() const;   // mode/lambda/epochs/... from this config
    TrainSetup train_setup(Method method) const;
    void validate() const;
};

}  // namespace gmmt
