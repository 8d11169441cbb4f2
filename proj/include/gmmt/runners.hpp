#pragma once

#include "gmmt/checkpoint.hpp"
#include "gmmt/metrics.hpp"

namespace gmmt {

// Worker cap for evaluation loops: value of GMMT_THREADS when set and valid,
// otherwise 1. Results never depend on the worker count (per-index rng
// streams, indexed result slots, ordered aggregation).
int worker_count();

struct EvalSummary {
    EvalReport report;
    int scenarios = 0;
};

// Evaluates a trained model over freshly synthesized scenarios (challenge mix
// uniform, stream derived from seed). SSIM against the oracle fused map is
// reported for generative routes.
EvalSummary evaluate_models(TrainedModels& models, const RunConfig& cfg, int n_scenarios,
                            std::uint64_t seed);

// Subcommand bodies. All outputs land under cfg.out_dir.
std::string run_train(const RunConfig& cfg);                    // -> checkpoint path
void run_infer(const RunConfig& cfg, const std::string& checkpoint, int count);
EvalSummary run_eval(const RunConfig& cfg, const std::string& checkpoint);
void run_ablate(const RunConfig& cfg);
void run_sweep(const RunConfig& cfg, const std::string& axis, const std::string& checkpoint);
void run_goldens(const RunConfig& cfg, bool force);

}  // namespace gmmt
