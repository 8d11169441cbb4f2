#pragma once

#include <optional>

#include "gmmt/pipeline.hpp"

namespace gmmt {

// Training methods: Base is the typical (discriminative) fusion baseline; the
// other three train the generative fusion network under the corresponding
// generative loss.
enum class Method { Base, Raw, Cgan, Dm };

const char* method_name(Method m);
Method parse_method(const std::string& name);

struct TrainConfig {
    GenMode mode = GenMode::Dm;
    double lambda = 1.0;  // generative-loss weight in the combined objective
    int epochs = 100;
    int steps_per_epoch = 50;
    int batch_size = 4;
    double lr_warmup_start = 0.001;
    double lr_warmup_end = 0.005;
    int lr_warmup_epochs = 20;
    double lr_decay_end = 0.00005;
    double momentum = 0.9;
    double weight_decay = 0.0001;
    std::uint64_t seed = 0;

    void validate() const;
};

struct LossBreakdown {
    int step = 0;   // 1-based global step
    int epoch = 0;  // 1-based
    double lr = 0;
    double loss_track = 0;
    std::optional<double> loss_gen;  // absent for the Base method
    double total = 0;
    std::optional<double> loss_d0;  // CGAN only
    std::optional<double> loss_d1;  // CGAN only
};

// Linear warmup over the first lr_warmup_epochs, then log-linear decay from
// lr_warmup_end to lr_decay_end over the remaining epochs. Continuous at the
// boundary, monotone within each phase. epoch is 1-based.
double lr_at(int epoch, const TrainConfig& cfg);

// Literal combined objective: loss_track + lambda * loss_gen.
double combined_loss(double loss_track, double loss_gen, double lambda);

// Deterministic scenario source; challenge tags are drawn uniformly.
class ScenarioStream {
  public:
    ScenarioStream(ScenarioConfig geo, Rng rng) : geo_(geo), rng_(rng) {}
    Scenario next() {
        const Challenge c = static_cast<Challenge>(rng_.uniform_int(0, 3));
        return synth_scenario(rng_, c, geo_);
    }
    const ScenarioConfig& geometry() const { return geo_; }

  private:
    ScenarioConfig geo_;
    Rng rng_;
};

// --- single optimization steps ------------------------------------------

// RAW: the generator consumes standard-normal noise with a zero time flag and
// regresses the oracle fused map directly.
LossBreakdown step_raw(DenoiserParams& net, TrackHead& head, const std::vector<Scenario>& batch,
                       const TrainConfig& cfg, double lr, Rng& rng);

// DM: per sample, a uniform t in [1,T] and fresh noise corrupt the oracle
// fused map; the network regresses the injected noise. The tracking branch
// feeds a one-step sample (the s=1 inference path, gradients attached) to the
// head.
LossBreakdown step_dm(DenoiserParams& net, TrackHead& head, const std::vector<Scenario>& batch,
                      const NoiseSchedule& sched, const TrainConfig& cfg, double lr, Rng& rng);

// Per-sample DM losses with explicit t and noise; step_dm draws these. The
// returned nodes live on `tape`.
struct DmSampleLosses {
    Tape::NodeId loss_gen;
    Tape::NodeId loss_track;
};
DmSampleLosses dm_sample_losses(Tape& tape, DenoiserParams& net, TrackHead& head,
                                const Scenario& sample, int t, const Tensor& noise,
                                const Tensor& track_noise, const NoiseSchedule& sched);

// CGAN: strict 1:1 alternation per batch. Phase 1 updates D on generated
// (label 0) and oracle (label 1) batches; phase 2 freezes D and updates the
// generator and head on Loss_G = mse(D(fused*), 1) plus the tracking loss.
LossBreakdown step_cgan(DenoiserParams& gen, DiscriminatorParams& disc, TrackHead& head,
                        const std::vector<Scenario>& batch, const TrainConfig& cfg, double lr,
                        Rng& rng);

// The two CGAN phases, individually steppable. step_cgan runs them 1:1.
struct CganDiscLosses {
    double loss_d0 = 0;  // mse(D(fused*), 0)
    double loss_d1 = 0;  // mse(D(fused), 1)
    double loss_d() const { return loss_d0 + loss_d1; }
};
CganDiscLosses cgan_disc_phase(DenoiserParams& gen, DiscriminatorParams& disc,
                               const std::vector<Scenario>& batch, const TrainConfig& cfg,
                               double lr, Rng& rng);
LossBreakdown cgan_gen_phase(DenoiserParams& gen, const DiscriminatorParams& disc, TrackHead& head,
                             const std::vector<Scenario>& batch, const TrainConfig& cfg, double lr,
                             Rng& rng);

// Base: typical fusion block + head under the tracking loss alone.
LossBreakdown step_base(TypicalFusion& typical, TrackHead& head, const std::vector<Scenario>& batch,
                        const TrainConfig& cfg, double lr, Rng& rng);

// --- full training loop ---------------------------------------------------

struct TrainSetup {
    Method method = Method::Dm;
    ScenarioConfig geo;
    DenoiserConfig dcfg;
    NoiseSchedule sched;
    TrainConfig tcfg;
    int head_hidden_channels = 8;
    int disc_base_channels = 16;
};

struct TrainedModels {
    Method method = Method::Dm;
    DenoiserParams net;
    DiscriminatorParams disc;
    TypicalFusion typical;
    TrackHead head;
    std::vector<LossBreakdown> log;
    bool aborted = false;        // non-finite loss hit; params restored to last epoch end
    std::string abort_message;
};

// Runs epochs x steps_per_epoch optimization steps. Initialization and the
// scenario stream derive from tcfg.seed, so identical setups produce
// bit-identical logs and parameters. On a non-finite loss the last completed
// epoch's parameters are restored and `aborted` is set.
TrainedModels train(const TrainSetup& setup);

}  // namespace gmmt
