#pragma once

#include <vector>

#include "gmmt/tensor.hpp"

namespace gmmt {

// Diffusion-rate schedule. beta/alpha are indexed by t-1 (steps 1..T);
// alpha_bar has T+1 entries with alpha_bar[0] == 1 so that step boundaries at
// t=0 are well defined.
struct NoiseSchedule {
    int total_steps = 0;               // T
    std::vector<double> beta;          // beta_t, t = 1..T
    std::vector<double> alpha;         // 1 - beta_t
    std::vector<double> alpha_bar;     // prod_{i<=t} alpha_i; alpha_bar[0] = 1

    double abar(int t) const { return alpha_bar[t]; }
};

// Decreasing timestep subsequence for the reverse process.
struct StepPlan {
    std::vector<int> timesteps;  // strictly decreasing, first <= T, last >= 1
    int steps() const { return static_cast<int>(timesteps.size()); }
};

// Linear beta ramp from beta_start to beta_end. Defaults (1e-4, 0.02) drive
// alpha_bar at T=1000 to ~4e-5, i.e. a near pure-noise terminal state.
NoiseSchedule build_schedule(int total_steps, double beta_start = 1e-4, double beta_end = 0.02);

// Closed-form corruption x_t = sqrt(abar_t) x0 + sqrt(1-abar_t) noise.
Tensor forward_diffuse(const Tensor& x0, int t, const Tensor& noise, const NoiseSchedule& sched);

struct PosteriorParams {
    Tensor mu;
    double sigma;  // posterior variance; exactly 0 at t=1
};

// Literal evaluation of the posterior mean/variance with the predicted noise
// substituted for the network term.
PosteriorParams posterior_params(const Tensor& x_t, const Tensor& eps_pred, int t,
                                 const NoiseSchedule& sched);

// One deterministic-or-stochastic reverse step from t to t_prev (t_prev may
// be 0, which lands on the clean estimate). eta=0 is fully deterministic.
Tensor ddim_step(const Tensor& x_t, const Tensor& eps_pred, int t, int t_prev, double eta,
                 const NoiseSchedule& sched, Rng& rng);

// s evenly spaced timesteps from T down to 1; s=1 gives just {T}.
StepPlan make_plan(int total_steps, int s);

}  // namespace gmmt
