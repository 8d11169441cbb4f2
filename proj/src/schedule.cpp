#include "gmmt/schedule.hpp"

#include <cmath>
#include <string>

namespace gmmt {

NoiseSchedule build_schedule(int total_steps, double beta_start, double beta_end) {
    if (total_steps < 1) throw ConfigError("build_schedule: T must be >= 1");
    if (!(beta_start > 0.0) || !(beta_start <= beta_end) || !(beta_end < 1.0))
        throw ConfigError("build_schedule: need 0 < beta_start <= beta_end < 1");
    NoiseSchedule s;
    s.total_steps = total_steps;
    s.beta.resize(total_steps);
    s.alpha.resize(total_steps);
    s.alpha_bar.resize(total_steps + 1);
    s.alpha_bar[0] = 1.0;
    for (int t = 1; t <= total_steps; ++t) {
        const double frac = total_steps == 1 ? 0.0 : static_cast<double>(t - 1) / (total_steps - 1);
        const double b = beta_start + (beta_end - beta_start) * frac;
        s.beta[t - 1] = b;
        s.alpha[t - 1] = 1.0 - b;
        s.alpha_bar[t] = s.alpha_bar[t - 1] * s.alpha[t - 1];
    }
    return s;
}

static void require_t(int t, const NoiseSchedule& sched, const char* op) {
    if (t < 1 || t > sched.total_steps)
        throw ConfigError(std::string(op) + ": t out of range [1, T]");
}

Tensor forward_diffuse(const Tensor& x0, int t, const Tensor& noise, const NoiseSchedule& sched) {
    require_t(t, sched, "forward_diffuse");
    if (!x0.same_shape(noise)) throw ShapeError("forward_diffuse: noise shape mismatch");
    const double abar = sched.abar(t);
    const real ca = static_cast<real>(std::sqrt(abar));
    const real cn = static_cast<real>(std::sqrt(1.0 - abar));
    Tensor out = Tensor::zeros(x0.shape);
    for (std::size_t i = 0; i < out.data.size(); ++i)
        out.data[i] = ca * x0.data[i] + cn * noise.data[i];
    return out;
}

PosteriorParams posterior_params(const Tensor& x_t, const Tensor& eps_pred, int t,
                                 const NoiseSchedule& sched) {
    require_t(t, sched, "posterior_params");
    if (!x_t.same_shape(eps_pred)) throw ShapeError("posterior_params: shape mismatch");
    const double abar_t = sched.abar(t);
    const double abar_prev = sched.abar(t - 1);
    const double beta_t = sched.beta[t - 1];
    const double alpha_t = sched.alpha[t - 1];

    PosteriorParams out;
    out.sigma = (1.0 - abar_prev) / (1.0 - abar_t) * beta_t;

    const double c_xt = std::sqrt(alpha_t) * (1.0 - abar_prev) / (1.0 - abar_t);
    const double c_x0 = std::sqrt(abar_prev) * beta_t / (1.0 - abar_t);
    const double inv_sqrt_abar = 1.0 / std::sqrt(abar_t);
    const double sqrt_one_minus = std::sqrt(1.0 - abar_t);

    out.mu = Tensor::zeros(x_t.shape);
    for (std::size_t i = 0; i < out.mu.data.size(); ++i) {
        const double x0_hat = inv_sqrt_abar * (x_t.data[i] - sqrt_one_minus * eps_pred.data[i]);
        out.mu.data[i] = static_cast<real>(c_xt * x_t.data[i] + c_x0 * x0_hat);
    }
    return out;
}

Tensor ddim_step(const Tensor& x_t, const Tensor& eps_pred, int t, int t_prev, double eta,
                 const NoiseSchedule& sched, Rng& rng) {
    require_t(t, sched, "ddim_step");
    if (t_prev >= t || t_prev < 0) throw ConfigError("ddim_step: need 0 <= t_prev < t");
    if (eta < 0.0 || eta > 1.0) throw ConfigError("ddim_step: eta must lie in [0,1]");
    if (!x_t.same_shape(eps_pred)) throw ShapeError("ddim_step: shape mismatch");

    const double abar_t = sched.abar(t);
    const double abar_prev = sched.abar(t_prev);
    const double sigma =
        eta * std::sqrt((1.0 - abar_prev) / (1.0 - abar_t) * (1.0 - abar_t / abar_prev));
    const double dir = std::sqrt(std::max(0.0, 1.0 - abar_prev - sigma * sigma));
    const double inv_sqrt_abar = 1.0 / std::sqrt(abar_t);
    const double sqrt_one_minus = std::sqrt(1.0 - abar_t);
    const double sqrt_abar_prev = std::sqrt(abar_prev);

    Tensor out = Tensor::zeros(x_t.shape);
    for (std::size_t i = 0; i < out.data.size(); ++i) {
        const double x0_hat = inv_sqrt_abar * (x_t.data[i] - sqrt_one_minus * eps_pred.data[i]);
        double v = sqrt_abar_prev * x0_hat + dir * eps_pred.data[i];
        if (sigma > 0.0) v += sigma * rng.normal();
        out.data[i] = static_cast<real>(v);
    }
    return out;
}

StepPlan make_plan(int total_steps, int s) {
    if (s < 1 || s > total_steps) throw ConfigError("make_plan: need 1 <= s <= T");
    StepPlan plan;
    plan.timesteps.resize(s);
    if (s == 1) {
        plan.timesteps[0] = total_steps;
        return plan;
    }
    for (int i = 0; i < s; ++i) {
        const double v = total_steps - static_cast<double>(i) * (total_steps - 1) / (s - 1);
        plan.timesteps[i] = static_cast<int>(std::llround(v));
    }
    for (int i = 1; i < s; ++i)
        if (plan.timesteps[i] >= plan.timesteps[i - 1])
            throw ConfigError("make_plan: spacing collapsed, timesteps not strictly decreasing");
    return plan;
}

}  // namespace gmmt
