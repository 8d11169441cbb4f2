#include "gmmt/trainers.hpp"

#include <cmath>

namespace gmmt {

const char* method_name(Method m) {
    switch (m) {
        case Method::Base: return "BASE";
        case Method::Raw: return "RAW";
        case Method::Cgan: return "CGAN";
        case Method::Dm: return "DM";
    }
    return "?";
}

Method parse_method(const std::string& name) {
    if (name == "base" || name == "BASE") return Method::Base;
    if (name == "raw" || name == "RAW") return Method::Raw;
    if (name == "cgan" || name == "CGAN") return Method::Cgan;
    if (name == "dm" || name == "DM") return Method::Dm;
    throw ConfigError("unknown method '" + name + "' (expected base|raw|cgan|dm)");
}

void TrainConfig::validate() const {
    if (lambda < 0) throw ConfigError("train: lambda must be >= 0");
    if (epochs < 0 || steps_per_epoch < 1) throw ConfigError("train: bad epoch/step counts");
    if (batch_size < 1) throw ConfigError("train: batch_size must be >= 1");
    if (mode == GenMode::Cgan && batch_size < 2)
        throw ConfigError("train: CGAN needs batch_size >= 2 for batch statistics");
    if (lr_warmup_epochs < 1 || lr_warmup_epochs > std::max(1, epochs))
        throw ConfigError("train: warmup epochs out of range");
    if (lr_warmup_start <= 0 || lr_warmup_end <= 0 || lr_decay_end <= 0)
        throw ConfigError("train: learning rates must be positive");
}

double lr_at(int epoch, const TrainConfig& cfg) {
    if (epoch < 1 || epoch > cfg.epochs) throw ConfigError("lr_at: epoch out of range");
    const int warm = cfg.lr_warmup_epochs;
    if (epoch <= warm) {
        if (warm == 1) return cfg.lr_warmup_end;
        return cfg.lr_warmup_start +
               (cfg.lr_warmup_end - cfg.lr_warmup_start) * (epoch - 1) / (warm - 1);
    }
    const double frac = static_cast<double>(epoch - warm) / (cfg.epochs - warm);
    return cfg.lr_warmup_end * std::pow(cfg.lr_decay_end / cfg.lr_warmup_end, frac);
}

double combined_loss(double loss_track, double loss_gen, double lambda) {
    if (!std::isfinite(loss_track) || !std::isfinite(loss_gen))
        throw NumericError("combined_loss: non-finite inputs");
    return loss_track + lambda * loss_gen;
}

namespace {

// mean of a list of scalar nodes
Tape::NodeId mean_of(Tape& tape, const std::vector<Tape::NodeId>& xs) {
    Tape::NodeId acc = xs[0];
    for (std::size_t i = 1; i < xs.size(); ++i) acc = tape.add(acc, xs[i]);
    return tape.scale(acc, real(1) / static_cast<real>(xs.size()));
}

std::vector<Param*> joined(std::vector<Param*> a, const std::vector<Param*>& b) {
    a.insert(a.end(), b.begin(), b.end());
    return a;
}

}  // namespace

LossBreakdown step_raw(DenoiserParams& net, TrackHead& head, const std::vector<Scenario>& batch,
                       const TrainConfig& cfg, double lr, Rng& rng) {
    Tape tape;
    std::vector<Tape::NodeId> gen_losses, track_losses;
    for (const Scenario& s : batch) {
        auto z = tape.constant(Tensor::randn(s.fused_oracle.shape, rng));
        auto frgb = tape.constant(s.f_rgb);
        auto ftir = tape.constant(s.f_tir);
        auto out = denoiser_forward(tape, net, z, frgb, ftir, 0);
        gen_losses.push_back(tape.mse(tape.constant(s.fused_oracle), out));
        track_losses.push_back(track_loss(tape, head, out, s.bbox));
    }
    auto lg = mean_of(tape, gen_losses);
    auto lt = mean_of(tape, track_losses);
    auto total = tape.add(lt, tape.scale(lg, static_cast<real>(cfg.lambda)));
    tape.backward(total);
    sgd_step(joined(net.params(), head.params()), static_cast<real>(lr),
             static_cast<real>(cfg.momentum), static_cast<real>(cfg.weight_decay));

    LossBreakdown out;
    out.loss_track = tape.scalar(lt);
    out.loss_gen = tape.scalar(lg);
    out.total = tape.scalar(total);
    return out;
}

DmSampleLosses dm_sample_losses(Tape& tape, DenoiserParams& net, TrackHead& head,
                                const Scenario& sample, int t, const Tensor& noise,
                                const Tensor& track_noise, const NoiseSchedule& sched) {
    auto frgb = tape.constant(sample.f_rgb);
    auto ftir = tape.constant(sample.f_tir);

    Tensor x_t = forward_diffuse(sample.fused_oracle, t, noise, sched);
    auto eps_pred = denoiser_forward(tape, net, tape.constant(x_t), frgb, ftir, t);
    DmSampleLosses out;
    out.loss_gen = tape.mse(tape.constant(noise), eps_pred);

    // tracking branch: one-step sample from pure noise at t = T (the s=1
    // inference path), gradients flowing through the noise prediction
    const int total = sched.total_steps;
    const double abar = sched.abar(total);
    auto z = tape.constant(track_noise);
    auto eps_top = denoiser_forward(tape, net, z, frgb, ftir, total);
    auto fused_star = tape.lin_comb(z, eps_top, static_cast<real>(1.0 / std::sqrt(abar)),
                                    static_cast<real>(-std::sqrt(1.0 - abar) / std::sqrt(abar)));
    out.loss_track = track_loss(tape, head, fused_star, sample.bbox);
    return out;
}

LossBreakdown step_dm(DenoiserParams& net, TrackHead& head, const std::vector<Scenario>& batch,
                      const NoiseSchedule& sched, const TrainConfig& cfg, double lr, Rng& rng) {
    Tape tape;
    std::vector<Tape::NodeId> gen_losses, track_losses;
    for (const Scenario& s : batch) {
        const int t = static_cast<int>(rng.uniform_int(1, sched.total_steps));
        Tensor noise = Tensor::randn(s.fused_oracle.shape, rng);
        Tensor track_noise = Tensor::randn(s.fused_oracle.shape, rng);
        DmSampleLosses losses = dm_sample_losses(tape, net, head, s, t, noise, track_noise, sched);
        gen_losses.push_back(losses.loss_gen);
        track_losses.push_back(losses.loss_track);
    }
    auto lg = mean_of(tape, gen_losses);
    auto lt = mean_of(tape, track_losses);
    auto total = tape.add(lt, tape.scale(lg, static_cast<real>(cfg.lambda)));
    tape.backward(total);
    sgd_step(joined(net.params(), head.params()), static_cast<real>(lr),
             static_cast<real>(cfg.momentum), static_cast<real>(cfg.weight_decay));

    LossBreakdown out;
    out.loss_track = tape.scalar(lt);
    out.loss_gen = tape.scalar(lg);
    out.total = tape.scalar(total);
    return out;
}

CganDiscLosses cgan_disc_phase(DenoiserParams& gen, DiscriminatorParams& disc,
                               const std::vector<Scenario>& batch, const TrainConfig& cfg,
                               double lr, Rng& rng) {
    if (batch.size() < 2) throw ConfigError("cgan: batch too small for batch statistics");
    const int n = static_cast<int>(batch.size());

    // generated samples carry no generator gradients in this phase
    std::vector<Tensor> fake(n);
    for (int i = 0; i < n; ++i) {
        Tensor z = Tensor::randn(batch[i].fused_oracle.shape, rng);
        fake[i] = denoiser_apply(gen, z, batch[i].f_rgb, batch[i].f_tir, 0);
    }

    Tape tape;
    std::vector<Tape::NodeId> fake_cond, real_cond;
    for (int i = 0; i < n; ++i) {
        auto frgb = tape.constant(batch[i].f_rgb);
        auto ftir = tape.constant(batch[i].f_tir);
        fake_cond.push_back(tape.channel_concat({tape.constant(fake[i]), frgb, ftir}));
        real_cond.push_back(tape.channel_concat({tape.constant(batch[i].fused_oracle), frgb, ftir}));
    }
    auto p_fake = discriminator_forward(tape, disc, tape.stack(fake_cond), true, true);
    auto p_real = discriminator_forward(tape, disc, tape.stack(real_cond), true, true);
    auto loss_d0 = tape.mse(p_fake, tape.constant(Tensor::zeros({n})));
    auto loss_d1 = tape.mse(p_real, tape.constant(Tensor::full({n}, real(1))));
    auto loss_d = tape.add(loss_d0, loss_d1);
    tape.backward(loss_d);
    sgd_step(disc.params(), static_cast<real>(lr), static_cast<real>(cfg.momentum),
             static_cast<real>(cfg.weight_decay));

    CganDiscLosses out;
    out.loss_d0 = tape.scalar(loss_d0);
    out.loss_d1 = tape.scalar(loss_d1);
    return out;
}

LossBreakdown cgan_gen_phase(DenoiserParams& gen, const DiscriminatorParams& disc, TrackHead& head,
                             const std::vector<Scenario>& batch, const TrainConfig& cfg, double lr,
                             Rng& rng) {
    if (batch.size() < 2) throw ConfigError("cgan: batch too small for batch statistics");
    const int n = static_cast<int>(batch.size());

    Tape tape;
    std::vector<Tape::NodeId> cond, track_losses;
    for (int i = 0; i < n; ++i) {
        auto z = tape.constant(Tensor::randn(batch[i].fused_oracle.shape, rng));
        auto frgb = tape.constant(batch[i].f_rgb);
        auto ftir = tape.constant(batch[i].f_tir);
        auto fused_star = denoiser_forward(tape, gen, z, frgb, ftir, 0);
        cond.push_back(tape.channel_concat({fused_star, frgb, ftir}));
        track_losses.push_back(track_loss(tape, head, fused_star, batch[i].bbox));
    }
    // D is frozen: its tensors enter the graph as constants, batch statistics
    // are used but running statistics stay untouched
    DiscriminatorParams frozen = disc;
    auto h = tape.stack(cond);
    for (auto& blk : frozen.blocks) {
        h = tape.conv2d(h, tape.constant(blk.weight.value), tape.constant(blk.bias.value), 2, 1);
        if (blk.has_norm_act) {
            h = tape.batch_norm(h, tape.constant(blk.gamma.value), tape.constant(blk.beta.value),
                                blk.bn, true, false);
            h = tape.relu(h);
        }
    }
    h = tape.conv2d(h, tape.constant(frozen.final_w.value), tape.constant(frozen.final_b.value), 1, 1);
    auto probs = tape.sigmoid(tape.sample_mean(h));

    auto loss_g = tape.mse(probs, tape.constant(Tensor::full({n}, real(1))));
    auto lt = mean_of(tape, track_losses);
    auto total = tape.add(lt, tape.scale(loss_g, static_cast<real>(cfg.lambda)));
    tape.backward(total);
    sgd_step(joined(gen.params(), head.params()), static_cast<real>(lr),
             static_cast<real>(cfg.momentum), static_cast<real>(cfg.weight_decay));

    LossBreakdown out;
    out.loss_track = tape.scalar(lt);
    out.loss_gen = tape.scalar(loss_g);
    out.total = tape.scalar(total);
    return out;
}

LossBreakdown step_cgan(DenoiserParams& gen, DiscriminatorParams& disc, TrackHead& head,
                        const std::vector<Scenario>& batch, const TrainConfig& cfg, double lr,
                        Rng& rng) {
    CganDiscLosses d = cgan_disc_phase(gen, disc, batch, cfg, lr, rng);
    LossBreakdown out = cgan_gen_phase(gen, disc, head, batch, cfg, lr, rng);
    out.loss_d0 = d.loss_d0;
    out.loss_d1 = d.loss_d1;
    return out;
}

LossBreakdown step_base(TypicalFusion& typical, TrackHead& head, const std::vector<Scenario>& batch,
                        const TrainConfig& cfg, double lr, Rng&) {
    Tape tape;
    std::vector<Tape::NodeId> track_losses;
    for (const Scenario& s : batch) {
        auto fused = typical_fuse(tape, typical, tape.constant(s.f_rgb), tape.constant(s.f_tir));
        track_losses.push_back(track_loss(tape, head, fused, s.bbox));
    }
    auto lt = mean_of(tape, track_losses);
    tape.backward(lt);
    sgd_step(joined(typical.params(), head.params()), static_cast<real>(lr),
             static_cast<real>(cfg.momentum), static_cast<real>(cfg.weight_decay));

    LossBreakdown out;
    out.loss_track = tape.scalar(lt);
    out.total = out.loss_track;
    return out;
}

namespace {

std::vector<std::pair<std::string, Tensor*>> model_tensors(TrainedModels& m) {
    std::vector<std::pair<std::string, Tensor*>> out;
    auto append = [&out](std::vector<std::pair<std::string, Tensor*>> v) {
        out.insert(out.end(), v.begin(), v.end());
    };
    if (m.method != Method::Base) append(m.net.named_tensors());
    if (m.method == Method::Cgan) append(m.disc.named_tensors());
    if (m.method == Method::Base) append(m.typical.named_tensors());
    append(m.head.named_tensors());
    return out;
}

}  // namespace

TrainedModels train(const TrainSetup& setup) {
    setup.tcfg.validate();
    setup.dcfg.validate();
    if (setup.method == Method::Cgan && setup.tcfg.batch_size < 2)
        throw ConfigError("train: CGAN needs batch_size >= 2");
    if (setup.geo.channels != setup.dcfg.feature_channels || setup.geo.height != setup.dcfg.height ||
        setup.geo.width != setup.dcfg.width)
        throw ConfigError("train: scenario geometry and denoiser config disagree");

    Rng master(setup.tcfg.seed);
    Rng init_rng = master.split(1);
    Rng step_rng = master.split(2);
    ScenarioStream stream(setup.geo, master.split(3));

    TrainedModels m;
    m.method = setup.method;
    m.net = build_denoiser(setup.dcfg, init_rng);
    m.head = build_track_head(setup.dcfg.feature_channels, setup.head_hidden_channels, init_rng);
    m.typical = build_typical_fusion(setup.dcfg.feature_channels, init_rng);
    if (setup.method == Method::Cgan)
        m.disc = build_discriminator(setup.dcfg.feature_channels, setup.disc_base_channels,
                                     setup.dcfg.height, setup.dcfg.width, init_rng);

    const TrainConfig& cfg = setup.tcfg;
    std::vector<Tensor> snapshot;
    auto take_snapshot = [&] {
        snapshot.clear();
        for (auto& [name, t] : model_tensors(m)) snapshot.push_back(*t);
    };
    auto restore_snapshot = [&] {
        std::size_t i = 0;
        for (auto& [name, t] : model_tensors(m)) *t = snapshot[i++];
    };
    take_snapshot();

    int step = 0;
    for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
        const double lr = lr_at(epoch, cfg);
        try {
            for (int k = 0; k < cfg.steps_per_epoch; ++k) {
                std::vector<Scenario> batch;
                batch.reserve(cfg.batch_size);
                for (int b = 0; b < cfg.batch_size; ++b) batch.push_back(stream.next());

                LossBreakdown lb;
                switch (setup.method) {
                    case Method::Base: lb = step_base(m.typical, m.head, batch, cfg, lr, step_rng); break;
                    case Method::Raw: lb = step_raw(m.net, m.head, batch, cfg, lr, step_rng); break;
                    case Method::Cgan:
                        lb = step_cgan(m.net, m.disc, m.head, batch, cfg, lr, step_rng);
                        break;
                    case Method::Dm:
                        lb = step_dm(m.net, m.head, batch, setup.sched, cfg, lr, step_rng);
                        break;
                }
                if (!std::isfinite(lb.total)) throw NumericError("train: non-finite loss");
                lb.step = ++step;
                lb.epoch = epoch;
                lb.lr = lr;
                m.log.push_back(lb);
            }
        } catch (const NumericError& err) {
            restore_snapshot();
            m.aborted = true;
            m.abort_message = err.what();
            return m;
        }
        take_snapshot();
    }
    return m;
}

}  // namespace gmmt
