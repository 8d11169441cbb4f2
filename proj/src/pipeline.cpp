#include "gmmt/pipeline.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>

namespace gmmt {

static_assert(std::endian::native == std::endian::little, "binary formats assume little-endian");

const char* challenge_name(Challenge c) {
    switch (c) {
        case Challenge::Clean: return "CLEAN";
        case Challenge::RgbDegraded: return "RGB_DEGRADED";
        case Challenge::TirDegraded: return "TIR_DEGRADED";
        case Challenge::BothNoisy: return "BOTH_NOISY";
    }
    return "?";
}

const char* gen_mode_name(GenMode m) {
    switch (m) {
        case GenMode::Raw: return "RAW";
        case GenMode::Cgan: return "CGAN";
        case GenMode::Dm: return "DM";
    }
    return "?";
}

GenMode parse_gen_mode(const std::string& name) {
    if (name == "raw" || name == "RAW") return GenMode::Raw;
    if (name == "cgan" || name == "CGAN") return GenMode::Cgan;
    if (name == "dm" || name == "DM") return GenMode::Dm;
    throw ConfigError("unknown mode '" + name + "' (expected raw|cgan|dm)");
}

namespace {

void add_bump(Tensor& map, double cx, double cy, double sx, double sy,
              const std::vector<double>& channel_amps) {
    const int c = map.shape[0], h = map.shape[1], w = map.shape[2];
    for (int ci = 0; ci < c; ++ci) {
        for (int y = 0; y < h; ++y) {
            for (int x = 0; x < w; ++x) {
                const double dx = x - cx, dy = y - cy;
                const double g = std::exp(-(dx * dx / (2 * sx * sx) + dy * dy / (2 * sy * sy)));
                map.at3(ci, y, x) += static_cast<real>(channel_amps[ci] * g);
            }
        }
    }
}

void add_noise(Tensor& map, double sigma, Rng& rng) {
    for (real& v : map.data) v += static_cast<real>(sigma * rng.normal());
}

}  // namespace

Scenario synth_scenario(Rng& rng, Challenge challenge, const ScenarioConfig& geo) {
    const int c = geo.channels, h = geo.height, w = geo.width;
    Scenario s;
    s.challenge = challenge;
    s.f_rgb = Tensor::zeros({c, h, w});
    s.f_tir = Tensor::zeros({c, h, w});

    // target box, kept a margin away from the border
    const int max_side = std::max(2, std::min(6, std::min(h, w) / 3 + 1));
    const int bw = static_cast<int>(rng.uniform_int(2, max_side));
    const int bh = static_cast<int>(rng.uniform_int(2, max_side));
    const int xlo = std::min(w - 2, 1 + bw / 2), xhi = std::max(xlo, w - 2 - bw / 2);
    const int ylo = std::min(h - 2, 1 + bh / 2), yhi = std::max(ylo, h - 2 - bh / 2);
    s.bbox.cx = static_cast<double>(rng.uniform_int(xlo, xhi));
    s.bbox.cy = static_cast<double>(rng.uniform_int(ylo, yhi));
    s.bbox.w = bw;
    s.bbox.h = bh;

    // Target amplitudes stay clear of the distractor range so the task is
    // solvable from the fused map alone.
    std::vector<double> amps(c);
    for (double& a : amps) a = rng.uniform(0.8, 1.4);
    double gain_rgb = rng.uniform(0.8, 1.3);
    double gain_tir = rng.uniform(0.8, 1.3);
    if (challenge == Challenge::RgbDegraded) gain_rgb *= geo.degraded_target_gain;
    if (challenge == Challenge::TirDegraded) gain_tir *= geo.degraded_target_gain;

    const double sx = std::max(1.0, s.bbox.w / 2.0), sy = std::max(1.0, s.bbox.h / 2.0);
    std::vector<double> amps_m(c);
    for (int i = 0; i < c; ++i) amps_m[i] = amps[i] * gain_rgb;
    add_bump(s.f_rgb, s.bbox.cx, s.bbox.cy, sx, sy, amps_m);
    for (int i = 0; i < c; ++i) amps_m[i] = amps[i] * gain_tir;
    add_bump(s.f_tir, s.bbox.cx, s.bbox.cy, sx, sy, amps_m);

    // modality-specific distractors, planted clear of the target; a site that
    // cannot be found on a crowded grid is skipped
    const double keep_out = geo.min_distractor_distance + std::max(bw, bh) / 2;
    for (Tensor* map : {&s.f_rgb, &s.f_tir}) {
        for (int k = 0; k < geo.distractors_per_modality; ++k) {
            double dx = 0, dy = 0;
            bool found = false;
            for (int attempt = 0; attempt < 64 && !found; ++attempt) {
                dx = static_cast<double>(rng.uniform_int(0, w - 1));
                dy = static_cast<double>(rng.uniform_int(0, h - 1));
                found = std::max(std::abs(dx - s.bbox.cx), std::abs(dy - s.bbox.cy)) >= keep_out;
            }
            if (!found) continue;
            const double sig = rng.uniform(0.6, 1.0);
            std::vector<double> damps(c);
            for (double& a : damps) a = rng.uniform(0.2, 0.45);
            add_bump(*map, dx, dy, sig, sig, damps);
        }
    }

    add_noise(s.f_rgb, geo.base_noise_sigma, rng);
    add_noise(s.f_tir, geo.base_noise_sigma, rng);
    if (challenge == Challenge::BothNoisy) {
        add_noise(s.f_rgb, geo.heavy_noise_sigma, rng);
        add_noise(s.f_tir, geo.heavy_noise_sigma, rng);
    }

    s.fused_oracle = oracle_fuse(s.f_rgb, s.f_tir);
    return s;
}

Tensor oracle_fuse(const Tensor& f_rgb, const Tensor& f_tir, double eps) {
    if (!f_rgb.same_shape(f_tir) || f_rgb.rank() != 3)
        throw ShapeError("oracle_fuse: inputs must be matching [C,H,W] maps");
    const int c = f_rgb.shape[0], h = f_rgb.shape[1], w = f_rgb.shape[2];
    auto local_energy = [&](const Tensor& m, int y, int x) {
        double e = 0;
        for (int ci = 0; ci < c; ++ci)
            for (int dy = -1; dy <= 1; ++dy)
                for (int dx = -1; dx <= 1; ++dx) {
                    const int yy = y + dy, xx = x + dx;
                    if (yy < 0 || yy >= h || xx < 0 || xx >= w) continue;
                    const double v = m.at3(ci, yy, xx);
                    e += v * v;
                }
        return e;
    };
    Tensor fused = Tensor::zeros(f_rgb.shape);
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            const double er = local_energy(f_rgb, y, x);
            const double et = local_energy(f_tir, y, x);
            const double weight = er / (er + et + eps);
            // b + w*(a-b) rather than w*a + (1-w)*b: equal inputs fuse to
            // themselves bit-exactly
            for (int ci = 0; ci < c; ++ci)
                fused.at3(ci, y, x) = static_cast<real>(
                    f_tir.at3(ci, y, x) +
                    weight * (static_cast<double>(f_rgb.at3(ci, y, x)) - f_tir.at3(ci, y, x)));
        }
    }
    return fused;
}

std::vector<std::pair<std::string, Tensor*>> TypicalFusion::named_tensors() {
    return {{"t.fuse.w", &weight.value},
            {"t.fuse.w.m", &weight.momentum},
            {"t.fuse.b", &bias.value},
            {"t.fuse.b.m", &bias.momentum}};
}

TypicalFusion build_typical_fusion(int channels, Rng& rng) {
    if (channels < 1) throw ConfigError("typical_fusion: channels must be >= 1");
    TypicalFusion block;
    block.channels = channels;
    const double bound = std::sqrt(6.0 / (2.0 * channels * 9));
    Tensor w = Tensor::zeros({channels, 2 * channels, 3, 3});
    for (real& v : w.data) v = static_cast<real>(rng.uniform(-bound, bound));
    block.weight = Param(std::move(w));
    block.bias = Param(Tensor::zeros({channels}));
    return block;
}

Tape::NodeId typical_fuse(Tape& tape, TypicalFusion& block, Tape::NodeId f_rgb, Tape::NodeId f_tir) {
    auto cat = tape.channel_concat({f_rgb, f_tir});
    return tape.conv2d(cat, tape.param(block.weight), tape.param(block.bias), 1, 1);
}

Tensor typical_fuse_apply(TypicalFusion& block, const Tensor& f_rgb, const Tensor& f_tir) {
    Tape tape;
    return tape.value(typical_fuse(tape, block, tape.constant(f_rgb), tape.constant(f_tir)));
}

std::vector<std::pair<std::string, Tensor*>> TrackHead::named_tensors() {
    return {{"h.w1", &w1.value},     {"h.w1.m", &w1.momentum}, {"h.b1", &b1.value},
            {"h.b1.m", &b1.momentum}, {"h.w2", &w2.value},     {"h.w2.m", &w2.momentum},
            {"h.b2", &b2.value},      {"h.b2.m", &b2.momentum}};
}

TrackHead build_track_head(int in_channels, int hidden_channels, Rng& rng) {
    if (in_channels < 1 || hidden_channels < 1) throw ConfigError("track_head: bad channel counts");
    TrackHead head;
    head.in_channels = in_channels;
    head.hidden_channels = hidden_channels;
    auto init = [&rng](std::vector<int> shape, std::int64_t fan_in) {
        const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
        Tensor t = Tensor::zeros(std::move(shape));
        for (real& v : t.data) v = static_cast<real>(rng.uniform(-bound, bound));
        return t;
    };
    head.w1 = Param(init({hidden_channels, in_channels, 3, 3}, static_cast<std::int64_t>(in_channels) * 9));
    head.b1 = Param(Tensor::zeros({hidden_channels}));
    head.w2 = Param(init({3, hidden_channels, 3, 3}, static_cast<std::int64_t>(hidden_channels) * 9));
    head.b2 = Param(Tensor::zeros({3}));
    return head;
}

HeadMaps track_head_forward(Tape& tape, TrackHead& head, Tape::NodeId fused) {
    // parameter-free per-channel standardization: the head sees unit-scale
    // features no matter how hot the generated map is, which keeps the
    // tracking loss finite from the first optimizer step
    const int c = tape.value(fused).shape[0];
    auto ones = tape.constant(Tensor::full({c}, real(1)));
    auto zeros = tape.constant(Tensor::zeros({c}));
    auto x = tape.channel_norm(fused, ones, zeros);
    auto h = tape.conv2d(x, tape.param(head.w1), tape.param(head.b1), 1, 1);
    h = tape.relu(h);
    auto maps = tape.conv2d(h, tape.param(head.w2), tape.param(head.b2), 1, 1);
    const Tensor& m = tape.value(maps);
    const std::int64_t plane = static_cast<std::int64_t>(m.shape[1]) * m.shape[2];
    std::vector<std::int64_t> resp_idx(plane), size_idx(2 * plane);
    for (std::int64_t i = 0; i < plane; ++i) resp_idx[i] = i;
    for (std::int64_t i = 0; i < 2 * plane; ++i) size_idx[i] = plane + i;
    HeadMaps out;
    out.response = tape.gather(maps, resp_idx);  // flattened [H*W]
    out.size = tape.gather(maps, size_idx);      // flattened [2*H*W]
    return out;
}

namespace {

// argmax with the documented smallest-row-major-index tie-break
std::pair<int, int> response_argmax(const std::vector<real>& resp, int h, int w) {
    int best = 0;
    for (int i = 1; i < h * w; ++i)
        if (resp[i] > resp[best]) best = i;
    return {best / w, best % w};  // (row, col)
}

}  // namespace

Prediction track_head_predict(TrackHead& head, const Tensor& fused) {
    Tape tape;
    auto maps = track_head_forward(tape, head, tape.constant(fused));
    const int h = fused.shape[1], w = fused.shape[2];
    const std::vector<real>& resp = tape.value(maps.response).data;
    auto [row, col] = response_argmax(resp, h, w);

    Prediction p;
    p.response_map = Tensor::zeros({1, h, w});
    std::copy(resp.begin(), resp.end(), p.response_map.data.begin());
    const std::vector<real>& size = tape.value(maps.size).data;
    p.bbox.cx = col;
    p.bbox.cy = row;
    // size channels carry grid-normalized extents; scale back to cells
    p.bbox.w = std::max(real(0), size[static_cast<std::size_t>(row) * w + col]) * w;
    p.bbox.h = std::max(real(0), size[static_cast<std::size_t>(h) * w + row * w + col]) * h;
    return p;
}

Tensor render_response_target(const BBox& box, int height, int width) {
    Tensor target = Tensor::zeros({1, height, width});
    const double sx = std::max(1.0, box.w / 2.0), sy = std::max(1.0, box.h / 2.0);
    for (int y = 0; y < height; ++y)
        for (int x = 0; x < width; ++x) {
            const double dx = x - box.cx, dy = y - box.cy;
            target.at3(0, y, x) = static_cast<real>(
                std::exp(-(dx * dx / (2 * sx * sx) + dy * dy / (2 * sy * sy))));
        }
    return target;
}

Tape::NodeId track_loss(Tape& tape, TrackHead& head, Tape::NodeId fused, const BBox& truth) {
    const Tensor& f = tape.value(fused);
    const int h = f.shape[1], w = f.shape[2];
    HeadMaps maps = track_head_forward(tape, head, fused);

    Tensor target = render_response_target(truth, h, w);
    target.shape = {h * w};  // gather() flattened the response
    auto resp_loss = tape.mse(maps.response, tape.constant(target));

    const int cy = std::clamp(static_cast<int>(std::llround(truth.cy)), 0, h - 1);
    const int cx = std::clamp(static_cast<int>(std::llround(truth.cx)), 0, w - 1);
    const std::int64_t plane = static_cast<std::int64_t>(h) * w;
    auto size_at_truth = tape.gather(maps.size, {static_cast<std::int64_t>(cy) * w + cx,
                                                 plane + static_cast<std::int64_t>(cy) * w + cx});
    auto size_loss = tape.mse(size_at_truth,
                              tape.constant(Tensor({2}, {static_cast<real>(truth.w / w),
                                                         static_cast<real>(truth.h / h)})));
    return tape.add(resp_loss, size_loss);
}

Tensor gmmt_infer(DenoiserParams& net, const Tensor& f_rgb, const Tensor& f_tir,
                  const StepPlan& plan, GenMode mode, const NoiseSchedule& sched, double eta,
                  Rng& rng, InferStats* stats) {
    for (Param* p : net.params())
        if (!p->value.all_finite()) throw NumericError("gmmt_infer: non-finite parameters");
    Tensor z = Tensor::randn(f_rgb.shape, rng);
    if (mode != GenMode::Dm) {
        if (stats) {
            stats->denoiser_calls = 1;
            stats->timesteps = {0};
        }
        return denoiser_apply(net, z, f_rgb, f_tir, 0);
    }
    if (plan.steps() < 1) throw ConfigError("gmmt_infer: empty step plan");
    if (stats) {
        stats->denoiser_calls = 0;
        stats->timesteps.clear();
    }
    for (int i = 0; i < plan.steps(); ++i) {
        const int t = plan.timesteps[i];
        const int t_prev = i + 1 < plan.steps() ? plan.timesteps[i + 1] : 0;
        Tensor eps = denoiser_apply(net, z, f_rgb, f_tir, t);
        if (stats) {
            ++stats->denoiser_calls;
            stats->timesteps.push_back(t);
        }
        z = ddim_step(z, eps, t, t_prev, eta, sched, rng);
    }
    return z;
}

Prediction predict(PipelineModel& model, const Scenario& scenario, const StepPlan& plan,
                   const NoiseSchedule& sched, double eta, Rng& rng) {
    Tensor fused;
    if (model.route == FusionRoute::Typical) {
        fused = typical_fuse_apply(model.typical, scenario.f_rgb, scenario.f_tir);
    } else {
        fused = gmmt_infer(model.net, scenario.f_rgb, scenario.f_tir, plan, model.mode, sched, eta, rng);
    }
    return track_head_predict(model.head, fused);
}

namespace {

void write_u32(std::ofstream& f, std::uint32_t v) { f.write(reinterpret_cast<const char*>(&v), 4); }

std::uint32_t read_u32(std::ifstream& f) {
    std::uint32_t v = 0;
    f.read(reinterpret_cast<char*>(&v), 4);
    return v;
}

void write_f64s(std::ofstream& f, const std::vector<real>& data) {
    for (real v : data) {
        const double d = static_cast<double>(v);
        f.write(reinterpret_cast<const char*>(&d), 8);
    }
}

void read_f64s(std::ifstream& f, std::vector<real>& data) {
    for (real& v : data) {
        double d = 0;
        f.read(reinterpret_cast<char*>(&d), 8);
        v = static_cast<real>(d);
    }
}

constexpr char kMagic[4] = {'G', 'M', 'M', 'T'};
constexpr std::uint32_t kVersion = 1;

void write_header(std::ofstream& f, int c, int h, int w) {
    f.write(kMagic, 4);
    write_u32(f, kVersion);
    write_u32(f, static_cast<std::uint32_t>(c));
    write_u32(f, static_cast<std::uint32_t>(h));
    write_u32(f, static_cast<std::uint32_t>(w));
}

std::vector<int> read_header(std::ifstream& f, const std::string& path) {
    char magic[4];
    f.read(magic, 4);
    if (!f || std::memcmp(magic, kMagic, 4) != 0)
        throw DataError(path + ": not a GMMT scenario/feature file");
    const std::uint32_t version = read_u32(f);
    if (version != kVersion) throw DataError(path + ": unsupported version");
    const int c = static_cast<int>(read_u32(f));
    const int h = static_cast<int>(read_u32(f));
    const int w = static_cast<int>(read_u32(f));
    if (!f || c < 1 || h < 1 || w < 1) throw DataError(path + ": corrupt header");
    return {c, h, w};
}

}  // namespace

void write_scenario(const std::string& path, const Scenario& s) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw DataError("cannot write " + path);
    write_header(f, s.f_rgb.shape[0], s.f_rgb.shape[1], s.f_rgb.shape[2]);
    write_f64s(f, s.f_rgb.data);
    write_f64s(f, s.f_tir.data);
    write_f64s(f, s.fused_oracle.data);
    for (double v : {s.bbox.cx, s.bbox.cy, s.bbox.w, s.bbox.h})
        f.write(reinterpret_cast<const char*>(&v), 8);
    const std::uint8_t tag = static_cast<std::uint8_t>(s.challenge);
    f.write(reinterpret_cast<const char*>(&tag), 1);
    if (!f) throw DataError("short write to " + path);
}

Scenario read_scenario(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw DataError("cannot read " + path);
    const std::vector<int> chw = read_header(f, path);
    Scenario s;
    s.f_rgb = Tensor::zeros(chw);
    s.f_tir = Tensor::zeros(chw);
    s.fused_oracle = Tensor::zeros(chw);
    read_f64s(f, s.f_rgb.data);
    read_f64s(f, s.f_tir.data);
    read_f64s(f, s.fused_oracle.data);
    for (double* v : {&s.bbox.cx, &s.bbox.cy, &s.bbox.w, &s.bbox.h})
        f.read(reinterpret_cast<char*>(v), 8);
    std::uint8_t tag = 0;
    f.read(reinterpret_cast<char*>(&tag), 1);
    if (!f || tag > 3) throw DataError(path + ": truncated or corrupt scenario");
    s.challenge = static_cast<Challenge>(tag);
    return s;
}

void write_feature_map(const std::string& path, const Tensor& map) {
    if (map.rank() != 3) throw ShapeError("write_feature_map: need [C,H,W]");
    std::ofstream f(path, std::ios::binary);
    if (!f) throw DataError("cannot write " + path);
    write_header(f, map.shape[0], map.shape[1], map.shape[2]);
    write_f64s(f, map.data);
    if (!f) throw DataError("short write to " + path);
}

Tensor read_feature_map(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw DataError("cannot read " + path);
    const std::vector<int> chw = read_header(f, path);
    Tensor map = Tensor::zeros(chw);
    read_f64s(f, map.data);
    if (!f) throw DataError(path + ": truncated feature map");
    return map;
}

}  // namespace gmmt
