#include "gmmt/denoiser.hpp"

#include <stdexcept>
#include <cmath>

namespace gmmt {

namespace {

Tensor uniform_init(std::vector<int> shape, std::int64_t fan_in, Rng& rng) {
    const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
    Tensor t = Tensor::zeros(std::move(shape));
    for (real& v : t.data) v = static_cast<real>(rng.uniform(-bound, bound));
    return t;
}

ConvBlockParams make_block(int cin, int cout, Rng& rng) {
    ConvBlockParams b;
    b.weight = Param(uniform_init({cout, cin, 3, 3}, static_cast<std::int64_t>(cin) * 9, rng));
    b.bias = Param(Tensor::zeros({cout}));
    b.gamma = Param(Tensor::full({cout}, real(1)));
    b.beta = Param(Tensor::zeros({cout}));
    return b;
}

}  // namespace

void DenoiserConfig::validate() const {
    if (blocks < 1) throw ConfigError("denoiser: blocks must be >= 1");
    if (base_channels < 1 || feature_channels < 1 || height < 1 || width < 1)
        throw ConfigError("denoiser: all extents must be >= 1");
    if (time_embed_dim < 2 || time_embed_dim % 2 != 0)
        throw ConfigError("denoiser: time_embed_dim must be even and >= 2");
    if (height + 2 < 3 || width + 2 < 3) throw ConfigError("denoiser: spatial extent too small");
}

std::int64_t DenoiserConfig::param_count() const {
    const std::int64_t b = base_channels, c = feature_channels, e = time_embed_dim, n = blocks;
    std::int64_t total = e * e + e;                    // time projection
    total += b * (3 * c + e) * 9 + b;                  // input projection
    total += n * (b * b * 9 + b + 2 * b);              // encoder blocks
    total += n * (b * 2 * b * 9 + b + 2 * b);          // decoder blocks
    total += c * b * 9 + c;                            // output projection
    return total;
}

std::vector<Param*> DenoiserParams::params() {
    std::vector<Param*> out{&time_proj_w, &time_proj_b, &in_proj_w, &in_proj_b};
    for (auto& blk : encoder) {
        out.push_back(&blk.weight);
        out.push_back(&blk.bias);
        out.push_back(&blk.gamma);
        out.push_back(&blk.beta);
    }
    for (auto& blk : decoder) {
        out.push_back(&blk.weight);
        out.push_back(&blk.bias);
        out.push_back(&blk.gamma);
        out.push_back(&blk.beta);
    }
    out.push_back(&out_proj_w);
    out.push_back(&out_proj_b);
    return out;
}

std::int64_t DenoiserParams::param_count() {
    std::int64_t n = 0;
    for (Param* p : params()) n += p->value.numel();
    return n;
}

std::vector<std::pair<std::string, Tensor*>> DenoiserParams::named_tensors() {
    std::vector<std::pair<std::string, Tensor*>> out;
    auto put = [&out](const std::string& name, Param& p) {
        out.emplace_back(name, &p.value);
        out.emplace_back(name + ".m", &p.momentum);
    };
    put("u.time_proj.w", time_proj_w);
    put("u.time_proj.b", time_proj_b);
    put("u.in_proj.w", in_proj_w);
    put("u.in_proj.b", in_proj_b);
    for (std::size_t i = 0; i < encoder.size(); ++i) {
        const std::string base = "u.enc" + std::to_string(i);
        put(base + ".w", encoder[i].weight);
        put(base + ".b", encoder[i].bias);
        put(base + ".g", encoder[i].gamma);
        put(base + ".s", encoder[i].beta);
    }
    for (std::size_t i = 0; i < decoder.size(); ++i) {
        const std::string base = "u.dec" + std::to_string(i);
        put(base + ".w", decoder[i].weight);
        put(base + ".b", decoder[i].bias);
        put(base + ".g", decoder[i].gamma);
        put(base + ".s", decoder[i].beta);
    }
    put("u.out_proj.w", out_proj_w);
    put("u.out_proj.b", out_proj_b);
    return out;
}

std::vector<Param*> DiscriminatorParams::params() {
    std::vector<Param*> out;
    for (auto& blk : blocks) {
        out.push_back(&blk.weight);
        out.push_back(&blk.bias);
        if (blk.has_norm_act) {
            out.push_back(&blk.gamma);
            out.push_back(&blk.beta);
        }
    }
    out.push_back(&final_w);
    out.push_back(&final_b);
    return out;
}

std::vector<std::pair<std::string, Tensor*>> DiscriminatorParams::named_tensors() {
    std::vector<std::pair<std::string, Tensor*>> out;
    auto put = [&out](const std::string& name, Param& p) {
        out.emplace_back(name, &p.value);
        out.emplace_back(name + ".m", &p.momentum);
    };
    for (std::size_t i = 0; i < blocks.size(); ++i) {
        const std::string base = "d.blk" + std::to_string(i);
        put(base + ".w", blocks[i].weight);
        put(base + ".b", blocks[i].bias);
        if (blocks[i].has_norm_act) {
            put(base + ".g", blocks[i].gamma);
            put(base + ".s", blocks[i].beta);
            out.emplace_back(base + ".bn.mean", &blocks[i].bn.running_mean);
            out.emplace_back(base + ".bn.var", &blocks[i].bn.running_var);
        }
    }
    put("d.final.w", final_w);
    put("d.final.b", final_b);
    return out;
}

Tensor sinusoid_embedding(int t, int dim) {
    if (dim < 2 || dim % 2 != 0) throw ConfigError("sinusoid_embedding: dim must be even and >= 2");
    Tensor out = Tensor::zeros({dim});
    for (int k = 0; 2 * k < dim; ++k) {
        const double angle = t / std::pow(10000.0, 2.0 * k / dim);
        out.data[2 * k] = static_cast<real>(std::sin(angle));
        out.data[2 * k + 1] = static_cast<real>(std::cos(angle));
    }
    return out;
}

DenoiserParams build_denoiser(const DenoiserConfig& config, Rng& rng) {
    config.validate();
    const int b = config.base_channels, c = config.feature_channels, e = config.time_embed_dim;
    DenoiserParams net;
    net.config = config;
    net.time_proj_w = Param(uniform_init({e, e}, e, rng));
    net.time_proj_b = Param(Tensor::zeros({e}));
    net.in_proj_w = Param(uniform_init({b, 3 * c + e, 3, 3}, static_cast<std::int64_t>(3 * c + e) * 9, rng));
    net.in_proj_b = Param(Tensor::zeros({b}));
    for (int i = 0; i < config.blocks; ++i) net.encoder.push_back(make_block(b, b, rng));
    for (int i = 0; i < config.blocks; ++i) net.decoder.push_back(make_block(2 * b, b, rng));
    // zero output projection: an untrained net predicts zero noise
    net.out_proj_w = Param(Tensor::zeros({c, b, 3, 3}));
    net.out_proj_b = Param(Tensor::zeros({c}));
    if (net.param_count() != config.param_count())
        throw std::logic_error("build_denoiser: parameter count diverged from the closed form");
    return net;
}

DiscriminatorParams build_discriminator(int feature_channels, int base_channels, int height,
                                        int width, Rng& rng) {
    if (height < 16 || width < 16)
        throw ConfigError("discriminator: spatial extent < 16 cannot feed four stride-2 stages");
    if (feature_channels < 1 || base_channels < 1)
        throw ConfigError("discriminator: channel counts must be >= 1");
    DiscriminatorParams net;
    net.feature_channels = feature_channels;
    net.base_channels = base_channels;
    net.height = height;
    net.width = width;
    for (int i = 0; i < 4; ++i) {
        const int cin = i == 0 ? 3 * feature_channels : base_channels;
        DiscriminatorParams::Block blk;
        blk.weight = Param(uniform_init({base_channels, cin, 3, 3}, static_cast<std::int64_t>(cin) * 9, rng));
        blk.bias = Param(Tensor::zeros({base_channels}));
        blk.has_norm_act = i < 3;  // no normalization or activation in the last block
        if (blk.has_norm_act) {
            blk.gamma = Param(Tensor::full({base_channels}, real(1)));
            blk.beta = Param(Tensor::zeros({base_channels}));
            blk.bn = BatchNormState(base_channels);
        }
        net.blocks.push_back(std::move(blk));
    }
    net.final_w = Param(Tensor::zeros({1, base_channels, 3, 3}));
    net.final_b = Param(Tensor::zeros({1}));
    return net;
}

Tape::NodeId denoiser_forward(Tape& tape, DenoiserParams& net, Tape::NodeId x_t, Tape::NodeId f_rgb,
                              Tape::NodeId f_tir, int t) {
    const DenoiserConfig& cfg = net.config;
    const std::vector<int> want{cfg.feature_channels, cfg.height, cfg.width};
    for (Tape::NodeId id : {x_t, f_rgb, f_tir})
        if (tape.value(id).shape != want) throw ShapeError("denoiser_forward: feature map shape mismatch");
    if (t < 0) throw ConfigError("denoiser_forward: t must be >= 0");

    auto time_code = tape.constant(sinusoid_embedding(t, cfg.time_embed_dim));
    auto time_vec = tape.linear(time_code, tape.param(net.time_proj_w), tape.param(net.time_proj_b));
    auto f_t = tape.broadcast_hw(time_vec, cfg.height, cfg.width);

    auto h = tape.channel_concat({x_t, f_rgb, f_tir, f_t});
    h = tape.conv2d(h, tape.param(net.in_proj_w), tape.param(net.in_proj_b), 1, 1);

    std::vector<Tape::NodeId> enc_out;  // enc_out[k] = output of encoder block k+1
    for (auto& blk : net.encoder) {
        h = tape.conv2d(h, tape.param(blk.weight), tape.param(blk.bias), 1, 1);
        h = tape.channel_norm(h, tape.param(blk.gamma), tape.param(blk.beta));
        h = tape.relu(h);
        enc_out.push_back(h);
    }
    // decoder block i consumes (previous output, skip from encoder block n-i+1)
    const int n = cfg.blocks;
    for (int i = 1; i <= n; ++i) {
        auto& blk = net.decoder[i - 1];
        auto skip = enc_out[n - i];
        h = tape.channel_concat({h, skip});
        h = tape.conv2d(h, tape.param(blk.weight), tape.param(blk.bias), 1, 1);
        h = tape.channel_norm(h, tape.param(blk.gamma), tape.param(blk.beta));
        h = tape.relu(h);
    }
    return tape.conv2d(h, tape.param(net.out_proj_w), tape.param(net.out_proj_b), 1, 1);
}

Tensor denoiser_apply(DenoiserParams& net, const Tensor& x_t, const Tensor& f_rgb,
                      const Tensor& f_tir, int t) {
    Tape tape;
    auto out = denoiser_forward(tape, net, tape.constant(x_t), tape.constant(f_rgb),
                                tape.constant(f_tir), t);
    return tape.value(out);
}

Tape::NodeId discriminator_forward(Tape& tape, DiscriminatorParams& net, Tape::NodeId cond_batch,
                                   bool training, bool update_running) {
    const Tensor& in = tape.value(cond_batch);
    if (in.rank() != 4 || in.shape[1] != 3 * net.feature_channels ||
        in.shape[2] != net.height || in.shape[3] != net.width)
        throw ShapeError("discriminator_forward: expected [N,3C,H,W] conditioned batch");
    auto h = cond_batch;
    for (auto& blk : net.blocks) {
        h = tape.conv2d(h, tape.param(blk.weight), tape.param(blk.bias), 2, 1);
        if (blk.has_norm_act) {
            h = tape.batch_norm(h, tape.param(blk.gamma), tape.param(blk.beta), blk.bn, training,
                                update_running);
            h = tape.relu(h);
        }
    }
    h = tape.conv2d(h, tape.param(net.final_w), tape.param(net.final_b), 1, 1);
    return tape.sigmoid(tape.sample_mean(h));
}

real discriminator_apply(DiscriminatorParams& net, const Tensor& x, const Tensor& f_rgb,
                         const Tensor& f_tir) {
    Tape tape;
    auto sample = tape.channel_concat({tape.constant(x), tape.constant(f_rgb), tape.constant(f_tir)});
    auto batch = tape.stack({sample});
    auto prob = discriminator_forward(tape, net, batch, false);
    return tape.value(prob).data[0];
}

}  // namespace gmmt
