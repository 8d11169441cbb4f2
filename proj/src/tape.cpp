#include "gmmt/tape.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace gmmt {

namespace {

// Shared conv geometry. Kernel is fixed at 3x3 across the whole engine.
constexpr int kK = 3;

int conv_extent(int in, int stride, int pad) { return (in + 2 * pad - kK) / stride + 1; }

struct ConvDims {
    int cin, h, w, cout, ho, wo, stride, pad;
};

// Valid output range so the input index ow*stride + k - pad stays in [0, n).
inline void valid_range(int n_out, int n_in, int stride, int k, int pad, int& lo, int& hi) {
    lo = 0;
    while (lo < n_out && lo * stride + k - pad < 0) ++lo;
    hi = n_out - 1;
    while (hi >= 0 && hi * stride + k - pad >= n_in) --hi;
}

// Fused 9-tap accumulation of one input plane into one output plane for the
// stride-1 pad-1 case (the denoiser/head/fusion hot path). Interior columns
// run branch-free; the two border columns are handled separately.
void conv3x3_s1p1_accum_plane(const real* __restrict xplane, const real* __restrict wk,
                              real* __restrict oplane, int h, int w) {
    for (int oh = 0; oh < h; ++oh) {
        real* __restrict orow = oplane + static_cast<std::size_t>(oh) * w;
        for (int kh = 0; kh < kK; ++kh) {
            const int ih = oh + kh - 1;
            if (ih < 0 || ih >= h) continue;
            const real* __restrict xrow = xplane + static_cast<std::size_t>(ih) * w;
            const real w0 = wk[kh * kK], w1 = wk[kh * kK + 1], w2 = wk[kh * kK + 2];
            orow[0] += w1 * xrow[0] + w2 * xrow[1];
            for (int ow = 1; ow < w - 1; ++ow)
                orow[ow] += w0 * xrow[ow - 1] + w1 * xrow[ow] + w2 * xrow[ow + 1];
            orow[w - 1] += w0 * xrow[w - 2] + w1 * xrow[w - 1];
        }
    }
}

// Weight gradient of the same case: nine fused dot products per plane pair.
void conv3x3_s1p1_wgrad_plane(const real* __restrict xplane, const real* __restrict goplane,
                              real* __restrict gwk, int h, int w) {
    for (int kh = 0; kh < kK; ++kh) {
        real a0 = 0, a1 = 0, a2 = 0;
        for (int oh = 0; oh < h; ++oh) {
            const int ih = oh + kh - 1;
            if (ih < 0 || ih >= h) continue;
            const real* __restrict xr = xplane + static_cast<std::size_t>(ih) * w;
            const real* __restrict g = goplane + static_cast<std::size_t>(oh) * w;
            for (int ow = 1; ow < w; ++ow) a0 += xr[ow - 1] * g[ow];
            for (int ow = 0; ow < w; ++ow) a1 += xr[ow] * g[ow];
            for (int ow = 0; ow < w - 1; ++ow) a2 += xr[ow + 1] * g[ow];
        }
        gwk[kh * kK] += a0;
        gwk[kh * kK + 1] += a1;
        gwk[kh * kK + 2] += a2;
    }
}

bool fast_path(const ConvDims& d) { return d.stride == 1 && d.pad == 1 && d.w >= 3 && d.h >= 3; }

// One-sample cross-correlation: out[co,oh,ow] = b[co] + sum x[ci,ih,iw]*w[...].
// Loop order keeps the innermost walk contiguous in both x and out.
void conv_forward_one(const real* __restrict x, const real* __restrict w, const real* __restrict b,
                      real* __restrict out, const ConvDims& d) {
    if (fast_path(d)) {
        for (int co = 0; co < d.cout; ++co) {
            real* oplane = out + static_cast<std::size_t>(co) * d.ho * d.wo;
            std::fill(oplane, oplane + static_cast<std::size_t>(d.ho) * d.wo, b[co]);
            for (int ci = 0; ci < d.cin; ++ci)
                conv3x3_s1p1_accum_plane(x + static_cast<std::size_t>(ci) * d.h * d.w,
                                         w + (static_cast<std::size_t>(co) * d.cin + ci) * kK * kK,
                                         oplane, d.h, d.w);
        }
        return;
    }
    for (int co = 0; co < d.cout; ++co) {
        real* oplane = out + static_cast<std::size_t>(co) * d.ho * d.wo;
        std::fill(oplane, oplane + static_cast<std::size_t>(d.ho) * d.wo, b[co]);
        for (int ci = 0; ci < d.cin; ++ci) {
            const real* xplane = x + static_cast<std::size_t>(ci) * d.h * d.w;
            const real* wk = w + (static_cast<std::size_t>(co) * d.cin + ci) * kK * kK;
            for (int kh = 0; kh < kK; ++kh) {
                for (int kw = 0; kw < kK; ++kw) {
                    const real wv = wk[kh * kK + kw];
                    if (wv == real(0)) continue;
                    int ow_lo, ow_hi;
                    valid_range(d.wo, d.w, d.stride, kw, d.pad, ow_lo, ow_hi);
                    for (int oh = 0; oh < d.ho; ++oh) {
                        const int ih = oh * d.stride + kh - d.pad;
                        if (ih < 0 || ih >= d.h) continue;
                        const real* __restrict xrow =
                            xplane + static_cast<std::size_t>(ih) * d.w + kw - d.pad;
                        real* __restrict orow = oplane + static_cast<std::size_t>(oh) * d.wo;
                        if (d.stride == 1) {
                            for (int ow = ow_lo; ow <= ow_hi; ++ow) orow[ow] += wv * xrow[ow];
                        } else {
                            for (int ow = ow_lo; ow <= ow_hi; ++ow)
                                orow[ow] += wv * xrow[ow * d.stride];
                        }
                    }
                }
            }
        }
    }
}

void conv_backward_one(const real* __restrict x, const real* __restrict w,
                       const real* __restrict gout, real* __restrict gx, real* __restrict gw,
                       real* __restrict gb, const ConvDims& d) {
    if (fast_path(d)) {
        for (int co = 0; co < d.cout; ++co) {
            const real* goplane = gout + static_cast<std::size_t>(co) * d.ho * d.wo;
            real acc_b = 0;
            for (int i = 0; i < d.ho * d.wo; ++i) acc_b += goplane[i];
            gb[co] += acc_b;
            for (int ci = 0; ci < d.cin; ++ci) {
                const real* wk = w + (static_cast<std::size_t>(co) * d.cin + ci) * kK * kK;
                conv3x3_s1p1_wgrad_plane(x + static_cast<std::size_t>(ci) * d.h * d.w, goplane,
                                         gw + (static_cast<std::size_t>(co) * d.cin + ci) * kK * kK,
                                         d.h, d.w);
                if (gx) {
                    // dx is the transposed conv: same fast kernel, flipped taps
                    real flipped[kK * kK];
                    for (int k = 0; k < kK * kK; ++k) flipped[k] = wk[kK * kK - 1 - k];
                    conv3x3_s1p1_accum_plane(goplane, flipped,
                                             gx + static_cast<std::size_t>(ci) * d.h * d.w, d.h, d.w);
                }
            }
        }
        return;
    }
    for (int co = 0; co < d.cout; ++co) {
        const real* goplane = gout + static_cast<std::size_t>(co) * d.ho * d.wo;
        real acc_b = 0;
        for (int i = 0; i < d.ho * d.wo; ++i) acc_b += goplane[i];
        gb[co] += acc_b;
        for (int ci = 0; ci < d.cin; ++ci) {
            const real* xplane = x + static_cast<std::size_t>(ci) * d.h * d.w;
            real* gxplane = gx ? gx + static_cast<std::size_t>(ci) * d.h * d.w : nullptr;
            const real* wk = w + (static_cast<std::size_t>(co) * d.cin + ci) * kK * kK;
            real* gwk = gw + (static_cast<std::size_t>(co) * d.cin + ci) * kK * kK;
            for (int kh = 0; kh < kK; ++kh) {
                for (int kw = 0; kw < kK; ++kw) {
                    const real wv = wk[kh * kK + kw];
                    real acc_w = 0;
                    int ow_lo, ow_hi;
                    valid_range(d.wo, d.w, d.stride, kw, d.pad, ow_lo, ow_hi);
                    for (int oh = 0; oh < d.ho; ++oh) {
                        const int ih = oh * d.stride + kh - d.pad;
                        if (ih < 0 || ih >= d.h) continue;
                        const real* __restrict xrow =
                            xplane + static_cast<std::size_t>(ih) * d.w + kw - d.pad;
                        const real* __restrict gorow = goplane + static_cast<std::size_t>(oh) * d.wo;
                        if (gxplane) {
                            real* __restrict gxrow =
                                gxplane + static_cast<std::size_t>(ih) * d.w + kw - d.pad;
                            if (d.stride == 1) {
                                for (int ow = ow_lo; ow <= ow_hi; ++ow) {
                                    const real g = gorow[ow];
                                    acc_w += xrow[ow] * g;
                                    gxrow[ow] += wv * g;
                                }
                            } else {
                                for (int ow = ow_lo; ow <= ow_hi; ++ow) {
                                    const real g = gorow[ow];
                                    acc_w += xrow[ow * d.stride] * g;
                                    gxrow[ow * d.stride] += wv * g;
                                }
                            }
                        } else {
                            if (d.stride == 1) {
                                for (int ow = ow_lo; ow <= ow_hi; ++ow) acc_w += xrow[ow] * gorow[ow];
                            } else {
                                for (int ow = ow_lo; ow <= ow_hi; ++ow)
                                    acc_w += xrow[ow * d.stride] * gorow[ow];
                            }
                        }
                    }
                    gwk[kh * kK + kw] += acc_w;
                }
            }
        }
    }
}

}  // namespace

Tape::NodeId Tape::push(Tensor v) {
    Node n;
    n.grad = Tensor::zeros(v.shape);
    n.value = std::move(v);
    nodes_.push_back(std::move(n));
    return static_cast<NodeId>(nodes_.size()) - 1;
}

Tape::NodeId Tape::push_op(Tensor v, std::initializer_list<NodeId> parents) {
    NodeId id = push(std::move(v));
    for (NodeId pid : parents)
        if (nodes_[pid].needs_grad) nodes_[id].needs_grad = true;
    return id;
}

Tape::NodeId Tape::push_op(Tensor v, const std::vector<NodeId>& parents) {
    NodeId id = push(std::move(v));
    for (NodeId pid : parents)
        if (nodes_[pid].needs_grad) nodes_[id].needs_grad = true;
    return id;
}

void Tape::check(const Tensor& t, const char* where) const {
    if (check_finite_ && !t.all_finite())
        throw NumericError(std::string("non-finite values after ") + where);
}

Tape::NodeId Tape::constant(Tensor v) { return push(std::move(v)); }

Tape::NodeId Tape::input(Tensor v) {
    NodeId id = push(std::move(v));
    nodes_[id].needs_grad = true;
    return id;
}

Tape::NodeId Tape::param(Param& p) {
    NodeId id = push(p.value);
    nodes_[id].bound = &p;
    nodes_[id].needs_grad = true;
    return id;
}

real Tape::scalar(NodeId id) const {
    if (nodes_[id].value.numel() != 1) throw ShapeError("scalar: node is not scalar");
    return nodes_[id].value.data[0];
}

Tape::NodeId Tape::conv2d(NodeId xid, NodeId wid, NodeId bid, int stride, int pad) {
    const Tensor& x = nodes_[xid].value;
    const Tensor& w = nodes_[wid].value;
    const Tensor& b = nodes_[bid].value;
    if (w.rank() != 4 || w.shape[2] != kK || w.shape[3] != kK)
        throw ShapeError("conv2d: weight must be [Cout,Cin,3,3]");
    const bool batched = x.rank() == 4;
    if (!batched && x.rank() != 3) throw ShapeError("conv2d: input must be [C,H,W] or [N,C,H,W]");
    ConvDims d;
    d.cin = batched ? x.shape[1] : x.shape[0];
    d.h = batched ? x.shape[2] : x.shape[1];
    d.w = batched ? x.shape[3] : x.shape[2];
    d.cout = w.shape[0];
    d.stride = stride;
    d.pad = pad;
    if (w.shape[1] != d.cin) throw ShapeError("conv2d: weight Cin mismatch");
    if (b.rank() != 1 || b.shape[0] != d.cout) throw ShapeError("conv2d: bias shape mismatch");
    if (d.h + 2 * pad < kK || d.w + 2 * pad < kK) throw ShapeError("conv2d: spatial extent too small");
    if (stride < 1) throw ConfigError("conv2d: stride must be >= 1");
    d.ho = conv_extent(d.h, stride, pad);
    d.wo = conv_extent(d.w, stride, pad);

    const int n = batched ? x.shape[0] : 1;
    Tensor out = Tensor::zeros(batched ? std::vector<int>{n, d.cout, d.ho, d.wo}
                                       : std::vector<int>{d.cout, d.ho, d.wo});
    const std::size_t in_stride = static_cast<std::size_t>(d.cin) * d.h * d.w;
    const std::size_t out_stride = static_cast<std::size_t>(d.cout) * d.ho * d.wo;
    for (int i = 0; i < n; ++i)
        conv_forward_one(x.data.data() + i * in_stride, w.data.data(), b.data.data(),
                         out.data.data() + i * out_stride, d);
    check(out, "conv2d");

    NodeId id = push_op(std::move(out), {xid, wid, bid});
    nodes_[id].back = [this, xid, wid, bid, id, d, n, in_stride, out_stride] {
        const Tensor& xv = nodes_[xid].value;
        const Tensor& wv = nodes_[wid].value;
        const Tensor& go = nodes_[id].grad;
        const bool want_gx = nodes_[xid].needs_grad;
        Tensor& gx = nodes_[xid].grad;
        Tensor& gw = nodes_[wid].grad;
        Tensor& gb = nodes_[bid].grad;
        for (int i = 0; i < n; ++i)
            conv_backward_one(xv.data.data() + i * in_stride, wv.data.data(),
                              go.data.data() + i * out_stride,
                              want_gx ? gx.data.data() + i * in_stride : nullptr,
                              gw.data.data(), gb.data.data(), d);
    };
    return id;
}

Tape::NodeId Tape::channel_concat(const std::vector<NodeId>& xs) {
    if (xs.empty()) throw ShapeError("channel_concat: no inputs");
    const Tensor& first = nodes_[xs[0]].value;
    const bool batched = first.rank() == 4;
    if (!batched && first.rank() != 3) throw ShapeError("channel_concat: rank must be 3 or 4");
    const int n = batched ? first.shape[0] : 1;
    const int h = batched ? first.shape[2] : first.shape[1];
    const int w = batched ? first.shape[3] : first.shape[2];
    int ctotal = 0;
    for (NodeId x : xs) {
        const Tensor& t = nodes_[x].value;
        if (t.rank() != first.rank()) throw ShapeError("channel_concat: mixed ranks");
        const int th = batched ? t.shape[2] : t.shape[1];
        const int tw = batched ? t.shape[3] : t.shape[2];
        const int tn = batched ? t.shape[0] : 1;
        if (th != h || tw != w || tn != n) throw ShapeError("channel_concat: spatial mismatch");
        ctotal += batched ? t.shape[1] : t.shape[0];
    }
    Tensor out = Tensor::zeros(batched ? std::vector<int>{n, ctotal, h, w}
                                       : std::vector<int>{ctotal, h, w});
    const std::size_t plane = static_cast<std::size_t>(h) * w;
    for (int i = 0; i < n; ++i) {
        std::size_t coff = 0;
        for (NodeId x : xs) {
            const Tensor& t = nodes_[x].value;
            const int c = batched ? t.shape[1] : t.shape[0];
            std::copy(t.data.begin() + i * c * plane, t.data.begin() + (i + 1) * c * plane,
                      out.data.begin() + (i * ctotal + coff) * plane);
            coff += c;
        }
    }
    NodeId id = push_op(std::move(out), xs);
    std::vector<NodeId> parents = xs;
    nodes_[id].back = [this, parents, id, n, ctotal, plane, batched] {
        const Tensor& go = nodes_[id].grad;
        for (int i = 0; i < n; ++i) {
            std::size_t coff = 0;
            for (NodeId x : parents) {
                Tensor& gx = nodes_[x].grad;
                const int c = batched ? nodes_[x].value.shape[1] : nodes_[x].value.shape[0];
                const real* src = go.data.data() + (i * ctotal + coff) * plane;
                real* dst = gx.data.data() + i * c * plane;
                for (std::size_t k = 0; k < c * plane; ++k) dst[k] += src[k];
                coff += c;
            }
        }
    };
    return id;
}

Tape::NodeId Tape::stack(const std::vector<NodeId>& samples) {
    if (samples.empty()) throw ShapeError("stack: no inputs");
    const Tensor& first = nodes_[samples[0]].value;
    if (first.rank() != 3) throw ShapeError("stack: samples must be [C,H,W]");
    for (NodeId s : samples)
        if (!nodes_[s].value.same_shape(first)) throw ShapeError("stack: shape mismatch");
    const std::size_t sz = first.data.size();
    Tensor out = Tensor::zeros({static_cast<int>(samples.size()), first.shape[0], first.shape[1], first.shape[2]});
    for (std::size_t i = 0; i < samples.size(); ++i)
        std::copy(nodes_[samples[i]].value.data.begin(), nodes_[samples[i]].value.data.end(),
                  out.data.begin() + i * sz);
    NodeId id = push_op(std::move(out), samples);
    std::vector<NodeId> parents = samples;
    nodes_[id].back = [this, parents, id, sz] {
        const Tensor& go = nodes_[id].grad;
        for (std::size_t i = 0; i < parents.size(); ++i) {
            real* dst = nodes_[parents[i]].grad.data.data();
            const real* src = go.data.data() + i * sz;
            for (std::size_t k = 0; k < sz; ++k) dst[k] += src[k];
        }
    };
    return id;
}

Tape::NodeId Tape::relu(NodeId xid) {
    const Tensor& x = nodes_[xid].value;
    Tensor out = x;
    for (real& v : out.data) v = v > real(0) ? v : real(0);
    NodeId id = push_op(std::move(out), {xid});
    nodes_[id].back = [this, xid, id] {
        const Tensor& xv = nodes_[xid].value;
        const Tensor& go = nodes_[id].grad;
        Tensor& gx = nodes_[xid].grad;
        for (std::size_t i = 0; i < gx.data.size(); ++i)
            if (xv.data[i] > real(0)) gx.data[i] += go.data[i];
    };
    return id;
}

Tape::NodeId Tape::sigmoid(NodeId xid) {
    const Tensor& x = nodes_[xid].value;
    Tensor out = x;
    for (real& v : out.data) {
        if (v >= real(0)) {
            v = real(1) / (real(1) + std::exp(-v));
        } else {
            const real e = std::exp(v);
            v = e / (real(1) + e);
        }
    }
    check(out, "sigmoid");
    NodeId id = push_op(std::move(out), {xid});
    nodes_[id].back = [this, xid, id] {
        const Tensor& y = nodes_[id].value;
        const Tensor& go = nodes_[id].grad;
        Tensor& gx = nodes_[xid].grad;
        for (std::size_t i = 0; i < gx.data.size(); ++i)
            gx.data[i] += go.data[i] * y.data[i] * (real(1) - y.data[i]);
    };
    return id;
}

Tape::NodeId Tape::batch_norm(NodeId xid, NodeId gid, NodeId bid, BatchNormState& state, bool training,
                              bool update_running, real eps, real momentum) {
    const Tensor& x = nodes_[xid].value;
    const bool batched = x.rank() == 4;
    if (!batched && x.rank() != 3) throw ShapeError("batch_norm: rank must be 3 or 4");
    const int n = batched ? x.shape[0] : 1;
    const int c = batched ? x.shape[1] : x.shape[0];
    const int h = batched ? x.shape[2] : x.shape[1];
    const int w = batched ? x.shape[3] : x.shape[2];
    if (training && n < 2) throw ConfigError("batch_norm: train mode needs batch size >= 2");
    if (nodes_[gid].value.numel() != c || nodes_[bid].value.numel() != c)
        throw ShapeError("batch_norm: gamma/beta must be [C]");
    if (state.running_mean.numel() != c) throw ShapeError("batch_norm: state channel mismatch");

    const std::size_t plane = static_cast<std::size_t>(h) * w;
    const std::size_t cstride = static_cast<std::size_t>(c) * plane;
    const real m = static_cast<real>(n) * static_cast<real>(plane);

    Tensor mean = Tensor::zeros({c});
    Tensor var = Tensor::zeros({c});
    if (training) {
        for (int ci = 0; ci < c; ++ci) {
            real s = 0;
            for (int i = 0; i < n; ++i) {
                const real* p = x.data.data() + i * cstride + ci * plane;
                for (std::size_t k = 0; k < plane; ++k) s += p[k];
            }
            mean.data[ci] = s / m;
            real v = 0;
            for (int i = 0; i < n; ++i) {
                const real* p = x.data.data() + i * cstride + ci * plane;
                for (std::size_t k = 0; k < plane; ++k) {
                    const real d = p[k] - mean.data[ci];
                    v += d * d;
                }
            }
            var.data[ci] = v / m;
        }
        if (update_running) {
            for (int ci = 0; ci < c; ++ci) {
                state.running_mean.data[ci] =
                    (real(1) - momentum) * state.running_mean.data[ci] + momentum * mean.data[ci];
                state.running_var.data[ci] =
                    (real(1) - momentum) * state.running_var.data[ci] + momentum * var.data[ci];
            }
        }
    } else {
        mean = state.running_mean;
        var = state.running_var;
    }

    const Tensor& gamma = nodes_[gid].value;
    const Tensor& beta = nodes_[bid].value;
    Tensor out = Tensor::zeros(x.shape);
    for (int i = 0; i < n; ++i) {
        for (int ci = 0; ci < c; ++ci) {
            const real inv = real(1) / std::sqrt(var.data[ci] + eps);
            const real* px = x.data.data() + i * cstride + ci * plane;
            real* po = out.data.data() + i * cstride + ci * plane;
            for (std::size_t k = 0; k < plane; ++k)
                po[k] = gamma.data[ci] * (px[k] - mean.data[ci]) * inv + beta.data[ci];
        }
    }
    check(out, "batch_norm");

    NodeId id = push_op(std::move(out), {xid, gid, bid});
    nodes_[id].back = [this, xid, gid, bid, id, mean, var, training, eps, n, c, plane, cstride, m] {
        const Tensor& xv = nodes_[xid].value;
        const Tensor& gamma = nodes_[gid].value;
        const Tensor& go = nodes_[id].grad;
        Tensor& gx = nodes_[xid].grad;
        Tensor& gg = nodes_[gid].grad;
        Tensor& gb = nodes_[bid].grad;
        for (int ci = 0; ci < c; ++ci) {
            const real mu = mean.data[ci];
            const real inv = real(1) / std::sqrt(var.data[ci] + eps);
            real sum_go = 0, sum_go_xhat = 0;
            for (int i = 0; i < n; ++i) {
                const real* px = xv.data.data() + i * cstride + ci * plane;
                const real* pg = go.data.data() + i * cstride + ci * plane;
                for (std::size_t k = 0; k < plane; ++k) {
                    sum_go += pg[k];
                    sum_go_xhat += pg[k] * (px[k] - mu) * inv;
                }
            }
            gg.data[ci] += sum_go_xhat;
            gb.data[ci] += sum_go;
            if (training) {
                // full gradient through the batch statistics
                for (int i = 0; i < n; ++i) {
                    const real* px = xv.data.data() + i * cstride + ci * plane;
                    const real* pg = go.data.data() + i * cstride + ci * plane;
                    real* pgx = gx.data.data() + i * cstride + ci * plane;
                    for (std::size_t k = 0; k < plane; ++k) {
                        const real xhat = (px[k] - mu) * inv;
                        pgx[k] += gamma.data[ci] * inv / m * (m * pg[k] - sum_go - xhat * sum_go_xhat);
                    }
                }
            } else {
                for (int i = 0; i < n; ++i) {
                    const real* pg = go.data.data() + i * cstride + ci * plane;
                    real* pgx = gx.data.data() + i * cstride + ci * plane;
                    for (std::size_t k = 0; k < plane; ++k) pgx[k] += gamma.data[ci] * inv * pg[k];
                }
            }
        }
    };
    return id;
}

Tape::NodeId Tape::channel_norm(NodeId xid, NodeId gid, NodeId bid, real eps) {
    const Tensor& x = nodes_[xid].value;
    const bool batched = x.rank() == 4;
    if (!batched && x.rank() != 3) throw ShapeError("channel_norm: rank must be 3 or 4");
    const int n = batched ? x.shape[0] : 1;
    const int c = batched ? x.shape[1] : x.shape[0];
    const int h = batched ? x.shape[2] : x.shape[1];
    const int w = batched ? x.shape[3] : x.shape[2];
    if (nodes_[gid].value.numel() != c || nodes_[bid].value.numel() != c)
        throw ShapeError("channel_norm: gamma/beta must be [C]");
    const std::size_t plane = static_cast<std::size_t>(h) * w;
    const std::size_t cstride = static_cast<std::size_t>(c) * plane;
    const real m = static_cast<real>(plane);

    // per-sample, per-channel statistics over H*W
    Tensor mean = Tensor::zeros({n, c});
    Tensor var = Tensor::zeros({n, c});
    const Tensor& gamma = nodes_[gid].value;
    const Tensor& beta = nodes_[bid].value;
    Tensor out = Tensor::zeros(x.shape);
    for (int i = 0; i < n; ++i) {
        for (int ci = 0; ci < c; ++ci) {
            const real* px = x.data.data() + i * cstride + ci * plane;
            real s = 0;
            for (std::size_t k = 0; k < plane; ++k) s += px[k];
            const real mu = s / m;
            real v = 0;
            for (std::size_t k = 0; k < plane; ++k) {
                const real d = px[k] - mu;
                v += d * d;
            }
            v /= m;
            mean.data[i * c + ci] = mu;
            var.data[i * c + ci] = v;
            const real inv = real(1) / std::sqrt(v + eps);
            real* po = out.data.data() + i * cstride + ci * plane;
            for (std::size_t k = 0; k < plane; ++k)
                po[k] = gamma.data[ci] * (px[k] - mu) * inv + beta.data[ci];
        }
    }
    check(out, "channel_norm");

    NodeId id = push_op(std::move(out), {xid, gid, bid});
    nodes_[id].back = [this, xid, gid, bid, id, mean, var, eps, n, c, plane, cstride, m] {
        const Tensor& xv = nodes_[xid].value;
        const Tensor& gamma = nodes_[gid].value;
        const Tensor& go = nodes_[id].grad;
        Tensor& gx = nodes_[xid].grad;
        Tensor& gg = nodes_[gid].grad;
        Tensor& gb = nodes_[bid].grad;
        for (int i = 0; i < n; ++i) {
            for (int ci = 0; ci < c; ++ci) {
                const real mu = mean.data[i * c + ci];
                const real inv = real(1) / std::sqrt(var.data[i * c + ci] + eps);
                const real* px = xv.data.data() + i * cstride + ci * plane;
                const real* pg = go.data.data() + i * cstride + ci * plane;
                real* pgx = gx.data.data() + i * cstride + ci * plane;
                real sum_go = 0, sum_go_xhat = 0;
                for (std::size_t k = 0; k < plane; ++k) {
                    sum_go += pg[k];
                    sum_go_xhat += pg[k] * (px[k] - mu) * inv;
                }
                gg.data[ci] += sum_go_xhat;
                gb.data[ci] += sum_go;
                for (std::size_t k = 0; k < plane; ++k) {
                    const real xhat = (px[k] - mu) * inv;
                    pgx[k] += gamma.data[ci] * inv / m * (m * pg[k] - sum_go - xhat * sum_go_xhat);
                }
            }
        }
    };
    return id;
}

Tape::NodeId Tape::mse(NodeId aid, NodeId bid) {
    const Tensor& a = nodes_[aid].value;
    const Tensor& b = nodes_[bid].value;
    if (!a.same_shape(b)) throw ShapeError("mse: shape mismatch");
    const real n = static_cast<real>(a.numel());
    real s = 0;
    for (std::size_t i = 0; i < a.data.size(); ++i) {
        const real d = a.data[i] - b.data[i];
        s += d * d;
    }
    Tensor out({1}, {s / n});
    check(out, "mse");
    NodeId id = push_op(std::move(out), {aid, bid});
    nodes_[id].back = [this, aid, bid, id, n] {
        const Tensor& av = nodes_[aid].value;
        const Tensor& bv = nodes_[bid].value;
        const real g = nodes_[id].grad.data[0];
        Tensor& ga = nodes_[aid].grad;
        Tensor& gb = nodes_[bid].grad;
        for (std::size_t i = 0; i < av.data.size(); ++i) {
            const real d = g * real(2) * (av.data[i] - bv.data[i]) / n;
            ga.data[i] += d;
            gb.data[i] -= d;
        }
    };
    return id;
}

Tape::NodeId Tape::add(NodeId a, NodeId b) { return lin_comb(a, b, real(1), real(1)); }

Tape::NodeId Tape::lin_comb(NodeId aid, NodeId bid, real ca, real cb) {
    const Tensor& a = nodes_[aid].value;
    const Tensor& b = nodes_[bid].value;
    if (!a.same_shape(b)) throw ShapeError("lin_comb: shape mismatch");
    Tensor out = Tensor::zeros(a.shape);
    for (std::size_t i = 0; i < a.data.size(); ++i) out.data[i] = ca * a.data[i] + cb * b.data[i];
    check(out, "lin_comb");
    NodeId id = push_op(std::move(out), {aid, bid});
    nodes_[id].back = [this, aid, bid, id, ca, cb] {
        const Tensor& go = nodes_[id].grad;
        Tensor& ga = nodes_[aid].grad;
        Tensor& gb = nodes_[bid].grad;
        for (std::size_t i = 0; i < go.data.size(); ++i) {
            ga.data[i] += ca * go.data[i];
            gb.data[i] += cb * go.data[i];
        }
    };
    return id;
}

Tape::NodeId Tape::scale(NodeId aid, real c) {
    const Tensor& a = nodes_[aid].value;
    Tensor out = a;
    for (real& v : out.data) v *= c;
    check(out, "scale");
    NodeId id = push_op(std::move(out), {aid});
    nodes_[id].back = [this, aid, id, c] {
        const Tensor& go = nodes_[id].grad;
        Tensor& ga = nodes_[aid].grad;
        for (std::size_t i = 0; i < go.data.size(); ++i) ga.data[i] += c * go.data[i];
    };
    return id;
}

Tape::NodeId Tape::sum(NodeId aid) {
    const Tensor& a = nodes_[aid].value;
    real s = 0;
    for (real v : a.data) s += v;
    Tensor out({1}, {s});
    check(out, "sum");
    NodeId id = push_op(std::move(out), {aid});
    nodes_[id].back = [this, aid, id] {
        const real g = nodes_[id].grad.data[0];
        Tensor& ga = nodes_[aid].grad;
        for (real& v : ga.data) v += g;
    };
    return id;
}

Tape::NodeId Tape::sample_mean(NodeId xid) {
    const Tensor& x = nodes_[xid].value;
    const bool batched = x.rank() == 4;
    if (!batched && x.rank() != 3) throw ShapeError("sample_mean: rank must be 3 or 4");
    const int n = batched ? x.shape[0] : 1;
    const std::size_t per = x.data.size() / n;
    Tensor out = Tensor::zeros(batched ? std::vector<int>{n} : std::vector<int>{1});
    for (int i = 0; i < n; ++i) {
        real s = 0;
        const real* p = x.data.data() + i * per;
        for (std::size_t k = 0; k < per; ++k) s += p[k];
        out.data[i] = s / static_cast<real>(per);
    }
    check(out, "sample_mean");
    NodeId id = push_op(std::move(out), {xid});
    nodes_[id].back = [this, xid, id, n, per] {
        const Tensor& go = nodes_[id].grad;
        Tensor& gx = nodes_[xid].grad;
        for (int i = 0; i < n; ++i) {
            const real g = go.data[i] / static_cast<real>(per);
            real* p = gx.data.data() + i * per;
            for (std::size_t k = 0; k < per; ++k) p[k] += g;
        }
    };
    return id;
}

Tape::NodeId Tape::linear(NodeId xid, NodeId wid, NodeId bid) {
    const Tensor& x = nodes_[xid].value;
    const Tensor& w = nodes_[wid].value;
    const Tensor& b = nodes_[bid].value;
    if (x.rank() != 1 || w.rank() != 2 || b.rank() != 1) throw ShapeError("linear: bad ranks");
    const int in = x.shape[0], out_dim = w.shape[0];
    if (w.shape[1] != in || b.shape[0] != out_dim) throw ShapeError("linear: shape mismatch");
    Tensor out = Tensor::zeros({out_dim});
    for (int o = 0; o < out_dim; ++o) {
        real s = b.data[o];
        for (int i = 0; i < in; ++i) s += w.data[o * in + i] * x.data[i];
        out.data[o] = s;
    }
    check(out, "linear");
    NodeId id = push_op(std::move(out), {xid, wid, bid});
    nodes_[id].back = [this, xid, wid, bid, id, in, out_dim] {
        const Tensor& xv = nodes_[xid].value;
        const Tensor& wv = nodes_[wid].value;
        const Tensor& go = nodes_[id].grad;
        Tensor& gx = nodes_[xid].grad;
        Tensor& gw = nodes_[wid].grad;
        Tensor& gb = nodes_[bid].grad;
        for (int o = 0; o < out_dim; ++o) {
            const real g = go.data[o];
            gb.data[o] += g;
            for (int i = 0; i < in; ++i) {
                gw.data[o * in + i] += g * xv.data[i];
                gx.data[i] += g * wv.data[o * in + i];
            }
        }
    };
    return id;
}

Tape::NodeId Tape::broadcast_hw(NodeId vid, int height, int width) {
    const Tensor& v = nodes_[vid].value;
    if (v.rank() != 1) throw ShapeError("broadcast_hw: input must be a vector");
    const int e = v.shape[0];
    const std::size_t plane = static_cast<std::size_t>(height) * width;
    Tensor out = Tensor::zeros({e, height, width});
    for (int c = 0; c < e; ++c)
        std::fill(out.data.begin() + c * plane, out.data.begin() + (c + 1) * plane, v.data[c]);
    NodeId id = push_op(std::move(out), {vid});
    nodes_[id].back = [this, vid, id, e, plane] {
        const Tensor& go = nodes_[id].grad;
        Tensor& gv = nodes_[vid].grad;
        for (int c = 0; c < e; ++c) {
            real s = 0;
            const real* p = go.data.data() + c * plane;
            for (std::size_t k = 0; k < plane; ++k) s += p[k];
            gv.data[c] += s;
        }
    };
    return id;
}

Tape::NodeId Tape::gather(NodeId xid, std::vector<std::int64_t> flat_indices) {
    const Tensor& x = nodes_[xid].value;
    Tensor out = Tensor::zeros({static_cast<int>(flat_indices.size())});
    for (std::size_t k = 0; k < flat_indices.size(); ++k) {
        const std::int64_t i = flat_indices[k];
        if (i < 0 || i >= x.numel()) throw ShapeError("gather: index out of range");
        out.data[k] = x.data[i];
    }
    NodeId id = push_op(std::move(out), {xid});
    nodes_[id].back = [this, xid, id, idx = std::move(flat_indices)] {
        const Tensor& go = nodes_[id].grad;
        Tensor& gx = nodes_[xid].grad;
        for (std::size_t k = 0; k < idx.size(); ++k) gx.data[idx[k]] += go.data[k];
    };
    return id;
}

void Tape::backward(NodeId out) {
    if (nodes_[out].value.numel() != 1) throw ShapeError("backward: output must be scalar");
    nodes_[out].grad.data[0] = real(1);
    for (NodeId id = out; id >= 0; --id)
        if (nodes_[id].back && nodes_[id].needs_grad) nodes_[id].back();
    if (check_finite_) {
        for (const Node& n : nodes_)
            if (!n.grad.all_finite()) throw NumericError("non-finite gradient after backward pass");
    }
    for (Node& n : nodes_) {
        if (n.bound) {
            for (std::size_t i = 0; i < n.grad.data.size(); ++i)
                n.bound->grad.data[i] += n.grad.data[i];
        }
    }
}

double grad_check(const std::function<Tape::NodeId(Tape&)>& build, const std::vector<Param*>& wrt,
                  double h) {
    for (Param* p : wrt) p->zero_grad();
    std::vector<Tensor> analytic;
    {
        Tape tape;
        Tape::NodeId out = build(tape);
        tape.backward(out);
    }
    analytic.reserve(wrt.size());
    for (Param* p : wrt) analytic.push_back(p->grad);

    auto eval = [&build]() {
        Tape tape(false);
        return static_cast<double>(tape.scalar(build(tape)));
    };

    double max_err = 0;
    for (std::size_t pi = 0; pi < wrt.size(); ++pi) {
        Param& p = *wrt[pi];
        for (std::size_t i = 0; i < p.value.data.size(); ++i) {
            const real saved = p.value.data[i];
            p.value.data[i] = saved + static_cast<real>(h);
            const double fp = eval();
            p.value.data[i] = saved - static_cast<real>(h);
            const double fm = eval();
            p.value.data[i] = saved;
            const double numeric = (fp - fm) / (2.0 * h);
            const double a = static_cast<double>(analytic[pi].data[i]);
            const double err = std::abs(a - numeric) / std::max({1.0, std::abs(a), std::abs(numeric)});
            max_err = std::max(max_err, err);
        }
    }
    for (Param* p : wrt) p->zero_grad();
    return max_err;
}

}  // namespace gmmt
