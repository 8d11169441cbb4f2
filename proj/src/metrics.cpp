#include "gmmt/metrics.hpp"

#include <cmath>

namespace gmmt {

double iou(const BBox& a, const BBox& b) {
    const double ax0 = a.cx - a.w / 2, ax1 = a.cx + a.w / 2;
    const double ay0 = a.cy - a.h / 2, ay1 = a.cy + a.h / 2;
    const double bx0 = b.cx - b.w / 2, bx1 = b.cx + b.w / 2;
    const double by0 = b.cy - b.h / 2, by1 = b.cy + b.h / 2;
    const double ix = std::max(0.0, std::min(ax1, bx1) - std::max(ax0, bx0));
    const double iy = std::max(0.0, std::min(ay1, by1) - std::max(ay0, by0));
    const double inter = ix * iy;
    const double uni = a.w * a.h + b.w * b.h - inter;
    return uni > 0.0 ? inter / uni : 0.0;
}

double precision_rate(const std::vector<FramePair>& frames, double threshold) {
    int present = 0, hits = 0;
    for (const FramePair& f : frames) {
        if (!f.truth_present) continue;
        ++present;
        const double d = std::hypot(f.pred.cx - f.truth.cx, f.pred.cy - f.truth.cy);
        if (d < threshold) ++hits;
    }
    if (present == 0) throw DataError("precision_rate: no frames with a present target");
    return static_cast<double>(hits) / present;
}

double norm_precision_rate(const std::vector<FramePair>& frames, double threshold) {
    int present = 0, hits = 0;
    for (const FramePair& f : frames) {
        if (!f.truth_present) continue;
        if (f.truth.w <= 0 || f.truth.h <= 0)
            throw DataError("norm_precision_rate: zero-extent truth box");
        ++present;
        const double dx = (f.pred.cx - f.truth.cx) / f.truth.w;
        const double dy = (f.pred.cy - f.truth.cy) / f.truth.h;
        if (std::hypot(dx, dy) < threshold) ++hits;
    }
    if (present == 0) throw DataError("norm_precision_rate: no frames with a present target");
    return static_cast<double>(hits) / present;
}

SuccessRates success_rate(const std::vector<FramePair>& frames) {
    if (frames.empty()) throw DataError("success_rate: empty frame set");
    std::vector<double> ious;
    int present = 0;
    for (const FramePair& f : frames) {
        if (!f.truth_present) continue;
        ++present;
        ious.push_back(iou(f.pred, f.truth));
    }
    if (present == 0) throw DataError("success_rate: no frames with a present target");
    SuccessRates out;
    int above_zero = 0;
    for (double v : ious)
        if (v > 0.0) ++above_zero;
    out.sr_ratio = static_cast<double>(above_zero) / present;
    double auc = 0;
    for (int k = 0; k <= 20; ++k) {
        const double tau = 0.05 * k;
        int n = 0;
        for (double v : ious) {
            // tau = 0 keeps the strict "overlap above zero" reading
            if (k == 0 ? v > 0.0 : v >= tau) ++n;
        }
        auc += static_cast<double>(n) / present;
    }
    out.sr_auc = auc / 21.0;
    return out;
}

RecallFscore recall_and_fscore(const std::vector<FramePair>& frames) {
    if (frames.empty()) throw DataError("recall_and_fscore: empty frame set");
    int tracked = 0, reported = 0, present = 0;
    for (const FramePair& f : frames) {
        if (f.pred_present) ++reported;
        if (f.truth_present) ++present;
        if (f.pred_present && f.truth_present && iou(f.pred, f.truth) > 0.0) ++tracked;
    }
    RecallFscore out;
    out.pr = reported > 0 ? static_cast<double>(tracked) / reported : 0.0;
    out.re = present > 0 ? static_cast<double>(tracked) / present : 0.0;
    out.f = f_score(out.pr, out.re);
    return out;
}

double f_score(double pr, double re) {
    const double s = pr + re;
    return s > 0.0 ? 2.0 * pr * re / s : 0.0;
}

namespace {

double ssim_plane(const real* a, const real* b, int h, int w, int win) {
    double lo = a[0], hi = a[0];
    const std::size_t n = static_cast<std::size_t>(h) * w;
    for (std::size_t i = 0; i < n; ++i) {
        lo = std::min({lo, static_cast<double>(a[i]), static_cast<double>(b[i])});
        hi = std::max({hi, static_cast<double>(a[i]), static_cast<double>(b[i])});
    }
    const double range = std::max(hi - lo, 1e-6);
    const double c1 = 0.01 * range * 0.01 * range;
    const double c2 = 0.03 * range * 0.03 * range;

    const double m = static_cast<double>(win) * win;
    double total = 0;
    int count = 0;
    for (int y = 0; y + win <= h; ++y) {
        for (int x = 0; x + win <= w; ++x) {
            double sa = 0, sb = 0, saa = 0, sbb = 0, sab = 0;
            for (int dy = 0; dy < win; ++dy) {
                const real* ra = a + static_cast<std::size_t>(y + dy) * w + x;
                const real* rb = b + static_cast<std::size_t>(y + dy) * w + x;
                for (int dx = 0; dx < win; ++dx) {
                    const double va = ra[dx], vb = rb[dx];
                    sa += va;
                    sb += vb;
                    saa += va * va;
                    sbb += vb * vb;
                    sab += va * vb;
                }
            }
            const double mu_a = sa / m, mu_b = sb / m;
            const double var_a = saa / m - mu_a * mu_a;
            const double var_b = sbb / m - mu_b * mu_b;
            const double cov = sab / m - mu_a * mu_b;
            total += (2 * mu_a * mu_b + c1) * (2 * cov + c2) /
                     ((mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2));
            ++count;
        }
    }
    return total / count;
}

}  // namespace

double ssim(const Tensor& a, const Tensor& b, int window) {
    if (!a.same_shape(b)) throw ShapeError("ssim: shape mismatch");
    if (window < 2) throw ConfigError("ssim: window too small");
    int c = 1, h = 0, w = 0;
    if (a.rank() == 2) {
        h = a.shape[0];
        w = a.shape[1];
    } else if (a.rank() == 3) {
        c = a.shape[0];
        h = a.shape[1];
        w = a.shape[2];
    } else {
        throw ShapeError("ssim: need a 2-D slice or a [C,H,W] map");
    }
    if (h < window || w < window) throw ConfigError("ssim: extent smaller than the window");
    const std::size_t plane = static_cast<std::size_t>(h) * w;
    double total = 0;
    for (int ci = 0; ci < c; ++ci)
        total += ssim_plane(a.data.data() + ci * plane, b.data.data() + ci * plane, h, w, window);
    return total / c;
}

}  // namespace gmmt
