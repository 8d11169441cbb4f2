#pragma once

#include <vector>

#include "gmmt/pipeline.hpp"

namespace gmmt {

// One evaluated frame. truth_present covers benchmarks where the object can
// leave the scene; pred_present is whether the tracker reported a target.
struct FramePair {
    BBox pred;
    BBox truth;
    bool truth_present = true;
    bool pred_present = true;
};

struct EvalReport {
    double pr = 0;
    double npr = 0;
    double sr_auc = 0;
    double sr_ratio = 0;
    double re = 0;
    double f_score = 0;
    double pr_threshold = 0;
    double npr_threshold = 0;
    double ssim_mean = 0;
    bool has_ssim = false;
    std::vector<std::pair<double, double>> pr_curve;   // (threshold, rate)
    std::vector<std::pair<double, double>> npr_curve;  // (threshold, rate)
};

double iou(const BBox& a, const BBox& b);

// Fraction of present-truth frames whose center distance is strictly below
// the threshold.
double precision_rate(const std::vector<FramePair>& frames, double threshold);

// Center offsets are normalized by the truth box extents before the distance
// test (threshold default 0.2 on that scale).
double norm_precision_rate(const std::vector<FramePair>& frames, double threshold);

struct SuccessRates {
    double sr_auc = 0;    // mean of success(tau) over tau in {0, 0.05, ..., 1}
    double sr_ratio = 0;  // fraction of frames with IoU > 0
};
SuccessRates success_rate(const std::vector<FramePair>& frames);

struct RecallFscore {
    double pr = 0;  // correctly tracked / frames where the tracker reported a target
    double re = 0;  // correctly tracked / frames where the target is present
    double f = 0;   // 2*pr*re/(pr+re), 0 when pr+re == 0
};
RecallFscore recall_and_fscore(const std::vector<FramePair>& frames);

// Harmonic-mean combination usable on already-aggregated percentages.
double f_score(double pr, double re);

// Single-scale structural similarity between two 2-D slices: 7x7 windows slid
// over every fully contained position, stabilizers C1=(0.01 L)^2 and
// C2=(0.03 L)^2 with L the joint dynamic range of the pair (floored at 1e-6),
// population statistics per window, mean over windows. [C,H,W] maps are
// averaged over channels.
double ssim(const Tensor& a, const Tensor& b, int window = 7);

}  // namespace gmmt
