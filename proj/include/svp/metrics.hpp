#pragma once

#include <functional>
#include <map>
#include <string>
#include <vector>

#include "svp/tensor.hpp"

namespace svp {

// PSNR in dB; identical inputs report the +infinity sentinel.
double psnr(const Tensor& a, const Tensor& b, double peak = 1.0);

// Windowed SSIM: 7x7 uniform window over fully-interior positions, averaged
// over positions and channels; C1=(0.01*peak)^2, C2=(0.03*peak)^2.
double ssim(const Tensor& a, const Tensor& b, double peak = 1.0);

// Intersection over union of binary masks; an empty union counts as 1.
double iou(const Tensor& mask_a, const Tensor& mask_b);

// Video panoptic quality over time-aligned instance-id maps (0 = background).
// A prediction is a true positive at step t iff it overlaps a ground-truth
// instance with IoU > 0.5 and the two tracks have been associated with each
// other since their first match; a track switch demotes to FP+FN. Reported as
// the mean of per-step PQ over the horizon.
double vpq(const std::vector<Tensor>& pred_ids, const std::vector<Tensor>& gt_ids);

// Same metric restricted to a spatial window (top-left y0,x0, size h x w).
double vpq_region(const std::vector<Tensor>& pred_ids,
                  const std::vector<Tensor>& gt_ids, int64_t y0, int64_t x0,
                  int64_t h, int64_t w);

// Generalized energy distance for n samples against a single ground truth:
// (2/n) sum_i d(Y_i, y) - (1/n^2) sum_ij d(Y_i, Y_j).
double ged(size_t n_samples, const std::function<double(size_t)>& dist_to_gt,
           const std::function<double(size_t, size_t)>& dist_between);

struct DepthMetrics {
    double abs_rel = 0, sq_rel = 0, rmse = 0, rmse_log = 0;
    double delta1 = 0, delta2 = 0, delta3 = 0;  // max(p/g, g/p) < 1.25^k
};
// Standard protocol on valid pixels; no median scaling (the synthetic world
// has absolute scale).
DepthMetrics depth_metrics(const Tensor& pred, const Tensor& gt, const Tensor& valid);

// Region-split evaluation: complement pixels of both inputs are set to the
// mean gray (0.5) before the metric is computed.
struct FgBgScores {
    std::vector<double> fg, bg;  // per frame
};
FgBgScores fg_bg_eval(const std::vector<Tensor>& pred, const std::vector<Tensor>& gt,
                      const std::vector<Tensor>& fg_masks,
                      const std::function<double(const Tensor&, const Tensor&)>& metric);

struct BestOfN {
    size_t index = 0;
    double score = 0;
};
// Picks the sample whose mean-over-frames metric is best.
BestOfN best_of_n(const std::vector<std::vector<Tensor>>& samples,
                  const std::vector<Tensor>& gt,
                  const std::function<double(const Tensor&, const Tensor&)>& metric,
                  bool higher_better = true);

// Mean and 95% confidence half-width (1.96 * stderr) over sequences;
// sequences aggregate first, frames second.
struct MetricReport {
    std::vector<double> sequence_means;
    double mean() const;
    double ci_half_width() const;
    int64_t count() const { return static_cast<int64_t>(sequence_means.size()); }
};

// Collects per-(sequence, frame, metric) values and renders the CSV outputs.
class MetricAccumulator {
public:
    void add(const std::string& metric, int64_t sequence, int64_t frame, double value);
    MetricReport report(const std::string& metric) const;
    std::vector<std::string> metric_names() const;
    void write_per_frame_csv(const std::string& path) const;
    void write_summary_csv(const std::string& path) const;

private:
    struct Row {
        std::string metric;
        int64_t sequence, frame;
        double value;
    };
    std::vector<Row> rows_;
};

std::string format_metric_value(double v);  // "inf" sentinel spelling

}  // namespace svp
