#include "svp/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <set>

namespace svp {

double psnr(const Tensor& a, const Tensor& b, double peak) {
    check(a.shape() == b.shape(), "psnr: shape mismatch");
    double mse = 0;
    for (int64_t i = 0; i < a.size(); ++i) {
        double d = a.data()[i] - b.data()[i];
        mse += d * d;
    }
    mse /= a.size();
    if (mse == 0.0) return std::numeric_limits<double>::infinity();
    return 10.0 * std::log10(peak * peak / mse);
}

double ssim(const Tensor& a, const Tensor& b, double peak) {
    check(a.shape() == b.shape(), "ssim: shape mismatch");
    check(a.rank() == 3 || a.rank() == 2, "ssim: [C,H,W] or [H,W] input required");
    int64_t C = a.rank() == 3 ? a.dim(0) : 1;
    int64_t H = a.dim(a.rank() - 2), W = a.dim(a.rank() - 1);
    const int64_t win = 7;
    check(H >= win && W >= win, "ssim: image smaller than the 7x7 window");
    double c1 = (0.01 * peak) * (0.01 * peak);
    double c2 = (0.03 * peak) * (0.03 * peak);
    const double n = win * win;

    double total = 0;
    int64_t count = 0;
    for (int64_t c = 0; c < C; ++c) {
        const double* pa = a.data() + c * H * W;
        const double* pb = b.data() + c * H * W;
        for (int64_t y = 0; y + win <= H; ++y)
            for (int64_t x = 0; x + win <= W; ++x) {
                double sa = 0, sb = 0, saa = 0, sbb = 0, sab = 0;
                for (int64_t dy = 0; dy < win; ++dy)
                    for (int64_t dx = 0; dx < win; ++dx) {
                        double va = pa[(y + dy) * W + x + dx];
                        double vb = pb[(y + dy) * W + x + dx];
                        sa += va;
                        sb += vb;
                        saa += va * va;
                        sbb += vb * vb;
                        sab += va * vb;
                    }
                double ma = sa / n, mb = sb / n;
                double va = saa / n - ma * ma;
                double vb = sbb / n - mb * mb;
                double cov = sab / n - ma * mb;
                double val = ((2 * ma * mb + c1) * (2 * cov + c2)) /
                             ((ma * ma + mb * mb + c1) * (va + vb + c2));
                total += val;
                ++count;
            }
    }
    return total / count;
}

double iou(const Tensor& mask_a, const Tensor& mask_b) {
    check(mask_a.shape() == mask_b.shape(), "iou: shape mismatch");
    int64_t inter = 0, uni = 0;
    for (int64_t i = 0; i < mask_a.size(); ++i) {
        bool a = mask_a.data()[i] > 0.5, b = mask_b.data()[i] > 0.5;
        inter += (a && b);
        uni += (a || b);
    }
    return uni == 0 ? 1.0 : double(inter) / double(uni);
}

// ---------------------------------------------------------------------------
// VPQ
// ---------------------------------------------------------------------------

namespace {

struct FrameView {
    const double* p;
    int64_t H, W, stride;
    int64_t y0, x0;
    long id(int64_t y, int64_t x) const {
        return std::lround(p[(y0 + y) * stride + x0 + x]);
    }
};

double vpq_impl(const std::vector<FrameView>& pred, const std::vector<FrameView>& gt) {
    check(pred.size() == gt.size(), "vpq: misaligned id maps");
    std::map<long, long> pred_to_gt, gt_to_pred;
    double pq_sum = 0;
    int64_t frames_counted = 0;

    for (size_t t = 0; t < pred.size(); ++t) {
        const auto& P = pred[t];
        const auto& G = gt[t];
        check(P.H == G.H && P.W == G.W, "vpq: frame extents differ");

        std::map<long, int64_t> area_p, area_g;
        std::map<std::pair<long, long>, int64_t> inter;
        for (int64_t y = 0; y < P.H; ++y)
            for (int64_t x = 0; x < P.W; ++x) {
                long ip = P.id(y, x), ig = G.id(y, x);
                if (ip > 0) ++area_p[ip];
                if (ig > 0) ++area_g[ig];
                if (ip > 0 && ig > 0) ++inter[{ip, ig}];
            }

        int64_t tp = 0, fp = 0, fn = 0;
        double iou_sum = 0;
        std::set<long> matched_p, matched_g;
        for (const auto& [ig, ag] : area_g) {
            // at most one prediction can exceed IoU 0.5 against an instance
            long best_p = 0;
            double best_iou = 0;
            for (const auto& [key, in] : inter) {
                if (key.second != ig) continue;
                double u = double(area_p.at(key.first) + ag - in);
                double v = in / u;
                if (v > best_iou) {
                    best_iou = v;
                    best_p = key.first;
                }
            }
            if (best_p == 0 || best_iou <= 0.5) continue;
            auto itp = pred_to_gt.find(best_p);
            auto itg = gt_to_pred.find(ig);
            bool fresh = itp == pred_to_gt.end() && itg == gt_to_pred.end();
            bool consistent = itp != pred_to_gt.end() && itp->second == ig &&
                              itg != gt_to_pred.end() && itg->second == best_p;
            if (fresh) {
                pred_to_gt[best_p] = ig;
                gt_to_pred[ig] = best_p;
                consistent = true;
            }
            if (consistent) {
                ++tp;
                iou_sum += best_iou;
                matched_p.insert(best_p);
                matched_g.insert(ig);
            }
            // a track switch falls through: both sides stay unmatched
        }
        for (const auto& [ip, ap] : area_p)
            if (!matched_p.count(ip)) ++fp;
        for (const auto& [ig, ag] : area_g)
            if (!matched_g.count(ig)) ++fn;

        double denom = tp + 0.5 * fp + 0.5 * fn;
        if (denom > 0) {
            pq_sum += iou_sum / denom;
            ++frames_counted;
        }
    }
    return frames_counted == 0 ? 1.0 : pq_sum / frames_counted;
}

FrameView full_view(const Tensor& t) {
    int64_t H = t.dim(t.rank() - 2), W = t.dim(t.rank() - 1);
    return {t.data(), H, W, W, 0, 0};
}

}  // namespace

double vpq(const std::vector<Tensor>& pred_ids, const std::vector<Tensor>& gt_ids) {
    std::vector<FrameView> p, g;
    for (const auto& t : pred_ids) p.push_back(full_view(t));
    for (const auto& t : gt_ids) g.push_back(full_view(t));
    return vpq_impl(p, g);
}

double vpq_region(const std::vector<Tensor>& pred_ids,
                  const std::vector<Tensor>& gt_ids, int64_t y0, int64_t x0,
                  int64_t h, int64_t w) {
    std::vector<FrameView> p, g;
    for (const auto& t : pred_ids) {
        auto v = full_view(t);
        check(y0 >= 0 && x0 >= 0 && y0 + h <= v.H && x0 + w <= v.W,
              "vpq_region: window out of bounds");
        p.push_back({t.data(), h, w, v.W, y0, x0});
    }
    for (const auto& t : gt_ids) {
        auto v = full_view(t);
        g.push_back({t.data(), h, w, v.W, y0, x0});
    }
    return vpq_impl(p, g);
}

double ged(size_t n, const std::function<double(size_t)>& dist_to_gt,
           const std::function<double(size_t, size_t)>& dist_between) {
    check(n >= 2, "ged: at least two samples required");
    double first = 0;
    for (size_t i = 0; i < n; ++i) first += dist_to_gt(i);
    first *= 2.0 / n;
    double second = 0;
    for (size_t i = 0; i < n; ++i)
        for (size_t j = 0; j < n; ++j) second += i == j ? 0.0 : dist_between(i, j);
    second /= double(n) * double(n);
    return first - second;
}

DepthMetrics depth_metrics(const Tensor& pred, const Tensor& gt, const Tensor& valid) {
    check(pred.shape() == gt.shape(), "depth_metrics: shape mismatch");
    check(valid.shape() == gt.shape(), "depth_metrics: valid mask shape mismatch");
    DepthMetrics m;
    int64_t n = 0;
    for (int64_t i = 0; i < pred.size(); ++i) {
        if (valid.data()[i] <= 0.5) continue;
        double p = pred.data()[i], g = gt.data()[i];
        check(g > 0, "depth_metrics: non-positive ground truth on valid pixel");
        double d = p - g;
        m.abs_rel += std::abs(d) / g;
        m.sq_rel += d * d / g;
        m.rmse += d * d;
        double dl = std::log(p) - std::log(g);
        m.rmse_log += dl * dl;
        double ratio = std::max(p / g, g / p);
        m.delta1 += ratio < 1.25;
        m.delta2 += ratio < 1.25 * 1.25;
        m.delta3 += ratio < 1.25 * 1.25 * 1.25;
        ++n;
    }
    check(n > 0, "depth_metrics: empty valid mask");
    m.abs_rel /= n;
    m.sq_rel /= n;
    m.rmse = std::sqrt(m.rmse / n);
    m.rmse_log = std::sqrt(m.rmse_log / n);
    m.delta1 /= n;
    m.delta2 /= n;
    m.delta3 /= n;
    return m;
}

FgBgScores fg_bg_eval(const std::vector<Tensor>& pred, const std::vector<Tensor>& gt,
                      const std::vector<Tensor>& fg_masks,
                      const std::function<double(const Tensor&, const Tensor&)>& metric) {
    check(pred.size() == gt.size() && gt.size() == fg_masks.size(),
          "fg_bg_eval: misaligned sequences");
    FgBgScores out;
    for (size_t t = 0; t < pred.size(); ++t) {
        const Tensor& m = fg_masks[t];
        auto masked = [&](const Tensor& src, bool keep_fg) {
            Tensor r = src.detach();
            int64_t hw = m.size();
            int64_t C = r.size() / hw;
            for (int64_t c = 0; c < C; ++c)
                for (int64_t i = 0; i < hw; ++i) {
                    bool fg = m.data()[i] > 0.5;
                    if (fg != keep_fg) r.data()[c * hw + i] = 0.5;
                }
            return r;
        };
        out.fg.push_back(metric(masked(pred[t], true), masked(gt[t], true)));
        out.bg.push_back(metric(masked(pred[t], false), masked(gt[t], false)));
    }
    return out;
}

BestOfN best_of_n(const std::vector<std::vector<Tensor>>& samples,
                  const std::vector<Tensor>& gt,
                  const std::function<double(const Tensor&, const Tensor&)>& metric,
                  bool higher_better) {
    check(!samples.empty(), "best_of_n: empty sample set");
    BestOfN best;
    bool first = true;
    for (size_t s = 0; s < samples.size(); ++s) {
        check(samples[s].size() == gt.size(), "best_of_n: horizon mismatch");
        double acc = 0;
        for (size_t t = 0; t < gt.size(); ++t) acc += metric(samples[s][t], gt[t]);
        double score = acc / gt.size();
        bool better = higher_better ? score > best.score : score < best.score;
        if (first || better) {
            best.index = s;
            best.score = score;
            first = false;
        }
    }
    return best;
}

double MetricReport::mean() const {
    if (sequence_means.empty()) return 0;
    double s = 0;
    for (double v : sequence_means) s += v;
    return s / sequence_means.size();
}

double MetricReport::ci_half_width() const {
    size_t n = sequence_means.size();
    if (n < 2) return 0;
    double m = mean();
    double var = 0;
    for (double v : sequence_means) var += (v - m) * (v - m);
    var /= (n - 1);
    return 1.96 * std::sqrt(var / n);
}

void MetricAccumulator::add(const std::string& metric, int64_t sequence,
                            int64_t frame, double value) {
    rows_.push_back({metric, sequence, frame, value});
}

MetricReport MetricAccumulator::report(const std::string& metric) const {
    std::map<int64_t, std::pair<double, int64_t>> by_seq;
    for (const auto& r : rows_) {
        if (r.metric != metric) continue;
        auto& [sum, cnt] = by_seq[r.sequence];
        sum += r.value;
        ++cnt;
    }
    MetricReport rep;
    for (const auto& [seq, sc] : by_seq)
        rep.sequence_means.push_back(sc.first / sc.second);
    return rep;
}

std::vector<std::string> MetricAccumulator::metric_names() const {
    std::set<std::string> names;
    for (const auto& r : rows_) names.insert(r.metric);
    return {names.begin(), names.end()};
}

std::string format_metric_value(double v) {
    if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.12g", v);
    return buf;
}

void MetricAccumulator::write_per_frame_csv(const std::string& path) const {
    std::ofstream os(path);
    if (!os) throw IoError("cannot write " + path);
    os << "sequence,frame,metric,value\n";
    for (const auto& r : rows_)
        os << r.sequence << "," << r.frame << "," << r.metric << ","
           << format_metric_value(r.value) << "\n";
}

void MetricAccumulator::write_summary_csv(const std::string& path) const {
    std::ofstream os(path);
    if (!os) throw IoError("cannot write " + path);
    os << "metric,mean,ci95_half_width,sequences\n";
    for (const auto& name : metric_names()) {
        auto rep = report(name);
        os << name << "," << format_metric_value(rep.mean()) << ","
           << format_metric_value(rep.ci_half_width()) << "," << rep.count() << "\n";
    }
}

}  // namespace svp
