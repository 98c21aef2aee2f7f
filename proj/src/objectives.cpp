#include "dagr/objectives.hpp"

#include <algorithm>
#include <cmath>

#include "dagr/ops.hpp"

namespace dagr {

namespace {

void check_same_extents(const SaliencyMap& a, const SaliencyMap& b, const char* op) {
    if (a.values.shape() != b.values.shape())
        throw Error(std::string(op) + ": map extents differ, " + shape_str(a.values.shape()) +
                    " vs " + shape_str(b.values.shape()));
}

// Frame t of a [1,T,H,W] map flattened to [H*W].
Tensor frame_vector(const Tensor& map, std::size_t t) {
    const std::size_t px = map.extent(2) * map.extent(3);
    return reshape(slice(map, 1, t, t + 1), {px});
}

Tensor pearson_frame(const Tensor& x, const Tensor& y, const char* op) {
    // Degenerate variance is a caller error, checked on raw values first.
    auto variance_zero = [](const Tensor& v) {
        const auto& d = v.data();
        double mu = 0.0;
        for (double e : d) mu += e;
        mu /= static_cast<double>(d.size());
        for (double e : d)
            if (e != mu) return false;
        return true;
    };
    if (variance_zero(x) || variance_zero(y))
        throw Error(std::string(op) + ": zero-variance map");
    Tensor dx = sub(x, mean(x));
    Tensor dy = sub(y, mean(y));
    Tensor cov = sum(mul(dx, dy));
    Tensor denom = mul(sqrt(sum(mul(dx, dx))), sqrt(sum(mul(dy, dy))));
    return div(cov, denom);
}

}  // namespace

FixationMap make_fixation_map(Tensor points) {
    if (!points.defined() || points.rank() != 4 || points.extent(0) != 1)
        throw Error("fixation map: points must be [1,T,H,W]");
    const std::size_t T = points.extent(1);
    const std::size_t px = points.extent(2) * points.extent(3);
    const auto& data = points.data();
    for (double v : data)
        if (v != 0.0 && v != 1.0) throw Error("fixation map: entries must be 0 or 1");
    for (std::size_t t = 0; t < T; ++t) {
        double count = 0.0;
        for (std::size_t i = 0; i < px; ++i) count += data[t * px + i];
        if (count < 1.0) throw Error("fixation map: frame " + std::to_string(t) + " has no fixation");
    }
    FixationMap fix;
    fix.points = std::move(points);
    return fix;
}

SaliencyMap normalize_map(const SaliencyMap& map, double eps) {
    if (eps < 0.0) throw Error("normalize_map: eps must be >= 0");
    const Tensor& v = map.values;
    const std::size_t T = v.extent(1);
    const std::size_t px = v.extent(2) * v.extent(3);
    for (double e : v.data())
        if (e < 0.0) throw Error("normalize_map: map must be nonnegative");
    if (eps == 0.0) {
        const auto& data = v.data();
        for (std::size_t t = 0; t < T; ++t) {
            double s = 0.0;
            for (std::size_t i = 0; i < px; ++i) s += data[t * px + i];
            if (s <= 0.0) throw Error("normalize_map: all-zero frame with eps = 0");
        }
    }
    std::vector<Tensor> frames;
    frames.reserve(T);
    for (std::size_t t = 0; t < T; ++t) {
        Tensor f = add_scalar(frame_vector(v, t), eps);
        frames.push_back(reshape(div(f, sum(f)), {1, 1, v.extent(2), v.extent(3)}));
    }
    SaliencyMap out;
    out.values = concat(frames, 1);
    out.normalized = true;
    return out;
}

Tensor kl_loss(const SaliencyMap& s, const SaliencyMap& s_hat) {
    check_same_extents(s, s_hat, "kl_loss");
    if (!s.normalized || !s_hat.normalized)
        throw Error("kl_loss: both maps must be normalized distributions");
    const std::size_t T = s.frames();
    const double px = static_cast<double>(s.frame_pixels());
    Tensor total = Tensor::scalar(0.0);
    for (std::size_t t = 0; t < T; ++t) {
        Tensor p = frame_vector(s.values, t);
        Tensor q = frame_vector(s_hat.values, t);
        Tensor kl = scale(sum(mul(p, sub(log(p), log(q)))), 1.0 / px);
        total = add(total, kl);
    }
    return scale(total, 1.0 / static_cast<double>(T));
}

Tensor cc_loss(const SaliencyMap& s, const SaliencyMap& s_hat) {
    check_same_extents(s, s_hat, "cc_loss");
    const std::size_t T = s.frames();
    Tensor total = Tensor::scalar(0.0);
    for (std::size_t t = 0; t < T; ++t) {
        Tensor r = pearson_frame(frame_vector(s_hat.values, t), frame_vector(s.values, t), "cc_loss");
        total = add(total, neg(r));
    }
    return scale(total, 1.0 / static_cast<double>(T));
}

Tensor saliency_loss(const SaliencyMap& s, const SaliencyMap& s_hat,
                     const SaliencyLossConfig& cfg) {
    cfg.validate();
    check_same_extents(s, s_hat, "saliency_loss");
    Tensor cc = cc_loss(s, s_hat);
    if (cfg.gamma == 0.0) return cc;
    Tensor kl = kl_loss(normalize_map(s, cfg.eps), normalize_map(s_hat, cfg.eps));
    return add(scale(kl, cfg.gamma), cc);
}

double nss(const SaliencyMap& s_hat, const FixationMap& fix) {
    if (s_hat.values.shape() != fix.points.shape())
        throw Error("nss: map and fixation extents differ");
    const std::size_t T = s_hat.frames();
    const std::size_t px = s_hat.frame_pixels();
    const auto& map = s_hat.values.data();
    const auto& pts = fix.points.data();
    double total = 0.0;
    for (std::size_t t = 0; t < T; ++t) {
        const double* m = map.data() + t * px;
        const double* f = pts.data() + t * px;
        double mu = 0.0;
        for (std::size_t i = 0; i < px; ++i) mu += m[i];
        mu /= static_cast<double>(px);
        double var = 0.0;
        for (std::size_t i = 0; i < px; ++i) var += (m[i] - mu) * (m[i] - mu);
        var /= static_cast<double>(px);
        if (var <= 0.0) throw Error("nss: zero-variance map in frame " + std::to_string(t));
        const double sd = std::sqrt(var);
        double acc = 0.0, count = 0.0;
        for (std::size_t i = 0; i < px; ++i)
            if (f[i] != 0.0) {
                acc += (m[i] - mu) / sd;
                count += 1.0;
            }
        total += acc / count;
    }
    return total / static_cast<double>(T);
}

double cc_metric(const SaliencyMap& s, const SaliencyMap& s_hat) {
    check_same_extents(s, s_hat, "cc_metric");
    return -cc_loss(s, s_hat).value();
}

double auc_judd(const SaliencyMap& s_hat, const FixationMap& fix) {
    if (s_hat.values.shape() != fix.points.shape())
        throw Error("auc_judd: map and fixation extents differ");
    const std::size_t T = s_hat.frames();
    const std::size_t px = s_hat.frame_pixels();
    const auto& map = s_hat.values.data();
    const auto& pts = fix.points.data();
    double total = 0.0;
    for (std::size_t t = 0; t < T; ++t) {
        const double* m = map.data() + t * px;
        const double* f = pts.data() + t * px;
        std::vector<double> fix_vals, other_vals;
        for (std::size_t i = 0; i < px; ++i)
            (f[i] != 0.0 ? fix_vals : other_vals).push_back(m[i]);
        if (fix_vals.empty() || other_vals.empty())
            throw Error("auc_judd: frame needs at least one fixated and one non-fixated pixel");
        // ROC swept at the saliency values observed at fixations ("above" = >=).
        std::sort(fix_vals.begin(), fix_vals.end(), std::greater<double>());
        std::vector<double> other_sorted = other_vals;
        std::sort(other_sorted.begin(), other_sorted.end(), std::greater<double>());
        const double nf = static_cast<double>(fix_vals.size());
        const double no = static_cast<double>(other_sorted.size());
        std::vector<std::pair<double, double>> points;  // (fpr, tpr)
        points.emplace_back(0.0, 0.0);
        // In a descending-sorted list, upper_bound with greater<> lands on the
        // first element < t, so its offset counts entries >= t.
        const auto count_geq = [](const std::vector<double>& v, double t) {
            return static_cast<double>(
                std::upper_bound(v.begin(), v.end(), t, std::greater<double>()) - v.begin());
        };
        for (std::size_t k = 0; k < fix_vals.size(); ++k) {
            const double thresh = fix_vals[k];
            points.emplace_back(count_geq(other_sorted, thresh) / no,
                                count_geq(fix_vals, thresh) / nf);
        }
        points.emplace_back(1.0, 1.0);
        std::sort(points.begin(), points.end());
        double area = 0.0;
        for (std::size_t k = 1; k < points.size(); ++k)
            area += (points[k].first - points[k - 1].first) *
                    (points[k].second + points[k - 1].second) * 0.5;
        total += area;
    }
    return total / static_cast<double>(T);
}

}  // namespace dagr
