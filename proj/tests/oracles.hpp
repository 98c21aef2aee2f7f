#pragma once

// Test-side reference implementations. Everything here recomputes results by
// the most direct route available (nested loops, exhaustive enumeration,
// quadrature) and stays independent of the library's code paths.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <numeric>
#include <stdexcept>
#include <vector>

namespace oracle {

// Direct cross-correlation, one output element at a time.
inline std::vector<double> conv3d_naive(const std::vector<double>& in, std::size_t B,
                                        std::size_t C, std::size_t T, std::size_t H,
                                        std::size_t W, const std::vector<double>& w,
                                        std::size_t O, std::size_t kt, std::size_t kh,
                                        std::size_t kw, const std::vector<double>& bias,
                                        std::size_t st, std::size_t sh, std::size_t sw,
                                        std::size_t pt, std::size_t ph, std::size_t pw) {
    const std::size_t To = (T + 2 * pt - kt) / st + 1;
    const std::size_t Ho = (H + 2 * ph - kh) / sh + 1;
    const std::size_t Wo = (W + 2 * pw - kw) / sw + 1;
    std::vector<double> out(B * O * To * Ho * Wo, 0.0);
    for (std::size_t b = 0; b < B; ++b)
        for (std::size_t o = 0; o < O; ++o)
            for (std::size_t to = 0; to < To; ++to)
                for (std::size_t ho = 0; ho < Ho; ++ho)
                    for (std::size_t wo = 0; wo < Wo; ++wo) {
                        double acc = bias[o];
                        for (std::size_t c = 0; c < C; ++c)
                            for (std::size_t zt = 0; zt < kt; ++zt)
                                for (std::size_t zh = 0; zh < kh; ++zh)
                                    for (std::size_t zw = 0; zw < kw; ++zw) {
                                        const long long ti = static_cast<long long>(to * st + zt) -
                                                             static_cast<long long>(pt);
                                        const long long hi = static_cast<long long>(ho * sh + zh) -
                                                             static_cast<long long>(ph);
                                        const long long wi = static_cast<long long>(wo * sw + zw) -
                                                             static_cast<long long>(pw);
                                        if (ti < 0 || hi < 0 || wi < 0 ||
                                            ti >= static_cast<long long>(T) ||
                                            hi >= static_cast<long long>(H) ||
                                            wi >= static_cast<long long>(W))
                                            continue;
                                        acc += in[(((b * C + c) * T + ti) * H + hi) * W + wi] *
                                               w[(((o * C + c) * kt + zt) * kh + zh) * kw + zw];
                                    }
                        out[(((b * O + o) * To + to) * Ho + ho) * Wo + wo] = acc;
                    }
    return out;
}

inline std::vector<double> conv2d_naive(const std::vector<double>& in, std::size_t B,
                                        std::size_t C, std::size_t H, std::size_t W,
                                        const std::vector<double>& w, std::size_t O,
                                        std::size_t kh, std::size_t kw,
                                        const std::vector<double>& bias, std::size_t sh,
                                        std::size_t sw, std::size_t ph, std::size_t pw) {
    // Reuse the 3-D oracle with a unit temporal axis.
    return conv3d_naive(in, B, C, 1, H, W, w, O, 1, kh, kw, bias, 1, sh, sw, 0, ph, pw);
}

inline double mean_of(const std::vector<double>& v) {
    double s = 0.0;
    for (double x : v) s += x;
    return s / static_cast<double>(v.size());
}

inline double pearson_naive(const std::vector<double>& x, const std::vector<double>& y) {
    const double mx = mean_of(x), my = mean_of(y);
    double cov = 0.0, sx = 0.0, sy = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        cov += (x[i] - mx) * (y[i] - my);
        sx += (x[i] - mx) * (x[i] - mx);
        sy += (y[i] - my) * (y[i] - my);
    }
    return cov / (std::sqrt(sx) * std::sqrt(sy));
}

// O(n^2) midranks: 1 + #smaller + (#equal - 1)/2.
inline std::vector<double> ranks_naive(const std::vector<double>& v) {
    std::vector<double> ranks(v.size());
    for (std::size_t i = 0; i < v.size(); ++i) {
        double smaller = 0.0, equal = 0.0;
        for (std::size_t j = 0; j < v.size(); ++j) {
            if (v[j] < v[i]) smaller += 1.0;
            if (v[j] == v[i]) equal += 1.0;
        }
        ranks[i] = 1.0 + smaller + (equal - 1.0) / 2.0;
    }
    return ranks;
}

inline double spearman_naive(const std::vector<double>& x, const std::vector<double>& y) {
    return pearson_naive(ranks_naive(x), ranks_naive(y));
}

inline double nss_naive(const std::vector<double>& map, const std::vector<double>& fix) {
    const double mu = mean_of(map);
    double var = 0.0;
    for (double m : map) var += (m - mu) * (m - mu);
    var /= static_cast<double>(map.size());
    const double sd = std::sqrt(var);
    double acc = 0.0, count = 0.0;
    for (std::size_t i = 0; i < map.size(); ++i)
        if (fix[i] != 0.0) {
            acc += (map[i] - mu) / sd;
            count += 1.0;
        }
    return acc / count;
}

// ROC area by direct recounting at every fixation-value threshold.
inline double auc_judd_naive(const std::vector<double>& map, const std::vector<double>& fix) {
    std::vector<double> fix_vals;
    double n_fix = 0.0, n_other = 0.0;
    for (std::size_t i = 0; i < map.size(); ++i)
        if (fix[i] != 0.0) {
            fix_vals.push_back(map[i]);
            n_fix += 1.0;
        } else {
            n_other += 1.0;
        }
    std::vector<std::pair<double, double>> pts;
    pts.emplace_back(0.0, 0.0);
    for (double t : fix_vals) {
        double tp = 0.0, fp = 0.0;
        for (std::size_t i = 0; i < map.size(); ++i) {
            if (map[i] >= t) {
                if (fix[i] != 0.0)
                    tp += 1.0;
                else
                    fp += 1.0;
            }
        }
        pts.emplace_back(fp / n_other, tp / n_fix);
    }
    pts.emplace_back(1.0, 1.0);
    std::sort(pts.begin(), pts.end());
    double area = 0.0;
    for (std::size_t i = 1; i < pts.size(); ++i)
        area += (pts[i].first - pts[i - 1].first) * (pts[i].second + pts[i - 1].second) * 0.5;
    return area;
}

inline double kl_naive(const std::vector<double>& p, const std::vector<double>& q) {
    double acc = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) acc += p[i] * std::log(p[i] / q[i]);
    return acc / static_cast<double>(p.size());
}

// Student-t two-sided p by Simpson quadrature over the density.
inline double t_two_sided_p_quadrature(double t, double dof) {
    const double a = std::abs(t);
    if (a == 0.0) return 1.0;
    const double log_norm = std::lgamma((dof + 1.0) / 2.0) - std::lgamma(dof / 2.0) -
                            0.5 * std::log(dof * 3.14159265358979323846);
    auto pdf = [&](double x) {
        return std::exp(log_norm - (dof + 1.0) / 2.0 * std::log1p(x * x / dof));
    };
    const int steps = 20000;  // even
    const double h = a / steps;
    double integral = pdf(0.0) + pdf(a);
    for (int i = 1; i < steps; ++i) integral += pdf(i * h) * (i % 2 ? 4.0 : 2.0);
    integral *= h / 3.0;
    return 1.0 - 2.0 * integral;
}

// Exhaustive sign-pattern enumeration with recursion (the library iterates a
// bitmask; this recomputes the distribution a different way).
inline double wilcoxon_exact_recursive(const std::vector<double>& diffs) {
    std::vector<double> nonzero;
    for (double d : diffs)
        if (d != 0.0) nonzero.push_back(d);
    std::vector<double> abs_vals(nonzero.size());
    for (std::size_t i = 0; i < nonzero.size(); ++i) abs_vals[i] = std::abs(nonzero[i]);
    const std::vector<double> ranks = ranks_naive(abs_vals);
    double w_plus = 0.0, total = 0.0;
    for (std::size_t i = 0; i < nonzero.size(); ++i) {
        total += ranks[i];
        if (nonzero[i] > 0.0) w_plus += ranks[i];
    }
    const double center = total / 2.0;
    const double obs = std::abs(w_plus - center);
    double hits = 0.0, all = 0.0;
    std::function<void(std::size_t, double)> recurse = [&](std::size_t i, double w) {
        if (i == ranks.size()) {
            all += 1.0;
            if (std::abs(w - center) >= obs - 1e-12) hits += 1.0;
            return;
        }
        recurse(i + 1, w);
        recurse(i + 1, w + ranks[i]);
    };
    recurse(0, 0.0);
    return hits / all;
}

// Bucket means for 1-D adaptive pooling.
inline std::vector<double> adaptive_buckets_naive(const std::vector<double>& v, std::size_t out) {
    std::vector<double> result(out);
    for (std::size_t i = 0; i < out; ++i) {
        const std::size_t lo = i * v.size() / out;
        const std::size_t hi = ((i + 1) * v.size() + out - 1) / out;
        double acc = 0.0;
        for (std::size_t j = lo; j < hi; ++j) acc += v[j];
        result[i] = acc / static_cast<double>(hi - lo);
    }
    return result;
}

inline double bilinear_sample(const std::vector<double>& img, std::size_t h, std::size_t w,
                              double sy, double sx) {
    sy = std::max(0.0, sy);
    sx = std::max(0.0, sx);
    const std::size_t y0 = std::min(static_cast<std::size_t>(sy), h - 1);
    const std::size_t x0 = std::min(static_cast<std::size_t>(sx), w - 1);
    const std::size_t y1 = std::min(y0 + 1, h - 1);
    const std::size_t x1 = std::min(x0 + 1, w - 1);
    const double fy = y1 == y0 ? 0.0 : sy - static_cast<double>(y0);
    const double fx = x1 == x0 ? 0.0 : sx - static_cast<double>(x0);
    const double top = img[y0 * w + x0] * (1.0 - fx) + img[y0 * w + x1] * fx;
    const double bot = img[y1 * w + x0] * (1.0 - fx) + img[y1 * w + x1] * fx;
    return top * (1.0 - fy) + bot * fy;
}

}  // namespace oracle
