#include "dagr/stats.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "dagr/ops.hpp"
#include "dagr/registers.hpp"

namespace dagr {

std::vector<double> midranks(const std::vector<double>& values) {
    const std::size_t n = values.size();
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return values[a] < values[b]; });
    std::vector<double> ranks(n);
    std::size_t i = 0;
    while (i < n) {
        std::size_t j = i;
        while (j + 1 < n && values[order[j + 1]] == values[order[i]]) ++j;
        const double rank = 0.5 * static_cast<double>(i + j) + 1.0;  // average of 1-based ranks
        for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = rank;
        i = j + 1;
    }
    return ranks;
}

double pearson(const std::vector<double>& x, const std::vector<double>& y) {
    if (x.size() != y.size()) throw Error("pearson: length mismatch");
    if (x.size() < 2) throw Error("pearson: need at least 2 samples");
    const double n = static_cast<double>(x.size());
    double mx = 0.0, my = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        mx += x[i];
        my += y[i];
    }
    mx /= n;
    my /= n;
    double cov = 0.0, sx = 0.0, sy = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double dx = x[i] - mx, dy = y[i] - my;
        cov += dx * dy;
        sx += dx * dx;
        sy += dy * dy;
    }
    if (sx <= 0.0 || sy <= 0.0) throw Error("pearson: zero variance input");
    return cov / (std::sqrt(sx) * std::sqrt(sy));
}

double srcc(const std::vector<double>& pred, const std::vector<double>& truth) {
    if (pred.size() != truth.size()) throw Error("srcc: length mismatch");
    if (pred.size() < 2) throw Error("srcc: need at least 2 samples");
    return pearson(midranks(pred), midranks(truth));
}

double plcc(const std::vector<double>& pred, const std::vector<double>& truth) {
    return pearson(pred, truth);
}

// ---- t distribution -------------------------------------------------------

namespace {

double beta_cont_frac(double a, double b, double x) {
    constexpr int kMaxIter = 300;
    constexpr double kEps = 3e-16;
    constexpr double kTiny = 1e-300;
    const double qab = a + b, qap = a + 1.0, qam = a - 1.0;
    double c = 1.0;
    double d = 1.0 - qab * x / qap;
    if (std::abs(d) < kTiny) d = kTiny;
    d = 1.0 / d;
    double h = d;
    for (int m = 1; m <= kMaxIter; ++m) {
        const double m2 = 2.0 * m;
        double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if (std::abs(d) < kTiny) d = kTiny;
        c = 1.0 + aa / c;
        if (std::abs(c) < kTiny) c = kTiny;
        d = 1.0 / d;
        h *= d * c;
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if (std::abs(d) < kTiny) d = kTiny;
        c = 1.0 + aa / c;
        if (std::abs(c) < kTiny) c = kTiny;
        d = 1.0 / d;
        const double del = d * c;
        h *= del;
        if (std::abs(del - 1.0) < kEps) break;
    }
    return h;
}

double reg_inc_beta(double a, double b, double x) {
    if (x <= 0.0) return 0.0;
    if (x >= 1.0) return 1.0;
    const double ln_bt = std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) +
                         a * std::log(x) + b * std::log(1.0 - x);
    const double bt = std::exp(ln_bt);
    if (x < (a + 1.0) / (a + b + 2.0)) return bt * beta_cont_frac(a, b, x) / a;
    return 1.0 - bt * beta_cont_frac(b, a, 1.0 - x) / b;
}

}  // namespace

double student_t_two_sided_p(double t, double dof) {
    if (dof <= 0.0) throw Error("t test: degrees of freedom must be > 0");
    if (t == 0.0) return 1.0;
    return reg_inc_beta(dof / 2.0, 0.5, dof / (dof + t * t));
}

double paired_t_test(const PairedSamples& samples) {
    samples.validate();
    const std::size_t n = samples.a.size();
    std::vector<double> diffs(n);
    for (std::size_t i = 0; i < n; ++i) diffs[i] = samples.a[i] - samples.b[i];
    double mu = 0.0;
    for (double d : diffs) mu += d;
    mu /= static_cast<double>(n);
    if (mu == 0.0) {
        bool all_equal = true;
        for (double d : diffs) all_equal = all_equal && d == diffs[0];
        if (all_equal) return 1.0;  // identical paired results, t = 0
    }
    double ss = 0.0;
    for (double d : diffs) ss += (d - mu) * (d - mu);
    if (ss <= 0.0) throw Error("t test: zero-variance differences");
    const double sd = std::sqrt(ss / static_cast<double>(n - 1));
    const double t = mu / (sd / std::sqrt(static_cast<double>(n)));
    return student_t_two_sided_p(t, static_cast<double>(n - 1));
}

// ---- Wilcoxon signed rank ---------------------------------------------------

namespace {

struct WilcoxonRanks {
    std::vector<double> ranks;  // midranks of |d| for nonzero differences
    double w_plus = 0.0;
};

WilcoxonRanks wilcoxon_ranks(const std::vector<double>& diffs) {
    std::vector<double> nonzero;
    for (double d : diffs)
        if (d != 0.0) nonzero.push_back(d);
    if (nonzero.size() < 5)
        throw Error("wilcoxon: need at least 5 nonzero differences, got " +
                    std::to_string(nonzero.size()));
    std::vector<double> abs_vals(nonzero.size());
    for (std::size_t i = 0; i < nonzero.size(); ++i) abs_vals[i] = std::abs(nonzero[i]);
    WilcoxonRanks out;
    out.ranks = midranks(abs_vals);
    for (std::size_t i = 0; i < nonzero.size(); ++i)
        if (nonzero[i] > 0.0) out.w_plus += out.ranks[i];
    return out;
}

}  // namespace

double wilcoxon_exact_p(const std::vector<double>& diffs) {
    const WilcoxonRanks wr = wilcoxon_ranks(diffs);
    const std::size_t n = wr.ranks.size();
    if (n > 20) throw Error("wilcoxon: exact path limited to n <= 20");
    double total_rank = 0.0;
    for (double r : wr.ranks) total_rank += r;
    const double center = total_rank / 2.0;
    const double obs_dev = std::abs(wr.w_plus - center);
    const std::uint64_t patterns = std::uint64_t{1} << n;
    std::uint64_t hits = 0;
    for (std::uint64_t mask = 0; mask < patterns; ++mask) {
        double w = 0.0;
        for (std::size_t i = 0; i < n; ++i)
            if (mask & (std::uint64_t{1} << i)) w += wr.ranks[i];
        if (std::abs(w - center) >= obs_dev - 1e-12) ++hits;
    }
    return static_cast<double>(hits) / static_cast<double>(patterns);
}

double wilcoxon_normal_p(const std::vector<double>& diffs) {
    const WilcoxonRanks wr = wilcoxon_ranks(diffs);
    const double n = static_cast<double>(wr.ranks.size());
    const double mu = n * (n + 1.0) / 4.0;
    double sigma2 = n * (n + 1.0) * (2.0 * n + 1.0) / 24.0;
    // tie correction: subtract sum(t^3 - t)/48 over tie groups
    std::vector<double> sorted = wr.ranks;
    std::sort(sorted.begin(), sorted.end());
    std::size_t i = 0;
    while (i < sorted.size()) {
        std::size_t j = i;
        while (j + 1 < sorted.size() && sorted[j + 1] == sorted[i]) ++j;
        const double t = static_cast<double>(j - i + 1);
        sigma2 -= (t * t * t - t) / 48.0;
        i = j + 1;
    }
    if (sigma2 <= 0.0) throw Error("wilcoxon: degenerate rank variance");
    double dev = wr.w_plus - mu;
    const double cc = 0.5 * (dev > 0.0 ? 1.0 : (dev < 0.0 ? -1.0 : 0.0));
    const double z = (dev - cc) / std::sqrt(sigma2);
    const double p = std::erfc(std::abs(z) / std::sqrt(2.0));
    return std::min(1.0, p);
}

double wilcoxon_signed_rank(const PairedSamples& samples) {
    samples.validate();
    std::vector<double> diffs(samples.a.size());
    for (std::size_t i = 0; i < diffs.size(); ++i) diffs[i] = samples.a[i] - samples.b[i];
    bool any_nonzero = false;
    for (double d : diffs) any_nonzero = any_nonzero || d != 0.0;
    if (!any_nonzero) throw Error("wilcoxon: all differences are zero");
    std::size_t n = 0;
    for (double d : diffs)
        if (d != 0.0) ++n;
    return n <= 15 ? wilcoxon_exact_p(diffs) : wilcoxon_normal_p(diffs);
}

// ---- cost models ------------------------------------------------------------

std::string to_string(CostModel model) {
    switch (model) {
        case CostModel::dagr: return "dagr";
        case CostModel::vivit: return "vivit";
        case CostModel::fastvqa: return "fastvqa";
        case CostModel::fastvqa_m: return "fastvqa_m";
    }
    throw Error("cost model: bad enum value");
}

CostModel cost_model_from_string(const std::string& name) {
    if (name == "dagr") return CostModel::dagr;
    if (name == "vivit") return CostModel::vivit;
    if (name == "fastvqa") return CostModel::fastvqa;
    if (name == "fastvqa_m") return CostModel::fastvqa_m;
    throw Error("cost model: unknown model '" + name + "'");
}

void CostModelConfig::validate() const {
    if (frames < 1 || tokens_per_frame < 1 || feature_dim < 1 || fragments < 1)
        throw Error("cost model: all config values must be positive");
}

CostModelConfig default_cost_config(CostModel model) {
    CostModelConfig cfg;
    switch (model) {
        case CostModel::dagr:
            cfg.frames = 8;
            cfg.tokens_per_frame = 224 * 398;
            cfg.feature_dim = 64;
            break;
        case CostModel::vivit:
            cfg.frames = 8;
            cfg.tokens_per_frame = 224 * 224;
            cfg.feature_dim = 768;
            break;
        case CostModel::fastvqa:
            cfg.frames = 8;
            cfg.tokens_per_frame = 32 * 32;
            cfg.feature_dim = 96;
            cfg.fragments = 7;
            break;
        case CostModel::fastvqa_m:
            cfg.frames = 8;
            cfg.tokens_per_frame = 32 * 32;
            cfg.feature_dim = 96;
            cfg.fragments = 4;
            break;
    }
    return cfg;
}

namespace {

// dagr: conv stacks over all pixels (saliency UNet3D ~8 effective 27-tap
// layers, residual spatial encoder ~16) plus a 2-layer temporal transformer.
constexpr double kDagrSaliencyDepth = 8.0 * 27.0;
constexpr double kDagrSpatialDepth = 16.0 * 27.0;
constexpr double kDagrTemporalLayers = 2.0;

// vivit: factorized 12-layer encoder per frame over 16x16-patch tokens with
// calibrated reference hidden width, plus the temporal stack over T tokens.
constexpr double kVivitLayers = 12.0;
constexpr double kVivitPatch = 16.0;
constexpr double kVivitRefWidth = 384.0;

// fastvqa: per-fragment backbone cost plus cross-fragment attention.
constexpr double kFragmentCost = 1.0e6;     // MACs per fragment per d unit
constexpr double kFragmentPairCost = 27.5e3;  // MACs per fragment pair per d unit

double transformer_stack_flops(double tokens, double d, double layers, double ref_width) {
    const double attention = 4.0 * tokens * tokens * d;          // QK + AV, 2 FLOPs/MAC
    const double linear = 24.0 * tokens * d * ref_width;          // qkv+proj+ffn projections
    return layers * (attention + linear);
}

}  // namespace

double flops_estimate_gflops(CostModel model, const CostModelConfig& cfg) {
    cfg.validate();
    const double t = static_cast<double>(cfg.frames);
    const double n = static_cast<double>(cfg.tokens_per_frame);
    const double d = static_cast<double>(cfg.feature_dim);
    const double g = static_cast<double>(cfg.fragments);
    double flops = 0.0;
    switch (model) {
        case CostModel::dagr: {
            const double spatial = 2.0 * t * n * d * (kDagrSaliencyDepth + kDagrSpatialDepth);
            const double attention = 4.0 * kDagrTemporalLayers * t * t * d;
            flops = spatial + attention;
            break;
        }
        case CostModel::vivit: {
            const double tokens = n / (kVivitPatch * kVivitPatch);
            flops = t * transformer_stack_flops(tokens, d, kVivitLayers, kVivitRefWidth) +
                    transformer_stack_flops(t, d, kVivitLayers, kVivitRefWidth);
            break;
        }
        case CostModel::fastvqa:
        case CostModel::fastvqa_m: {
            const double local = 2.0 * t * g * g * d * kFragmentCost;
            const double attention = 4.0 * t * g * g * g * g * d * kFragmentPairCost;
            flops = local + attention;
            break;
        }
    }
    return flops / 1e9;
}

std::vector<std::pair<std::string, double>> flops_table() {
    std::vector<std::pair<std::string, double>> out;
    for (CostModel m :
         {CostModel::dagr, CostModel::vivit, CostModel::fastvqa, CostModel::fastvqa_m})
        out.emplace_back(to_string(m), flops_estimate_gflops(m, default_cost_config(m)));
    return out;
}

// ---- experiment harness -------------------------------------------------------

std::vector<Fold> kfold_split(const std::vector<std::string>& ids, std::size_t k,
                              std::uint64_t seed) {
    if (k < 2) throw Error("kfold: k must be >= 2");
    if (ids.size() < k) throw Error("kfold: k exceeds id count");
    std::vector<std::string> shuffled = ids;
    RngState rng(seed);
    for (std::size_t i = shuffled.size(); i > 1; --i)
        std::swap(shuffled[i - 1], shuffled[rng.next_u64() % i]);
    const std::size_t base = shuffled.size() / k;
    const std::size_t extra = shuffled.size() % k;
    std::vector<Fold> folds;
    std::size_t cursor = 0;
    for (std::size_t f = 0; f < k; ++f) {
        const std::size_t size = base + (f < extra ? 1 : 0);
        Fold fold;
        fold.test.assign(shuffled.begin() + static_cast<std::ptrdiff_t>(cursor),
                         shuffled.begin() + static_cast<std::ptrdiff_t>(cursor + size));
        for (std::size_t i = 0; i < shuffled.size(); ++i)
            if (i < cursor || i >= cursor + size) fold.train.push_back(shuffled[i]);
        folds.push_back(std::move(fold));
        cursor += size;
    }
    return folds;
}

std::vector<Fold> cross_dataset_folds(const std::vector<std::string>& train_ids,
                                      const std::vector<std::string>& test_ids, std::size_t k,
                                      std::uint64_t seed) {
    std::vector<Fold> folds = kfold_split(train_ids, k, seed);
    for (Fold& fold : folds) fold.test = test_ids;
    return folds;
}

std::vector<AblationRow> sweep_ablation(
    AblationAxis axis, const std::vector<double>& alpha_grid,
    const std::function<std::pair<double, double>(const std::string&)>& runner) {
    std::vector<std::string> keys;
    switch (axis) {
        case AblationAxis::token_count:
            keys = {"n_tok=2", "n_tok=4", "n_tok=8", "n_tok=16"};
            break;
        case AblationAxis::alpha: {
            if (alpha_grid.empty()) throw Error("sweep: alpha grid is empty");
            for (double a : alpha_grid) {
                if (a < 0.0 || a > 1.0) throw Error("sweep: alpha values must lie in [0,1]");
                char buf[32];
                std::snprintf(buf, sizeof(buf), "alpha=%g", a);
                keys.push_back(buf);
            }
            break;
        }
        case AblationAxis::components:
            keys = {"spatial_only", "temporal_only", "spatial_saliency", "full"};
            break;
    }
    std::vector<AblationRow> rows;
    for (const std::string& key : keys) {
        try {
            auto [s, p] = runner(key);
            rows.push_back({key, s, p});
        } catch (const std::exception& e) {
            throw Error("sweep '" + key + "': " + e.what());
        }
    }
    return rows;
}

std::vector<std::vector<double>> register_token_rows(const SaliencyPipeline& pipeline,
                                                     const VideoClip& clip) {
    if (!pipeline.tokens()) throw Error("register embeddings: pipeline has no tokens");
    validate_clip(clip);
    const RegisterTokens& tokens = *pipeline.tokens();
    const std::size_t n = tokens.count(), d = tokens.dim();
    const Tensor& video = clip.frames;
    Tensor projected =
        project_tokens(tokens, video.extent(1), video.extent(2), video.extent(3)).detached();
    Tensor aug = augment_input(video, projected);
    Tensor batched = reshape(aug, {1, aug.extent(0), aug.extent(1), aug.extent(2), aug.extent(3)});
    auto [z, skips] = pipeline.net().encode(batched);
    (void)z;
    const auto& act = skips.front().data();
    double act_mean = 0.0;
    for (double v : act) act_mean += v;
    act_mean /= static_cast<double>(act.size());

    std::vector<std::vector<double>> rows(n, std::vector<double>(d));
    const auto& embeddings = tokens.R.data();  // [1,N,d,1,1] row-major
    for (std::size_t tok = 0; tok < n; ++tok) {
        const double field = projected.at({tok, 0, 0, 0});
        for (std::size_t j = 0; j < d; ++j)
            rows[tok][j] = embeddings[tok * d + j] + act_mean * field;
    }
    return rows;
}

std::vector<double> export_register_embedding(const SaliencyPipeline& pipeline,
                                              const VideoClip& clip) {
    const auto rows = register_token_rows(pipeline, clip);
    std::vector<double> out(rows.front().size(), 0.0);
    for (const auto& row : rows)
        for (std::size_t j = 0; j < out.size(); ++j) out[j] += row[j];
    for (double& v : out) v /= static_cast<double>(rows.size());
    return out;
}

}  // namespace dagr
