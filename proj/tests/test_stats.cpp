#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <set>

#include "dagr/stats.hpp"
#include "oracles.hpp"

using namespace dagr;

TEST_CASE("srcc: orderings, midranks, monotone invariance") {
    CHECK(srcc({1, 2, 3, 4}, {10, 20, 30, 40}) == doctest::Approx(1.0));
    CHECK(srcc({1, 2, 3, 4}, {9, 7, 5, 3}) == doctest::Approx(-1.0));

    const std::vector<double> a = {1, 2, 2, 4};
    const std::vector<double> b = {1, 3, 2, 4};
    CHECK(srcc(a, b) == doctest::Approx(oracle::spearman_naive(a, b)).epsilon(1e-12));

    RngState rng(1);
    for (int trial = 0; trial < 50; ++trial) {
        std::vector<double> x(8), y(8);
        for (double& v : x) v = rng.next_uniform();
        for (double& v : y) v = rng.next_uniform();
        const double base = srcc(x, y);
        CHECK(base == doctest::Approx(oracle::spearman_naive(x, y)).epsilon(1e-12));
        // strictly increasing transforms leave ranks alone
        std::vector<double> warped = x;
        for (double& v : warped) v = std::exp(3.0 * v) + v * v * v;
        CHECK(srcc(warped, y) == doctest::Approx(base).epsilon(1e-12));
    }
    CHECK_THROWS_AS(srcc({1, 1, 1}, {1, 2, 3}), Error);
    CHECK_THROWS_AS(srcc({1}, {1}), Error);
}

TEST_CASE("plcc: affine relations and oracle") {
    std::vector<double> truth = {1, 2, 3, 4, 5};
    std::vector<double> scaled(truth.size());
    for (std::size_t i = 0; i < truth.size(); ++i) scaled[i] = 2.0 * truth[i] + 3.0;
    CHECK(plcc(scaled, truth) == doctest::Approx(1.0));
    std::vector<double> negated(truth.size());
    for (std::size_t i = 0; i < truth.size(); ++i) negated[i] = -truth[i];
    CHECK(plcc(negated, truth) == doctest::Approx(-1.0));

    RngState rng(2);
    for (int trial = 0; trial < 20; ++trial) {
        std::vector<double> x(10), y(10);
        for (double& v : x) v = rng.next_uniform();
        for (double& v : y) v = rng.next_uniform();
        CHECK(plcc(x, y) == doctest::Approx(oracle::pearson_naive(x, y)).epsilon(1e-12));
        const double base = plcc(x, y);
        std::vector<double> affine = x;
        for (double& v : affine) v = 4.0 * v + 1.0;
        CHECK(plcc(affine, y) == doctest::Approx(base).epsilon(1e-12));
    }
    CHECK_THROWS_AS(plcc({2, 2, 2}, {1, 2, 3}), Error);
}

TEST_CASE("paired t-test") {
    PairedSamples same{{1, 2, 3, 4}, {1, 2, 3, 4}};
    CHECK(paired_t_test(same) == 1.0);

    // Student's sleep data (extra hours, drug 2 minus drug 1), the classic
    // published paired example: t = 4.0621, df = 9, two-sided p = 0.002833.
    PairedSamples sleep;
    sleep.a = {1.9, 0.8, 1.1, 0.1, -0.1, 4.4, 5.5, 1.6, 4.6, 3.4};
    sleep.b = {0.7, -1.6, -0.2, -1.2, -0.1, 3.4, 3.7, 0.8, 0.0, 2.0};
    CHECK(paired_t_test(sleep) == doctest::Approx(0.002833).epsilon(1e-3));

    // quadrature oracle over random instances
    RngState rng(3);
    for (int trial = 0; trial < 50; ++trial) {
        const std::size_t n = 4 + rng.next_u64() % 10;
        PairedSamples s;
        for (std::size_t i = 0; i < n; ++i) {
            s.a.push_back(rng.next_uniform() * 3.0);
            s.b.push_back(rng.next_uniform() * 3.0);
        }
        double mu = 0.0;
        for (std::size_t i = 0; i < n; ++i) mu += s.a[i] - s.b[i];
        mu /= static_cast<double>(n);
        double ss = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            const double d = s.a[i] - s.b[i] - mu;
            ss += d * d;
        }
        if (ss <= 0.0) continue;
        const double sd = std::sqrt(ss / static_cast<double>(n - 1));
        const double t = mu / (sd / std::sqrt(static_cast<double>(n)));
        CHECK(paired_t_test(s) ==
              doctest::Approx(oracle::t_two_sided_p_quadrature(t, static_cast<double>(n - 1)))
                  .epsilon(1e-9));
    }

    PairedSamples constant{{1, 2, 3}, {0, 1, 2}};  // all diffs 1, zero variance
    CHECK_THROWS_AS(paired_t_test(constant), Error);
    CHECK_THROWS_AS(paired_t_test(PairedSamples{{1}, {2}}), Error);
}

TEST_CASE("wilcoxon signed rank") {
    // symmetric +/- pairs of equal magnitude sit at the distribution center
    PairedSamples symmetric{{1, -1, 2, -2, 3, -3}, {0, 0, 0, 0, 0, 0}};
    CHECK(wilcoxon_signed_rank(symmetric) == doctest::Approx(1.0));

    // n=6 textbook-style case against the recursive enumeration oracle
    const std::vector<double> diffs = {1.5, -0.5, 2.5, 3.0, -1.0, 2.0};
    PairedSamples six;
    six.a = diffs;
    six.b.assign(diffs.size(), 0.0);
    CHECK(wilcoxon_signed_rank(six) ==
          doctest::Approx(oracle::wilcoxon_exact_recursive(diffs)).epsilon(1e-12));

    RngState rng(4);
    for (int trial = 0; trial < 50; ++trial) {
        const std::size_t n = 5 + rng.next_u64() % 8;  // 5..12, exact region
        std::vector<double> d(n);
        for (double& v : d) v = (rng.next_uniform() - 0.45) * 4.0;
        PairedSamples s;
        s.a = d;
        s.b.assign(n, 0.0);
        CHECK(wilcoxon_signed_rank(s) ==
              doctest::Approx(oracle::wilcoxon_exact_recursive(d)).epsilon(1e-12));
    }

    // exact vs normal approximation at the path boundary n = 15
    RngState rng2(5);
    for (int trial = 0; trial < 20; ++trial) {
        std::vector<double> d(15);
        for (double& v : d) v = (rng2.next_uniform() - 0.4) * 3.0;
        CHECK(std::abs(wilcoxon_exact_p(d) - wilcoxon_normal_p(d)) < 0.02);
    }

    // zero differences are dropped before ranking
    PairedSamples with_zeros{{1, 2, 3, 4, 5, 6, 0}, {0, 0, 0, 0, 0, 0, 0}};
    PairedSamples without{{1, 2, 3, 4, 5, 6}, {0, 0, 0, 0, 0, 0}};
    CHECK(wilcoxon_signed_rank(with_zeros) == wilcoxon_signed_rank(without));

    PairedSamples all_zero{{1, 2, 3, 4, 5}, {1, 2, 3, 4, 5}};
    CHECK_THROWS_AS(wilcoxon_signed_rank(all_zero), Error);
    PairedSamples too_few{{1, 2, 0, 0, 0}, {0, 0, 0, 0, 0}};
    CHECK_THROWS_AS(wilcoxon_signed_rank(too_few), Error);
}

TEST_CASE("flops: published operating points and scaling laws") {
    const auto table = flops_table();
    REQUIRE(table.size() == 4);
    const double dagr = table[0].second;
    const double vivit = table[1].second;
    const double fastvqa = table[2].second;
    const double fastvqa_m = table[3].second;
    CHECK(table[0].first == "dagr");
    CHECK(std::abs(dagr - 59.0) / 59.0 < 0.15);
    CHECK(std::abs(vivit - 141.0) / 141.0 < 0.15);
    CHECK(std::abs(fastvqa - 279.0) / 279.0 < 0.15);
    CHECK(std::abs(fastvqa_m - 46.0) / 46.0 < 0.15);
    CHECK(std::abs(vivit / dagr - 2.4) / 2.4 < 0.10);

    for (CostModel m :
         {CostModel::dagr, CostModel::vivit, CostModel::fastvqa, CostModel::fastvqa_m}) {
        CostModelConfig cfg = default_cost_config(m);
        const double base = flops_estimate_gflops(m, cfg);
        CHECK(base > 0.0);
        // exactly linear in the feature dimension
        CostModelConfig doubled = cfg;
        doubled.feature_dim *= 2;
        CHECK(flops_estimate_gflops(m, doubled) == doctest::Approx(2.0 * base).epsilon(1e-12));
    }

    // the dagr attention term scales exactly as T^2: att(T) = 2 f(T,N) - f(T,2N)
    CostModelConfig cfg = default_cost_config(CostModel::dagr);
    auto attention_part = [&](std::size_t frames) {
        CostModelConfig c1 = cfg, c2 = cfg;
        c1.frames = frames;
        c2.frames = frames;
        c2.tokens_per_frame *= 2;
        return 2.0 * flops_estimate_gflops(CostModel::dagr, c1) -
               flops_estimate_gflops(CostModel::dagr, c2);
    };
    CHECK(attention_part(16) == doctest::Approx(4.0 * attention_part(8)).epsilon(1e-9));
    CHECK(attention_part(24) == doctest::Approx(9.0 * attention_part(8)).epsilon(1e-9));

    CostModelConfig bad;
    bad.tokens_per_frame = 0;
    CHECK_THROWS_AS(flops_estimate_gflops(CostModel::dagr, bad), Error);
    CHECK(cost_model_from_string("vivit") == CostModel::vivit);
    CHECK_THROWS_AS(cost_model_from_string("nope"), Error);
}

TEST_CASE("kfold splits: disjoint cover, sizes, determinism") {
    std::vector<std::string> ids;
    for (int i = 0; i < 10; ++i) ids.push_back("v" + std::to_string(i));
    const auto folds = kfold_split(ids, 5, 42);
    REQUIRE(folds.size() == 5);
    std::set<std::string> seen;
    for (const Fold& fold : folds) {
        CHECK(fold.test.size() == 2);
        CHECK(fold.train.size() == 8);
        for (const std::string& id : fold.test) {
            CHECK(seen.insert(id).second);  // pairwise disjoint
            CHECK(std::find(fold.train.begin(), fold.train.end(), id) == fold.train.end());
        }
    }
    CHECK(seen.size() == 10);  // union covers the ids

    const auto replay = kfold_split(ids, 5, 42);
    for (std::size_t f = 0; f < 5; ++f) {
        CHECK(folds[f].train == replay[f].train);
        CHECK(folds[f].test == replay[f].test);
    }
    const auto other_seed = kfold_split(ids, 5, 43);
    bool any_differ = false;
    for (std::size_t f = 0; f < 5; ++f) any_differ = any_differ || folds[f].test != other_seed[f].test;
    CHECK(any_differ);

    // uneven sizes differ by at most one
    const auto uneven = kfold_split(ids, 3, 1);
    std::vector<std::size_t> sizes;
    for (const Fold& f : uneven) sizes.push_back(f.test.size());
    CHECK(*std::max_element(sizes.begin(), sizes.end()) -
              *std::min_element(sizes.begin(), sizes.end()) <=
          1);

    CHECK_THROWS_AS(kfold_split(ids, 11, 0), Error);
    CHECK_THROWS_AS(kfold_split(ids, 1, 0), Error);

    // cross-dataset mode: training subsample varies, test set is all of B
    std::vector<std::string> test_ids = {"b0", "b1", "b2"};
    const auto cross = cross_dataset_folds(ids, test_ids, 5, 7);
    for (const Fold& fold : cross) {
        CHECK(fold.test == test_ids);
        CHECK(fold.train.size() == 8);
    }
}

TEST_CASE("sweep_ablation emits the protocol rows") {
    auto runner = [](const std::string& key) {
        return std::make_pair(0.5 + 0.01 * static_cast<double>(key.size()), 0.25);
    };
    const auto n_rows = sweep_ablation(AblationAxis::token_count, {}, runner);
    REQUIRE(n_rows.size() == 4);
    CHECK(n_rows[0].config == "n_tok=2");
    CHECK(n_rows[1].config == "n_tok=4");
    CHECK(n_rows[2].config == "n_tok=8");
    CHECK(n_rows[3].config == "n_tok=16");

    const auto a_rows = sweep_ablation(AblationAxis::alpha, {0.0, 0.5, 1.0}, runner);
    REQUIRE(a_rows.size() == 3);
    CHECK(a_rows[0].config == "alpha=0");

    const auto c_rows = sweep_ablation(AblationAxis::components, {}, runner);
    REQUIRE(c_rows.size() == 4);
    CHECK(c_rows[3].config == "full");

    auto failing = [](const std::string&) -> std::pair<double, double> {
        throw Error("runner exploded");
    };
    CHECK_THROWS_WITH_AS(sweep_ablation(AblationAxis::token_count, {}, failing),
                         doctest::Contains("n_tok=2"), Error);
    CHECK_THROWS_AS(sweep_ablation(AblationAxis::alpha, {}, runner), Error);
    CHECK_THROWS_AS(sweep_ablation(AblationAxis::alpha, {1.5}, runner), Error);
}

TEST_CASE("register embedding export") {
    RngState rng(6);
    SaliencyNetConfig cfg;
    cfg.stage_channels = {2, 3};
    cfg.bottleneck_channels = 4;
    SaliencyPipeline pipeline(3, 4, 8, cfg, rng);

    RngState data_rng(7);
    std::vector<double> v(3 * 2 * 8 * 8);
    for (double& x : v) x = data_rng.next_uniform();
    VideoClip clip;
    clip.frames = Tensor::from_data({3, 2, 8, 8}, v);
    clip.source_id = "clip0";
    clip.frame_indices = {0, 1};

    const auto rows = register_token_rows(pipeline, clip);
    REQUIRE(rows.size() == 4);
    REQUIRE(rows[0].size() == 8);
    const auto pooled = export_register_embedding(pipeline, clip);
    REQUIRE(pooled.size() == 8);
    for (std::size_t j = 0; j < 8; ++j) {
        double hand = 0.0;
        for (std::size_t n = 0; n < 4; ++n) hand += rows[n][j];
        hand /= 4.0;
        CHECK(pooled[j] == doctest::Approx(hand).epsilon(1e-12));
    }

    // identical clips map to identical vectors
    VideoClip clone = clip;
    CHECK(export_register_embedding(pipeline, clone) == pooled);

    // a different clip conditions the readout differently
    std::vector<double> w(3 * 2 * 8 * 8);
    for (double& x : w) x = data_rng.next_uniform();
    VideoClip other;
    other.frames = Tensor::from_data({3, 2, 8, 8}, w);
    other.source_id = "clip1";
    other.frame_indices = {0, 1};
    CHECK(export_register_embedding(pipeline, other) != pooled);

    RngState rng0(8);
    SaliencyPipeline tokenless(3, 0, 8, cfg, rng0);
    CHECK_THROWS_AS(register_token_rows(tokenless, clip), Error);
}

TEST_CASE("midranks") {
    CHECK(midranks({3.0, 1.0, 2.0}) == std::vector<double>{3.0, 1.0, 2.0});
    CHECK(midranks({1.0, 2.0, 2.0, 4.0}) == std::vector<double>{1.0, 2.5, 2.5, 4.0});
    RngState rng(9);
    for (int trial = 0; trial < 20; ++trial) {
        std::vector<double> v(9);
        for (double& x : v) x = std::floor(rng.next_uniform() * 5.0);
        CHECK(midranks(v) == oracle::ranks_naive(v));
    }
}
