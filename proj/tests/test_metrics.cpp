#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "ocd/error.hpp"
#include "ocd/evaluation.hpp"
#include "ocd/metrics.hpp"
#include "ocd/synth.hpp"
#include "oracles.hpp"
#include "support.hpp"

using namespace ocd;
using namespace ocd::test;

namespace {

// Two-sided exact p by enumerating every split of the pooled sample.
double enumerated_p(const std::vector<double>& x, const std::vector<double>& y) {
    std::vector<double> pool(x);
    pool.insert(pool.end(), y.begin(), y.end());
    const std::size_t n = pool.size(), n1 = x.size();
    auto u_of = [&](const std::vector<bool>& in_x) {
        double u = 0.0;
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < n; ++j)
                if (in_x[i] && !in_x[j]) u += pool[i] > pool[j] ? 1.0 : pool[i] == pool[j] ? 0.5 : 0.0;
        return u;
    };
    std::vector<bool> obs(n, false);
    std::fill(obs.begin(), obs.begin() + std::ptrdiff_t(n1), true);
    const double u_obs = u_of(obs);
    std::vector<bool> mask(n, false);
    std::fill(mask.end() - std::ptrdiff_t(n1), mask.end(), true);
    double total = 0.0, le = 0.0, ge = 0.0;
    do {
        const double u = u_of(mask);
        total += 1.0;
        le += u <= u_obs + 1e-9;
        ge += u >= u_obs - 1e-9;
    } while (std::next_permutation(mask.begin(), mask.end()));
    return std::min(1.0, 2.0 * std::min(le, ge) / total);
}

} // namespace

TEST_CASE("auroc examples and errors") {
    const std::vector<double> s{0.1, 0.4, 0.35, 0.8};
    const std::vector<int> y{0, 0, 1, 1};
    CHECK(auroc(s, y) == 0.75);
    const std::vector<double> ordered{0.1, 0.2, 0.3, 0.4};
    CHECK(auroc(ordered, y) == 1.0);
    const std::vector<double> same(4, 0.3);
    CHECK(auroc(same, y) == 0.5);
    const std::vector<int> one{1, 1, 1, 1};
    CHECK_ERROR_CODE(auroc(s, one), ErrorCode::SingleClass);
    const std::vector<int> bad{0, 2, 1, 1};
    CHECK_ERROR_CODE(auroc(s, bad), ErrorCode::LabelOutOfRange);
}

TEST_CASE("auprc examples and errors") {
    const std::vector<int> y{0, 0, 1, 1};
    const std::vector<double> perfect{0.1, 0.2, 0.3, 0.4};
    CHECK(auprc(perfect, y) == 1.0);
    const std::vector<double> last{0.9, 0.8, 0.7, 0.1};
    const std::vector<int> y1{0, 0, 0, 1};
    CHECK(auprc(last, y1) == doctest::Approx(0.25));
    const std::vector<double> s{0.1, 0.4, 0.35, 0.8};
    CHECK(auprc(s, y) == doctest::Approx(sweep(s, y).second));
    // 0.8(+) then 0.4(-) then 0.35(+): AP = 0.5 * 1 + 0.5 * 2/3
    CHECK(auprc(s, y) == doctest::Approx(0.5 + 1.0 / 3.0));
    const std::vector<int> none{0, 0, 0, 0};
    CHECK_ERROR_CODE(auprc(s, none), ErrorCode::NoPositives);
}

TEST_CASE("metrics agree with pairwise and sweep oracles on random data with ties") {
    std::mt19937_64 rng(1);
    for (int trial = 0; trial < 500; ++trial) {
        const std::size_t n = 2 + rng() % 30;
        std::vector<double> s(n);
        std::vector<int> y(n);
        for (std::size_t i = 0; i < n; ++i) {
            s[i] = double(rng() % 6);
            y[i] = int(rng() % 2);
        }
        y[0] = 0;
        y[1] = 1;
        const auto [auc, ap] = sweep(s, y);
        CHECK(auroc(s, y) == doctest::Approx(pairwise_auroc(s, y)).epsilon(1e-12));
        CHECK(auroc(s, y) == doctest::Approx(auc).epsilon(1e-12));
        CHECK(auprc(s, y) == doctest::Approx(ap).epsilon(1e-12));
        std::vector<double> neg(n), mono(n);
        for (std::size_t i = 0; i < n; ++i) {
            neg[i] = -s[i];
            mono[i] = std::exp(0.3 * s[i]) - 7.0;
        }
        CHECK(auroc(mono, y) == auroc(s, y));
        CHECK(auprc(mono, y) == auprc(s, y));
        CHECK(auroc(neg, y) + auroc(s, y) == doctest::Approx(1.0).epsilon(1e-12));
    }
}

TEST_CASE("auroc equals U over n1 n2") {
    std::mt19937_64 rng(2);
    std::normal_distribution<double> g(0.0, 1.0);
    for (int trial = 0; trial < 200; ++trial) {
        const std::size_t n = 4 + rng() % 60;
        std::vector<double> s(n), pos, neg;
        std::vector<int> y(n);
        for (std::size_t i = 0; i < n; ++i) {
            y[i] = i < 2 ? int(i) : int(rng() % 2);
            s[i] = std::round(g(rng) * 4.0 + y[i]) / 4.0;
            (y[i] ? pos : neg).push_back(s[i]);
        }
        const auto mw = mann_whitney_u(pos, neg);
        CHECK(auroc(s, y) == doctest::Approx(mw.u / double(pos.size() * neg.size())).epsilon(1e-12));
    }
}

TEST_CASE("mann whitney exact and approximate") {
    const std::vector<double> x{1, 2, 3}, y{4, 5, 6};
    auto r = mann_whitney_u(x, y);
    CHECK(r.exact);
    CHECK(r.u == 0.0);
    CHECK(r.p == doctest::Approx(0.1).epsilon(1e-12));
    CHECK(mann_whitney_u(y, x).u == 9.0);
    const std::vector<double> m{3, 1, 4, 1, 5, 9, 2, 6};
    auto same = mann_whitney_u(m, m);
    CHECK(same.u == 32.0);
    CHECK(same.p == doctest::Approx(1.0));

    std::mt19937_64 rng(3);
    for (int trial = 0; trial < 60; ++trial) {
        std::vector<double> a(1 + rng() % 6), b(1 + rng() % 6);
        for (auto& v : a) v = double(rng() % 5);
        for (auto& v : b) v = double(rng() % 5) + 0.5 * double(rng() % 2);
        const auto res = mann_whitney_u(a, b);
        CHECK(res.exact);
        CHECK(res.p == doctest::Approx(enumerated_p(a, b)).epsilon(1e-9));
        CHECK(res.p >= 0.0);
        CHECK(res.p <= 1.0);
    }

    // normal approximation: independent tie-corrected z with continuity correction
    std::vector<double> big1(40), big2(30);
    for (auto& v : big1) v = double(rng() % 10);
    for (auto& v : big2) v = double(rng() % 10) + 1.0;
    const auto res = mann_whitney_u(big1, big2);
    CHECK_FALSE(res.exact);
    std::vector<double> pool(big1);
    pool.insert(pool.end(), big2.begin(), big2.end());
    std::sort(pool.begin(), pool.end());
    double ties = 0.0;
    for (std::size_t i = 0; i < pool.size();) {
        std::size_t j = i;
        while (j < pool.size() && pool[j] == pool[i]) ++j;
        const double t = double(j - i);
        ties += t * t * t - t;
        i = j;
    }
    const double n1 = 40, n2 = 30, n = 70;
    double u = 0.0;
    for (double a : big1)
        for (double b : big2) u += a > b ? 1.0 : a == b ? 0.5 : 0.0;
    const double sigma = std::sqrt(n1 * n2 / 12.0 * ((n + 1) - ties / (n * (n - 1))));
    const double diff = u - n1 * n2 / 2.0;
    const double z = (diff - (diff > 0 ? 0.5 : diff < 0 ? -0.5 : 0.0)) / sigma;
    CHECK(res.u == u);
    CHECK(res.z == doctest::Approx(z).epsilon(1e-12));
    CHECK(res.p == doctest::Approx(std::erfc(std::abs(z) / std::sqrt(2.0))).epsilon(1e-12));

    // identical large populations
    std::vector<double> c(50);
    for (auto& v : c) v = double(rng() % 7);
    const auto null = mann_whitney_u(c, c);
    CHECK(null.p > 0.95);

    const std::vector<double> empty;
    CHECK_ERROR_CODE(mann_whitney_u(empty, x), ErrorCode::EmptySample);
}

TEST_CASE("macro one-vs-rest") {
    const std::vector<int> y{0, 1, 0, 1, 1, 0};
    const std::vector<double> p1{0.2, 0.7, 0.4, 0.6, 0.3, 0.1};
    std::vector<double> two;
    for (double v : p1) {
        two.push_back(1.0 - v);
        two.push_back(v);
    }
    const auto m2 = macro_ovr(two, 2, y);
    CHECK(m2.macro_auroc == doctest::Approx(auroc(p1, y)));

    const std::vector<int> y3{0, 1, 2, 0, 1, 2};
    std::vector<double> onehot(18, 0.0);
    for (std::size_t i = 0; i < 6; ++i) onehot[i * 3 + std::size_t(y3[i])] = 1.0;
    CHECK(macro_ovr(onehot, 3, y3).macro_auroc == 1.0);
    CHECK(macro_ovr(onehot, 3, y3).macro_auprc == 1.0);

    const std::vector<double> s3{0.5, 0.3, 0.2, 0.2, 0.5, 0.3, 0.1, 0.1, 0.8,
                                 0.3, 0.4, 0.3, 0.6, 0.2, 0.2, 0.3, 0.3, 0.4};
    const auto m3 = macro_ovr(s3, 3, y3);
    double mean_auc = 0.0, mean_ap = 0.0;
    for (int c = 0; c < 3; ++c) {
        std::vector<double> col;
        std::vector<int> yc;
        for (std::size_t i = 0; i < 6; ++i) {
            col.push_back(s3[i * 3 + std::size_t(c)]);
            yc.push_back(y3[i] == c);
        }
        CHECK(m3.auroc[std::size_t(c)] == doctest::Approx(pairwise_auroc(col, yc)));
        CHECK(m3.auprc[std::size_t(c)] == doctest::Approx(sweep(col, yc).second));
        mean_auc += pairwise_auroc(col, yc) / 3.0;
        mean_ap += sweep(col, yc).second / 3.0;
    }
    CHECK(m3.macro_auroc == doctest::Approx(mean_auc));
    CHECK(m3.macro_auprc == doctest::Approx(mean_ap));

    // permute classes 0 -> 2, 1 -> 0, 2 -> 1
    const int perm[] = {2, 0, 1};
    std::vector<double> sp(18);
    std::vector<int> yp(6);
    for (std::size_t i = 0; i < 6; ++i) {
        yp[i] = perm[y3[i]];
        for (int c = 0; c < 3; ++c) sp[i * 3 + std::size_t(perm[c])] = s3[i * 3 + std::size_t(c)];
    }
    const auto mp = macro_ovr(sp, 3, yp);
    for (int c = 0; c < 3; ++c) CHECK(mp.auroc[std::size_t(perm[c])] == doctest::Approx(m3.auroc[std::size_t(c)]));
    CHECK(mp.macro_auroc == doctest::Approx(m3.macro_auroc));

    const std::vector<int> missing{0, 1, 0, 1, 1, 0};
    CHECK_ERROR_CODE(macro_ovr(s3, 3, missing), ErrorCode::MissingClass);
    const std::vector<int> out{0, 1, 2, 3, 1, 2};
    CHECK_ERROR_CODE(macro_ovr(s3, 3, out), ErrorCode::LabelOutOfRange);
}

TEST_CASE("bootstrap intervals") {
    const MetricFn metric = [](std::span<const double> s, std::span<const int> y) { return auroc(s, y); };
    std::vector<double> sep{0.1, 0.2, 0.3, 0.7, 0.8, 0.9};
    std::vector<int> y{0, 0, 0, 1, 1, 1};
    const auto flat = bootstrap_ci(metric, sep, 1, y, 300, 0.95, 1);
    CHECK(flat.low == 1.0);
    CHECK(flat.high == 1.0);
    CHECK(flat.redraws > 0);

    std::mt19937_64 rng(4);
    std::normal_distribution<double> g(0.0, 1.0);
    auto dataset = [&](std::size_t n, std::mt19937_64& r) {
        std::vector<double> s(n);
        std::vector<int> lab(n);
        for (std::size_t i = 0; i < n; ++i) {
            lab[i] = int(r() % 2);
            s[i] = g(r) + 0.8 * lab[i];
        }
        return std::make_pair(s, lab);
    };
    auto [s, lab] = dataset(200, rng);
    const auto a = bootstrap_ci(metric, s, 1, lab, 500, 0.95, 7);
    const auto b = bootstrap_ci(metric, s, 1, lab, 500, 0.95, 7);
    CHECK(a.low == b.low);
    CHECK(a.high == b.high);
    const double point = auroc(s, lab);
    CHECK(a.low <= point);
    CHECK(point <= a.high);
    const auto narrow = bootstrap_ci(metric, s, 1, lab, 500, 0.5, 7);
    CHECK(narrow.high - narrow.low <= a.high - a.low);

    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        std::mt19937_64 r(100 + seed);
        auto [s1, y1] = dataset(100, r);
        auto [s2, y2] = dataset(1000, r);
        const auto small = bootstrap_ci(metric, s1, 1, y1, 300, 0.95, seed);
        const auto large = bootstrap_ci(metric, s2, 1, y2, 300, 0.95, seed);
        CHECK(large.high - large.low <= small.high - small.low);
    }

    std::vector<double> lone{0.3, 0.4};
    std::vector<int> ly{0, 1};
    const auto tiny = bootstrap_ci(metric, lone, 1, ly, 200, 0.95, 1);
    CHECK(tiny.redraws > 0);
    CHECK(tiny.redraws <= 100 * 200);
    std::vector<int> single{1, 1};
    CHECK_ERROR_CODE(bootstrap_ci(metric, lone, 1, single, 5, 0.95, 1), ErrorCode::InsufficientLabels);
    CHECK_ERROR_CODE(bootstrap_ci(metric, lone, 1, ly, 0, 0.95, 1), ErrorCode::ConfigError);
}

TEST_CASE("evaluate_logits reports and formats") {
    std::mt19937_64 rng(5);
    std::normal_distribution<double> g(0.0, 1.0);
    const std::size_t n = 120;
    nn::Tensor logits({n, 1});
    std::vector<int> y(n);
    for (std::size_t i = 0; i < n; ++i) {
        y[i] = int(i % 3 == 0);
        logits[i] = g(rng) + 1.5 * y[i];
    }
    const auto r = evaluate_logits(logits, y, Task{"mortality", 2}, 200, 0.9, 3);
    CHECK(r.auroc == doctest::Approx(auroc(logits.values(), y)));
    CHECK(r.auroc_low <= r.auroc);
    CHECK(r.auroc <= r.auroc_high);
    CHECK(r.auprc_low <= r.auprc_high);
    const auto csv = format_report_csv(r);
    CHECK(csv.rfind("metric,class,value,ci_low,ci_high\n", 0) == 0);
    CHECK(format_report_table(r).find("90% interval") != std::string::npos);

    nn::Tensor multi({n, 3});
    std::vector<int> y3(n);
    for (std::size_t i = 0; i < n; ++i) {
        y3[i] = int(i % 3);
        for (std::size_t c = 0; c < 3; ++c) multi.at(i, c) = g(rng) + (int(c) == y3[i] ? 1.0 : 0.0);
    }
    const auto m = evaluate_logits(multi, y3, Task{"tri", 3}, 100, 0.95, 3);
    CHECK(m.per_class.size() == 3);
    CHECK(format_report_csv(m).find("auroc,2,") != std::string::npos);
}

TEST_CASE("linear probe") {
    std::mt19937_64 rng(6);
    std::normal_distribution<double> g(0.0, 0.3);
    auto make = [&](std::size_t n, std::vector<int>& y) {
        nn::Tensor e({n, 2});
        y.resize(n);
        for (std::size_t i = 0; i < n; ++i) {
            y[i] = int(rng() % 2);
            e.at(i, 0) = (y[i] ? 1.0 : -1.0) + g(rng);
            e.at(i, 1) = g(rng);
        }
        return e;
    };
    std::vector<int> ytr, yte;
    const auto tr = make(400, ytr), te = make(200, yte);
    ProbeConfig cfg;
    cfg.n_resamples = 100;
    const auto r = linear_probe(tr, ytr, te, yte, Task{"sep", 2}, 0.1, cfg);
    CHECK(r.report.auroc > 0.99);
    const auto again = linear_probe(tr, ytr, te, yte, Task{"sep", 2}, 0.1, cfg);
    CHECK(again.train_indices == r.train_indices);
    CHECK(r.train_indices.size() == doctest::Approx(40).epsilon(0.1));
    const auto all = linear_probe(tr, ytr, te, yte, Task{"sep", 2}, 1.0, cfg);
    CHECK(all.train_indices.size() == 400);

    const auto sub = stratified_subsample(ytr, 2, 0.001, 1);
    CHECK(sub.size() == 2);
    std::vector<int> only0(10, 0);
    CHECK_ERROR_CODE(stratified_subsample(only0, 2, 0.5, 1), ErrorCode::InsufficientLabels);
    CHECK_ERROR_CODE(stratified_subsample(ytr, 2, 0.0, 1), ErrorCode::ConfigError);

    // three classes
    nn::Tensor e3({300, 2});
    std::vector<int> y3(300);
    for (std::size_t i = 0; i < 300; ++i) {
        y3[i] = int(i % 3);
        e3.at(i, 0) = std::cos(2.0 * y3[i]) * 2.0 + g(rng);
        e3.at(i, 1) = std::sin(2.0 * y3[i]) * 2.0 + g(rng);
    }
    const auto m = linear_probe(e3, y3, e3, y3, Task{"tri", 3}, 0.5, cfg);
    CHECK(m.report.auroc > 0.95);
}

TEST_CASE("neighbour analysis") {
    SynthConfig sc;
    sc.n_patients = 200;
    sc.seed = 8;
    const auto cohort = synthesize(sc);
    std::vector<DiagnosisSet> sets;
    for (const auto& p : cohort.bundle.patients) sets.push_back(make_diagnosis_set(cohort.tree, p.id, p.codes));
    const std::size_t n = sets.size(), k = sc.n_clusters;
    std::mt19937_64 rng(9);
    std::normal_distribution<double> g(0.0, 1.0);
    nn::Tensor onehot({n, k}), noise({n, 8});
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t c = 0; c < k; ++c) onehot.at(i, c) = (cohort.cluster[i] == c ? 1.0 : 0.0) + 0.01 * g(rng);
        for (std::size_t c = 0; c < 8; ++c) noise.at(i, c) = g(rng);
    }
    for (std::size_t K : {1, 3, 5}) {
        const auto r = neighbor_analysis(onehot, sets, cohort.tree, K, 0, 1);
        CHECK(r.knn_mean > r.random_mean);
        CHECK(r.p_value < 0.01);
        CHECK(r.n_random == r.n_knn);
        CHECK(r.n_knn <= n * K);
        CHECK(r.n_knn >= n * K / 2);
        CHECK(r.effect_size_r == doctest::Approx(std::abs(r.z) / std::sqrt(double(r.n_knn + r.n_random))));
    }
    const auto null = neighbor_analysis(noise, sets, cohort.tree, 5, 0, 1);
    CHECK(null.p_value > 1e-4);
    CHECK(null.p_value <= 1.0);
    const auto more = neighbor_analysis(noise, sets, cohort.tree, 5, 300, 1);
    CHECK(more.n_random == 300);
    CHECK_ERROR_CODE(neighbor_analysis(onehot, sets, cohort.tree, n, 0, 1), ErrorCode::KTooLarge);
    const auto again = neighbor_analysis(onehot, sets, cohort.tree, 3, 0, 1);
    const auto rows = std::vector<NeighborAnalysis>{again};
    CHECK(format_neighbors_csv(rows) == format_neighbors_csv(std::vector<NeighborAnalysis>{
                                            neighbor_analysis(onehot, sets, cohort.tree, 3, 0, 1)}));
}
