#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>

#include "ocd/error.hpp"
#include "ocd/similarity.hpp"
#include "ocd/synth.hpp"
#include "ocd/weight_cache.hpp"
#include "support.hpp"

using namespace ocd;
namespace fs = std::filesystem;

TEST_CASE("directional and patient similarity on the six-node tree") {
    const auto t = test::six_node_tree();
    const auto A = test::set_of(t, "A", {"a", "c"}), B = test::set_of(t, "B", {"a"});
    const auto Y = test::set_of(t, "Y", {"Y"});
    CHECK(directional_avg(t, B, B) == 1.0);
    CHECK(directional_avg(t, A, Y) == 0.0);
    CHECK(directional_avg(t, A, B) == doctest::Approx((1.0 + 0.25) / 2.0));
    CHECK(patient_similarity(t, A, A) == 1.0);
    CHECK(patient_similarity(t, A, Y) == 0.0);
    CHECK(patient_similarity(t, A, B) == doctest::Approx(0.5 * ((1.0 + 0.25) / 2.0 + 1.0)));
    CHECK(patient_similarity(t, A, B) == doctest::Approx(test::brute_patient_similarity(t, A, B)).epsilon(1e-15));
    DiagnosisSet empty{"E", {}};
    CHECK_ERROR_CODE(patient_similarity(t, A, empty), ErrorCode::EmptySet);
}

TEST_CASE("unknown codes are dropped and counted") {
    const auto t = test::six_node_tree();
    UnknownCodeStats st;
    std::vector<std::string> codes{"a", "zz", "a", "qq"};
    const auto s = make_diagnosis_set(t, "P", codes, &st);
    CHECK(s.codes.size() == 1);
    CHECK(st.dropped_codes == 2);
    CHECK(st.emptied_patients == 0);
    std::vector<std::string> bad{"zz"};
    const auto e = make_diagnosis_set(t, "Q", bad, &st);
    CHECK(e.codes.empty());
    CHECK(st.emptied_patients == 1);
    CHECK(pair_weight(t, s, e, WeightSpec::power(5), SimilarityKind::ontology) == 1.0f);
}

TEST_CASE("flat similarity is exact-code Jaccard") {
    const auto t = test::six_node_tree();
    const auto A = test::set_of(t, "A", {"a", "b"}), B = test::set_of(t, "B", {"b", "c", "Y"});
    CHECK(flat_similarity(A, B) == doctest::Approx(1.0 / 4.0));
    CHECK(flat_similarity(A, A) == 1.0);
}

TEST_CASE("weight families") {
    CHECK(weight(WeightSpec::power(5), 0.0) == 1.0);
    CHECK(weight(WeightSpec::power(5), 1.0) == 0.0);
    CHECK(weight(WeightSpec::power(5), 0.5) == 0.03125);
    CHECK(weight(WeightSpec::exponential(2), 0.5) == doctest::Approx(std::exp(-1.0)));
    CHECK(weight(WeightSpec::exponential(2), 0.0) == 1.0);
    CHECK(weight(WeightSpec::threshold(0.3), 0.29) == 1.0);
    CHECK(weight(WeightSpec::threshold(0.3), 0.3) == 0.0);
    CHECK(weight(WeightSpec::uniform(), 0.9) == 1.0);
    CHECK_ERROR_CODE(weight(WeightSpec::power(5), 1.5), ErrorCode::OutOfRangeSimilarity);
    CHECK_ERROR_CODE(weight(WeightSpec::power(5), -0.1), ErrorCode::OutOfRangeSimilarity);
    CHECK(WeightSpec::parse("power:5").gamma == 5.0);
    CHECK(WeightSpec::parse("threshold:0.25").family == WeightFamily::threshold);
    CHECK(WeightSpec::parse(WeightSpec::exponential(3).to_string()).gamma == 3.0);
    CHECK_ERROR_CODE(WeightSpec::parse("cubic:2"), ErrorCode::ConfigError);
    CHECK_ERROR_CODE(WeightSpec::parse("power:-1"), ErrorCode::ConfigError);
}

TEST_CASE("weight families are monotone, power ordered in gamma") {
    const std::vector<WeightSpec> specs{WeightSpec::power(0.5), WeightSpec::power(5), WeightSpec::exponential(1),
                                        WeightSpec::exponential(10), WeightSpec::threshold(0.4), WeightSpec::uniform()};
    for (const auto& spec : specs) {
        double prev = 2.0;
        for (int i = 0; i <= 1000; ++i) {
            const double w = weight(spec, i / 1000.0);
            CHECK(w <= prev);
            CHECK(w >= 0.0);
            CHECK(w <= 1.0);
            if (spec.family == WeightFamily::threshold) CHECK((w == 0.0 || w == 1.0));
            prev = w;
        }
    }
    for (int i = 1; i < 100; ++i) {
        const double s = i / 100.0;
        CHECK(weight(WeightSpec::power(7), s) <= weight(WeightSpec::power(2), s));
    }
}

TEST_CASE("patient similarity properties on random trees") {
    std::mt19937_64 rng(3);
    for (int trial = 0; trial < 10; ++trial) {
        const auto t = test::random_tree(200, rng);
        std::uniform_int_distribution<NodeId> pick(1, NodeId(t.size() - 1));
        auto random_set = [&](const char* id) {
            DiagnosisSet s{id, {}};
            const int m = 1 + int(rng() % 5);
            for (int i = 0; i < m; ++i) s.codes.push_back(pick(rng));
            std::sort(s.codes.begin(), s.codes.end());
            s.codes.erase(std::unique(s.codes.begin(), s.codes.end()), s.codes.end());
            return s;
        };
        for (int q = 0; q < 50; ++q) {
            const auto A = random_set("A"), B = random_set("B");
            const double s = patient_similarity(t, A, B);
            CHECK(s == patient_similarity(t, B, A));
            CHECK(s >= 0.0);
            CHECK(s <= 1.0);
            CHECK(patient_similarity(t, A, A) == 1.0);
            CHECK(s == doctest::Approx(test::brute_patient_similarity(t, A, B)).epsilon(1e-12));
        }
    }
}

TEST_CASE("batch weight matrix on a fixed four-patient batch") {
    const auto t = test::six_node_tree();
    const std::vector<DiagnosisSet> sets{test::set_of(t, "1", {"a"}), test::set_of(t, "2", {"b"}),
                                         test::set_of(t, "3", {"c"}), test::set_of(t, "4", {"Y"})};
    const auto m = batch_weight_matrix(t, sets, WeightSpec::power(5));
    CHECK(m.symmetric());
    for (std::size_t i = 0; i < 4; ++i) {
        CHECK(m(i, i) == 1.0f);
        for (std::size_t j = 0; j < 4; ++j)
            if (i != j) {
                const float expected = float(std::pow(1.0 - test::brute_patient_similarity(t, sets[i], sets[j]), 5.0));
                CHECK(m(i, j) == expected);
            }
    }
    // similarities 1/3, 1/4, 0, 2/3, 0, 0
    const auto h = weight_histogram(m, 10);
    CHECK(h.pairs == 6);
    CHECK(h.counts[0] == 1); // (1/3)^5
    CHECK(h.counts[1] == 1); // (2/3)^5
    CHECK(h.counts[2] == 1); // (3/4)^5
    CHECK(h.counts[9] == 3);
    CHECK(h.fraction_below_one == doctest::Approx(0.5));
    CHECK_ERROR_CODE(weight_histogram(m, 0), ErrorCode::ZeroBins);

    const auto u = batch_weight_matrix(t, sets, WeightSpec::uniform());
    for (std::size_t i = 0; i < 4; ++i)
        for (std::size_t j = 0; j < 4; ++j) CHECK(u(i, j) == 1.0f);
    CHECK(weight_histogram(u, 5).fraction_below_one == 0.0);

    const std::vector<DiagnosisSet> twins{test::set_of(t, "1", {"a", "c"}), test::set_of(t, "2", {"a", "c"})};
    const auto z = batch_weight_matrix(t, twins, WeightSpec::power(5));
    CHECK(z(0, 1) == 0.0f);
    CHECK(weight_histogram(z, 4).fraction_below_one == 1.0);

    const auto again = batch_weight_matrix(t, sets, WeightSpec::power(5));
    CHECK(again.values() == m.values());
}

TEST_CASE("cohort cache gather equals direct computation") {
    SynthConfig sc;
    sc.n_patients = 100;
    sc.seed = 5;
    const auto cohort = synthesize(sc);
    std::vector<DiagnosisSet> sets;
    for (const auto& p : cohort.bundle.patients) sets.push_back(make_diagnosis_set(cohort.tree, p.id, p.codes));
    const auto spec = WeightSpec::power(5);
    const auto cache = CohortWeightCache::build(cohort.tree, sets, spec);
    CHECK(cache.entries() == 100 * 99 / 2);
    const auto threaded = CohortWeightCache::build(cohort.tree, sets, spec, SimilarityKind::ontology,
                                                   CohortWeightCache::default_budget, 3);
    CHECK(threaded.full().values() == cache.full().values());

    std::mt19937_64 rng(9);
    for (int b = 0; b < 20; ++b) {
        std::vector<std::size_t> idx(100);
        std::iota(idx.begin(), idx.end(), 0);
        std::shuffle(idx.begin(), idx.end(), rng);
        idx.resize(1 + rng() % 32);
        std::vector<DiagnosisSet> batch;
        for (auto i : idx) batch.push_back(sets[i]);
        const auto direct = batch_weight_matrix(cohort.tree, batch, spec);
        const auto gathered = cache.gather(idx);
        CHECK(gathered.values() == direct.values());
        CHECK(gathered.order() == direct.order());
    }

    const auto dir = fs::temp_directory_path() / "ocd_test_cache";
    fs::create_directories(dir);
    const auto path = (dir / "w.cache").string();
    cache.save(path);
    const auto loaded = CohortWeightCache::load(path);
    CHECK(loaded.key() == cache.key());
    CHECK(loaded.full().values() == cache.full().values());

    // flip one payload byte
    {
        std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
        f.seekp(static_cast<std::streamoff>(fs::file_size(path) - 100));
        char ch = 0;
        f.read(&ch, 1);
        f.seekp(static_cast<std::streamoff>(fs::file_size(path) - 100));
        ch = char(ch ^ 0x5a);
        f.write(&ch, 1);
    }
    CHECK_ERROR_CODE(CohortWeightCache::load(path), ErrorCode::CacheCorrupt);
    fs::resize_file(path, 40);
    CHECK_ERROR_CODE(CohortWeightCache::load(path), ErrorCode::CacheCorrupt);
    {
        std::ofstream f(path, std::ios::binary);
        f << "NOTACACHEFILE-------------------------------------";
    }
    CHECK_ERROR_CODE(CohortWeightCache::load(path), ErrorCode::CacheCorrupt);
    fs::remove_all(dir);

    CHECK_ERROR_CODE(CohortWeightCache::build(cohort.tree, sets, spec, SimilarityKind::ontology, 100),
                     ErrorCode::BudgetExceeded);
}

TEST_CASE("cache keys and single-patient cohort") {
    const auto t = test::six_node_tree();
    const std::vector<DiagnosisSet> one{test::set_of(t, "1", {"a"})};
    const auto c = CohortWeightCache::build(t, one, WeightSpec::power(5));
    CHECK(c.entries() == 0);
    CHECK(c.size() == 1);
    CHECK(c.full().values() == std::vector<float>{1.0f});
    const std::vector<DiagnosisSet> two{test::set_of(t, "1", {"a"}), test::set_of(t, "2", {"b"})};
    CHECK(cohort_hash(t, one) != cohort_hash(t, two));
    CHECK(spec_hash(WeightSpec::power(5), SimilarityKind::ontology) !=
          spec_hash(WeightSpec::power(5), SimilarityKind::flat));
    CHECK(spec_hash(WeightSpec::power(5), SimilarityKind::ontology) !=
          spec_hash(WeightSpec::power(4), SimilarityKind::ontology));
}
