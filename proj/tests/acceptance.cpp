#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include <algorithm>
#include <chrono>
#include <filesystem>
#include <fstream>
#include <functional>
#include <set>
#include <sstream>

#include "ocd/contrastive.hpp"
#include "ocd/distill.hpp"
#include "ocd/error.hpp"
#include "ocd/metrics.hpp"
#include "ocd/pipeline.hpp"
#include "ocd/util.hpp"
#include "oracles.hpp"
#include "support.hpp"

using namespace ocd;
using namespace ocd::test;
using nn::Tensor;
using nn::Var;
namespace fs = std::filesystem;

namespace {

struct Outcome {
    bool pass = false;
    std::string detail;
};

struct Criterion {
    int id;
    const char* name;
    std::function<Outcome()> run;
    double budget_seconds = 0.0; // 0 = no runtime bound
};

fs::path g_work;

double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::vector<std::vector<std::string>> read_csv(const fs::path& path) {
    std::ifstream in(path);
    if (!in) fail(ErrorCode::MissingInput, "cannot open " + path.string());
    std::vector<std::vector<std::string>> rows;
    for (std::string line; std::getline(in, line);) {
        if (line.empty() || line[0] == '#') continue;
        rows.push_back(split(line, ','));
    }
    return rows;
}

double report_auroc(const fs::path& csv) {
    for (const auto& r : read_csv(csv))
        if (r.size() >= 3 && r[0] == "auroc" && r[1] == "macro") return parse_real(r[2], "auroc");
    fail(ErrorCode::FormatError, "no auroc row in " + csv.string());
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

double median(std::vector<double> v) {
    std::sort(v.begin(), v.end());
    const auto n = v.size();
    return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

std::string join(const std::vector<double>& v) {
    std::string out;
    for (std::size_t i = 0; i < v.size(); ++i) out += fmt::format("{}{:.4f}", i ? " " : "", v[i]);
    return out;
}

RunConfig desk_config(std::uint64_t seed, const fs::path& out) {
    RunConfig c;
    c.set("run.seed", std::to_string(seed));
    c.set("run.output_dir", out.string());
    return c;
}

// --------------------------------------------------------------------------

Outcome similarity_oracle() {
    std::mt19937_64 rng(20240101);
    std::size_t pairs = 0, mismatches = 0, largest = 0;
    double worst = 0.0;
    for (int t = 0; t < 50; ++t) {
        const std::size_t n = 2 + rng() % 4999;
        largest = std::max(largest, n);
        auto make = [&]() {
            if (t % 5 != 4) return random_tree(n, rng);
            // deep trees: each node hangs under one of the 20 most recent nodes
            std::vector<OntologyRecord> rec{{"n0", "", ""}};
            for (std::size_t i = 1; i < n; ++i) {
                const std::size_t lo = i > 20 ? i - 20 : 0;
                std::uniform_int_distribution<std::size_t> pick(lo, i - 1);
                rec.push_back({"n" + std::to_string(i), "n" + std::to_string(pick(rng)), ""});
            }
            return OntologyTree::from_records(std::move(rec));
        };
        const auto tree = make();
        std::uniform_int_distribution<NodeId> node(0, NodeId(n - 1));
        for (int k = 0; k < 10000; ++k) {
            const NodeId a = node(rng), b = k % 10 == 0 ? a : node(rng);
            const double got = tree.code_similarity({a, b});
            double want = 1.0;
            if (a != b) {
                const auto [shared, uni] = path_counts(tree, a, b);
                if (uni) want = double(shared) / double(uni);
            }
            const double diff = std::abs(got - want);
            worst = std::max(worst, diff);
            mismatches += diff > 1e-12;
            ++pairs;
        }
    }
    return {mismatches == 0,
            fmt::format("{} pairs over 50 trees (largest {} nodes), {} mismatches, max |diff| {:.3g}", pairs, largest,
                        mismatches, worst)};
}

Outcome loss_reductions() {
    std::mt19937_64 rng(7);
    double worst = 0.0;
    std::size_t zero_failures = 0;
    for (int t = 0; t < 100; ++t) {
        const std::size_t b = 1 + rng() % 16, d = 2 + rng() % 15;
        const double tau = std::uniform_real_distribution<double>(0.05, 2.0)(rng);
        const auto e = unit_rows(2 * b, d, rng);
        std::vector<std::string> ids(b);
        for (std::size_t i = 0; i < b; ++i) ids[i] = std::to_string(i);
        const double got = ow_ntxent(Var::constant(e), WeightMatrix::filled(ids, 1.0f), tau).value().item();
        const double want = plain_ntxent(e, tau);
        worst = std::max(worst, std::abs(got - want) / std::max(1.0, std::abs(want)));
        zero_failures += ow_ntxent(Var::constant(e), WeightMatrix::filled(ids, 0.0f), tau).value().item() != 0.0;
    }
    return {worst < 1e-12 && zero_failures == 0,
            fmt::format("100 batches: max rel diff vs plain NT-Xent {:.3g}; zero-weight batches not exactly 0: {}", worst,
                        zero_failures)};
}

Outcome gradient_suite() {
    SynthConfig sc;
    sc.n_patients = 24;
    sc.n_clusters = 2;
    sc.tree_depth = 3;
    sc.tree_branching = 2;
    sc.horizon_hours = 5;
    sc.channels = 3;
    sc.note_dim = 4;
    sc.seed = 11;
    const auto cohort = synthesize(sc);
    const auto stats = training_stats(cohort.bundle);
    const auto series = normalized_series(cohort.bundle, stats);
    EncoderConfig enc;
    enc.layers = 1;
    enc.heads = 2;
    enc.model_dim = 8;
    enc.ffn_dim = 8;
    enc.input_channels = 6;
    enc.max_timesteps = 5;
    const std::size_t B = 4;

    double worst_a = 0.0, worst_b = 0.0, worst_c = 0.0;
    std::mt19937_64 rng(12);

    // (a) encoder + projection + weighted contrastive loss
    AugmentConfig aug;
    for (Pooling pooling : {Pooling::mean, Pooling::cls}) {
        enc.pooling = pooling;
        nn::ParamSet p;
        init_encoder(p, enc, rng);
        init_projection_head(p, enc.model_dim, enc.model_dim, rng);
        std::vector<VitalsSeries> views;
        for (int v = 0; v < 2; ++v)
            for (std::size_t i = 0; i < B; ++i) views.push_back(augment(series[i], aug, rng));
        const auto x = Var::constant(input_batch(views));
        const auto W = random_weights(B, rng, 0.25);
        auto vars = p.vars();
        for (double tau : {0.5, 1.0})
            worst_a = std::max(worst_a, nn::grad_check([&] {
                                   return ow_ntxent(project_contrastive(p, encode_vitals(enc, p, x)), W, tau);
                               }, vars));
    }
    enc.pooling = Pooling::mean;

    std::vector<VitalsSeries> batch(series.begin(), series.begin() + B);
    const auto x = Var::constant(input_batch(batch));
    Tensor notes({B, sc.note_dim});
    for (std::size_t i = 0; i < B; ++i)
        for (std::size_t k = 0; k < sc.note_dim; ++k) notes.at(i, k) = cohort.bundle.patients[i].note_raw[k];
    const auto nv = Var::constant(notes);

    for (const Task& task : {Task{"mortality", 2}, Task{"tri", 3}}) {
        std::vector<int> y(B);
        for (std::size_t i = 0; i < B; ++i) y[i] = int(i % std::size_t(task.classes));

        // (b) teacher hard loss
        nn::ParamSet tp;
        init_encoder(tp, enc, rng);
        init_note_adapter(tp, sc.note_dim, enc.model_dim, rng);
        init_classifier(tp, enc.model_dim, std::size_t(task.outputs()), rng);
        auto tvars = tp.vars();
        worst_b = std::max(worst_b, nn::grad_check([&] { return hard_loss(teacher_forward(enc, tp, nv, x), y, task); }, tvars));
        const Tensor zt = teacher_forward(enc, tp, nv, x).value();

        // (c) student hard + lambda * KD
        nn::ParamSet sp;
        init_encoder(sp, enc, rng);
        init_classifier(sp, enc.model_dim, std::size_t(task.outputs()), rng);
        auto svars = sp.vars();
        for (double lambda : {1.0, 5.0, 10.0})
            for (double T : {1.0, 2.0, 5.0})
                worst_c = std::max(worst_c, nn::grad_check([&] {
                                       const auto zs = student_forward(enc, sp, x);
                                       return hard_loss(zs, y, task) + nn::scale(kd_loss(zt, zs, T, task), lambda);
                                   }, svars));
    }
    const double worst = std::max({worst_a, worst_b, worst_c});
    return {worst < 1e-4, fmt::format("max rel error: encoder+contrastive {:.2e}, teacher {:.2e}, student {:.2e}", worst_a,
                                      worst_b, worst_c)};
}

Outcome monotonicity() {
    std::mt19937_64 rng(13);
    std::size_t violations = 0;
    double min_gain = std::numeric_limits<double>::infinity();
    for (int t = 0; t < 1000; ++t) {
        const std::size_t b = 2 + rng() % 10, d = 2 + rng() % 8;
        const double tau = std::uniform_real_distribution<double>(0.1, 2.0)(rng);
        const auto e = Var::constant(unit_rows(2 * b, d, rng));
        auto W = random_weights(b, rng, 0.2);
        const std::size_t i = rng() % b;
        std::size_t j = rng() % (b - 1);
        if (j >= i) ++j;
        const double before = ow_ntxent(e, W, tau).value().item();
        // raise w_ij somewhere into (w_ij, 1]
        const float u = std::uniform_real_distribution<float>(0.01f, 1.0f)(rng);
        W(i, j) = W(j, i) = W(i, j) + u * (1.0f - W(i, j));
        const double after = ow_ntxent(e, W, tau).value().item();
        violations += after < before;
        min_gain = std::min(min_gain, after - before);
    }
    return {violations == 0, fmt::format("1000 instances, {} decreases, smallest change {:.3g}", violations, min_gain)};
}

// All datasets of n examples up to reordering: a sequence of tie groups in
// increasing score, each holding some negatives and some positives.
void tie_groups(std::size_t left, std::vector<std::pair<int, int>>& groups,
                const std::function<void(const std::vector<std::pair<int, int>>&)>& visit) {
    if (left == 0) {
        visit(groups);
        return;
    }
    for (std::size_t size = 1; size <= left; ++size)
        for (std::size_t pos = 0; pos <= size; ++pos) {
            groups.emplace_back(int(size - pos), int(pos));
            tie_groups(left - size, groups, visit);
            groups.pop_back();
        }
}

Outcome metric_oracles() {
    std::mt19937_64 rng(14);
    double worst_u = 0.0;
    for (int t = 0; t < 1000; ++t) {
        const std::size_t n = 2 + rng() % 199;
        const int levels = 1 + int(rng() % 50);
        std::vector<double> s(n), pos, neg;
        std::vector<int> y(n);
        for (std::size_t i = 0; i < n; ++i) {
            y[i] = i < 2 ? int(i) : int(rng() % 2);
            s[i] = double(rng() % std::uint64_t(levels)) + 0.3 * y[i];
            (y[i] ? pos : neg).push_back(s[i]);
        }
        const double u = mann_whitney_u(pos, neg).u;
        worst_u = std::max(worst_u, std::abs(auroc(s, y) - u / double(pos.size() * neg.size())));
    }

    std::size_t datasets = 0, failures = 0;
    double worst_roc = 0.0, worst_ap = 0.0;
    for (std::size_t n = 1; n <= 8; ++n) {
        std::vector<std::pair<int, int>> groups;
        tie_groups(n, groups, [&](const std::vector<std::pair<int, int>>& g) {
            std::vector<double> s;
            std::vector<int> y;
            for (std::size_t k = 0; k < g.size(); ++k) {
                for (int i = 0; i < g[k].first; ++i) {
                    s.push_back(0.125 * double(k) - 0.3);
                    y.push_back(0);
                }
                for (int i = 0; i < g[k].second; ++i) {
                    s.push_back(0.125 * double(k) - 0.3);
                    y.push_back(1);
                }
            }
            std::vector<std::size_t> order(n);
            std::iota(order.begin(), order.end(), 0);
            for (int arrangement = 0; arrangement < 2; ++arrangement) {
                if (arrangement == 1) std::shuffle(order.begin(), order.end(), rng);
                std::vector<double> ss;
                std::vector<int> yy;
                for (auto i : order) {
                    ss.push_back(s[i]);
                    yy.push_back(y[i]);
                }
                ++datasets;
                const auto positives = std::count(yy.begin(), yy.end(), 1);
                const bool both = positives > 0 && positives < std::ptrdiff_t(n);
                try {
                    const double a = auroc(ss, yy);
                    if (!both) ++failures;
                    else {
                        const double d = std::max(std::abs(a - pairwise_auroc(ss, yy)), std::abs(a - sweep(ss, yy).first));
                        worst_roc = std::max(worst_roc, d);
                        failures += d > 1e-12;
                    }
                } catch (const Error& e) {
                    failures += both || e.code() != ErrorCode::SingleClass;
                }
                try {
                    const double ap = auprc(ss, yy);
                    if (positives == 0) ++failures;
                    else {
                        const double d = std::abs(ap - sweep(ss, yy).second);
                        worst_ap = std::max(worst_ap, d);
                        failures += d > 1e-12;
                    }
                } catch (const Error& e) {
                    failures += positives > 0 || e.code() != ErrorCode::NoPositives;
                }
            }
        });
    }
    return {worst_u < 1e-12 && failures == 0,
            fmt::format("U/(n1 n2) max diff {:.3g} on 1000 datasets; {} enumerated datasets (n <= 8, two orderings "
                        "each): {} failures, max auroc diff {:.3g}, max auprc diff {:.3g}",
                        worst_u, datasets, failures, worst_roc, worst_ap)};
}

Outcome weight_distribution() {
    SynthConfig sc;
    sc.n_patients = 500;
    const auto cohort = synthesize(sc);
    std::vector<DiagnosisSet> sets;
    for (const auto& p : cohort.bundle.patients) sets.push_back(make_diagnosis_set(cohort.tree, p.id, p.codes));
    const auto spec = WeightSpec::power(5.0);
    const auto onto = weight_histogram(batch_weight_matrix(cohort.tree, sets, spec, SimilarityKind::ontology), 20);
    const auto flat = weight_histogram(batch_weight_matrix(cohort.tree, sets, spec, SimilarityKind::flat), 20);
    return {flat.fraction_below_one < onto.fraction_below_one,
            fmt::format("pairs with weight < 1: flat {:.4f}, ontology {:.4f} ({} pairs)", flat.fraction_below_one,
                        onto.fraction_below_one, onto.pairs)};
}

Outcome neighbor_structure() {
    const auto dir = g_work / "c7";
    Pipeline p(desk_config(0, dir));
    const auto bundle = p.synth();
    const auto t0 = std::chrono::steady_clock::now();
    const auto stage1 = p.pretrain(bundle);
    const double minutes = seconds_since(t0) / 60.0;
    p.neighbors(bundle, stage1);
    bool ok = minutes <= 15.0;
    std::string detail = fmt::format("pretraining {:.1f} min;", minutes);
    const auto rows = read_csv(dir / "neighbors.csv");
    std::set<std::size_t> seen;
    for (std::size_t r = 1; r < rows.size(); ++r) {
        const auto k = std::size_t(parse_int(rows[r][0], "k"));
        const double knn = parse_real(rows[r][3], "knn_mean"), rnd = parse_real(rows[r][4], "random_mean");
        const double pv = parse_real(rows[r][7], "p_value");
        seen.insert(k);
        ok = ok && knn > rnd && (k != 5 || pv < 0.01);
        detail += fmt::format(" K={} knn {:.4f} random {:.4f} p {:.3g};", k, knn, rnd, pv);
    }
    ok = ok && seen == std::set<std::size_t>{1, 3, 5};
    detail.pop_back();
    return {ok, detail};
}

// Per-seed bundle and ontology-weighted Stage-1 checkpoint, shared by the
// method-ordering and distillation criteria.
struct SeedRun {
    fs::path bundle;
    fs::path stage1;
};

SeedRun seed_run(std::uint64_t seed) {
    const auto dir = g_work / "seeds" / fmt::format("s{}", seed) / "ontology";
    SeedRun r{dir / "bundle", dir / "pretrain.ckpt"};
    if (fs::exists(r.stage1)) return r;
    Pipeline p(desk_config(seed, dir));
    r.bundle = p.synth();
    r.stage1 = p.pretrain(r.bundle);
    return r;
}

Outcome method_ordering() {
    std::vector<double> onto, uniform;
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        const auto run = seed_run(seed);
        Pipeline po(desk_config(seed, run.stage1.parent_path()));
        onto.push_back(report_auroc(po.probe(run.bundle, run.stage1)));

        auto cfg = desk_config(seed, g_work / "seeds" / fmt::format("s{}", seed) / "uniform");
        cfg.set("pretrain.weight", "uniform");
        Pipeline pu(cfg);
        const auto stage1 = pu.pretrain(run.bundle);
        uniform.push_back(report_auroc(pu.probe(run.bundle, stage1)));
    }
    const double mo = median(onto), mu = median(uniform);
    return {mo >= mu - 0.005, fmt::format("median probe AUROC at 5% labels: ontology {:.4f} [{}], uniform {:.4f} [{}]", mo,
                                          join(onto), mu, join(uniform))};
}

Outcome distillation_benefit() {
    const auto synth = RunConfig().synth();
    std::vector<double> teacher, with_kd, without_kd;
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        const auto run = seed_run(seed);
        const auto base = g_work / "seeds" / fmt::format("s{}", seed);
        Pipeline pt(desk_config(seed, base / "teacher"));
        const auto t = pt.teach(run.bundle, std::nullopt);
        teacher.push_back(report_auroc(pt.evaluate(run.bundle, t, "teacher")));
        for (double lambda : {5.0, 0.0}) {
            auto cfg = desk_config(seed, base / fmt::format("student_lambda{}", lambda));
            cfg.set("distill.lambda", format_real(lambda));
            Pipeline ps(cfg);
            const auto s = ps.distill(run.bundle, t, run.stage1);
            (lambda > 0 ? with_kd : without_kd).push_back(report_auroc(ps.evaluate(run.bundle, s, "student")));
        }
    }
    const double mt = median(teacher), m5 = median(with_kd), m0 = median(without_kd);
    const bool ok = synth.notes_signal_strength > synth.vitals_signal_strength && m5 > m0 && mt > m0;
    return {ok, fmt::format("median test AUROC: teacher {:.4f} [{}], lambda=5 {:.4f} [{}], lambda=0 {:.4f} [{}]; "
                            "signal notes {} vitals {}",
                            mt, join(teacher), m5, join(with_kd), m0, join(without_kd),
                            format_real(synth.notes_signal_strength), format_real(synth.vitals_signal_strength))};
}

Outcome determinism() {
    double longest = 0.0;
    for (const char* name : {"c10a", "c10b"}) {
        const auto t0 = std::chrono::steady_clock::now();
        Pipeline(desk_config(0, g_work / name)).run_all();
        longest = std::max(longest, seconds_since(t0));
    }
    std::size_t differing = 0;
    for (const char* f : {"eval_teacher.csv", "eval_student.csv", "eval_teacher.txt", "eval_student.txt"}) {
        const auto a = slurp(g_work / "c10a" / f), b = slurp(g_work / "c10b" / f);
        differing += a.empty() || a != b;
    }
    return {differing == 0 && longest < 30 * 60.0,
            fmt::format("{} of 4 report files differ; slowest run {:.1f} min", differing, longest / 60.0)};
}

} // namespace

int main(int argc, char** argv) {
    tune_allocator();
    spdlog::set_level(spdlog::level::warn);
    g_work = fs::temp_directory_path() / "ocd_acceptance";
    std::set<int> only;
    for (int i = 1; i < argc; ++i) only.insert(std::atoi(argv[i]));
    if (only.empty()) fs::remove_all(g_work);
    fs::create_directories(g_work);

    const std::vector<Criterion> criteria = {
        {1, "similarity oracle equivalence", similarity_oracle, 60.0},
        {2, "contrastive loss reductions", loss_reductions},
        {3, "gradient suite", gradient_suite, 120.0},
        {4, "weight monotonicity", monotonicity},
        {5, "metric oracles", metric_oracles},
        {6, "flat vs ontology weight distribution", weight_distribution},
        {7, "embedding neighbours share diagnoses", neighbor_structure},
        {8, "ontology weighting vs uniform weighting", method_ordering},
        {9, "distillation benefit", distillation_benefit},
        {10, "pipeline determinism", determinism},
    };

    int failed = 0, ran = 0;
    for (const auto& c : criteria) {
        if (!only.empty() && !only.count(c.id)) continue;
        ++ran;
        const auto t0 = std::chrono::steady_clock::now();
        Outcome o;
        try {
            o = c.run();
        } catch (const std::exception& e) {
            o = {false, std::string("threw: ") + e.what()};
        }
        const double secs = seconds_since(t0);
        if (c.budget_seconds > 0 && secs >= c.budget_seconds) {
            o.pass = false;
            o.detail += fmt::format("; exceeded {:.0f} s budget", c.budget_seconds);
        }
        failed += !o.pass;
        fmt::print("{} [{:>2}] {}: {} ({:.1f} s)\n", o.pass ? "PASS" : "FAIL", c.id, c.name, o.detail, secs);
        std::fflush(stdout);
    }
    fmt::print("{} of {} criteria passed\n", ran - failed, ran);
    return failed ? 1 : 0;
}
