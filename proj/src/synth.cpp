#include "ocd/synth.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <random>

#include "ocd/error.hpp"
#include "ocd/util.hpp"

namespace ocd {

namespace {

constexpr std::uint64_t kClusterTag = 0x434c5553;
constexpr std::uint64_t kGlobalTag = 0x474c4f42;
constexpr std::uint64_t kPatientTag = 0x50415449;

const char* const kVitalNames[] = {"capillary_refill", "diastolic_bp", "fio2", "gcs_total", "glucose", "heart_rate",
                                   "height", "mean_bp", "spo2", "resp_rate", "systolic_bp", "temperature"};

[[noreturn]] void degenerate(const std::string& why) { fail(ErrorCode::DegenerateConfig, why); }

void collect_leaves(const OntologyTree& tree, NodeId n, std::vector<NodeId>& out) {
    if (tree.is_leaf(n)) {
        out.push_back(n);
        return;
    }
    for (auto c : tree.children(n)) collect_leaves(tree, c, out);
}

// Shallowest level with at least `k` nodes; clusters take evenly spaced nodes there.
std::vector<NodeId> cluster_roots(const OntologyTree& tree, std::size_t k) {
    std::vector<std::vector<NodeId>> levels(tree.max_depth() + 1);
    for (NodeId n = 0; n < tree.size(); ++n) levels[tree.depth(n)].push_back(n);
    for (std::size_t d = 1; d < levels.size(); ++d) {
        if (levels[d].size() < k) continue;
        std::vector<NodeId> roots;
        for (std::size_t c = 0; c < k; ++c) roots.push_back(levels[d][c * levels[d].size() / k]);
        return roots;
    }
    degenerate("ontology has no level with " + std::to_string(k) + " nodes for the clusters");
}

struct ClusterProfile {
    std::vector<double> freq, phase; // rank-2 temporal basis
    std::vector<double> loading;     // 2 x c
    std::vector<double> centroid;    // note space
    double risk = 0.0;
};

} // namespace

void SynthConfig::validate() const {
    if (n_patients < 2) degenerate("need at least two patients");
    if (n_clusters < 1 || n_clusters > n_patients) degenerate("n_clusters must lie in [1, n_patients]");
    if (tree_depth < 1 || tree_branching < 1) degenerate("tree depth and branching must be positive");
    if (codes_per_patient < 1) degenerate("codes_per_patient must be positive");
    if (!(vitals_signal_strength > 0.0) || !(notes_signal_strength > 0.0)) degenerate("signal strengths must be positive");
    if (!(label_noise >= 0.0 && label_noise <= 0.5)) degenerate("label_noise must lie in [0, 0.5]");
    if (!(code_noise >= 0.0 && code_noise <= 1.0)) degenerate("code_noise must lie in [0, 1]");
    if (!(missing_rate >= 0.0 && missing_rate < 1.0)) degenerate("missing_rate must lie in [0, 1)");
    if (horizon_hours < 1 || channels < 1 || note_dim < 1) degenerate("horizon, channels and note_dim must be positive");
}

SynthCohort synthesize(const SynthConfig& cfg, const OntologyTree* given) {
    cfg.validate();
    OntologyTree tree = given ? *given
                              : make_balanced_tree(static_cast<std::uint32_t>(cfg.tree_depth),
                                                   static_cast<std::uint32_t>(cfg.tree_branching));
    const auto roots = cluster_roots(tree, cfg.n_clusters);
    std::vector<std::vector<NodeId>> cluster_leaves(cfg.n_clusters);
    for (std::size_t c = 0; c < cfg.n_clusters; ++c) collect_leaves(tree, roots[c], cluster_leaves[c]);
    std::vector<NodeId> all_leaves;
    collect_leaves(tree, tree.root(), all_leaves);

    const std::size_t T = cfg.horizon_hours, C = cfg.channels, D = cfg.note_dim;
    std::normal_distribution<double> gauss(0.0, 1.0);
    std::uniform_real_distribution<double> unif(0.0, 1.0);

    std::vector<ClusterProfile> profiles(cfg.n_clusters);
    for (std::size_t c = 0; c < cfg.n_clusters; ++c) {
        auto rng = make_stream({cfg.seed, kClusterTag, c});
        gauss.reset();
        auto& p = profiles[c];
        for (int r = 0; r < 2; ++r) {
            p.freq.push_back(0.5 + 2.5 * unif(rng));
            p.phase.push_back(2.0 * std::numbers::pi * unif(rng));
        }
        for (std::size_t i = 0; i < 2 * C; ++i) p.loading.push_back(gauss(rng));
        for (std::size_t i = 0; i < D; ++i) p.centroid.push_back(gauss(rng));
        p.risk = cfg.n_clusters == 1 ? 0.0 : -1.0 + 2.0 * double(c) / double(cfg.n_clusters - 1);
    }

    // Channel scales, the severity signature in vitals and its direction in note space.
    auto grng = make_stream({cfg.seed, kGlobalTag});
    gauss.reset();
    std::vector<double> base(C), spread(C), severity_loading(C), severity_note(D);
    for (std::size_t ch = 0; ch < C; ++ch) {
        base[ch] = 100.0 * unif(grng);
        spread[ch] = 1.0 + 9.0 * unif(grng);
        severity_loading[ch] = gauss(grng);
    }
    double norm = 0.0;
    for (auto& v : severity_note) {
        v = gauss(grng);
        norm += v * v;
    }
    for (auto& v : severity_note) v *= 2.0 / std::sqrt(norm);

    CohortBundle b;
    b.horizon_hours = T;
    b.note_dim = D;
    for (std::size_t ch = 0; ch < C; ++ch)
        b.channel_names.push_back(C <= std::size(kVitalNames) ? kVitalNames[ch] : "ch" + std::to_string(ch));

    std::vector<std::size_t> cluster(cfg.n_patients);
    std::vector<double> severity(cfg.n_patients);
    const int width = int(std::to_string(cfg.n_patients - 1).size());
    for (std::size_t i = 0; i < cfg.n_patients; ++i) {
        auto rng = make_stream({cfg.seed, kPatientTag, i});
        gauss.reset();
        PatientRecord p;
        p.id = fmt::format("P{:0{}}", i, width);
        const std::size_t c = std::uniform_int_distribution<std::size_t>(0, cfg.n_clusters - 1)(rng);
        const double sev = gauss(rng);
        cluster[i] = c;
        severity[i] = sev;
        const auto& prof = profiles[c];

        for (std::size_t k = 0; k < cfg.codes_per_patient; ++k) {
            const auto& pool = unif(rng) < cfg.code_noise ? all_leaves : cluster_leaves[c];
            p.codes.push_back(tree.id(pool[std::uniform_int_distribution<std::size_t>(0, pool.size() - 1)(rng)]));
        }
        std::sort(p.codes.begin(), p.codes.end());
        p.codes.erase(std::unique(p.codes.begin(), p.codes.end()), p.codes.end());

        p.vitals = VitalsSeries(T, C);
        const double noise_sd = 1.0 / cfg.vitals_signal_strength;
        for (std::size_t t = 0; t < T; ++t) {
            const double u = double(t) / double(T);
            const double b0 = std::sin(2.0 * std::numbers::pi * prof.freq[0] * u + prof.phase[0]);
            const double b1 = std::sin(2.0 * std::numbers::pi * prof.freq[1] * u + prof.phase[1]);
            for (std::size_t ch = 0; ch < C; ++ch) {
                const double signal = b0 * prof.loading[ch] + b1 * prof.loading[C + ch] + sev * u * severity_loading[ch];
                const double v = base[ch] + spread[ch] * (signal + noise_sd * gauss(rng));
                if (unif(rng) >= cfg.missing_rate) p.vitals.set(t, ch, v);
            }
        }

        const double note_sd = 1.0 / cfg.notes_signal_strength;
        for (std::size_t k = 0; k < D; ++k) {
            const double latent = prof.centroid[k] + sev * severity_note[k];
            p.note_raw.push_back(static_cast<float>(latent + note_sd * gauss(rng)));
            p.note_summary.push_back(static_cast<float>(latent + note_sd * gauss(rng)));
        }

        int y = prof.risk + sev > 0.5 ? 1 : 0;
        if (unif(rng) < cfg.label_noise) y = 1 - y;
        p.labels["mortality"] = y;
        b.patients.push_back(std::move(p));
    }

    // Length-of-stay class: decile of the latent risk across the cohort.
    std::vector<std::size_t> order(cfg.n_patients);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t c) {
        return profiles[cluster[a]].risk + severity[a] < profiles[cluster[c]].risk + severity[c];
    });
    for (std::size_t r = 0; r < order.size(); ++r)
        b.patients[order[r]].labels["los"] = int(r * 10 / order.size());

    assign_splits(b, cfg.fractions, cfg.seed, "mortality");
    return SynthCohort{std::move(b), std::move(tree), std::move(cluster)};
}

} // namespace ocd
