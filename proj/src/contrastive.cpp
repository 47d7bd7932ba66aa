#include "ocd/contrastive.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "ocd/error.hpp"
#include "ocd/util.hpp"

namespace ocd {

using nn::Tensor;
using nn::Var;

namespace {

// Stream tags keep independent uses of the same (seed, epoch, index) apart.
constexpr std::uint64_t kInitTag = 0x494e4954;
constexpr std::uint64_t kShuffleTag = 0x53485546;
constexpr std::uint64_t kViewTag = 0x56494557;

void check_ratio(double r, bool allow_one, const char* what) {
    if (!(r >= 0.0 && (allow_one ? r <= 1.0 : r < 1.0)))
        fail(ErrorCode::ConfigError, std::string(what) + " must lie in [0,1)");
}

std::vector<std::size_t> choose(std::size_t n, std::size_t k, std::mt19937_64& rng) {
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), 0);
    for (std::size_t i = 0; i < k; ++i) {
        std::uniform_int_distribution<std::size_t> pick(i, n - 1);
        std::swap(idx[i], idx[pick(rng)]);
    }
    idx.resize(k);
    return idx;
}

} // namespace

void AugmentConfig::validate() const {
    if (!(jitter_sigma >= 0.0)) fail(ErrorCode::ConfigError, "jitter_sigma must be non-negative");
    check_ratio(time_mask_ratio, false, "time_mask_ratio");
    check_ratio(feature_mask_ratio, false, "feature_mask_ratio");
}

VitalsSeries augment(const VitalsSeries& x, const AugmentConfig& cfg, std::mt19937_64& rng) {
    check_ratio(cfg.time_mask_ratio, true, "time_mask_ratio");
    check_ratio(cfg.feature_mask_ratio, true, "feature_mask_ratio");
    VitalsSeries out = x;
    if (cfg.jitter_sigma > 0.0) {
        std::normal_distribution<double> noise(0.0, cfg.jitter_sigma);
        for (std::size_t i = 0; i < out.values.size(); ++i)
            if (out.observed[i]) out.values[i] += noise(rng);
    }
    const auto masked_steps = static_cast<std::size_t>(std::llround(cfg.time_mask_ratio * double(x.hours)));
    for (auto t : choose(x.hours, masked_steps, rng))
        for (std::size_t c = 0; c < x.channels; ++c) {
            out.values[t * x.channels + c] = 0.0;
            out.observed[t * x.channels + c] = 0;
        }
    const auto masked_channels = static_cast<std::size_t>(std::llround(cfg.feature_mask_ratio * double(x.channels)));
    for (auto c : choose(x.channels, masked_channels, rng))
        for (std::size_t t = 0; t < x.hours; ++t) out.values[t * x.channels + c] = 0.0;
    return out;
}

Var ow_ntxent(const Var& embeddings, const WeightMatrix& weights, double temperature) {
    if (!(temperature > 0.0)) fail(ErrorCode::ConfigError, "temperature must be positive");
    const auto& s = embeddings.shape();
    const std::size_t b = weights.size();
    if (s.size() != 2 || s[0] != 2 * b || b == 0)
        fail(ErrorCode::ShapeMismatch, "embeddings " + nn::to_string(s) + " for " + std::to_string(b) + " patients");
    const Tensor& e = embeddings.value();
    for (std::size_t r = 0; r < s[0]; ++r) {
        double ss = 0.0;
        for (std::size_t k = 0; k < s[1]; ++k) ss += e.at(r, k) * e.at(r, k);
        if (std::abs(std::sqrt(ss) - 1.0) > 1e-9) fail(ErrorCode::NormViolation, "row " + std::to_string(r) + " is not unit norm");
    }
    if (!weights.symmetric()) fail(ErrorCode::AsymmetricWeights, "weight matrix is not symmetric");

    const std::size_t n = 2 * b;
    constexpr double masked = -std::numeric_limits<double>::infinity();
    Tensor log_w({n, n});
    Tensor positive({n, n}, 0.0);
    for (std::size_t a = 0; a < n; ++a) {
        const std::size_t pa = a % b, partner = (a + b) % n;
        for (std::size_t c = 0; c < n; ++c) {
            if (c == a) {
                log_w.at(a, c) = masked;
            } else if (c == partner) {
                log_w.at(a, c) = 0.0;
            } else {
                const double w = weights(pa, c % b);
                if (!(w >= 0.0 && w <= 1.0)) fail(ErrorCode::OutOfRangeSimilarity, "weight outside [0,1]");
                log_w.at(a, c) = w > 0.0 ? std::log(w) : masked;
            }
        }
        positive.at(a, partner) = 1.0;
    }
    const Var sims = nn::scale(nn::matmul(embeddings, nn::transpose(embeddings)), 1.0 / temperature);
    const Var denom = nn::logsumexp(sims + Var::constant(std::move(log_w)), 1);
    const Var pos = nn::sum(sims * Var::constant(std::move(positive)), 1);
    return nn::mean(denom - pos);
}

void PretrainConfig::validate() const {
    if (!(temperature > 0.0)) fail(ErrorCode::ConfigError, "temperature must be positive");
    if (!(learning_rate > 0.0)) fail(ErrorCode::ConfigError, "learning_rate must be positive");
    if (batch_size < 2) fail(ErrorCode::ConfigError, "batch_size must be at least 2");
    weight_spec.validate();
}

ChannelStats checkpoint_stats(const nn::Checkpoint& ckpt) {
    const auto& m = ckpt.at("norm.mean");
    const auto& s = ckpt.at("norm.std");
    return {m.values(), s.values()};
}

void store_stats(nn::Checkpoint& ckpt, const ChannelStats& stats) {
    ckpt.params.emplace_back("norm.mean", Tensor({stats.mean.size()}, stats.mean));
    ckpt.params.emplace_back("norm.std", Tensor({stats.stddev.size()}, stats.stddev));
}

ChannelStats training_stats(const CohortBundle& bundle) {
    std::vector<const VitalsSeries*> train;
    for (auto i : bundle.indices(Split::train)) train.push_back(&bundle.patients[i].vitals);
    if (train.empty())
        for (const auto& p : bundle.patients) train.push_back(&p.vitals);
    return channel_stats(train);
}

std::vector<VitalsSeries> normalized_series(const CohortBundle& bundle, const ChannelStats& stats) {
    std::vector<VitalsSeries> out;
    out.reserve(bundle.patients.size());
    for (const auto& p : bundle.patients) out.push_back(zscore(p.vitals, stats));
    return out;
}

PretrainResult pretrain(std::span<const VitalsSeries> series, const CohortWeightCache& weights,
                        const ChannelStats& stats, const EncoderConfig& enc, const PretrainConfig& cfg,
                        const AugmentConfig& aug) {
    cfg.validate();
    aug.validate();
    enc.validate();
    const std::size_t n = series.size();
    if (n < 2) fail(ErrorCode::EmptyCohort, "pretraining needs at least two patients");
    if (weights.size() != n) fail(ErrorCode::ShapeMismatch, "weight cache does not cover the pretraining cohort");

    nn::ParamSet params;
    auto init_rng = make_stream({cfg.seed, kInitTag});
    init_encoder(params, enc, init_rng);
    init_projection_head(params, enc.model_dim, cfg.projection_dim ? cfg.projection_dim : enc.model_dim, init_rng);
    nn::Adam opt({cfg.learning_rate});

    const std::size_t batch = std::min(cfg.batch_size, n);
    PretrainResult result;
    result.best_epoch_loss = std::numeric_limits<double>::infinity();

    auto snapshot = [&](std::size_t step) {
        auto ckpt = params.to_checkpoint();
        store_stats(ckpt, stats);
        ckpt.step = step;
        ckpt.seed = cfg.seed;
        ckpt.meta["kind"] = "pretrain";
        ckpt.meta["encoder"] = enc.to_string();
        ckpt.meta["weight_spec"] = cfg.weight_spec.to_string();
        ckpt.meta["similarity"] = to_string(cfg.similarity);
        ckpt.meta["optimizer"] = "adam(beta1=0.9,beta2=0.999,eps=1e-8)";
        return ckpt;
    };

    std::size_t step = 0;
    std::vector<std::size_t> order(n);
    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        std::iota(order.begin(), order.end(), 0);
        auto shuffle_rng = make_stream({cfg.seed, kShuffleTag, epoch});
        std::shuffle(order.begin(), order.end(), shuffle_rng);

        double epoch_loss = 0.0;
        std::size_t epoch_steps = 0;
        for (std::size_t start = 0; start + batch <= n; start += batch) {
            std::span<const std::size_t> idx(order.data() + start, batch);
            std::vector<VitalsSeries> views;
            views.reserve(2 * batch);
            for (std::size_t view = 0; view < 2; ++view)
                for (auto i : idx) {
                    auto rng = make_stream({aug.seed, kViewTag, epoch, i, view});
                    views.push_back(augment(series[i], aug, rng));
                }
            const Var x = Var::constant(input_batch(views));
            const Var loss = ow_ntxent(project_contrastive(params, encode_vitals(enc, params, x)), weights.gather(idx),
                                       cfg.temperature);
            const double value = loss.value().item();
            if (!std::isfinite(value)) fail(ErrorCode::NumericFailure, "non-finite contrastive loss at step " + std::to_string(step));
            result.trace.push_back({step, epoch, value});
            params.zero_grad();
            nn::backward(loss);
            opt.step(params);
            ++step;
            epoch_loss += value;
            ++epoch_steps;
        }
        epoch_loss /= double(std::max<std::size_t>(epoch_steps, 1));
        spdlog::debug("pretrain epoch {} loss {:.6f}", epoch, epoch_loss);
        if (epoch_loss < result.best_epoch_loss) {
            result.best_epoch_loss = epoch_loss;
            result.best_checkpoint = snapshot(step);
        }
    }
    result.final_checkpoint = snapshot(step);
    if (cfg.epochs == 0) result.best_checkpoint = result.final_checkpoint;
    return result;
}

PretrainResult pretrain(const CohortBundle& bundle, const OntologyTree& tree, const EncoderConfig& enc,
                        const PretrainConfig& cfg, const AugmentConfig& aug) {
    auto train = bundle.indices(Split::train);
    if (train.empty()) {
        train.resize(bundle.patients.size());
        std::iota(train.begin(), train.end(), 0);
    }
    UnknownCodeStats unknown;
    std::vector<DiagnosisSet> sets;
    std::vector<VitalsSeries> series;
    const auto stats = training_stats(bundle);
    for (auto i : train) {
        const auto& p = bundle.patients[i];
        sets.push_back(make_diagnosis_set(tree, p.id, p.codes, &unknown));
        series.push_back(zscore(p.vitals, stats));
    }
    if (unknown.dropped_codes)
        spdlog::warn("dropped {} unknown diagnosis codes; {} patients left without codes get uniform weights",
                     unknown.dropped_codes, unknown.emptied_patients);
    const auto cache = CohortWeightCache::build(tree, sets, cfg.weight_spec, cfg.similarity,
                                                CohortWeightCache::default_budget, cfg.threads);
    return pretrain(series, cache, stats, enc, cfg, aug);
}

} // namespace ocd
