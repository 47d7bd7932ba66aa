#include "ocd/distill.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <numeric>

#include "ocd/error.hpp"
#include "ocd/metrics.hpp"
#include "ocd/util.hpp"

namespace ocd {

using nn::Checkpoint;
using nn::ParamSet;
using nn::Tensor;
using nn::Var;

namespace {

constexpr std::uint64_t kInitTag = 0x494e4954;
constexpr std::uint64_t kShuffleTag = 0x53485546;
constexpr std::uint64_t kNoteTag = 0x4e4f5445;

// log(1 + exp(z)) per row of a [B, 1] tensor, returned as [B].
Var softplus_rows(const Var& z) {
    const Var parts[] = {Var::constant(Tensor(z.shape(), 0.0)), z};
    return nn::logsumexp(nn::concat(parts, 1), 1);
}

void check_logits(const Var& logits, std::size_t batch, const Task& task) {
    const auto& s = logits.shape();
    if (s.size() != 2 || s[0] != batch || s[1] != std::size_t(task.outputs()))
        fail(ErrorCode::ShapeMismatch, "logits " + nn::to_string(s) + " for task " + task.to_string());
}

Tensor batch_notes(std::span<const LabeledExample* const> rows, const std::vector<const std::vector<float>*>& notes) {
    const std::size_t dim = notes.empty() ? 0 : notes.front()->size();
    Tensor t({rows.size(), dim});
    for (std::size_t i = 0; i < rows.size(); ++i) {
        if (notes[i]->size() != dim) fail(ErrorCode::ShapeMismatch, "note embeddings differ in dimension");
        for (std::size_t k = 0; k < dim; ++k) t.at(i, k) = (*notes[i])[k];
    }
    return t;
}

Tensor batch_vitals(std::span<const LabeledExample* const> rows) {
    std::vector<VitalsSeries> v;
    v.reserve(rows.size());
    for (const auto* r : rows) v.push_back(r->vitals);
    return input_batch(v);
}

std::vector<int> batch_labels(std::span<const LabeledExample* const> rows) {
    std::vector<int> y;
    y.reserve(rows.size());
    for (const auto* r : rows) y.push_back(r->label);
    return y;
}

template <typename Forward>
Tensor predict(std::span<const LabeledExample> data, std::size_t batch, Forward forward) {
    if (data.empty()) return Tensor();
    batch = std::max<std::size_t>(batch, 1);
    std::vector<double> out;
    std::size_t outputs = 0;
    for (std::size_t start = 0; start < data.size(); start += batch) {
        std::vector<const LabeledExample*> rows;
        for (std::size_t i = start; i < std::min(start + batch, data.size()); ++i) rows.push_back(&data[i]);
        const Tensor logits = forward(std::span<const LabeledExample* const>(rows)).value();
        outputs = logits.dim(1);
        out.insert(out.end(), logits.values().begin(), logits.values().end());
    }
    return Tensor({data.size(), outputs}, std::move(out));
}

struct StepLoss {
    Var total;
    double hard = 0.0;
    double distill = 0.0;
};

using StepFn = std::function<StepLoss(std::span<const LabeledExample* const>, std::size_t epoch,
                                      std::span<const std::size_t> indices, ContentHasher* notes)>;
using PredictFn = std::function<Tensor(std::span<const LabeledExample>)>;

TrainResult run_loop(std::span<const LabeledExample> train, std::span<const LabeledExample> val, ParamSet& params,
                     const DistillConfig& cfg, const StepFn& step_fn, const PredictFn& predict_fn,
                     const std::function<Checkpoint(std::size_t)>& snapshot) {
    if (train.empty()) fail(ErrorCode::EmptyCohort, "no training examples");
    nn::Adam opt({cfg.learning_rate});
    TrainResult result;
    result.best_val_auroc = -std::numeric_limits<double>::infinity();
    std::vector<std::size_t> order(train.size());
    std::size_t step = 0;
    std::vector<int> val_labels;
    for (const auto& ex : val) val_labels.push_back(ex.label);

    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        std::iota(order.begin(), order.end(), 0);
        auto rng = make_stream({cfg.seed, kShuffleTag, epoch});
        std::shuffle(order.begin(), order.end(), rng);
        EpochLog log;
        log.epoch = epoch;
        ContentHasher note_hasher;
        std::size_t batches = 0;
        for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
            const std::size_t end = std::min(start + cfg.batch_size, order.size());
            std::span<const std::size_t> idx(order.data() + start, end - start);
            std::vector<const LabeledExample*> rows;
            for (auto i : idx) rows.push_back(&train[i]);
            const StepLoss l = step_fn(rows, epoch, idx, &note_hasher);
            const double value = l.total.value().item();
            if (!std::isfinite(value)) fail(ErrorCode::NumericFailure, "non-finite loss at step " + std::to_string(step));
            result.step_losses.push_back(value);
            params.zero_grad();
            nn::backward(l.total);
            opt.step(params);
            ++step;
            ++batches;
            log.loss += value;
            log.hard += l.hard;
            log.distill += l.distill;
        }
        log.loss /= double(batches);
        log.hard /= double(batches);
        log.distill /= double(batches);
        log.note_hash = note_hasher.hex();

        bool selectable = false;
        if (!val.empty()) {
            try {
                log.val_auroc = task_auroc(predict_fn(val), val_labels, cfg.task);
                selectable = true;
            } catch (const Error& e) {
                if (e.code() != ErrorCode::SingleClass && e.code() != ErrorCode::MissingClass) throw;
            }
        }
        if (!selectable) log.val_auroc = std::numeric_limits<double>::quiet_NaN();
        spdlog::debug("epoch {} loss {:.6f} val_auroc {:.4f}", epoch, log.loss, log.val_auroc);
        if (!selectable || log.val_auroc > result.best_val_auroc) {
            if (selectable) result.best_val_auroc = log.val_auroc;
            result.best_epoch = epoch;
            result.best = snapshot(step);
        }
        result.log.push_back(std::move(log));
    }
    result.last = snapshot(step);
    if (cfg.epochs == 0) result.best = result.last;
    if (!std::isfinite(result.best_val_auroc)) result.best_val_auroc = std::numeric_limits<double>::quiet_NaN();
    return result;
}

void base_meta(Checkpoint& c, const char* kind, const EncoderConfig& enc, const DistillConfig& cfg, std::size_t step) {
    c.step = step;
    c.seed = cfg.seed;
    c.meta["kind"] = kind;
    c.meta["task"] = cfg.task.to_string();
    c.meta["encoder"] = enc.to_string();
    c.meta["optimizer"] = "adam(beta1=0.9,beta2=0.999,eps=1e-8)";
}

} // namespace

void DistillConfig::validate() const {
    if (!(temperature > 0.0)) fail(ErrorCode::ConfigError, "distillation temperature must be positive");
    if (!(lambda >= 0.0)) fail(ErrorCode::ConfigError, "lambda must be non-negative");
    if (!(summary_prob >= 0.0 && summary_prob <= 1.0)) fail(ErrorCode::ConfigError, "summary_prob must lie in [0,1]");
    if (!(learning_rate > 0.0)) fail(ErrorCode::ConfigError, "learning_rate must be positive");
    if (batch_size == 0) fail(ErrorCode::ConfigError, "batch_size must be positive");
    if (task.classes < 2) fail(ErrorCode::ConfigError, "task needs at least two classes");
}

std::vector<LabeledExample> labeled_examples(const CohortBundle& bundle, Split split, const Task& task,
                                             const ChannelStats& stats) {
    std::vector<LabeledExample> out;
    for (auto i : bundle.indices(split)) {
        const auto& p = bundle.patients[i];
        auto it = p.labels.find(task.name);
        if (it == p.labels.end()) continue;
        if (it->second < 0 || it->second >= task.classes)
            fail(ErrorCode::LabelOutOfRange, p.id + " has label " + std::to_string(it->second));
        out.push_back({p.id, zscore(p.vitals, stats), p.note_raw, p.note_summary, it->second});
    }
    return out;
}

const std::vector<float>& select_note_input(const LabeledExample& ex, double p, std::mt19937_64& rng) {
    if (!(p >= 0.0 && p <= 1.0)) fail(ErrorCode::ConfigError, "selection probability must lie in [0,1]");
    std::bernoulli_distribution raw(p);
    return raw(rng) ? ex.note_raw : ex.note_summary;
}

Var hard_loss(const Var& logits, std::span<const int> labels, const Task& task) {
    const std::size_t b = labels.size();
    check_logits(logits, b, task);
    for (auto y : labels)
        if (y < 0 || y >= task.classes) fail(ErrorCode::LabelOutOfRange, "label " + std::to_string(y));
    for (auto v : logits.value().values())
        if (!std::isfinite(v)) fail(ErrorCode::NonFiniteInput, "non-finite logits");
    if (task.binary()) {
        Tensor y({b, 1});
        for (std::size_t i = 0; i < b; ++i) y.at(i, 0) = labels[i];
        const Var picked = nn::sum(logits * Var::constant(std::move(y)), 1);
        return nn::mean(softplus_rows(logits) - picked);
    }
    Tensor onehot({b, std::size_t(task.classes)});
    for (std::size_t i = 0; i < b; ++i) onehot.at(i, std::size_t(labels[i])) = 1.0;
    const Var picked = nn::sum(logits * Var::constant(std::move(onehot)), 1);
    return nn::mean(nn::logsumexp(logits, 1) - picked);
}

Var kd_loss(const Tensor& teacher_logits, const Var& student_logits, double temperature, const Task& task) {
    if (!(temperature > 0.0)) fail(ErrorCode::ConfigError, "temperature must be positive");
    if (teacher_logits.shape() != student_logits.shape())
        fail(ErrorCode::ShapeMismatch, "teacher and student logits differ in shape");
    check_logits(student_logits, teacher_logits.rank() == 2 ? teacher_logits.dim(0) : 0, task);
    for (auto v : teacher_logits.values())
        if (!std::isfinite(v)) fail(ErrorCode::NonFiniteInput, "non-finite teacher logits");
    const std::size_t b = teacher_logits.dim(0), k = teacher_logits.dim(1);
    const Var zs = nn::scale(student_logits, 1.0 / temperature);

    if (task.binary()) {
        Tensor q({b, 1});
        for (std::size_t i = 0; i < b; ++i) {
            const double z = teacher_logits.at(i, 0) / temperature;
            q.at(i, 0) = z >= 0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z));
        }
        const Var picked = nn::sum(zs * Var::constant(std::move(q)), 1);
        return nn::mean(softplus_rows(zs) - picked);
    }

    Tensor q({b, k});
    double entropy_term = 0.0; // sum q log q
    for (std::size_t i = 0; i < b; ++i) {
        double m = -std::numeric_limits<double>::infinity();
        for (std::size_t c = 0; c < k; ++c) m = std::max(m, teacher_logits.at(i, c) / temperature);
        double z = 0.0;
        for (std::size_t c = 0; c < k; ++c) z += std::exp(teacher_logits.at(i, c) / temperature - m);
        const double lse = m + std::log(z);
        for (std::size_t c = 0; c < k; ++c) {
            const double log_q = teacher_logits.at(i, c) / temperature - lse;
            q.at(i, c) = std::exp(log_q);
            if (q.at(i, c) > 0.0) entropy_term += q.at(i, c) * log_q;
        }
    }
    // KL = sum q log q - sum q * log_softmax(zs), and sum q = 1 per row.
    const Var cross = nn::logsumexp(zs, 1) - nn::sum(zs * Var::constant(std::move(q)), 1);
    return nn::mean(cross) + Var::constant(Tensor::scalar(entropy_term / double(b)));
}

double task_auroc(const Tensor& logits, std::span<const int> labels, const Task& task) {
    if (logits.rank() != 2 || logits.dim(0) != labels.size() || logits.dim(1) != std::size_t(task.outputs()))
        fail(ErrorCode::ShapeMismatch, "logits do not match labels");
    if (task.binary()) return auroc(logits.values(), labels);
    const std::size_t n = logits.dim(0), k = logits.dim(1);
    std::vector<double> probs(n * k);
    for (std::size_t i = 0; i < n; ++i) {
        double m = -std::numeric_limits<double>::infinity();
        for (std::size_t c = 0; c < k; ++c) m = std::max(m, logits.at(i, c));
        double z = 0.0;
        for (std::size_t c = 0; c < k; ++c) z += std::exp(logits.at(i, c) - m);
        for (std::size_t c = 0; c < k; ++c) probs[i * k + c] = std::exp(logits.at(i, c) - m) / z;
    }
    return macro_ovr(probs, k, labels).macro_auroc;
}

Tensor predict_student(const EncoderConfig& enc, const ParamSet& params, std::span<const LabeledExample> data,
                       std::size_t batch) {
    return predict(data, batch, [&](std::span<const LabeledExample* const> rows) {
        return student_forward(enc, params, Var::constant(batch_vitals(rows)));
    });
}

Tensor predict_teacher(const EncoderConfig& enc, const ParamSet& params, std::span<const LabeledExample> data,
                       std::size_t batch) {
    return predict(data, batch, [&](std::span<const LabeledExample* const> rows) {
        std::vector<const std::vector<float>*> notes;
        for (const auto* r : rows) notes.push_back(&r->note_raw);
        return teacher_forward(enc, params, Var::constant(batch_notes(rows, notes)), Var::constant(batch_vitals(rows)));
    });
}

TrainResult train_teacher(std::span<const LabeledExample> train, std::span<const LabeledExample> val,
                          const EncoderConfig& enc, const DistillConfig& cfg, const Checkpoint* init) {
    cfg.validate();
    enc.validate();
    if (train.empty()) fail(ErrorCode::EmptyCohort, "no training examples");
    const std::size_t note_dim = train.front().note_raw.size();
    ParamSet params;
    auto rng = make_stream({cfg.seed, kInitTag});
    init_encoder(params, enc, rng);
    init_note_adapter(params, note_dim, enc.model_dim, rng);
    init_classifier(params, enc.model_dim, std::size_t(cfg.task.outputs()), rng);
    if (init) spdlog::info("teacher encoder initialised from {} tensors", params.load(*init, "enc."));

    auto step = [&](std::span<const LabeledExample* const> rows, std::size_t epoch, std::span<const std::size_t> idx,
                    ContentHasher* hasher) {
        std::vector<const std::vector<float>*> notes;
        for (std::size_t i = 0; i < rows.size(); ++i) {
            auto note_rng = make_stream({cfg.seed, kNoteTag, epoch, idx[i]});
            const auto& note = select_note_input(*rows[i], cfg.summary_prob, note_rng);
            hasher->pod<std::uint64_t>(idx[i]).bytes(note.data(), note.size() * sizeof(float));
            notes.push_back(&note);
        }
        const Var logits =
            teacher_forward(enc, params, Var::constant(batch_notes(rows, notes)), Var::constant(batch_vitals(rows)));
        StepLoss l;
        l.total = hard_loss(logits, batch_labels(rows), cfg.task);
        l.hard = l.total.value().item();
        return l;
    };
    auto snapshot = [&](std::size_t s) {
        auto c = params.to_checkpoint();
        base_meta(c, "teacher", enc, cfg, s);
        c.meta["summary_prob"] = format_real(cfg.summary_prob);
        return c;
    };
    return run_loop(train, val, params, cfg, step,
                    [&](std::span<const LabeledExample> d) { return predict_teacher(enc, params, d); }, snapshot);
}

TrainResult train_student(std::span<const LabeledExample> train, std::span<const LabeledExample> val,
                          const EncoderConfig& enc, const DistillConfig& cfg, const Checkpoint* teacher,
                          const Checkpoint* init) {
    cfg.validate();
    enc.validate();
    if (train.empty()) fail(ErrorCode::EmptyCohort, "no training examples");
    const bool distill = cfg.lambda > 0.0;

    // Teacher inputs are deterministic, so its soft targets are computed once.
    Tensor targets;
    if (distill) {
        if (!teacher) fail(ErrorCode::MissingInput, "distillation needs a teacher checkpoint");
        auto it = teacher->meta.find("task");
        if (it == teacher->meta.end() || it->second != cfg.task.to_string())
            fail(ErrorCode::TaskMismatch, "teacher was trained for " + (it == teacher->meta.end() ? std::string("?") : it->second) +
                                              ", student for " + cfg.task.to_string());
        const auto teacher_enc = EncoderConfig::parse(teacher->meta.at("encoder"));
        const auto teacher_params = ParamSet::from_checkpoint(*teacher);
        targets = predict_teacher(teacher_enc, teacher_params, train);
    }

    ParamSet params;
    auto rng = make_stream({cfg.seed, kInitTag});
    init_encoder(params, enc, rng);
    init_classifier(params, enc.model_dim, std::size_t(cfg.task.outputs()), rng);
    if (init) {
        const auto copied = params.load(*init, "enc.");
        if (copied == 0) fail(ErrorCode::ShapeMismatch, "initial checkpoint holds no encoder tensors");
        spdlog::info("student encoder initialised from {} tensors", copied);
    }

    const std::size_t outputs = std::size_t(cfg.task.outputs());
    auto step = [&](std::span<const LabeledExample* const> rows, std::size_t, std::span<const std::size_t> idx,
                    ContentHasher*) {
        const Var logits = student_forward(enc, params, Var::constant(batch_vitals(rows)));
        StepLoss l;
        const Var hard = hard_loss(logits, batch_labels(rows), cfg.task);
        l.hard = hard.value().item();
        if (!distill) {
            l.total = hard;
            return l;
        }
        Tensor t({rows.size(), outputs});
        for (std::size_t i = 0; i < rows.size(); ++i)
            for (std::size_t c = 0; c < outputs; ++c) t.at(i, c) = targets.at(idx[i], c);
        const Var kd = kd_loss(t, logits, cfg.temperature, cfg.task);
        l.distill = kd.value().item();
        l.total = hard + nn::scale(kd, cfg.lambda);
        return l;
    };
    auto snapshot = [&](std::size_t s) {
        auto c = params.to_checkpoint();
        base_meta(c, distill ? "student" : "supervised", enc, cfg, s);
        c.meta["lambda"] = format_real(cfg.lambda);
        c.meta["temperature"] = format_real(cfg.temperature);
        c.meta["init"] = init ? "stage1" : "random";
        return c;
    };
    return run_loop(train, val, params, cfg, step,
                    [&](std::span<const LabeledExample> d) { return predict_student(enc, params, d); }, snapshot);
}

TrainResult finetune(std::span<const LabeledExample> train, std::span<const LabeledExample> val,
                     const EncoderConfig& enc, const DistillConfig& cfg, const Checkpoint* init) {
    DistillConfig plain = cfg;
    plain.lambda = 0.0;
    return train_student(train, val, enc, plain, nullptr, init);
}

} // namespace ocd
