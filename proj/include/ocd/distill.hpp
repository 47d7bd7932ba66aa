#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "ocd/data.hpp"
#include "ocd/encoders.hpp"

namespace ocd {

struct DistillConfig {
    double temperature = 2.0;
    double lambda = 5.0;
    double summary_prob = 0.5; // probability of feeding the raw note to the teacher
    double learning_rate = 1e-4;
    std::size_t epochs = 100;
    std::size_t batch_size = 64;
    Task task{"mortality", 2};
    std::uint64_t seed = 0;

    void validate() const;
};

struct LabeledExample {
    std::string id;
    VitalsSeries vitals; // already z-scored
    std::vector<float> note_raw;
    std::vector<float> note_summary;
    int label = 0;
};

/// Examples for `split` from a bundle, with vitals normalised by `stats`.
/// Throws LabelOutOfRange for labels outside the task's classes.
std::vector<LabeledExample> labeled_examples(const CohortBundle& bundle, Split split, const Task& task,
                                             const ChannelStats& stats);

/// Raw note with probability p, otherwise the summary.
const std::vector<float>& select_note_input(const LabeledExample& ex, double p, std::mt19937_64& rng);

/// Batch-mean cross-entropy (k logits) or binary cross-entropy (one logit).
nn::Var hard_loss(const nn::Var& logits, std::span<const int> labels, const Task& task);

/// Batch-mean KL(softmax(zt/T) || softmax(zs/T)) for multiclass tasks, or the
/// binary cross-entropy of sigmoid(zs/T) against sigmoid(zt/T). The teacher
/// logits are treated as constants.
nn::Var kd_loss(const nn::Tensor& teacher_logits, const nn::Var& student_logits, double temperature, const Task& task);

struct EpochLog {
    std::size_t epoch = 0;
    double loss = 0.0;       // mean of per-batch losses
    double hard = 0.0;
    double distill = 0.0;
    double val_auroc = 0.0;
    std::string note_hash;   // digest of the note inputs the teacher consumed
};

struct TrainResult {
    nn::Checkpoint best;           // by validation AUROC
    nn::Checkpoint last;
    std::vector<EpochLog> log;
    std::vector<double> step_losses;
    double best_val_auroc = 0.0;
    std::size_t best_epoch = 0;
};

/// Task AUROC: binary AUROC of the logit, or macro one-vs-rest of the softmax.
double task_auroc(const nn::Tensor& logits, std::span<const int> labels, const Task& task);

/// Logits [n, outputs] in batches of `batch`.
nn::Tensor predict_student(const EncoderConfig& enc, const nn::ParamSet& params, std::span<const LabeledExample> data,
                           std::size_t batch = 256);
nn::Tensor predict_teacher(const EncoderConfig& enc, const nn::ParamSet& params, std::span<const LabeledExample> data,
                           std::size_t batch = 256);

/// Vitals tower, note adapter and head trained jointly on the hard loss.
/// `init` optionally seeds the vitals tower from a Stage-1 checkpoint.
TrainResult train_teacher(std::span<const LabeledExample> train, std::span<const LabeledExample> val,
                          const EncoderConfig& enc, const DistillConfig& cfg, const nn::Checkpoint* init = nullptr);

/// Vitals-only student trained on hard + lambda * KD loss against the frozen
/// teacher. With lambda = 0 the teacher is never consulted and may be null.
/// `init` seeds the encoder from Stage 1; the head always starts fresh.
TrainResult train_student(std::span<const LabeledExample> train, std::span<const LabeledExample> val,
                          const EncoderConfig& enc, const DistillConfig& cfg, const nn::Checkpoint* teacher,
                          const nn::Checkpoint* init = nullptr);

/// Supervised fine-tuning of every parameter: the student loop without a teacher.
TrainResult finetune(std::span<const LabeledExample> train, std::span<const LabeledExample> val,
                     const EncoderConfig& enc, const DistillConfig& cfg, const nn::Checkpoint* init);

} // namespace ocd
