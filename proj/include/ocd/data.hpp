#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "ocd/ontology.hpp"
#include "ocd/tensor.hpp"

namespace ocd {

/// Hourly-binned vitals: T x c values plus T x c observation indicators
/// (1 = observed). An unobserved cell always holds value 0.
struct VitalsSeries {
    std::size_t hours = 0;
    std::size_t channels = 0;
    std::vector<double> values;
    std::vector<std::uint8_t> observed;

    VitalsSeries() = default;
    VitalsSeries(std::size_t t, std::size_t c) : hours(t), channels(c), values(t * c, 0.0), observed(t * c, 0) {}

    double value(std::size_t t, std::size_t c) const { return values[t * channels + c]; }
    bool is_observed(std::size_t t, std::size_t c) const { return observed[t * channels + c] != 0; }
    void set(std::size_t t, std::size_t c, double v) {
        values[t * channels + c] = v;
        observed[t * channels + c] = 1;
    }
    bool coherent() const;
    bool operator==(const VitalsSeries&) const = default;
};

struct VitalsEvent {
    double hour = 0.0;
    std::size_t channel = 0;
    double value = 0.0;
};

/// Mean of the events falling in each one-hour cell. Throws OffsetOutOfRange
/// for offsets outside [0, T) and UnknownChannel for channel >= c.
VitalsSeries bin_events(std::span<const VitalsEvent> events, std::size_t hours, std::size_t channels);

/// Per-channel mean and standard deviation over observed cells.
struct ChannelStats {
    std::vector<double> mean;
    std::vector<double> stddev;
};

ChannelStats channel_stats(std::span<const VitalsSeries* const> series);
VitalsSeries zscore(const VitalsSeries& s, const ChannelStats& stats);

/// Model input [B, T, 2c]: per hour the c values followed by the c indicators.
nn::Tensor input_batch(std::span<const VitalsSeries> batch);

struct Task {
    std::string name;
    int classes = 2; // 2 means binary with a single logit

    bool binary() const noexcept { return classes == 2; }
    int outputs() const noexcept { return binary() ? 1 : classes; }
    /// "mortality" (binary), "los" (10 classes) or "name:k".
    static Task parse(const std::string& text);
    std::string to_string() const;
};

enum class Split : std::uint8_t { unassigned, train, val, test };
const char* to_string(Split s);
Split parse_split(const std::string& s);

struct PatientRecord {
    std::string id;
    VitalsSeries vitals;
    std::vector<std::string> codes;
    std::map<std::string, int> labels; // task name -> label
    std::vector<float> note_raw;
    std::vector<float> note_summary;
    Split split = Split::unassigned;
};

struct CohortBundle {
    std::vector<std::string> channel_names;
    std::size_t horizon_hours = 0;
    std::size_t note_dim = 0;
    std::vector<PatientRecord> patients;

    std::vector<std::size_t> indices(Split s) const;
    std::string content_hash() const;
};

struct LoadStats {
    std::size_t ignored_vitals_rows = 0;
    std::size_t ignored_diagnosis_rows = 0;
    std::size_t ignored_note_records = 0;
    std::size_t ignored_label_rows = 0;
    std::size_t dropped_patients = 0;
};

struct CohortPaths {
    std::string channels;
    std::string vitals;
    std::string diagnoses;
    std::string labels;
    std::string notes_raw;
    std::string notes_summary;
    std::string splits; // optional
    std::size_t horizon_hours = 48;
};

/// The cohort is the set of patients holding a label for `task`. Rows about
/// other patients are ignored and counted; cohort patients lacking a
/// diagnosis record or either note embedding are dropped and counted.
CohortBundle load_cohort(const CohortPaths& paths, const std::string& task, LoadStats* stats = nullptr);

/// Bundle directory: the files above plus `manifest.txt` holding format
/// metadata, the producing config hash and a SHA-256 per file.
void save_bundle(const std::string& dir, const CohortBundle& bundle, const OntologyTree* tree,
                 std::uint64_t config_hash);
CohortBundle load_bundle(const std::string& dir, const std::string& task, LoadStats* stats = nullptr);
std::map<std::string, std::string> read_manifest(const std::string& dir);

/// Diagnosis file: `patient_id<TAB>code1,code2,...` per line.
std::vector<std::pair<std::string, std::vector<std::string>>> read_diagnosis_file(const std::string& path);

struct NoteEmbeddings {
    std::size_t dim = 0;
    std::vector<std::pair<std::string, std::vector<float>>> records;
};

/// Binary: "OCDNOTE1" | u32 dim | u64 count | count x (u32 id len, id, dim x f32).
void write_note_embeddings(const std::string& path, const NoteEmbeddings& notes);
NoteEmbeddings read_note_embeddings(const std::string& path);

struct SplitFractions {
    double train = 0.7;
    double val = 0.15;
    double test = 0.15;
};

/// Deterministic assignment by salted hash of the patient id, stratified by
/// the label of `stratify_task` when every patient has one. Throws
/// InvalidFractions.
void assign_splits(CohortBundle& bundle, SplitFractions fractions, std::uint64_t seed,
                   const std::string& stratify_task = "");

} // namespace ocd
