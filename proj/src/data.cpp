#include "ocd/data.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <set>
#include <unordered_map>

#include "ocd/error.hpp"
#include "ocd/util.hpp"

namespace ocd {

namespace fs = std::filesystem;

bool VitalsSeries::coherent() const {
    if (values.size() != hours * channels || observed.size() != values.size()) return false;
    for (std::size_t i = 0; i < values.size(); ++i)
        if (!observed[i] && values[i] != 0.0) return false;
    return true;
}

VitalsSeries bin_events(std::span<const VitalsEvent> events, std::size_t hours, std::size_t channels) {
    VitalsSeries s(hours, channels);
    std::vector<std::size_t> counts(hours * channels, 0);
    for (const auto& e : events) {
        if (!(e.hour >= 0.0 && e.hour < double(hours)))
            fail(ErrorCode::OffsetOutOfRange, "hour offset " + format_real(e.hour) + " outside [0," +
                                                  std::to_string(hours) + ")");
        if (e.channel >= channels) fail(ErrorCode::UnknownChannel, "channel index " + std::to_string(e.channel));
        const auto cell = static_cast<std::size_t>(std::floor(e.hour)) * channels + e.channel;
        s.values[cell] += e.value;
        ++counts[cell];
    }
    for (std::size_t i = 0; i < counts.size(); ++i) {
        if (counts[i] == 0) continue;
        s.values[i] /= double(counts[i]);
        s.observed[i] = 1;
    }
    return s;
}

ChannelStats channel_stats(std::span<const VitalsSeries* const> series) {
    ChannelStats st;
    if (series.empty()) return st;
    const auto c = series.front()->channels;
    std::vector<double> sum(c, 0.0), sq(c, 0.0);
    std::vector<std::size_t> n(c, 0);
    for (const auto* s : series)
        for (std::size_t t = 0; t < s->hours; ++t)
            for (std::size_t k = 0; k < c; ++k)
                if (s->is_observed(t, k)) {
                    sum[k] += s->value(t, k);
                    ++n[k];
                }
    st.mean.resize(c);
    for (std::size_t k = 0; k < c; ++k) st.mean[k] = n[k] ? sum[k] / double(n[k]) : 0.0;
    for (const auto* s : series)
        for (std::size_t t = 0; t < s->hours; ++t)
            for (std::size_t k = 0; k < c; ++k)
                if (s->is_observed(t, k)) sq[k] += (s->value(t, k) - st.mean[k]) * (s->value(t, k) - st.mean[k]);
    st.stddev.resize(c);
    for (std::size_t k = 0; k < c; ++k) {
        const double sd = n[k] > 1 ? std::sqrt(sq[k] / double(n[k])) : 1.0;
        st.stddev[k] = sd > 1e-12 ? sd : 1.0;
    }
    return st;
}

VitalsSeries zscore(const VitalsSeries& s, const ChannelStats& stats) {
    if (stats.mean.size() != s.channels) fail(ErrorCode::ShapeMismatch, "channel stats do not match series");
    VitalsSeries out = s;
    for (std::size_t t = 0; t < s.hours; ++t)
        for (std::size_t k = 0; k < s.channels; ++k)
            if (s.is_observed(t, k)) out.values[t * s.channels + k] = (s.value(t, k) - stats.mean[k]) / stats.stddev[k];
    return out;
}

nn::Tensor input_batch(std::span<const VitalsSeries> batch) {
    if (batch.empty()) fail(ErrorCode::ShapeMismatch, "empty input batch");
    const auto T = batch[0].hours, c = batch[0].channels;
    nn::Tensor x({batch.size(), T, 2 * c});
    auto d = x.data();
    for (std::size_t b = 0; b < batch.size(); ++b) {
        const auto& s = batch[b];
        if (s.hours != T || s.channels != c) fail(ErrorCode::ShapeMismatch, "mixed series shapes in batch");
        for (std::size_t t = 0; t < T; ++t)
            for (std::size_t k = 0; k < c; ++k) {
                const auto base = (b * T + t) * 2 * c;
                d[base + k] = s.value(t, k);
                d[base + c + k] = s.is_observed(t, k) ? 1.0 : 0.0;
            }
    }
    return x;
}

Task Task::parse(const std::string& text) {
    if (text == "mortality") return {"mortality", 2};
    if (text == "los") return {"los", 10};
    auto parts = split(text, ':');
    if (parts.size() == 2 && !parts[0].empty()) {
        const auto k = parse_int(parts[1], "task classes");
        if (k >= 2) return {parts[0], static_cast<int>(k)};
    }
    fail(ErrorCode::ConfigError, "unknown task '" + text + "' (expected mortality, los or name:k)");
}

std::string Task::to_string() const { return name + ":" + std::to_string(classes); }

const char* to_string(Split s) {
    switch (s) {
    case Split::train: return "train";
    case Split::val: return "val";
    case Split::test: return "test";
    case Split::unassigned: return "unassigned";
    }
    return "unassigned";
}

Split parse_split(const std::string& s) {
    if (s == "train") return Split::train;
    if (s == "val") return Split::val;
    if (s == "test") return Split::test;
    if (s == "unassigned") return Split::unassigned;
    fail(ErrorCode::FormatError, "unknown split '" + s + "'");
}

std::vector<std::size_t> CohortBundle::indices(Split s) const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < patients.size(); ++i)
        if (patients[i].split == s) out.push_back(i);
    return out;
}

std::string CohortBundle::content_hash() const {
    ContentHasher h;
    h.str("bundle-v1").pod<std::uint64_t>(horizon_hours).pod<std::uint64_t>(note_dim);
    h.pod<std::uint64_t>(channel_names.size());
    for (const auto& c : channel_names) h.str(c);
    h.pod<std::uint64_t>(patients.size());
    for (const auto& p : patients) {
        h.str(p.id).pod<std::uint8_t>(static_cast<std::uint8_t>(p.split));
        h.pod<std::uint64_t>(p.vitals.hours).pod<std::uint64_t>(p.vitals.channels);
        h.bytes(p.vitals.values.data(), p.vitals.values.size() * sizeof(double));
        h.bytes(p.vitals.observed.data(), p.vitals.observed.size());
        h.pod<std::uint64_t>(p.codes.size());
        for (const auto& c : p.codes) h.str(c);
        h.pod<std::uint64_t>(p.labels.size());
        for (const auto& [task, y] : p.labels) h.str(task).pod<std::int64_t>(y);
        h.bytes(p.note_raw.data(), p.note_raw.size() * sizeof(float));
        h.bytes(p.note_summary.data(), p.note_summary.size() * sizeof(float));
    }
    return h.hex();
}

// ---------------------------------------------------------------------------
// Note embeddings

namespace {
constexpr char kNoteMagic[8] = {'O', 'C', 'D', 'N', 'O', 'T', 'E', '1'};
}

void write_note_embeddings(const std::string& path, const NoteEmbeddings& notes) {
    std::ofstream out(path, std::ios::binary);
    if (!out) fail(ErrorCode::MissingInput, "cannot write " + path);
    out.write(kNoteMagic, sizeof kNoteMagic);
    bin::write<std::uint32_t>(out, static_cast<std::uint32_t>(notes.dim));
    bin::write<std::uint64_t>(out, notes.records.size());
    for (const auto& [id, v] : notes.records) {
        if (v.size() != notes.dim) fail(ErrorCode::FormatError, "note embedding for '" + id + "' has wrong dimension");
        bin::write_string(out, id);
        out.write(reinterpret_cast<const char*>(v.data()), static_cast<std::streamsize>(v.size() * sizeof(float)));
    }
}

NoteEmbeddings read_note_embeddings(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) fail(ErrorCode::MissingInput, "cannot open " + path);
    constexpr auto E = ErrorCode::FormatError;
    char magic[8];
    if (!in.read(magic, sizeof magic) || std::memcmp(magic, kNoteMagic, sizeof magic) != 0)
        fail(E, "bad note-embedding magic in " + path);
    NoteEmbeddings notes;
    notes.dim = bin::read<std::uint32_t>(in, E);
    const auto count = bin::read<std::uint64_t>(in, E);
    for (std::uint64_t i = 0; i < count; ++i) {
        auto id = bin::read_string(in, E);
        std::vector<float> v(notes.dim);
        if (notes.dim > 0 && !in.read(reinterpret_cast<char*>(v.data()), static_cast<std::streamsize>(notes.dim * sizeof(float))))
            fail(E, "truncated note embedding for '" + id + "'");
        notes.records.emplace_back(std::move(id), std::move(v));
    }
    return notes;
}

// ---------------------------------------------------------------------------
// Text files

namespace {

std::ifstream open_text(const std::string& path) {
    std::ifstream in(path);
    if (!in) fail(ErrorCode::MissingInput, "cannot open " + path);
    return in;
}

// Calls `fn(fields, lineno)` for every non-comment, non-blank line.
template <typename Fn>
void for_each_record(const std::string& path, char sep, Fn fn) {
    auto in = open_text(path);
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        auto v = trim(line);
        if (v.empty() || v.front() == '#') continue;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        fn(split(line, sep), lineno);
    }
}

[[noreturn]] void bad_line(const std::string& path, std::size_t lineno, const std::string& why) {
    fail(ErrorCode::FormatError, path + ":" + std::to_string(lineno) + ": " + why);
}

} // namespace

std::vector<std::pair<std::string, std::vector<std::string>>> read_diagnosis_file(const std::string& path) {
    std::vector<std::pair<std::string, std::vector<std::string>>> out;
    for_each_record(path, '\t', [&](const std::vector<std::string>& f, std::size_t ln) {
        if (f.size() != 2) bad_line(path, ln, "expected patient_id<TAB>codes");
        std::vector<std::string> cs;
        if (!trim(f[1]).empty())
            for (auto& c : split(trim(f[1]), ',')) cs.emplace_back(trim(c));
        out.emplace_back(std::string(trim(f[0])), std::move(cs));
    });
    return out;
}

CohortBundle load_cohort(const CohortPaths& paths, const std::string& task_name, LoadStats* stats_out) {
    LoadStats stats;
    CohortBundle b;
    b.horizon_hours = paths.horizon_hours;

    for_each_record(paths.channels, '\n', [&](const std::vector<std::string>& f, std::size_t) {
        b.channel_names.emplace_back(trim(f[0]));
    });
    if (b.channel_names.empty()) fail(ErrorCode::FormatError, "channel dictionary is empty");
    std::unordered_map<std::string, std::size_t> channel_index;
    for (std::size_t i = 0; i < b.channel_names.size(); ++i)
        if (!channel_index.emplace(b.channel_names[i], i).second)
            fail(ErrorCode::FormatError, "duplicate channel '" + b.channel_names[i] + "'");

    // Labels define the cohort, in file order.
    std::unordered_map<std::string, std::size_t> index;
    std::vector<std::map<std::string, int>> labels;
    std::vector<std::string> ids;
    for_each_record(paths.labels, ',', [&](const std::vector<std::string>& f, std::size_t ln) {
        if (f.size() != 3) bad_line(paths.labels, ln, "expected patient_id,task_name,label");
        if (f[0] == "patient_id") return; // header
        const std::string id(trim(f[0]));
        auto it = index.find(id);
        if (it == index.end()) {
            it = index.emplace(id, ids.size()).first;
            ids.push_back(id);
            labels.emplace_back();
        }
        labels[it->second][std::string(trim(f[1]))] = static_cast<int>(parse_int(f[2], "label"));
    });

    std::vector<bool> in_cohort(ids.size());
    for (std::size_t i = 0; i < ids.size(); ++i) in_cohort[i] = labels[i].count(task_name) > 0;
    auto lookup = [&](const std::string& id) -> std::optional<std::size_t> {
        auto it = index.find(id);
        if (it == index.end() || !in_cohort[it->second]) return std::nullopt;
        return it->second;
    };
    for (std::size_t i = 0; i < ids.size(); ++i)
        if (!in_cohort[i]) stats.ignored_label_rows += labels[i].size();

    const auto n = ids.size();
    std::vector<std::vector<VitalsEvent>> events(n);
    for_each_record(paths.vitals, ',', [&](const std::vector<std::string>& f, std::size_t ln) {
        if (f.size() != 4) bad_line(paths.vitals, ln, "expected patient_id,hour_offset,channel_name,value");
        if (f[0] == "patient_id") return;
        auto p = lookup(std::string(trim(f[0])));
        if (!p) {
            ++stats.ignored_vitals_rows;
            return;
        }
        auto ch = channel_index.find(std::string(trim(f[2])));
        if (ch == channel_index.end()) fail(ErrorCode::UnknownChannel, "'" + f[2] + "' in " + paths.vitals);
        events[*p].push_back({parse_real(f[1], "hour_offset"), ch->second, parse_real(f[3], "value")});
    });

    std::vector<std::optional<std::vector<std::string>>> codes(n);
    for_each_record(paths.diagnoses, '\t', [&](const std::vector<std::string>& f, std::size_t ln) {
        if (f.size() != 2) bad_line(paths.diagnoses, ln, "expected patient_id<TAB>codes");
        auto p = lookup(std::string(trim(f[0])));
        if (!p) {
            ++stats.ignored_diagnosis_rows;
            return;
        }
        std::vector<std::string> cs;
        if (!trim(f[1]).empty())
            for (auto& c : split(trim(f[1]), ',')) cs.emplace_back(trim(c));
        codes[*p] = std::move(cs);
    });

    auto read_notes = [&](const std::string& path, std::vector<std::optional<std::vector<float>>>& out) {
        auto notes = read_note_embeddings(path);
        if (b.note_dim == 0) b.note_dim = notes.dim;
        if (notes.dim != b.note_dim) fail(ErrorCode::FormatError, "raw and summary note dimensions differ");
        out.assign(n, std::nullopt);
        for (auto& [id, v] : notes.records) {
            auto p = lookup(id);
            if (!p) {
                ++stats.ignored_note_records;
                continue;
            }
            out[*p] = std::move(v);
        }
    };
    std::vector<std::optional<std::vector<float>>> raw, summ;
    read_notes(paths.notes_raw, raw);
    read_notes(paths.notes_summary, summ);

    std::unordered_map<std::string, Split> splits;
    if (!paths.splits.empty()) {
        for_each_record(paths.splits, ',', [&](const std::vector<std::string>& f, std::size_t ln) {
            if (f.size() != 2) bad_line(paths.splits, ln, "expected patient_id,split");
            if (f[0] == "patient_id") return;
            splits[std::string(trim(f[0]))] = parse_split(std::string(trim(f[1])));
        });
    }

    for (std::size_t i = 0; i < n; ++i) {
        if (!in_cohort[i]) continue;
        if (!codes[i] || !raw[i] || !summ[i]) {
            ++stats.dropped_patients;
            continue;
        }
        PatientRecord r;
        r.id = ids[i];
        r.vitals = bin_events(events[i], b.horizon_hours, b.channel_names.size());
        r.codes = std::move(*codes[i]);
        r.labels = std::move(labels[i]);
        r.note_raw = std::move(*raw[i]);
        r.note_summary = std::move(*summ[i]);
        if (auto it = splits.find(r.id); it != splits.end()) r.split = it->second;
        b.patients.push_back(std::move(r));
    }
    if (b.patients.empty()) fail(ErrorCode::EmptyCohort, "no patient has every required artifact for task '" + task_name + "'");
    if (stats.dropped_patients || stats.ignored_vitals_rows || stats.ignored_diagnosis_rows || stats.ignored_note_records)
        spdlog::warn("cohort load: dropped {} patients; ignored {} vitals rows, {} diagnosis rows, {} note records",
                     stats.dropped_patients, stats.ignored_vitals_rows, stats.ignored_diagnosis_rows,
                     stats.ignored_note_records);
    if (stats_out) *stats_out = stats;
    return b;
}

namespace {

const char* kFiles[] = {"channels.txt", "vitals.csv", "diagnoses.tsv", "labels.csv",
                        "notes_raw.bin", "notes_summary.bin", "splits.csv"};

} // namespace

void save_bundle(const std::string& dir, const CohortBundle& b, const OntologyTree* tree, std::uint64_t config_hash) {
    fs::create_directories(dir);
    auto path = [&](const char* f) { return (fs::path(dir) / f).string(); };
    auto open = [&](const char* f) {
        std::ofstream out(path(f));
        if (!out) fail(ErrorCode::MissingInput, "cannot write " + path(f));
        return out;
    };
    {
        auto out = open("channels.txt");
        for (const auto& c : b.channel_names) out << c << '\n';
    }
    {
        auto out = open("vitals.csv");
        out << "# patient_id,hour_offset,channel_name,value\n";
        for (const auto& p : b.patients)
            for (std::size_t t = 0; t < p.vitals.hours; ++t)
                for (std::size_t k = 0; k < p.vitals.channels; ++k)
                    if (p.vitals.is_observed(t, k))
                        out << p.id << ',' << format_real(double(t) + 0.5) << ',' << b.channel_names[k] << ','
                            << format_real(p.vitals.value(t, k)) << '\n';
    }
    {
        auto out = open("diagnoses.tsv");
        for (const auto& p : b.patients) {
            out << p.id << '\t';
            for (std::size_t i = 0; i < p.codes.size(); ++i) out << (i ? "," : "") << p.codes[i];
            out << '\n';
        }
    }
    {
        auto out = open("labels.csv");
        out << "# patient_id,task_name,label\n";
        for (const auto& p : b.patients)
            for (const auto& [task, y] : p.labels) out << p.id << ',' << task << ',' << y << '\n';
    }
    {
        auto out = open("splits.csv");
        out << "# patient_id,split\n";
        for (const auto& p : b.patients) out << p.id << ',' << to_string(p.split) << '\n';
    }
    NoteEmbeddings raw{b.note_dim, {}}, summ{b.note_dim, {}};
    for (const auto& p : b.patients) {
        raw.records.emplace_back(p.id, p.note_raw);
        summ.records.emplace_back(p.id, p.note_summary);
    }
    write_note_embeddings(path("notes_raw.bin"), raw);
    write_note_embeddings(path("notes_summary.bin"), summ);
    if (tree) {
        auto out = open("ontology.csv");
        write_ontology(out, *tree);
    }

    auto out = open("manifest.txt");
    out << "format_version=1\n";
    out << "config_hash=" << hex64(config_hash) << '\n';
    out << "horizon_hours=" << b.horizon_hours << '\n';
    out << "note_dim=" << b.note_dim << '\n';
    out << "patients=" << b.patients.size() << '\n';
    out << "bundle_hash=" << b.content_hash() << '\n';
    for (const char* f : kFiles) out << "sha256." << f << '=' << sha256_file_hex(path(f)) << '\n';
    if (tree) out << "sha256.ontology.csv=" << sha256_file_hex(path("ontology.csv")) << '\n';
}

std::map<std::string, std::string> read_manifest(const std::string& dir) {
    std::map<std::string, std::string> m;
    for_each_record((fs::path(dir) / "manifest.txt").string(), '\n', [&](const std::vector<std::string>& f, std::size_t ln) {
        auto eq = f[0].find('=');
        if (eq == std::string::npos) bad_line("manifest.txt", ln, "expected key=value");
        m[f[0].substr(0, eq)] = f[0].substr(eq + 1);
    });
    return m;
}

CohortBundle load_bundle(const std::string& dir, const std::string& task, LoadStats* stats) {
    const auto manifest = read_manifest(dir);
    auto path = [&](const char* f) { return (fs::path(dir) / f).string(); };
    for (const auto& [key, digest] : manifest) {
        if (key.rfind("sha256.", 0) != 0) continue;
        const auto file = key.substr(7);
        if (sha256_file_hex((fs::path(dir) / file).string()) != digest)
            fail(ErrorCode::FormatError, "content hash mismatch for " + file);
    }
    auto get = [&](const char* key) {
        auto it = manifest.find(key);
        if (it == manifest.end()) fail(ErrorCode::FormatError, std::string("manifest lacks ") + key);
        return it->second;
    };
    CohortPaths p;
    p.channels = path("channels.txt");
    p.vitals = path("vitals.csv");
    p.diagnoses = path("diagnoses.tsv");
    p.labels = path("labels.csv");
    p.notes_raw = path("notes_raw.bin");
    p.notes_summary = path("notes_summary.bin");
    p.splits = path("splits.csv");
    p.horizon_hours = static_cast<std::size_t>(parse_int(get("horizon_hours"), "horizon_hours"));
    return load_cohort(p, task, stats);
}

void assign_splits(CohortBundle& bundle, SplitFractions fr, std::uint64_t seed, const std::string& stratify_task) {
    const double total = fr.train + fr.val + fr.test;
    if (fr.train < 0 || fr.val < 0 || fr.test < 0 || std::abs(total - 1.0) > 1e-9)
        fail(ErrorCode::InvalidFractions, "split fractions must be non-negative and sum to 1");

    bool stratify = !stratify_task.empty();
    for (const auto& p : bundle.patients) stratify = stratify && p.labels.count(stratify_task) > 0;

    std::map<int, std::vector<std::pair<std::uint64_t, std::size_t>>> strata;
    for (std::size_t i = 0; i < bundle.patients.size(); ++i) {
        const auto& p = bundle.patients[i];
        const int key = stratify ? p.labels.at(stratify_task) : 0;
        const auto salted = sha256_u64(std::to_string(seed) + "|" + p.id);
        strata[key].emplace_back(salted, i);
    }
    for (auto& [key, members] : strata) {
        std::sort(members.begin(), members.end());
        const double n = double(members.size());
        const auto n_train = static_cast<std::size_t>(std::llround(n * fr.train));
        const auto n_val = std::min(members.size() - n_train, static_cast<std::size_t>(std::llround(n * fr.val)));
        for (std::size_t r = 0; r < members.size(); ++r) {
            auto& s = bundle.patients[members[r].second].split;
            s = r < n_train ? Split::train : (r < n_train + n_val ? Split::val : Split::test);
        }
    }
}

} // namespace ocd
