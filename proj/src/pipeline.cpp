#include "ocd/pipeline.hpp"

#include <fmt/format.h>
#include <spdlog/spdlog.h>
#include <spdlog/version.h>

#include <algorithm>
#include <fstream>
#include <map>

#include "ocd/error.hpp"
#include "ocd/util.hpp"
#include "ocd/weight_cache.hpp"

namespace fs = std::filesystem;

namespace ocd {

namespace {

nn::Checkpoint read_checkpoint(const fs::path& path) {
    if (!fs::exists(path)) fail(ErrorCode::MissingInput, "checkpoint " + path.string() + " not found");
    return nn::load_checkpoint(path.string());
}

std::vector<DiagnosisSet> diagnosis_sets(const LoadedCohort& c, std::span<const std::size_t> rows) {
    UnknownCodeStats unknown;
    std::vector<DiagnosisSet> sets;
    for (auto i : rows) sets.push_back(make_diagnosis_set(c.tree, c.bundle.patients[i].id, c.bundle.patients[i].codes, &unknown));
    if (unknown.dropped_codes)
        spdlog::warn("dropped {} unknown diagnosis codes ({} patients left without codes)", unknown.dropped_codes,
                     unknown.emptied_patients);
    return sets;
}

std::vector<std::size_t> all_rows(const CohortBundle& b) {
    std::vector<std::size_t> rows(b.patients.size());
    for (std::size_t i = 0; i < rows.size(); ++i) rows[i] = i;
    return rows;
}

std::vector<int> labels_of(std::span<const LabeledExample> ex) {
    std::vector<int> y;
    for (const auto& e : ex) y.push_back(e.label);
    return y;
}

std::string epoch_log_csv(const TrainResult& r) {
    std::string out = "epoch,loss,hard,distill,val_auroc,note_hash\n";
    for (const auto& e : r.log)
        out += fmt::format("{},{},{},{},{},{}\n", e.epoch, format_real(e.loss), format_real(e.hard),
                           format_real(e.distill), format_real(e.val_auroc), e.note_hash);
    return out;
}

std::string grid_name(const GridPoint& g) {
    return fmt::format("lr{}_T{}_lambda{}_p{}", format_real(g.learning_rate), format_real(g.temperature),
                       format_real(g.lambda), format_real(g.summary_prob));
}

} // namespace

Pipeline::Pipeline(RunConfig cfg) : cfg_(std::move(cfg)), out_(cfg_.output_dir()) {
    std::error_code ec;
    fs::create_directories(out_, ec);
    if (ec) fail(ErrorCode::ConfigError, "cannot create output directory " + out_.string() + ": " + ec.message());
    write_text(out_ / "resolved_config.ini", cfg_.to_ini());
    spdlog::info("ocd {} (spdlog {}.{}.{}) config_hash={} seed={}", kVersion, SPDLOG_VER_MAJOR, SPDLOG_VER_MINOR,
                 SPDLOG_VER_PATCH, cfg_.hash_hex(), cfg_.seed());
}

void Pipeline::write_text(const fs::path& path, const std::string& body) const {
    std::ofstream os(path, std::ios::binary);
    if (!os) fail(ErrorCode::MissingInput, "cannot write " + path.string());
    os << "# config_hash=" << cfg_.hash_hex() << "\n" << body;
    if (!os) fail(ErrorCode::MissingInput, "failed writing " + path.string());
}

void Pipeline::save(const fs::path& path, nn::Checkpoint ckpt) const {
    ckpt.config_hash = cfg_.hash();
    nn::save_checkpoint(path.string(), ckpt);
}

fs::path Pipeline::bundle_dir(const std::optional<fs::path>& given) const {
    fs::path dir = given ? *given : fs::path(cfg_.get("data.bundle"));
    if (dir.empty()) fail(ErrorCode::MissingInput, "no cohort bundle given (--bundle or [data] bundle)");
    if (!fs::exists(dir / "manifest.txt")) fail(ErrorCode::MissingInput, "no bundle manifest in " + dir.string());
    return dir;
}

LoadedCohort Pipeline::load(const fs::path& dir) const {
    const auto task = cfg_.task();
    LoadStats stats;
    auto bundle = load_bundle(dir.string(), task.name, &stats);
    fs::path onto = dir / "ontology.csv";
    if (!fs::exists(onto)) onto = cfg_.get("data.ontology");
    if (onto.empty() || !fs::exists(onto)) fail(ErrorCode::MissingInput, "no ontology in the bundle or [data] ontology");
    return {std::move(bundle), load_ontology_file(onto.string())};
}

fs::path Pipeline::synth() {
    const auto s = synthesize(cfg_.synth());
    const auto dir = out_ / "bundle";
    save_bundle(dir.string(), s.bundle, &s.tree, cfg_.hash());
    std::string body = "patient_id,cluster\n";
    for (std::size_t i = 0; i < s.cluster.size(); ++i) body += s.bundle.patients[i].id + "," + std::to_string(s.cluster[i]) + "\n";
    write_text(out_ / "clusters.csv", body);
    spdlog::info("synthesised {} patients into {}", s.bundle.patients.size(), dir.string());
    return dir;
}

fs::path Pipeline::weights(const fs::path& bundle) {
    const auto c = load(bundle);
    const auto sets = diagnosis_sets(c, all_rows(c.bundle));
    const auto pre = cfg_.pretrain();
    const auto cache = CohortWeightCache::build(c.tree, sets, pre.weight_spec, pre.similarity, cfg_.cache_budget(), pre.threads);
    const auto path = out_ / "weights.cache";
    cache.save(path.string());
    write_text(out_ / "weights.cache.meta",
               fmt::format("ontology_hash={}\ncohort_hash={}\nspec_hash={}\nspec={}\nsimilarity={}\n",
                           hex64(cache.key().ontology_hash), hex64(cache.key().cohort_hash),
                           hex64(cache.key().spec_hash), pre.weight_spec.to_string(), to_string(pre.similarity)));

    const auto bins = cfg_.weight_bins();
    std::string csv = "similarity,bin_low,bin_high,count\n";
    std::string table = fmt::format("weight histogram, {} pairs, spec {}\n", sets.size() * (sets.size() - 1) / 2,
                                    pre.weight_spec.to_string());
    for (auto kind : {SimilarityKind::ontology, SimilarityKind::flat}) {
        const auto m = batch_weight_matrix(c.tree, sets, pre.weight_spec, kind);
        const auto h = weight_histogram(m, bins);
        for (std::size_t b = 0; b < bins; ++b)
            csv += fmt::format("{},{},{},{}\n", to_string(kind), format_real(double(b) / double(bins)),
                               format_real(double(b + 1) / double(bins)), h.counts[b]);
        table += fmt::format("{:<9} fraction of pairs with weight < 1: {:.4f}\n", to_string(kind), h.fraction_below_one);
    }
    write_text(out_ / "weights_histogram.csv", csv);
    write_text(out_ / "weights_summary.txt", table);
    return path;
}

fs::path Pipeline::pretrain(const fs::path& bundle) {
    const auto c = load(bundle);
    const auto enc = cfg_.encoder(c.bundle.channel_names.size(), c.bundle.horizon_hours);
    auto result = ocd::pretrain(c.bundle, c.tree, enc, cfg_.pretrain(), cfg_.augment());
    std::string trace = "step,epoch,loss\n";
    for (const auto& r : result.trace) trace += fmt::format("{},{},{}\n", r.step, r.epoch, format_real(r.loss));
    write_text(out_ / "loss_trace.csv", trace);
    save(out_ / "pretrain_best.ckpt", std::move(result.best_checkpoint));
    const auto path = out_ / "pretrain.ckpt";
    save(path, std::move(result.final_checkpoint));
    return path;
}

fs::path Pipeline::teach(const fs::path& bundle, const std::optional<fs::path>& init) {
    const auto c = load(bundle);
    const auto enc = cfg_.encoder(c.bundle.channel_names.size(), c.bundle.horizon_hours);
    const auto cfg = cfg_.distill();
    const auto stats = training_stats(c.bundle);
    const auto train = labeled_examples(c.bundle, Split::train, cfg.task, stats);
    const auto val = labeled_examples(c.bundle, Split::val, cfg.task, stats);
    std::optional<nn::Checkpoint> stage1;
    if (init) stage1 = read_checkpoint(*init);
    auto result = train_teacher(train, val, enc, cfg, stage1 ? &*stage1 : nullptr);
    write_text(out_ / "teacher_log.csv", epoch_log_csv(result));
    store_stats(result.best, stats);
    const auto path = out_ / "teacher.ckpt";
    save(path, std::move(result.best));
    return path;
}

fs::path Pipeline::distill(const fs::path& bundle, const fs::path& teacher_path, const std::optional<fs::path>& init) {
    const auto c = load(bundle);
    const auto enc = cfg_.encoder(c.bundle.channel_names.size(), c.bundle.horizon_hours);
    const auto cfg = cfg_.distill();
    const auto stats = training_stats(c.bundle);
    const auto train = labeled_examples(c.bundle, Split::train, cfg.task, stats);
    const auto val = labeled_examples(c.bundle, Split::val, cfg.task, stats);
    const auto teacher = read_checkpoint(teacher_path);
    std::optional<nn::Checkpoint> stage1;
    if (init) stage1 = read_checkpoint(*init);
    auto result = train_student(train, val, enc, cfg, &teacher, stage1 ? &*stage1 : nullptr);
    write_text(out_ / "student_log.csv", epoch_log_csv(result));
    store_stats(result.best, stats);
    const auto path = out_ / "student.ckpt";
    save(path, std::move(result.best));
    return path;
}

fs::path Pipeline::finetune(const fs::path& bundle, const std::optional<fs::path>& init) {
    const auto c = load(bundle);
    const auto enc = cfg_.encoder(c.bundle.channel_names.size(), c.bundle.horizon_hours);
    const auto cfg = cfg_.distill();
    const auto stats = training_stats(c.bundle);
    const auto train = labeled_examples(c.bundle, Split::train, cfg.task, stats);
    const auto val = labeled_examples(c.bundle, Split::val, cfg.task, stats);
    std::optional<nn::Checkpoint> stage1;
    if (init) stage1 = read_checkpoint(*init);
    auto result = ocd::finetune(train, val, enc, cfg, stage1 ? &*stage1 : nullptr);
    write_text(out_ / "finetune_log.csv", epoch_log_csv(result));
    store_stats(result.best, stats);
    const auto path = out_ / "finetune.ckpt";
    save(path, std::move(result.best));
    return path;
}

fs::path Pipeline::evaluate(const fs::path& bundle, const fs::path& model, const std::string& name) {
    const auto c = load(bundle);
    const auto ckpt = read_checkpoint(model);
    const auto task = cfg_.task();
    if (ckpt.meta.count("task") && ckpt.meta.at("task") != task.to_string())
        fail(ErrorCode::TaskMismatch, "model was trained for " + ckpt.meta.at("task"));
    const auto enc = EncoderConfig::parse(ckpt.meta.at("encoder"));
    const auto params = nn::ParamSet::from_checkpoint(ckpt);
    const auto test = labeled_examples(c.bundle, Split::test, task, checkpoint_stats(ckpt));
    const bool teacher = ckpt.meta.count("kind") && ckpt.meta.at("kind") == "teacher";
    const auto logits = teacher ? predict_teacher(enc, params, test) : predict_student(enc, params, test);
    const auto report = evaluate_logits(logits, labels_of(test), task, cfg_.eval_resamples(), cfg_.eval_level(), cfg_.seed());
    write_text(out_ / ("eval_" + name + ".txt"), format_report_table(report));
    const auto path = out_ / ("eval_" + name + ".csv");
    write_text(path, format_report_csv(report));
    return path;
}

fs::path Pipeline::probe(const fs::path& bundle, const std::optional<fs::path>& init) {
    const auto c = load(bundle);
    const auto task = cfg_.task();
    nn::ParamSet params;
    EncoderConfig enc;
    ChannelStats stats;
    if (init) {
        const auto ckpt = read_checkpoint(*init);
        enc = EncoderConfig::parse(ckpt.meta.at("encoder"));
        params = nn::ParamSet::from_checkpoint(ckpt);
        stats = checkpoint_stats(ckpt);
    } else {
        enc = cfg_.encoder(c.bundle.channel_names.size(), c.bundle.horizon_hours);
        auto rng = make_stream({cfg_.seed(), 0x494e4954});
        init_encoder(params, enc, rng);
        stats = training_stats(c.bundle);
    }
    const auto train = labeled_examples(c.bundle, Split::train, task, stats);
    const auto test = labeled_examples(c.bundle, Split::test, task, stats);
    auto series = [](std::span<const LabeledExample> ex) {
        std::vector<VitalsSeries> s;
        for (const auto& e : ex) s.push_back(e.vitals);
        return s;
    };
    const auto fraction = parse_real(cfg_.get("probe.label_fraction"), "probe.label_fraction");
    const auto result = linear_probe(embed(enc, params, series(train)), labels_of(train), embed(enc, params, series(test)),
                                     labels_of(test), task, fraction, cfg_.probe());
    std::string idx = "train_row,patient_id\n";
    for (auto i : result.train_indices) idx += fmt::format("{},{}\n", i, train[i].id);
    write_text(out_ / "probe_indices.csv", idx);
    write_text(out_ / "probe.txt", fmt::format("label fraction {}\n", format_real(fraction)) + format_report_table(result.report));
    const auto path = out_ / "probe.csv";
    write_text(path, format_report_csv(result.report));
    return path;
}

fs::path Pipeline::neighbors(const fs::path& bundle, const fs::path& model) {
    const auto c = load(bundle);
    const auto ckpt = read_checkpoint(model);
    const auto enc = EncoderConfig::parse(ckpt.meta.at("encoder"));
    const auto params = nn::ParamSet::from_checkpoint(ckpt);
    const auto stats = checkpoint_stats(ckpt);
    const auto rows = all_rows(c.bundle);
    const auto sets = diagnosis_sets(c, rows);
    const auto emb = embed(enc, params, normalized_series(c.bundle, stats));
    std::vector<NeighborAnalysis> out;
    std::string table = "K   n_knn  knn_mean  random_mean  U  p  r\n";
    for (auto k : cfg_.neighbor_ks()) {
        out.push_back(neighbor_analysis(emb, sets, c.tree, k, cfg_.neighbor_random_pairs(), cfg_.seed()));
        const auto& r = out.back();
        table += fmt::format("{:<3} {:<6} {:.4f}    {:.4f}       {} {:.3g} {:.3f}\n", r.k, r.n_knn, r.knn_mean,
                             r.random_mean, format_real(r.u), r.p_value, r.effect_size_r);
    }
    write_text(out_ / "neighbors.txt", table);
    const auto path = out_ / "neighbors.csv";
    write_text(path, format_neighbors_csv(out));
    return path;
}

fs::path Pipeline::grid(const fs::path& bundle, const std::optional<fs::path>& init, bool dry_run, std::size_t limit) {
    const auto points = cfg_.grid();
    const auto dir = out_ / "grid";
    fs::create_directories(dir);
    std::string index = "name,learning_rate,temperature,lambda,summary_prob,teacher_val_auroc,student_val_auroc,best_epoch\n";
    const std::size_t n = limit ? std::min(limit, points.size()) : points.size();
    if (dry_run) {
        for (const auto& g : points)
            index += fmt::format("{},{},{},{},{},,,\n", grid_name(g), format_real(g.learning_rate),
                                 format_real(g.temperature), format_real(g.lambda), format_real(g.summary_prob));
        write_text(dir / "index.csv", index);
        return dir / "index.csv";
    }

    const auto c = load(bundle);
    const auto enc = cfg_.encoder(c.bundle.channel_names.size(), c.bundle.horizon_hours);
    const auto stats = training_stats(c.bundle);
    const auto base = cfg_.distill();
    const auto train = labeled_examples(c.bundle, Split::train, base.task, stats);
    const auto val = labeled_examples(c.bundle, Split::val, base.task, stats);
    std::optional<nn::Checkpoint> stage1;
    if (init) stage1 = read_checkpoint(*init);

    // Teachers depend only on (learning rate, note mixing), so they are shared.
    std::map<std::pair<double, double>, TrainResult> teachers;
    std::string best_name;
    double best_auroc = -1.0;
    for (std::size_t i = 0; i < n; ++i) {
        const auto& g = points[i];
        DistillConfig d = base;
        d.learning_rate = g.learning_rate;
        d.temperature = g.temperature;
        d.lambda = g.lambda;
        d.summary_prob = g.summary_prob;
        auto key = std::make_pair(g.learning_rate, g.summary_prob);
        if (!teachers.count(key)) teachers.emplace(key, train_teacher(train, val, enc, d, stage1 ? &*stage1 : nullptr));
        const auto& teacher = teachers.at(key);
        auto student = train_student(train, val, enc, d, &teacher.best, stage1 ? &*stage1 : nullptr);

        RunConfig sub = cfg_;
        sub.set("distill.learning_rate", format_real(g.learning_rate));
        sub.set("distill.temperature", format_real(g.temperature));
        sub.set("distill.lambda", format_real(g.lambda));
        sub.set("distill.summary_prob", format_real(g.summary_prob));
        const auto sd = dir / grid_name(g);
        fs::create_directories(sd);
        {
            std::ofstream os(sd / "resolved_config.ini", std::ios::binary);
            os << "# config_hash=" << sub.hash_hex() << "\n" << sub.to_ini();
        }
        store_stats(student.best, stats);
        student.best.config_hash = sub.hash();
        nn::save_checkpoint((sd / "student.ckpt").string(), student.best);
        {
            std::ofstream os(sd / "student_log.csv", std::ios::binary);
            os << "# config_hash=" << sub.hash_hex() << "\n" << epoch_log_csv(student);
        }
        index += fmt::format("{},{},{},{},{},{},{},{}\n", grid_name(g), format_real(g.learning_rate),
                             format_real(g.temperature), format_real(g.lambda), format_real(g.summary_prob),
                             format_real(teacher.best_val_auroc), format_real(student.best_val_auroc), student.best_epoch);
        if (student.best_val_auroc > best_auroc) {
            best_auroc = student.best_val_auroc;
            best_name = grid_name(g);
        }
        spdlog::info("grid {}/{} {} val_auroc={:.4f}", i + 1, n, grid_name(g), student.best_val_auroc);
    }
    write_text(dir / "index.csv", index);
    write_text(dir / "selected.txt", best_name + "\n");
    return dir / "index.csv";
}

void Pipeline::run_all() {
    const auto bundle = synth();
    const auto stage1 = pretrain(bundle);
    const auto teacher = teach(bundle, std::nullopt);
    const auto student = distill(bundle, teacher, stage1);
    evaluate(bundle, teacher, "teacher");
    evaluate(bundle, student, "student");
}

} // namespace ocd
