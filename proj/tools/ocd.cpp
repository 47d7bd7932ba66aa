#include <CLI11.hpp>
#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include <fstream>
#include <iostream>
#include <optional>

#include "ocd/pipeline.hpp"
#include "ocd/util.hpp"

namespace fs = std::filesystem;
using namespace ocd;

namespace {

int exit_code(ErrorCode c) {
    switch (c) {
    case ErrorCode::ConfigError:
    case ErrorCode::DegenerateConfig:
    case ErrorCode::InvalidFractions:
    case ErrorCode::TaskMismatch:
    case ErrorCode::BudgetExceeded:
    case ErrorCode::KTooLarge:
    case ErrorCode::InsufficientLabels:
        return 2;
    case ErrorCode::NumericFailure:
    case ErrorCode::NonFiniteInput:
    case ErrorCode::NonScalarLoss:
    case ErrorCode::NormViolation:
        return 4;
    default:
        return 3;
    }
}

struct Common {
    std::string config;
    std::vector<std::string> sets;
    std::optional<std::uint64_t> seed;
    std::string out;
    bool verbose = false;

    void attach(CLI::App* app) {
        app->add_option("-c,--config", config, "INI run configuration");
        app->add_option("--set", sets, "Override a key: section.key=value (repeatable)");
        app->add_option("--seed", seed, "Global seed (overrides run.seed)");
        app->add_option("-o,--out", out, "Output directory (overrides run.output_dir)");
        app->add_flag("-v,--verbose", verbose, "Debug logging");
    }

    // Precedence: flags > file > defaults.
    RunConfig resolve() const {
        RunConfig cfg;
        if (!config.empty()) cfg.load_file(config);
        for (const auto& s : sets) cfg.set_assignment(s);
        if (seed) cfg.set("run.seed", std::to_string(*seed));
        if (!out.empty()) cfg.set("run.output_dir", out);
        return cfg;
    }
};

std::optional<fs::path> opt_path(const std::string& s) {
    if (s.empty()) return std::nullopt;
    return fs::path(s);
}

void print_file(const fs::path& p) {
    std::ifstream in(p);
    std::cout << in.rdbuf();
}

} // namespace

int main(int argc, char** argv) {
    tune_allocator();
    CLI::App app{"Ontology-aware contrastive pretraining and knowledge distillation for clinical time series"};
    app.require_subcommand(1);
    app.set_version_flag("--version", kVersion);

    Common common;
    std::string bundle, init, teacher, model, name = "model", ontology, code_a, code_b, diagnoses;
    std::string kind = "ontology";
    bool dry_run = false;
    std::size_t limit = 0;

    auto* onto_stats = app.add_subcommand("ontology-stats", "Summarise an ontology edge-list file");
    onto_stats->add_option("--ontology", ontology, "child_id,parent_id,label file")->required();

    auto* sim = app.add_subcommand("sim", "Code-pair or patient-pair similarity");
    sim->add_option("--ontology", ontology, "Ontology file")->required();
    sim->add_option("--a", code_a, "First code, or first patient id with --diagnoses");
    sim->add_option("--b", code_b, "Second code, or second patient id with --diagnoses");
    sim->add_option("--diagnoses", diagnoses, "Diagnosis file for patient-pair queries");
    sim->add_option("--kind", kind, "ontology or flat (patient pairs)");

    auto* weights = app.add_subcommand("weights", "Build the cohort weight cache and histograms");
    weights->alias("analyze-weights");
    auto* synth = app.add_subcommand("synth", "Synthesise a cohort bundle");
    auto* pretrain = app.add_subcommand("pretrain", "Stage 1: ontology-weighted contrastive pretraining");
    auto* teach = app.add_subcommand("teach", "Train the notes+vitals teacher");
    auto* distill = app.add_subcommand("distill", "Train the vitals-only student against a teacher");
    auto* probe = app.add_subcommand("probe", "Linear probe on frozen embeddings");
    auto* finetune = app.add_subcommand("finetune", "Supervised fine-tuning of all parameters");
    auto* eval = app.add_subcommand("eval", "Test-split AUROC/AUPRC with bootstrap intervals");
    auto* neighbors = app.add_subcommand("analyze-neighbors", "Embedding nearest-neighbour diagnosis similarity");
    auto* grid = app.add_subcommand("grid", "Hyperparameter sweep over learning rate, T, lambda and p");
    auto* pipeline = app.add_subcommand("pipeline", "synth, pretrain, teach, distill and eval in one run");

    for (auto* sc : {onto_stats, sim, weights, synth, pretrain, teach, distill, probe, finetune, eval, neighbors, grid, pipeline})
        common.attach(sc);
    for (auto* sc : {weights, pretrain, teach, distill, probe, finetune, eval, neighbors, grid})
        sc->add_option("--bundle", bundle, "Cohort bundle directory (overrides data.bundle)");
    for (auto* sc : {teach, distill, probe, finetune, grid})
        sc->add_option("--init", init, "Stage-1 checkpoint for the encoder");
    distill->add_option("--teacher", teacher, "Teacher checkpoint")->required();
    eval->add_option("--model", model, "Teacher or student checkpoint")->required();
    eval->add_option("--name", name, "Report name");
    neighbors->add_option("--model", model, "Checkpoint whose encoder embeds the cohort")->required();
    grid->add_flag("--dry-run", dry_run, "Only enumerate the configurations");
    grid->add_option("--limit", limit, "Run at most this many configurations");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForVersion& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    }

    try {
        spdlog::set_level(common.verbose ? spdlog::level::debug : spdlog::level::info);
        const auto cfg = common.resolve();
        if (onto_stats->parsed()) {
            const auto tree = load_ontology_file(ontology);
            std::size_t leaves = 0, max_children = 0;
            double leaf_depth = 0.0;
            for (NodeId n = 0; n < tree.size(); ++n) {
                max_children = std::max(max_children, tree.children(n).size());
                if (tree.is_leaf(n)) {
                    ++leaves;
                    leaf_depth += tree.depth(n);
                }
            }
            fmt::print("nodes {}\nleaves {}\nmax_depth {}\nmean_leaf_depth {:.4f}\nmax_children {}\nroot {}\nhash {}\n",
                       tree.size(), leaves, tree.max_depth(), leaf_depth / double(leaves), max_children,
                       tree.id(tree.root()), hex64(tree.content_hash()));
            return 0;
        }
        if (sim->parsed()) {
            const auto tree = load_ontology_file(ontology);
            if (code_a.empty() || code_b.empty()) fail(ErrorCode::ConfigError, "sim needs --a and --b");
            if (diagnoses.empty()) {
                const double s = tree.code_similarity({tree.at(code_a), tree.at(code_b)});
                fmt::print("{}\n", format_real(s));
                return 0;
            }
            const auto records = read_diagnosis_file(diagnoses);
            auto find = [&](const std::string& id) {
                for (const auto& [pid, codes] : records)
                    if (pid == id) return make_diagnosis_set(tree, pid, codes);
                fail(ErrorCode::MissingInput, "patient " + id + " not in " + diagnoses);
            };
            const auto a = find(code_a), b = find(code_b);
            const auto k = parse_similarity_kind(kind);
            const auto spec = cfg.pretrain().weight_spec;
            const double s = k == SimilarityKind::flat ? flat_similarity(a, b) : patient_similarity(tree, a, b);
            fmt::print("similarity {}\nweight {} {}\n", format_real(s), spec.to_string(), format_real(weight(spec, s)));
            return 0;
        }

        RunConfig resolved = cfg;
        if (!bundle.empty()) resolved.set("data.bundle", bundle);
        Pipeline p(resolved);
        const auto bundle_path = [&] { return p.bundle_dir(); };
        fs::path result;
        if (synth->parsed()) result = p.synth();
        else if (weights->parsed()) {
            result = p.weights(bundle_path());
            print_file(p.out() / "weights_summary.txt");
        } else if (pretrain->parsed()) result = p.pretrain(bundle_path());
        else if (teach->parsed()) result = p.teach(bundle_path(), opt_path(init));
        else if (distill->parsed()) result = p.distill(bundle_path(), teacher, opt_path(init));
        else if (finetune->parsed()) result = p.finetune(bundle_path(), opt_path(init));
        else if (probe->parsed()) {
            result = p.probe(bundle_path(), opt_path(init));
            print_file(p.out() / "probe.txt");
        } else if (eval->parsed()) {
            result = p.evaluate(bundle_path(), model, name);
            print_file(p.out() / ("eval_" + name + ".txt"));
        } else if (neighbors->parsed()) {
            result = p.neighbors(bundle_path(), model);
            print_file(p.out() / "neighbors.txt");
        } else if (grid->parsed()) {
            if (dry_run) {
                result = p.grid({}, opt_path(init), true, limit);
                fmt::print("{} configurations\n", cfg.grid().size());
            } else {
                result = p.grid(bundle_path(), opt_path(init), false, limit);
            }
        } else if (pipeline->parsed()) {
            p.run_all();
            result = p.out();
        }
        spdlog::info("wrote {}", result.string());
        return 0;
    } catch (const Error& e) {
        spdlog::error("{}", e.what());
        return exit_code(e.code());
    } catch (const std::exception& e) {
        spdlog::error("{}", e.what());
        return 3;
    }
}
