#include "ocd/config.hpp"

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include <filesystem>
#include <thread>

#include "ocd/error.hpp"
#include "ocd/util.hpp"

namespace ocd {

namespace {

const std::vector<std::pair<std::string, std::string>>& defaults() {
    static const std::vector<std::pair<std::string, std::string>> d = {
        {"run.seed", "0"},
        {"run.output_dir", "ocd-run"},
        {"run.threads", "1"},
        {"data.bundle", ""},
        {"data.ontology", ""},
        {"data.task", "mortality"},
        {"synth.n_patients", "500"},
        {"synth.n_clusters", "4"},
        {"synth.tree_depth", "4"},
        {"synth.tree_branching", "4"},
        {"synth.codes_per_patient", "4"},
        {"synth.vitals_signal_strength", "1"},
        {"synth.notes_signal_strength", "3"},
        {"synth.label_noise", "0.1"},
        {"synth.code_noise", "0.2"},
        {"synth.missing_rate", "0.3"},
        {"synth.horizon_hours", "24"},
        {"synth.channels", "12"},
        {"synth.note_dim", "32"},
        {"synth.train_fraction", "0.7"},
        {"synth.val_fraction", "0.15"},
        {"synth.test_fraction", "0.15"},
        {"encoder.layers", "2"},
        {"encoder.heads", "4"},
        {"encoder.model_dim", "64"},
        {"encoder.ffn_dim", "128"},
        {"encoder.pooling", "mean"},
        {"encoder.positional", "1"},
        {"augment.jitter_sigma", "0.1"},
        {"augment.time_mask_ratio", "0.1"},
        {"augment.feature_mask_ratio", "0.1"},
        {"pretrain.temperature", "1"},
        {"pretrain.batch_size", "256"},
        {"pretrain.epochs", "50"},
        {"pretrain.learning_rate", "1e-4"},
        {"pretrain.weight", "power:5"},
        {"pretrain.similarity", "ontology"},
        {"pretrain.projection_dim", "0"},
        {"weights.bins", "20"},
        {"weights.budget", "268435456"},
        {"distill.temperature", "2"},
        {"distill.lambda", "5"},
        {"distill.summary_prob", "0.5"},
        {"distill.learning_rate", "1e-4"},
        {"distill.epochs", "100"},
        {"distill.batch_size", "64"},
        {"probe.label_fraction", "0.05"},
        {"probe.l2", "0.01"},
        {"probe.learning_rate", "0.5"},
        {"probe.iterations", "500"},
        {"eval.resamples", "1000"},
        {"eval.level", "0.95"},
        {"neighbors.k", "1,3,5"},
        {"neighbors.random_pairs", "0"},
        {"grid.learning_rates", "1e-4,5e-4,5e-5"},
        {"grid.temperatures", "1,2,5"},
        {"grid.lambdas", "1,5,10"},
        {"grid.summary_probs", "0,0.5,1"},
    };
    return d;
}

template <typename Fn>
auto as_config(const std::string& key, Fn fn) {
    try {
        return fn();
    } catch (const Error& e) {
        if (e.code() == ErrorCode::ConfigError) throw;
        fail(ErrorCode::ConfigError, key + ": " + e.what());
    }
}

} // namespace

RunConfig::RunConfig() {
    for (const auto& [k, v] : defaults()) {
        order_.push_back(k);
        values_[k] = v;
    }
}

bool RunConfig::known(const std::string& key) const { return values_.count(key) > 0; }

void RunConfig::set(const std::string& key, const std::string& value) {
    if (!known(key)) fail(ErrorCode::ConfigError, "unknown configuration key '" + key + "'");
    values_[key] = std::string(trim(value));
}

void RunConfig::set_assignment(const std::string& assignment) {
    const auto eq = assignment.find('=');
    if (eq == std::string::npos) fail(ErrorCode::ConfigError, "expected section.key=value, got '" + assignment + "'");
    set(std::string(trim(std::string_view(assignment).substr(0, eq))), assignment.substr(eq + 1));
}

const std::string& RunConfig::get(const std::string& key) const {
    auto it = values_.find(key);
    if (it == values_.end()) fail(ErrorCode::ConfigError, "unknown configuration key '" + key + "'");
    return it->second;
}

void RunConfig::load_file(const std::string& path) {
    if (!std::filesystem::exists(path)) fail(ErrorCode::MissingInput, "config file " + path + " not found");
    boost::property_tree::ptree tree;
    try {
        boost::property_tree::ini_parser::read_ini(path, tree);
    } catch (const boost::property_tree::ini_parser_error& e) {
        fail(ErrorCode::ConfigError, e.what());
    }
    for (const auto& [section, body] : tree) {
        if (body.empty()) fail(ErrorCode::ConfigError, "key '" + section + "' outside any section in " + path);
        for (const auto& [key, value] : body) set(section + "." + key, value.get_value<std::string>());
    }
}

std::string RunConfig::to_ini() const {
    std::string out, section;
    for (const auto& key : order_) {
        const auto dot = key.find('.');
        const auto s = key.substr(0, dot);
        if (s != section) {
            if (!section.empty()) out += "\n";
            out += "[" + s + "]\n";
            section = s;
        }
        out += key.substr(dot + 1) + " = " + values_.at(key) + "\n";
    }
    return out;
}

std::uint64_t RunConfig::hash() const {
    // Where outputs go and how many workers run do not change any result.
    std::string text;
    for (const auto& key : order_)
        if (key != "run.output_dir" && key != "run.threads") text += key + "=" + values_.at(key) + "\n";
    return sha256_u64(text);
}
std::string RunConfig::hash_hex() const { return hex64(hash()); }

double RunConfig::real(const std::string& key) const {
    return as_config(key, [&] { return parse_real(get(key), key.c_str()); });
}

long long RunConfig::integer(const std::string& key) const {
    return as_config(key, [&] { return parse_int(get(key), key.c_str()); });
}

std::size_t RunConfig::count(const std::string& key) const {
    const auto v = integer(key);
    if (v < 0) fail(ErrorCode::ConfigError, key + " must be non-negative");
    return static_cast<std::size_t>(v);
}

std::vector<double> RunConfig::reals(const std::string& key) const {
    std::vector<double> out;
    for (const auto& part : split(get(key), ','))
        out.push_back(as_config(key, [&] { return parse_real(trim(part), key.c_str()); }));
    if (out.empty()) fail(ErrorCode::ConfigError, key + " is empty");
    return out;
}

std::uint64_t RunConfig::seed() const {
    const auto v = integer("run.seed");
    if (v < 0) fail(ErrorCode::ConfigError, "run.seed must be non-negative");
    return static_cast<std::uint64_t>(v);
}

std::string RunConfig::output_dir() const { return get("run.output_dir"); }

unsigned RunConfig::threads() const {
    const auto t = count("run.threads");
    return t == 0 ? std::max(1u, std::thread::hardware_concurrency()) : static_cast<unsigned>(t);
}

Task RunConfig::task() const {
    return as_config("data.task", [&] { return Task::parse(get("data.task")); });
}

SynthConfig RunConfig::synth() const {
    SynthConfig s;
    s.n_patients = count("synth.n_patients");
    s.n_clusters = count("synth.n_clusters");
    s.tree_depth = count("synth.tree_depth");
    s.tree_branching = count("synth.tree_branching");
    s.codes_per_patient = count("synth.codes_per_patient");
    s.vitals_signal_strength = real("synth.vitals_signal_strength");
    s.notes_signal_strength = real("synth.notes_signal_strength");
    s.label_noise = real("synth.label_noise");
    s.code_noise = real("synth.code_noise");
    s.missing_rate = real("synth.missing_rate");
    s.horizon_hours = count("synth.horizon_hours");
    s.channels = count("synth.channels");
    s.note_dim = count("synth.note_dim");
    s.fractions = {real("synth.train_fraction"), real("synth.val_fraction"), real("synth.test_fraction")};
    s.seed = seed();
    return s;
}

EncoderConfig RunConfig::encoder(std::size_t channels, std::size_t horizon) const {
    EncoderConfig e;
    e.layers = count("encoder.layers");
    e.heads = count("encoder.heads");
    e.model_dim = count("encoder.model_dim");
    e.ffn_dim = count("encoder.ffn_dim");
    const auto& pooling = get("encoder.pooling");
    if (pooling != "mean" && pooling != "cls") fail(ErrorCode::ConfigError, "encoder.pooling must be mean or cls");
    e.pooling = pooling == "mean" ? Pooling::mean : Pooling::cls;
    e.positional = integer("encoder.positional") != 0;
    e.input_channels = 2 * channels;
    e.max_timesteps = horizon;
    e.validate();
    return e;
}

AugmentConfig RunConfig::augment() const {
    AugmentConfig a;
    a.jitter_sigma = real("augment.jitter_sigma");
    a.time_mask_ratio = real("augment.time_mask_ratio");
    a.feature_mask_ratio = real("augment.feature_mask_ratio");
    a.seed = seed();
    a.validate();
    return a;
}

PretrainConfig RunConfig::pretrain() const {
    PretrainConfig p;
    p.temperature = real("pretrain.temperature");
    p.batch_size = count("pretrain.batch_size");
    p.epochs = count("pretrain.epochs");
    p.learning_rate = real("pretrain.learning_rate");
    p.weight_spec = as_config("pretrain.weight", [&] { return WeightSpec::parse(get("pretrain.weight")); });
    p.similarity = as_config("pretrain.similarity", [&] { return parse_similarity_kind(get("pretrain.similarity")); });
    p.projection_dim = count("pretrain.projection_dim");
    p.seed = seed();
    p.threads = threads();
    p.validate();
    return p;
}

DistillConfig RunConfig::distill() const {
    DistillConfig d;
    d.temperature = real("distill.temperature");
    d.lambda = real("distill.lambda");
    d.summary_prob = real("distill.summary_prob");
    d.learning_rate = real("distill.learning_rate");
    d.epochs = count("distill.epochs");
    d.batch_size = count("distill.batch_size");
    d.task = task();
    d.seed = seed();
    d.validate();
    return d;
}

ProbeConfig RunConfig::probe() const {
    ProbeConfig p;
    p.l2 = real("probe.l2");
    p.learning_rate = real("probe.learning_rate");
    p.iterations = count("probe.iterations");
    p.seed = seed();
    p.n_resamples = eval_resamples();
    if (!(p.l2 >= 0.0) || !(p.learning_rate > 0.0)) fail(ErrorCode::ConfigError, "probe.l2 >= 0 and probe.learning_rate > 0 required");
    return p;
}

std::size_t RunConfig::eval_resamples() const {
    const auto n = count("eval.resamples");
    if (n == 0) fail(ErrorCode::ConfigError, "eval.resamples must be positive");
    return n;
}

double RunConfig::eval_level() const {
    const double l = real("eval.level");
    if (!(l > 0.0 && l < 1.0)) fail(ErrorCode::ConfigError, "eval.level must lie in (0,1)");
    return l;
}

std::vector<std::size_t> RunConfig::neighbor_ks() const {
    std::vector<std::size_t> ks;
    for (double k : reals("neighbors.k")) {
        if (!(k >= 1.0) || k != std::floor(k)) fail(ErrorCode::ConfigError, "neighbors.k must list positive integers");
        ks.push_back(static_cast<std::size_t>(k));
    }
    return ks;
}

std::size_t RunConfig::neighbor_random_pairs() const { return count("neighbors.random_pairs"); }

std::size_t RunConfig::weight_bins() const {
    const auto b = count("weights.bins");
    if (b == 0) fail(ErrorCode::ConfigError, "weights.bins must be positive");
    return b;
}

std::uint64_t RunConfig::cache_budget() const { return count("weights.budget"); }

std::vector<GridPoint> RunConfig::grid() const {
    std::vector<GridPoint> out;
    for (double lr : reals("grid.learning_rates"))
        for (double t : reals("grid.temperatures"))
            for (double l : reals("grid.lambdas"))
                for (double p : reals("grid.summary_probs")) out.push_back({lr, t, l, p});
    return out;
}

} // namespace ocd
