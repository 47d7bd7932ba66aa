#include "ocd/encoders.hpp"

#include <cmath>
#include <vector>

#include "ocd/error.hpp"
#include "ocd/util.hpp"

namespace ocd {

using nn::ParamSet;
using nn::Tensor;
using nn::Var;

void EncoderConfig::validate() const {
    if (layers == 0 || heads == 0 || model_dim == 0 || ffn_dim == 0 || input_channels == 0 || max_timesteps == 0)
        fail(ErrorCode::ConfigError, "encoder sizes must be positive");
    if (model_dim % heads != 0) fail(ErrorCode::ConfigError, "model_dim must be divisible by heads");
}

std::string EncoderConfig::to_string() const {
    return "layers=" + std::to_string(layers) + ",heads=" + std::to_string(heads) + ",model_dim=" +
           std::to_string(model_dim) + ",ffn_dim=" + std::to_string(ffn_dim) + ",input_channels=" +
           std::to_string(input_channels) + ",max_timesteps=" + std::to_string(max_timesteps) +
           ",pooling=" + (pooling == Pooling::mean ? "mean" : "cls") + ",positional=" + (positional ? "1" : "0");
}

EncoderConfig EncoderConfig::parse(const std::string& text) {
    EncoderConfig cfg;
    for (const auto& item : split(text, ',')) {
        const auto eq = item.find('=');
        if (eq == std::string::npos) fail(ErrorCode::FormatError, "bad encoder field '" + item + "'");
        const auto key = item.substr(0, eq);
        const auto value = item.substr(eq + 1);
        auto size = [&] { return static_cast<std::size_t>(parse_int(value, key.c_str())); };
        if (key == "layers") cfg.layers = size();
        else if (key == "heads") cfg.heads = size();
        else if (key == "model_dim") cfg.model_dim = size();
        else if (key == "ffn_dim") cfg.ffn_dim = size();
        else if (key == "input_channels") cfg.input_channels = size();
        else if (key == "max_timesteps") cfg.max_timesteps = size();
        else if (key == "pooling" && (value == "mean" || value == "cls")) cfg.pooling = value == "mean" ? Pooling::mean : Pooling::cls;
        else if (key == "positional") cfg.positional = size() != 0;
        else fail(ErrorCode::FormatError, "bad encoder field '" + item + "'");
    }
    cfg.validate();
    return cfg;
}

Tensor sinusoidal_encoding(std::size_t timesteps, std::size_t dim) {
    Tensor pe({timesteps, dim});
    for (std::size_t t = 0; t < timesteps; ++t)
        for (std::size_t i = 0; i < dim; ++i) {
            const double freq = std::pow(10000.0, -double(i - i % 2) / double(dim));
            pe.at(t, i) = i % 2 == 0 ? std::sin(double(t) * freq) : std::cos(double(t) * freq);
        }
    return pe;
}

namespace {

void add_linear(ParamSet& p, const std::string& name, std::size_t in, std::size_t out, std::mt19937_64& rng) {
    p.add_uniform(name + ".w", {in, out}, in, rng);
    p.add(name + ".b", Tensor({out}, 0.0));
}

void add_norm(ParamSet& p, const std::string& name, std::size_t dim) {
    p.add(name + ".g", Tensor({dim}, 1.0));
    p.add(name + ".b", Tensor({dim}, 0.0));
}

Var linear(const ParamSet& p, const std::string& name, const Var& x) {
    return nn::matmul(x, p.get(name + ".w")) + p.get(name + ".b");
}

Var norm(const ParamSet& p, const std::string& name, const Var& x) {
    return nn::layer_norm(x) * p.get(name + ".g") + p.get(name + ".b");
}

std::string layer_name(std::size_t l, const char* part) { return "enc.l" + std::to_string(l) + "." + part; }

Var attention(const EncoderConfig& cfg, const ParamSet& p, std::size_t l, const Var& h) {
    const Var q = linear(p, layer_name(l, "q"), h);
    const Var k = linear(p, layer_name(l, "k"), h);
    const Var v = linear(p, layer_name(l, "v"), h);
    const std::size_t dh = cfg.model_dim / cfg.heads;
    const double inv_sqrt = 1.0 / std::sqrt(double(dh));
    std::vector<Var> heads;
    heads.reserve(cfg.heads);
    for (std::size_t i = 0; i < cfg.heads; ++i) {
        const auto lo = i * dh, hi = lo + dh;
        const Var qh = nn::slice(q, 2, lo, hi);
        const Var kh = nn::slice(k, 2, lo, hi);
        const Var vh = nn::slice(v, 2, lo, hi);
        const Var scores = nn::scale(nn::matmul(qh, nn::transpose(kh)), inv_sqrt);
        heads.push_back(nn::matmul(nn::softmax(scores, -1), vh));
    }
    const Var merged = cfg.heads == 1 ? heads[0] : nn::concat(heads, 2);
    return linear(p, layer_name(l, "o"), merged);
}

} // namespace

void init_encoder(ParamSet& p, const EncoderConfig& cfg, std::mt19937_64& rng) {
    cfg.validate();
    const auto d = cfg.model_dim;
    add_linear(p, "enc.in", cfg.input_channels, d, rng);
    if (cfg.pooling == Pooling::cls) p.add_uniform("enc.cls", {1, d}, d, rng);
    for (std::size_t l = 0; l < cfg.layers; ++l) {
        add_linear(p, layer_name(l, "q"), d, d, rng);
        add_linear(p, layer_name(l, "k"), d, d, rng);
        add_linear(p, layer_name(l, "v"), d, d, rng);
        add_linear(p, layer_name(l, "o"), d, d, rng);
        add_norm(p, layer_name(l, "ln1"), d);
        add_linear(p, layer_name(l, "ff1"), d, cfg.ffn_dim, rng);
        add_linear(p, layer_name(l, "ff2"), cfg.ffn_dim, d, rng);
        add_norm(p, layer_name(l, "ln2"), d);
    }
}

void init_projection_head(ParamSet& p, std::size_t in_dim, std::size_t out_dim, std::mt19937_64& rng) {
    add_linear(p, "proj.l1", in_dim, in_dim, rng);
    add_linear(p, "proj.l2", in_dim, out_dim, rng);
}

void init_classifier(ParamSet& p, std::size_t in_dim, std::size_t outputs, std::mt19937_64& rng) {
    add_linear(p, "head", in_dim, outputs, rng);
}

void init_note_adapter(ParamSet& p, std::size_t note_dim, std::size_t model_dim, std::mt19937_64& rng) {
    if (note_dim != model_dim) add_linear(p, "adapter", note_dim, model_dim, rng);
}

Var encode_vitals(const EncoderConfig& cfg, const ParamSet& p, const Var& x) {
    const auto& s = x.shape();
    if (s.size() != 3 || s[1] != cfg.max_timesteps || s[2] != cfg.input_channels)
        fail(ErrorCode::ShapeMismatch, "vitals input " + nn::to_string(s) + " does not match encoder [B," +
                                           std::to_string(cfg.max_timesteps) + "," + std::to_string(cfg.input_channels) + "]");
    const std::size_t batch = s[0];
    Var h = linear(p, "enc.in", x);
    if (cfg.positional) h = h + Var::constant(sinusoidal_encoding(cfg.max_timesteps, cfg.model_dim));
    if (cfg.pooling == Pooling::cls) {
        const Var rows = nn::matmul(Var::constant(Tensor({batch, 1}, 1.0)), p.get("enc.cls"));
        const Var parts[] = {nn::reshape(rows, {batch, 1, cfg.model_dim}), h};
        h = nn::concat(parts, 1);
    }
    for (std::size_t l = 0; l < cfg.layers; ++l) {
        h = norm(p, layer_name(l, "ln1"), h + attention(cfg, p, l, h));
        const Var ff = linear(p, layer_name(l, "ff2"), nn::gelu(linear(p, layer_name(l, "ff1"), h)));
        h = norm(p, layer_name(l, "ln2"), h + ff);
    }
    if (cfg.pooling == Pooling::cls) return nn::reshape(nn::slice(h, 1, 0, 1), {batch, cfg.model_dim});
    return nn::mean(h, 1);
}

Var project_contrastive(const ParamSet& p, const Var& h) {
    return nn::l2_normalize(linear(p, "proj.l2", nn::relu(linear(p, "proj.l1", h))), -1);
}

Var classify(const ParamSet& p, const Var& h) { return linear(p, "head", h); }

Var teacher_forward(const EncoderConfig& cfg, const ParamSet& p, const Var& notes, const Var& x) {
    if (notes.shape().size() != 2 || notes.shape()[0] != x.shape()[0])
        fail(ErrorCode::ShapeMismatch, "note batch " + nn::to_string(notes.shape()));
    const Var h_notes = p.contains("adapter.w") ? linear(p, "adapter", notes) : notes;
    if (h_notes.shape()[1] != cfg.model_dim)
        fail(ErrorCode::ShapeMismatch, "note embedding dimension does not match model_dim and no adapter exists");
    return classify(p, h_notes + encode_vitals(cfg, p, x));
}

Var student_forward(const EncoderConfig& cfg, const ParamSet& p, const Var& x) {
    return classify(p, encode_vitals(cfg, p, x));
}

} // namespace ocd
