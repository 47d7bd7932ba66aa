#include "ocd/params.hpp"

#include <cmath>
#include <cstring>
#include <fstream>

#include "ocd/error.hpp"
#include "ocd/util.hpp"

namespace ocd::nn {

namespace {
constexpr char kMagic[8] = {'O', 'C', 'D', 'C', 'K', 'P', 'T', '1'};
constexpr std::uint32_t kVersion = 1;
} // namespace

const Tensor* Checkpoint::find(const std::string& name) const {
    for (const auto& [n, t] : params)
        if (n == name) return &t;
    return nullptr;
}

const Tensor& Checkpoint::at(const std::string& name) const {
    const auto* t = find(name);
    if (!t) fail(ErrorCode::FormatError, "checkpoint has no tensor '" + name + "'");
    return *t;
}

void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
    std::ofstream out(path, std::ios::binary);
    if (!out) fail(ErrorCode::MissingInput, "cannot write checkpoint " + path);
    out.write(kMagic, sizeof kMagic);
    bin::write(out, kVersion);
    bin::write(out, ckpt.step);
    bin::write(out, ckpt.seed);
    bin::write(out, ckpt.config_hash);
    bin::write<std::uint32_t>(out, static_cast<std::uint32_t>(ckpt.meta.size()));
    for (const auto& [k, v] : ckpt.meta) {
        bin::write_string(out, k);
        bin::write_string(out, v);
    }
    bin::write<std::uint32_t>(out, static_cast<std::uint32_t>(ckpt.params.size()));
    for (const auto& [name, t] : ckpt.params) {
        bin::write_string(out, name);
        bin::write<std::uint32_t>(out, static_cast<std::uint32_t>(t.rank()));
        for (auto d : t.shape()) bin::write<std::uint64_t>(out, d);
        out.write(reinterpret_cast<const char*>(t.data().data()), static_cast<std::streamsize>(t.size() * sizeof(double)));
    }
    if (!out) fail(ErrorCode::MissingInput, "failed writing checkpoint " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) fail(ErrorCode::MissingInput, "cannot open checkpoint " + path);
    constexpr auto E = ErrorCode::FormatError;
    char magic[8];
    if (!in.read(magic, sizeof magic) || std::memcmp(magic, kMagic, sizeof magic) != 0)
        fail(E, "bad checkpoint magic in " + path);
    if (bin::read<std::uint32_t>(in, E) != kVersion) fail(E, "unsupported checkpoint version");
    Checkpoint c;
    c.step = bin::read<std::uint64_t>(in, E);
    c.seed = bin::read<std::uint64_t>(in, E);
    c.config_hash = bin::read<std::uint64_t>(in, E);
    const auto n_meta = bin::read<std::uint32_t>(in, E);
    for (std::uint32_t i = 0; i < n_meta; ++i) {
        auto k = bin::read_string(in, E);
        c.meta[k] = bin::read_string(in, E);
    }
    const auto n_params = bin::read<std::uint32_t>(in, E);
    for (std::uint32_t i = 0; i < n_params; ++i) {
        auto name = bin::read_string(in, E);
        const auto rank = bin::read<std::uint32_t>(in, E);
        if (rank > 8) fail(E, "implausible tensor rank");
        Shape shape(rank);
        for (auto& d : shape) d = bin::read<std::uint64_t>(in, E);
        if (numel(shape) > (std::size_t{1} << 32)) fail(E, "implausible tensor size");
        std::vector<double> values(numel(shape));
        if (!values.empty() &&
            !in.read(reinterpret_cast<char*>(values.data()), static_cast<std::streamsize>(values.size() * sizeof(double))))
            fail(E, "truncated tensor '" + name + "'");
        c.params.emplace_back(std::move(name), Tensor(std::move(shape), std::move(values)));
    }
    return c;
}

Var ParamSet::add(const std::string& name, Tensor init) {
    if (index_.count(name)) fail(ErrorCode::ConfigError, "duplicate parameter '" + name + "'");
    index_[name] = entries_.size();
    entries_.emplace_back(name, Var::parameter(std::move(init)));
    return entries_.back().second;
}

Var ParamSet::add_uniform(const std::string& name, Shape shape, std::size_t fan_in, std::mt19937_64& rng) {
    const double bound = 1.0 / std::sqrt(double(fan_in));
    std::uniform_real_distribution<double> dist(-bound, bound);
    Tensor t(std::move(shape));
    for (auto& v : t.data()) v = dist(rng);
    return add(name, std::move(t));
}

bool ParamSet::contains(const std::string& name) const { return index_.count(name) > 0; }

const Var& ParamSet::get(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) fail(ErrorCode::ConfigError, "unknown parameter '" + name + "'");
    return entries_[it->second].second;
}

std::vector<Var> ParamSet::vars() const {
    std::vector<Var> out;
    out.reserve(entries_.size());
    for (const auto& e : entries_) out.push_back(e.second);
    return out;
}

std::size_t ParamSet::count() const {
    std::size_t n = 0;
    for (const auto& e : entries_) n += e.second.value().size();
    return n;
}

void ParamSet::zero_grad() {
    for (auto& e : entries_) e.second.zero_grad();
}

ParamSet ParamSet::clone() const {
    ParamSet out;
    for (const auto& [name, v] : entries_) out.add(name, v.value());
    return out;
}

Checkpoint ParamSet::to_checkpoint() const {
    Checkpoint c;
    for (const auto& [name, v] : entries_) c.params.emplace_back(name, v.value());
    return c;
}

std::size_t ParamSet::load(const Checkpoint& ckpt, const std::string& prefix) {
    std::size_t copied = 0;
    for (const auto& [name, t] : ckpt.params) {
        if (name.rfind(prefix, 0) != 0 || !contains(name)) continue;
        Var v = get(name);
        if (v.value().shape() != t.shape())
            fail(ErrorCode::ShapeMismatch, "parameter '" + name + "' " + to_string(v.value().shape()) + " vs checkpoint " +
                                               to_string(t.shape()));
        v.mutable_value() = t;
        ++copied;
    }
    return copied;
}

ParamSet ParamSet::from_checkpoint(const Checkpoint& ckpt) {
    ParamSet out;
    for (const auto& [name, t] : ckpt.params) out.add(name, t);
    return out;
}

void Adam::step(ParamSet& params) {
    auto& entries = params.entries();
    if (m_.empty()) {
        for (const auto& e : entries) {
            m_.emplace_back(e.second.value().shape());
            v_.emplace_back(e.second.value().shape());
        }
    }
    if (m_.size() != entries.size()) fail(ErrorCode::ShapeMismatch, "optimizer bound to a different parameter set");
    ++t_;
    const double c1 = 1.0 - std::pow(cfg_.beta1, double(t_));
    const double c2 = 1.0 - std::pow(cfg_.beta2, double(t_));
    for (std::size_t k = 0; k < entries.size(); ++k) {
        Var& p = entries[k].second;
        const Tensor& g = p.grad();
        Tensor& w = p.mutable_value();
        Tensor& m = m_[k];
        Tensor& v = v_[k];
        for (std::size_t i = 0; i < w.size(); ++i) {
            m[i] = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * g[i];
            v[i] = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * g[i] * g[i];
            w[i] -= cfg_.learning_rate * (m[i] / c1) / (std::sqrt(v[i] / c2) + cfg_.eps);
        }
    }
}

} // namespace ocd::nn
