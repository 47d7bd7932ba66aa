#pragma once

#include <random>
#include <string>

#include "ocd/params.hpp"
#include "ocd/tensor.hpp"

namespace ocd {

enum class Pooling { mean, cls };

struct EncoderConfig {
    std::size_t layers = 2;
    std::size_t heads = 4;
    std::size_t model_dim = 64;
    std::size_t ffn_dim = 128;
    std::size_t input_channels = 24; // 2c: values followed by missingness indicators
    std::size_t max_timesteps = 48;
    Pooling pooling = Pooling::mean;
    bool positional = true;

    void validate() const;
    std::string to_string() const;
    /// Inverse of to_string, as stored in checkpoint metadata.
    static EncoderConfig parse(const std::string& text);
};

/// Fixed sinusoidal position table [T, d].
nn::Tensor sinusoidal_encoding(std::size_t timesteps, std::size_t dim);

// Parameter names: vitals tower "enc.*", projection head "proj.*",
// classification head "head.*", note adapter "adapter.*".
void init_encoder(nn::ParamSet& params, const EncoderConfig& cfg, std::mt19937_64& rng);
void init_projection_head(nn::ParamSet& params, std::size_t in_dim, std::size_t out_dim, std::mt19937_64& rng);
void init_classifier(nn::ParamSet& params, std::size_t in_dim, std::size_t outputs, std::mt19937_64& rng);
/// Adds a linear note adapter only when the ingested note dimension differs
/// from the model dimension.
void init_note_adapter(nn::ParamSet& params, std::size_t note_dim, std::size_t model_dim, std::mt19937_64& rng);

/// Per-timestep input projection, sinusoidal positions, post-LN
/// self-attention blocks, then pooling. x is [B, T, 2c]; returns [B, d].
nn::Var encode_vitals(const EncoderConfig& cfg, const nn::ParamSet& params, const nn::Var& x);

/// Two-layer ReLU head followed by l2 normalisation; returns unit rows.
nn::Var project_contrastive(const nn::ParamSet& params, const nn::Var& h);

nn::Var classify(const nn::ParamSet& params, const nn::Var& h);

/// g(h_notes + h_vitals). notes is [B, note_dim].
nn::Var teacher_forward(const EncoderConfig& cfg, const nn::ParamSet& params, const nn::Var& notes, const nn::Var& x);

nn::Var student_forward(const EncoderConfig& cfg, const nn::ParamSet& params, const nn::Var& x);

} // namespace ocd
