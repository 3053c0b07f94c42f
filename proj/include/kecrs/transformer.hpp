#pragma once

#include <string>
#include <vector>

#include "kecrs/autodiff.hpp"
#include "kecrs/params.hpp"

namespace kecrs {

/// y = x W^T + b with W out x in and b 1 x out; `b` may be absent.
struct Linear {
    Parameter* w = nullptr;
    Parameter* b = nullptr;

    static Linear create(ParamStore& store, const std::string& name, Eigen::Index in, Eigen::Index out, Rng& rng,
                         bool bias = true);
    static Linear bind(ParamStore& store, const std::string& name);
    ad::Var operator()(ad::Tape& tape, const ad::Var& x) const;
};

struct LayerNormParams {
    Parameter* gain = nullptr;
    Parameter* bias = nullptr;

    static LayerNormParams create(ParamStore& store, const std::string& name, Eigen::Index d);
    static LayerNormParams bind(ParamStore& store, const std::string& name);
    ad::Var operator()(ad::Tape& tape, const ad::Var& x) const;
};

struct AttentionBlock {
    Linear q, k, v, o;

    static AttentionBlock create(ParamStore& store, const std::string& name, Eigen::Index d, Rng& rng);
    static AttentionBlock bind(ParamStore& store, const std::string& name);
};

struct EncoderLayer {
    AttentionBlock self;
    LayerNormParams ln1;
    Linear ff1, ff2;
    LayerNormParams ln2;
};

struct DecoderLayer {
    AttentionBlock self;
    LayerNormParams ln1;
    AttentionBlock cross;
    LayerNormParams ln2;
    Linear ff1, ff2;
    LayerNormParams ln3;
};

struct TransformerConfig {
    int d_model = 8;
    int heads = 2;
    int ffn = 0;  // 0 means 4 * d_model
    int enc_layers = 1;
    int dec_layers = 1;

    int ffn_width() const { return ffn > 0 ? ffn : 4 * d_model; }
};

/// Encoder and decoder stacks of post-norm layers registered under `prefix`.
struct TransformerParams {
    std::vector<EncoderLayer> encoder;
    std::vector<DecoderLayer> decoder;
    int heads = 2;

    static TransformerParams create(ParamStore& store, const std::string& prefix, const TransformerConfig& cfg,
                                    Rng& rng);
    static TransformerParams bind(ParamStore& store, const std::string& prefix, const TransformerConfig& cfg);
};

/// Sinusoidal table: even columns sin(p / 10000^(2i/d)), odd columns cos.
Matrix sinusoidal_positions(Eigen::Index n, Eigen::Index d);

/// Scaled dot-product attention over `heads` equal column slices. `mask`,
/// when given, is added to every head's logits.
ad::Var multi_head_attention(ad::Tape& tape, const AttentionBlock& block, const ad::Var& queries,
                             const ad::Var& keys, int heads, const Matrix* mask = nullptr);

/// x = LN(x + SelfAttn(x)); x = LN(x + FFN(x)).
ad::Var encoder_layer(ad::Tape& tape, const EncoderLayer& layer, const ad::Var& x, int heads);

/// Causal self-attention, cross-attention over `memory`, then the FFN, each
/// followed by residual and LN.
ad::Var decoder_layer(ad::Tape& tape, const DecoderLayer& layer, const ad::Var& y, const ad::Var& memory,
                      int heads);

ad::Var run_encoder(ad::Tape& tape, const TransformerParams& params, const ad::Var& x);
ad::Var run_decoder(ad::Tape& tape, const TransformerParams& params, const ad::Var& y, const ad::Var& memory);

}  // namespace kecrs
