#include "kecrs/transformer.hpp"

#include <cmath>

#include "kecrs/errors.hpp"

namespace kecrs {

Linear Linear::create(ParamStore& store, const std::string& name, Eigen::Index in, Eigen::Index out, Rng& rng,
                      bool bias) {
    store.add(name + ".w", glorot_matrix(out, in, rng));
    if (bias) store.add(name + ".b", Matrix::Zero(1, out));
    return bind(store, name);
}

Linear Linear::bind(ParamStore& store, const std::string& name) {
    return {&store.get(name + ".w"), store.contains(name + ".b") ? &store.get(name + ".b") : nullptr};
}

ad::Var Linear::operator()(ad::Tape& tape, const ad::Var& x) const {
    ad::Var y = ad::matmul_nt(x, tape.param(*w));
    return b == nullptr ? y : ad::add_row(y, tape.param(*b));
}

LayerNormParams LayerNormParams::create(ParamStore& store, const std::string& name, Eigen::Index d) {
    store.add(name + ".gain", Matrix::Ones(1, d));
    store.add(name + ".bias", Matrix::Zero(1, d));
    return bind(store, name);
}

LayerNormParams LayerNormParams::bind(ParamStore& store, const std::string& name) {
    return {&store.get(name + ".gain"), &store.get(name + ".bias")};
}

ad::Var LayerNormParams::operator()(ad::Tape& tape, const ad::Var& x) const {
    return ad::layer_norm_rows(x, tape.param(*gain), tape.param(*bias));
}

AttentionBlock AttentionBlock::create(ParamStore& store, const std::string& name, Eigen::Index d, Rng& rng) {
    // A key bias adds the same q.b to every logit of a query row, which the
    // softmax removes; it would be a parameter with identically zero gradient.
    return {Linear::create(store, name + ".q", d, d, rng), Linear::create(store, name + ".k", d, d, rng, false),
            Linear::create(store, name + ".v", d, d, rng), Linear::create(store, name + ".o", d, d, rng)};
}

AttentionBlock AttentionBlock::bind(ParamStore& store, const std::string& name) {
    return {Linear::bind(store, name + ".q"), Linear::bind(store, name + ".k"), Linear::bind(store, name + ".v"),
            Linear::bind(store, name + ".o")};
}

TransformerParams TransformerParams::create(ParamStore& store, const std::string& prefix,
                                            const TransformerConfig& cfg, Rng& rng) {
    if (cfg.d_model <= 0 || cfg.heads <= 0 || cfg.d_model % cfg.heads != 0) {
        throw ShapeError("transformer: d_model must be a positive multiple of heads");
    }
    const Eigen::Index d = cfg.d_model;
    const Eigen::Index f = cfg.ffn_width();
    for (int l = 0; l < cfg.enc_layers; ++l) {
        const std::string n = prefix + ".enc" + std::to_string(l);
        AttentionBlock::create(store, n + ".self", d, rng);
        LayerNormParams::create(store, n + ".ln1", d);
        Linear::create(store, n + ".ff1", d, f, rng);
        Linear::create(store, n + ".ff2", f, d, rng);
        LayerNormParams::create(store, n + ".ln2", d);
    }
    for (int l = 0; l < cfg.dec_layers; ++l) {
        const std::string n = prefix + ".dec" + std::to_string(l);
        AttentionBlock::create(store, n + ".self", d, rng);
        LayerNormParams::create(store, n + ".ln1", d);
        AttentionBlock::create(store, n + ".cross", d, rng);
        LayerNormParams::create(store, n + ".ln2", d);
        Linear::create(store, n + ".ff1", d, f, rng);
        Linear::create(store, n + ".ff2", f, d, rng);
        LayerNormParams::create(store, n + ".ln3", d);
    }
    return bind(store, prefix, cfg);
}

TransformerParams TransformerParams::bind(ParamStore& store, const std::string& prefix,
                                          const TransformerConfig& cfg) {
    TransformerParams p;
    p.heads = cfg.heads;
    for (int l = 0; l < cfg.enc_layers; ++l) {
        const std::string n = prefix + ".enc" + std::to_string(l);
        p.encoder.push_back({AttentionBlock::bind(store, n + ".self"), LayerNormParams::bind(store, n + ".ln1"),
                             Linear::bind(store, n + ".ff1"), Linear::bind(store, n + ".ff2"),
                             LayerNormParams::bind(store, n + ".ln2")});
    }
    for (int l = 0; l < cfg.dec_layers; ++l) {
        const std::string n = prefix + ".dec" + std::to_string(l);
        p.decoder.push_back({AttentionBlock::bind(store, n + ".self"), LayerNormParams::bind(store, n + ".ln1"),
                             AttentionBlock::bind(store, n + ".cross"), LayerNormParams::bind(store, n + ".ln2"),
                             Linear::bind(store, n + ".ff1"), Linear::bind(store, n + ".ff2"),
                             LayerNormParams::bind(store, n + ".ln3")});
    }
    return p;
}

Matrix sinusoidal_positions(Eigen::Index n, Eigen::Index d) {
    Matrix pe(n, d);
    for (Eigen::Index p = 0; p < n; ++p) {
        for (Eigen::Index i = 0; i < d; ++i) {
            const double rate = std::pow(10000.0, static_cast<double>(2 * (i / 2)) / static_cast<double>(d));
            const double angle = static_cast<double>(p) / rate;
            pe(p, i) = (i % 2 == 0) ? std::sin(angle) : std::cos(angle);
        }
    }
    return pe;
}

ad::Var multi_head_attention(ad::Tape& tape, const AttentionBlock& block, const ad::Var& queries,
                             const ad::Var& keys, int heads, const Matrix* mask) {
    const Eigen::Index d = queries.cols();
    if (heads <= 0 || d % heads != 0) throw ShapeError("attention: width not divisible by head count");
    const Eigen::Index dh = d / heads;
    const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
    ad::Var q = block.q(tape, queries);
    ad::Var k = block.k(tape, keys);
    ad::Var v = block.v(tape, keys);
    std::vector<ad::Var> outs;
    for (int h = 0; h < heads; ++h) {
        ad::Var qh = ad::slice_cols(q, h * dh, dh);
        ad::Var kh = ad::slice_cols(k, h * dh, dh);
        ad::Var vh = ad::slice_cols(v, h * dh, dh);
        ad::Var weights = ad::softmax_rows(ad::matmul_nt(qh, kh) * scale, mask);
        outs.push_back(ad::matmul(weights, vh));
    }
    return block.o(tape, heads == 1 ? outs[0] : ad::concat_cols(outs));
}

namespace {

ad::Var feed_forward(ad::Tape& tape, const Linear& ff1, const Linear& ff2, const ad::Var& x) {
    return ff2(tape, ad::relu(ff1(tape, x)));
}

}  // namespace

ad::Var encoder_layer(ad::Tape& tape, const EncoderLayer& layer, const ad::Var& x, int heads) {
    ad::Var a = layer.ln1(tape, x + multi_head_attention(tape, layer.self, x, x, heads));
    return layer.ln2(tape, a + feed_forward(tape, layer.ff1, layer.ff2, a));
}

ad::Var decoder_layer(ad::Tape& tape, const DecoderLayer& layer, const ad::Var& y, const ad::Var& memory,
                      int heads) {
    const Matrix mask = ad::causal_mask(y.rows());
    ad::Var a = layer.ln1(tape, y + multi_head_attention(tape, layer.self, y, y, heads, &mask));
    ad::Var b = layer.ln2(tape, a + multi_head_attention(tape, layer.cross, a, memory, heads));
    return layer.ln3(tape, b + feed_forward(tape, layer.ff1, layer.ff2, b));
}

ad::Var run_encoder(ad::Tape& tape, const TransformerParams& params, const ad::Var& x) {
    ad::Var h = x;
    for (const EncoderLayer& l : params.encoder) h = encoder_layer(tape, l, h, params.heads);
    return h;
}

ad::Var run_decoder(ad::Tape& tape, const TransformerParams& params, const ad::Var& y, const ad::Var& memory) {
    ad::Var h = y;
    for (const DecoderLayer& l : params.decoder) h = decoder_layer(tape, l, h, memory, params.heads);
    return h;
}

}  // namespace kecrs
