#pragma once

#include "semeq/autodiff.hpp"
#include "semeq/image.hpp"
#include "semeq/latent.hpp"
#include "semeq/partition.hpp"
#include "semeq/rng.hpp"
#include "semeq/sem.hpp"
#include "semeq/tensor.hpp"

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

// The two learned codecs. The CNN codec produces a channel-map latent; the
// token codec produces a token-sequence latent via single-head global
// attention blocks. Both train end to end with the uniform-noise quantizer
// surrogate and evaluate with hard integer rounding.

namespace semeq {

// ---------------------------------------------------------------------------
// quantizer

struct QuantizerConfig {
    double scale = 1.0;  // symbol = round(scale * value); 16 for tanh-bounded latents
    int clamp = 127;     // symbols live in [-clamp, clamp] (8-bit wire payload)
};

inline std::vector<std::int8_t> quantize_test(const std::vector<float>& values,
                                              const QuantizerConfig& q) {
    if (q.scale <= 0.0) throw std::invalid_argument("quantize: scale must be positive");
    if (q.clamp < 1 || q.clamp > 127) throw std::invalid_argument("quantize: bad clamp");
    std::vector<std::int8_t> out(values.size());
    for (std::size_t i = 0; i < values.size(); ++i) {
        int s = round_half_away(q.scale * static_cast<double>(values[i]));
        s = s < -q.clamp ? -q.clamp : (s > q.clamp ? q.clamp : s);
        out[i] = static_cast<std::int8_t>(s);
    }
    return out;
}

inline std::vector<float> dequantize(const std::vector<std::int8_t>& symbols,
                                     const QuantizerConfig& q) {
    std::vector<float> out(symbols.size());
    for (std::size_t i = 0; i < symbols.size(); ++i)
        out[i] = static_cast<float>(symbols[i] / q.scale);
    return out;
}

inline QuantizedLatent quantize_latent(const LatentTensor& lat, const QuantizerConfig& q) {
    lat.validate();
    return {geometry_of(lat), quantize_test(lat.values, q)};
}

inline LatentTensor dequantize_latent(const QuantizedLatent& ql, const QuantizerConfig& q) {
    LatentTensor lat;
    lat.layout = ql.geo.layout;
    lat.c = ql.geo.c;
    lat.h = ql.geo.h;
    lat.w = ql.geo.w;
    lat.n = ql.geo.n;
    lat.d = ql.geo.d;
    lat.values = dequantize(ql.symbols, q);
    lat.validate();
    return lat;
}

// ---------------------------------------------------------------------------
// CNN codec

struct ConvSpec {
    int out_ch, kernel, stride, pad;
};

struct CnnCodecConfig {
    int in_channels = 3;
    std::vector<ConvSpec> layers = {{32, 5, 2, 2}, {64, 5, 2, 2}, {16, 1, 1, 0}};
    double alpha = 0.2;  // leaky-relu slope

    int latent_channels() const { return layers.back().out_ch; }

    int downsample_factor() const {
        int f = 1;
        for (const auto& l : layers) f *= l.stride;
        return f;
    }

    void validate() const {
        if (layers.empty()) throw std::invalid_argument("cnn config: no layers");
        for (const auto& l : layers) {
            if (l.out_ch < 1 || l.kernel < 1 || l.pad < 0)
                throw std::invalid_argument("cnn config: bad layer geometry");
            if (l.stride != 1 && l.stride != 2)
                throw std::invalid_argument("cnn config: strides must be 1 or 2");
            if (l.kernel % 2 != 1)
                throw std::invalid_argument("cnn config: kernels must be odd for mirroring");
        }
    }
};

// Legal image extents everywhere in the pipeline: at least 8 and divisible
// by 8 (covering both codecs' downsampling) plus the config's own factor.
inline void check_image_extent(int extent, int downsample_factor) {
    if (extent < 8 || extent % 8 != 0 || extent % downsample_factor != 0)
        throw std::invalid_argument(
            "codec: image extent " + std::to_string(extent) +
            " incompatible (must be >= 8, divisible by 8 and by the downsample factor " +
            std::to_string(downsample_factor) + ")");
}

// latent value count for one image of the given square size
inline std::int64_t cnn_latent_count(const CnnCodecConfig& cfg, int image_size) {
    cfg.validate();
    const int f = cfg.downsample_factor();
    check_image_extent(image_size, f);
    const int hw = image_size / f;
    return static_cast<std::int64_t>(cfg.latent_channels()) * hw * hw;
}

// transmitted-value count over source-value count
inline double cbr_cnn(const CnnCodecConfig& cfg, int image_size) {
    return static_cast<double>(cnn_latent_count(cfg, image_size)) /
           (static_cast<double>(cfg.in_channels) * image_size * image_size);
}

template <typename S>
struct CnnModel {
    CnnCodecConfig cfg;
    SemVariant variant = SemVariant::none;
    int broadcast_k = 4;
    double gamma_input = 1.0;  // channel-state scalar fed to the scale network

    std::vector<Tensor<S>> enc_k, enc_b;  // final layer unused for scale variants
    std::vector<Tensor<S>> dec_k, dec_b;
    SemScale<S> scale;     // live only when sem_has_scale(variant)
    Tensor<S> bcast;       // fixed mixing matrix, live when sem_has_broadcast(variant)

    explicit CnnModel(CnnCodecConfig config = {}, SemVariant v = SemVariant::none, int k = 4)
        : cfg(std::move(config)),
          variant(v),
          broadcast_k(k),
          scale(penultimate_channels(cfg), cfg.latent_channels()) {
        cfg.validate();
        int in_ch = cfg.in_channels;
        const std::size_t n_enc =
            sem_has_scale(variant) ? cfg.layers.size() - 1 : cfg.layers.size();
        for (std::size_t i = 0; i < n_enc; ++i) {
            const auto& l = cfg.layers[i];
            enc_k.emplace_back(Shape{l.out_ch, in_ch, l.kernel, l.kernel});
            enc_b.emplace_back(Shape{l.out_ch});
            in_ch = l.out_ch;
        }
        // decoder mirrors the encoder: 1x1 stages invert directly, stride-2
        // stages invert as nearest-neighbor upsample + same-kernel conv
        int ch = cfg.latent_channels();
        for (std::size_t ri = cfg.layers.size(); ri-- > 0;) {
            const auto& l = cfg.layers[ri];
            const int out = ri == 0 ? cfg.in_channels : cfg.layers[ri - 1].out_ch;
            dec_k.emplace_back(Shape{out, ch, l.kernel, l.kernel});
            dec_b.emplace_back(Shape{out});
            ch = out;
        }
        if (sem_has_broadcast(variant))
            bcast = build_broadcast<S>(cfg.latent_channels(), broadcast_k);
    }

    static int penultimate_channels(const CnnCodecConfig& c) {
        c.validate();
        return c.layers.size() >= 2 ? c.layers[c.layers.size() - 2].out_ch : c.in_channels;
    }

    void init(Rng& rng) {
        const auto init_conv = [&rng](Tensor<S>& k, Tensor<S>& b) {
            const int fan_in = k.dim(1) * k.dim(2) * k.dim(3);
            const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
            for (std::int64_t i = 0; i < k.size(); ++i)
                k[i] = static_cast<S>(rng.uniform(-bound, bound));
            for (std::int64_t i = 0; i < b.size(); ++i)
                b[i] = static_cast<S>(rng.uniform(-bound, bound));
        };
        for (std::size_t i = 0; i < enc_k.size(); ++i) init_conv(enc_k[i], enc_b[i]);
        if (sem_has_scale(variant)) scale.init(rng);
        for (std::size_t i = 0; i < dec_k.size(); ++i) init_conv(dec_k[i], dec_b[i]);
    }

    // x: [1, in_channels, H, W] -> latent [1, c, H/f, W/f]
    Tensor<S> encode(const Tensor<S>& x, Tape<S>* tape = nullptr) const {
        if (x.rank() != 4 || x.dim(1) != cfg.in_channels)
            throw std::invalid_argument("cnn encode: want [b," +
                                        std::to_string(cfg.in_channels) + ",h,w], got " +
                                        shape_str(x.shape));
        const int f = cfg.downsample_factor();
        check_image_extent(x.dim(2), f);
        check_image_extent(x.dim(3), f);
        Tensor<S> h = x;
        for (std::size_t i = 0; i < enc_k.size(); ++i) {
            const auto& l = cfg.layers[i];
            h = conv2d(h, enc_k[i], &enc_b[i], l.stride, l.pad, tape);
            const bool last_overall = !sem_has_scale(variant) && i + 1 == enc_k.size();
            if (!last_overall) h = leaky_relu(h, cfg.alpha, tape);
        }
        if (sem_has_scale(variant)) h = scale.forward(h, static_cast<S>(gamma_input), tape);
        if (sem_has_broadcast(variant)) h = channel_mix(h, bcast, tape);
        return h;
    }

    // latent [1, c, h, w] -> reconstruction [1, in_channels, H, W]
    Tensor<S> decode(const Tensor<S>& y, Tape<S>* tape = nullptr) const {
        if (y.rank() != 4 || y.dim(1) != cfg.latent_channels())
            throw std::invalid_argument("cnn decode: want [b," +
                                        std::to_string(cfg.latent_channels()) + ",h,w], got " +
                                        shape_str(y.shape));
        Tensor<S> h = y;
        std::size_t di = 0;
        for (std::size_t ri = cfg.layers.size(); ri-- > 0; ++di) {
            const auto& l = cfg.layers[ri];
            if (l.stride == 2) h = upsample_nearest2(h, tape);
            h = conv2d(h, dec_k[di], &dec_b[di], 1, (l.kernel - 1) / 2, tape);
            if (ri != 0) h = leaky_relu(h, cfg.alpha, tape);
        }
        return h;
    }

    std::vector<std::pair<std::string, Tensor<S>*>> named_params() {
        std::vector<std::pair<std::string, Tensor<S>*>> out;
        for (std::size_t i = 0; i < enc_k.size(); ++i) {
            out.emplace_back("enc." + std::to_string(i) + ".k", &enc_k[i]);
            out.emplace_back("enc." + std::to_string(i) + ".b", &enc_b[i]);
        }
        if (sem_has_scale(variant))
            for (auto& [name, t] : scale.named_params()) out.emplace_back(name, t);
        for (std::size_t i = 0; i < dec_k.size(); ++i) {
            out.emplace_back("dec." + std::to_string(i) + ".k", &dec_k[i]);
            out.emplace_back("dec." + std::to_string(i) + ".b", &dec_b[i]);
        }
        return out;
    }

    void detach() {
        for (auto& [name, t] : named_params()) {
            (void)name;
            t->node = -1;
        }
    }

    QuantizerConfig quantizer() const { return {sem_quant_scale(variant), 127}; }
};

// ---------------------------------------------------------------------------
// token codec

struct TokenCodecConfig {
    int in_channels = 3;
    int patch = 8;
    int embed_dim = 64;
    int blocks = 2;
    int heads = 1;
    int out_dim = 24;
    double alpha = 0.2;
    bool use_pos = true;  // learned positional embeddings (off for equivariance checks)

    void validate() const {
        if (patch < 1 || embed_dim < 1 || blocks < 1 || out_dim < 1 || in_channels < 1)
            throw std::invalid_argument("token config: bad geometry");
        if (heads != 1)
            throw std::invalid_argument(
                "token config: only single-head attention is supported (heads = 1)");
    }
};

inline std::int64_t token_count(const TokenCodecConfig& cfg, int image_size) {
    cfg.validate();
    if (image_size % cfg.patch != 0)
        throw std::invalid_argument("token codec: image size not divisible by patch size");
    const int per_side = image_size / cfg.patch;
    return static_cast<std::int64_t>(per_side) * per_side;
}

inline double cbr_token(const TokenCodecConfig& cfg, int image_size) {
    return static_cast<double>(token_count(cfg, image_size) * cfg.out_dim) /
           (static_cast<double>(cfg.in_channels) * image_size * image_size);
}

template <typename S>
struct TokenModel {
    TokenCodecConfig cfg;
    int image_size;

    struct Block {
        Tensor<S> wq, bq, wk, bk, wv, bv, wo, bo;
        Tensor<S> wm1, bm1, wm2, bm2;
        explicit Block(int d)
            : wq(Shape{d, d}), bq(Shape{d}), wk(Shape{d, d}), bk(Shape{d}),
              wv(Shape{d, d}), bv(Shape{d}), wo(Shape{d, d}), bo(Shape{d}),
              wm1(Shape{d, 2 * d}), bm1(Shape{2 * d}), wm2(Shape{2 * d, d}), bm2(Shape{d}) {}
    };

    Tensor<S> wp, bp, pos_enc;    // patch embedding + positions (encoder)
    std::vector<Block> enc_blocks;
    Tensor<S> wh, bh;             // head: embed -> out_dim
    Tensor<S> wd, bd, pos_dec;    // token re-embedding + positions (decoder)
    std::vector<Block> dec_blocks;
    Tensor<S> wu, bu;             // head: embed -> patch pixels

    TokenModel(TokenCodecConfig config, int img_size)
        : cfg(std::move(config)),
          image_size(img_size),
          wp(Shape{cfg.in_channels * cfg.patch * cfg.patch, cfg.embed_dim}),
          bp(Shape{cfg.embed_dim}),
          pos_enc(Shape{static_cast<int>(token_count(cfg, img_size)), cfg.embed_dim}),
          wh(Shape{cfg.embed_dim, cfg.out_dim}),
          bh(Shape{cfg.out_dim}),
          wd(Shape{cfg.out_dim, cfg.embed_dim}),
          bd(Shape{cfg.embed_dim}),
          pos_dec(Shape{static_cast<int>(token_count(cfg, img_size)), cfg.embed_dim}),
          wu(Shape{cfg.embed_dim, cfg.in_channels * cfg.patch * cfg.patch}),
          bu(Shape{cfg.in_channels * cfg.patch * cfg.patch}) {
        for (int i = 0; i < cfg.blocks; ++i) {
            enc_blocks.emplace_back(cfg.embed_dim);
            dec_blocks.emplace_back(cfg.embed_dim);
        }
    }

    void init(Rng& rng) {
        const auto init_linear = [&rng](Tensor<S>& w, Tensor<S>& b) {
            const double bound = 1.0 / std::sqrt(static_cast<double>(w.dim(0)));
            for (std::int64_t i = 0; i < w.size(); ++i)
                w[i] = static_cast<S>(rng.uniform(-bound, bound));
            for (std::int64_t i = 0; i < b.size(); ++i)
                b[i] = static_cast<S>(rng.uniform(-bound, bound));
        };
        const auto init_pos = [&rng](Tensor<S>& p) {
            for (std::int64_t i = 0; i < p.size(); ++i)
                p[i] = static_cast<S>(rng.normal() * 0.02);
        };
        const auto init_block = [&](Block& bl) {
            init_linear(bl.wq, bl.bq);
            init_linear(bl.wk, bl.bk);
            init_linear(bl.wv, bl.bv);
            init_linear(bl.wo, bl.bo);
            init_linear(bl.wm1, bl.bm1);
            init_linear(bl.wm2, bl.bm2);
        };
        init_linear(wp, bp);
        init_pos(pos_enc);
        for (auto& bl : enc_blocks) init_block(bl);
        init_linear(wh, bh);
        init_linear(wd, bd);
        init_pos(pos_dec);
        for (auto& bl : dec_blocks) init_block(bl);
    }

    // pre-norm attention + MLP residual block; optionally captures the
    // post-softmax attention map
    Tensor<S> run_block(const Block& bl, Tensor<S> e, Tape<S>* tape,
                        std::vector<Tensor<S>>* attn_out = nullptr) const {
        const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(cfg.embed_dim));
        Tensor<S> h = layernorm(e, 1, 1e-5, tape);
        Tensor<S> q = rowwise_add(matmul(h, bl.wq, tape), bl.bq, tape);
        Tensor<S> k = rowwise_add(matmul(h, bl.wk, tape), bl.bk, tape);
        Tensor<S> v = rowwise_add(matmul(h, bl.wv, tape), bl.bv, tape);
        Tensor<S> scores =
            scalar_mul(matmul(q, transpose2d(k, tape), tape), inv_sqrt_d, tape);
        Tensor<S> attn = softmax(scores, 1, tape);
        if (attn_out) attn_out->push_back(attn);
        Tensor<S> ctx = rowwise_add(matmul(matmul(attn, v, tape), bl.wo, tape), bl.bo, tape);
        e = add(e, ctx, tape);
        Tensor<S> h2 = layernorm(e, 1, 1e-5, tape);
        Tensor<S> m = leaky_relu(rowwise_add(matmul(h2, bl.wm1, tape), bl.bm1, tape), cfg.alpha,
                                 tape);
        Tensor<S> m2 = rowwise_add(matmul(m, bl.wm2, tape), bl.bm2, tape);
        return add(e, m2, tape);
    }

    // x: [1, in_channels, H, W] -> tokens [n, out_dim]
    Tensor<S> encode(const Tensor<S>& x, Tape<S>* tape = nullptr,
                     std::vector<Tensor<S>>* attn_out = nullptr) const {
        if (x.rank() != 4 || x.dim(0) != 1 || x.dim(1) != cfg.in_channels ||
            x.dim(2) != image_size || x.dim(3) != image_size)
            throw std::invalid_argument("token encode: want [1," +
                                        std::to_string(cfg.in_channels) + "," +
                                        std::to_string(image_size) + "," +
                                        std::to_string(image_size) + "], got " +
                                        shape_str(x.shape));
        Tensor<S> tok = patchify(x, cfg.patch, tape);
        Tensor<S> e = rowwise_add(matmul(tok, wp, tape), bp, tape);
        if (cfg.use_pos) e = add(e, pos_enc, tape);
        for (const auto& bl : enc_blocks) e = run_block(bl, e, tape, attn_out);
        Tensor<S> hn = layernorm(e, 1, 1e-5, tape);
        return rowwise_add(matmul(hn, wh, tape), bh, tape);
    }

    // tokens [n, out_dim] -> [1, in_channels, H, W]
    Tensor<S> decode(const Tensor<S>& y, Tape<S>* tape = nullptr) const {
        const int n = static_cast<int>(token_count(cfg, image_size));
        if (y.rank() != 2 || y.dim(0) != n || y.dim(1) != cfg.out_dim)
            throw std::invalid_argument("token decode: want [" + std::to_string(n) + "," +
                                        std::to_string(cfg.out_dim) + "], got " +
                                        shape_str(y.shape));
        Tensor<S> e = rowwise_add(matmul(y, wd, tape), bd, tape);
        if (cfg.use_pos) e = add(e, pos_dec, tape);
        for (const auto& bl : dec_blocks) e = run_block(bl, e, tape);
        Tensor<S> hn = layernorm(e, 1, 1e-5, tape);
        Tensor<S> px = rowwise_add(matmul(hn, wu, tape), bu, tape);
        return unpatchify(px, cfg.in_channels, image_size, image_size, cfg.patch, tape);
    }

    std::vector<std::pair<std::string, Tensor<S>*>> named_params() {
        std::vector<std::pair<std::string, Tensor<S>*>> out;
        const auto add_block = [&out](const std::string& prefix, Block& bl) {
            out.emplace_back(prefix + ".wq", &bl.wq);
            out.emplace_back(prefix + ".bq", &bl.bq);
            out.emplace_back(prefix + ".wk", &bl.wk);
            out.emplace_back(prefix + ".bk", &bl.bk);
            out.emplace_back(prefix + ".wv", &bl.wv);
            out.emplace_back(prefix + ".bv", &bl.bv);
            out.emplace_back(prefix + ".wo", &bl.wo);
            out.emplace_back(prefix + ".bo", &bl.bo);
            out.emplace_back(prefix + ".wm1", &bl.wm1);
            out.emplace_back(prefix + ".bm1", &bl.bm1);
            out.emplace_back(prefix + ".wm2", &bl.wm2);
            out.emplace_back(prefix + ".bm2", &bl.bm2);
        };
        out.emplace_back("enc.wp", &wp);
        out.emplace_back("enc.bp", &bp);
        out.emplace_back("enc.pos", &pos_enc);
        for (std::size_t i = 0; i < enc_blocks.size(); ++i)
            add_block("enc.block" + std::to_string(i), enc_blocks[i]);
        out.emplace_back("enc.wh", &wh);
        out.emplace_back("enc.bh", &bh);
        out.emplace_back("dec.wd", &wd);
        out.emplace_back("dec.bd", &bd);
        out.emplace_back("dec.pos", &pos_dec);
        for (std::size_t i = 0; i < dec_blocks.size(); ++i)
            add_block("dec.block" + std::to_string(i), dec_blocks[i]);
        out.emplace_back("dec.wu", &wu);
        out.emplace_back("dec.bu", &bu);
        return out;
    }

    void detach() {
        for (auto& [name, t] : named_params()) {
            (void)name;
            t->node = -1;
        }
    }

    QuantizerConfig quantizer() const { return {1.0, 127}; }
};

}  // namespace semeq
