#pragma once

#include "semeq/autodiff.hpp"
#include "semeq/rng.hpp"
#include "semeq/tensor.hpp"

#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

// Semantic equalization: a dynamic per-channel scaling stage (a tiny fully
// connected network produces positive scale factors that modulate a
// weight-normalized projection) and a fixed neighboring-broadcast stage that
// diffuses each channel over a ring of K channels.

namespace semeq {

enum class SemVariant { none, scale, broadcast, scale_broadcast };

inline const char* sem_variant_name(SemVariant v) {
    switch (v) {
        case SemVariant::none: return "none";
        case SemVariant::scale: return "scale";
        case SemVariant::broadcast: return "broadcast";
        case SemVariant::scale_broadcast: return "scale_broadcast";
    }
    return "?";
}

inline SemVariant parse_sem_variant(const std::string& s) {
    if (s == "none") return SemVariant::none;
    if (s == "scale") return SemVariant::scale;
    if (s == "broadcast") return SemVariant::broadcast;
    if (s == "scale_broadcast") return SemVariant::scale_broadcast;
    throw std::invalid_argument("unknown sem variant: " + s);
}

inline bool sem_has_scale(SemVariant v) {
    return v == SemVariant::scale || v == SemVariant::scale_broadcast;
}
inline bool sem_has_broadcast(SemVariant v) {
    return v == SemVariant::broadcast || v == SemVariant::scale_broadcast;
}

// Scale-variant symbols live in (-1,1) after tanh, so the quantizer expands
// them by a fixed factor before rounding to keep ~5 bits of resolution.
inline double sem_quant_scale(SemVariant v) { return sem_has_scale(v) ? 16.0 : 1.0; }

// ---------------------------------------------------------------------------
// dynamic scale network: dims (1, 16, 16, 16, c), leaky-relu 0.2 between
// layers, softmax * c at the output so gamma > 0 and sum(gamma) = c.

template <typename S>
struct GammaNet {
    int c;
    Tensor<S> w1{Shape{1, 16}}, b1{Shape{16}};
    Tensor<S> w2{Shape{16, 16}}, b2{Shape{16}};
    Tensor<S> w3{Shape{16, 16}}, b3{Shape{16}};
    Tensor<S> w4, b4;

    explicit GammaNet(int channels)
        : c(channels), w4(Shape{16, channels}), b4(Shape{channels}) {
        if (channels < 1) throw std::invalid_argument("GammaNet: channels must be positive");
    }

    // The output layer starts at zero so the softmax emits exactly uniform
    // scales (gamma == 1 everywhere): the gain stage is neutral until
    // training (when enabled) moves it. Hidden layers stay random so a
    // trained network is not stuck in a symmetric configuration.
    void init(Rng& rng) {
        for (auto& [name, t] : named_params()) {
            if (name == "gamma.w4" || name == "gamma.b4") {
                for (std::int64_t i = 0; i < t->size(); ++i) (*t)[i] = S(0);
                continue;
            }
            const int fan_in = t->rank() == 2 ? t->dim(0) : 1;
            const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
            for (std::int64_t i = 0; i < t->size(); ++i)
                (*t)[i] = static_cast<S>(rng.uniform(-bound, bound));
        }
    }

    Tensor<S> forward(S s, Tape<S>* tape = nullptr) const {
        Tensor<S> x = Tensor<S>::from({1, 1}, {s});
        Tensor<S> h = leaky_relu(rowwise_add(matmul(x, w1, tape), b1, tape), 0.2, tape);
        h = leaky_relu(rowwise_add(matmul(h, w2, tape), b2, tape), 0.2, tape);
        h = leaky_relu(rowwise_add(matmul(h, w3, tape), b3, tape), 0.2, tape);
        Tensor<S> logits = rowwise_add(matmul(h, w4, tape), b4, tape);
        Tensor<S> gamma = scalar_mul(softmax(logits, 1, tape), static_cast<double>(c), tape);
        return reshape(gamma, {c}, tape);
    }

    std::vector<std::pair<std::string, Tensor<S>*>> named_params() {
        return {{"gamma.w1", &w1}, {"gamma.b1", &b1}, {"gamma.w2", &w2}, {"gamma.b2", &b2},
                {"gamma.w3", &w3}, {"gamma.b3", &b3}, {"gamma.w4", &w4}, {"gamma.b4", &b4}};
    }

    // Both counters are computed from the live tensors, not from closed forms.
    long long param_count() const {
        long long n = 0;
        for (const auto* t : {&w1, &b1, &w2, &b2, &w3, &b3, &w4, &b4}) n += t->size();
        return n;
    }

    long long multiply_flops() const {
        long long n = 0;
        for (const auto* t : {&w1, &w2, &w3, &w4})
            n += static_cast<long long>(t->dim(0)) * t->dim(1);
        return n;
    }
};

// ---------------------------------------------------------------------------
// neighboring broadcast: row i spreads 1/K over channels {(i+m) mod c}.

template <typename S>
Tensor<S> build_broadcast(int c, int k) {
    if (c < 1) throw std::invalid_argument("build_broadcast: channels must be positive");
    if (k < 1 || k > c)
        throw std::invalid_argument("build_broadcast: K must satisfy 1 <= K <= channels");
    Tensor<S> m({c, c});
    const S v = S(1) / static_cast<S>(k);
    for (int i = 0; i < c; ++i)
        for (int j = 0; j < k; ++j) m.at2(i, (i + j) % c) = v;
    return m;
}

// ---------------------------------------------------------------------------
// the full equalization stage applied to a [1,c,h,w] feature map

// Scale parameters for the variants that modulate the encoder's final
// projection; proj_w is the augmented weight matrix [c x (c_pre+1)].
template <typename S>
struct SemScale {
    GammaNet<S> gamma;
    Tensor<S> proj_w;

    SemScale(int c_pre, int c) : gamma(c), proj_w(Shape{c, c_pre + 1}) {}

    void init(Rng& rng) {
        gamma.init(rng);
        const double bound = 1.0 / std::sqrt(static_cast<double>(proj_w.dim(1)));
        for (std::int64_t i = 0; i < proj_w.size(); ++i)
            proj_w[i] = static_cast<S>(rng.uniform(-bound, bound));
    }

    // tanh(gamma_i * unit-row_i . [f;1]) per spatial location
    Tensor<S> forward(const Tensor<S>& f, S s, Tape<S>* tape = nullptr) const {
        Tensor<S> g = gamma.forward(s, tape);
        return tanh_act(scaled_projection(proj_w, g, f, tape), tape);
    }

    std::vector<std::pair<std::string, Tensor<S>*>> named_params() {
        auto out = gamma.named_params();
        out.emplace_back("sem.proj_w", &proj_w);
        return out;
    }
};

}  // namespace semeq
