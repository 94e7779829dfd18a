#pragma once

#include "semeq/tensor.hpp"

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace semeq {

// Layout of the transmitted feature tensor. channel_map comes from the CNN
// codec (c maps of h x w), tokens from the token codec (n tokens of dim d).
// The layout decides which partition strategies are legal.
enum class LatentLayout { channel_map, tokens };

struct LatentTensor {
    LatentLayout layout = LatentLayout::channel_map;
    int c = 0, h = 0, w = 0;  // channel_map extents
    int n = 0, d = 0;         // tokens extents
    std::vector<float> values;

    std::int64_t count() const {
        return layout == LatentLayout::channel_map ? static_cast<std::int64_t>(c) * h * w
                                                   : static_cast<std::int64_t>(n) * d;
    }

    void validate() const {
        if (layout == LatentLayout::channel_map) {
            if (c < 1 || h < 1 || w < 1)
                throw std::invalid_argument("latent: bad channel_map extents");
        } else {
            if (n < 1 || d < 1) throw std::invalid_argument("latent: bad token extents");
        }
        if (static_cast<std::int64_t>(values.size()) != count())
            throw std::invalid_argument("latent: value count does not match layout");
    }

    static LatentTensor channel_map(int c, int h, int w, std::vector<float> values) {
        LatentTensor t;
        t.layout = LatentLayout::channel_map;
        t.c = c;
        t.h = h;
        t.w = w;
        t.values = std::move(values);
        t.validate();
        return t;
    }

    static LatentTensor tokens(int n, int d, std::vector<float> values) {
        LatentTensor t;
        t.layout = LatentLayout::tokens;
        t.n = n;
        t.d = d;
        t.values = std::move(values);
        t.validate();
        return t;
    }
};

// The CNN latent flattens [1,c,h,w] channel-major; the token latent flattens
// [n,d] token-major. Both match Tensor's row-major order directly.
inline LatentTensor latent_from_channel_map(const Tensor<float>& t) {
    if (t.rank() != 4 || t.dim(0) != 1)
        throw std::invalid_argument("latent: want a [1,c,h,w] tensor, got " + shape_str(t.shape));
    return LatentTensor::channel_map(t.dim(1), t.dim(2), t.dim(3), t.data);
}

inline LatentTensor latent_from_tokens(const Tensor<float>& t) {
    if (t.rank() != 2)
        throw std::invalid_argument("latent: want a [n,d] tensor, got " + shape_str(t.shape));
    return LatentTensor::tokens(t.dim(0), t.dim(1), t.data);
}

inline Tensor<float> latent_to_tensor(const LatentTensor& lat) {
    lat.validate();
    Tensor<float> t;
    if (lat.layout == LatentLayout::channel_map)
        t.shape = {1, lat.c, lat.h, lat.w};
    else
        t.shape = {lat.n, lat.d};
    t.data = lat.values;
    return t;
}

}  // namespace semeq
