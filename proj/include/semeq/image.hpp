#pragma once

#include "semeq/tensor.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace semeq {

// 8-bit RGB image, row-major, interleaved samples (R,G,B per pixel).
struct Image {
    int width = 0;
    int height = 0;
    std::vector<std::uint8_t> data;  // height * width * 3

    Image() = default;
    Image(int w, int h) : width(w), height(h), data(static_cast<std::size_t>(w) * h * 3, 0) {}

    std::uint8_t& at(int x, int y, int ch) {
        return data[(static_cast<std::size_t>(y) * width + x) * 3 + ch];
    }
    std::uint8_t at(int x, int y, int ch) const {
        return data[(static_cast<std::size_t>(y) * width + x) * 3 + ch];
    }
    bool operator==(const Image& o) const = default;
};

// Binary P6 PPM with maxval 255. save_ppm emits exactly
// "P6\n<w> <h>\n255\n" followed by the raw samples.
std::vector<std::uint8_t> save_ppm(const Image& img);
Image load_ppm(const std::vector<std::uint8_t>& bytes);
void save_ppm_file(const Image& img, const std::string& path);
Image load_ppm_file(const std::string& path);

// Image <-> float tensor [1,3,h,w] with values in [0,1] (divide by 255).
// The inverse clamps to [0,1], scales by 255 and rounds half away from zero.
Tensor<float> to_unit_tensor(const Image& img);
Image from_unit_tensor(const Tensor<float>& t);

// Shared rounding rule for the 8-bit pixel domain.
inline int round_half_away(double v) {
    return static_cast<int>(v >= 0.0 ? std::floor(v + 0.5) : std::ceil(v - 0.5));
}
inline std::uint8_t clamp_u8(int v) {
    return static_cast<std::uint8_t>(v < 0 ? 0 : (v > 255 ? 255 : v));
}

}  // namespace semeq
