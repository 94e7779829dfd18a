#include "semeq/dataio.hpp"

#include <cmath>
#include <fstream>
#include <numbers>
#include <stdexcept>

namespace semeq {

const std::array<const char*, kNumGenerators> kGeneratorNames = {
    "gradient", "checkerboard", "gaussian_blobs", "value_noise", "stripes"};

namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;

std::array<int, 3> draw_color(Rng& rng) {
    std::array<int, 3> c;
    for (auto& ch : c) {
        const int v = static_cast<int>(std::floor(rng.unit() * 256.0));
        ch = v > 255 ? 255 : v;
    }
    return c;
}

void gen_gradient(Rng& rng, Image& img) {
    const auto c0 = draw_color(rng);
    const auto c1 = draw_color(rng);
    const double theta = rng.unit() * kTwoPi;
    const double ct = std::cos(theta), st = std::sin(theta);
    const int w = img.width, h = img.height;
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            double t = 0.5 + ((x + 0.5) / w - 0.5) * ct + ((y + 0.5) / h - 0.5) * st;
            t = t < 0.0 ? 0.0 : (t > 1.0 ? 1.0 : t);
            for (int ch = 0; ch < 3; ++ch)
                img.at(x, y, ch) = clamp_u8(round_half_away(c0[ch] + (c1[ch] - c0[ch]) * t));
        }
}

void gen_checkerboard(Rng& rng, Image& img) {
    const int cell = 4 + static_cast<int>(rng.below(13));
    const int ox = static_cast<int>(rng.below(static_cast<std::uint64_t>(cell)));
    const int oy = static_cast<int>(rng.below(static_cast<std::uint64_t>(cell)));
    const auto c0 = draw_color(rng);
    const auto c1 = draw_color(rng);
    for (int y = 0; y < img.height; ++y)
        for (int x = 0; x < img.width; ++x) {
            const bool even = (((x + ox) / cell + (y + oy) / cell) % 2) == 0;
            const auto& c = even ? c0 : c1;
            for (int ch = 0; ch < 3; ++ch)
                img.at(x, y, ch) = static_cast<std::uint8_t>(c[ch]);
        }
}

void gen_blobs(Rng& rng, Image& img) {
    const auto bg = draw_color(rng);
    const int k = 3 + static_cast<int>(rng.below(4));
    struct Blob {
        double cx, cy, sigma, amp;
        std::array<int, 3> col;
    };
    std::vector<Blob> blobs(static_cast<std::size_t>(k));
    const int w = img.width, h = img.height;
    for (auto& b : blobs) {
        b.cx = rng.unit() * w;
        b.cy = rng.unit() * h;
        b.sigma = 2.0 + rng.unit() * 10.0;
        b.col = draw_color(rng);
        b.amp = 0.5 + 0.5 * rng.unit();
    }
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            double px[3] = {static_cast<double>(bg[0]), static_cast<double>(bg[1]),
                            static_cast<double>(bg[2])};
            for (const auto& b : blobs) {
                const double dx = x + 0.5 - b.cx, dy = y + 0.5 - b.cy;
                const double wgt = b.amp * std::exp(-(dx * dx + dy * dy) / (2.0 * b.sigma * b.sigma));
                for (int ch = 0; ch < 3; ++ch) px[ch] = px[ch] * (1.0 - wgt) + b.col[ch] * wgt;
            }
            for (int ch = 0; ch < 3; ++ch) img.at(x, y, ch) = clamp_u8(round_half_away(px[ch]));
        }
}

void gen_value_noise(Rng& rng, Image& img) {
    const int cells = 4 * (1 << rng.below(3));
    const int n = cells + 1;
    std::vector<double> grid(static_cast<std::size_t>(n) * n * 3);
    for (int j = 0; j < n; ++j)
        for (int i = 0; i < n; ++i)
            for (int ch = 0; ch < 3; ++ch)
                grid[(static_cast<std::size_t>(j) * n + i) * 3 + ch] = rng.unit();
    const int w = img.width, h = img.height;
    const auto at = [&](int j, int i, int ch) {
        return grid[(static_cast<std::size_t>(j) * n + i) * 3 + ch];
    };
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            const double u = (x + 0.5) / w * cells;
            const double v = (y + 0.5) / h * cells;
            int i0 = static_cast<int>(std::floor(u));
            int j0 = static_cast<int>(std::floor(v));
            i0 = i0 > cells - 1 ? cells - 1 : i0;
            j0 = j0 > cells - 1 ? cells - 1 : j0;
            const double fu = u - i0, fv = v - j0;
            const double su = fu * fu * (3.0 - 2.0 * fu);
            const double sv = fv * fv * (3.0 - 2.0 * fv);
            for (int ch = 0; ch < 3; ++ch) {
                const double a = at(j0, i0, ch) * (1 - su) + at(j0, i0 + 1, ch) * su;
                const double b = at(j0 + 1, i0, ch) * (1 - su) + at(j0 + 1, i0 + 1, ch) * su;
                img.at(x, y, ch) = clamp_u8(round_half_away((a * (1 - sv) + b * sv) * 255.0));
            }
        }
}

void gen_stripes(Rng& rng, Image& img) {
    const auto c0 = draw_color(rng);
    const auto c1 = draw_color(rng);
    const double theta = rng.unit() * kTwoPi;
    const double ct = std::cos(theta), st = std::sin(theta);
    const double freq = 2.0 + rng.unit() * 14.0;
    const double phase = rng.unit() * kTwoPi;
    const int w = img.width, h = img.height;
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            const double s =
                0.5 + 0.5 * std::sin(kTwoPi * freq * ((x + 0.5) / w * ct + (y + 0.5) / h * st) +
                                     phase);
            for (int ch = 0; ch < 3; ++ch)
                img.at(x, y, ch) = clamp_u8(round_half_away(c0[ch] + (c1[ch] - c0[ch]) * s));
        }
}

}  // namespace

Image generate_image(std::uint64_t seed, int size,
                     const std::array<double, kNumGenerators>& weights, int* generator_out) {
    if (size < 8 || size % 8 != 0)
        throw std::invalid_argument("generate_image: size must be >= 8 and divisible by 8");
    Rng rng(seed);
    const double u = rng.unit();
    int gi = kNumGenerators - 1;
    double acc = 0.0;
    for (int k = 0; k < kNumGenerators; ++k) {
        acc += weights[static_cast<std::size_t>(k)];
        if (u < acc) {
            gi = k;
            break;
        }
    }
    Image img(size, size);
    switch (gi) {
        case 0: gen_gradient(rng, img); break;
        case 1: gen_checkerboard(rng, img); break;
        case 2: gen_blobs(rng, img); break;
        case 3: gen_value_noise(rng, img); break;
        default: gen_stripes(rng, img); break;
    }
    if (generator_out) *generator_out = gi;
    return img;
}

Dataset generate_synthetic(const DatasetSpec& spec) {
    if (spec.count < 0) throw std::invalid_argument("generate_synthetic: negative count");
    double wsum = 0.0;
    for (double w : spec.weights) {
        if (w < 0.0) throw std::invalid_argument("generate_synthetic: negative mixture weight");
        wsum += w;
    }
    if (std::abs(wsum - 1.0) > 1e-9)
        throw std::invalid_argument("generate_synthetic: mixture weights must sum to 1");
    Dataset ds;
    ds.images.reserve(static_cast<std::size_t>(spec.count));
    ds.records.reserve(static_cast<std::size_t>(spec.count));
    SplitMix64 seeder(spec.master_seed);
    for (int i = 0; i < spec.count; ++i) {
        DatasetRecord rec;
        rec.seed = seeder.next();
        ds.images.push_back(generate_image(rec.seed, spec.size, spec.weights, &rec.generator));
        ds.records.push_back(rec);
    }
    return ds;
}

std::string manifest_text(const Dataset& ds) {
    std::string out;
    for (std::size_t i = 0; i < ds.records.size(); ++i) {
        out += std::to_string(i);
        out += '\t';
        out += std::to_string(ds.records[i].seed);
        out += '\t';
        out += kGeneratorNames[static_cast<std::size_t>(ds.records[i].generator)];
        out += '\n';
    }
    return out;
}

void write_manifest(const Dataset& ds, const std::string& path) {
    std::ofstream os(path);
    if (!os) throw std::runtime_error("manifest: cannot open for writing: " + path);
    os << manifest_text(ds);
    if (!os) throw std::runtime_error("manifest: write failed: " + path);
}

}  // namespace semeq
