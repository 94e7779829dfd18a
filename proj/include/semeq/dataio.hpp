#pragma once

#include "semeq/image.hpp"
#include "semeq/rng.hpp"

#include <array>
#include <cstdint>
#include <string>
#include <vector>

// Procedural training corpus. Every image is a pure function of one 64-bit
// seed; the per-image seed for index i is the (i+1)-th output of a splitmix64
// stream seeded with the master seed. The first unit() draw of the image's
// generator stream selects the family by scanning the cumulative mixture
// weights; the remaining draws belong to the selected family:
//
//   gradient:      color c0 (3x unit), color c1 (3x unit), angle (unit);
//                  t = clamp01(0.5 + ((x+.5)/W-.5)cos + ((y+.5)/H-.5)sin),
//                  pixel = round(c0 + (c1-c0) t)
//   checkerboard:  cell = 4+below(13), ox = below(cell), oy = below(cell),
//                  c0, c1; pixel by parity of (x+ox)/cell + (y+oy)/cell
//   gaussian_blobs: bg color; k = 3+below(4) blobs, each
//                  (cx,cy) = (unit*W, unit*H), sigma = 2+10*unit, color,
//                  amp = 0.5+0.5*unit; alpha-composited in draw order with
//                  w = amp*exp(-d^2/(2 sigma^2))
//   value_noise:   cells = 4*2^below(3); (cells+1)^2 lattice points scanned
//                  row-major with 3 unit draws each; smoothstep-bilinear
//                  interpolation, scaled by 255
//   stripes:       c0, c1, angle (unit), freq = 2+14*unit, phase (unit*2pi);
//                  s = 0.5+0.5 sin(2pi freq ((x+.5)/W cos + (y+.5)/H sin)
//                  + phase), pixel = round(c0 + (c1-c0) s)
//
// Color channels draw as floor(unit()*256); pixels round half away from zero
// and clamp to [0,255]. Pixel centers sit at +0.5.

namespace semeq {

inline constexpr int kNumGenerators = 5;
extern const std::array<const char*, kNumGenerators> kGeneratorNames;

struct DatasetSpec {
    int count = 0;
    int size = 64;  // square images
    std::uint64_t master_seed = 0;
    std::array<double, kNumGenerators> weights = {0.2, 0.2, 0.2, 0.2, 0.2};
};

struct DatasetRecord {
    std::uint64_t seed = 0;
    int generator = 0;  // index into kGeneratorNames
};

struct Dataset {
    std::vector<Image> images;
    std::vector<DatasetRecord> records;
};

// Deterministic: the same spec always produces byte-identical images.
Dataset generate_synthetic(const DatasetSpec& spec);

// Single image from an explicit seed (used by generate_synthetic and tests).
Image generate_image(std::uint64_t seed, int size, const std::array<double, kNumGenerators>& weights,
                     int* generator_out = nullptr);

// One "index<TAB>seed<TAB>generator" line per image.
std::string manifest_text(const Dataset& ds);
void write_manifest(const Dataset& ds, const std::string& path);

}  // namespace semeq
