#pragma once

#include "semeq/latent.hpp"

#include <cstdint>
#include <string>
#include <vector>

// Splits a quantized latent into equally sized semantic units and rebuilds it
// from whichever units survived the channel (lost positions become symbol 0).
// Unit order and payload order are fixed so any two endpoints agree bit-exactly.

namespace semeq {

enum class PartitionStrategy : std::uint8_t {
    channel_of_map = 0,  // unit = g consecutive channels, all spatial positions
    spatial_block = 1,   // unit = g x g spatial block, all channels
    token = 2,           // unit = g consecutive tokens
    token_channel = 3,   // unit = g consecutive dims across all tokens
};

const char* partition_strategy_name(PartitionStrategy s);
PartitionStrategy parse_partition_strategy(const std::string& s);

struct PartitionSpec {
    PartitionStrategy strategy = PartitionStrategy::channel_of_map;
    int group = 1;  // channels per unit, block edge, tokens per unit, or dims per unit

    bool operator==(const PartitionSpec&) const = default;
};

struct LatentGeometry {
    LatentLayout layout = LatentLayout::channel_map;
    int c = 0, h = 0, w = 0;
    int n = 0, d = 0;

    std::int64_t count() const {
        return layout == LatentLayout::channel_map ? static_cast<std::int64_t>(c) * h * w
                                                   : static_cast<std::int64_t>(n) * d;
    }
    static LatentGeometry channel_map(int c, int h, int w) {
        return {LatentLayout::channel_map, c, h, w, 0, 0};
    }
    static LatentGeometry tokens(int n, int d) { return {LatentLayout::tokens, 0, 0, 0, n, d}; }
    bool operator==(const LatentGeometry&) const = default;
};

inline LatentGeometry geometry_of(const LatentTensor& lat) {
    lat.validate();
    return {lat.layout, lat.c, lat.h, lat.w, lat.n, lat.d};
}

// Latent after test-mode quantization: 8-bit symbols in latent flat order.
struct QuantizedLatent {
    LatentGeometry geo;
    std::vector<std::int8_t> symbols;
};

struct SemanticUnit {
    int index = 0;
    std::vector<std::int8_t> payload;
};

struct LossMask {
    std::vector<std::uint8_t> received;  // 1 = received, 0 = lost

    int count_lost() const {
        int n = 0;
        for (auto r : received) n += r ? 0 : 1;
        return n;
    }
};

// Number of units and per-unit payload length implied by spec + geometry.
// Throws std::invalid_argument for illegal strategy/layout pairs or a group
// size that does not divide the partitioned extent.
int unit_count(const LatentGeometry& geo, const PartitionSpec& spec);
int unit_length(const LatentGeometry& geo, const PartitionSpec& spec);

std::vector<SemanticUnit> partition(const QuantizedLatent& lat, const PartitionSpec& spec);

// Zero-fills the positions of lost units; received units are written back
// exactly. Unit list must be complete (one entry per index, any order).
QuantizedLatent aggregate(const std::vector<SemanticUnit>& units, const LossMask& mask,
                          const PartitionSpec& spec, const LatentGeometry& geo);

}  // namespace semeq
