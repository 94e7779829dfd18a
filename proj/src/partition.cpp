#include "semeq/partition.hpp"

#include <stdexcept>

namespace semeq {

const char* partition_strategy_name(PartitionStrategy s) {
    switch (s) {
        case PartitionStrategy::channel_of_map: return "channel_of_map";
        case PartitionStrategy::spatial_block: return "spatial_block";
        case PartitionStrategy::token: return "token";
        case PartitionStrategy::token_channel: return "token_channel";
    }
    return "?";
}

PartitionStrategy parse_partition_strategy(const std::string& s) {
    if (s == "channel_of_map") return PartitionStrategy::channel_of_map;
    if (s == "spatial_block") return PartitionStrategy::spatial_block;
    if (s == "token") return PartitionStrategy::token;
    if (s == "token_channel") return PartitionStrategy::token_channel;
    throw std::invalid_argument("unknown partition strategy: " + s);
}

namespace {

bool needs_channel_map(PartitionStrategy s) {
    return s == PartitionStrategy::channel_of_map || s == PartitionStrategy::spatial_block;
}

void check_spec(const LatentGeometry& geo, const PartitionSpec& spec) {
    const bool is_map = geo.layout == LatentLayout::channel_map;
    if (needs_channel_map(spec.strategy) != is_map)
        throw std::invalid_argument(std::string("partition: strategy ") +
                                    partition_strategy_name(spec.strategy) +
                                    " is illegal for this latent layout");
    const int g = spec.group;
    if (g < 1) throw std::invalid_argument("partition: group size must be positive");
    switch (spec.strategy) {
        case PartitionStrategy::channel_of_map:
            if (geo.c % g != 0)
                throw std::invalid_argument("partition: group must divide channel count");
            break;
        case PartitionStrategy::spatial_block:
            if (geo.h % g != 0 || geo.w % g != 0)
                throw std::invalid_argument("partition: block edge must divide both extents");
            break;
        case PartitionStrategy::token:
            if (geo.n % g != 0)
                throw std::invalid_argument("partition: group must divide token count");
            break;
        case PartitionStrategy::token_channel:
            if (geo.d % g != 0)
                throw std::invalid_argument("partition: group must divide token dimension");
            break;
    }
}

// flat latent index of payload position k in unit u
std::int64_t position(const LatentGeometry& geo, const PartitionSpec& spec, int u,
                      std::int64_t k) {
    const int g = spec.group;
    switch (spec.strategy) {
        case PartitionStrategy::channel_of_map: {
            const std::int64_t hw = static_cast<std::int64_t>(geo.h) * geo.w;
            const std::int64_t ch = u * static_cast<std::int64_t>(g) + k / hw;
            return ch * hw + k % hw;
        }
        case PartitionStrategy::spatial_block: {
            const int blocks_x = geo.w / g;
            const int by = u / blocks_x, bx = u % blocks_x;
            const std::int64_t gg = static_cast<std::int64_t>(g) * g;
            const std::int64_t ch = k / gg;
            const std::int64_t r = (k % gg) / g, col = k % g;
            return (ch * geo.h + by * g + r) * geo.w + bx * g + col;
        }
        case PartitionStrategy::token: {
            const std::int64_t tok = u * static_cast<std::int64_t>(g) + k / geo.d;
            return tok * geo.d + k % geo.d;
        }
        case PartitionStrategy::token_channel: {
            const std::int64_t tok = k / g;
            const std::int64_t dim = u * static_cast<std::int64_t>(g) + k % g;
            return tok * geo.d + dim;
        }
    }
    throw std::invalid_argument("partition: bad strategy");
}

}  // namespace

int unit_count(const LatentGeometry& geo, const PartitionSpec& spec) {
    check_spec(geo, spec);
    switch (spec.strategy) {
        case PartitionStrategy::channel_of_map: return geo.c / spec.group;
        case PartitionStrategy::spatial_block: return (geo.h / spec.group) * (geo.w / spec.group);
        case PartitionStrategy::token: return geo.n / spec.group;
        case PartitionStrategy::token_channel: return geo.d / spec.group;
    }
    throw std::invalid_argument("partition: bad strategy");
}

int unit_length(const LatentGeometry& geo, const PartitionSpec& spec) {
    check_spec(geo, spec);
    switch (spec.strategy) {
        case PartitionStrategy::channel_of_map: return spec.group * geo.h * geo.w;
        case PartitionStrategy::spatial_block: return geo.c * spec.group * spec.group;
        case PartitionStrategy::token: return spec.group * geo.d;
        case PartitionStrategy::token_channel: return geo.n * spec.group;
    }
    throw std::invalid_argument("partition: bad strategy");
}

std::vector<SemanticUnit> partition(const QuantizedLatent& lat, const PartitionSpec& spec) {
    if (static_cast<std::int64_t>(lat.symbols.size()) != lat.geo.count())
        throw std::invalid_argument("partition: symbol count does not match geometry");
    const int n = unit_count(lat.geo, spec);
    const int len = unit_length(lat.geo, spec);
    std::vector<SemanticUnit> units(static_cast<std::size_t>(n));
    for (int u = 0; u < n; ++u) {
        auto& unit = units[static_cast<std::size_t>(u)];
        unit.index = u;
        unit.payload.resize(static_cast<std::size_t>(len));
        for (std::int64_t k = 0; k < len; ++k)
            unit.payload[static_cast<std::size_t>(k)] =
                lat.symbols[static_cast<std::size_t>(position(lat.geo, spec, u, k))];
    }
    return units;
}

QuantizedLatent aggregate(const std::vector<SemanticUnit>& units, const LossMask& mask,
                          const PartitionSpec& spec, const LatentGeometry& geo) {
    const int n = unit_count(geo, spec);
    const int len = unit_length(geo, spec);
    if (static_cast<int>(units.size()) != n || static_cast<int>(mask.received.size()) != n)
        throw std::invalid_argument("aggregate: unit list and mask must cover every unit");
    QuantizedLatent out;
    out.geo = geo;
    out.symbols.assign(static_cast<std::size_t>(geo.count()), 0);
    std::vector<std::uint8_t> seen(static_cast<std::size_t>(n), 0);
    for (const auto& unit : units) {
        if (unit.index < 0 || unit.index >= n)
            throw std::invalid_argument("aggregate: unit index out of range");
        if (seen[static_cast<std::size_t>(unit.index)]++)
            throw std::invalid_argument("aggregate: duplicate unit index");
        if (!mask.received[static_cast<std::size_t>(unit.index)]) continue;  // stays zero
        if (static_cast<int>(unit.payload.size()) != len)
            throw std::invalid_argument("aggregate: unit payload length mismatch");
        for (std::int64_t k = 0; k < len; ++k)
            out.symbols[static_cast<std::size_t>(position(geo, spec, unit.index, k))] =
                unit.payload[static_cast<std::size_t>(k)];
    }
    return out;
}

}  // namespace semeq
