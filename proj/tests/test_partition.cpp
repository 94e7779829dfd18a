#include "semeq/partition.hpp"

#include "semeq/rng.hpp"

#include <doctest.h>

#include <numeric>
#include <set>
#include <vector>

using namespace semeq;

namespace {

QuantizedLatent random_latent(const LatentGeometry& geo, std::uint64_t seed) {
    QuantizedLatent lat;
    lat.geo = geo;
    lat.symbols.resize(static_cast<std::size_t>(geo.count()));
    Rng rng(seed);
    for (auto& s : lat.symbols) s = static_cast<std::int8_t>(rng.below(255)) - 127;
    return lat;
}

LossMask all_received(int n) {
    LossMask m;
    m.received.assign(static_cast<std::size_t>(n), 1);
    return m;
}

}  // namespace

TEST_CASE("unit counts and lengths per strategy") {
    const auto map_geo = LatentGeometry::channel_map(16, 16, 16);
    const auto tok_geo = LatentGeometry::tokens(64, 24);

    PartitionSpec spec{PartitionStrategy::channel_of_map, 1};
    CHECK(unit_count(map_geo, spec) == 16);
    CHECK(unit_length(map_geo, spec) == 256);

    spec = {PartitionStrategy::spatial_block, 4};
    CHECK(unit_count(map_geo, spec) == 16);
    CHECK(unit_length(map_geo, spec) == 256);

    spec = {PartitionStrategy::token, 1};
    CHECK(unit_count(tok_geo, spec) == 64);
    CHECK(unit_length(tok_geo, spec) == 24);

    spec = {PartitionStrategy::token_channel, 1};
    CHECK(unit_count(tok_geo, spec) == 24);
    CHECK(unit_length(tok_geo, spec) == 64);

    // total symbols conserved in every case
    for (auto [geo, strategies] :
         {std::pair{map_geo, std::vector<PartitionSpec>{{PartitionStrategy::channel_of_map, 2},
                                                        {PartitionStrategy::spatial_block, 8}}},
          std::pair{tok_geo, std::vector<PartitionSpec>{{PartitionStrategy::token, 4},
                                                        {PartitionStrategy::token_channel, 3}}}})
        for (const auto& s : strategies)
            CHECK(static_cast<std::int64_t>(unit_count(geo, s)) * unit_length(geo, s) ==
                  geo.count());
}

TEST_CASE("illegal strategy/layout pairs and non-dividing groups are rejected") {
    const auto map_geo = LatentGeometry::channel_map(16, 16, 16);
    const auto tok_geo = LatentGeometry::tokens(64, 24);
    CHECK_THROWS_AS(unit_count(tok_geo, {PartitionStrategy::spatial_block, 1}),
                    std::invalid_argument);
    CHECK_THROWS_AS(unit_count(tok_geo, {PartitionStrategy::channel_of_map, 1}),
                    std::invalid_argument);
    CHECK_THROWS_AS(unit_count(map_geo, {PartitionStrategy::token, 1}), std::invalid_argument);
    CHECK_THROWS_AS(unit_count(map_geo, {PartitionStrategy::token_channel, 1}),
                    std::invalid_argument);
    CHECK_THROWS_AS(unit_count(map_geo, {PartitionStrategy::channel_of_map, 3}),
                    std::invalid_argument);
    CHECK_THROWS_AS(unit_count(map_geo, {PartitionStrategy::spatial_block, 5}),
                    std::invalid_argument);
    CHECK_THROWS_AS(unit_count(tok_geo, {PartitionStrategy::token, 7}), std::invalid_argument);
    CHECK_THROWS_AS(unit_count(tok_geo, {PartitionStrategy::token_channel, 5}),
                    std::invalid_argument);
    CHECK_THROWS_AS(unit_count(map_geo, {PartitionStrategy::channel_of_map, 0}),
                    std::invalid_argument);
}

TEST_CASE("channel_of_map payload order is channel-major then row-major") {
    // tiny latent: c=2, h=2, w=2, symbols 0..7 in flat order
    QuantizedLatent lat;
    lat.geo = LatentGeometry::channel_map(2, 2, 2);
    lat.symbols = {0, 1, 2, 3, 4, 5, 6, 7};
    const auto units = partition(lat, {PartitionStrategy::channel_of_map, 1});
    REQUIRE(units.size() == 2);
    CHECK(units[0].payload == std::vector<std::int8_t>({0, 1, 2, 3}));
    CHECK(units[1].payload == std::vector<std::int8_t>({4, 5, 6, 7}));

    const auto one = partition(lat, {PartitionStrategy::channel_of_map, 2});
    REQUIRE(one.size() == 1);
    CHECK(one[0].payload == std::vector<std::int8_t>({0, 1, 2, 3, 4, 5, 6, 7}));
}

TEST_CASE("spatial_block payload order is blocks row-major, channels major inside") {
    QuantizedLatent lat;
    lat.geo = LatentGeometry::channel_map(2, 2, 2);
    lat.symbols = {0, 1, 2, 3, 4, 5, 6, 7};
    const auto units = partition(lat, {PartitionStrategy::spatial_block, 1});
    REQUIRE(units.size() == 4);
    // unit u covers spatial position u across both channels
    CHECK(units[0].payload == std::vector<std::int8_t>({0, 4}));
    CHECK(units[1].payload == std::vector<std::int8_t>({1, 5}));
    CHECK(units[2].payload == std::vector<std::int8_t>({2, 6}));
    CHECK(units[3].payload == std::vector<std::int8_t>({3, 7}));
}

TEST_CASE("token payload orders") {
    QuantizedLatent lat;
    lat.geo = LatentGeometry::tokens(2, 3);
    lat.symbols = {0, 1, 2, 3, 4, 5};  // token 0: 0,1,2; token 1: 3,4,5
    const auto tok = partition(lat, {PartitionStrategy::token, 1});
    REQUIRE(tok.size() == 2);
    CHECK(tok[0].payload == std::vector<std::int8_t>({0, 1, 2}));
    CHECK(tok[1].payload == std::vector<std::int8_t>({3, 4, 5}));

    const auto dim = partition(lat, {PartitionStrategy::token_channel, 1});
    REQUIRE(dim.size() == 3);
    CHECK(dim[0].payload == std::vector<std::int8_t>({0, 3}));
    CHECK(dim[1].payload == std::vector<std::int8_t>({1, 4}));
    CHECK(dim[2].payload == std::vector<std::int8_t>({2, 5}));
}

TEST_CASE("aggregate(partition(x)) is the identity for every strategy and group") {
    const auto map_geo = LatentGeometry::channel_map(16, 8, 8);
    const auto tok_geo = LatentGeometry::tokens(16, 12);
    struct Case {
        LatentGeometry geo;
        PartitionSpec spec;
    };
    const std::vector<Case> cases = {
        {map_geo, {PartitionStrategy::channel_of_map, 1}},
        {map_geo, {PartitionStrategy::channel_of_map, 4}},
        {map_geo, {PartitionStrategy::channel_of_map, 16}},
        {map_geo, {PartitionStrategy::spatial_block, 1}},
        {map_geo, {PartitionStrategy::spatial_block, 2}},
        {map_geo, {PartitionStrategy::spatial_block, 8}},
        {tok_geo, {PartitionStrategy::token, 1}},
        {tok_geo, {PartitionStrategy::token, 4}},
        {tok_geo, {PartitionStrategy::token_channel, 1}},
        {tok_geo, {PartitionStrategy::token_channel, 6}},
    };
    std::uint64_t seed = 100;
    for (const auto& cse : cases) {
        const auto lat = random_latent(cse.geo, seed++);
        const auto units = partition(lat, cse.spec);
        const auto back = aggregate(units, all_received(static_cast<int>(units.size())), cse.spec,
                                    cse.geo);
        CHECK(back.symbols == lat.symbols);
    }
}

TEST_CASE("partition touches every latent position exactly once") {
    const auto geo = LatentGeometry::channel_map(8, 4, 4);
    for (const PartitionSpec spec : {PartitionSpec{PartitionStrategy::channel_of_map, 2},
                                     PartitionSpec{PartitionStrategy::spatial_block, 2}}) {
        // encode each flat position as its own value via two partitions of
        // index markers (payload symbols are 8-bit, so use two passes)
        QuantizedLatent lat;
        lat.geo = geo;
        lat.symbols.resize(static_cast<std::size_t>(geo.count()));
        for (std::size_t i = 0; i < lat.symbols.size(); ++i)
            lat.symbols[i] = static_cast<std::int8_t>(i % 127);
        const auto units = partition(lat, spec);
        std::multiset<int> seen;
        for (const auto& u : units)
            for (auto s : u.payload) seen.insert(s);
        std::multiset<int> want;
        for (std::size_t i = 0; i < lat.symbols.size(); ++i)
            want.insert(static_cast<int>(i % 127));
        CHECK(seen == want);
    }
}

TEST_CASE("all lost yields the zero latent") {
    const auto geo = LatentGeometry::tokens(8, 4);
    const auto lat = random_latent(geo, 7);
    const PartitionSpec spec{PartitionStrategy::token, 1};
    const auto units = partition(lat, spec);
    LossMask mask;
    mask.received.assign(units.size(), 0);
    const auto back = aggregate(units, mask, spec, geo);
    for (auto s : back.symbols) CHECK(s == 0);
    CHECK(mask.count_lost() == 8);
}

TEST_CASE("losing channel unit 3 zeroes exactly channel 3") {
    const auto geo = LatentGeometry::channel_map(8, 4, 4);
    const auto lat = random_latent(geo, 8);
    const PartitionSpec spec{PartitionStrategy::channel_of_map, 1};
    auto units = partition(lat, spec);
    auto mask = all_received(8);
    mask.received[3] = 0;
    const auto back = aggregate(units, mask, spec, geo);
    for (int c = 0; c < 8; ++c)
        for (int i = 0; i < 16; ++i) {
            const std::size_t pos = static_cast<std::size_t>(c * 16 + i);
            if (c == 3)
                CHECK(back.symbols[pos] == 0);
            else
                CHECK(back.symbols[pos] == lat.symbols[pos]);
        }
}

TEST_CASE("aggregate validates unit lists") {
    const auto geo = LatentGeometry::tokens(4, 4);
    const PartitionSpec spec{PartitionStrategy::token, 1};
    const auto lat = random_latent(geo, 9);
    auto units = partition(lat, spec);
    CHECK_THROWS_AS(aggregate(units, all_received(3), spec, geo), std::invalid_argument);
    auto dup = units;
    dup[1].index = 0;
    CHECK_THROWS_AS(aggregate(dup, all_received(4), spec, geo), std::invalid_argument);
    auto bad_len = units;
    bad_len[2].payload.pop_back();
    CHECK_THROWS_AS(aggregate(bad_len, all_received(4), spec, geo), std::invalid_argument);
    auto out_of_range = units;
    out_of_range[0].index = 99;
    CHECK_THROWS_AS(aggregate(out_of_range, all_received(4), spec, geo), std::invalid_argument);
}

TEST_CASE("strategy names round trip") {
    for (auto s : {PartitionStrategy::channel_of_map, PartitionStrategy::spatial_block,
                   PartitionStrategy::token, PartitionStrategy::token_channel})
        CHECK(parse_partition_strategy(partition_strategy_name(s)) == s);
    CHECK_THROWS_AS(parse_partition_strategy("nope"), std::invalid_argument);
}
