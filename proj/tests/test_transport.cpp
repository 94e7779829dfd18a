#include "semeq/transport.hpp"

#include "semeq/rng.hpp"

#include <doctest.h>

#include <algorithm>
#include <cstring>
#include <string>
#include <vector>

using namespace semeq;

namespace {

std::string to_hex(const std::vector<std::uint8_t>& bytes) {
    static const char* digits = "0123456789abcdef";
    std::string s;
    s.reserve(bytes.size() * 2);
    for (auto b : bytes) {
        s.push_back(digits[b >> 4]);
        s.push_back(digits[b & 0xF]);
    }
    return s;
}

std::vector<SemanticUnit> make_units(int n, int len, std::uint64_t seed) {
    std::vector<SemanticUnit> units(static_cast<std::size_t>(n));
    Rng rng(seed);
    for (int i = 0; i < n; ++i) {
        units[static_cast<std::size_t>(i)].index = i;
        auto& p = units[static_cast<std::size_t>(i)].payload;
        p.resize(static_cast<std::size_t>(len));
        for (auto& s : p) s = static_cast<std::int8_t>(rng.below(255)) - 127;
    }
    return units;
}

// fraction of lost unit ids whose immediate successor id is also lost
double lost_adjacency(const LossMask& mask) {
    int pairs = 0, eligible = 0;
    for (std::size_t i = 0; i + 1 < mask.received.size(); ++i) {
        if (mask.received[i]) continue;
        ++eligible;
        if (!mask.received[i + 1]) ++pairs;
    }
    return eligible == 0 ? 0.0 : static_cast<double>(pairs) / eligible;
}

}  // namespace

TEST_CASE("crc32 matches the standard check value") {
    const char* msg = "123456789";
    CHECK(crc32_ieee(reinterpret_cast<const std::uint8_t*>(msg), 9) == 0xCBF43926u);
    CHECK(crc32_ieee(nullptr, 0) == 0x00000000u);
}

TEST_CASE("frame produces the golden byte layouts") {
    Packet empty;
    empty.session = 1;
    empty.index = 0;
    empty.total = 1;
    const auto b1 = frame(empty);
    CHECK(b1.size() == kPacketOverhead);
    CHECK(to_hex(b1) == "53454d55010001000000000001000000000000000000000100000000e673c4a6");

    Packet p;
    p.flags = kFlagSequential;
    p.session = 7;
    p.index = 2;
    p.total = 8;
    p.perm_seed = 42;
    p.strategy = 2;
    p.group_size = 1;
    p.unit_len = 3;
    p.unit_ids = {5, 6};
    p.payload = {1, -2, 3, -4, 5, -6};
    const auto b2 = frame(p);
    CHECK(b2.size() == kPacketOverhead + 2 * 2 + 6);
    CHECK(to_hex(b2) ==
          "53454d55010107000000020008002a000000000000000201030002000500060001fe03fc05fabf165d74");
}

TEST_CASE("deframe inverts frame") {
    Packet p;
    p.flags = 0;
    p.session = 123456;
    p.index = 3;
    p.total = 9;
    p.perm_seed = 0xDEADBEEFCAFEF00DULL;
    p.strategy = 1;
    p.group_size = 4;
    p.unit_len = 5;
    p.unit_ids = {0, 7, 19};
    p.payload = {127, -128, 0, 1, -1, 2, -2, 3, -3, 4, -4, 5, -5, 6, -6};
    CHECK(deframe(frame(p)) == p);
}

TEST_CASE("every corrupted byte breaks the checksum or the header") {
    Packet p;
    p.session = 9;
    p.unit_len = 2;
    p.unit_ids = {0};
    p.payload = {10, -11};
    const auto good = frame(p);
    CHECK(deframe(good) == p);
    for (std::size_t i = 0; i < good.size(); ++i) {
        auto bad = good;
        bad[i] ^= 0x40;
        CHECK_THROWS_AS(deframe(bad), FramingError);
        CHECK(!try_deframe(bad).has_value());
    }
    CHECK(try_deframe(good).has_value());
}

TEST_CASE("deframe rejects malformed inputs") {
    Packet p;
    p.unit_len = 1;
    p.unit_ids = {0};
    p.payload = {1};
    auto bytes = frame(p);

    auto truncated = bytes;
    truncated.pop_back();
    CHECK_THROWS_AS(deframe(truncated), FramingError);

    CHECK_THROWS_AS(deframe(std::vector<std::uint8_t>{'S', 'E', 'M', 'U'}), FramingError);

    auto trailing = bytes;
    trailing.push_back(0);
    CHECK_THROWS_AS(deframe(trailing), FramingError);

    // version bump with a recomputed checksum still refused
    auto vers = bytes;
    vers[4] = 2;
    const auto crc = crc32_ieee(vers.data() + 4, vers.size() - 8);
    for (int i = 0; i < 4; ++i)
        vers[vers.size() - 4 + static_cast<std::size_t>(i)] =
            static_cast<std::uint8_t>(crc >> (8 * i));
    CHECK_THROWS_AS(deframe(vers), FramingError);
    CHECK_THROWS_WITH_AS(deframe(vers), "packet: unsupported version", FramingError);
}

TEST_CASE("frame validates payload against the declared grid") {
    Packet p;
    p.unit_len = 4;
    p.unit_ids = {0, 1};
    p.payload = {1, 2, 3};  // needs 8
    CHECK_THROWS_AS(frame(p), FramingError);
}

TEST_CASE("auto_units_per_packet uses every byte after the fixed overhead") {
    // each unit costs unit_len payload bytes + 2 id bytes
    CHECK(auto_units_per_packet(256, 1400) == 5);    // (1400-32)/258
    CHECK(auto_units_per_packet(24, 1400) == 52);    // (1400-32)/26
    CHECK(auto_units_per_packet(1, 35) == 1);        // exactly one fits
    CHECK(auto_units_per_packet(683, 1400) == 1);    // 685 <= 1368 < 1370
    CHECK_THROWS_AS(auto_units_per_packet(1367, 1400), FramingError);
    CHECK_THROWS_AS(auto_units_per_packet(2, 35), FramingError);
}

TEST_CASE("interleaved grouping follows the seeded permutation") {
    const auto units = make_units(16, 4, 5);
    GroupConfig cfg;
    cfg.session = 11;
    cfg.perm_seed = 42;
    cfg.units_per_packet = 2;
    const auto packets = group_units(units, {PartitionStrategy::channel_of_map, 1}, cfg);
    REQUIRE(packets.size() == 8);
    const std::vector<std::vector<std::uint16_t>> want = {
        {14, 9}, {7, 2}, {3, 1}, {10, 8}, {15, 11}, {13, 4}, {0, 5}, {12, 6}};
    for (std::size_t i = 0; i < packets.size(); ++i) {
        const auto& p = packets[i];
        CHECK(p.session == 11);
        CHECK(p.index == static_cast<std::uint16_t>(i));
        CHECK(p.total == 8);
        CHECK(p.perm_seed == 42);
        CHECK(p.strategy == 0);
        CHECK(p.group_size == 1);
        CHECK(p.unit_len == 4);
        CHECK((p.flags & kFlagSequential) == 0);
        CHECK(p.unit_ids == want[i]);
        REQUIRE(p.payload.size() == 8);
        for (int k = 0; k < 2; ++k)
            for (int j = 0; j < 4; ++j)
                CHECK(p.payload[static_cast<std::size_t>(k * 4 + j)] ==
                      units[want[i][static_cast<std::size_t>(k)]]
                          .payload[static_cast<std::size_t>(j)]);
    }
}

TEST_CASE("sequential grouping keeps unit order and sets the flag") {
    const auto units = make_units(5, 3, 6);
    GroupConfig cfg;
    cfg.units_per_packet = 2;
    cfg.sequential = true;
    const auto packets = group_units(units, {PartitionStrategy::token, 1}, cfg);
    REQUIRE(packets.size() == 3);  // 2 + 2 + 1
    CHECK(packets[0].unit_ids == std::vector<std::uint16_t>({0, 1}));
    CHECK(packets[1].unit_ids == std::vector<std::uint16_t>({2, 3}));
    CHECK(packets[2].unit_ids == std::vector<std::uint16_t>({4}));
    for (const auto& p : packets) CHECK((p.flags & kFlagSequential) != 0);
    CHECK(packets[2].payload.size() == 3);
}

TEST_CASE("ungroup after group restores units and a full mask") {
    const auto units = make_units(16, 4, 7);
    GroupConfig cfg;
    cfg.session = 3;
    cfg.perm_seed = 999;
    cfg.units_per_packet = 3;  // 16 = 3*5 + 1, exercises a short tail packet
    const auto packets = group_units(units, {PartitionStrategy::channel_of_map, 1}, cfg);
    REQUIRE(packets.size() == 6);
    auto [back, mask] = ungroup_packets(packets, 16);
    REQUIRE(back.size() == 16);
    CHECK(mask.count_lost() == 0);
    for (int i = 0; i < 16; ++i) {
        CHECK(back[static_cast<std::size_t>(i)].index == i);
        CHECK(back[static_cast<std::size_t>(i)].payload == units[static_cast<std::size_t>(i)].payload);
    }
}

TEST_CASE("one lost packet costs exactly its units") {
    const auto units = make_units(16, 4, 8);
    GroupConfig cfg;
    cfg.perm_seed = 42;
    cfg.units_per_packet = 2;
    auto packets = group_units(units, {PartitionStrategy::channel_of_map, 1}, cfg);
    // drop packet 2, which carries units {3, 1} under seed 42
    packets.erase(packets.begin() + 2);
    auto [back, mask] = ungroup_packets(packets, 16);
    CHECK(mask.count_lost() == 2);
    CHECK(mask.received[1] == 0);
    CHECK(mask.received[3] == 0);
    for (int i = 0; i < 16; ++i) {
        const auto idx = static_cast<std::size_t>(i);
        if (i == 1 || i == 3) {
            CHECK(back[idx].payload == std::vector<std::int8_t>(4, 0));
        } else {
            CHECK(back[idx].payload == units[idx].payload);
        }
    }
}

TEST_CASE("ungroup validates its inputs") {
    const auto units = make_units(4, 2, 9);
    GroupConfig cfg;
    cfg.session = 1;
    cfg.units_per_packet = 2;
    auto packets = group_units(units, {PartitionStrategy::token, 1}, cfg);
    auto other = packets;
    other[1].session = 2;
    CHECK_THROWS_WITH_AS(ungroup_packets(other, 4), "ungroup: packets from mixed sessions",
                         FramingError);
    auto oor = packets;
    oor[0].unit_ids[0] = 40;
    CHECK_THROWS_AS(ungroup_packets(oor, 4), FramingError);
    CHECK_THROWS_AS(ungroup_packets(packets, 0), std::invalid_argument);
    // receiving no packets at all is legal: everything is simply lost
    auto [back, mask] = ungroup_packets({}, 4);
    CHECK(back.size() == 4);
    CHECK(mask.count_lost() == 4);
}

TEST_CASE("group_units validates its inputs") {
    GroupConfig cfg;
    CHECK_THROWS_AS(group_units({}, {PartitionStrategy::token, 1}, cfg), std::invalid_argument);
    auto units = make_units(3, 2, 10);
    cfg.units_per_packet = 0;
    CHECK_THROWS_AS(group_units(units, {PartitionStrategy::token, 1}, cfg),
                    std::invalid_argument);
    cfg.units_per_packet = 2;
    units[1].payload.resize(5);
    CHECK_THROWS_AS(group_units(units, {PartitionStrategy::token, 1}, cfg),
                    std::invalid_argument);
}

TEST_CASE("iid channel extremes and rate") {
    Rng rng(1234);
    const auto none = channel_drops(1000, ChannelModel::iid(0.0), rng);
    CHECK(std::count(none.begin(), none.end(), 1) == 0);
    const auto all = channel_drops(1000, ChannelModel::iid(1.0), rng);
    CHECK(std::count(all.begin(), all.end(), 1) == 1000);

    const int n = 100000;
    const auto drops = channel_drops(n, ChannelModel::iid(0.3), rng);
    const double rate = static_cast<double>(std::count(drops.begin(), drops.end(), 1)) / n;
    CHECK(rate == doctest::Approx(0.3).epsilon(0.04));

    CHECK_THROWS_AS(channel_drops(10, ChannelModel::iid(1.5), rng), std::invalid_argument);
    CHECK_THROWS_AS(channel_drops(-1, ChannelModel::iid(0.5), rng), std::invalid_argument);
}

TEST_CASE("burst channel produces the expected loss rate and burst lengths") {
    // good->bad 0.1, bad->good 0.5, certain loss in bad, none in good:
    // stationary loss rate = 0.1/(0.1+0.5) = 1/6, mean burst length = 1/0.5 = 2
    const auto model = ChannelModel::gilbert_elliott(0.1, 0.5, 0.0, 1.0);
    Rng rng(77);
    const int n = 200000;
    const auto drops = channel_drops(n, model, rng);
    const double rate = static_cast<double>(std::count(drops.begin(), drops.end(), 1)) / n;
    CHECK(rate == doctest::Approx(1.0 / 6.0).epsilon(0.05));

    int bursts = 0;
    long in_burst = 0;
    for (int i = 0; i < n; ++i) {
        if (!drops[static_cast<std::size_t>(i)]) continue;
        ++in_burst;
        if (i + 1 == n || !drops[static_cast<std::size_t>(i) + 1]) ++bursts;
    }
    const double mean_burst = static_cast<double>(in_burst) / bursts;
    CHECK(mean_burst == doctest::Approx(2.0).epsilon(0.05));

    // chain starts good, so with no way into the bad state nothing is lost
    Rng rng2(78);
    const auto quiet = channel_drops(5000, ChannelModel::gilbert_elliott(0.0, 0.5, 0.0, 1.0), rng2);
    CHECK(std::count(quiet.begin(), quiet.end(), 1) == 0);
}

TEST_CASE("transmit equals apply_drops over the same stream") {
    const auto units = make_units(32, 4, 11);
    GroupConfig cfg;
    cfg.units_per_packet = 2;
    const auto packets = group_units(units, {PartitionStrategy::channel_of_map, 1}, cfg);
    const auto model = ChannelModel::gilbert_elliott(0.2, 0.4, 0.05, 0.9);
    Rng a(31), b(31);
    const auto direct = transmit(packets, model, a);
    const auto drops = channel_drops(static_cast<int>(packets.size()), model, b);
    const auto via_mask = apply_drops(packets, drops);
    CHECK(direct == via_mask);
    CHECK_THROWS_AS(apply_drops(packets, std::vector<std::uint8_t>(3, 0)),
                    std::invalid_argument);
}

TEST_CASE("interleaving scatters a packet burst across unit ids") {
    const int n_units = 256, per_packet = 4;
    const auto units = make_units(n_units, 4, 12);

    auto run = [&](bool sequential) {
        GroupConfig cfg;
        cfg.perm_seed = 42;
        cfg.units_per_packet = per_packet;
        cfg.sequential = sequential;
        auto packets = group_units(units, {PartitionStrategy::channel_of_map, 1}, cfg);
        // burst: packets 10..19 vanish (40 of 256 units)
        std::vector<Packet> kept;
        for (std::size_t i = 0; i < packets.size(); ++i)
            if (i < 10 || i >= 20) kept.push_back(packets[i]);
        auto [back, mask] = ungroup_packets(kept, n_units);
        CHECK(mask.count_lost() == 40);
        return lost_adjacency(mask);
    };

    const double seq = run(true);
    const double interleaved = run(false);
    CHECK(seq >= 0.9);           // consecutive ids lost together
    CHECK(interleaved <= 0.35);  // scattered close to the 40/256 chance level
    CHECK(interleaved < seq);
}

TEST_CASE("udp loopback delivers every framed packet") {
    const auto units = make_units(24, 6, 13);
    GroupConfig cfg;
    cfg.session = 21;
    cfg.perm_seed = 5;
    cfg.units_per_packet = 4;
    const auto packets = group_units(units, {PartitionStrategy::channel_of_map, 1}, cfg);
    const std::vector<std::uint8_t> no_drops(packets.size(), 0);
    const auto result = udp_loopback_exchange(packets, no_drops, 39471);
    CHECK(result.sent == static_cast<int>(packets.size()));
    CHECK(result.dropped_at_sender == 0);
    CHECK(result.corrupt == 0);
    REQUIRE(result.received.size() == packets.size());
    auto sorted = result.received;
    std::sort(sorted.begin(), sorted.end(),
              [](const Packet& a, const Packet& b) { return a.index < b.index; });
    CHECK(sorted == packets);

    auto [back, mask] = ungroup_packets(result.received, 24);
    CHECK(mask.count_lost() == 0);
    for (int i = 0; i < 24; ++i)
        CHECK(back[static_cast<std::size_t>(i)].payload ==
              units[static_cast<std::size_t>(i)].payload);
}

TEST_CASE("udp loopback honors sender-side drops") {
    const auto units = make_units(12, 6, 14);
    GroupConfig cfg;
    cfg.units_per_packet = 2;
    const auto packets = group_units(units, {PartitionStrategy::channel_of_map, 1}, cfg);
    std::vector<std::uint8_t> drops(packets.size(), 0);
    drops[1] = 1;
    drops[4] = 1;
    const auto result = udp_loopback_exchange(packets, drops, 39473);
    CHECK(result.sent == static_cast<int>(packets.size()) - 2);
    CHECK(result.dropped_at_sender == 2);
    REQUIRE(result.received.size() == packets.size() - 2);
    auto [back, mask] = ungroup_packets(result.received, 12);
    CHECK(mask.count_lost() == 4);
}

TEST_CASE("udp loopback refuses frames over the mtu") {
    Packet p;
    p.unit_len = 600;
    p.unit_ids = {0};
    p.payload.assign(600, 1);
    CHECK_THROWS_AS(udp_loopback_exchange({p}, {0}, 39475, 128), FramingError);
}
