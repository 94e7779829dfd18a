#pragma once

#include "semeq/partition.hpp"
#include "semeq/rng.hpp"

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

// Packetization over a lossy datagram channel: random unit interleaving,
// bit-exact framing with CRC-32, erasure-channel models (iid and two-state
// burst), and a real UDP loopback path. Wire layout, little-endian throughout:
//
//   magic "SEMU" | version u8=1 | flags u8 | session u32 | packet_index u16 |
//   total_packets u16 | perm_seed u64 | strategy u8 | group_size u8 |
//   unit_payload_len u16 | unit_count u16 | unit_ids u16 x count |
//   payload i8 x (count*len) | crc32 u32
//
// The CRC covers everything after the magic and before the CRC itself.
// flags bit 0: units were grouped sequentially (no interleaving).

namespace semeq {

class FramingError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

inline constexpr std::uint8_t kPacketVersion = 1;
inline constexpr std::uint8_t kFlagSequential = 0x01;
inline constexpr std::size_t kPacketOverhead = 32;  // header (28) + crc (4)
inline constexpr int kDefaultMtu = 1400;

struct Packet {
    std::uint8_t flags = 0;
    std::uint32_t session = 0;
    std::uint16_t index = 0;
    std::uint16_t total = 1;
    std::uint64_t perm_seed = 0;
    std::uint8_t strategy = 0;
    std::uint8_t group_size = 1;
    std::uint16_t unit_len = 0;
    std::vector<std::uint16_t> unit_ids;
    std::vector<std::int8_t> payload;  // unit_ids.size() * unit_len symbols

    bool operator==(const Packet&) const = default;
};

// CRC-32 (IEEE 802.3, reflected polynomial 0xEDB88320, init/final 0xFFFFFFFF)
std::uint32_t crc32_ieee(const std::uint8_t* data, std::size_t n);

std::vector<std::uint8_t> frame(const Packet& p);
Packet deframe(const std::vector<std::uint8_t>& bytes);  // throws FramingError
std::optional<Packet> try_deframe(const std::vector<std::uint8_t>& bytes);

// ---------------------------------------------------------------------------
// grouping

struct GroupConfig {
    std::uint32_t session = 0;
    std::uint64_t perm_seed = 0;
    int units_per_packet = 1;
    bool sequential = false;  // true: keep unit order (no interleaving)
};

// Largest U with a frame of U units fitting in the MTU; throws if even one
// unit cannot fit (sender-side fragmentation is not supported).
int auto_units_per_packet(int unit_len, int mtu = kDefaultMtu);

// Permutes units (Fisher-Yates over a xoshiro stream seeded from perm_seed)
// and packs them U per packet; the last packet may carry fewer units.
std::vector<Packet> group_units(const std::vector<SemanticUnit>& units, const PartitionSpec& spec,
                                const GroupConfig& cfg);

// Restores original unit order from whichever packets arrived. Lost units get
// zero payloads and a cleared mask bit. total_units comes from the latent
// geometry the receiver is about to rebuild.
std::pair<std::vector<SemanticUnit>, LossMask> ungroup_packets(const std::vector<Packet>& received,
                                                               int total_units);

// ---------------------------------------------------------------------------
// erasure channels

struct ChannelModel {
    enum class Kind { iid, gilbert_elliott };
    Kind kind = Kind::iid;
    double p = 0.0;          // iid loss probability
    double p_gb = 0.0;       // good -> bad transition
    double p_bg = 1.0;       // bad -> good transition
    double loss_good = 0.0;  // loss probability in the good state
    double loss_bad = 1.0;   // loss probability in the bad state

    static ChannelModel iid(double p) {
        ChannelModel m;
        m.kind = Kind::iid;
        m.p = p;
        return m;
    }
    static ChannelModel gilbert_elliott(double p_gb, double p_bg, double loss_good,
                                        double loss_bad) {
        ChannelModel m;
        m.kind = Kind::gilbert_elliott;
        m.p_gb = p_gb;
        m.p_bg = p_bg;
        m.loss_good = loss_good;
        m.loss_bad = loss_bad;
        return m;
    }
    void validate() const;

    bool operator==(const ChannelModel&) const = default;
};

// One drop decision per packet, in packet-index order. The burst chain starts
// in the good state; each step samples a loss with the current state's
// probability, then transitions.
std::vector<std::uint8_t> channel_drops(int n_packets, const ChannelModel& model, Rng& rng);

// Applies the drop pattern: packets whose flag is set are removed.
std::vector<Packet> apply_drops(const std::vector<Packet>& packets,
                                const std::vector<std::uint8_t>& drops);

std::vector<Packet> transmit(const std::vector<Packet>& packets, const ChannelModel& model,
                             Rng& rng);

// ---------------------------------------------------------------------------
// UDP loopback

struct UdpExchangeResult {
    std::vector<Packet> received;
    int sent = 0;
    int dropped_at_sender = 0;
    int corrupt = 0;
};

// Frames every packet not marked in `sender_drops`, ships each as one UDP
// datagram to 127.0.0.1:port, and collects what a concurrently running
// receiver socket gets until it has seen the expected count or times out.
// Frames over `mtu` raise FramingError before any socket work.
UdpExchangeResult udp_loopback_exchange(const std::vector<Packet>& packets,
                                        const std::vector<std::uint8_t>& sender_drops, int port,
                                        int mtu = kDefaultMtu, int timeout_ms = 2000);

}  // namespace semeq
