#include "semeq/transport.hpp"

#include <algorithm>
#include <array>
#include <atomic>
#include <chrono>
#include <cstring>
#include <numeric>
#include <thread>

#include <arpa/inet.h>
#include <netinet/in.h>
#include <sys/socket.h>
#include <unistd.h>

namespace semeq {

namespace {

std::array<std::uint32_t, 256> make_crc_table() {
    std::array<std::uint32_t, 256> table{};
    for (std::uint32_t i = 0; i < 256; ++i) {
        std::uint32_t c = i;
        for (int k = 0; k < 8; ++k) c = (c & 1) ? 0xEDB88320u ^ (c >> 1) : c >> 1;
        table[i] = c;
    }
    return table;
}

void put_u16(std::vector<std::uint8_t>& out, std::uint16_t v) {
    out.push_back(static_cast<std::uint8_t>(v & 0xff));
    out.push_back(static_cast<std::uint8_t>(v >> 8));
}

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>((v >> (8 * i)) & 0xff));
}

void put_u64(std::vector<std::uint8_t>& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>((v >> (8 * i)) & 0xff));
}

struct Reader {
    const std::uint8_t* p;
    std::size_t n, pos = 0;

    std::uint8_t u8() {
        if (pos + 1 > n) throw FramingError("packet: truncated");
        return p[pos++];
    }
    std::uint16_t u16() {
        if (pos + 2 > n) throw FramingError("packet: truncated");
        const std::uint16_t v = static_cast<std::uint16_t>(p[pos] | (p[pos + 1] << 8));
        pos += 2;
        return v;
    }
    std::uint32_t u32() {
        if (pos + 4 > n) throw FramingError("packet: truncated");
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(p[pos + i]) << (8 * i);
        pos += 4;
        return v;
    }
    std::uint64_t u64() {
        if (pos + 8 > n) throw FramingError("packet: truncated");
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(p[pos + i]) << (8 * i);
        pos += 8;
        return v;
    }
};

}  // namespace

std::uint32_t crc32_ieee(const std::uint8_t* data, std::size_t n) {
    static const auto table = make_crc_table();
    std::uint32_t crc = 0xFFFFFFFFu;
    for (std::size_t i = 0; i < n; ++i) crc = table[(crc ^ data[i]) & 0xff] ^ (crc >> 8);
    return crc ^ 0xFFFFFFFFu;
}

std::vector<std::uint8_t> frame(const Packet& p) {
    if (p.payload.size() != p.unit_ids.size() * static_cast<std::size_t>(p.unit_len))
        throw FramingError("packet: payload length must be unit count times unit length");
    if (p.unit_ids.size() > 0xFFFF) throw FramingError("packet: too many units");
    std::vector<std::uint8_t> out;
    out.reserve(kPacketOverhead + p.unit_ids.size() * (2 + p.unit_len));
    out.insert(out.end(), {'S', 'E', 'M', 'U'});
    out.push_back(kPacketVersion);
    out.push_back(p.flags);
    put_u32(out, p.session);
    put_u16(out, p.index);
    put_u16(out, p.total);
    put_u64(out, p.perm_seed);
    out.push_back(p.strategy);
    out.push_back(p.group_size);
    put_u16(out, p.unit_len);
    put_u16(out, static_cast<std::uint16_t>(p.unit_ids.size()));
    for (const auto id : p.unit_ids) put_u16(out, id);
    for (const auto s : p.payload) out.push_back(static_cast<std::uint8_t>(s));
    const std::uint32_t crc = crc32_ieee(out.data() + 4, out.size() - 4);
    put_u32(out, crc);
    return out;
}

Packet deframe(const std::vector<std::uint8_t>& bytes) {
    if (bytes.size() < kPacketOverhead) throw FramingError("packet: shorter than a header");
    if (std::memcmp(bytes.data(), "SEMU", 4) != 0) throw FramingError("packet: bad magic");
    const std::uint32_t want = crc32_ieee(bytes.data() + 4, bytes.size() - 8);
    Reader r{bytes.data() + bytes.size() - 4, 4};
    const std::uint32_t got = r.u32();
    if (want != got) throw FramingError("packet: checksum mismatch");

    Reader in{bytes.data() + 4, bytes.size() - 8};
    Packet p;
    const std::uint8_t version = in.u8();
    if (version != kPacketVersion) throw FramingError("packet: unsupported version");
    p.flags = in.u8();
    p.session = in.u32();
    p.index = in.u16();
    p.total = in.u16();
    p.perm_seed = in.u64();
    p.strategy = in.u8();
    p.group_size = in.u8();
    p.unit_len = in.u16();
    const std::uint16_t count = in.u16();
    p.unit_ids.resize(count);
    for (auto& id : p.unit_ids) id = in.u16();
    const std::size_t payload_len = static_cast<std::size_t>(count) * p.unit_len;
    if (in.n - in.pos != payload_len) throw FramingError("packet: length mismatch");
    p.payload.resize(payload_len);
    for (auto& s : p.payload) s = static_cast<std::int8_t>(in.u8());
    return p;
}

std::optional<Packet> try_deframe(const std::vector<std::uint8_t>& bytes) {
    try {
        return deframe(bytes);
    } catch (const FramingError&) {
        return std::nullopt;
    }
}

// ---------------------------------------------------------------------------

int auto_units_per_packet(int unit_len, int mtu) {
    if (unit_len < 0 || mtu < 1) throw FramingError("grouping: bad unit length or MTU");
    const int per_unit = unit_len + 2;  // id + payload
    const int room = mtu - static_cast<int>(kPacketOverhead);
    if (room < per_unit)
        throw FramingError("grouping: one unit of length " + std::to_string(unit_len) +
                           " cannot fit in MTU " + std::to_string(mtu));
    return room / per_unit;
}

std::vector<Packet> group_units(const std::vector<SemanticUnit>& units, const PartitionSpec& spec,
                                const GroupConfig& cfg) {
    if (units.empty()) throw std::invalid_argument("grouping: empty unit list");
    if (cfg.units_per_packet < 1)
        throw std::invalid_argument("grouping: units_per_packet must be at least 1");
    const std::size_t len = units.front().payload.size();
    for (const auto& u : units)
        if (u.payload.size() != len)
            throw std::invalid_argument("grouping: unit payload lengths differ");
    if (units.size() > 0xFFFF) throw std::invalid_argument("grouping: too many units");
    if (len > 0xFFFF) throw std::invalid_argument("grouping: unit payload too long");

    std::vector<int> order(units.size());
    std::iota(order.begin(), order.end(), 0);
    if (!cfg.sequential) {
        Rng rng(cfg.perm_seed);
        rng.shuffle(order.begin(), order.end());
    }

    const int u_per = cfg.units_per_packet;
    const int total = static_cast<int>((units.size() + u_per - 1) / static_cast<std::size_t>(u_per));
    if (total > 0xFFFF) throw std::invalid_argument("grouping: too many packets");

    std::vector<Packet> packets;
    packets.reserve(static_cast<std::size_t>(total));
    for (int pi = 0; pi < total; ++pi) {
        Packet p;
        p.flags = cfg.sequential ? kFlagSequential : 0;
        p.session = cfg.session;
        p.index = static_cast<std::uint16_t>(pi);
        p.total = static_cast<std::uint16_t>(total);
        p.perm_seed = cfg.perm_seed;
        p.strategy = static_cast<std::uint8_t>(spec.strategy);
        p.group_size = static_cast<std::uint8_t>(spec.group);
        p.unit_len = static_cast<std::uint16_t>(len);
        const std::size_t lo = static_cast<std::size_t>(pi) * u_per;
        const std::size_t hi = std::min(units.size(), lo + static_cast<std::size_t>(u_per));
        for (std::size_t k = lo; k < hi; ++k) {
            const auto& unit = units[static_cast<std::size_t>(order[k])];
            p.unit_ids.push_back(static_cast<std::uint16_t>(unit.index));
            p.payload.insert(p.payload.end(), unit.payload.begin(), unit.payload.end());
        }
        packets.push_back(std::move(p));
    }
    return packets;
}

std::pair<std::vector<SemanticUnit>, LossMask> ungroup_packets(const std::vector<Packet>& received,
                                                               int total_units) {
    if (total_units < 1) throw std::invalid_argument("ungroup: total_units must be positive");
    LossMask mask;
    mask.received.assign(static_cast<std::size_t>(total_units), 0);
    std::vector<SemanticUnit> units(static_cast<std::size_t>(total_units));
    std::size_t len = 0;
    if (!received.empty()) {
        len = received.front().unit_len;
        for (const auto& p : received) {
            if (p.session != received.front().session ||
                p.perm_seed != received.front().perm_seed ||
                p.total != received.front().total ||
                p.strategy != received.front().strategy ||
                p.group_size != received.front().group_size || p.unit_len != len)
                throw FramingError("ungroup: packets from mixed sessions");
        }
    }
    for (int i = 0; i < total_units; ++i) {
        units[static_cast<std::size_t>(i)].index = i;
        units[static_cast<std::size_t>(i)].payload.assign(len, 0);
    }
    for (const auto& p : received) {
        for (std::size_t k = 0; k < p.unit_ids.size(); ++k) {
            const int id = p.unit_ids[k];
            if (id >= total_units) throw FramingError("ungroup: unit id out of range");
            auto& unit = units[static_cast<std::size_t>(id)];
            unit.payload.assign(p.payload.begin() + static_cast<std::ptrdiff_t>(k * len),
                                p.payload.begin() + static_cast<std::ptrdiff_t>((k + 1) * len));
            mask.received[static_cast<std::size_t>(id)] = 1;
        }
    }
    return {std::move(units), std::move(mask)};
}

// ---------------------------------------------------------------------------

void ChannelModel::validate() const {
    const auto ok = [](double v) { return v >= 0.0 && v <= 1.0; };
    if (kind == Kind::iid) {
        if (!ok(p)) throw std::invalid_argument("channel: iid probability outside [0,1]");
    } else {
        if (!ok(p_gb) || !ok(p_bg) || !ok(loss_good) || !ok(loss_bad))
            throw std::invalid_argument("channel: burst probabilities outside [0,1]");
    }
}

std::vector<std::uint8_t> channel_drops(int n_packets, const ChannelModel& model, Rng& rng) {
    model.validate();
    if (n_packets < 0) throw std::invalid_argument("channel: negative packet count");
    std::vector<std::uint8_t> drops(static_cast<std::size_t>(n_packets), 0);
    if (model.kind == ChannelModel::Kind::iid) {
        for (auto& d : drops) d = rng.bernoulli(model.p) ? 1 : 0;
    } else {
        bool bad = false;  // chain starts in the good state
        for (auto& d : drops) {
            d = rng.bernoulli(bad ? model.loss_bad : model.loss_good) ? 1 : 0;
            bad = bad ? !rng.bernoulli(model.p_bg) : rng.bernoulli(model.p_gb);
        }
    }
    return drops;
}

std::vector<Packet> apply_drops(const std::vector<Packet>& packets,
                                const std::vector<std::uint8_t>& drops) {
    if (drops.size() != packets.size())
        throw std::invalid_argument("channel: drop mask must cover every packet");
    std::vector<Packet> out;
    out.reserve(packets.size());
    for (std::size_t i = 0; i < packets.size(); ++i)
        if (!drops[i]) out.push_back(packets[i]);
    return out;
}

std::vector<Packet> transmit(const std::vector<Packet>& packets, const ChannelModel& model,
                             Rng& rng) {
    return apply_drops(packets, channel_drops(static_cast<int>(packets.size()), model, rng));
}

// ---------------------------------------------------------------------------

namespace {

struct Socket {
    int fd = -1;
    explicit Socket(int f) : fd(f) {}
    ~Socket() {
        if (fd >= 0) ::close(fd);
    }
    Socket(const Socket&) = delete;
    Socket& operator=(const Socket&) = delete;
};

}  // namespace

UdpExchangeResult udp_loopback_exchange(const std::vector<Packet>& packets,
                                        const std::vector<std::uint8_t>& sender_drops, int port,
                                        int mtu, int timeout_ms) {
    if (sender_drops.size() != packets.size())
        throw std::invalid_argument("udp: drop mask must cover every packet");

    // frame everything up front so MTU violations surface before any I/O
    std::vector<std::vector<std::uint8_t>> frames;
    frames.reserve(packets.size());
    int to_send = 0;
    for (std::size_t i = 0; i < packets.size(); ++i) {
        frames.push_back(frame(packets[i]));
        if (frames.back().size() > static_cast<std::size_t>(mtu))
            throw FramingError("udp: frame of " + std::to_string(frames.back().size()) +
                               " bytes exceeds MTU " + std::to_string(mtu));
        if (!sender_drops[i]) ++to_send;
    }

    Socket rx(::socket(AF_INET, SOCK_DGRAM, 0));
    if (rx.fd < 0) throw std::runtime_error("udp: cannot create receiver socket");
    sockaddr_in addr{};
    addr.sin_family = AF_INET;
    addr.sin_addr.s_addr = htonl(INADDR_LOOPBACK);
    addr.sin_port = htons(static_cast<std::uint16_t>(port));
    if (::bind(rx.fd, reinterpret_cast<sockaddr*>(&addr), sizeof(addr)) != 0)
        throw std::runtime_error("udp: cannot bind 127.0.0.1:" + std::to_string(port));
    timeval tv{};
    tv.tv_sec = timeout_ms / 1000;
    tv.tv_usec = (timeout_ms % 1000) * 1000;
    ::setsockopt(rx.fd, SOL_SOCKET, SO_RCVTIMEO, &tv, sizeof(tv));

    UdpExchangeResult result;
    std::thread receiver([&] {
        std::vector<std::uint8_t> buf(static_cast<std::size_t>(mtu) + 64);
        int got = 0;
        while (got < to_send) {
            const ssize_t n = ::recvfrom(rx.fd, buf.data(), buf.size(), 0, nullptr, nullptr);
            if (n < 0) break;  // timeout
            ++got;
            std::vector<std::uint8_t> bytes(buf.begin(), buf.begin() + n);
            if (auto p = try_deframe(bytes))
                result.received.push_back(std::move(*p));
            else
                ++result.corrupt;
        }
    });

    {
        Socket tx(::socket(AF_INET, SOCK_DGRAM, 0));
        if (tx.fd >= 0) {
            for (std::size_t i = 0; i < frames.size(); ++i) {
                if (sender_drops[i]) {
                    ++result.dropped_at_sender;
                    continue;
                }
                ::sendto(tx.fd, frames[i].data(), frames[i].size(), 0,
                         reinterpret_cast<sockaddr*>(&addr), sizeof(addr));
                ++result.sent;
                // loopback has no congestion control; pace lightly so the
                // receiver's buffer never overflows on large bursts
                if (result.sent % 64 == 0)
                    std::this_thread::sleep_for(std::chrono::microseconds(200));
            }
        }
    }
    receiver.join();

    std::sort(result.received.begin(), result.received.end(),
              [](const Packet& a, const Packet& b) { return a.index < b.index; });
    return result;
}

}  // namespace semeq
