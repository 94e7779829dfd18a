#include "semeq/config.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace semeq {

namespace {

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

double parse_double(const std::string& key, const std::string& v) {
    try {
        std::size_t used = 0;
        const double x = std::stod(v, &used);
        if (used != v.size() || !std::isfinite(x))
            throw std::invalid_argument("trailing characters");
        return x;
    } catch (const std::exception&) {
        throw ConfigError("config: bad number for " + key + ": '" + v + "'");
    }
}

long long parse_int(const std::string& key, const std::string& v) {
    try {
        std::size_t used = 0;
        const long long x = std::stoll(v, &used);
        if (used != v.size()) throw std::invalid_argument("trailing characters");
        return x;
    } catch (const std::exception&) {
        throw ConfigError("config: bad integer for " + key + ": '" + v + "'");
    }
}

std::uint64_t parse_seed(const std::string& key, const std::string& v) {
    try {
        std::size_t used = 0;
        const unsigned long long x = std::stoull(v, &used, 0);
        if (used != v.size()) throw std::invalid_argument("trailing characters");
        return x;
    } catch (const std::exception&) {
        throw ConfigError("config: bad seed for " + key + ": '" + v + "'");
    }
}

bool parse_bool(const std::string& key, const std::string& v) {
    if (v == "1" || v == "true" || v == "on") return true;
    if (v == "0" || v == "false" || v == "off") return false;
    throw ConfigError("config: bad boolean for " + key + ": '" + v + "'");
}

std::vector<double> parse_rate_list(const std::string& key, const std::string& v) {
    std::vector<double> out;
    std::string item;
    std::istringstream is(v);
    while (std::getline(is, item, ',')) {
        item = trim(item);
        if (item.empty()) throw ConfigError("config: empty entry in " + key);
        out.push_back(parse_double(key, item));
    }
    if (out.empty()) throw ConfigError("config: empty list for " + key);
    return out;
}

std::string fmt_double(double x) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", x);
    return buf;
}

}  // namespace

const char* codec_kind_name(CodecKind k) {
    return k == CodecKind::cnn ? "cnn" : "token";
}

CodecKind parse_codec_kind(const std::string& s) {
    if (s == "cnn") return CodecKind::cnn;
    if (s == "token") return CodecKind::token;
    throw ConfigError("config: unknown codec kind '" + s + "'");
}

void apply_config_value(SemConfig& cfg, const std::string& key, const std::string& value) {
    if (key == "dataset.count")
        cfg.dataset_count = static_cast<int>(parse_int(key, value));
    else if (key == "dataset.size")
        cfg.dataset_size = static_cast<int>(parse_int(key, value));
    else if (key == "codec.kind")
        cfg.codec = parse_codec_kind(value);
    else if (key == "codec.channels")
        cfg.channels = static_cast<int>(parse_int(key, value));
    else if (key == "codec.token_dim")
        cfg.token_dim = static_cast<int>(parse_int(key, value));
    else if (key == "codec.sem") {
        try {
            cfg.sem = parse_sem_variant(value);
        } catch (const std::invalid_argument& e) {
            throw ConfigError(std::string("config: ") + e.what());
        }
    } else if (key == "codec.broadcast_k")
        cfg.sem_k = static_cast<int>(parse_int(key, value));
    else if (key == "codec.gamma_s")
        cfg.sem_s = parse_double(key, value);
    else if (key == "codec.quant_scale")
        cfg.sem_quant = parse_double(key, value);
    else if (key == "partition.strategy") {
        try {
            cfg.partition.strategy = parse_partition_strategy(value);
        } catch (const std::invalid_argument& e) {
            throw ConfigError(std::string("config: ") + e.what());
        }
    } else if (key == "partition.group")
        cfg.partition.group = static_cast<int>(parse_int(key, value));
    else if (key == "transport.units_per_packet")
        cfg.units_per_packet = static_cast<int>(parse_int(key, value));
    else if (key == "transport.mtu")
        cfg.mtu = static_cast<int>(parse_int(key, value));
    else if (key == "transport.sequential")
        cfg.sequential = parse_bool(key, value);
    else if (key == "channel.kind") {
        if (value == "iid")
            cfg.channel.kind = ChannelModel::Kind::iid;
        else if (value == "gilbert_elliott")
            cfg.channel.kind = ChannelModel::Kind::gilbert_elliott;
        else
            throw ConfigError("config: unknown channel kind '" + value + "'");
    } else if (key == "channel.p")
        cfg.channel.p = parse_double(key, value);
    else if (key == "channel.p_gb")
        cfg.channel.p_gb = parse_double(key, value);
    else if (key == "channel.p_bg")
        cfg.channel.p_bg = parse_double(key, value);
    else if (key == "channel.loss_good")
        cfg.channel.loss_good = parse_double(key, value);
    else if (key == "channel.loss_bad")
        cfg.channel.loss_bad = parse_double(key, value);
    else if (key == "train.epochs")
        cfg.epochs = static_cast<int>(parse_int(key, value));
    else if (key == "train.batch")
        cfg.batch = static_cast<int>(parse_int(key, value));
    else if (key == "train.lr")
        cfg.lr = parse_double(key, value);
    else if (key == "train.quant_noise")
        cfg.train_quant_noise = parse_bool(key, value);
    else if (key == "train.sem")
        cfg.train_sem = parse_bool(key, value);
    else if (key == "eval.rates")
        cfg.rates = parse_rate_list(key, value);
    else if (key == "eval.trials")
        cfg.trials = static_cast<int>(parse_int(key, value));
    else if (key == "seed.data")
        cfg.seed_data = parse_seed(key, value);
    else if (key == "seed.train")
        cfg.seed_train = parse_seed(key, value);
    else if (key == "seed.channel")
        cfg.seed_channel = parse_seed(key, value);
    else
        throw ConfigError("config: unknown key '" + key + "'");
}

SemConfig parse_config_text(const std::string& text) {
    SemConfig cfg;
    std::istringstream is(text);
    std::string line;
    int line_no = 0;
    while (std::getline(is, line)) {
        ++line_no;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError("config: line " + std::to_string(line_no) +
                              " is not 'section.key = value'");
        const std::string key = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));
        if (key.find('.') == std::string::npos)
            throw ConfigError("config: key '" + key + "' has no section prefix (line " +
                              std::to_string(line_no) + ")");
        if (value.empty())
            throw ConfigError("config: empty value for '" + key + "' (line " +
                              std::to_string(line_no) + ")");
        apply_config_value(cfg, key, value);
    }
    validate_config(cfg);
    return cfg;
}

SemConfig load_config_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError("config: cannot open '" + path + "'");
    std::ostringstream ss;
    ss << in.rdbuf();
    return parse_config_text(ss.str());
}

void validate_config(const SemConfig& cfg) {
    const auto fail = [](const std::string& msg) { throw ConfigError("config: " + msg); };
    if (cfg.dataset_count < 1) fail("dataset.count must be at least 1");
    if (cfg.dataset_size < 8 || cfg.dataset_size % 8 != 0)
        fail("dataset.size must be a positive multiple of 8");
    if (cfg.channels < 0) fail("codec.channels must be non-negative");
    if (cfg.codec == CodecKind::token && cfg.channels != 0)
        fail("codec.channels applies to the cnn codec only");
    if (cfg.token_dim < 0) fail("codec.token_dim must be non-negative");
    if (cfg.codec == CodecKind::cnn && cfg.token_dim != 0)
        fail("codec.token_dim applies to the token codec only");
    if (cfg.sem_k < 1) fail("codec.broadcast_k must be at least 1");
    if (cfg.sem_quant < 0) fail("codec.quant_scale must be non-negative");
    if (cfg.partition.group < 1) fail("partition.group must be at least 1");
    if (cfg.units_per_packet < 0) fail("transport.units_per_packet must be non-negative");
    if (cfg.mtu < static_cast<int>(kPacketOverhead) + 3)
        fail("transport.mtu leaves no room for a unit");
    try {
        cfg.channel.validate();
    } catch (const std::invalid_argument& e) {
        fail(e.what());
    }
    if (cfg.epochs < 0) fail("train.epochs must be non-negative");
    if (cfg.batch < 1) fail("train.batch must be at least 1");
    if (!(cfg.lr > 0)) fail("train.lr must be positive");
    if (cfg.trials < 1) fail("eval.trials must be at least 1");
    if (cfg.rates.empty()) fail("eval.rates must not be empty");
    for (const double r : cfg.rates)
        if (r < 0.0 || r > 1.0) fail("eval.rates entries must lie in [0, 1]");
    // strategy/codec compatibility mirrors the partition layout rules
    const bool map_strategy = cfg.partition.strategy == PartitionStrategy::channel_of_map ||
                              cfg.partition.strategy == PartitionStrategy::spatial_block;
    if (map_strategy != (cfg.codec == CodecKind::cnn))
        fail(std::string("partition.strategy ") +
             partition_strategy_name(cfg.partition.strategy) + " does not fit codec.kind " +
             codec_kind_name(cfg.codec));
    if (cfg.codec == CodecKind::token && cfg.sem != SemVariant::none)
        fail("codec.sem applies to the cnn codec only");
}

std::string canonical_config_text(const SemConfig& cfg) {
    std::ostringstream os;
    os << "dataset.count = " << cfg.dataset_count << "\n";
    os << "dataset.size = " << cfg.dataset_size << "\n";
    os << "codec.kind = " << codec_kind_name(cfg.codec) << "\n";
    os << "codec.channels = " << cfg.channels << "\n";
    os << "codec.token_dim = " << cfg.token_dim << "\n";
    os << "codec.sem = " << sem_variant_name(cfg.sem) << "\n";
    os << "codec.broadcast_k = " << cfg.sem_k << "\n";
    os << "codec.gamma_s = " << fmt_double(cfg.sem_s) << "\n";
    os << "codec.quant_scale = " << fmt_double(cfg.sem_quant) << "\n";
    os << "partition.strategy = " << partition_strategy_name(cfg.partition.strategy) << "\n";
    os << "partition.group = " << cfg.partition.group << "\n";
    os << "transport.units_per_packet = " << cfg.units_per_packet << "\n";
    os << "transport.mtu = " << cfg.mtu << "\n";
    os << "transport.sequential = " << (cfg.sequential ? 1 : 0) << "\n";
    os << "channel.kind = "
       << (cfg.channel.kind == ChannelModel::Kind::iid ? "iid" : "gilbert_elliott") << "\n";
    os << "channel.p = " << fmt_double(cfg.channel.p) << "\n";
    os << "channel.p_gb = " << fmt_double(cfg.channel.p_gb) << "\n";
    os << "channel.p_bg = " << fmt_double(cfg.channel.p_bg) << "\n";
    os << "channel.loss_good = " << fmt_double(cfg.channel.loss_good) << "\n";
    os << "channel.loss_bad = " << fmt_double(cfg.channel.loss_bad) << "\n";
    os << "train.epochs = " << cfg.epochs << "\n";
    os << "train.batch = " << cfg.batch << "\n";
    os << "train.lr = " << fmt_double(cfg.lr) << "\n";
    os << "train.quant_noise = " << (cfg.train_quant_noise ? 1 : 0) << "\n";
    os << "train.sem = " << (cfg.train_sem ? 1 : 0) << "\n";
    os << "eval.rates = ";
    for (std::size_t i = 0; i < cfg.rates.size(); ++i)
        os << (i ? "," : "") << fmt_double(cfg.rates[i]);
    os << "\n";
    os << "eval.trials = " << cfg.trials << "\n";
    os << "seed.data = " << cfg.seed_data << "\n";
    os << "seed.train = " << cfg.seed_train << "\n";
    os << "seed.channel = " << cfg.seed_channel << "\n";
    return os.str();
}

std::uint64_t fnv1a64(std::string_view bytes) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (const char c : bytes) {
        h ^= static_cast<std::uint8_t>(c);
        h *= 0x100000001b3ULL;
    }
    return h;
}

std::string config_hash(const SemConfig& cfg) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx",
                  static_cast<unsigned long long>(fnv1a64(canonical_config_text(cfg))));
    return buf;
}

}  // namespace semeq
