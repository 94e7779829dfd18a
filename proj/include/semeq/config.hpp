#pragma once

#include "semeq/partition.hpp"
#include "semeq/sem.hpp"
#include "semeq/transport.hpp"

#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

// Experiment configuration: a flat `section.key = value` text format, a
// canonical serialization, and a stable 64-bit hash echoed into every output
// so results can be traced back to the exact settings that produced them.

namespace semeq {

class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

enum class CodecKind { cnn, token };

const char* codec_kind_name(CodecKind k);
CodecKind parse_codec_kind(const std::string& s);

struct SemConfig {
    // dataset
    int dataset_count = 24;
    int dataset_size = 64;

    // codec + equalization
    CodecKind codec = CodecKind::cnn;
    int channels = 0;   // latent channel count for the cnn codec; 0 = default
    int token_dim = 0;  // per-token payload width for the token codec; 0 = default
    SemVariant sem = SemVariant::none;
    int sem_k = 4;            // ring-broadcast neighbor count
    double sem_s = 1.0;       // channel-state scalar fed to the gain network
    double sem_quant = 0.0;   // quantizer scale; 0 derives it from the variant

    // partitioning (channel-wise by default)
    PartitionSpec partition{PartitionStrategy::channel_of_map, 1};

    // transport
    int units_per_packet = 0;  // 0 = largest count that fits the MTU
    int mtu = 1400;
    bool sequential = false;   // true disables interleaving (diagnostics only)

    // channel model used by simulate / udp-demo (sweeps use iid at each rate)
    ChannelModel channel = ChannelModel::iid(0.1);

    // training
    int epochs = 30;
    int batch = 4;
    double lr = 1e-3;
    bool train_quant_noise = true;  // add quantization noise during training
    // Update the gain network jointly with the codec. Off by default: the
    // reconstruction loss otherwise drives the learned scales away from
    // uniform, specializing channels and undoing the equalization the scale
    // stage exists to provide. The weight-normalized projection itself
    // always trains with the encoder.
    bool train_sem = false;

    // evaluation
    std::vector<double> rates = {0.0, 0.1, 0.2, 0.3, 0.4};
    int trials = 20;

    // master seeds
    std::uint64_t seed_data = 1;
    std::uint64_t seed_train = 2;
    std::uint64_t seed_channel = 3;

    bool operator==(const SemConfig&) const = default;
};

// Applies one `section.key = value` assignment. Unknown keys and malformed
// values raise ConfigError.
void apply_config_value(SemConfig& cfg, const std::string& key, const std::string& value);

// Parses the line-oriented format: '#' starts a comment, blank lines are
// skipped, everything else must be `section.key = value`.
SemConfig parse_config_text(const std::string& text);
SemConfig load_config_file(const std::string& path);

// Range/consistency checks beyond per-field parsing.
void validate_config(const SemConfig& cfg);

// Every field in a fixed order; parse_config_text(canonical_config_text(c))
// reproduces c exactly.
std::string canonical_config_text(const SemConfig& cfg);

// FNV-1a 64-bit over the canonical text, rendered as 16 hex digits.
std::uint64_t fnv1a64(std::string_view bytes);
std::string config_hash(const SemConfig& cfg);

}  // namespace semeq
