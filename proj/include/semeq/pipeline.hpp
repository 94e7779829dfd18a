#pragma once

#include "semeq/codec.hpp"
#include "semeq/config.hpp"
#include "semeq/dataio.hpp"
#include "semeq/metrics.hpp"
#include "semeq/transport.hpp"

#include <memory>
#include <string>
#include <utility>
#include <vector>

// One experiment instance: the synthetic dataset, the configured codec, and
// every stage from image to packets and back. Every method is a pure function
// of (config, seeds); training mutates only the owned parameters.

namespace semeq {

class Pipeline {
public:
    explicit Pipeline(SemConfig cfg);

    const SemConfig& config() const { return cfg_; }
    const Dataset& dataset() const { return ds_; }

    // parameters ------------------------------------------------------------
    void init_params();  // fresh draw from seed.train
    std::vector<std::pair<std::string, Tensor<float>*>> named_params();
    void save_params(const std::string& path);
    void load_params(const std::string& path);

    QuantizerConfig quantizer() const;
    LatentGeometry latent_geometry() const;
    int unit_count() const;
    int unit_length() const;
    int units_per_packet() const;  // config value, or the MTU-derived automatic one
    double cbr() const;

    // stages ----------------------------------------------------------------
    Tensor<float> to_input(const Image& img) const;
    LatentTensor encode_latent(const Tensor<float>& x) const;  // post-equalization
    Image decode_to_image(const LatentTensor& lat) const;
    // quantize -> dequantize -> decode with no transport in the loop
    Image reconstruct_lossless(const Image& img) const;

    struct TransmitLog {
        int units = 0, packets = 0, packets_lost = 0, units_lost = 0;
        double psnr_db = 0, ssim_val = 0;  // vs the original image
    };

    // image -> semantic units -> interleaved packets (session fixed to 1)
    std::vector<Packet> packetize(const Image& img, std::uint64_t perm_seed) const;
    Image reconstruct_from_packets(const std::vector<Packet>& received,
                                   TransmitLog* log = nullptr) const;
    // packetize, drop with the given per-packet mask, reconstruct
    Image reconstruct_with_drops(const Image& img, const std::vector<std::uint8_t>& drops,
                                 std::uint64_t perm_seed, TransmitLog* log = nullptr) const;
    // full channel round trip; consumes one perm seed then the drop pattern
    Image transmit_image(const Image& img, const ChannelModel& model, Rng& rng,
                         TransmitLog* log = nullptr) const;

    // training ----------------------------------------------------------------
    struct TrainResult {
        std::vector<double> epoch_mse;  // mean per-image training loss per epoch
    };
    // encode -> equalize -> quantization noise -> decode -> MSE -> Adam, per
    // batch, images reshuffled every epoch; throws std::runtime_error with
    // diagnostics if the loss stops being finite.
    TrainResult train();

    // experiments -------------------------------------------------------------
    struct SweepRow {
        double rate = 0;
        int trial = 0, image = 0;
        double psnr_db = 0, ssim_val = 0;
    };
    struct SweepResult {
        std::vector<double> rates;
        std::vector<SweepRow> rows;              // |rates| * trials * images rows
        std::vector<double> lossless_psnr;       // per image
        std::vector<double> mean_psnr, mean_ssim, mean_delta_psnr;  // per rate
    };
    // per (rate, image, trial) full round trip over an iid channel at that
    // rate, channel stream seeded by (seed.channel, rate index, image, trial)
    SweepResult sweep();

    struct ChannelProfile {
        std::vector<int> unit;           // unit (channel group) ids, most important first
        std::vector<double> delta_psnr;  // aligned with `unit`: zeroed-unit PSNR - lossless
        double delta_std = 0;            // std of delta over units
    };
    ChannelProfile profile_channels();  // channel-map codecs only

    struct DistReport {
        DistributionReport channel_means;                 // channel-map codecs
        std::vector<int> tokens;                          // token codecs: sampled tokens
        std::vector<DistributionReport> token_histograms; // aligned with `tokens`
    };
    DistReport distribution_report();

private:
    Tensor<float> encode_tensor(const Tensor<float>& x, Tape<float>* tape) const;
    Tensor<float> decode_tensor(const Tensor<float>& y, Tape<float>* tape) const;
    LatentTensor tensor_to_latent(const Tensor<float>& enc_out) const;

    SemConfig cfg_;
    Dataset ds_;
    std::unique_ptr<CnnModel<float>> cnn_;
    std::unique_ptr<TokenModel<float>> token_;
};

// CSV renderings (documented column orders)
//   sweep rows:    rate,trial,image,psnr_db,ssim
//   sweep summary: rate,mean_psnr_db,mean_ssim,mean_delta_psnr_db
//   profile:       rank,unit,delta_psnr_db
//   loss curve:    epoch,mse
std::string sweep_csv(const Pipeline::SweepResult& r);
std::string sweep_summary_csv(const Pipeline::SweepResult& r);
std::string profile_csv(const Pipeline::ChannelProfile& p);
std::string loss_csv(const Pipeline::TrainResult& t);

}  // namespace semeq
