#include "semeq/pipeline.hpp"

#include "semeq/checkpoint.hpp"
#include "semeq/optim.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <map>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <thread>

namespace semeq {

Pipeline::Pipeline(SemConfig cfg) : cfg_(std::move(cfg)) {
    validate_config(cfg_);
    DatasetSpec dspec;
    dspec.count = cfg_.dataset_count;
    dspec.size = cfg_.dataset_size;
    dspec.master_seed = cfg_.seed_data;
    ds_ = generate_synthetic(dspec);
    if (cfg_.codec == CodecKind::cnn) {
        CnnCodecConfig cc;
        if (cfg_.channels > 0) cc.layers.back().out_ch = cfg_.channels;
        cnn_ = std::make_unique<CnnModel<float>>(cc, cfg_.sem, cfg_.sem_k);
        cnn_->gamma_input = cfg_.sem_s;
    } else {
        TokenCodecConfig tc;
        if (cfg_.token_dim > 0) tc.out_dim = cfg_.token_dim;
        token_ = std::make_unique<TokenModel<float>>(tc, cfg_.dataset_size);
    }
    // fail configuration-time rather than mid-experiment
    (void)unit_count();
    (void)units_per_packet();
}

void Pipeline::init_params() {
    Rng rng(cfg_.seed_train);
    if (cnn_)
        cnn_->init(rng);
    else
        token_->init(rng);
}

std::vector<std::pair<std::string, Tensor<float>*>> Pipeline::named_params() {
    return cnn_ ? cnn_->named_params() : token_->named_params();
}

void Pipeline::save_params(const std::string& path) {
    std::vector<CheckpointEntry> entries;
    for (auto& [name, t] : named_params()) entries.push_back(entry_from(name, *t));
    save_checkpoint(path, entries);
}

void Pipeline::load_params(const std::string& path) {
    std::map<std::string, Tensor<float>*> dst;
    for (auto& [name, t] : named_params()) dst[name] = t;
    load_into(path, std::move(dst));
}

QuantizerConfig Pipeline::quantizer() const {
    QuantizerConfig q = cnn_ ? cnn_->quantizer() : token_->quantizer();
    if (cfg_.sem_quant > 0) q.scale = cfg_.sem_quant;
    return q;
}

LatentGeometry Pipeline::latent_geometry() const {
    if (cnn_) {
        const int f = cnn_->cfg.downsample_factor();
        const int hw = cfg_.dataset_size / f;
        return LatentGeometry::channel_map(cnn_->cfg.latent_channels(), hw, hw);
    }
    return LatentGeometry::tokens(
        static_cast<int>(token_count(token_->cfg, cfg_.dataset_size)), token_->cfg.out_dim);
}

int Pipeline::unit_count() const { return semeq::unit_count(latent_geometry(), cfg_.partition); }
int Pipeline::unit_length() const { return semeq::unit_length(latent_geometry(), cfg_.partition); }

int Pipeline::units_per_packet() const {
    if (cfg_.units_per_packet > 0) return cfg_.units_per_packet;
    return auto_units_per_packet(unit_length(), cfg_.mtu);
}

double Pipeline::cbr() const {
    return cnn_ ? cbr_cnn(cnn_->cfg, cfg_.dataset_size)
                : cbr_token(token_->cfg, cfg_.dataset_size);
}

Tensor<float> Pipeline::to_input(const Image& img) const { return to_unit_tensor(img); }

Tensor<float> Pipeline::encode_tensor(const Tensor<float>& x, Tape<float>* tape) const {
    return cnn_ ? cnn_->encode(x, tape) : token_->encode(x, tape);
}

Tensor<float> Pipeline::decode_tensor(const Tensor<float>& y, Tape<float>* tape) const {
    return cnn_ ? cnn_->decode(y, tape) : token_->decode(y, tape);
}

LatentTensor Pipeline::tensor_to_latent(const Tensor<float>& enc_out) const {
    return cnn_ ? latent_from_channel_map(enc_out) : latent_from_tokens(enc_out);
}

LatentTensor Pipeline::encode_latent(const Tensor<float>& x) const {
    return tensor_to_latent(encode_tensor(x, nullptr));
}

Image Pipeline::decode_to_image(const LatentTensor& lat) const {
    return from_unit_tensor(decode_tensor(latent_to_tensor(lat), nullptr));
}

Image Pipeline::reconstruct_lossless(const Image& img) const {
    const auto lat = encode_latent(to_input(img));
    return decode_to_image(dequantize_latent(quantize_latent(lat, quantizer()), quantizer()));
}

std::vector<Packet> Pipeline::packetize(const Image& img, std::uint64_t perm_seed) const {
    const auto lat = encode_latent(to_input(img));
    const auto units = partition(quantize_latent(lat, quantizer()), cfg_.partition);
    GroupConfig g;
    g.session = 1;
    g.perm_seed = perm_seed;
    g.units_per_packet = units_per_packet();
    g.sequential = cfg_.sequential;
    return group_units(units, cfg_.partition, g);
}

Image Pipeline::reconstruct_from_packets(const std::vector<Packet>& received,
                                         TransmitLog* log) const {
    auto [units, mask] = ungroup_packets(received, unit_count());
    const auto ql = aggregate(units, mask, cfg_.partition, latent_geometry());
    const auto img = decode_to_image(dequantize_latent(ql, quantizer()));
    if (log) {
        log->units = unit_count();
        log->units_lost = mask.count_lost();
    }
    return img;
}

Image Pipeline::reconstruct_with_drops(const Image& img, const std::vector<std::uint8_t>& drops,
                                       std::uint64_t perm_seed, TransmitLog* log) const {
    const auto packets = packetize(img, perm_seed);
    const auto kept = apply_drops(packets, drops);
    auto out = reconstruct_from_packets(kept, log);
    if (log) {
        log->packets = static_cast<int>(packets.size());
        log->packets_lost = static_cast<int>(packets.size() - kept.size());
        log->psnr_db = psnr(img, out);
        log->ssim_val = ssim(img, out);
    }
    return out;
}

Image Pipeline::transmit_image(const Image& img, const ChannelModel& model, Rng& rng,
                               TransmitLog* log) const {
    const std::uint64_t perm_seed = rng.next();
    const auto packets = packetize(img, perm_seed);
    const auto drops = channel_drops(static_cast<int>(packets.size()), model, rng);
    return reconstruct_with_drops(img, drops, perm_seed, log);
}

Pipeline::TrainResult Pipeline::train() {
    Rng rng(cfg_.seed_train);
    if (cnn_)
        cnn_->init(rng);
    else
        token_->init(rng);

    auto named = named_params();
    std::vector<Tensor<float>*> params;
    params.reserve(named.size());
    // With train.sem off, the gain network keeps its neutral initialization
    // (uniform scales); everything else, including the weight-normalized
    // projection, still trains.
    for (auto& [name, t] : named)
        if (cfg_.train_sem || name.rfind("gamma.", 0) != 0) params.push_back(t);

    Adam<float> opt(cfg_.lr);
    opt.attach(params);

    const double qscale = quantizer().scale;
    std::vector<int> order(static_cast<std::size_t>(cfg_.dataset_count));
    std::iota(order.begin(), order.end(), 0);

    TrainResult result;
    for (int epoch = 0; epoch < cfg_.epochs; ++epoch) {
        rng.shuffle(order.begin(), order.end());
        double epoch_loss = 0;
        int epoch_images = 0;
        for (std::size_t start = 0; start < order.size();
             start += static_cast<std::size_t>(cfg_.batch)) {
            const std::size_t stop =
                std::min(order.size(), start + static_cast<std::size_t>(cfg_.batch));
            Tape<float> tape;
            for (auto* p : params) tape.watch(*p);
            Tensor<float> total;
            for (std::size_t k = start; k < stop; ++k) {
                const auto x = to_input(ds_.images[static_cast<std::size_t>(order[k])]);
                Tensor<float> y = encode_tensor(x, &tape);
                if (cfg_.train_quant_noise) y = quantize_train_noise(y, qscale, rng, &tape);
                const Tensor<float> xh = decode_tensor(y, &tape);
                const Tensor<float> term = mse_loss(xh, x, &tape);
                total = k == start ? term : add(total, term, &tape);
            }
            const auto batch_n = static_cast<double>(stop - start);
            const Tensor<float> loss = scalar_mul(total, 1.0 / batch_n, &tape);
            if (!std::isfinite(static_cast<double>(loss[0]))) {
                for (auto* p : params) p->node = -1;
                std::ostringstream os;
                os << "training diverged: non-finite loss at epoch " << epoch + 1 << ", batch "
                   << start / static_cast<std::size_t>(cfg_.batch) + 1 << " (lr " << cfg_.lr
                   << ")";
                throw std::runtime_error(os.str());
            }
            tape.backward(loss);
            std::vector<Tensor<float>> grads;
            grads.reserve(params.size());
            for (auto* p : params) grads.push_back(tape.grad(*p));
            opt.step(grads);
            for (auto* p : params) p->node = -1;
            epoch_loss += static_cast<double>(loss[0]) * batch_n;
            epoch_images += static_cast<int>(stop - start);
        }
        result.epoch_mse.push_back(epoch_loss / epoch_images);
    }
    return result;
}

Pipeline::SweepResult Pipeline::sweep() {
    SweepResult r;
    r.rates = cfg_.rates;
    const int images = cfg_.dataset_count;

    r.lossless_psnr.reserve(static_cast<std::size_t>(images));
    for (int i = 0; i < images; ++i)
        r.lossless_psnr.push_back(
            psnr(ds_.images[static_cast<std::size_t>(i)],
                 reconstruct_lossless(ds_.images[static_cast<std::size_t>(i)])));

    // Cells are independent: each draws its own RNG stream from
    // (seed_channel, rate index, image, trial), so they can run on any
    // thread in any order. Rows are written into preassigned slots and
    // aggregated afterwards, keeping the result identical to a serial run.
    const std::size_t per_rate = static_cast<std::size_t>(images) *
                                 static_cast<std::size_t>(cfg_.trials);
    const std::size_t total = cfg_.rates.size() * per_rate;
    r.rows.resize(total);

    auto run_cell = [&](std::size_t cell) {
        const std::size_t ri = cell / per_rate;
        const std::size_t within = cell % per_rate;
        const int img = static_cast<int>(within / static_cast<std::size_t>(cfg_.trials));
        const int trial = static_cast<int>(within % static_cast<std::size_t>(cfg_.trials));
        const double rate = cfg_.rates[ri];
        Rng rng(mix_seed(cfg_.seed_channel, ri, static_cast<std::uint64_t>(img),
                         static_cast<std::uint64_t>(trial)));
        TransmitLog log;
        (void)transmit_image(ds_.images[static_cast<std::size_t>(img)],
                             ChannelModel::iid(rate), rng, &log);
        r.rows[cell] = {rate, trial, img, log.psnr_db, log.ssim_val};
    };

    const unsigned hw = std::thread::hardware_concurrency();
    const std::size_t workers =
        std::min<std::size_t>(total, hw > 0 ? hw : 1);
    if (workers <= 1) {
        for (std::size_t cell = 0; cell < total; ++cell) run_cell(cell);
    } else {
        std::atomic<std::size_t> next{0};
        std::vector<std::thread> pool;
        pool.reserve(workers);
        for (std::size_t t = 0; t < workers; ++t)
            pool.emplace_back([&] {
                for (std::size_t cell = next.fetch_add(1); cell < total;
                     cell = next.fetch_add(1))
                    run_cell(cell);
            });
        for (auto& th : pool) th.join();
    }

    for (std::size_t ri = 0; ri < cfg_.rates.size(); ++ri) {
        double psnr_sum = 0, ssim_sum = 0, delta_sum = 0;
        for (std::size_t k = ri * per_rate; k < (ri + 1) * per_rate; ++k) {
            const auto& row = r.rows[k];
            psnr_sum += row.psnr_db;
            ssim_sum += row.ssim_val;
            delta_sum += row.psnr_db - r.lossless_psnr[static_cast<std::size_t>(row.image)];
        }
        r.mean_psnr.push_back(psnr_sum / static_cast<double>(per_rate));
        r.mean_ssim.push_back(ssim_sum / static_cast<double>(per_rate));
        r.mean_delta_psnr.push_back(delta_sum / static_cast<double>(per_rate));
    }
    return r;
}

Pipeline::ChannelProfile Pipeline::profile_channels() {
    if (!cnn_)
        throw std::invalid_argument("profile: needs a channel-map codec");
    const int n = unit_count();
    const auto geo = latent_geometry();
    std::vector<double> delta(static_cast<std::size_t>(n), 0.0);

    for (int i = 0; i < cfg_.dataset_count; ++i) {
        const auto& img = ds_.images[static_cast<std::size_t>(i)];
        const auto ql = quantize_latent(encode_latent(to_input(img)), quantizer());
        const auto units = partition(ql, cfg_.partition);
        const double base =
            psnr(img, decode_to_image(dequantize_latent(
                          aggregate(units, LossMask{std::vector<std::uint8_t>(
                                               static_cast<std::size_t>(n), 1)},
                                    cfg_.partition, geo),
                          quantizer())));
        for (int u = 0; u < n; ++u) {
            LossMask mask{std::vector<std::uint8_t>(static_cast<std::size_t>(n), 1)};
            mask.received[static_cast<std::size_t>(u)] = 0;
            const auto zeroed = aggregate(units, mask, cfg_.partition, geo);
            const double p = psnr(img, decode_to_image(dequantize_latent(zeroed, quantizer())));
            delta[static_cast<std::size_t>(u)] += p - base;
        }
    }
    for (auto& d : delta) d /= cfg_.dataset_count;

    const double mean = std::accumulate(delta.begin(), delta.end(), 0.0) / n;
    double var = 0;
    for (const double d : delta) var += (d - mean) * (d - mean);

    ChannelProfile prof;
    prof.delta_std = std::sqrt(var / n);
    prof.unit.resize(static_cast<std::size_t>(n));
    std::iota(prof.unit.begin(), prof.unit.end(), 0);
    std::sort(prof.unit.begin(), prof.unit.end(), [&](int a, int b) {
        const double da = std::abs(delta[static_cast<std::size_t>(a)]);
        const double db = std::abs(delta[static_cast<std::size_t>(b)]);
        return da != db ? da > db : a < b;
    });
    prof.delta_psnr.reserve(static_cast<std::size_t>(n));
    for (const int u : prof.unit) prof.delta_psnr.push_back(delta[static_cast<std::size_t>(u)]);
    return prof;
}

Pipeline::DistReport Pipeline::distribution_report() {
    DistReport rep;
    if (cnn_) {
        std::vector<LatentTensor> latents;
        latents.reserve(static_cast<std::size_t>(cfg_.dataset_count));
        for (const auto& img : ds_.images)
            latents.push_back(dequantize_latent(
                quantize_latent(encode_latent(to_input(img)), quantizer()), quantizer()));
        rep.channel_means = channel_stats(latents, 64);
        return rep;
    }
    // token codec: per-token histograms of quantized symbols for 4 sampled tokens
    const auto geo = latent_geometry();
    Rng rng(mix_seed(cfg_.seed_channel, 0x746f6b656eULL));  // independent pick stream
    std::vector<int> chosen;
    while (chosen.size() < 4 && static_cast<int>(chosen.size()) < geo.n) {
        const int t = static_cast<int>(rng.below(static_cast<std::uint64_t>(geo.n)));
        if (std::find(chosen.begin(), chosen.end(), t) == chosen.end()) chosen.push_back(t);
    }
    std::sort(chosen.begin(), chosen.end());
    std::vector<std::vector<double>> samples(chosen.size());
    for (const auto& img : ds_.images) {
        const auto ql = quantize_latent(encode_latent(to_input(img)), quantizer());
        for (std::size_t k = 0; k < chosen.size(); ++k)
            for (int d = 0; d < geo.d; ++d)
                samples[k].push_back(static_cast<double>(
                    ql.symbols[static_cast<std::size_t>(chosen[k] * geo.d + d)]));
    }
    rep.tokens = chosen;
    for (auto& s : samples) {
        const auto [lo, hi] = std::minmax_element(s.begin(), s.end());
        const int bins = static_cast<int>(*hi - *lo) + 1;  // one bin per symbol value
        rep.token_histograms.push_back(histogram_report(s, bins));
    }
    return rep;
}

std::string sweep_csv(const Pipeline::SweepResult& r) {
    std::ostringstream os;
    os.precision(10);
    os << "rate,trial,image,psnr_db,ssim\n";
    for (const auto& row : r.rows)
        os << row.rate << ',' << row.trial << ',' << row.image << ',' << row.psnr_db << ','
           << row.ssim_val << '\n';
    return os.str();
}

std::string sweep_summary_csv(const Pipeline::SweepResult& r) {
    std::ostringstream os;
    os.precision(10);
    os << "rate,mean_psnr_db,mean_ssim,mean_delta_psnr_db\n";
    for (std::size_t i = 0; i < r.rates.size(); ++i)
        os << r.rates[i] << ',' << r.mean_psnr[i] << ',' << r.mean_ssim[i] << ','
           << r.mean_delta_psnr[i] << '\n';
    return os.str();
}

std::string profile_csv(const Pipeline::ChannelProfile& p) {
    std::ostringstream os;
    os.precision(10);
    os << "rank,unit,delta_psnr_db\n";
    for (std::size_t i = 0; i < p.unit.size(); ++i)
        os << i << ',' << p.unit[i] << ',' << p.delta_psnr[i] << '\n';
    return os.str();
}

std::string loss_csv(const Pipeline::TrainResult& t) {
    std::ostringstream os;
    os.precision(10);
    os << "epoch,mse\n";
    for (std::size_t i = 0; i < t.epoch_mse.size(); ++i)
        os << i + 1 << ',' << t.epoch_mse[i] << '\n';
    return os.str();
}

}  // namespace semeq
