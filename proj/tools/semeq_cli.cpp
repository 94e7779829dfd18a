// Experiment harness: training, single-image simulation, loss-rate sweeps,
// channel importance profiles, distribution reports, report bundling, and a
// UDP loopback demo. Every command is a pure function of (config, seeds);
// each output directory carries a manifest echoing the config hash and seeds.
//
// Exit codes: 0 success, 2 configuration/usage error, 3 runtime error.

#include "semeq/pipeline.hpp"

#include <CLI11.hpp>

#include <cinttypes>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace fs = std::filesystem;
using namespace semeq;

namespace {

std::string read_text_file(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_text_file(const fs::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << text;
    if (!out) throw std::runtime_error("write failed: " + path.string());
}

struct CommonArgs {
    std::string config_path;
    std::string out_dir;
    std::optional<std::uint64_t> seed_data, seed_train, seed_channel;
};

void add_common(CLI::App* cmd, CommonArgs& a, bool with_out = true) {
    cmd->add_option("--config", a.config_path, "configuration file (section.key = value lines)")
        ->check(CLI::ExistingFile);
    cmd->add_option("--seed-data", a.seed_data, "override seed.data");
    cmd->add_option("--seed-train", a.seed_train, "override seed.train");
    cmd->add_option("--seed-channel", a.seed_channel, "override seed.channel");
    if (with_out)
        cmd->add_option("--out", a.out_dir, "output directory (created if missing)")
            ->required();
}

SemConfig resolve_config(const CommonArgs& a) {
    SemConfig cfg;
    if (!a.config_path.empty()) cfg = load_config_file(a.config_path);
    if (a.seed_data) cfg.seed_data = *a.seed_data;
    if (a.seed_train) cfg.seed_train = *a.seed_train;
    if (a.seed_channel) cfg.seed_channel = *a.seed_channel;
    validate_config(cfg);
    return cfg;
}

fs::path prepare_out(const std::string& dir) {
    fs::path p(dir);
    fs::create_directories(p);
    return p;
}

void write_manifest(const fs::path& out, const std::string& command, const SemConfig& cfg) {
    char buf[512];
    std::snprintf(buf, sizeof buf,
                  "command = %s\n"
                  "config_hash = %s\n"
                  "seed.data = %" PRIu64 "\n"
                  "seed.train = %" PRIu64 "\n"
                  "seed.channel = %" PRIu64 "\n",
                  command.c_str(), config_hash(cfg).c_str(), cfg.seed_data, cfg.seed_train,
                  cfg.seed_channel);
    write_text_file(out / "manifest.txt", buf);
    write_text_file(out / "config.txt", canonical_config_text(cfg));
}

Pipeline make_pipeline(const SemConfig& cfg, const std::string& ckpt) {
    Pipeline p(cfg);
    if (ckpt.empty())
        p.init_params();
    else
        p.load_params(ckpt);
    return p;
}

std::string transmit_log_text(const Pipeline::TransmitLog& log) {
    char buf[512];
    std::snprintf(buf, sizeof buf,
                  "units = %d\n"
                  "packets = %d\n"
                  "packets_lost = %d\n"
                  "units_lost = %d\n"
                  "psnr_db = %.6f\n"
                  "ssim = %.8f\n",
                  log.units, log.packets, log.packets_lost, log.units_lost, log.psnr_db,
                  log.ssim_val);
    return buf;
}

// --- subcommand bodies ------------------------------------------------------

int cmd_train(const CommonArgs& a) {
    const auto cfg = resolve_config(a);
    const auto out = prepare_out(a.out_dir);
    Pipeline pipe(cfg);
    const auto stats = pipe.train();
    pipe.save_params((out / "model.ckpt").string());
    write_text_file(out / "loss.csv", loss_csv(stats));
    write_manifest(out, "train", cfg);
    if (!stats.epoch_mse.empty())
        std::printf("train: %zu epochs, mse %.6f -> %.6f\n", stats.epoch_mse.size(),
                    stats.epoch_mse.front(), stats.epoch_mse.back());
    else
        std::printf("train: 0 epochs, parameters at initialization\n");
    std::printf("wrote %s\n", (out / "model.ckpt").string().c_str());
    return 0;
}

int cmd_simulate(const CommonArgs& a, const std::string& ckpt, int index,
                 const std::string& image_path) {
    const auto cfg = resolve_config(a);
    const auto out = prepare_out(a.out_dir);
    auto pipe = make_pipeline(cfg, ckpt);

    Image img;
    std::string source;
    if (!image_path.empty()) {
        img = load_ppm_file(image_path);
        if (img.width != cfg.dataset_size || img.height != cfg.dataset_size)
            throw ConfigError("simulate: image extents must match dataset.size");
        source = image_path;
    } else {
        if (index < 0 || index >= cfg.dataset_count)
            throw ConfigError("simulate: --index out of range for dataset.count");
        img = pipe.dataset().images[static_cast<std::size_t>(index)];
        source = "dataset[" + std::to_string(index) + "]";
    }

    Rng rng(cfg.seed_channel);
    Pipeline::TransmitLog log;
    const Image recon = pipe.transmit_image(img, cfg.channel, rng, &log);

    save_ppm_file(recon, (out / "recon.ppm").string());
    write_text_file(out / "log.txt", "image = " + source + "\n" + transmit_log_text(log));
    write_manifest(out, "simulate", cfg);
    std::printf("simulate: %s -> %d/%d packets lost, psnr %.2f dB\n", source.c_str(),
                log.packets_lost, log.packets, log.psnr_db);
    return 0;
}

int cmd_sweep(const CommonArgs& a, const std::string& ckpt) {
    const auto cfg = resolve_config(a);
    const auto out = prepare_out(a.out_dir);
    auto pipe = make_pipeline(cfg, ckpt);
    const auto result = pipe.sweep();
    write_text_file(out / "sweep.csv", sweep_csv(result));
    write_text_file(out / "sweep_summary.csv", sweep_summary_csv(result));
    write_manifest(out, "sweep", cfg);
    for (std::size_t i = 0; i < result.rates.size(); ++i)
        std::printf("rate %.3f: mean psnr %.2f dB, mean ssim %.4f\n", result.rates[i],
                    result.mean_psnr[i], result.mean_ssim[i]);
    return 0;
}

int cmd_profile(const CommonArgs& a, const std::string& ckpt) {
    const auto cfg = resolve_config(a);
    const auto out = prepare_out(a.out_dir);
    auto pipe = make_pipeline(cfg, ckpt);
    const auto prof = pipe.profile_channels();
    write_text_file(out / "channels.csv", profile_csv(prof));
    write_manifest(out, "profile", cfg);
    std::printf("profile: %zu units, delta-psnr std %.4f dB\n", prof.unit.size(),
                prof.delta_std);
    return 0;
}

int cmd_dist(const CommonArgs& a, const std::string& ckpt) {
    const auto cfg = resolve_config(a);
    const auto out = prepare_out(a.out_dir);
    auto pipe = make_pipeline(cfg, ckpt);
    const auto rep = pipe.distribution_report();
    std::string note;
    if (cfg.codec == CodecKind::cnn) {
        write_text_file(out / "channel_means.csv", distribution_csv(rep.channel_means));
        char buf[128];
        std::snprintf(buf, sizeof buf, "channel_means entropy_bits = %.6f\n",
                      rep.channel_means.entropy_bits);
        note = buf;
    } else {
        for (std::size_t i = 0; i < rep.tokens.size(); ++i) {
            const std::string name = "token_hist_" + std::to_string(rep.tokens[i]) + ".csv";
            write_text_file(out / name, distribution_csv(rep.token_histograms[i]));
            char buf[128];
            std::snprintf(buf, sizeof buf, "token %d entropy_bits = %.6f\n", rep.tokens[i],
                          rep.token_histograms[i].entropy_bits);
            note += buf;
        }
    }
    write_text_file(out / "dist.txt", note);
    write_manifest(out, "dist", cfg);
    std::fputs(note.c_str(), stdout);
    return 0;
}

int cmd_udp_demo(const CommonArgs& a, const std::string& ckpt, int index, int port) {
    const auto cfg = resolve_config(a);
    const auto out = prepare_out(a.out_dir);
    auto pipe = make_pipeline(cfg, ckpt);
    if (index < 0 || index >= cfg.dataset_count)
        throw ConfigError("udp-demo: --index out of range for dataset.count");
    const Image& img = pipe.dataset().images[static_cast<std::size_t>(index)];

    Rng rng(cfg.seed_channel);
    const std::uint64_t perm_seed = rng.next();
    const auto packets = pipe.packetize(img, perm_seed);
    const auto drops = channel_drops(static_cast<int>(packets.size()), cfg.channel, rng);

    const auto exchange = udp_loopback_exchange(packets, drops, port, cfg.mtu);
    Pipeline::TransmitLog udp_log;
    const Image udp_recon = pipe.reconstruct_from_packets(exchange.received, &udp_log);
    udp_log.packets = static_cast<int>(packets.size());
    udp_log.packets_lost = static_cast<int>(packets.size() - exchange.received.size());
    udp_log.psnr_db = psnr(img, udp_recon);
    udp_log.ssim_val = ssim(img, udp_recon);

    // the same drop pattern through the in-memory channel, for comparison
    Pipeline::TransmitLog sim_log;
    (void)pipe.reconstruct_with_drops(img, drops, perm_seed, &sim_log);

    save_ppm_file(udp_recon, (out / "recon.ppm").string());
    char buf[256];
    std::snprintf(buf, sizeof buf,
                  "port = %d\nsent = %d\ndropped_at_sender = %d\ncorrupt = %d\n"
                  "simulated_psnr_db = %.6f\npsnr_gap_db = %.6f\n",
                  port, exchange.sent, exchange.dropped_at_sender, exchange.corrupt,
                  sim_log.psnr_db, std::fabs(udp_log.psnr_db - sim_log.psnr_db));
    write_text_file(out / "log.txt", transmit_log_text(udp_log) + buf);
    write_manifest(out, "udp-demo", cfg);
    std::printf("udp-demo: sent %d, dropped %d, psnr %.2f dB (gap vs simulated %.4f dB)\n",
                exchange.sent, exchange.dropped_at_sender, udp_log.psnr_db,
                std::fabs(udp_log.psnr_db - sim_log.psnr_db));
    return 0;
}

// --- report -----------------------------------------------------------------

std::map<std::string, std::string> parse_kv_file(const fs::path& path) {
    std::map<std::string, std::string> kv;
    std::istringstream in(read_text_file(path));
    std::string line;
    while (std::getline(in, line)) {
        const auto eq = line.find('=');
        if (eq == std::string::npos) continue;
        auto trim = [](std::string s) {
            const auto b = s.find_first_not_of(" \t\r");
            const auto e = s.find_last_not_of(" \t\r");
            return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
        };
        kv[trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
    }
    return kv;
}

int count_data_rows(const std::string& csv) {
    int rows = 0;
    std::istringstream in(csv);
    std::string line;
    bool first = true;
    while (std::getline(in, line)) {
        if (first) {
            first = false;
            continue;
        }
        if (!line.empty()) ++rows;
    }
    return rows;
}

double entropy_from_distribution_csv(const std::string& csv) {
    std::istringstream in(csv);
    std::string line;
    std::getline(in, line);  // header
    double h = 0;
    while (std::getline(in, line)) {
        const auto last = line.rfind(',');
        if (last == std::string::npos) continue;
        const double p = std::strtod(line.c_str() + last + 1, nullptr);
        if (p > 0) h -= p * std::log2(p);
    }
    return h;
}

int cmd_report(const std::vector<std::string>& inputs, const std::string& out_dir) {
    const auto out = prepare_out(out_dir);

    std::string hash;
    std::string hash_source;
    std::map<std::string, fs::path> files;       // name -> first source path
    std::vector<std::string> commands;

    for (const auto& dir : inputs) {
        const fs::path in(dir);
        const auto manifest = parse_kv_file(in / "manifest.txt");
        const auto it = manifest.find("config_hash");
        if (it == manifest.end())
            throw std::runtime_error("report: no config_hash in " + (in / "manifest.txt").string());
        if (hash.empty()) {
            hash = it->second;
            hash_source = dir;
        } else if (hash != it->second) {
            throw std::runtime_error("report: config hash mismatch: " + hash_source + " has " +
                                     hash + ", " + dir + " has " + it->second);
        }
        if (auto c = manifest.find("command"); c != manifest.end())
            commands.push_back(c->second);
        // spot-check: the stored config must hash to the advertised value
        if (fs::exists(in / "config.txt")) {
            const auto cfg = parse_config_text(read_text_file(in / "config.txt"));
            if (config_hash(cfg) != hash)
                throw std::runtime_error("report: config.txt in " + dir +
                                         " does not match its manifest hash");
        }
        for (const auto& entry : fs::directory_iterator(in)) {
            const auto name = entry.path().filename().string();
            if (name == "manifest.txt" || name == "config.txt") continue;
            if (entry.path().extension() != ".csv" && name != "dist.txt" && name != "log.txt")
                continue;
            files.emplace(name, entry.path());  // keeps the first occurrence
        }
    }

    const auto sweep_it = files.find("sweep.csv");
    if (sweep_it == files.end())
        throw std::runtime_error("report: no sweep.csv among the inputs");
    const auto sweep_text = read_text_file(sweep_it->second);
    if (count_data_rows(sweep_text) == 0)
        throw std::runtime_error("report: sweep.csv has no data rows");

    for (const auto& [name, src] : files)
        fs::copy_file(src, out / name, fs::copy_options::overwrite_existing);

    std::ostringstream summary;
    summary << "config_hash = " << hash << "\n";
    summary << "inputs = " << inputs.size() << "\n";
    summary << "commands =";
    for (const auto& c : commands) summary << ' ' << c;
    summary << "\n";
    summary << "sweep rows = " << count_data_rows(sweep_text) << "\n";
    if (auto it = files.find("sweep_summary.csv"); it != files.end()) {
        std::istringstream in(read_text_file(it->second));
        std::string line;
        std::getline(in, line);  // header
        while (std::getline(in, line))
            if (!line.empty()) summary << "rate " << line << "\n";
    }
    if (auto it = files.find("channels.csv"); it != files.end()) {
        std::istringstream in(read_text_file(it->second));
        std::string line;
        std::getline(in, line);
        if (std::getline(in, line) && !line.empty())
            summary << "most important unit = " << line << "\n";
    }
    for (const auto& [name, src] : files) {
        if (name == "channel_means.csv" || name.rfind("token_hist_", 0) == 0)
            summary << name << " entropy_bits = "
                    << entropy_from_distribution_csv(read_text_file(src)) << "\n";
    }
    write_text_file(out / "summary.txt", summary.str());

    std::string manifest = "command = report\nconfig_hash = " + hash + "\n";
    for (const auto& dir : inputs) manifest += "input = " + dir + "\n";
    write_text_file(out / "manifest.txt", manifest);

    std::printf("report: %zu inputs merged, config %s\n", inputs.size(), hash.c_str());
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"semantic-unit image transmission experiments"};
    app.require_subcommand(1);

    CommonArgs train_a, sim_a, sweep_a, prof_a, dist_a, udp_a;
    std::string sim_ckpt, sweep_ckpt, prof_ckpt, dist_ckpt, udp_ckpt;
    std::string sim_image;
    int sim_index = 0, udp_index = 0, udp_port = 38807;
    std::vector<std::string> report_inputs;
    std::string report_out;

    auto* train = app.add_subcommand("train", "train a codec and write a checkpoint");
    add_common(train, train_a);

    auto* simulate = app.add_subcommand("simulate", "one image through the full channel");
    add_common(simulate, sim_a);
    simulate->add_option("--ckpt", sim_ckpt, "trained checkpoint (omit for initialization)")
        ->check(CLI::ExistingFile);
    auto* idx_opt = simulate->add_option("--index", sim_index, "dataset image index");
    simulate->add_option("--image", sim_image, "external PPM image instead of a dataset one")
        ->check(CLI::ExistingFile)
        ->excludes(idx_opt);

    auto* sweep = app.add_subcommand("sweep", "quality vs loss rate over the dataset");
    add_common(sweep, sweep_a);
    sweep->add_option("--ckpt", sweep_ckpt, "trained checkpoint")->check(CLI::ExistingFile);

    auto* profile = app.add_subcommand("profile", "per-unit importance (channel codecs)");
    add_common(profile, prof_a);
    profile->add_option("--ckpt", prof_ckpt, "trained checkpoint")->check(CLI::ExistingFile);

    auto* dist = app.add_subcommand("dist", "latent distribution report");
    add_common(dist, dist_a);
    dist->add_option("--ckpt", dist_ckpt, "trained checkpoint")->check(CLI::ExistingFile);

    auto* report = app.add_subcommand("report", "merge experiment directories");
    report->add_option("--in", report_inputs, "experiment output directory (repeatable)")
        ->required()
        ->check(CLI::ExistingDirectory);
    report->add_option("--out", report_out, "bundle directory")->required();

    auto* udp = app.add_subcommand("udp-demo", "ship packets over UDP loopback");
    add_common(udp, udp_a);
    udp->add_option("--ckpt", udp_ckpt, "trained checkpoint")->check(CLI::ExistingFile);
    udp->add_option("--index", udp_index, "dataset image index");
    udp->add_option("--port", udp_port, "loopback UDP port");

    try {
        app.parse(argc, argv);
        if (train->parsed()) return cmd_train(train_a);
        if (simulate->parsed()) return cmd_simulate(sim_a, sim_ckpt, sim_index, sim_image);
        if (sweep->parsed()) return cmd_sweep(sweep_a, sweep_ckpt);
        if (profile->parsed()) return cmd_profile(prof_a, prof_ckpt);
        if (dist->parsed()) return cmd_dist(dist_a, dist_ckpt);
        if (report->parsed()) return cmd_report(report_inputs, report_out);
        if (udp->parsed()) return cmd_udp_demo(udp_a, udp_ckpt, udp_index, udp_port);
        return 0;
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    } catch (const ConfigError& e) {
        std::fprintf(stderr, "config error: %s\n", e.what());
        return 2;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 3;
    }
}
