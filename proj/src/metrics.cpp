#include "semeq/metrics.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <sstream>
#include <stdexcept>

namespace semeq {

namespace {

void check_same_shape(const Image& a, const Image& b) {
    if (a.width != b.width || a.height != b.height)
        throw std::invalid_argument("metrics: image shapes differ");
}

double vector_mean(const std::vector<double>& v) {
    double s = 0;
    for (double x : v) s += x;
    return v.empty() ? 0.0 : s / static_cast<double>(v.size());
}

double vector_std(const std::vector<double>& v, double mean) {
    if (v.empty()) return 0.0;
    double s = 0;
    for (double x : v) s += (x - mean) * (x - mean);
    return std::sqrt(s / static_cast<double>(v.size()));
}

}  // namespace

double mse(const Image& a, const Image& b) {
    check_same_shape(a, b);
    if (a.data.empty()) throw std::invalid_argument("metrics: empty image");
    double acc = 0;
    for (std::size_t i = 0; i < a.data.size(); ++i) {
        const double d = static_cast<double>(a.data[i]) - static_cast<double>(b.data[i]);
        acc += d * d;
    }
    return acc / static_cast<double>(a.data.size());
}

double psnr_from_mse(double mse_value) {
    constexpr double kCap = 100.0;
    if (mse_value <= 0.0) return kCap;
    return std::min(kCap, 10.0 * std::log10(255.0 * 255.0 / mse_value));
}

double psnr(const Image& a, const Image& b) { return psnr_from_mse(mse(a, b)); }

double ssim(const Image& a, const Image& b) {
    check_same_shape(a, b);
    constexpr int kWin = 11;
    constexpr double kSigma = 1.5;
    constexpr double kC1 = (0.01 * 255.0) * (0.01 * 255.0);
    constexpr double kC2 = (0.03 * 255.0) * (0.03 * 255.0);
    if (a.width < kWin || a.height < kWin)
        throw std::invalid_argument("ssim: image smaller than the 11x11 window");

    // normalized Gaussian window
    static const auto weights = [] {
        std::array<double, kWin * kWin> w{};
        double sum = 0;
        for (int dy = 0; dy < kWin; ++dy)
            for (int dx = 0; dx < kWin; ++dx) {
                const double ry = dy - (kWin - 1) / 2, rx = dx - (kWin - 1) / 2;
                const double v = std::exp(-(ry * ry + rx * rx) / (2.0 * kSigma * kSigma));
                w[static_cast<std::size_t>(dy * kWin + dx)] = v;
                sum += v;
            }
        for (auto& v : w) v /= sum;
        return w;
    }();

    double channel_acc = 0;
    for (int ch = 0; ch < 3; ++ch) {
        double acc = 0;
        int count = 0;
        for (int y = 0; y + kWin <= a.height; ++y)
            for (int x = 0; x + kWin <= a.width; ++x) {
                double mu_a = 0, mu_b = 0, aa = 0, bb = 0, ab = 0;
                for (int dy = 0; dy < kWin; ++dy)
                    for (int dx = 0; dx < kWin; ++dx) {
                        const double w = weights[static_cast<std::size_t>(dy * kWin + dx)];
                        const double va = a.at(x + dx, y + dy, ch);
                        const double vb = b.at(x + dx, y + dy, ch);
                        mu_a += w * va;
                        mu_b += w * vb;
                        aa += w * va * va;
                        bb += w * vb * vb;
                        ab += w * va * vb;
                    }
                const double var_a = aa - mu_a * mu_a;
                const double var_b = bb - mu_b * mu_b;
                const double cov = ab - mu_a * mu_b;
                const double num = (2.0 * mu_a * mu_b + kC1) * (2.0 * cov + kC2);
                const double den =
                    (mu_a * mu_a + mu_b * mu_b + kC1) * (var_a + var_b + kC2);
                acc += num / den;
                ++count;
            }
        channel_acc += acc / count;
    }
    return channel_acc / 3.0;
}

QualityReport make_quality_report(std::vector<double> psnr_per_image,
                                  std::vector<double> ssim_per_image,
                                  const std::vector<double>& lossless_psnr) {
    if (psnr_per_image.size() != ssim_per_image.size())
        throw std::invalid_argument("quality report: per-image vectors differ in length");
    if (psnr_per_image.empty())
        throw std::invalid_argument("quality report: no per-image scores");
    QualityReport r;
    r.psnr = std::move(psnr_per_image);
    r.ssim = std::move(ssim_per_image);
    r.psnr_mean = vector_mean(r.psnr);
    r.psnr_std = vector_std(r.psnr, r.psnr_mean);
    r.psnr_min = *std::min_element(r.psnr.begin(), r.psnr.end());
    r.ssim_mean = vector_mean(r.ssim);
    r.ssim_std = vector_std(r.ssim, r.ssim_mean);
    r.ssim_min = *std::min_element(r.ssim.begin(), r.ssim.end());
    if (!lossless_psnr.empty()) {
        if (lossless_psnr.size() != r.psnr.size())
            throw std::invalid_argument("quality report: baseline length mismatch");
        r.delta_psnr.resize(r.psnr.size());
        for (std::size_t i = 0; i < r.psnr.size(); ++i)
            r.delta_psnr[i] = r.psnr[i] - lossless_psnr[i];
        r.delta_psnr_mean = vector_mean(r.delta_psnr);
    }
    return r;
}

DistributionReport histogram_report(const std::vector<double>& samples, int bins) {
    if (samples.empty()) throw std::invalid_argument("histogram: empty sample set");
    if (bins < 1) throw std::invalid_argument("histogram: need at least one bin");
    for (double s : samples)
        if (!std::isfinite(s)) throw std::invalid_argument("histogram: non-finite sample");
    const auto [lo_it, hi_it] = std::minmax_element(samples.begin(), samples.end());
    const double lo = *lo_it, hi = *hi_it;

    DistributionReport r;
    if (lo == hi) {
        r.edges = {lo, hi};
        r.probs = {1.0};
        r.entropy_bits = 0.0;
        return r;
    }
    const double width = (hi - lo) / bins;
    r.edges.resize(static_cast<std::size_t>(bins) + 1);
    for (int i = 0; i <= bins; ++i) r.edges[static_cast<std::size_t>(i)] = lo + width * i;
    r.edges.back() = hi;

    std::vector<double> counts(static_cast<std::size_t>(bins), 0.0);
    for (double s : samples) {
        int idx = static_cast<int>((s - lo) / width);
        idx = std::clamp(idx, 0, bins - 1);  // rightmost bin takes the max
        counts[static_cast<std::size_t>(idx)] += 1.0;
    }
    r.probs.resize(counts.size());
    const double n = static_cast<double>(samples.size());
    double h = 0;
    for (std::size_t i = 0; i < counts.size(); ++i) {
        const double p = counts[i] / n;
        r.probs[i] = p;
        if (p > 0) h -= p * std::log2(p);
    }
    r.entropy_bits = h;
    return r;
}

double entropy(const std::vector<double>& samples, int bins) {
    return histogram_report(samples, bins).entropy_bits;
}

DistributionReport channel_stats(const std::vector<LatentTensor>& latents, int bins) {
    if (latents.empty()) throw std::invalid_argument("channel stats: no latents");
    std::vector<double> means;
    const auto& first = latents.front();
    for (const auto& lat : latents) {
        lat.validate();
        if (lat.layout != LatentLayout::channel_map)
            throw std::invalid_argument("channel stats: latents must be channel maps");
        if (lat.c != first.c || lat.h != first.h || lat.w != first.w)
            throw std::invalid_argument("channel stats: inconsistent latent shapes");
        const std::int64_t hw = static_cast<std::int64_t>(lat.h) * lat.w;
        for (int c = 0; c < lat.c; ++c) {
            double acc = 0;
            for (std::int64_t i = 0; i < hw; ++i)
                acc += static_cast<double>(lat.values[static_cast<std::size_t>(c * hw + i)]);
            means.push_back(acc / static_cast<double>(hw));
        }
    }
    return histogram_report(means, bins);
}

std::string quality_csv(const QualityReport& r) {
    std::ostringstream os;
    os.precision(10);
    os << "image,psnr_db,ssim,delta_psnr_db\n";
    for (std::size_t i = 0; i < r.psnr.size(); ++i) {
        const double d = r.delta_psnr.empty() ? 0.0 : r.delta_psnr[i];
        os << i << ',' << r.psnr[i] << ',' << r.ssim[i] << ',' << d << '\n';
    }
    return os.str();
}

std::string distribution_csv(const DistributionReport& r) {
    std::ostringstream os;
    os.precision(10);
    os << "bin,lo,hi,probability\n";
    for (std::size_t i = 0; i < r.probs.size(); ++i)
        os << i << ',' << r.edges[i] << ',' << r.edges[i + 1] << ',' << r.probs[i] << '\n';
    return os.str();
}

std::string quality_table(const QualityReport& r) {
    std::ostringstream os;
    os.precision(4);
    os << std::fixed;
    os << "images " << r.psnr.size() << "\n";
    os << "psnr_db  mean " << r.psnr_mean << "  std " << r.psnr_std << "  min " << r.psnr_min
       << "\n";
    os << "ssim     mean " << r.ssim_mean << "  std " << r.ssim_std << "  min " << r.ssim_min
       << "\n";
    if (!r.delta_psnr.empty()) os << "delta_psnr_db mean " << r.delta_psnr_mean << "\n";
    return os.str();
}

}  // namespace semeq
