#pragma once

#include "semeq/image.hpp"
#include "semeq/latent.hpp"

#include <string>
#include <vector>

// Reconstruction-quality and symbol-distribution metrics. Everything here is
// a pure function; images are scored in their 8-bit form so two pipelines
// that agree on the wire agree on the score.

namespace semeq {

// Mean squared error over all pixels and channels.
double mse(const Image& a, const Image& b);

// 10*log10(255^2 / MSE), capped at 100 dB so identical images score finite.
double psnr(const Image& a, const Image& b);
double psnr_from_mse(double mse_value);

// Mean local SSIM: 11x11 Gaussian window (sigma 1.5), valid positions only,
// C1 = (0.01*255)^2, C2 = (0.03*255)^2, averaged over the three channels.
// Requires both extents >= 11.
double ssim(const Image& a, const Image& b);

struct QualityReport {
    std::vector<double> psnr;        // dB, one entry per image
    std::vector<double> ssim;        // one entry per image
    std::vector<double> delta_psnr;  // dB vs a lossless run; empty without one
    double psnr_mean = 0, psnr_std = 0, psnr_min = 0;
    double ssim_mean = 0, ssim_std = 0, ssim_min = 0;
    double delta_psnr_mean = 0;
};

// Aggregates per-image scores; population std. When lossless_psnr is given it
// must be the same length and delta_psnr[i] = psnr[i] - lossless_psnr[i]
// (negative when losses hurt).
QualityReport make_quality_report(std::vector<double> psnr_per_image,
                                  std::vector<double> ssim_per_image,
                                  const std::vector<double>& lossless_psnr = {});

struct DistributionReport {
    std::vector<double> edges;  // bin count + 1 ascending edges
    std::vector<double> probs;  // per-bin probability, sums to 1
    double entropy_bits = 0;
};

// Equal-width histogram over [min, max] of the samples; the rightmost bin
// includes the maximum. All-equal samples collapse to a single bin.
DistributionReport histogram_report(const std::vector<double>& samples, int bins);

// Shannon entropy (base 2) of the histogram of `samples`, 0*log 0 := 0.
double entropy(const std::vector<double>& samples, int bins);

// Pools per-channel spatial means over a set of channel-map latents and
// histograms them (64 bins over the observed range).
DistributionReport channel_stats(const std::vector<LatentTensor>& latents, int bins = 64);

// CSV renderings with fixed column orders:
//   quality:      image,psnr_db,ssim,delta_psnr_db
//   distribution: bin,lo,hi,probability
std::string quality_csv(const QualityReport& r);
std::string distribution_csv(const DistributionReport& r);
// Human-readable aggregate table.
std::string quality_table(const QualityReport& r);

}  // namespace semeq
