#pragma once

#include "rwm/detector.hpp"

#include <limits>
#include <map>
#include <string>

namespace rwm {

/// PSNR of identical signals.
inline constexpr double kPsnrIdentical = std::numeric_limits<double>::infinity();

struct MetricReport {
  std::string name;
  double value = 0.0;
  Index count = 0;
  std::map<std::string, std::string> params;
};

/// Mean SSIM over an 11x11 Gaussian window (sigma 1.5), valid region,
/// unit dynamic range, averaged over channels. Accepts (C,H,W) or (H,W).
double ssim(const Eigen::Ref<const Eigen::ArrayXd>& a, const Eigen::Ref<const Eigen::ArrayXd>& b, Index channels,
            Index height, Index width);

template <typename Scalar>
double ssim(const Tensor<Scalar>& a, const Tensor<Scalar>& b);

/// 10 log10(1 / MSE); kPsnrIdentical when the MSE is zero.
template <typename Scalar>
double psnr(const Tensor<Scalar>& a, const Tensor<Scalar>& b);

/// Per-item SSIM / PSNR of two (N,C,H,W) batches.
template <typename Scalar>
Eigen::ArrayXd batch_ssim(const Tensor<Scalar>& a, const Tensor<Scalar>& b);
template <typename Scalar>
Eigen::ArrayXd batch_psnr(const Tensor<Scalar>& a, const Tensor<Scalar>& b);

/// Fraction of predictions equal to the labels. An empty set scores 1.
template <typename Scalar>
double detection_accuracy(const DetectorModel<Scalar>& model, const Tensor<Scalar>& signals,
                          const std::vector<int>& labels, double threshold = 0.0);

}  // namespace rwm
