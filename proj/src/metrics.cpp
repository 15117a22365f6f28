#include "rwm/metrics.hpp"

#include <cmath>

namespace rwm {

namespace {

constexpr int kWindow = 11;
constexpr double kWindowSigma = 1.5;
constexpr double kC1 = 0.01 * 0.01;
constexpr double kC2 = 0.03 * 0.03;

std::array<double, kWindow> gaussian_window() {
  std::array<double, kWindow> w{};
  double total = 0.0;
  for (int i = 0; i < kWindow; ++i) {
    const double d = i - kWindow / 2;
    w[i] = std::exp(-d * d / (2 * kWindowSigma * kWindowSigma));
    total += w[i];
  }
  for (double& v : w) v /= total;
  return w;
}

// Separable valid-region filtering of an (h, w) plane.
Eigen::ArrayXXd filter_valid(const Eigen::ArrayXXd& plane) {
  static const auto g = gaussian_window();
  const Index h = plane.rows(), w = plane.cols();
  Eigen::ArrayXXd rows = Eigen::ArrayXXd::Zero(h - kWindow + 1, w);
  for (int k = 0; k < kWindow; ++k) rows += g[k] * plane.middleRows(k, h - kWindow + 1);
  Eigen::ArrayXXd out = Eigen::ArrayXXd::Zero(h - kWindow + 1, w - kWindow + 1);
  for (int k = 0; k < kWindow; ++k) out += g[k] * rows.middleCols(k, w - kWindow + 1);
  return out;
}

void check_same(const Shape& a, const Shape& b, const char* what) {
  if (a != b) throw InvalidArgument(std::string(what) + ": shape " + shape_str(a) + " vs " + shape_str(b));
}

}  // namespace

double ssim(const Eigen::Ref<const Eigen::ArrayXd>& a, const Eigen::Ref<const Eigen::ArrayXd>& b, Index channels,
            Index height, Index width) {
  if (height < kWindow || width < kWindow) {
    throw InvalidArgument("ssim: images must be at least 11x11, got " + std::to_string(height) + "x" +
                          std::to_string(width));
  }
  double total = 0.0;
  const Index plane = height * width;
  for (Index c = 0; c < channels; ++c) {
    // Row-major planes mapped as (w, h) column-major, then transposed.
    const Eigen::ArrayXXd x = Eigen::Map<const Eigen::ArrayXXd>(a.data() + c * plane, width, height).transpose();
    const Eigen::ArrayXXd y = Eigen::Map<const Eigen::ArrayXXd>(b.data() + c * plane, width, height).transpose();
    const Eigen::ArrayXXd mx = filter_valid(x), my = filter_valid(y);
    const Eigen::ArrayXXd vx = filter_valid(x * x) - mx * mx;
    const Eigen::ArrayXXd vy = filter_valid(y * y) - my * my;
    const Eigen::ArrayXXd cxy = filter_valid(x * y) - mx * my;
    const Eigen::ArrayXXd map =
        ((2 * mx * my + kC1) * (2 * cxy + kC2)) / ((mx * mx + my * my + kC1) * (vx + vy + kC2));
    total += map.mean();
  }
  return total / double(channels);
}

template <typename Scalar>
double ssim(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  check_same(a.shape(), b.shape(), "ssim");
  if (a.ndim() != 2 && a.ndim() != 3) throw InvalidArgument("ssim expects (C,H,W) or (H,W), got " + shape_str(a.shape()));
  const Index c = a.ndim() == 3 ? a.dim(0) : 1;
  return ssim(a.data().template cast<double>(), b.data().template cast<double>(), c, a.dim(a.ndim() - 2),
              a.dim(a.ndim() - 1));
}

template <typename Scalar>
double psnr(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  check_same(a.shape(), b.shape(), "psnr");
  if (a.size() == 0) throw InvalidArgument("psnr: empty signals");
  const double mse = (a.data().template cast<double>() - b.data().template cast<double>()).square().mean();
  if (mse == 0.0) return kPsnrIdentical;
  return -10.0 * std::log10(mse);
}

template <typename Scalar>
Eigen::ArrayXd batch_ssim(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  check_same(a.shape(), b.shape(), "batch_ssim");
  if (a.ndim() != 4) throw InvalidArgument("batch_ssim expects (N,C,H,W)");
  const Index n = a.dim(0), per = n ? a.size() / n : 0;
  const Eigen::ArrayXd x = a.data().template cast<double>(), y = b.data().template cast<double>();
  Eigen::ArrayXd out(n);
  for (Index i = 0; i < n; ++i) out[i] = ssim(x.segment(i * per, per), y.segment(i * per, per), a.dim(1), a.dim(2), a.dim(3));
  return out;
}

template <typename Scalar>
Eigen::ArrayXd batch_psnr(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  check_same(a.shape(), b.shape(), "batch_psnr");
  if (a.ndim() != 4) throw InvalidArgument("batch_psnr expects (N,C,H,W)");
  const Index n = a.dim(0), per = n ? a.size() / n : 0;
  Eigen::ArrayXd out(n);
  for (Index i = 0; i < n; ++i) {
    const double mse = (a.data().segment(i * per, per).template cast<double>() -
                        b.data().segment(i * per, per).template cast<double>())
                           .square()
                           .mean();
    out[i] = mse == 0.0 ? kPsnrIdentical : -10.0 * std::log10(mse);
  }
  return out;
}

template <typename Scalar>
double detection_accuracy(const DetectorModel<Scalar>& model, const Tensor<Scalar>& signals,
                          const std::vector<int>& labels, double threshold) {
  const Index n = signals.ndim() == 3 ? 1 : signals.dim(0);
  if (Index(labels.size()) != n) {
    throw InvalidArgument("detection_accuracy: " + std::to_string(n) + " signals but " +
                          std::to_string(labels.size()) + " labels");
  }
  if (n == 0) return 1.0;
  const std::vector<int> pred = predict(model, signals, threshold);
  Index hits = 0;
  for (Index i = 0; i < n; ++i) hits += pred[i] == labels[i];
  return double(hits) / double(n);
}

#define RWM_INSTANTIATE(S)                                                         \
  template double ssim(const Tensor<S>&, const Tensor<S>&);                       \
  template double psnr(const Tensor<S>&, const Tensor<S>&);                       \
  template Eigen::ArrayXd batch_ssim(const Tensor<S>&, const Tensor<S>&);         \
  template Eigen::ArrayXd batch_psnr(const Tensor<S>&, const Tensor<S>&);         \
  template double detection_accuracy(const DetectorModel<S>&, const Tensor<S>&,   \
                                     const std::vector<int>&, double);

RWM_INSTANTIATE(float)
RWM_INSTANTIATE(double)

}  // namespace rwm
