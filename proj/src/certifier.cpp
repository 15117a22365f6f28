#include "rwm/certifier.hpp"

#include <cmath>
#include <limits>
#include <numbers>

namespace rwm {

BatchClassifier as_classifier(const DetectorModel<Real>& model, double threshold) {
  if (model.is_multibit()) throw InvalidArgument("certification needs a zero-bit detector");
  return [model, threshold](const Tensor<Real>& batch) { return predict(model, batch, threshold); };
}

ClassCounts mc_class_counts(const BatchClassifier& classify, const Tensor<Real>& signal, double sigma, Index n,
                            Rng& rng, Index batch) {
  if (n < 1) throw InvalidArgument("mc_class_counts: n must be positive");
  if (!(sigma >= 0.0)) throw InvalidArgument("mc_class_counts: sigma must be >= 0");
  if (batch < 1) throw InvalidArgument("mc_class_counts: batch must be positive");
  if (signal.ndim() != 3) throw InvalidArgument("mc_class_counts expects a (C,H,W) signal");
  const Index per = signal.size();
  ClassCounts counts;
  for (Index done = 0; done < n;) {
    const Index m = std::min(batch, n - done);
    Tensor<Real> noisy(Shape{m, signal.dim(0), signal.dim(1), signal.dim(2)});
    for (Index i = 0; i < m; ++i) {
      for (Index j = 0; j < per; ++j) {
        noisy.data()[i * per + j] = signal.data()[j] + (sigma > 0.0 ? Real(rng.normal(0.0, sigma)) : Real(0));
      }
    }
    const std::vector<int> labels = classify(noisy);
    if (Index(labels.size()) != m) throw InvalidState("classifier returned the wrong number of labels");
    for (int l : labels) (l == 1 ? counts.one : counts.zero) += 1;
    done += m;
  }
  return counts;
}

namespace {

// Continued fraction for the incomplete beta function (modified Lentz).
double beta_fraction(double a, double b, double x) {
  constexpr double tiny = 1e-300, eps = 1e-16;
  const double qab = a + b, qap = a + 1.0, qam = a - 1.0;
  double c = 1.0, d = 1.0 - qab * x / qap;
  if (std::abs(d) < tiny) d = tiny;
  d = 1.0 / d;
  double h = d;
  for (int m = 1; m <= 100000; ++m) {
    const double m2 = 2.0 * m;
    double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
    d = 1.0 + aa * d;
    if (std::abs(d) < tiny) d = tiny;
    c = 1.0 + aa / c;
    if (std::abs(c) < tiny) c = tiny;
    d = 1.0 / d;
    h *= d * c;
    aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
    d = 1.0 + aa * d;
    if (std::abs(d) < tiny) d = tiny;
    c = 1.0 + aa / c;
    if (std::abs(c) < tiny) c = tiny;
    d = 1.0 / d;
    const double del = d * c;
    h *= del;
    if (std::abs(del - 1.0) < eps) return h;
  }
  throw InvalidState("incomplete beta continued fraction did not converge");
}

}  // namespace

double regularized_incomplete_beta(double a, double b, double x) {
  if (!(a > 0.0 && b > 0.0)) throw InvalidArgument("incomplete beta: a and b must be positive");
  if (!(x >= 0.0 && x <= 1.0)) throw InvalidArgument("incomplete beta: x must lie in [0,1]");
  if (x == 0.0 || x == 1.0) return x;
  const double log_front =
      std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) + a * std::log(x) + b * std::log1p(-x);
  const double front = std::exp(log_front);
  if (x < (a + 1.0) / (a + b + 2.0)) return front * beta_fraction(a, b, x) / a;
  return 1.0 - front * beta_fraction(b, a, 1.0 - x) / b;
}

double clopper_pearson_lower(Index k, Index n, double alpha) {
  if (n < 1 || k < 0 || k > n) throw InvalidArgument("clopper_pearson_lower: need 0 <= k <= n and n >= 1");
  if (!(alpha > 0.0 && alpha < 1.0)) throw InvalidArgument("clopper_pearson_lower: alpha must lie in (0,1)");
  if (k == 0) return 0.0;
  if (k == n) return std::pow(1.0 - alpha, 1.0 / double(n));
  // P(Bin(n, p) >= k) = I_p(k, n - k + 1), increasing in p.
  const double a = double(k), b = double(n - k + 1), target = 1.0 - alpha;
  double lo = 0.0, hi = 1.0;
  for (int it = 0; it < 200 && hi - lo > 1e-16; ++it) {
    const double mid = 0.5 * (lo + hi);
    (regularized_incomplete_beta(a, b, mid) <= target ? lo : hi) = mid;
  }
  return lo;
}

double inv_norm_cdf(double p) {
  if (!(p > 0.0 && p < 1.0)) throw InvalidArgument("inv_norm_cdf: p must lie in (0,1)");
  // Acklam's rational approximation, then one Halley step.
  static constexpr double a[] = {-3.969683028665376e+01, 2.209460984245205e+02, -2.759285104469687e+02,
                                 1.383577518672690e+02,  -3.066479806614716e+01, 2.506628277459239e+00};
  static constexpr double b[] = {-5.447609879822406e+01, 1.615858368580409e+02, -1.556989798598866e+02,
                                 6.680131188771972e+01,  -1.328068155288572e+01};
  static constexpr double c[] = {-7.784894002430293e-03, -3.223964580411365e-01, -2.400758277161838e+00,
                                 -2.549732539343734e+00, 4.374664141464968e+00,  2.938163982698783e+00};
  static constexpr double d[] = {7.784695709041462e-03, 3.224671290700398e-01, 2.445134137142996e+00,
                                 3.754408661907416e+00};
  constexpr double low = 0.02425, high = 1.0 - low;
  double x;
  if (p < low) {
    const double q = std::sqrt(-2.0 * std::log(p));
    x = (((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
        ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
  } else if (p <= high) {
    const double q = p - 0.5, r = q * q;
    x = (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) * q /
        (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1.0);
  } else {
    const double q = std::sqrt(-2.0 * std::log1p(-p));
    x = -(((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
        ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
  }
  // Phi(x) - p, computed from the smaller tail.
  const double e = p < 0.5 ? 0.5 * std::erfc(-x / std::numbers::sqrt2) - p
                           : (1.0 - p) - 0.5 * std::erfc(x / std::numbers::sqrt2);
  const double u = e * std::sqrt(2.0 * std::numbers::pi) * std::exp(0.5 * x * x);
  return x - u / (1.0 + 0.5 * x * u);
}

Certificate certificate_from_counts(const ClassCounts& counts, double sigma, double alpha) {
  Certificate cert;
  cert.samples_used = counts.zero + counts.one;
  cert.sigma = sigma;
  cert.alpha = alpha;
  cert.predicted_label = counts.one > counts.zero ? 1 : 0;
  const Index top = std::max(counts.one, counts.zero);
  cert.p_lower = clopper_pearson_lower(top, cert.samples_used, alpha);
  cert.abstained = !(cert.p_lower > 0.5);
  cert.radius = cert.abstained ? 0.0 : sigma * inv_norm_cdf(cert.p_lower);
  return cert;
}

Certificate certify(const BatchClassifier& classify, const Tensor<Real>& signal, double sigma, Index n, double alpha,
                    Rng& rng) {
  if (!(alpha > 0.0 && alpha < 1.0)) throw InvalidArgument("certify: alpha must lie in (0,1)");
  return certificate_from_counts(mc_class_counts(classify, signal, sigma, n, rng), sigma, alpha);
}

}  // namespace rwm
