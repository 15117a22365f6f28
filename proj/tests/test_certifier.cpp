#include "doctest.h"

#include "rwm/certifier.hpp"

#include <cmath>
#include <numbers>

using namespace rwm;

namespace {

// P(Bin(n, p) >= k) by direct summation of the mass function.
long double binomial_upper_tail(Index k, Index n, long double p) {
  if (p <= 0) return k == 0 ? 1 : 0;
  if (p >= 1) return 1;
  long double total = 0;
  for (Index i = k; i <= n; ++i) {
    const long double log_pmf = std::lgamma((long double)n + 1) - std::lgamma((long double)i + 1) -
                                std::lgamma((long double)(n - i) + 1) + i * std::log(p) + (n - i) * std::log1p(-p);
    total += std::exp(log_pmf);
  }
  return total;
}

double cp_oracle(Index k, Index n, double alpha) {
  long double lo = 0, hi = 1;
  for (int it = 0; it < 120; ++it) {
    const long double mid = (lo + hi) / 2;
    (binomial_upper_tail(k, n, mid) <= 1 - (long double)alpha ? lo : hi) = mid;
  }
  return double(lo);
}

// erf(x) = 2/sqrt(pi) exp(-x^2) sum_n 2^n x^(2n+1) / (1*3*...*(2n+1)); all
// terms positive.
long double erf_series(long double x) {
  const bool neg = x < 0;
  x = std::fabs(x);
  long double term = x, total = x;
  for (int n = 1; n < 2000; ++n) {
    term *= 2 * x * x / (2 * n + 1);
    total += term;
    if (term < total * 1e-22L) break;
  }
  const long double r = 2 / std::sqrt(std::numbers::pi_v<long double>) * std::exp(-x * x) * total;
  return neg ? -r : r;
}

long double norm_cdf_oracle(long double x) { return 0.5L * (1 + erf_series(x / std::sqrt(2.0L))); }

double quantile_oracle(double p) {
  long double lo = -40, hi = 40;
  for (int it = 0; it < 200; ++it) {
    const long double mid = (lo + hi) / 2;
    (norm_cdf_oracle(mid) < p ? lo : hi) = mid;
  }
  return double((lo + hi) / 2);
}

BatchClassifier constant_classifier(int label) {
  return [label](const Tensor<Real>& b) { return std::vector<int>(b.dim(0), label); };
}

}  // namespace

TEST_SUITE("certifier") {

TEST_CASE("inv_norm_cdf against the series oracle") {
  CHECK(std::abs(inv_norm_cdf(0.5)) < 1e-15);
  CHECK(std::abs(inv_norm_cdf(0.975) - quantile_oracle(0.975)) <= 1e-7);
  CHECK(std::abs(inv_norm_cdf(0.975) - 1.959963984540054) <= 1e-7);
  for (double p : {1e-10, 1e-8, 1e-5, 0.001, 0.01, 0.02425, 0.1, 0.3, 0.49, 0.51, 0.7, 0.9, 0.97575, 0.999, 1 - 1e-6,
                   1 - 1e-10}) {
    CHECK_MESSAGE(std::abs(inv_norm_cdf(p) - quantile_oracle(p)) <= 1e-7, "p=" << p);
    CHECK(inv_norm_cdf(p) == doctest::Approx(-inv_norm_cdf(1 - p)).epsilon(1e-6));
  }
  CHECK_THROWS_AS(inv_norm_cdf(0.0), InvalidArgument);
  CHECK_THROWS_AS(inv_norm_cdf(1.0), InvalidArgument);
}

TEST_CASE("clopper_pearson_lower") {
  CHECK(clopper_pearson_lower(0, 50, 0.99) == 0.0);
  CHECK(std::abs(clopper_pearson_lower(100, 100, 0.99) - std::pow(0.01, 0.01)) <= 1e-12);
  CHECK(std::abs(clopper_pearson_lower(10000, 10000, 0.99) - std::pow(0.01, 1e-4)) <= 1e-12);
  const double oracle_90 = cp_oracle(90, 100, 0.99);
  CHECK(std::abs(clopper_pearson_lower(90, 100, 0.99) - oracle_90) <= 1e-6);
  for (auto [k, n] : {std::pair<Index, Index>{1, 10}, {5, 10}, {9, 10}, {51, 100}, {700, 1000}, {9990, 10000}}) {
    for (double alpha : {0.9, 0.99, 0.999}) {
      CHECK_MESSAGE(std::abs(clopper_pearson_lower(k, n, alpha) - cp_oracle(k, n, alpha)) <= 1e-6,
                    "k=" << k << " n=" << n << " alpha=" << alpha);
    }
  }
  double prev = 0.0;
  for (Index k = 0; k <= 40; ++k) {
    const double v = clopper_pearson_lower(k, 40, 0.99);
    CHECK(v >= prev);
    prev = v;
  }
  CHECK(clopper_pearson_lower(30, 40, 0.999) <= clopper_pearson_lower(30, 40, 0.99));
  CHECK_THROWS_AS(clopper_pearson_lower(5, 4, 0.99), InvalidArgument);
  CHECK_THROWS_AS(clopper_pearson_lower(2, 4, 1.0), InvalidArgument);
}

TEST_CASE("mc_class_counts") {
  Rng rng(1);
  const Tensor<Real> s = Tensor<Real>::full({1, 4, 4}, 0.5f);
  const auto c1 = mc_class_counts(constant_classifier(1), s, 0.5, 777, rng, 100);
  CHECK(c1.one == 777);
  CHECK(c1.zero == 0);
  // Threshold on the first pixel; without noise every copy agrees.
  BatchClassifier first_pixel = [](const Tensor<Real>& b) {
    std::vector<int> out(b.dim(0));
    for (Index i = 0; i < b.dim(0); ++i) out[i] = b.data()[i * 16] > 0.4f;
    return out;
  };
  const auto c0 = mc_class_counts(first_pixel, s, 0.0, 300, rng);
  CHECK(c0.one == 300);
  const auto cn = mc_class_counts(first_pixel, s, 1.0, 1000, rng);
  CHECK(cn.one + cn.zero == 1000);
  CHECK(cn.one > 400);
  CHECK(cn.one < 600);
}

TEST_CASE("certify against composed oracles") {
  Rng rng(2);
  const Tensor<Real> s = Tensor<Real>::full({1, 4, 4}, 0.5f);
  const Certificate c = certify(constant_classifier(1), s, 0.5, 10000, 0.99, rng);
  const double p_oracle = cp_oracle(10000, 10000, 0.99);
  CHECK(c.predicted_label == 1);
  CHECK_FALSE(c.abstained);
  CHECK(std::abs(c.p_lower - p_oracle) <= 1e-6);
  CHECK(std::abs(c.radius - 0.5 * quantile_oracle(p_oracle)) <= 1e-5);
  CHECK(c.samples_used == 10000);

  SUBCASE("balanced counts abstain") {
    const Certificate tie = certificate_from_counts({500, 500}, 0.25, 0.99);
    CHECK(tie.abstained);
    CHECK(tie.radius == 0.0);
    const Certificate minority = certificate_from_counts({520, 480}, 0.25, 0.99);
    CHECK(minority.abstained);
    CHECK(minority.predicted_label == 0);
  }
  SUBCASE("radius is linear in sigma") {
    const Certificate a = certificate_from_counts({10, 990}, 0.25, 0.99);
    const Certificate b = certificate_from_counts({10, 990}, 0.75, 0.99);
    CHECK(b.radius == doctest::Approx(3.0 * a.radius).epsilon(1e-12));
    CHECK(a.radius == doctest::Approx(0.25 * inv_norm_cdf(a.p_lower)).epsilon(1e-12));
  }
}

TEST_CASE("certified radius never exceeds the margin of a linear classifier") {
  Rng rng(3);
  const Index d = 16;
  Eigen::ArrayXd w(d);
  for (Index i = 0; i < d; ++i) w[i] = rng.uniform(-1, 1);
  const double bias = 0.1, norm = std::sqrt(w.square().sum());
  BatchClassifier linear = [&](const Tensor<Real>& b) {
    std::vector<int> out(b.dim(0));
    for (Index i = 0; i < b.dim(0); ++i) out[i] = (b.data().segment(i * d, d).cast<double>() * w).sum() - bias > 0;
    return out;
  };
  int certified = 0;
  for (int trial = 0; trial < 12; ++trial) {
    Tensor<Real> x(Shape{1, 4, 4});
    for (Index i = 0; i < d; ++i) x.data()[i] = Real(rng.uniform(-0.3, 0.3));
    const double margin = std::abs((x.data().cast<double>() * w).sum() - bias) / norm;
    const Certificate c = certify(linear, x, 0.25, 2000, 0.999, rng);
    if (c.abstained) continue;
    ++certified;
    CHECK(c.radius <= margin + 1e-9);
  }
  CHECK(certified > 0);
}

}  // TEST_SUITE
