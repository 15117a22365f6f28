#pragma once

#include "rwm/detector.hpp"
#include "rwm/rng.hpp"

#include <functional>

namespace rwm {

/// Hard labels in {0,1} for every item of an (N,C,H,W) batch.
using BatchClassifier = std::function<std::vector<int>(const Tensor<Real>& batch)>;

/// Thresholded zero-bit detector as a classifier.
BatchClassifier as_classifier(const DetectorModel<Real>& model, double threshold = 0.0);

struct ClassCounts {
  Index zero = 0;
  Index one = 0;
};

struct Certificate {
  int predicted_label = 0;
  double p_lower = 0.0;
  double radius = 0.0;  // l2
  bool abstained = true;
  Index samples_used = 0;
  double sigma = 0.0;
  double alpha = 0.0;
};

/// Labels of n copies of `signal` under unclipped N(0, sigma^2) noise,
/// evaluated `batch` copies at a time.
ClassCounts mc_class_counts(const BatchClassifier& classify, const Tensor<Real>& signal, double sigma, Index n,
                            Rng& rng, Index batch = 256);

/// Largest p with P(Bin(n, p) >= k) <= 1 - alpha; 0 when k = 0.
double clopper_pearson_lower(Index k, Index n, double alpha);

/// Regularized incomplete beta function I_x(a, b).
double regularized_incomplete_beta(double a, double b, double x);

/// Standard normal quantile.
double inv_norm_cdf(double p);

/// Majority label under noise with p_lower from the counts; abstains when
/// p_lower <= 1/2, otherwise radius = sigma * inv_norm_cdf(p_lower).
Certificate certify(const BatchClassifier& classify, const Tensor<Real>& signal, double sigma, Index n, double alpha,
                    Rng& rng);

/// Certificate fields from counts alone.
Certificate certificate_from_counts(const ClassCounts& counts, double sigma, double alpha);

}  // namespace rwm
