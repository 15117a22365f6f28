#pragma once

#include "rwm/ndgrad/tensor.hpp"

#include <cstdint>
#include <memory>

namespace rwm {

// Elementwise arithmetic on equal shapes.
template <typename Scalar>
Tensor<Scalar> add(const Tensor<Scalar>& a, const Tensor<Scalar>& b);
template <typename Scalar>
Tensor<Scalar> sub(const Tensor<Scalar>& a, const Tensor<Scalar>& b);
template <typename Scalar>
Tensor<Scalar> mul(const Tensor<Scalar>& a, const Tensor<Scalar>& b);

/// scale * a + shift
template <typename Scalar>
Tensor<Scalar> affine(const Tensor<Scalar>& a, double scale, double shift);

/// a + c where c is a constant (no gradient) of the same size.
template <typename Scalar>
Tensor<Scalar> add_constant(const Tensor<Scalar>& a,
                            const typename Tensor<Scalar>::Array& c);

/// Clamp to [lo, hi]; gradient passes where the input lies inside [lo, hi].
template <typename Scalar>
Tensor<Scalar> clamp(const Tensor<Scalar>& a, double lo, double hi);

/// mask * a + (1 - mask) * b with a constant mask.
template <typename Scalar>
Tensor<Scalar> blend(const Tensor<Scalar>& a, const Tensor<Scalar>& b,
                     const typename Tensor<Scalar>::Array& mask);

template <typename Scalar>
Tensor<Scalar> sum(const Tensor<Scalar>& a);
template <typename Scalar>
Tensor<Scalar> mean(const Tensor<Scalar>& a);

template <typename Scalar>
Tensor<Scalar> reshape(const Tensor<Scalar>& a, Shape shape);

/// Concatenation / slicing along axis 0.
template <typename Scalar>
Tensor<Scalar> concat(std::span<const Tensor<Scalar>> parts);
template <typename Scalar>
Tensor<Scalar> slice(const Tensor<Scalar>& a, Index begin, Index end);

/// Elementwise maximum over equally shaped tensors. The gradient goes to the
/// first argument attaining the maximum.
template <typename Scalar>
Tensor<Scalar> max_of(std::span<const Tensor<Scalar>> parts);

/// Elementwise mean over equally shaped tensors.
template <typename Scalar>
Tensor<Scalar> mean_of(std::span<const Tensor<Scalar>> parts);

template <typename Scalar>
Tensor<Scalar> relu(const Tensor<Scalar>& x);

/// Cross-correlation with zero padding. input (N,Cin,H,W), kernel
/// (Cout,Cin,kh,kw), bias (Cout).
template <typename Scalar>
Tensor<Scalar> conv2d(const Tensor<Scalar>& input, const Tensor<Scalar>& kernel,
                      const Tensor<Scalar>& bias, int stride, int padding);

template <typename Scalar>
Tensor<Scalar> instance_norm2d(const Tensor<Scalar>& input, const Tensor<Scalar>& gamma,
                               const Tensor<Scalar>& beta, double eps = 1e-5);

/// x (N,D) * weight (D,M) + bias (M)
template <typename Scalar>
Tensor<Scalar> linear(const Tensor<Scalar>& x, const Tensor<Scalar>& weight,
                      const Tensor<Scalar>& bias);

/// (N,C,H,W) -> (N,C)
template <typename Scalar>
Tensor<Scalar> global_avg_pool(const Tensor<Scalar>& x);

/// Linear per-sample resampling with a fixed number of taps per output
/// pixel, applied to every channel:
///   out(i, c, p) = sum_k weight(i, p, k) * in(i, c, index(i, p, k)).
/// Unused taps have index -1. `samples` is 1 (shared by the batch) or N.
struct Resampling {
  Index samples = 1, in_h = 0, in_w = 0, out_h = 0, out_w = 0, taps = 1;
  std::vector<std::int32_t> index;
  std::vector<double> weight;

  Resampling() = default;
  Resampling(Index samples, Index in_h, Index in_w, Index out_h, Index out_w, Index taps);

  Index out_pixels() const { return out_h * out_w; }
  Index offset(Index sample, Index pixel) const { return (sample * out_pixels() + pixel) * taps; }
  /// Output pixel p of `sample` copies input pixel p.
  void set_identity(Index sample);
  /// Dense (out pixels x in pixels) matrix of one sample.
  Eigen::MatrixXd dense(Index sample = 0) const;
};

template <typename Scalar>
Tensor<Scalar> resample(const Tensor<Scalar>& x, std::shared_ptr<const Resampling> map);

/// Per-sample contrast around the sample mean: mu + factor * (x - mu).
template <typename Scalar>
Tensor<Scalar> contrast_about_mean(const Tensor<Scalar>& x, std::span<const double> factors);

enum class Reduction { mean, per_sample };

/// Numerically stable binary cross-entropy on logits (N,1) with labels in
/// {0,1}. per_sample returns (N,1).
template <typename Scalar>
Tensor<Scalar> bce_with_logits(const Tensor<Scalar>& logits, const Tensor<Scalar>& labels,
                               Reduction reduction = Reduction::mean);

/// max(0, 1 - t z) averaged over bits, t = 2 * bit - 1. logits (N,n), bits
/// (N,n) in {0,1}. per_sample returns (N,1) means over bits.
template <typename Scalar>
Tensor<Scalar> hinge_multibit(const Tensor<Scalar>& logits, const Tensor<Scalar>& bits,
                              Reduction reduction = Reduction::mean);

}  // namespace rwm
