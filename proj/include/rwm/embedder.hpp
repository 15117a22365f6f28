#pragma once

#include "rwm/detector.hpp"
#include "rwm/transforms.hpp"

#include <cstdint>
#include <vector>

namespace rwm {

/// How the losses of the n sampled transformations are combined per signal.
enum class DrawReduction { max, mean };

/// How ensemble members enter the non-transfer term.
enum class EnsembleReduction { joint_max, sum_members };

struct WatermarkConfig {
  double epsilon = 20.0 / 255.0;  // l-inf budget
  int steps = 5;
  double step_size = 0.0;        // 0: 2.5 * epsilon / steps
  int transform_samples = 1;     // 0: no transformations while embedding
  std::uint64_t seed = 0;
  DrawReduction draw_reduction = DrawReduction::max;
  EnsembleReduction ensemble_reduction = EnsembleReduction::joint_max;
  Index chunk = 64;  // signals embedded per graph

  double effective_step_size() const;
  void validate() const;
};

using BitCode = std::vector<std::uint8_t>;

/// Elementwise clamp of x into [center - eps, center + eps] and [0, 1].
template <typename Scalar>
Tensor<Scalar> project_linf(const Tensor<Scalar>& x, const Tensor<Scalar>& center, double epsilon);

// Embedders accept a signal (C,H,W) or a batch (N,C,H,W) and return the
// same shape, detached. Transformations are resampled at every step.

template <typename Scalar>
Tensor<Scalar> pgd_embed(const DetectorModel<Scalar>& model, const Tensor<Scalar>& signal,
                         const WatermarkConfig& cfg, const TransformPipeline* pipe = nullptr);

/// Pushes `target` toward label 1 and every ensemble member toward 0.
template <typename Scalar>
Tensor<Scalar> pgd_embed_ensemble(const DetectorModel<Scalar>& target,
                                  const std::vector<DetectorModel<Scalar>>& ensemble,
                                  const Tensor<Scalar>& signal, const WatermarkConfig& cfg,
                                  const TransformPipeline* pipe = nullptr);

/// One code for every signal, or one per signal.
template <typename Scalar>
Tensor<Scalar> embed_multibit(const DetectorModel<Scalar>& model, const Tensor<Scalar>& signal,
                              const std::vector<BitCode>& codes, const WatermarkConfig& cfg,
                              const TransformPipeline* pipe = nullptr);

template <typename Scalar>
int detect_zero_bit(const DetectorModel<Scalar>& model, const Tensor<Scalar>& signal, double threshold = 0.0);

/// bit j is 1 iff logit j > 0. One code per signal of the batch.
template <typename Scalar>
std::vector<BitCode> decode_multibit(const DetectorModel<Scalar>& model, const Tensor<Scalar>& signal);

/// (N, n) tensor of 0/1 from codes; a single code is repeated n_rows times.
template <typename Scalar>
Tensor<Scalar> codes_tensor(const std::vector<BitCode>& codes, Index n_rows, Index n_bits);

}  // namespace rwm
