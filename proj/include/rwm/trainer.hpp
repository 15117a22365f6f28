#pragma once

#include "rwm/embedder.hpp"

#include <functional>
#include <optional>

namespace rwm {

/// Lower epsilon by `delta` whenever the watermark detection rate averaged
/// over the last `window` steps is 100%.
struct AdaptiveEpsilon {
  double delta = 1e-5;
  int window = 100;
};

struct TrainConfig {
  int steps = 5000;
  int batch_size = 32;
  double lr = 0.1;
  double lr_decay_factor = 0.1;
  int lr_decay_every = 20000;
  double momentum = 0.0;
  WatermarkConfig wm;
  TransformPipeline pipe;  // empty: no transformations
  int transform_samples_per_step = 1;
  std::optional<AdaptiveEpsilon> adaptive_epsilon;
  int report_window = 100;  // moving-average length for the report
  std::uint64_t seed = 0;

  void validate() const;
  /// lr * decay^floor(step / decay_every)
  double lr_at(int step) const;
};

struct StepStats {
  double loss = 0.0;
  double accuracy = 0.0;        // clean and watermarked items, or bits
  double detection_rate = 0.0;  // watermarked items detected, or bits
};

struct StepRecord {
  int step = 0;
  double loss = 0.0;
  double accuracy = 0.0;
  double accuracy_avg = 0.0;
  double detection_rate = 0.0;
  double epsilon = 0.0;
  double lr = 0.0;
  double seconds = 0.0;  // wall clock since start; not written to reports
};

struct TrainReport {
  std::vector<StepRecord> steps;
  std::optional<double> test_accuracy;
};

template <typename Scalar>
struct TrainResult {
  DetectorModel<Scalar> model;
  TrainReport report;
};

/// Called after every step with the step index and current model.
template <typename Scalar>
using StepCallback = std::function<void(int step, const DetectorModel<Scalar>&)>;

/// Pipeline restricted to its differentiable specs, for use inside PGD.
std::optional<TransformPipeline> differentiable_part(const TransformPipeline& pipe);

/// Builds the watermarked batch for one step.
template <typename Scalar>
using WatermarkFn = std::function<Tensor<Scalar>(const DetectorModel<Scalar>& model, const Tensor<Scalar>& clean,
                                                 const WatermarkConfig& wm)>;

/// One zero-bit update of `model` in place: embed, transform, descend.
template <typename Scalar>
StepStats train_step(DetectorModel<Scalar>& model, const Tensor<Scalar>& clean, const TrainConfig& cfg, Rng& rng,
                     Sgd<Scalar>& optimizer, double lr, const WatermarkConfig& wm,
                     const WatermarkFn<Scalar>& watermark = {});

template <typename Scalar>
TrainResult<Scalar> train(const DetectorModel<Scalar>& model, const Tensor<Scalar>& dataset, const TrainConfig& cfg,
                          const Tensor<Scalar>* test = nullptr, const StepCallback<Scalar>& on_step = {});

/// Independent detectors differing only in their initialization seed.
template <typename Scalar>
std::vector<DetectorModel<Scalar>> train_ensemble(const DetectorConfig& arch, const std::vector<std::uint64_t>& seeds,
                                                  const Tensor<Scalar>& dataset, const TrainConfig& cfg);

/// Trains with watermarks that must not transfer to the frozen ensemble.
template <typename Scalar>
TrainResult<Scalar> train_specificity_hardened(const DetectorModel<Scalar>& model,
                                               const std::vector<DetectorModel<Scalar>>& ensemble,
                                               const Tensor<Scalar>& dataset, const TrainConfig& cfg,
                                               const Tensor<Scalar>* test = nullptr,
                                               const StepCallback<Scalar>& on_step = {});

/// Multi-bit training with a fresh random code per item and step.
template <typename Scalar>
TrainResult<Scalar> train_multibit(const DetectorModel<Scalar>& model, const Tensor<Scalar>& dataset,
                                   const TrainConfig& cfg, const StepCallback<Scalar>& on_step = {});

/// Accuracy on the test set and its watermarked copy (embedded without
/// transformations).
template <typename Scalar>
double clean_vs_watermarked_accuracy(const DetectorModel<Scalar>& model, const Tensor<Scalar>& test,
                                     const WatermarkConfig& wm);

}  // namespace rwm
