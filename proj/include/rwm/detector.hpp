#pragma once

#include "rwm/ndgrad/ops.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace rwm {

struct DetectorConfig {
  Index channels = 3;
  Index height = 32;
  Index width = 32;
  std::vector<Index> channel_widths{16, 32, 64};
  int kernel_size = 3;
  std::vector<int> strides{1, 2, 2};
  Index head_dim = 1;  // 1: zero-bit, n: multi-bit
  std::uint64_t seed = 0;

  Shape input_shape() const { return {channels, height, width}; }
  void validate() const;
  bool operator==(const DetectorConfig&) const = default;
};

/// Closed-form parameter count for a config.
Index parameter_count(const DetectorConfig& config);

template <typename Scalar>
struct NamedTensor {
  std::string name;
  Tensor<Scalar> value;
};

/// Convolutional binary (or n-logit) classifier:
/// [conv -> instance_norm -> relu] per block, global average pool, linear head.
template <typename Scalar>
class DetectorModel {
 public:
  DetectorModel() = default;
  DetectorModel(DetectorConfig config, std::vector<NamedTensor<Scalar>> params);

  const DetectorConfig& config() const { return config_; }
  Index head_dim() const { return config_.head_dim; }
  bool is_multibit() const { return config_.head_dim > 1; }

  const std::vector<NamedTensor<Scalar>>& named_parameters() const { return params_; }
  /// Handles sharing storage with the model; updating them updates the model.
  std::vector<Tensor<Scalar>> parameters() const;
  Index num_parameters() const;

  /// Independent deep copy.
  DetectorModel clone() const;

  template <typename Other>
  DetectorModel<Other> cast() const {
    std::vector<NamedTensor<Other>> p;
    for (const auto& [name, t] : params_) p.push_back({name, t.template cast<Other>()});
    return DetectorModel<Other>(config_, std::move(p));
  }

  void set_requires_grad(bool flag);

 private:
  struct Unchecked {};
  DetectorModel(DetectorConfig config, std::vector<NamedTensor<Scalar>> params, Unchecked)
      : config_(std::move(config)), params_(std::move(params)) {}
  template <typename S>
  friend DetectorModel<S> build_detector(const DetectorConfig& config);

  DetectorConfig config_;
  std::vector<NamedTensor<Scalar>> params_;
};

template <typename Scalar>
DetectorModel<Scalar> build_detector(const DetectorConfig& config);

/// batch (N,C,H,W) -> logits (N,head_dim)
template <typename Scalar>
Tensor<Scalar> forward_logits(const DetectorModel<Scalar>& model, const Tensor<Scalar>& batch);

/// Logits without recording a tape, evaluated in chunks.
template <typename Scalar>
Eigen::ArrayXd logits_no_grad(const DetectorModel<Scalar>& model, const Tensor<Scalar>& batch,
                              Index chunk = 256);

/// Zero-bit label per sample: 1 iff logit > threshold.
template <typename Scalar>
std::vector<int> predict(const DetectorModel<Scalar>& model, const Tensor<Scalar>& batch,
                         double threshold = 0.0);

/// Lifts a single (C,H,W) signal to a batch of one; passes batches through.
template <typename Scalar>
Tensor<Scalar> as_batch(const Tensor<Scalar>& signal);

}  // namespace rwm
