#include "rwm/detector.hpp"

#include "rwm/rng.hpp"

#include <cmath>

namespace rwm {

void DetectorConfig::validate() const {
  if (channels < 1 || height < 1 || width < 1) throw InvalidArgument("detector: bad input shape");
  if (channel_widths.empty()) throw InvalidArgument("detector: no conv blocks");
  if (channel_widths.size() != strides.size()) {
    throw InvalidArgument("detector: channel_widths and strides differ in length");
  }
  for (Index c : channel_widths) {
    if (c < 1) throw InvalidArgument("detector: channel width must be >= 1");
  }
  for (int s : strides) {
    if (s < 1) throw InvalidArgument("detector: stride must be >= 1");
  }
  if (kernel_size < 1) throw InvalidArgument("detector: kernel_size must be >= 1");
  if (head_dim < 1) throw InvalidArgument("detector: head_dim must be >= 1");
}

Index parameter_count(const DetectorConfig& config) {
  config.validate();
  Index count = 0, in = config.channels;
  const Index k2 = Index(config.kernel_size) * config.kernel_size;
  for (Index out : config.channel_widths) {
    count += out * in * k2 + out  // conv
             + 2 * out;           // gamma, beta
    in = out;
  }
  return count + in * config.head_dim + config.head_dim;
}

template <typename Scalar>
DetectorModel<Scalar>::DetectorModel(DetectorConfig config, std::vector<NamedTensor<Scalar>> params)
    : config_(std::move(config)), params_(std::move(params)) {
  config_.validate();
  const DetectorModel reference = build_detector<Scalar>(config_);
  if (reference.params_.size() != params_.size()) {
    throw InvalidArgument("detector: expected " + std::to_string(reference.params_.size()) +
                          " parameter tensors, got " + std::to_string(params_.size()));
  }
  for (std::size_t i = 0; i < params_.size(); ++i) {
    const auto& want = reference.params_[i];
    const auto& got = params_[i];
    if (want.name != got.name || want.value.shape() != got.value.shape()) {
      throw InvalidArgument("detector: parameter " + std::to_string(i) + " is " + got.name +
                            shape_str(got.value.shape()) + ", expected " + want.name +
                            shape_str(want.value.shape()));
    }
  }
}

template <typename Scalar>
std::vector<Tensor<Scalar>> DetectorModel<Scalar>::parameters() const {
  std::vector<Tensor<Scalar>> out;
  for (const auto& p : params_) out.push_back(p.value);
  return out;
}

template <typename Scalar>
Index DetectorModel<Scalar>::num_parameters() const {
  Index n = 0;
  for (const auto& p : params_) n += p.value.size();
  return n;
}

template <typename Scalar>
DetectorModel<Scalar> DetectorModel<Scalar>::clone() const {
  DetectorModel copy;
  copy.config_ = config_;
  for (const auto& [name, t] : params_) {
    Tensor<Scalar> c = t.detach();
    c.set_requires_grad(t.requires_grad());
    copy.params_.push_back({name, c});
  }
  return copy;
}

template <typename Scalar>
void DetectorModel<Scalar>::set_requires_grad(bool flag) {
  for (auto& p : params_) p.value.set_requires_grad(flag);
}

template <typename Scalar>
DetectorModel<Scalar> build_detector(const DetectorConfig& config) {
  config.validate();
  Rng rng(config.seed);
  std::vector<NamedTensor<Scalar>> params;
  auto he_uniform = [&rng](Shape shape, Index fan_in) {
    Tensor<Scalar> t(std::move(shape), true);
    const double bound = std::sqrt(6.0 / double(fan_in));
    for (Index i = 0; i < t.size(); ++i) t.data()[i] = Scalar(rng.uniform(-bound, bound));
    return t;
  };
  auto filled = [](Shape shape, double v) {
    Tensor<Scalar> t = Tensor<Scalar>::full(std::move(shape), Scalar(v));
    t.set_requires_grad(true);
    return t;
  };
  const Index k = config.kernel_size;
  Index in = config.channels;
  for (std::size_t b = 0; b < config.channel_widths.size(); ++b) {
    const Index out = config.channel_widths[b];
    const std::string prefix = "block" + std::to_string(b) + ".";
    params.push_back({prefix + "conv.weight", he_uniform({out, in, k, k}, in * k * k)});
    params.push_back({prefix + "conv.bias", filled({out}, 0.0)});
    params.push_back({prefix + "norm.gamma", filled({out}, 1.0)});
    params.push_back({prefix + "norm.beta", filled({out}, 0.0)});
    in = out;
  }
  params.push_back({"head.weight", he_uniform({in, config.head_dim}, in)});
  params.push_back({"head.bias", filled({config.head_dim}, 0.0)});

  return DetectorModel<Scalar>(config, std::move(params), typename DetectorModel<Scalar>::Unchecked{});
}

template <typename Scalar>
Tensor<Scalar> as_batch(const Tensor<Scalar>& signal) {
  if (signal.ndim() == 4) return signal;
  if (signal.ndim() == 3) {
    Shape s{1};
    s.insert(s.end(), signal.shape().begin(), signal.shape().end());
    return reshape(signal, s);
  }
  throw InvalidArgument("expected a (C,H,W) signal or (N,C,H,W) batch, got " +
                        shape_str(signal.shape()));
}

template <typename Scalar>
Tensor<Scalar> forward_logits(const DetectorModel<Scalar>& model, const Tensor<Scalar>& batch) {
  const auto& cfg = model.config();
  if (batch.ndim() != 4 || batch.dim(1) != cfg.channels || batch.dim(2) != cfg.height ||
      batch.dim(3) != cfg.width) {
    throw InvalidArgument("forward_logits: batch " + shape_str(batch.shape()) +
                          " does not match detector input " + shape_str(cfg.input_shape()));
  }
  if (batch.dim(0) == 0) return Tensor<Scalar>(Shape{0, cfg.head_dim});
  const auto& p = model.named_parameters();
  Tensor<Scalar> x = batch;
  const int pad = cfg.kernel_size / 2;
  for (std::size_t b = 0; b < cfg.channel_widths.size(); ++b) {
    const std::size_t base = 4 * b;
    x = conv2d(x, p[base].value, p[base + 1].value, cfg.strides[b], pad);
    x = instance_norm2d(x, p[base + 2].value, p[base + 3].value);
    x = relu(x);
  }
  x = global_avg_pool(x);
  return linear(x, p[p.size() - 2].value, p.back().value);
}

template <typename Scalar>
Eigen::ArrayXd logits_no_grad(const DetectorModel<Scalar>& model, const Tensor<Scalar>& batch,
                              Index chunk) {
  NoGradGuard guard;
  const Tensor<Scalar> b = as_batch(batch);
  const Index n = b.dim(0), h = model.head_dim();
  Eigen::ArrayXd out(n * h);
  for (Index start = 0; start < n; start += chunk) {
    const Index end = std::min(n, start + chunk);
    out.segment(start * h, (end - start) * h) =
        forward_logits(model, slice(b, start, end)).data().template cast<double>();
  }
  return out;
}

template <typename Scalar>
std::vector<int> predict(const DetectorModel<Scalar>& model, const Tensor<Scalar>& batch,
                         double threshold) {
  if (model.is_multibit()) {
    throw InvalidArgument("predict: multi-bit detector, use decode_multibit");
  }
  const Eigen::ArrayXd z = logits_no_grad(model, batch);
  std::vector<int> labels(z.size());
  for (Index i = 0; i < z.size(); ++i) labels[i] = z[i] > threshold ? 1 : 0;
  return labels;
}

#define RWM_INSTANTIATE(S)                                                               \
  template class DetectorModel<S>;                                                       \
  template DetectorModel<S> build_detector<S>(const DetectorConfig&);                    \
  template Tensor<S> as_batch(const Tensor<S>&);                                         \
  template Tensor<S> forward_logits(const DetectorModel<S>&, const Tensor<S>&);          \
  template Eigen::ArrayXd logits_no_grad(const DetectorModel<S>&, const Tensor<S>&, Index); \
  template std::vector<int> predict(const DetectorModel<S>&, const Tensor<S>&, double);
RWM_INSTANTIATE(float)
RWM_INSTANTIATE(double)
#undef RWM_INSTANTIATE

}  // namespace rwm
