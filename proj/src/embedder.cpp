#include "rwm/embedder.hpp"

#include <functional>

namespace rwm {

double WatermarkConfig::effective_step_size() const {
  if (step_size > 0.0) return step_size;
  return steps > 0 ? 2.5 * epsilon / steps : 0.0;
}

void WatermarkConfig::validate() const {
  if (!(epsilon >= 0.0 && epsilon <= 1.0)) throw InvalidArgument("epsilon must lie in [0,1]");
  if (steps < 0) throw InvalidArgument("steps must be nonnegative");
  if (step_size < 0.0) throw InvalidArgument("step_size must be positive");
  if (transform_samples < 0) throw InvalidArgument("transform_samples must be nonnegative");
  if (chunk < 1) throw InvalidArgument("chunk must be positive");
}

template <typename Scalar>
Tensor<Scalar> project_linf(const Tensor<Scalar>& x, const Tensor<Scalar>& center, double epsilon) {
  if (x.shape() != center.shape()) {
    throw InvalidArgument("project_linf: shape " + shape_str(x.shape()) + " vs " + shape_str(center.shape()));
  }
  typename Tensor<Scalar>::Array out(x.size());
  for (Index i = 0; i < x.size(); ++i) {
    const double c = center.data()[i];
    const double lo = std::max(c - epsilon, 0.0), hi = std::min(c + epsilon, 1.0);
    out[i] = Scalar(std::clamp(double(x.data()[i]), lo, hi));
  }
  return Tensor<Scalar>(x.shape(), std::move(out));
}

namespace {

// Per-sample loss (N,1) of the current watermarked batch for one draw.
template <typename Scalar>
using DrawLoss = std::function<Tensor<Scalar>(const Tensor<Scalar>& transformed)>;

template <typename Scalar>
Tensor<Scalar> ones_labels(Index n) {
  return Tensor<Scalar>::full({n, 1}, Scalar(1));
}

template <typename Scalar>
Tensor<Scalar> reduce_draws(std::vector<Tensor<Scalar>>& per_draw, DrawReduction r) {
  if (per_draw.size() == 1) return per_draw.front();
  std::span<const Tensor<Scalar>> parts(per_draw);
  return r == DrawReduction::max ? max_of(parts) : mean_of(parts);
}

template <typename Scalar>
DetectorModel<Scalar> frozen(const DetectorModel<Scalar>& model) {
  DetectorModel<Scalar> m = model.clone();
  m.set_requires_grad(false);
  return m;
}

void check_pipe(const TransformPipeline* pipe) {
  if (pipe == nullptr) return;
  pipe->validate();
  if (!pipe->differentiable()) {
    throw InvalidState("evaluation-only transform cannot be used while embedding");
  }
}

// Signed-gradient descent of a per-sample objective inside the l-inf ball.
// `objective(x_hat, draws)` returns the (N,1) loss for the chunk.
template <typename Scalar>
Tensor<Scalar> pgd(const Tensor<Scalar>& signal, const WatermarkConfig& cfg, const TransformPipeline* pipe,
                   const std::function<Tensor<Scalar>(const Tensor<Scalar>&, const std::vector<PipelineDraw>&,
                                                      Index chunk_index)>& objective) {
  cfg.validate();
  const Tensor<Scalar> batch = as_batch(signal.detach());
  for (Index i = 0; i < batch.size(); ++i) {
    if (!(batch.data()[i] >= 0 && batch.data()[i] <= 1)) throw InvalidArgument("signal values must lie in [0,1]");
  }
  if (cfg.epsilon == 0.0 || cfg.steps == 0) return signal.detach().clone();

  // Embedding needs input gradients even inside a caller's no-grad scope.
  EnableGradGuard enable_grad;
  const Index n = batch.dim(0), per = n > 0 ? batch.size() / n : 0;
  const double alpha = cfg.effective_step_size();
  const int samples = pipe ? cfg.transform_samples : 0;
  typename Tensor<Scalar>::Array result(batch.size());

  for (Index start = 0, chunk_index = 0; start < n; start += cfg.chunk, ++chunk_index) {
    const Index end = std::min(n, start + cfg.chunk);
    const Tensor<Scalar> s = slice(batch, start, end);
    Rng rng(Rng::derive(cfg.seed, std::uint64_t(chunk_index)));
    Tensor<Scalar> x_hat = s.clone();
    for (int k = 0; k < cfg.steps; ++k) {
      std::vector<PipelineDraw> draws;
      for (int j = 0; j < samples; ++j) draws.push_back(sample_draw(*pipe, s.shape(), rng));
      if (draws.empty()) draws.push_back(identity_draw());

      Tensor<Scalar> x(s.shape(), x_hat.data(), true);
      backward(sum(objective(x, draws, chunk_index)));
      const auto& g = x.grad();
      typename Tensor<Scalar>::Array stepped(x.size());
      for (Index i = 0; i < x.size(); ++i) {
        const Scalar sg = Scalar((g[i] > 0) - (g[i] < 0));
        stepped[i] = x_hat.data()[i] - Scalar(alpha) * sg;
      }
      x_hat = project_linf(Tensor<Scalar>(s.shape(), std::move(stepped)), s, cfg.epsilon);
    }
    result.segment(start * per, x_hat.size()) = x_hat.data();
  }
  return Tensor<Scalar>(signal.shape(), std::move(result));
}

}  // namespace

template <typename Scalar>
Tensor<Scalar> pgd_embed(const DetectorModel<Scalar>& model, const Tensor<Scalar>& signal,
                         const WatermarkConfig& cfg, const TransformPipeline* pipe) {
  if (model.is_multibit()) throw InvalidArgument("pgd_embed needs a zero-bit model; use embed_multibit");
  check_pipe(pipe);
  const DetectorModel<Scalar> f = frozen(model);
  return pgd<Scalar>(signal, cfg, pipe, [&](const Tensor<Scalar>& x, const std::vector<PipelineDraw>& draws, Index) {
    std::vector<Tensor<Scalar>> per;
    for (const auto& d : draws) {
      per.push_back(bce_with_logits(forward_logits(f, apply_draw(d, x)), ones_labels<Scalar>(x.dim(0)),
                                    Reduction::per_sample));
    }
    return reduce_draws(per, cfg.draw_reduction);
  });
}

template <typename Scalar>
Tensor<Scalar> pgd_embed_ensemble(const DetectorModel<Scalar>& target,
                                  const std::vector<DetectorModel<Scalar>>& ensemble,
                                  const Tensor<Scalar>& signal, const WatermarkConfig& cfg,
                                  const TransformPipeline* pipe) {
  if (ensemble.empty()) throw InvalidArgument("pgd_embed_ensemble: ensemble is empty");
  if (target.is_multibit()) throw InvalidArgument("pgd_embed_ensemble needs a zero-bit target");
  for (const auto& m : ensemble) {
    if (m.is_multibit()) throw InvalidArgument("pgd_embed_ensemble: ensemble members must be zero-bit");
    if (m.config().input_shape() != target.config().input_shape()) {
      throw InvalidArgument("pgd_embed_ensemble: ensemble input shape differs from the target");
    }
  }
  check_pipe(pipe);
  const DetectorModel<Scalar> f = frozen(target);
  std::vector<DetectorModel<Scalar>> others;
  for (const auto& m : ensemble) others.push_back(frozen(m));

  return pgd<Scalar>(signal, cfg, pipe, [&](const Tensor<Scalar>& x, const std::vector<PipelineDraw>& draws, Index) {
    const Index n = x.dim(0);
    const Tensor<Scalar> ones = ones_labels<Scalar>(n), zeros(Shape{n, 1});
    std::vector<Tensor<Scalar>> toward_one;
    std::vector<std::vector<Tensor<Scalar>>> toward_zero(others.size());
    for (const auto& d : draws) {
      const Tensor<Scalar> t = apply_draw(d, x);
      toward_one.push_back(bce_with_logits(forward_logits(f, t), ones, Reduction::per_sample));
      for (std::size_t m = 0; m < others.size(); ++m) {
        toward_zero[m].push_back(bce_with_logits(forward_logits(others[m], t), zeros, Reduction::per_sample));
      }
    }
    Tensor<Scalar> away;
    if (cfg.ensemble_reduction == EnsembleReduction::joint_max) {
      std::vector<Tensor<Scalar>> all;
      for (auto& v : toward_zero) all.insert(all.end(), v.begin(), v.end());
      away = cfg.draw_reduction == DrawReduction::max ? max_of(std::span<const Tensor<Scalar>>(all))
                                                      : mean_of(std::span<const Tensor<Scalar>>(all));
    } else {
      for (auto& v : toward_zero) {
        Tensor<Scalar> term = reduce_draws(v, cfg.draw_reduction);
        away = away.size() == 0 ? term : add(away, term);
      }
    }
    return add(reduce_draws(toward_one, cfg.draw_reduction), away);
  });
}

template <typename Scalar>
Tensor<Scalar> codes_tensor(const std::vector<BitCode>& codes, Index n_rows, Index n_bits) {
  if (codes.size() != 1 && Index(codes.size()) != n_rows) {
    throw InvalidArgument("expected one code or one per signal, got " + std::to_string(codes.size()));
  }
  Tensor<Scalar> t(Shape{n_rows, n_bits});
  for (Index r = 0; r < n_rows; ++r) {
    const BitCode& c = codes.size() == 1 ? codes[0] : codes[r];
    if (Index(c.size()) != n_bits) {
      throw InvalidArgument("code length " + std::to_string(c.size()) + " does not match head size " +
                            std::to_string(n_bits));
    }
    for (Index j = 0; j < n_bits; ++j) {
      if (c[j] > 1) throw InvalidArgument("code bits must be 0 or 1");
      t.data()[r * n_bits + j] = Scalar(c[j]);
    }
  }
  return t;
}

template <typename Scalar>
Tensor<Scalar> embed_multibit(const DetectorModel<Scalar>& model, const Tensor<Scalar>& signal,
                              const std::vector<BitCode>& codes, const WatermarkConfig& cfg,
                              const TransformPipeline* pipe) {
  const Index n = as_batch(signal).dim(0), bits = model.head_dim();
  const Tensor<Scalar> all_codes = codes_tensor<Scalar>(codes, n, bits);
  check_pipe(pipe);
  const DetectorModel<Scalar> f = frozen(model);
  return pgd<Scalar>(signal, cfg, pipe,
                     [&](const Tensor<Scalar>& x, const std::vector<PipelineDraw>& draws, Index chunk_index) {
                       const Index begin = chunk_index * cfg.chunk;
                       const Tensor<Scalar> c = slice(all_codes, begin, begin + x.dim(0));
                       std::vector<Tensor<Scalar>> per;
                       for (const auto& d : draws) {
                         per.push_back(hinge_multibit(forward_logits(f, apply_draw(d, x)), c, Reduction::per_sample));
                       }
                       return reduce_draws(per, cfg.draw_reduction);
                     });
}

template <typename Scalar>
int detect_zero_bit(const DetectorModel<Scalar>& model, const Tensor<Scalar>& signal, double threshold) {
  if (signal.ndim() != 3) throw InvalidArgument("detect_zero_bit expects a single (C,H,W) signal");
  return predict(model, signal, threshold).front();
}

template <typename Scalar>
std::vector<BitCode> decode_multibit(const DetectorModel<Scalar>& model, const Tensor<Scalar>& signal) {
  if (!model.is_multibit()) throw InvalidArgument("decode_multibit needs a multi-bit model");
  const Eigen::ArrayXd logits = logits_no_grad(model, signal);
  const Index bits = model.head_dim(), n = logits.size() / bits;
  std::vector<BitCode> out(n, BitCode(bits));
  for (Index i = 0; i < n; ++i)
    for (Index j = 0; j < bits; ++j) out[i][j] = logits[i * bits + j] > 0.0 ? 1 : 0;
  return out;
}

#define RWM_INSTANTIATE(S)                                                                                    \
  template Tensor<S> project_linf(const Tensor<S>&, const Tensor<S>&, double);                               \
  template Tensor<S> pgd_embed(const DetectorModel<S>&, const Tensor<S>&, const WatermarkConfig&,            \
                               const TransformPipeline*);                                                    \
  template Tensor<S> pgd_embed_ensemble(const DetectorModel<S>&, const std::vector<DetectorModel<S>>&,       \
                                        const Tensor<S>&, const WatermarkConfig&, const TransformPipeline*); \
  template Tensor<S> embed_multibit(const DetectorModel<S>&, const Tensor<S>&, const std::vector<BitCode>&,  \
                                    const WatermarkConfig&, const TransformPipeline*);                       \
  template int detect_zero_bit(const DetectorModel<S>&, const Tensor<S>&, double);                           \
  template std::vector<BitCode> decode_multibit(const DetectorModel<S>&, const Tensor<S>&);                  \
  template Tensor<S> codes_tensor(const std::vector<BitCode>&, Index, Index);

RWM_INSTANTIATE(float)
RWM_INSTANTIATE(double)

}  // namespace rwm
