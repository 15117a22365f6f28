#include "rwm/trainer.hpp"

#include "rwm/metrics.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <deque>
#include <numeric>
#include <set>

namespace rwm {

void TrainConfig::validate() const {
  if (steps < 0) throw InvalidArgument("steps must be nonnegative");
  if (batch_size < 1) throw InvalidArgument("batch_size must be positive");
  if (!(lr > 0.0)) throw InvalidArgument("lr must be positive");
  if (!(lr_decay_factor > 0.0)) throw InvalidArgument("lr_decay_factor must be positive");
  if (lr_decay_every < 1) throw InvalidArgument("lr_decay_every must be positive");
  if (momentum < 0.0 || momentum >= 1.0) throw InvalidArgument("momentum must lie in [0,1)");
  if (transform_samples_per_step < 1) throw InvalidArgument("transform_samples_per_step must be positive");
  if (report_window < 1) throw InvalidArgument("report_window must be positive");
  if (adaptive_epsilon && (adaptive_epsilon->delta < 0.0 || adaptive_epsilon->window < 1)) {
    throw InvalidArgument("adaptive epsilon needs delta >= 0 and window >= 1");
  }
  if (!pipe.specs.empty()) pipe.validate();
  wm.validate();
}

double TrainConfig::lr_at(int step) const { return lr * std::pow(lr_decay_factor, step / lr_decay_every); }

std::optional<TransformPipeline> differentiable_part(const TransformPipeline& pipe) {
  TransformPipeline out{{}, pipe.mode, pipe.seed};
  for (const auto& s : pipe.specs)
    if (is_differentiable(s)) out.specs.push_back(s);
  if (out.specs.empty()) return std::nullopt;
  return out;
}

namespace {

template <typename Scalar>
Tensor<Scalar> gather(const Tensor<Scalar>& data, const std::vector<Index>& rows) {
  const Index per = data.size() / data.dim(0);
  Shape shape = data.shape();
  shape[0] = Index(rows.size());
  typename Tensor<Scalar>::Array out(Index(rows.size()) * per);
  for (std::size_t i = 0; i < rows.size(); ++i) out.segment(Index(i) * per, per) = data.data().segment(rows[i] * per, per);
  return Tensor<Scalar>(std::move(shape), std::move(out));
}

// Reshuffled epochs of fixed-size minibatches; a short tail is dropped.
class BatchSampler {
 public:
  BatchSampler(Index n, int batch, std::uint64_t seed) : n_(n), batch_(std::min<Index>(batch, n)), seed_(seed) {}

  std::vector<Index> next() {
    if (pos_ + batch_ > Index(order_.size())) {
      order_.resize(n_);
      std::iota(order_.begin(), order_.end(), Index(0));
      Rng rng(Rng::derive(seed_, epoch_++));
      std::shuffle(order_.begin(), order_.end(), rng.engine());
      pos_ = 0;
    }
    std::vector<Index> rows(order_.begin() + pos_, order_.begin() + pos_ + batch_);
    pos_ += batch_;
    return rows;
  }

 private:
  Index n_, batch_;
  std::uint64_t seed_;
  std::uint64_t epoch_ = 0;
  std::vector<Index> order_;
  Index pos_ = 0;
};

template <typename Scalar>
std::vector<PipelineDraw> sample_draws(const TransformPipeline& pipe, int count, const Shape& shape, Rng& rng) {
  std::vector<PipelineDraw> draws;
  if (pipe.specs.empty()) {
    draws.push_back(identity_draw());
    return draws;
  }
  for (int j = 0; j < count; ++j) draws.push_back(sample_draw(pipe, shape, rng));
  return draws;
}

template <typename Scalar>
using StepFn = std::function<StepStats(DetectorModel<Scalar>&, const Tensor<Scalar>&, Rng&, Sgd<Scalar>&, double,
                                       const WatermarkConfig&)>;

template <typename Scalar>
TrainResult<Scalar> run_loop(const DetectorModel<Scalar>& initial, const Tensor<Scalar>& dataset,
                             const TrainConfig& cfg, const StepFn<Scalar>& step_fn, const StepCallback<Scalar>& on_step) {
  cfg.validate();
  if (dataset.ndim() != 4 || dataset.dim(0) == 0) throw InvalidArgument("training dataset is empty");
  if (Shape(dataset.shape().begin() + 1, dataset.shape().end()) != initial.config().input_shape()) {
    throw InvalidArgument("dataset items " + shape_str(dataset.shape()) + " do not match the model input " +
                          shape_str(initial.config().input_shape()));
  }
  TrainResult<Scalar> result{initial.clone(), {}};
  DetectorModel<Scalar>& model = result.model;
  model.set_requires_grad(true);
  Sgd<Scalar> optimizer(cfg.momentum);
  BatchSampler sampler(dataset.dim(0), cfg.batch_size, Rng::derive(cfg.seed, 0x5eed));
  WatermarkConfig wm = cfg.wm;
  std::deque<double> detections, accuracies;
  const auto start = std::chrono::steady_clock::now();

  for (int step = 0; step < cfg.steps; ++step) {
    const Tensor<Scalar> batch = gather(dataset, sampler.next());
    Rng rng(Rng::derive(cfg.seed, 2 * std::uint64_t(step) + 1));
    WatermarkConfig step_wm = wm;
    step_wm.seed = Rng::derive(cfg.wm.seed ^ cfg.seed, 2 * std::uint64_t(step) + 2);
    const double lr = cfg.lr_at(step);
    const StepStats stats = step_fn(model, batch, rng, optimizer, lr, step_wm);

    accuracies.push_back(stats.accuracy);
    if (Index(accuracies.size()) > cfg.report_window) accuracies.pop_front();
    StepRecord rec;
    rec.step = step;
    rec.loss = stats.loss;
    rec.accuracy = stats.accuracy;
    rec.accuracy_avg = std::accumulate(accuracies.begin(), accuracies.end(), 0.0) / double(accuracies.size());
    rec.detection_rate = stats.detection_rate;
    rec.epsilon = wm.epsilon;
    rec.lr = lr;
    rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    result.report.steps.push_back(rec);

    if (cfg.adaptive_epsilon) {
      detections.push_back(stats.detection_rate);
      if (int(detections.size()) > cfg.adaptive_epsilon->window) detections.pop_front();
      const bool full = int(detections.size()) == cfg.adaptive_epsilon->window;
      if (full && std::all_of(detections.begin(), detections.end(), [](double d) { return d >= 1.0; })) {
        wm.epsilon = std::max(0.0, wm.epsilon - cfg.adaptive_epsilon->delta);
      }
    }
    if (on_step) on_step(step, model);
  }
  model.set_requires_grad(false);
  return result;
}

}  // namespace

template <typename Scalar>
StepStats train_step(DetectorModel<Scalar>& model, const Tensor<Scalar>& clean, const TrainConfig& cfg, Rng& rng,
                     Sgd<Scalar>& optimizer, double lr, const WatermarkConfig& wm, const WatermarkFn<Scalar>& watermark) {
  if (model.is_multibit()) throw InvalidArgument("train_step needs a zero-bit model; use train_multibit");
  const Tensor<Scalar> s = clean.detach();
  Tensor<Scalar> marked;
  if (watermark) {
    marked = watermark(model, s, wm);
  } else {
    const auto pgd_pipe = differentiable_part(cfg.pipe);
    marked = pgd_embed(model, s, wm, pgd_pipe ? &*pgd_pipe : nullptr);
  }
  marked = marked.detach();

  const Index n = s.dim(0);
  Tensor<Scalar> labels(Shape{2 * n, 1});
  labels.data().head(n).setOnes();
  std::vector<Tensor<Scalar>> per_draw;
  Eigen::ArrayXd first_logits;
  for (const auto& draw : sample_draws<Scalar>(cfg.pipe, cfg.transform_samples_per_step, s.shape(), rng)) {
    // The same transformation instance is applied to both halves.
    const std::vector<Tensor<Scalar>> halves{apply_draw(draw, marked, &s), apply_draw(draw, s, &s)};
    const Tensor<Scalar> logits = forward_logits(model, concat(std::span<const Tensor<Scalar>>(halves)));
    if (first_logits.size() == 0) first_logits = logits.data().template cast<double>();
    const Tensor<Scalar> per = bce_with_logits(logits, labels, Reduction::per_sample);
    per_draw.push_back(add(slice(per, 0, n), slice(per, n, 2 * n)));
  }
  const Tensor<Scalar> loss =
      mean(per_draw.size() == 1 ? per_draw[0] : max_of(std::span<const Tensor<Scalar>>(per_draw)));
  backward(loss);
  auto params = model.parameters();
  optimizer.step(std::span<Tensor<Scalar>>(params), lr);

  StepStats st;
  st.loss = loss.item();
  Index detected = 0, rejected = 0;
  for (Index i = 0; i < n; ++i) {
    detected += first_logits[i] > 0.0;
    rejected += first_logits[n + i] <= 0.0;
  }
  st.detection_rate = n ? double(detected) / n : 0.0;
  st.accuracy = n ? double(detected + rejected) / (2.0 * n) : 0.0;
  return st;
}

template <typename Scalar>
double clean_vs_watermarked_accuracy(const DetectorModel<Scalar>& model, const Tensor<Scalar>& test,
                                     const WatermarkConfig& wm) {
  const Tensor<Scalar> marked = pgd_embed(model, test, wm);
  const Index n = test.dim(0);
  const std::vector<Tensor<Scalar>> both{marked, test};
  std::vector<int> labels(2 * n, 0);
  std::fill(labels.begin(), labels.begin() + n, 1);
  return detection_accuracy(model, concat(std::span<const Tensor<Scalar>>(both)), labels);
}

template <typename Scalar>
TrainResult<Scalar> train(const DetectorModel<Scalar>& model, const Tensor<Scalar>& dataset, const TrainConfig& cfg,
                          const Tensor<Scalar>* test, const StepCallback<Scalar>& on_step) {
  if (model.is_multibit()) throw InvalidArgument("train needs a zero-bit model; use train_multibit");
  auto result = run_loop<Scalar>(
      model, dataset, cfg,
      [&](DetectorModel<Scalar>& m, const Tensor<Scalar>& batch, Rng& rng, Sgd<Scalar>& opt, double lr,
          const WatermarkConfig& wm) { return train_step(m, batch, cfg, rng, opt, lr, wm); },
      on_step);
  if (test) {
    WatermarkConfig wm = cfg.wm;
    if (!result.report.steps.empty()) wm.epsilon = result.report.steps.back().epsilon;
    result.report.test_accuracy = clean_vs_watermarked_accuracy(result.model, *test, wm);
  }
  return result;
}

template <typename Scalar>
std::vector<DetectorModel<Scalar>> train_ensemble(const DetectorConfig& arch, const std::vector<std::uint64_t>& seeds,
                                                  const Tensor<Scalar>& dataset, const TrainConfig& cfg) {
  if (seeds.empty()) throw InvalidArgument("train_ensemble: no seeds");
  if (std::set<std::uint64_t>(seeds.begin(), seeds.end()).size() != seeds.size()) {
    throw InvalidArgument("train_ensemble: seeds must be distinct");
  }
  std::vector<DetectorModel<Scalar>> out;
  for (std::uint64_t seed : seeds) {
    DetectorConfig c = arch;
    c.seed = seed;
    out.push_back(train(build_detector<Scalar>(c), dataset, cfg).model);
  }
  return out;
}

template <typename Scalar>
TrainResult<Scalar> train_specificity_hardened(const DetectorModel<Scalar>& model,
                                               const std::vector<DetectorModel<Scalar>>& ensemble,
                                               const Tensor<Scalar>& dataset, const TrainConfig& cfg,
                                               const Tensor<Scalar>* test, const StepCallback<Scalar>& on_step) {
  if (ensemble.empty()) throw InvalidArgument("train_specificity_hardened: ensemble is empty");
  const auto pgd_pipe = differentiable_part(cfg.pipe);
  const WatermarkFn<Scalar> hardened = [&](const DetectorModel<Scalar>& m, const Tensor<Scalar>& clean,
                                           const WatermarkConfig& wm) {
    return pgd_embed_ensemble(m, ensemble, clean, wm, pgd_pipe ? &*pgd_pipe : nullptr);
  };
  auto result = run_loop<Scalar>(
      model, dataset, cfg,
      [&](DetectorModel<Scalar>& m, const Tensor<Scalar>& batch, Rng& rng, Sgd<Scalar>& opt, double lr,
          const WatermarkConfig& wm) { return train_step(m, batch, cfg, rng, opt, lr, wm, hardened); },
      on_step);
  if (test) result.report.test_accuracy = clean_vs_watermarked_accuracy(result.model, *test, cfg.wm);
  return result;
}

template <typename Scalar>
TrainResult<Scalar> train_multibit(const DetectorModel<Scalar>& model, const Tensor<Scalar>& dataset,
                                   const TrainConfig& cfg, const StepCallback<Scalar>& on_step) {
  if (!model.is_multibit()) throw InvalidArgument("train_multibit needs a multi-bit head");
  const auto pgd_pipe = differentiable_part(cfg.pipe);
  const Index bits = model.head_dim();
  return run_loop<Scalar>(
      model, dataset, cfg,
      [&](DetectorModel<Scalar>& m, const Tensor<Scalar>& batch, Rng& rng, Sgd<Scalar>& opt, double lr,
          const WatermarkConfig& wm) {
        const Index n = batch.dim(0);
        std::vector<BitCode> codes(n, BitCode(bits));
        for (auto& c : codes)
          for (auto& b : c) b = rng.bernoulli(0.5) ? 1 : 0;
        const Tensor<Scalar> code_t = codes_tensor<Scalar>(codes, n, bits);
        const Tensor<Scalar> marked = embed_multibit(m, batch, codes, wm, pgd_pipe ? &*pgd_pipe : nullptr).detach();

        std::vector<Tensor<Scalar>> per_draw;
        Eigen::ArrayXd first;
        for (const auto& draw : sample_draws<Scalar>(cfg.pipe, cfg.transform_samples_per_step, batch.shape(), rng)) {
          const Tensor<Scalar> logits = forward_logits(m, apply_draw(draw, marked, &batch));
          if (first.size() == 0) first = logits.data().template cast<double>();
          per_draw.push_back(hinge_multibit(logits, code_t, Reduction::per_sample));
        }
        const Tensor<Scalar> loss =
            mean(per_draw.size() == 1 ? per_draw[0] : max_of(std::span<const Tensor<Scalar>>(per_draw)));
        backward(loss);
        auto params = m.parameters();
        opt.step(std::span<Tensor<Scalar>>(params), lr);

        Index hits = 0;
        for (Index i = 0; i < first.size(); ++i) hits += (first[i] > 0.0) == (code_t.data()[i] > 0.5);
        StepStats st;
        st.loss = loss.item();
        st.accuracy = st.detection_rate = first.size() ? double(hits) / double(first.size()) : 0.0;
        return st;
      },
      on_step);
}

#define RWM_INSTANTIATE(S)                                                                                           \
  template StepStats train_step(DetectorModel<S>&, const Tensor<S>&, const TrainConfig&, Rng&, Sgd<S>&, double,     \
                                const WatermarkConfig&, const WatermarkFn<S>&);                                     \
  template TrainResult<S> train(const DetectorModel<S>&, const Tensor<S>&, const TrainConfig&, const Tensor<S>*,    \
                                const StepCallback<S>&);                                                            \
  template std::vector<DetectorModel<S>> train_ensemble(const DetectorConfig&, const std::vector<std::uint64_t>&,   \
                                                        const Tensor<S>&, const TrainConfig&);                      \
  template TrainResult<S> train_specificity_hardened(const DetectorModel<S>&, const std::vector<DetectorModel<S>>&, \
                                                     const Tensor<S>&, const TrainConfig&, const Tensor<S>*,        \
                                                     const StepCallback<S>&);                                       \
  template TrainResult<S> train_multibit(const DetectorModel<S>&, const Tensor<S>&, const TrainConfig&,             \
                                         const StepCallback<S>&);                                                   \
  template double clean_vs_watermarked_accuracy(const DetectorModel<S>&, const Tensor<S>&, const WatermarkConfig&);

RWM_INSTANTIATE(float)
RWM_INSTANTIATE(double)

}  // namespace rwm
