#include "rwm/harness.hpp"

#include "rwm/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <set>

namespace rwm {
namespace {

void check_batch(const Tensor<Real>& signals, const char* what) {
  if (signals.ndim() != 4) throw InvalidArgument(std::string(what) + ": expected an (N,C,H,W) batch");
}

void check_ascending(std::span<const double> grid, const char* what) {
  if (grid.empty()) throw InvalidArgument(std::string(what) + ": empty grid");
  for (std::size_t i = 1; i < grid.size(); ++i)
    if (!(grid[i] > grid[i - 1])) throw InvalidArgument(std::string(what) + ": grid must be strictly ascending");
}

PipelineDraw draw_for(const TransformPipeline& pipe, const Shape& shape, std::uint64_t seed) {
  if (pipe.specs.empty()) return identity_draw();
  Rng rng(seed);
  return sample_draw(pipe, shape, rng);
}

std::optional<TransformPipeline> embedding_pipe(const TransformPipeline* pipe) {
  if (!pipe || pipe->specs.empty()) return std::nullopt;
  return differentiable_part(*pipe);
}

int count_ones(const std::vector<int>& labels) { return static_cast<int>(std::count(labels.begin(), labels.end(), 1)); }

AttackResult attack_at(const DetectorModel<Real>& model, const Tensor<Real>& signals, const TransformPipeline& pipe,
                       double epsilon, const AttackOptions& opts, std::uint64_t base) {
  WatermarkConfig wm = opts.wm;
  wm.epsilon = epsilon;
  const auto embed_pipe = opts.embed_with_transforms ? embedding_pipe(&pipe) : std::nullopt;
  const Tensor<Real> marked = pgd_embed(model, signals, wm, embed_pipe ? &*embed_pipe : nullptr);

  NoGradGuard no_grad;
  AttackResult r;
  r.transform = pipe;
  r.epsilon = epsilon;
  r.n_signals = signals.dim(0);
  r.n_variants = opts.n_variants;
  r.mean_ssim_watermark = r.n_signals ? batch_ssim(marked, signals).mean() : 1.0;

  double ssim_sum = 0.0, psnr_sum = 0.0;
  Index psnr_count = 0;
  auto add_fidelity = [&](const Tensor<Real>& out, const Tensor<Real>& in) {
    ssim_sum += batch_ssim(out, in).sum();
    for (double p : batch_psnr(out, in))
      if (std::isfinite(p)) {
        psnr_sum += p;
        ++psnr_count;
      }
  };
  for (Index v = 0; v < opts.n_variants; ++v) {
    const PipelineDraw draw = draw_for(pipe, signals.shape(), Rng::derive(base, static_cast<std::uint64_t>(v)));
    const Tensor<Real> tw = apply_draw(draw, marked, &signals);
    const Tensor<Real> tc = apply_draw(draw, signals, &signals);
    const auto pw = predict(model, tw, opts.threshold);
    const auto pc = predict(model, tc, opts.threshold);
    r.missed_watermarked += r.n_signals - count_ones(pw);
    r.flagged_clean += count_ones(pc);
    add_fidelity(tw, marked);
    add_fidelity(tc, signals);
  }
  const double trials = static_cast<double>(r.trials());
  r.success_rate_watermarked = trials > 0 ? r.missed_watermarked / trials : 0.0;
  r.success_rate_clean = trials > 0 ? r.flagged_clean / trials : 0.0;
  r.mean_ssim_transform = trials > 0 ? ssim_sum / (2.0 * trials) : 1.0;
  r.mean_psnr_transform = psnr_count > 0 ? psnr_sum / static_cast<double>(psnr_count) : kPsnrIdentical;
  return r;
}

void check_options(const AttackOptions& opts) {
  if (opts.n_variants < 1) throw InvalidArgument("attack: n_variants must be >= 1");
}

}  // namespace

TransformPipeline single_transform(const TransformSpec& spec) {
  TransformPipeline pipe;
  pipe.specs = {spec};
  return pipe;
}

std::vector<AttackResult> transformation_attack_curve(const DetectorModel<Real>& model, const Tensor<Real>& signals,
                                                      const TransformPipeline& pipe,
                                                      std::span<const double> epsilons, const AttackOptions& opts,
                                                      Rng& rng) {
  check_options(opts);
  check_batch(signals, "attack curve");
  if (!pipe.specs.empty()) pipe.validate();
  const std::uint64_t base = rng.next_u64();
  std::vector<AttackResult> out;
  for (double eps : epsilons) out.push_back(attack_at(model, signals, pipe, eps, opts, base));
  return out;
}

MinEpsilonResult min_epsilon_full_detection(const DetectorModel<Real>& model, const Tensor<Real>& signals,
                                            const TransformPipeline& pipe, std::span<const double> eps_grid,
                                            const AttackOptions& opts, Rng& rng, double target_accuracy) {
  check_options(opts);
  check_batch(signals, "min epsilon");
  check_ascending(eps_grid, "min epsilon");
  if (!pipe.specs.empty()) pipe.validate();
  const std::uint64_t base = rng.next_u64();
  MinEpsilonResult res;
  res.best_accuracy = -1.0;
  for (double eps : eps_grid) {
    AttackResult r = attack_at(model, signals, pipe, eps, opts, base);
    res.evaluated.push_back(r);
    const double acc = r.detection_accuracy();
    if (acc > res.best_accuracy) {
      res.best_accuracy = acc;
      res.metrics = r;
      res.epsilon = eps;
    }
    if (acc > target_accuracy || target_accuracy <= 0.0) {
      res.found = true;
      res.epsilon = eps;
      res.metrics = r;
      break;
    }
  }
  return res;
}

std::vector<TransferPoint> specificity_transfer_eval(const std::vector<DetectorModel<Real>>& sources,
                                                     const DetectorModel<Real>& target, const Tensor<Real>& signals,
                                                     std::span<const double> epsilons, const WatermarkConfig& wm,
                                                     Rng& rng, const TransformPipeline* embed_pipe,
                                                     double threshold) {
  if (sources.empty()) throw InvalidArgument("specificity: at least one source model is required");
  check_batch(signals, "specificity");
  const auto pipe = embedding_pipe(embed_pipe);
  const std::uint64_t base = rng.next_u64();
  std::vector<TransferPoint> out;
  for (double eps : epsilons) {
    TransferPoint p;
    p.epsilon = eps;
    double ssim_sum = 0.0;
    for (std::size_t k = 0; k < sources.size(); ++k) {
      WatermarkConfig cfg = wm;
      cfg.epsilon = eps;
      cfg.seed = Rng::derive(base, k);
      const Tensor<Real> marked = pgd_embed(sources[k], signals, cfg, pipe ? &*pipe : nullptr);
      NoGradGuard no_grad;
      p.detected += count_ones(predict(target, marked, threshold));
      p.total += signals.dim(0);
      if (signals.dim(0) > 0) ssim_sum += batch_ssim(marked, signals).sum();
    }
    p.mean_ssim = p.total > 0 ? ssim_sum / static_cast<double>(p.total) : 1.0;
    p.false_positive_rate = p.total > 0 ? static_cast<double>(p.detected) / static_cast<double>(p.total) : 0.0;
    out.push_back(p);
  }
  return out;
}

std::vector<TransformSpec> ood_transforms() {
  return {Blur{3.0},        Brightness{0.2}, Contrast{0.7}, Crop{8, 8},
          GaussianNoise{0.1}, JpegLike{50},  Rotation{std::numbers::pi / 2}};
}

double OodMatrix::off_diagonal_mean(Index row) const {
  const Index n = accuracy.cols();
  if (n < 2) return 0.0;
  return (accuracy.row(row).sum() - accuracy(row, row)) / static_cast<double>(n - 1);
}

double OodMatrix::off_diagonal_mean() const {
  const Index n = accuracy.rows();
  if (n < 2) return 0.0;
  return (accuracy.sum() - accuracy.diagonal().sum()) / static_cast<double>(n * (n - 1));
}

double transformed_accuracy(const DetectorModel<Real>& model, const Tensor<Real>& clean,
                            const Tensor<Real>& watermarked, const TransformPipeline& pipe, Index n_variants,
                            Rng& rng, Index* correct, double threshold) {
  check_batch(clean, "transformed accuracy");
  if (clean.shape() != watermarked.shape()) throw InvalidArgument("transformed accuracy: shape mismatch");
  if (n_variants < 1) throw InvalidArgument("transformed accuracy: n_variants must be >= 1");
  NoGradGuard no_grad;
  const std::uint64_t base = rng.next_u64();
  Index right = 0;
  const Index n = clean.dim(0);
  for (Index v = 0; v < n_variants; ++v) {
    const PipelineDraw draw = draw_for(pipe, clean.shape(), Rng::derive(base, static_cast<std::uint64_t>(v)));
    right += count_ones(predict(model, apply_draw(draw, watermarked, &clean), threshold));
    right += n - count_ones(predict(model, apply_draw(draw, clean, &clean), threshold));
  }
  if (correct) *correct = right;
  const Index trials = 2 * n * n_variants;
  return trials > 0 ? static_cast<double>(right) / static_cast<double>(trials) : 1.0;
}

OodMatrix ood_holdout_eval(const Dataset& data, const std::vector<TransformSpec>& specs, const OodOptions& opts,
                           Rng& rng, const std::function<void(Index row, const OodMatrix&)>& on_row) {
  std::multiset<std::string> expected, given;
  for (const auto& s : ood_transforms()) expected.insert(kind_name(s));
  for (const auto& s : specs) {
    validate(s);
    given.insert(kind_name(s));
  }
  if (given != expected)
    throw InvalidArgument(
        "ood: expected one each of blur, brightness, contrast, crop, gaussian_noise, jpeg_like, rotation");
  check_batch(data.test, "ood");

  const Index n = static_cast<Index>(specs.size());
  OodMatrix m;
  for (const auto& s : specs) m.names.push_back(kind_name(s));
  m.accuracy = Eigen::MatrixXd::Zero(n, n);
  m.correct = Eigen::MatrixXi::Zero(n, n);
  m.trials_per_cell = 2 * data.test.dim(0) * opts.n_variants;

  const std::uint64_t base = rng.next_u64();
  for (Index row = 0; row < n; ++row) {
    TrainConfig cfg = opts.train;
    cfg.pipe.specs.clear();
    for (Index j = 0; j < n; ++j)
      if (j != row) cfg.pipe.specs.push_back(specs[j]);
    const auto trained = train(build_detector<Real>(opts.arch), data.train, cfg).model;

    const auto embed_pipe = differentiable_part(cfg.pipe);
    const Tensor<Real> marked = pgd_embed(trained, data.test, opts.embed, embed_pipe ? &*embed_pipe : nullptr);
    for (Index col = 0; col < n; ++col) {
      Rng cell(Rng::derive(base, static_cast<std::uint64_t>(col)));
      Index right = 0;
      m.accuracy(row, col) = transformed_accuracy(trained, data.test, marked, single_transform(specs[col]),
                                                  opts.n_variants, cell, &right, opts.threshold);
      m.correct(row, col) = static_cast<int>(right);
    }
    if (on_row) on_row(row, m);
  }
  return m;
}

std::vector<Certificate> certify_all(const BatchClassifier& classify, const Tensor<Real>& signals, double sigma,
                                     Index n, double alpha, Rng& rng) {
  check_batch(signals, "certify");
  const std::uint64_t base = rng.next_u64();
  std::vector<Certificate> out;
  for (Index i = 0; i < signals.dim(0); ++i) {
    Rng item(Rng::derive(base, static_cast<std::uint64_t>(i)));
    out.push_back(certify(classify, reshape(slice(signals, i, i + 1), Shape(signals.shape().begin() + 1,
                                                                           signals.shape().end())),
                          sigma, n, alpha, item));
  }
  return out;
}

std::vector<CertifiedPoint> certified_accuracy_curve(const std::vector<Certificate>& certificates,
                                                     std::span<const double> radii) {
  check_ascending(radii, "certified curve");
  std::vector<CertifiedPoint> out;
  for (double r : radii) {
    CertifiedPoint p;
    p.radius = r;
    p.total = static_cast<Index>(certificates.size());
    for (const auto& c : certificates)
      if (!c.abstained && c.predicted_label == 1 && c.radius >= r) ++p.certified;
    p.certified_accuracy = p.total > 0 ? static_cast<double>(p.certified) / static_cast<double>(p.total) : 0.0;
    out.push_back(p);
  }
  return out;
}

std::vector<CertifiedPoint> certified_accuracy_curve(const DetectorModel<Real>& model,
                                                     const Tensor<Real>& watermarked, double sigma, Index n,
                                                     double alpha, std::span<const double> radii, Rng& rng) {
  check_ascending(radii, "certified curve");
  return certified_accuracy_curve(certify_all(as_classifier(model), watermarked, sigma, n, alpha, rng), radii);
}

BitRecoveryPoint bit_recovery(const std::vector<BitCode>& decoded, const std::vector<BitCode>& codes) {
  if (codes.size() != 1 && codes.size() != decoded.size())
    throw InvalidArgument("bit recovery: need one code or one per decoded signal");
  BitRecoveryPoint p;
  for (std::size_t i = 0; i < decoded.size(); ++i) {
    const BitCode& ref = codes.size() == 1 ? codes[0] : codes[i];
    if (ref.size() != decoded[i].size()) throw InvalidArgument("bit recovery: code length mismatch");
    for (std::size_t b = 0; b < ref.size(); ++b) p.matched += (ref[b] != 0) == (decoded[i][b] != 0);
    p.total += static_cast<Index>(ref.size());
  }
  p.recovery = p.total > 0 ? static_cast<double>(p.matched) / static_cast<double>(p.total) : 0.0;
  return p;
}

std::vector<BitRecoveryPoint> multibit_robustness_curve(const DetectorModel<Real>& model, const Tensor<Real>& signals,
                                                        const std::vector<BitCode>& codes,
                                                        const std::vector<TransformPipeline>& sweep,
                                                        const WatermarkConfig& wm, Index n_variants, Rng& rng,
                                                        const TransformPipeline* embed_pipe) {
  if (!model.is_multibit()) throw InvalidArgument("multibit curve: model has a single logit");
  if (n_variants < 1) throw InvalidArgument("multibit curve: n_variants must be >= 1");
  check_batch(signals, "multibit curve");
  const auto pipe = embedding_pipe(embed_pipe);
  const Tensor<Real> marked = embed_multibit(model, signals, codes, wm, pipe ? &*pipe : nullptr);
  NoGradGuard no_grad;
  const std::uint64_t base = rng.next_u64();
  std::vector<BitRecoveryPoint> out;
  for (std::size_t s = 0; s < sweep.size(); ++s) {
    if (!sweep[s].specs.empty()) sweep[s].validate();
    BitRecoveryPoint total;
    total.label = pipeline_label(sweep[s]);
    for (Index v = 0; v < n_variants; ++v) {
      const PipelineDraw draw =
          draw_for(sweep[s], signals.shape(), Rng::derive(Rng::derive(base, s), static_cast<std::uint64_t>(v)));
      const auto p = bit_recovery(decode_multibit(model, apply_draw(draw, marked, &signals)), codes);
      total.matched += p.matched;
      total.total += p.total;
    }
    total.recovery = total.total > 0 ? static_cast<double>(total.matched) / static_cast<double>(total.total) : 0.0;
    out.push_back(total);
  }
  return out;
}

std::vector<BitCode> random_codes(Index n, Index bits, Rng& rng) {
  if (n < 0 || bits < 1) throw InvalidArgument("random codes: need n >= 0 and bits >= 1");
  std::vector<BitCode> out(static_cast<std::size_t>(n), BitCode(static_cast<std::size_t>(bits)));
  for (auto& code : out)
    for (auto& b : code) b = static_cast<std::uint8_t>(rng.integer(0, 1));
  return out;
}

ReportTable attack_table(const std::vector<AttackResult>& results) {
  ReportTable t;
  t.columns = {"transform",         "epsilon",       "n_signals",
               "n_variants",        "trials",        "missed_watermarked",
               "flagged_clean",     "success_rate_watermarked", "success_rate_clean",
               "mean_ssim_watermark", "mean_ssim_transform", "mean_psnr_transform"};
  for (const auto& r : results)
    t.add_row({pipeline_label(r.transform), r.epsilon, std::int64_t(r.n_signals), std::int64_t(r.n_variants),
               std::int64_t(r.trials()), std::int64_t(r.missed_watermarked), std::int64_t(r.flagged_clean),
               r.success_rate_watermarked, r.success_rate_clean, r.mean_ssim_watermark, r.mean_ssim_transform,
               r.mean_psnr_transform});
  return t;
}

ReportTable transfer_table(const std::vector<TransferPoint>& points) {
  ReportTable t;
  t.columns = {"epsilon", "mean_ssim", "detected", "total", "false_positive_rate"};
  for (const auto& p : points)
    t.add_row({p.epsilon, p.mean_ssim, std::int64_t(p.detected), std::int64_t(p.total), p.false_positive_rate});
  return t;
}

ReportTable ood_table(const OodMatrix& m) {
  ReportTable t;
  t.columns = {"held_out", "evaluated", "held_out_cell", "correct", "trials", "accuracy"};
  for (Index i = 0; i < m.accuracy.rows(); ++i)
    for (Index j = 0; j < m.accuracy.cols(); ++j)
      t.add_row({m.names[i], m.names[j], std::int64_t(i == j), std::int64_t(m.correct(i, j)),
                 std::int64_t(m.trials_per_cell), m.accuracy(i, j)});
  return t;
}

ReportTable certified_table(const std::vector<CertifiedPoint>& points) {
  ReportTable t;
  t.columns = {"radius", "certified", "total", "certified_accuracy"};
  for (const auto& p : points)
    t.add_row({p.radius, std::int64_t(p.certified), std::int64_t(p.total), p.certified_accuracy});
  return t;
}

ReportTable certificate_table(const std::vector<Certificate>& certificates) {
  ReportTable t;
  t.columns = {"index", "predicted_label", "abstained", "p_lower", "radius", "samples_used", "sigma", "alpha"};
  for (std::size_t i = 0; i < certificates.size(); ++i) {
    const auto& c = certificates[i];
    t.add_row({std::int64_t(i), std::int64_t(c.predicted_label), std::int64_t(c.abstained), c.p_lower, c.radius,
               std::int64_t(c.samples_used), c.sigma, c.alpha});
  }
  return t;
}

ReportTable bit_recovery_table(const std::vector<BitRecoveryPoint>& points) {
  ReportTable t;
  t.columns = {"transform", "matched", "total", "recovery"};
  for (const auto& p : points) t.add_row({p.label, std::int64_t(p.matched), std::int64_t(p.total), p.recovery});
  return t;
}

ReportTable train_table(const TrainReport& report) {
  ReportTable t;
  t.columns = {"step", "loss", "accuracy", "accuracy_avg", "detection_rate", "epsilon", "lr"};
  for (const auto& r : report.steps)
    t.add_row({std::int64_t(r.step), r.loss, r.accuracy, r.accuracy_avg, r.detection_rate, r.epsilon, r.lr});
  return t;
}

}  // namespace rwm
