#pragma once

#include "rwm/certifier.hpp"
#include "rwm/data.hpp"
#include "rwm/report.hpp"
#include "rwm/trainer.hpp"

#include <optional>
#include <span>

namespace rwm {

struct AttackOptions {
  WatermarkConfig wm;  // epsilon is set per sweep point
  Index n_variants = 100;
  double threshold = 0.0;
  /// Embed with the differentiable part of the attacked pipeline sampled
  /// inside PGD. When false, watermarks are embedded without transformations.
  bool embed_with_transforms = true;
};

/// Misclassification of transformed copies at one epsilon. "Attack success"
/// on watermarked copies is a false negative, on clean copies a false
/// positive.
struct AttackResult {
  TransformPipeline transform;
  double epsilon = 0.0;
  Index n_signals = 0;
  Index n_variants = 0;
  Index missed_watermarked = 0;  // of n_signals * n_variants
  Index flagged_clean = 0;       // of n_signals * n_variants
  double success_rate_watermarked = 0.0;
  double success_rate_clean = 0.0;
  double mean_ssim_watermark = 0.0;  // watermarked vs original
  double mean_ssim_transform = 0.0;  // transformed copy vs its input
  double mean_psnr_transform = 0.0;  // over changed copies; kPsnrIdentical if none changed

  Index trials() const { return n_signals * n_variants; }
  double detection_accuracy() const { return 1.0 - success_rate_watermarked; }
};

/// Single transformation as a pipeline.
TransformPipeline single_transform(const TransformSpec& spec);

/// Variant v of every epsilon uses the same draw, shared by the clean and
/// watermarked copies, so the clean rate does not depend on epsilon.
std::vector<AttackResult> transformation_attack_curve(const DetectorModel<Real>& model, const Tensor<Real>& signals,
                                                      const TransformPipeline& pipe,
                                                      std::span<const double> epsilons, const AttackOptions& opts,
                                                      Rng& rng);

struct MinEpsilonResult {
  bool found = false;
  double epsilon = 0.0;        // smallest qualifying grid value when found
  double best_accuracy = 0.0;  // best watermarked detection accuracy seen
  AttackResult metrics;        // at epsilon, or at the best grid value
  std::vector<AttackResult> evaluated;
};

/// Smallest grid epsilon whose watermarked detection accuracy exceeds
/// `target_accuracy`. A target <= 0 accepts the first grid value.
MinEpsilonResult min_epsilon_full_detection(const DetectorModel<Real>& model, const Tensor<Real>& signals,
                                            const TransformPipeline& pipe, std::span<const double> eps_grid,
                                            const AttackOptions& opts, Rng& rng, double target_accuracy = 0.99);

struct TransferPoint {
  double epsilon = 0.0;
  double mean_ssim = 0.0;
  Index detected = 0;  // flagged by the target
  Index total = 0;     // signals times sources
  double false_positive_rate = 0.0;
};

/// Watermarks embedded with each source model, scored by the target.
std::vector<TransferPoint> specificity_transfer_eval(const std::vector<DetectorModel<Real>>& sources,
                                                     const DetectorModel<Real>& target, const Tensor<Real>& signals,
                                                     std::span<const double> epsilons, const WatermarkConfig& wm,
                                                     Rng& rng, const TransformPipeline* embed_pipe = nullptr,
                                                     double threshold = 0.0);

/// Blur 3, brightness 0.2, contrast 0.7, crop 8, noise 0.1, jpeg 50,
/// rotation pi/2.
std::vector<TransformSpec> ood_transforms();

struct OodOptions {
  DetectorConfig arch;
  TrainConfig train;  // pipe.specs is replaced per row, mode is kept
  WatermarkConfig embed;
  Index n_variants = 1;
  double threshold = 0.0;
};

struct OodMatrix {
  std::vector<std::string> names;
  Eigen::MatrixXd accuracy;   // row: held-out transform, column: evaluated transform
  Eigen::MatrixXi correct;
  Index trials_per_cell = 0;  // clean plus watermarked copies

  double off_diagonal_mean(Index row) const;
  double off_diagonal_mean() const;
};

/// Accuracy over transformed copies of clean and matching watermarked
/// signals. Each variant draws one transformation shared by both halves.
double transformed_accuracy(const DetectorModel<Real>& model, const Tensor<Real>& clean,
                            const Tensor<Real>& watermarked, const TransformPipeline& pipe, Index n_variants,
                            Rng& rng, Index* correct = nullptr, double threshold = 0.0);

/// Trains one detector per held-out transform on the other six and scores it
/// on all seven. `on_row` reports each finished row.
OodMatrix ood_holdout_eval(const Dataset& data, const std::vector<TransformSpec>& specs, const OodOptions& opts,
                           Rng& rng, const std::function<void(Index row, const OodMatrix&)>& on_row = {});

struct CertifiedPoint {
  double radius = 0.0;
  Index certified = 0;
  Index total = 0;
  double certified_accuracy = 0.0;
};

std::vector<Certificate> certify_all(const BatchClassifier& classify, const Tensor<Real>& signals, double sigma,
                                     Index n, double alpha, Rng& rng);

/// Fraction of signals certified as watermarked with radius >= r.
std::vector<CertifiedPoint> certified_accuracy_curve(const std::vector<Certificate>& certificates,
                                                     std::span<const double> radii);
std::vector<CertifiedPoint> certified_accuracy_curve(const DetectorModel<Real>& model,
                                                     const Tensor<Real>& watermarked, double sigma, Index n,
                                                     double alpha, std::span<const double> radii, Rng& rng);

struct BitRecoveryPoint {
  std::string label;
  Index matched = 0;
  Index total = 0;
  double recovery = 0.0;
};

/// Matching bits between decoded and reference codes (one or one per row).
BitRecoveryPoint bit_recovery(const std::vector<BitCode>& decoded, const std::vector<BitCode>& codes);

/// Embeds each (signal, code), applies every sweep pipeline and decodes. An
/// empty pipeline in the sweep means no transformation.
std::vector<BitRecoveryPoint> multibit_robustness_curve(const DetectorModel<Real>& model, const Tensor<Real>& signals,
                                                        const std::vector<BitCode>& codes,
                                                        const std::vector<TransformPipeline>& sweep,
                                                        const WatermarkConfig& wm, Index n_variants, Rng& rng,
                                                        const TransformPipeline* embed_pipe = nullptr);

/// n random codes of `bits` bits.
std::vector<BitCode> random_codes(Index n, Index bits, Rng& rng);

// CSV schemas.
ReportTable attack_table(const std::vector<AttackResult>& results);
ReportTable transfer_table(const std::vector<TransferPoint>& points);
ReportTable ood_table(const OodMatrix& matrix);
ReportTable certified_table(const std::vector<CertifiedPoint>& points);
ReportTable certificate_table(const std::vector<Certificate>& certificates);
ReportTable bit_recovery_table(const std::vector<BitRecoveryPoint>& points);
ReportTable train_table(const TrainReport& report);

}  // namespace rwm
