#pragma once

#include "rwm/ndgrad/ops.hpp"
#include "rwm/rng.hpp"

#include <string>
#include <variant>
#include <vector>

namespace rwm {

// Transformation families. Random parameters are drawn per item when a
// pipeline is sampled; the fields hold the distribution parameters.

/// Additive N(0, sigma^2) noise, then clipped to [0,1].
struct GaussianNoise {
  double sigma = 0.0;
};
/// Rotation by an angle drawn uniformly from [-max_angle, max_angle].
struct Rotation {
  double max_angle = 0.0;
};
/// Remove crop_h rows and crop_w columns at a uniform offset, resize back.
struct Crop {
  Index crop_h = 0;
  Index crop_w = 0;
};
/// Mirror the width axis with probability 1/2.
struct HorizontalFlip {};
/// Blend toward white by a factor drawn uniformly from [0, max_factor].
struct Brightness {
  double max_factor = 0.0;
};
/// Gaussian filter, radius ceil(3 sigma), reflect padding.
struct Blur {
  double sigma = 0.0;
};
/// mu + factor * (x - mu) around the per-image mean, clipped.
struct Contrast {
  double factor = 1.0;
};
/// 8x8 block DCT quantization. Evaluation only.
struct JpegLike {
  int quality = 100;
};
/// Keep each watermarked pixel with probability keep_percent / 100, else
/// restore the original. Needs the original signal.
struct PixelDropout {
  double keep_percent = 100.0;
};

using TransformSpec = std::variant<GaussianNoise, Rotation, Crop, HorizontalFlip, Brightness,
                                   Blur, Contrast, JpegLike, PixelDropout>;

std::string kind_name(const TransformSpec& spec);
bool is_differentiable(const TransformSpec& spec);
void validate(const TransformSpec& spec);

enum class PipelineMode { single_random, composition };

struct TransformPipeline {
  std::vector<TransformSpec> specs;
  PipelineMode mode = PipelineMode::composition;
  std::uint64_t seed = 0;

  void validate() const;
  bool differentiable() const;
};

/// Concrete per-item parameters for one spec applied to one batch.
struct TransformDraw {
  TransformSpec spec;
  std::vector<char> active;    // per item; inactive items pass through
  std::vector<double> value;   // angle, brightness factor, or flip flag
  std::vector<Index> offset_y, offset_x;
  Eigen::ArrayXd field;        // noise (N*C*H*W) or dropout mask (N*H*W)
};

/// One sampled realization of a pipeline for a batch. Applying the same
/// draw to two batches transforms them identically.
struct PipelineDraw {
  std::vector<TransformDraw> steps;
  bool differentiable() const;
};

PipelineDraw sample_draw(const TransformPipeline& pipe, const Shape& batch_shape, Rng& rng);

/// Identity pipeline draw (no steps).
inline PipelineDraw identity_draw() { return {}; }

/// `original` is required when the draw contains PixelDropout.
template <typename Scalar>
Tensor<Scalar> apply_draw(const PipelineDraw& draw, const Tensor<Scalar>& batch,
                          const Tensor<Scalar>* original = nullptr);

/// Samples and applies. Throws InvalidState if an evaluation-only transform
/// would be applied to a signal that requires gradients.
template <typename Scalar>
Tensor<Scalar> apply_pipeline(const TransformPipeline& pipe, const Tensor<Scalar>& signal, Rng& rng,
                              const Tensor<Scalar>* original = nullptr);

// Direct operations. Signals may be (C,H,W) or batches (N,C,H,W); the same
// parameter applies to every item.

template <typename Scalar>
Tensor<Scalar> gaussian_noise(const Tensor<Scalar>& s, double sigma, Rng& rng);
template <typename Scalar>
Tensor<Scalar> rotate(const Tensor<Scalar>& s, double angle);
template <typename Scalar>
Tensor<Scalar> crop_resize(const Tensor<Scalar>& s, Index crop_h, Index crop_w, Rng& rng);
template <typename Scalar>
Tensor<Scalar> crop_resize_at(const Tensor<Scalar>& s, Index crop_h, Index crop_w, Index offset_y,
                              Index offset_x);
template <typename Scalar>
Tensor<Scalar> hflip(const Tensor<Scalar>& s, Rng& rng);
template <typename Scalar>
Tensor<Scalar> flip_width(const Tensor<Scalar>& s);
template <typename Scalar>
Tensor<Scalar> brightness(const Tensor<Scalar>& s, double factor);
template <typename Scalar>
Tensor<Scalar> blur(const Tensor<Scalar>& s, double sigma);
template <typename Scalar>
Tensor<Scalar> contrast(const Tensor<Scalar>& s, double factor);
/// Not differentiable; the result is a fresh leaf.
template <typename Scalar>
Tensor<Scalar> jpeg_like(const Tensor<Scalar>& s, int quality);
template <typename Scalar>
Tensor<Scalar> pixel_dropout(const Tensor<Scalar>& watermarked, const Tensor<Scalar>& original,
                             double keep_percent, Rng& rng);

// Text forms: one spec is `kind param=value ...`, e.g. `crop h=10 w=10`.
// A pipeline file holds an optional `mode single_random|composition` line,
// an optional `seed N` line and one spec per line; `#` starts a comment.

std::string format_spec(const TransformSpec& spec);
TransformSpec parse_spec(const std::string& line);
std::string format_pipeline(const TransformPipeline& pipe);
TransformPipeline parse_pipeline(const std::string& text);
/// Single-line description, `identity` for no transforms.
std::string pipeline_label(const TransformPipeline& pipe);

/// Bilinear resampling maps of a single image, exposed for testing.
Resampling rotation_map(Index h, Index w, double angle);
Resampling crop_resize_map(Index h, Index w, Index crop_h, Index crop_w, Index offset_y, Index offset_x);

/// Standard JPEG luminance table scaled for a quality in [1,100].
std::array<int, 64> jpeg_quant_table(int quality);

}  // namespace rwm
