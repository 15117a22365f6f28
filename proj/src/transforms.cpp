#include "rwm/transforms.hpp"

#include <Eigen/Dense>

#include <array>
#include <cmath>
#include <numbers>

namespace rwm {
namespace {

template <class... Fs>
struct Overloaded : Fs... {
  using Fs::operator()...;
};

struct BatchDims {
  Index n, c, h, w;
};

BatchDims dims_of(const Shape& shape) {
  if (shape.size() != 4) throw InvalidArgument("transform: expected (N,C,H,W), got " + shape_str(shape));
  return {shape[0], shape[1], shape[2], shape[3]};
}

// Bilinear weights for sampling at (y, x) written to the taps of output
// pixel `p`; taps outside the image are dropped (zero fill).
void bilinear_taps(Resampling& r, Index sample, Index p, double y, double x) {
  auto snap = [](double v) {
    const double near = std::round(v);
    return std::abs(v - near) < 1e-9 ? near : v;
  };
  y = snap(y);
  x = snap(x);
  const double fy0 = std::floor(y), fx0 = std::floor(x);
  const double ty = y - fy0, tx = x - fx0;
  const Index y0 = Index(fy0), x0 = Index(fx0);
  const double wy[2] = {1.0 - ty, ty}, wx[2] = {1.0 - tx, tx};
  Index o = r.offset(sample, p);
  for (int a = 0; a < 2; ++a) {
    for (int b = 0; b < 2; ++b) {
      const double weight = wy[a] * wx[b];
      const Index yy = y0 + a, xx = x0 + b;
      if (weight == 0.0 || yy < 0 || yy >= r.in_h || xx < 0 || xx >= r.in_w) continue;
      r.index[o] = std::int32_t(yy * r.in_w + xx);
      r.weight[o] = weight;
      ++o;
    }
  }
}

void fill_rotation(Resampling& r, Index sample, double angle) {
  const Index h = r.in_h, w = r.in_w;
  const double cy = 0.5 * double(h - 1), cx = 0.5 * double(w - 1);
  const double c = std::cos(angle), s = std::sin(angle);
  for (Index y = 0; y < h; ++y) {
    for (Index x = 0; x < w; ++x) {
      const double dy = double(y) - cy, dx = double(x) - cx;
      // Inverse rotation: where does this output pixel come from.
      bilinear_taps(r, sample, y * w + x, cy - s * dx + c * dy, cx + c * dx + s * dy);
    }
  }
}

void check_crop(Index h, Index w, Index crop_h, Index crop_w) {
  if (crop_h < 0 || crop_w < 0 || crop_h >= h || crop_w >= w) {
    throw InvalidArgument("crop_resize: crop (" + std::to_string(crop_h) + "," + std::to_string(crop_w) +
                          ") must be smaller than the image (" + std::to_string(h) + "," + std::to_string(w) + ")");
  }
}

void fill_crop(Resampling& r, Index sample, Index crop_h, Index crop_w, Index offset_y, Index offset_x) {
  const Index h = r.in_h, w = r.in_w;
  check_crop(h, w, crop_h, crop_w);
  if (offset_y < 0 || offset_y > crop_h || offset_x < 0 || offset_x > crop_w) {
    throw InvalidArgument("crop_resize: offset outside the crop margin");
  }
  const Index ch = h - crop_h, cw = w - crop_w;
  const double ry = double(ch) / double(h), rx = double(cw) / double(w);
  for (Index y = 0; y < h; ++y) {
    const double sy = std::clamp((y + 0.5) * ry - 0.5, 0.0, double(ch - 1)) + double(offset_y);
    for (Index x = 0; x < w; ++x) {
      const double sx = std::clamp((x + 0.5) * rx - 0.5, 0.0, double(cw - 1)) + double(offset_x);
      bilinear_taps(r, sample, y * w + x, sy, sx);
    }
  }
}

void fill_flip(Resampling& r, Index sample) {
  for (Index y = 0; y < r.in_h; ++y)
    for (Index x = 0; x < r.in_w; ++x) {
      const Index o = r.offset(sample, y * r.in_w + x);
      r.index[o] = std::int32_t(y * r.in_w + (r.in_w - 1 - x));
      r.weight[o] = 1.0;
    }
}

Index reflect_index(Index i, Index n) {
  if (n == 1) return 0;
  const Index period = 2 * n;
  i %= period;
  if (i < 0) i += period;
  return i < n ? i : period - 1 - i;
}

std::vector<double> gaussian_kernel(double sigma) {
  const Index radius = Index(std::ceil(3.0 * sigma));
  std::vector<double> k(2 * radius + 1);
  double total = 0.0;
  for (Index i = -radius; i <= radius; ++i) {
    k[i + radius] = std::exp(-double(i * i) / (2.0 * sigma * sigma));
    total += k[i + radius];
  }
  for (double& v : k) v /= total;
  return k;
}

// One separable Gaussian pass with reflect padding, along rows (vertical)
// or columns. Reflected taps landing on the same pixel are merged.
void fill_blur_pass(Resampling& r, Index sample, const std::vector<double>& kernel, bool vertical) {
  const Index radius = Index(kernel.size() / 2), h = r.in_h, w = r.in_w;
  for (Index y = 0; y < h; ++y)
    for (Index x = 0; x < w; ++x) {
      const Index o = r.offset(sample, y * w + x);
      Index used = 0;
      for (Index d = -radius; d <= radius; ++d) {
        const std::int32_t src = std::int32_t(vertical ? reflect_index(y + d, h) * w + x
                                                       : y * w + reflect_index(x + d, w));
        Index t = 0;
        while (t < used && r.index[o + t] != src) ++t;
        if (t == used) {
          r.index[o + t] = src;
          ++used;
        }
        r.weight[o + t] += kernel[d + radius];
      }
    }
}

template <typename Scalar>
Tensor<Scalar> apply_map(const Tensor<Scalar>& x, Resampling&& r) {
  return resample(x, std::make_shared<const Resampling>(std::move(r)));
}

// Batches of one are lifted and restored so callers may pass (C,H,W).
template <typename Scalar, typename F>
Tensor<Scalar> on_batch(const Tensor<Scalar>& s, F&& f) {
  if (s.ndim() == 4) return f(s);
  if (s.ndim() != 3) throw InvalidArgument("transform: expected (C,H,W) or (N,C,H,W), got " + shape_str(s.shape()));
  Tensor<Scalar> out = f(reshape(s, Shape{1, s.dim(0), s.dim(1), s.dim(2)}));
  return reshape(out, s.shape());
}

constexpr std::array<int, 64> kLuminance = {
    16, 11, 10, 16, 24,  40,  51,  61,  12, 12, 14, 19, 26,  58,  60,  55,
    14, 13, 16, 24, 40,  57,  69,  56,  14, 17, 22, 29, 51,  87,  80,  62,
    18, 22, 37, 56, 68,  109, 103, 77,  24, 35, 55, 64, 81,  104, 113, 92,
    49, 64, 78, 87, 103, 121, 120, 101, 72, 92, 95, 98, 112, 100, 103, 99};

Eigen::Matrix<double, 8, 8> dct_matrix() {
  Eigen::Matrix<double, 8, 8> d;
  for (int u = 0; u < 8; ++u) {
    const double cu = u == 0 ? std::sqrt(1.0 / 8.0) : std::sqrt(2.0 / 8.0);
    for (int x = 0; x < 8; ++x) d(u, x) = cu * std::cos((2 * x + 1) * u * std::numbers::pi / 16.0);
  }
  return d;
}

// In-place codec round trip on one H x W plane of values in [0,1].
void jpeg_plane(double* plane, Index h, Index w, const std::array<int, 64>& q) {
  static const Eigen::Matrix<double, 8, 8> d = dct_matrix();
  Eigen::Matrix<double, 8, 8> block, coef;
  for (Index by = 0; by < h; by += 8) {
    for (Index bx = 0; bx < w; bx += 8) {
      // Partial edge blocks replicate the last row/column.
      for (int y = 0; y < 8; ++y) {
        for (int x = 0; x < 8; ++x) {
          const Index yy = std::min(by + y, h - 1), xx = std::min(bx + x, w - 1);
          block(y, x) = plane[yy * w + xx] * 255.0 - 128.0;
        }
      }
      coef = d * block * d.transpose();
      for (int u = 0; u < 8; ++u) {
        for (int v = 0; v < 8; ++v) {
          const double step = q[u * 8 + v];
          coef(u, v) = std::round(coef(u, v) / step) * step;
        }
      }
      block = d.transpose() * coef * d;
      for (int y = 0; y < 8 && by + y < h; ++y) {
        for (int x = 0; x < 8 && bx + x < w; ++x) {
          plane[(by + y) * w + bx + x] = std::clamp((block(y, x) + 128.0) / 255.0, 0.0, 1.0);
        }
      }
    }
  }
}

template <typename Scalar>
Tensor<Scalar> as_batch_shape(const Tensor<Scalar>& t, const Shape& shape) {
  if (t.shape() == shape) return t;
  if (t.size() != shape_numel(shape)) {
    throw InvalidArgument("original signal " + shape_str(t.shape()) + " does not match " + shape_str(shape));
  }
  return reshape(t, shape);
}

template <typename Scalar>
Tensor<Scalar> apply_step(const TransformDraw& step, const Tensor<Scalar>& x, const Tensor<Scalar>* original) {
  const BatchDims d = dims_of(x.shape());
  auto active = [&](Index i) { return step.active.empty() || step.active[i]; };
  // Per-item map; inactive items pass through.
  auto per_item = [&](const Tensor<Scalar>& in, Index taps, auto&& fill) {
    Resampling r(d.n, d.h, d.w, d.h, d.w, taps);
    for (Index i = 0; i < d.n; ++i) {
      if (active(i)) {
        fill(r, i);
      } else {
        r.set_identity(i);
      }
    }
    return apply_map(in, std::move(r));
  };
  const Index per = d.c * d.h * d.w;

  return std::visit(
      Overloaded{
          [&](const GaussianNoise&) {
            return clamp(add_constant(x, step.field.template cast<Scalar>().eval()), 0.0, 1.0);
          },
          [&](const Rotation&) {
            return per_item(x, 4, [&](Resampling& r, Index i) { fill_rotation(r, i, step.value[i]); });
          },
          [&](const Crop& c) {
            return per_item(x, 4, [&](Resampling& r, Index i) {
              fill_crop(r, i, c.crop_h, c.crop_w, step.offset_y[i], step.offset_x[i]);
            });
          },
          [&](const HorizontalFlip&) {
            return per_item(x, 1, [&](Resampling& r, Index i) {
              if (step.value[i] != 0.0) {
                fill_flip(r, i);
              } else {
                r.set_identity(i);
              }
            });
          },
          [&](const Brightness&) {
            typename Tensor<Scalar>::Array mask(x.size());
            for (Index i = 0; i < d.n; ++i) {
              mask.segment(i * per, per).setConstant(Scalar(active(i) ? 1.0 - step.value[i] : 1.0));
            }
            return blend(x, Tensor<Scalar>::full(x.shape(), Scalar(1)), mask);
          },
          [&](const Blur& b) {
            if (b.sigma == 0.0) return x;
            const auto kernel = gaussian_kernel(b.sigma);
            const Index taps = Index(kernel.size());
            const Tensor<Scalar> v = per_item(x, taps, [&](Resampling& r, Index i) { fill_blur_pass(r, i, kernel, true); });
            return per_item(v, taps, [&](Resampling& r, Index i) { fill_blur_pass(r, i, kernel, false); });
          },
          [&](const Contrast& c) {
            std::vector<double> factors(d.n);
            for (Index i = 0; i < d.n; ++i) factors[i] = active(i) ? c.factor : 1.0;
            return clamp(contrast_about_mean(x, std::span<const double>(factors)), 0.0, 1.0);
          },
          [&](const JpegLike& j) {
            const auto q = jpeg_quant_table(j.quality);
            Eigen::ArrayXd v = x.data().template cast<double>();
            for (Index i = 0; i < d.n; ++i) {
              if (!active(i)) continue;
              for (Index c = 0; c < d.c; ++c) jpeg_plane(v.data() + i * per + c * d.h * d.w, d.h, d.w, q);
            }
            return Tensor<Scalar>(x.shape(), v.template cast<Scalar>());
          },
          [&](const PixelDropout&) {
            if (original == nullptr) throw InvalidArgument("pixel_dropout: original signal required");
            if (original->shape() != x.shape()) {
              throw InvalidArgument("pixel_dropout: shape mismatch " + shape_str(x.shape()) + " vs " +
                                    shape_str(original->shape()));
            }
            typename Tensor<Scalar>::Array mask(x.size());
            const Index hw = d.h * d.w;
            for (Index i = 0; i < d.n; ++i) {
              for (Index c = 0; c < d.c; ++c) {
                for (Index p = 0; p < hw; ++p) {
                  mask[i * per + c * hw + p] = active(i) ? Scalar(step.field[i * hw + p]) : Scalar(1);
                }
              }
            }
            return blend(x, *original, mask);
          },
      },
      step.spec);
}

}  // namespace

std::string kind_name(const TransformSpec& spec) {
  return std::visit(Overloaded{[](const GaussianNoise&) { return "gaussian_noise"; },
                               [](const Rotation&) { return "rotation"; },
                               [](const Crop&) { return "crop"; },
                               [](const HorizontalFlip&) { return "hflip"; },
                               [](const Brightness&) { return "brightness"; },
                               [](const Blur&) { return "blur"; },
                               [](const Contrast&) { return "contrast"; },
                               [](const JpegLike&) { return "jpeg_like"; },
                               [](const PixelDropout&) { return "pixel_dropout"; }},
                    spec);
}

bool is_differentiable(const TransformSpec& spec) {
  return !std::holds_alternative<JpegLike>(spec) && !std::holds_alternative<PixelDropout>(spec);
}

void validate(const TransformSpec& spec) {
  auto fail = [&](const std::string& why) { throw InvalidArgument(kind_name(spec) + ": " + why); };
  std::visit(Overloaded{
                 [&](const GaussianNoise& t) { if (!(t.sigma >= 0.0)) fail("sigma must be >= 0"); },
                 [&](const Rotation& t) { if (!std::isfinite(t.max_angle) || t.max_angle < 0.0) fail("angle range must be finite and >= 0"); },
                 [&](const Crop& t) { if (t.crop_h < 0 || t.crop_w < 0) fail("crop must be >= 0"); },
                 [&](const HorizontalFlip&) {},
                 [&](const Brightness& t) { if (!(t.max_factor >= 0.0 && t.max_factor <= 1.0)) fail("factor must be in [0,1]"); },
                 [&](const Blur& t) { if (!(t.sigma >= 0.0)) fail("sigma must be >= 0"); },
                 [&](const Contrast& t) { if (!(t.factor >= 0.0)) fail("factor must be >= 0"); },
                 [&](const JpegLike& t) { if (t.quality < 1 || t.quality > 100) fail("quality must be in [1,100]"); },
                 [&](const PixelDropout& t) { if (!(t.keep_percent >= 0.0 && t.keep_percent <= 100.0)) fail("p must be in [0,100]"); },
             },
             spec);
}

void TransformPipeline::validate() const {
  if (specs.empty()) throw InvalidArgument("pipeline: no transforms");
  for (const auto& s : specs) rwm::validate(s);
}

bool TransformPipeline::differentiable() const {
  return std::all_of(specs.begin(), specs.end(), [](const auto& s) { return is_differentiable(s); });
}

bool PipelineDraw::differentiable() const {
  return std::all_of(steps.begin(), steps.end(), [](const auto& s) { return is_differentiable(s.spec); });
}

Resampling rotation_map(Index h, Index w, double angle) {
  Resampling r(1, h, w, h, w, 4);
  fill_rotation(r, 0, angle);
  return r;
}

Resampling crop_resize_map(Index h, Index w, Index crop_h, Index crop_w, Index offset_y, Index offset_x) {
  Resampling r(1, h, w, h, w, 4);
  fill_crop(r, 0, crop_h, crop_w, offset_y, offset_x);
  return r;
}

std::array<int, 64> jpeg_quant_table(int quality) {
  if (quality < 1 || quality > 100) throw InvalidArgument("jpeg_like: quality must be in [1,100]");
  const int scale = quality < 50 ? 5000 / quality : 200 - 2 * quality;
  std::array<int, 64> q{};
  for (int i = 0; i < 64; ++i) q[i] = std::clamp((kLuminance[i] * scale + 50) / 100, 1, 255);
  return q;
}

PipelineDraw sample_draw(const TransformPipeline& pipe, const Shape& batch_shape, Rng& rng) {
  pipe.validate();
  const BatchDims d = dims_of(batch_shape);
  const Index k = Index(pipe.specs.size());
  std::vector<Index> choice(d.n, -1);
  if (pipe.mode == PipelineMode::single_random) {
    for (Index i = 0; i < d.n; ++i) choice[i] = rng.integer(0, k - 1);
  }
  PipelineDraw draw;
  for (Index s = 0; s < k; ++s) {
    TransformDraw step;
    step.spec = pipe.specs[s];
    step.active.assign(d.n, 1);
    if (pipe.mode == PipelineMode::single_random) {
      for (Index i = 0; i < d.n; ++i) step.active[i] = choice[i] == s;
      if (std::none_of(step.active.begin(), step.active.end(), [](char a) { return a; })) continue;
    }
    std::visit(Overloaded{
                   [&](const GaussianNoise& t) {
                     step.field = Eigen::ArrayXd::Zero(d.n * d.c * d.h * d.w);
                     const Index per = d.c * d.h * d.w;
                     for (Index i = 0; i < d.n; ++i) {
                       if (!step.active[i] || t.sigma == 0.0) continue;
                       for (Index j = 0; j < per; ++j) step.field[i * per + j] = rng.normal(0.0, t.sigma);
                     }
                   },
                   [&](const Rotation& t) {
                     for (Index i = 0; i < d.n; ++i) step.value.push_back(rng.uniform(-t.max_angle, t.max_angle));
                   },
                   [&](const Crop& t) {
                     if (t.crop_h >= d.h || t.crop_w >= d.w) {
                       throw InvalidArgument("crop: crop size must be smaller than the image");
                     }
                     for (Index i = 0; i < d.n; ++i) {
                       step.offset_y.push_back(rng.integer(0, t.crop_h));
                       step.offset_x.push_back(rng.integer(0, t.crop_w));
                     }
                   },
                   [&](const HorizontalFlip&) {
                     for (Index i = 0; i < d.n; ++i) step.value.push_back(rng.bernoulli(0.5) ? 1.0 : 0.0);
                   },
                   [&](const Brightness& t) {
                     for (Index i = 0; i < d.n; ++i) step.value.push_back(rng.uniform(0.0, t.max_factor));
                   },
                   [&](const Blur&) {},
                   [&](const Contrast&) {},
                   [&](const JpegLike&) {},
                   [&](const PixelDropout& t) {
                     step.field.resize(d.n * d.h * d.w);
                     for (Index j = 0; j < step.field.size(); ++j) {
                       step.field[j] = rng.bernoulli(t.keep_percent / 100.0) ? 1.0 : 0.0;
                     }
                   },
               },
               step.spec);
    draw.steps.push_back(std::move(step));
  }
  return draw;
}

template <typename Scalar>
Tensor<Scalar> apply_draw(const PipelineDraw& draw, const Tensor<Scalar>& batch, const Tensor<Scalar>* original) {
  if (batch.requires_grad() && grad_enabled() && !draw.differentiable()) {
    throw InvalidState("evaluation-only transform applied to a signal that requires gradients");
  }
  return on_batch(batch, [&](const Tensor<Scalar>& x) {
    const Tensor<Scalar> orig = original ? as_batch_shape(*original, x.shape()) : Tensor<Scalar>();
    Tensor<Scalar> out = x;
    for (const auto& step : draw.steps) out = apply_step(step, out, original ? &orig : nullptr);
    return out;
  });
}

template <typename Scalar>
Tensor<Scalar> apply_pipeline(const TransformPipeline& pipe, const Tensor<Scalar>& signal, Rng& rng,
                              const Tensor<Scalar>* original) {
  if (signal.requires_grad() && grad_enabled() && !pipe.differentiable()) {
    throw InvalidState("evaluation-only transform requested in a gradient context");
  }
  Shape shape = signal.shape();
  if (shape.size() == 3) shape.insert(shape.begin(), 1);
  return apply_draw(sample_draw(pipe, shape, rng), signal, original);
}

namespace {

template <typename Scalar>
Tensor<Scalar> apply_single(const TransformSpec& spec, const Tensor<Scalar>& s, Rng& rng,
                            const Tensor<Scalar>* original = nullptr) {
  validate(spec);
  TransformPipeline pipe{{spec}, PipelineMode::composition, 0};
  return apply_pipeline(pipe, s, rng, original);
}

TransformDraw fixed_draw(TransformSpec spec, Index n) {
  TransformDraw d;
  d.spec = std::move(spec);
  d.active.assign(n, 1);
  return d;
}

template <typename Scalar>
Index batch_count(const Tensor<Scalar>& s) {
  if (s.ndim() == 4) return s.dim(0);
  if (s.ndim() == 3) return 1;
  throw InvalidArgument("transform: expected (C,H,W) or (N,C,H,W), got " + shape_str(s.shape()));
}

}  // namespace

template <typename Scalar>
Tensor<Scalar> gaussian_noise(const Tensor<Scalar>& s, double sigma, Rng& rng) {
  if (!(sigma >= 0.0)) throw InvalidArgument("gaussian_noise: sigma must be >= 0");
  return apply_single(GaussianNoise{sigma}, s, rng);
}

template <typename Scalar>
Tensor<Scalar> rotate(const Tensor<Scalar>& s, double angle) {
  if (!std::isfinite(angle)) throw InvalidArgument("rotate: angle must be finite");
  TransformDraw d = fixed_draw(Rotation{std::abs(angle)}, batch_count(s));
  d.value.assign(d.active.size(), angle);
  return apply_draw(PipelineDraw{{d}}, s);
}

template <typename Scalar>
Tensor<Scalar> crop_resize(const Tensor<Scalar>& s, Index crop_h, Index crop_w, Rng& rng) {
  return apply_single(Crop{crop_h, crop_w}, s, rng);
}

template <typename Scalar>
Tensor<Scalar> crop_resize_at(const Tensor<Scalar>& s, Index crop_h, Index crop_w, Index offset_y,
                              Index offset_x) {
  TransformDraw d = fixed_draw(Crop{crop_h, crop_w}, batch_count(s));
  d.offset_y.assign(d.active.size(), offset_y);
  d.offset_x.assign(d.active.size(), offset_x);
  return apply_draw(PipelineDraw{{d}}, s);
}

template <typename Scalar>
Tensor<Scalar> hflip(const Tensor<Scalar>& s, Rng& rng) {
  return apply_single(HorizontalFlip{}, s, rng);
}

template <typename Scalar>
Tensor<Scalar> flip_width(const Tensor<Scalar>& s) {
  TransformDraw d = fixed_draw(HorizontalFlip{}, batch_count(s));
  d.value.assign(d.active.size(), 1.0);
  return apply_draw(PipelineDraw{{d}}, s);
}

template <typename Scalar>
Tensor<Scalar> brightness(const Tensor<Scalar>& s, double factor) {
  if (!(factor >= 0.0 && factor <= 1.0)) throw InvalidArgument("brightness: factor must be in [0,1]");
  TransformDraw d = fixed_draw(Brightness{factor}, batch_count(s));
  d.value.assign(d.active.size(), factor);
  return apply_draw(PipelineDraw{{d}}, s);
}

template <typename Scalar>
Tensor<Scalar> blur(const Tensor<Scalar>& s, double sigma) {
  if (!(sigma >= 0.0)) throw InvalidArgument("blur: sigma must be >= 0");
  return apply_draw(PipelineDraw{{fixed_draw(Blur{sigma}, batch_count(s))}}, s);
}

template <typename Scalar>
Tensor<Scalar> contrast(const Tensor<Scalar>& s, double factor) {
  if (!(factor >= 0.0)) throw InvalidArgument("contrast: factor must be >= 0");
  return apply_draw(PipelineDraw{{fixed_draw(Contrast{factor}, batch_count(s))}}, s);
}

template <typename Scalar>
Tensor<Scalar> jpeg_like(const Tensor<Scalar>& s, int quality) {
  jpeg_quant_table(quality);
  NoGradGuard guard;
  return apply_draw(PipelineDraw{{fixed_draw(JpegLike{quality}, batch_count(s))}}, s.detach());
}

template <typename Scalar>
Tensor<Scalar> pixel_dropout(const Tensor<Scalar>& watermarked, const Tensor<Scalar>& original,
                             double keep_percent, Rng& rng) {
  if (watermarked.shape() != original.shape()) {
    throw InvalidArgument("pixel_dropout: shape mismatch " + shape_str(watermarked.shape()) + " vs " +
                          shape_str(original.shape()));
  }
  TransformPipeline pipe{{PixelDropout{keep_percent}}, PipelineMode::composition, 0};
  pipe.validate();
  Shape shape = watermarked.shape();
  if (shape.size() == 3) shape.insert(shape.begin(), 1);
  NoGradGuard guard;
  return apply_draw(sample_draw(pipe, shape, rng), watermarked.detach(), &original);
}

#define RWM_INSTANTIATE(S)                                                                          \
  template Tensor<S> apply_draw(const PipelineDraw&, const Tensor<S>&, const Tensor<S>*);           \
  template Tensor<S> apply_pipeline(const TransformPipeline&, const Tensor<S>&, Rng&,               \
                                    const Tensor<S>*);                                              \
  template Tensor<S> gaussian_noise(const Tensor<S>&, double, Rng&);                                \
  template Tensor<S> rotate(const Tensor<S>&, double);                                              \
  template Tensor<S> crop_resize(const Tensor<S>&, Index, Index, Rng&);                             \
  template Tensor<S> crop_resize_at(const Tensor<S>&, Index, Index, Index, Index);                  \
  template Tensor<S> hflip(const Tensor<S>&, Rng&);                                                 \
  template Tensor<S> flip_width(const Tensor<S>&);                                                  \
  template Tensor<S> brightness(const Tensor<S>&, double);                                          \
  template Tensor<S> blur(const Tensor<S>&, double);                                                \
  template Tensor<S> contrast(const Tensor<S>&, double);                                            \
  template Tensor<S> jpeg_like(const Tensor<S>&, int);                                              \
  template Tensor<S> pixel_dropout(const Tensor<S>&, const Tensor<S>&, double, Rng&);
RWM_INSTANTIATE(float)
RWM_INSTANTIATE(double)
#undef RWM_INSTANTIATE

}  // namespace rwm
