#include "rwm/data.hpp"

#include "rwm/rng.hpp"

#include <cmath>

namespace rwm {

std::string generator_name(Generator g) {
  switch (g) {
    case Generator::gaussian_field: return "gaussian_field";
    case Generator::shapes: return "shapes";
    case Generator::mixed: return "mixed";
  }
  return "?";
}

Generator parse_generator(const std::string& name) {
  if (name == "gaussian_field") return Generator::gaussian_field;
  if (name == "shapes") return Generator::shapes;
  if (name == "mixed") return Generator::mixed;
  throw InvalidArgument("unknown generator '" + name + "' (gaussian_field, shapes, mixed)");
}

void SynthDatasetSpec::validate() const {
  if (count < 2) throw InvalidArgument("dataset count must be at least 2");
  if (channels < 1 || height < 1 || width < 1) throw InvalidArgument("dataset shape must be positive");
  if (!(correlation_length >= 0.0)) throw InvalidArgument("correlation_length must be nonnegative");
  if (max_shapes < 1) throw InvalidArgument("max_shapes must be positive");
  if (!(train_fraction > 0.0 && train_fraction < 1.0)) {
    throw InvalidArgument("train_fraction must lie strictly between 0 and 1");
  }
  const Index k = train_count();
  if (k < 1 || k >= count) throw InvalidArgument("both splits must be non-empty");
}

Index SynthDatasetSpec::train_count() const { return Index(std::llround(double(count) * train_fraction)); }

namespace {

// Separable Gaussian smoothing of an (h, w) row-major plane with wrap-around.
void smooth(double* plane, Index h, Index w, double sigma) {
  if (sigma <= 0.0) return;
  const int radius = int(std::ceil(3 * sigma));
  std::vector<double> k(2 * radius + 1);
  double total = 0.0;
  for (int i = -radius; i <= radius; ++i) total += k[i + radius] = std::exp(-0.5 * i * i / (sigma * sigma));
  for (double& v : k) v /= total;
  std::vector<double> tmp(h * w);
  for (Index y = 0; y < h; ++y)
    for (Index x = 0; x < w; ++x) {
      double acc = 0.0;
      for (int i = -radius; i <= radius; ++i) acc += k[i + radius] * plane[y * w + ((x + i) % w + w) % w];
      tmp[y * w + x] = acc;
    }
  for (Index y = 0; y < h; ++y)
    for (Index x = 0; x < w; ++x) {
      double acc = 0.0;
      for (int i = -radius; i <= radius; ++i) acc += k[i + radius] * tmp[((y + i) % h + h) % h * w + x];
      plane[y * w + x] = acc;
    }
}

void gaussian_field(double* out, const SynthDatasetSpec& spec, Rng& rng) {
  const Index plane = spec.height * spec.width;
  const double level = rng.uniform(0.3, 0.7), spread = rng.uniform(0.1, 0.25);
  for (Index c = 0; c < spec.channels; ++c) {
    double* p = out + c * plane;
    for (Index i = 0; i < plane; ++i) p[i] = rng.normal();
    smooth(p, spec.height, spec.width, spec.correlation_length);
    double mean = 0.0, sq = 0.0;
    for (Index i = 0; i < plane; ++i) mean += p[i];
    mean /= double(plane);
    for (Index i = 0; i < plane; ++i) sq += (p[i] - mean) * (p[i] - mean);
    const double sd = std::sqrt(sq / double(plane)) + 1e-12;
    const double shift = level + rng.uniform(-0.1, 0.1);
    for (Index i = 0; i < plane; ++i) p[i] = std::clamp(shift + spread * (p[i] - mean) / sd, 0.0, 1.0);
  }
}

void shapes(double* out, const SynthDatasetSpec& spec, Rng& rng) {
  const Index h = spec.height, w = spec.width, plane = h * w;
  for (Index c = 0; c < spec.channels; ++c) {
    const double bg = rng.uniform(0.0, 1.0);
    std::fill(out + c * plane, out + (c + 1) * plane, bg);
  }
  const int n = int(rng.integer(1, spec.max_shapes));
  std::vector<double> color(spec.channels);
  for (int s = 0; s < n; ++s) {
    for (auto& v : color) v = rng.uniform(0.0, 1.0);
    const bool disc = rng.bernoulli(0.5);
    const double cy = rng.uniform(0, double(h)), cx = rng.uniform(0, double(w));
    const double ry = rng.uniform(2.0, h / 3.0), rx = disc ? ry : rng.uniform(2.0, w / 3.0);
    for (Index y = 0; y < h; ++y)
      for (Index x = 0; x < w; ++x) {
        const double dy = (y + 0.5 - cy) / ry, dx = (x + 0.5 - cx) / rx;
        const bool inside = disc ? dy * dy + dx * dx <= 1.0 : std::abs(dy) <= 1.0 && std::abs(dx) <= 1.0;
        if (!inside) continue;
        for (Index c = 0; c < spec.channels; ++c) out[c * plane + y * w + x] = color[c];
      }
  }
}

}  // namespace

Tensor<Real> synth_item(const SynthDatasetSpec& spec, Index index) {
  Rng rng(Rng::derive(spec.seed, std::uint64_t(index)));
  std::vector<double> buf(spec.channels * spec.height * spec.width);
  Generator g = spec.generator;
  if (g == Generator::mixed) g = rng.bernoulli(0.5) ? Generator::gaussian_field : Generator::shapes;
  if (g == Generator::gaussian_field) {
    gaussian_field(buf.data(), spec, rng);
  } else {
    shapes(buf.data(), spec, rng);
  }
  Tensor<Real> t(Shape{spec.channels, spec.height, spec.width});
  for (Index i = 0; i < t.size(); ++i) t.data()[i] = Real(buf[i]);
  return t;
}

Dataset synth_dataset(const SynthDatasetSpec& spec) {
  spec.validate();
  const Index per = spec.channels * spec.height * spec.width, k = spec.train_count();
  Dataset d{Tensor<Real>(Shape{k, spec.channels, spec.height, spec.width}),
            Tensor<Real>(Shape{spec.count - k, spec.channels, spec.height, spec.width})};
  for (Index i = 0; i < spec.count; ++i) {
    const Tensor<Real> item = synth_item(spec, i);
    auto& dst = i < k ? d.train : d.test;
    dst.data().segment((i < k ? i : i - k) * per, per) = item.data();
  }
  return d;
}

}  // namespace rwm
