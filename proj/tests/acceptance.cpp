// Acceptance suite: one PASS/FAIL line per criterion.
//
//   acceptance [--criteria 1,2,...] [--cache DIR]
//
// Trained desk models are cached in DIR keyed by their full configuration,
// so criteria that share a model train it once.

#include "support/gradcheck.hpp"

#include "rwm/harness.hpp"
#include "rwm/io.hpp"
#include "rwm/metrics.hpp"

#include <CLI11.hpp>

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <map>
#include <numbers>
#include <sstream>
#include <sys/wait.h>

using namespace rwm;
using rwm::testing::GradChecker;
using rwm::testing::TensorD;
namespace fs = std::filesystem;

namespace {

// ---------------------------------------------------------------- setup

constexpr double kEps = 20.0 / 255.0;

struct Verdict {
  bool pass = false;
  std::string detail;
};

struct Clock {
  std::chrono::steady_clock::time_point start = std::chrono::steady_clock::now();
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  }
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

fs::path g_cache;

// 2,000 train and 2,000 test signals, 3x32x32.
const Dataset& desk_data() {
  static const Dataset d = [] {
    SynthDatasetSpec s;
    s.count = 4000;
    s.seed = 1;
    return synth_dataset(s);
  }();
  return d;
}

DetectorConfig desk_arch(std::uint64_t seed = 3, Index head_dim = 1) {
  DetectorConfig c;
  c.channel_widths = {8, 16, 32};
  c.head_dim = head_dim;
  c.seed = seed;
  return c;
}

TransformPipeline composition_pipe() {
  TransformPipeline p;
  p.specs = {GaussianNoise{0.25}, Rotation{std::numbers::pi / 2}, Crop{10, 10}, HorizontalFlip{}, Brightness{0.1}};
  p.mode = PipelineMode::composition;
  return p;
}

TrainConfig desk_train(const TransformPipeline& pipe) {
  TrainConfig c;
  c.steps = 5000;
  c.batch_size = 32;
  c.lr = 0.1;
  c.wm.epsilon = kEps;
  c.wm.steps = 5;
  c.pipe = pipe;
  c.seed = 7;
  return c;
}

std::string describe(const DetectorConfig& a, const TrainConfig& t, const std::string& kind) {
  std::ostringstream o;
  o << kind << " widths";
  for (auto w : a.channel_widths) o << ' ' << w;
  o << " strides";
  for (auto s : a.strides) o << ' ' << s;
  o << " k " << a.kernel_size << " head " << a.head_dim << " init " << a.seed << " | steps " << t.steps << " batch "
    << t.batch_size << " lr " << t.lr << " decay " << t.lr_decay_factor << '/' << t.lr_decay_every << " momentum "
    << t.momentum << " samples " << t.transform_samples_per_step << " seed " << t.seed << " | eps " << t.wm.epsilon
    << " pgd " << t.wm.steps << " embed_samples " << t.wm.transform_samples << " | " << format_pipeline(t.pipe);
  return o.str();
}

struct CachedModel {
  DetectorModel<Real> model;
  double train_seconds = 0.0;
  bool cached = false;
};

// Loads `name` from the cache when its recorded configuration matches,
// otherwise trains and stores it.
CachedModel cached(const std::string& name, const std::string& key,
                   const std::function<DetectorModel<Real>()>& fit) {
  const fs::path path = g_cache / (name + ".rswt");
  if (fs::exists(path)) {
    try {
      auto ck = load_checkpoint(path);
      if (ck.metadata["config"] == key)
        return {std::move(ck.model), std::stod(ck.metadata["train_seconds"]), true};
    } catch (const std::exception& e) {
      std::cerr << "  cache " << path << " unusable: " << e.what() << "\n";
    }
  }
  std::cerr << "  training " << name << " ...\n";
  Clock clock;
  auto model = fit();
  const double secs = clock.seconds();
  fs::create_directories(g_cache);
  save_checkpoint(model, path, {{"config", key}, {"train_seconds", fmt("%.1f", secs)}});
  std::cerr << "  trained " << name << " in " << fmt("%.0f", secs) << " s\n";
  return {std::move(model), secs, false};
}

const CachedModel& robust_model() {
  static const CachedModel m = [] {
    const auto arch = desk_arch();
    const auto cfg = desk_train(composition_pipe());
    return cached("robust", describe(arch, cfg, "zero-bit"),
                  [&] { return train(build_detector<Real>(arch), desk_data().train, cfg).model; });
  }();
  return m;
}

const CachedModel& plain_model() {
  static const CachedModel m = [] {
    const auto arch = desk_arch();
    const auto cfg = desk_train(TransformPipeline{});
    return cached("plain", describe(arch, cfg, "zero-bit"),
                  [&] { return train(build_detector<Real>(arch), desk_data().train, cfg).model; });
  }();
  return m;
}

WatermarkConfig embed_cfg(double eps = kEps) {
  WatermarkConfig w;
  w.epsilon = eps;
  w.steps = 5;
  return w;
}

int count_ones(const std::vector<int>& v) { return static_cast<int>(std::count(v.begin(), v.end(), 1)); }

// Clean first half labelled 0, watermarked second half labelled 1.
double held_out_accuracy(const DetectorModel<Real>& model, const Tensor<Real>& test) {
  const Index half = test.dim(0) / 2;
  const auto clean = slice(test, 0, half);
  const auto marked = pgd_embed(model, slice(test, half, 2 * half), embed_cfg());
  NoGradGuard no_grad;
  const int right = (static_cast<int>(half) - count_ones(predict(model, clean))) + count_ones(predict(model, marked));
  return right / static_cast<double>(2 * half);
}

// ---------------------------------------------------------------- 1

Verdict gradient_suite() {
  Clock clock;
  Rng rng(101);
  GradChecker checker(1e-4, 1e-3);
  constexpr int kInstances = 20;
  int ops = 0, failures = 0;
  double worst = 0.0;
  std::string first_failure;

  // Values kept at least `gap` away from the kinks at `kinks`.
  auto away_from = [&](Shape shape, std::vector<double> kinks, double lo, double hi, double gap = 0.02) {
    TensorD t(std::move(shape), true);
    for (Index i = 0; i < t.size(); ++i) {
      double v;
      do v = rng.uniform(lo, hi);
      while (std::any_of(kinks.begin(), kinks.end(), [&](double k) { return std::abs(v - k) < gap; }));
      t.data()[i] = v;
    }
    return t;
  };
  auto rand = [&](Shape shape, double lo = -1.0, double hi = 1.0) {
    return rwm::testing::random_tensor(std::move(shape), rng, lo, hi);
  };
  auto run = [&](const std::string& name, const std::function<std::pair<GradChecker::Fn, std::vector<TensorD>>()>& make) {
    ++ops;
    for (int k = 0; k < kInstances; ++k) {
      auto [f, in] = make();
      const auto r = checker.check(f, std::move(in), rng);
      worst = std::max(worst, r.worst_rel);
      if (!r.ok) {
        ++failures;
        if (first_failure.empty()) first_failure = name + ": " + r.detail;
      }
    }
  };
  using Inputs = std::vector<TensorD>;
  using Fn = GradChecker::Fn;

  run("add", [&] { return std::pair{Fn([](const Inputs& x) { return add(x[0], x[1]); }), Inputs{rand({5}), rand({5})}}; });
  run("sub", [&] { return std::pair{Fn([](const Inputs& x) { return sub(x[0], x[1]); }), Inputs{rand({5}), rand({5})}}; });
  run("mul", [&] { return std::pair{Fn([](const Inputs& x) { return mul(x[0], x[1]); }), Inputs{rand({5}), rand({5})}}; });
  run("affine", [&] {
    const double a = rng.uniform(-2, 2), b = rng.uniform(-1, 1);
    return std::pair{Fn([=](const Inputs& x) { return affine(x[0], a, b); }), Inputs{rand({6})}};
  });
  run("add_constant", [&] {
    Eigen::ArrayXd c(6);
    for (auto& v : c) v = rng.uniform(-1, 1);
    return std::pair{Fn([=](const Inputs& x) { return add_constant(x[0], c); }), Inputs{rand({6})}};
  });
  run("clamp", [&] {
    return std::pair{Fn([](const Inputs& x) { return clamp(x[0], -0.5, 0.5); }), Inputs{away_from({8}, {-0.5, 0.5}, -1, 1)}};
  });
  run("blend", [&] {
    Eigen::ArrayXd m(6);
    for (auto& v : m) v = rng.uniform(0, 1);
    return std::pair{Fn([=](const Inputs& x) { return blend(x[0], x[1], m); }), Inputs{rand({6}), rand({6})}};
  });
  run("sum", [&] { return std::pair{Fn([](const Inputs& x) { return sum(x[0]); }), Inputs{rand({2, 3})}}; });
  run("mean", [&] { return std::pair{Fn([](const Inputs& x) { return mean(x[0]); }), Inputs{rand({2, 3})}}; });
  run("reshape", [&] { return std::pair{Fn([](const Inputs& x) { return reshape(x[0], {3, 2}); }), Inputs{rand({2, 3})}}; });
  run("concat", [&] {
    return std::pair{Fn([](const Inputs& x) { return concat(std::span<const TensorD>(x)); }), Inputs{rand({2, 3}), rand({1, 3})}};
  });
  run("slice", [&] { return std::pair{Fn([](const Inputs& x) { return slice(x[0], 1, 3); }), Inputs{rand({4, 2})}}; });
  run("max_of", [&] {
    // Disjoint ranges keep the maximum away from ties.
    Inputs in{rand({6}, 0.0, 0.3), rand({6}, 0.7, 1.0), rand({6}, 0.35, 0.65)};
    for (Index i = 0; i < 6; ++i)
      if (rng.bernoulli(0.5)) std::swap(in[0].data()[i], in[1].data()[i]);
    return std::pair{Fn([](const Inputs& x) { return max_of(std::span<const TensorD>(x)); }), in};
  });
  run("mean_of", [&] {
    return std::pair{Fn([](const Inputs& x) { return mean_of(std::span<const TensorD>(x)); }), Inputs{rand({4}), rand({4}), rand({4})}};
  });
  run("relu", [&] { return std::pair{Fn([](const Inputs& x) { return relu(x[0]); }), Inputs{away_from({10}, {0.0}, -1, 1)}}; });
  run("conv2d", [&] {
    const int stride = rng.bernoulli(0.5) ? 1 : 2;
    return std::pair{Fn([=](const Inputs& x) { return conv2d(x[0], x[1], x[2], stride, 1); }),
                     Inputs{rand({2, 2, 5, 5}), rand({3, 2, 3, 3}), rand({3})}};
  });
  run("instance_norm2d", [&] {
    return std::pair{Fn([](const Inputs& x) { return instance_norm2d(x[0], x[1], x[2]); }),
                     Inputs{rand({2, 3, 3, 3}), rand({3}), rand({3})}};
  });
  run("linear", [&] {
    return std::pair{Fn([](const Inputs& x) { return linear(x[0], x[1], x[2]); }), Inputs{rand({3, 4}), rand({4, 2}), rand({2})}};
  });
  run("global_avg_pool", [&] { return std::pair{Fn([](const Inputs& x) { return global_avg_pool(x[0]); }), Inputs{rand({2, 3, 3, 2})}}; });
  run("resample", [&] {
    auto map = std::make_shared<Resampling>(2, 3, 3, 3, 3, 3);
    for (std::size_t i = 0; i < map->index.size(); ++i) {
      map->index[i] = static_cast<std::int32_t>(rng.integer(-1, 8));
      map->weight[i] = rng.uniform(0, 1);
    }
    return std::pair{Fn([map](const Inputs& x) { return resample(x[0], map); }), Inputs{rand({2, 2, 3, 3})}};
  });
  run("contrast_about_mean", [&] {
    std::vector<double> f{rng.uniform(0.2, 1.8), rng.uniform(0.2, 1.8)};
    return std::pair{Fn([f](const Inputs& x) { return contrast_about_mean(x[0], std::span<const double>(f)); }),
                     Inputs{rand({2, 2, 3, 3})}};
  });
  run("bce_with_logits", [&] {
    TensorD labels(Shape{4, 1});
    for (Index i = 0; i < 4; ++i) labels.data()[i] = rng.bernoulli(0.5);
    return std::pair{Fn([labels](const Inputs& x) { return bce_with_logits(x[0], labels, Reduction::per_sample); }),
                     Inputs{rand({4, 1}, -4, 4)}};
  });
  run("hinge_multibit", [&] {
    TensorD bits(Shape{2, 4});
    for (Index i = 0; i < 8; ++i) bits.data()[i] = rng.bernoulli(0.5);
    // The hinge kinks where a logit times its +-1 target equals the margin.
    return std::pair{Fn([bits](const Inputs& x) { return hinge_multibit(x[0], bits); }),
                     Inputs{away_from({2, 4}, {-1.0, 1.0}, -2, 2)}};
  });

  // Transformations; inputs stay away from the [0,1] clip.
  auto image = [&] { return rand({2, 2, 6, 6}, 0.2, 0.8); };
  run("gaussian_noise", [&] {
    const std::uint64_t s = rng.next_u64();
    return std::pair{Fn([s](const Inputs& x) {
                       Rng local(s);
                       return gaussian_noise(x[0], 0.01, local);
                     }),
                     Inputs{image()}};
  });
  run("rotation", [&] {
    const double a = rng.uniform(-std::numbers::pi, std::numbers::pi);
    return std::pair{Fn([a](const Inputs& x) { return rotate(x[0], a); }), Inputs{image()}};
  });
  run("crop", [&] {
    const Index ch = rng.integer(0, 3), cw = rng.integer(0, 3);
    const Index oy = rng.integer(0, ch), ox = rng.integer(0, cw);
    return std::pair{Fn([=](const Inputs& x) { return crop_resize_at(x[0], ch, cw, oy, ox); }), Inputs{image()}};
  });
  run("hflip", [&] { return std::pair{Fn([](const Inputs& x) { return flip_width(x[0]); }), Inputs{image()}}; });
  run("brightness", [&] {
    const double b = rng.uniform(0, 0.25);
    return std::pair{Fn([b](const Inputs& x) { return brightness(x[0], b); }), Inputs{image()}};
  });
  run("blur", [&] {
    const double s = rng.uniform(0.3, 1.5);
    return std::pair{Fn([s](const Inputs& x) { return blur(x[0], s); }), Inputs{image()}};
  });
  run("contrast", [&] {
    const double f = rng.uniform(0.5, 1.2);
    return std::pair{Fn([f](const Inputs& x) { return contrast(x[0], f); }), Inputs{image()}};
  });
  run("composition", [&] {
    TransformPipeline p;
    p.specs = {GaussianNoise{0.01}, Rotation{1.0}, Crop{2, 2}, HorizontalFlip{}, Brightness{0.1}};
    const auto draw = sample_draw(p, {2, 2, 6, 6}, rng);
    return std::pair{Fn([draw](const Inputs& x) { return apply_draw(draw, x[0]); }), Inputs{image()}};
  });

  // Full detector forward, with respect to the input and every parameter.
  run("detector", [&] {
    DetectorConfig c;
    c.height = c.width = 6;
    c.channel_widths = {3, 4};
    c.strides = {1, 2};
    c.seed = rng.next_u64();
    auto m = build_detector<double>(c);
    m.set_requires_grad(true);
    Inputs in{rand({2, 3, 6, 6}, 0, 1)};
    for (auto p : m.parameters()) in.push_back(p);
    return std::pair{Fn([m](const Inputs& x) { return forward_logits(m, x[0]); }), in};
  });

  const double secs = clock.seconds();
  return {failures == 0 && secs <= 120.0,
          fmt("%d ops x %d instances, %d failed, worst rel err %.2e, %.1f s (limit 120 s)%s", ops, kInstances,
              failures, worst, secs, first_failure.empty() ? "" : ("; first: " + first_failure).c_str())};
}

// ---------------------------------------------------------------- 2

Verdict desk_training() {
  const auto& m = robust_model();
  const auto& test = desk_data().test;
  const double acc = held_out_accuracy(m.model, test);
  // The checkpoint must reload and score the same.
  const auto reloaded = decode_checkpoint(encode_checkpoint(m.model)).model;
  const double acc_reloaded = held_out_accuracy(reloaded, test);
  return {acc >= 0.99 && acc_reloaded == acc && m.train_seconds <= 1800.0,
          fmt("held-out accuracy %.4f (need >= 0.99) on %lld clean + %lld watermarked, reloaded %.4f, training %.0f s "
              "(limit 1800 s)%s",
              acc, static_cast<long long>(test.dim(0) / 2), static_cast<long long>(test.dim(0) / 2), acc_reloaded,
              m.train_seconds, m.cached ? " [cached]" : "")};
}

// ---------------------------------------------------------------- 3

Verdict linf_invariant() {
  DetectorConfig c;
  c.channel_widths = {4, 8};
  c.strides = {1, 2};
  c.seed = 5;
  const auto model = build_detector<Real>(c);
  const auto helper = build_detector<Real>(desk_arch(9));
  auto multi = c;
  multi.head_dim = 4;
  const auto multibit = build_detector<Real>(multi);

  const auto& pool = desk_data().test;
  const std::vector<double> eps{0.0, 1.0 / 255, 4.0 / 255, 8.0 / 255, 16.0 / 255, kEps, 0.1, 0.3};
  const auto pipe = composition_pipe();
  Index total = 0, violations = 0;
  double worst_excess = -1.0;
  Rng rng(3);
  int round = 0;
  while (total < 10000) {
    const Index n = 250;
    const Index start = (round * n) % pool.dim(0);
    const auto s = slice(pool, start, start + n);
    auto cfg = embed_cfg(eps[round % eps.size()]);
    cfg.seed = rng.next_u64();
    Tensor<Real> out;
    switch (round % 4) {
      case 0: out = pgd_embed(model, s, cfg); break;
      case 1: out = pgd_embed(model, s, cfg, &pipe); break;
      case 2: out = pgd_embed_ensemble(model, {helper}, s, cfg); break;
      default: out = embed_multibit(multibit, s, random_codes(n, 4, rng), cfg); break;
    }
    const Eigen::ArrayXd diff = (out.data().cast<double>() - s.data().cast<double>()).abs();
    const Index per = s.size() / n;
    for (Index i = 0; i < n; ++i) {
      const auto d = diff.segment(i * per, per);
      const auto o = out.data().segment(i * per, per);
      const double excess = d.maxCoeff() - cfg.epsilon;
      worst_excess = std::max(worst_excess, excess);
      if (excess > 1e-7 || o.minCoeff() < 0.0f || o.maxCoeff() > 1.0f) ++violations;
    }
    total += n;
    ++round;
  }
  return {violations == 0, fmt("%lld embeddings over %zu budgets (plain, EOT, ensemble, multi-bit), %lld violations, "
                               "max(|s'-s|) - eps at most %.2e",
                               static_cast<long long>(total), eps.size(), static_cast<long long>(violations),
                               worst_excess)};
}

// ---------------------------------------------------------------- 4

Verdict transformation_resilience() {
  const auto& m = robust_model();
  const auto signals = slice(desk_data().test, 0, 500);
  AttackOptions opts;
  opts.wm = desk_train(composition_pipe()).wm;
  opts.n_variants = 100;
  const std::vector<double> eps{kEps};
  std::vector<TransformPipeline> pipes;
  for (double sigma : {0.05, 0.10, 0.15, 0.20, 0.25}) pipes.push_back(single_transform(GaussianNoise{sigma}));
  pipes.push_back(composition_pipe());
  bool pass = true;
  std::string detail;
  Rng rng(4);
  for (const auto& p : pipes) {
    const auto r = transformation_attack_curve(m.model, signals, p, eps, opts, rng).front();
    const bool ok = r.detection_accuracy() >= 0.95 && r.success_rate_clean <= 0.02;
    pass = pass && ok;
    detail += fmt("%s%s: detect %.4f fp %.4f", detail.empty() ? "" : "; ", pipeline_label(p).c_str(),
                  r.detection_accuracy(), r.success_rate_clean);
  }
  return {pass, detail + " (need detect >= 0.95, fp <= 0.02; 100 variants x 500 signals)"};
}

// ---------------------------------------------------------------- 5

// Oracles built only from the binomial mass function and an erf series.
long double binomial_upper_tail(Index k, Index n, long double p) {
  if (p <= 0) return k == 0 ? 1 : 0;
  if (p >= 1) return 1;
  long double total = 0;
  for (Index i = k; i <= n; ++i)
    total += std::exp(std::lgamma((long double)n + 1) - std::lgamma((long double)i + 1) -
                      std::lgamma((long double)(n - i) + 1) + i * std::log(p) + (n - i) * std::log1p(-p));
  return total;
}

double cp_oracle(Index k, Index n, double alpha) {
  if (k == 0) return 0.0;
  long double lo = 0, hi = 1;
  for (int it = 0; it < 120; ++it) {
    const long double mid = (lo + hi) / 2;
    (binomial_upper_tail(k, n, mid) <= 1 - (long double)alpha ? lo : hi) = mid;
  }
  return double(lo);
}

long double norm_cdf_oracle(long double x) {
  const long double z = std::fabs(x) / std::sqrt(2.0L);
  long double term = z, total = z;
  for (int n = 1; n < 4000; ++n) {
    term *= 2 * z * z / (2 * n + 1);
    total += term;
    if (term < total * 1e-22L) break;
  }
  const long double erf = 2 / std::sqrt(std::numbers::pi_v<long double>) * std::exp(-z * z) * total;
  return 0.5L * (1 + (x < 0 ? -erf : erf));
}

double quantile_oracle(double p) {
  long double lo = -40, hi = 40;
  for (int it = 0; it < 200; ++it) {
    const long double mid = (lo + hi) / 2;
    (norm_cdf_oracle(mid) < p ? lo : hi) = mid;
  }
  return double((lo + hi) / 2);
}

Verdict certification() {
  std::string detail;
  bool pass = true;

  // Mock classifiers: a threshold on one noisy pixel, recording its votes.
  Rng rng(5);
  double worst_p = 0.0, worst_r = 0.0;
  int mocks = 0;
  for (double threshold : {-1.0, 0.3, 0.45, 0.5, 0.55, 0.7, 2.0}) {
    for (double sigma : {0.1, 0.25, 0.5}) {
      for (double alpha : {0.9, 0.99, 0.999}) {
        Index ones = 0, seen = 0;
        BatchClassifier mock = [&](const Tensor<Real>& b) {
          std::vector<int> out(b.dim(0));
          const Index per = b.size() / b.dim(0);
          for (Index i = 0; i < b.dim(0); ++i) ones += out[i] = b.data()[i * per] > threshold;
          seen += b.dim(0);
          return out;
        };
        const Tensor<Real> s = Tensor<Real>::full({1, 4, 4}, 0.5f);
        const Index n = 2000;
        const Certificate c = certify(mock, s, sigma, n, alpha, rng);
        const Index major = std::max(ones, seen - ones);
        const int label = ones > seen - ones ? 1 : 0;
        const double p = cp_oracle(major, n, alpha);
        const double radius = p > 0.5 ? sigma * quantile_oracle(p) : 0.0;
        worst_p = std::max(worst_p, std::abs(c.p_lower - p));
        worst_r = std::max(worst_r, std::abs(c.radius - radius));
        pass = pass && seen == n && std::abs(c.p_lower - p) <= 1e-6 && std::abs(c.radius - radius) <= 1e-5 &&
               c.abstained == (p <= 0.5) && (c.abstained || c.predicted_label == label);
        ++mocks;
      }
    }
  }
  detail += fmt("%d mock certificates: max |p_lower err| %.1e (<= 1e-6), max |radius err| %.1e (<= 1e-5)", mocks,
                worst_p, worst_r);

  double worst_closed = 0.0;
  for (Index n : {1, 10, 100, 1000, 10000, 100000})
    for (double alpha : {0.5, 0.9, 0.99, 0.999})
      worst_closed = std::max(worst_closed, std::abs(clopper_pearson_lower(n, n, alpha) - std::pow(1.0 - alpha, 1.0 / n)));
  pass = pass && worst_closed <= 1e-12;
  detail += fmt("; k=n closed form max err %.1e (<= 1e-12)", worst_closed);

  // Robust versus plain detector, each certifying its own watermarks.
  const auto signals = slice(desk_data().test, 0, 200);
  const std::vector<double> radii{0.0, 0.05, 0.1, 0.15, 0.2, 0.25, 0.3, 0.4, 0.5, 0.6, 0.8, 1.0};
  const double sigma = 0.25;
  auto curve = [&](const DetectorModel<Real>& model) {
    Rng r(6);
    return certified_accuracy_curve(model, pgd_embed(model, signals, embed_cfg()), sigma, 1000, 0.99, radii, r);
  };
  const auto robust = curve(robust_model().model);
  const auto plain = curve(plain_model().model);
  bool monotone = true, dominates = true, strict = false;
  std::string rc, pc;
  for (std::size_t i = 0; i < radii.size(); ++i) {
    if (i > 0)
      monotone = monotone && robust[i].certified <= robust[i - 1].certified && plain[i].certified <= plain[i - 1].certified;
    dominates = dominates && robust[i].certified >= plain[i].certified;
    strict = strict || robust[i].certified > plain[i].certified;
    rc += fmt("%s%.2f", i ? " " : "", robust[i].certified_accuracy);
    pc += fmt("%s%.2f", i ? " " : "", plain[i].certified_accuracy);
  }
  pass = pass && monotone && dominates && strict;
  detail += fmt("; curves nonincreasing: %s; robust dominates plain (sigma %.2f, radii 0..1): %s [robust %s | plain %s]",
                monotone ? "yes" : "no", sigma, dominates && strict ? "yes" : "no", rc.c_str(), pc.c_str());
  return {pass, detail};
}

// ---------------------------------------------------------------- 6

double reference_ssim(const Tensor<double>& a, const Tensor<double>& b) {
  const Index C = a.dim(0), H = a.dim(1), W = a.dim(2);
  const int r = 5;
  double g[11][11], total = 0.0;
  for (int y = -r; y <= r; ++y)
    for (int x = -r; x <= r; ++x) total += g[y + r][x + r] = std::exp(-(x * x + y * y) / (2.0 * 1.5 * 1.5));
  const double c1 = 0.01 * 0.01, c2 = 0.03 * 0.03;
  double sum = 0.0;
  Index count = 0;
  for (Index c = 0; c < C; ++c)
    for (Index i = r; i < H - r; ++i)
      for (Index j = r; j < W - r; ++j) {
        double ma = 0, mb = 0, saa = 0, sbb = 0, sab = 0;
        for (int y = -r; y <= r; ++y)
          for (int x = -r; x <= r; ++x) {
            const double w = g[y + r][x + r] / total;
            const double va = a.data()[(c * H + i + y) * W + j + x], vb = b.data()[(c * H + i + y) * W + j + x];
            ma += w * va;
            mb += w * vb;
            saa += w * va * va;
            sbb += w * vb * vb;
            sab += w * va * vb;
          }
        sum += ((2 * ma * mb + c1) * (2 * (sab - ma * mb) + c2)) /
               ((ma * ma + mb * mb + c1) * (saa - ma * ma + sbb - mb * mb + c2));
        ++count;
      }
  return sum / static_cast<double>(count);
}

Verdict metrics_check() {
  Rng rng(6);
  double worst_ssim = 0.0;
  for (int k = 0; k < 5; ++k) {
    Tensor<double> a({3, 32, 32}), b({3, 32, 32});
    for (Index i = 0; i < a.size(); ++i) {
      a.data()[i] = rng.uniform();
      b.data()[i] = std::clamp(a.data()[i] + rng.normal(0.0, 0.05 + 0.1 * k), 0.0, 1.0);
    }
    worst_ssim = std::max(worst_ssim, std::abs(ssim(a, b) - reference_ssim(a, b)));
  }
  Tensor<double> a({3, 32, 32});
  for (Index i = 0; i < a.size(); ++i) a.data()[i] = 0.9 * rng.uniform();
  Tensor<double> b(a.shape(), a.data() + 0.1);
  const double psnr_err = std::abs(psnr(a, b) - 20.0);

  const auto& model = robust_model().model;
  const auto& test = desk_data().test;
  const auto low = batch_psnr(pgd_embed(model, test, embed_cfg(0.01)), test);
  const auto high = batch_psnr(pgd_embed(model, test, embed_cfg(0.03)), test);
  Index ordered = 0;
  for (Index i = 0; i < low.size(); ++i) ordered += low[i] > high[i];
  return {worst_ssim <= 1e-6 && psnr_err <= 1e-9 && ordered == low.size(),
          fmt("ssim max err %.1e (<= 1e-6); psnr 20 dB case err %.1e (<= 1e-9); psnr(eps 0.01) > psnr(eps 0.03) on "
              "%lld/%lld signals (mean %.2f vs %.2f dB)",
              worst_ssim, psnr_err, static_cast<long long>(ordered), static_cast<long long>(low.size()), low.mean(),
              high.mean())};
}

// ---------------------------------------------------------------- 7

TransformPipeline multibit_pipe() {
  TransformPipeline p;
  p.specs = {Blur{1.0}, PixelDropout{30}};
  p.mode = PipelineMode::single_random;
  return p;
}

TrainConfig multibit_train() {
  TrainConfig c = desk_train(multibit_pipe());
  c.wm.epsilon = 0.03;
  return c;
}

Verdict multibit() {
  constexpr Index kBits = 16;
  const auto arch = desk_arch(3, kBits);
  const auto cfg = multibit_train();
  const auto m = cached("multibit", describe(arch, cfg, "multi-bit"),
                        [&] { return train_multibit(build_detector<Real>(arch), desk_data().train, cfg).model; });
  const auto signals = slice(desk_data().test, 0, 500);
  Rng rng(7);
  const auto codes = random_codes(signals.dim(0), kBits, rng);
  std::vector<TransformPipeline> sweep{TransformPipeline{}, single_transform(Blur{1.0}),
                                       single_transform(PixelDropout{30})};
  const auto embed_pipe = differentiable_part(cfg.pipe);
  const auto pts = multibit_robustness_curve(m.model, signals, codes, sweep, cfg.wm, 10, rng,
                                             embed_pipe ? &*embed_pipe : nullptr);
  const auto chance = bit_recovery(decode_multibit(m.model, signals), codes);
  const bool pass = pts[0].recovery >= 0.95 && pts[1].recovery >= 0.80 && pts[2].recovery >= 0.80 &&
                    std::abs(chance.recovery - 0.5) <= 0.05;
  return {pass, fmt("16 bits, eps 0.03: clean %.4f (>= 0.95), blur 1 %.4f (>= 0.80), dropout 30 %.4f (>= 0.80), "
                    "unmarked signals %.4f (0.5 +- 0.05)%s",
                    pts[0].recovery, pts[1].recovery, pts[2].recovery, chance.recovery, m.cached ? " [cached]" : "")};
}

// ---------------------------------------------------------------- 8

Verdict specificity() {
  // Three independently seeded plain detectors A, B, C. The hardened
  // detector starts from A's initialization and trains against {B}; C
  // forges watermarks that are scored by A and by the hardened detector.
  auto cfg = desk_train(TransformPipeline{});
  std::vector<DetectorModel<Real>> plain;
  for (std::uint64_t seed : {11, 12, 13}) {
    const auto arch = desk_arch(seed);
    plain.push_back(cached("plain_" + std::to_string(seed), describe(arch, cfg, "zero-bit"),
                           [&] { return train(build_detector<Real>(arch), desk_data().train, cfg).model; })
                        .model);
  }
  const auto arch = desk_arch(11);
  const auto hardened =
      cached("hardened_11", describe(arch, cfg, "hardened vs 12"), [&] {
        return train_specificity_hardened(build_detector<Real>(arch), {plain[1]}, desk_data().train, cfg).model;
      }).model;

  const auto signals = slice(desk_data().test, 0, 500);
  const std::vector<double> eps{4.0 / 255, 8.0 / 255, 12.0 / 255, 16.0 / 255, kEps};
  Rng r1(8), r2(8);
  const auto vs_plain = specificity_transfer_eval({plain[2]}, plain[0], signals, eps, embed_cfg(), r1);
  const auto vs_hard = specificity_transfer_eval({plain[2]}, hardened, signals, eps, embed_cfg(), r2);
  bool pass = false;
  std::string detail;
  for (std::size_t i = 0; i < eps.size(); ++i) {
    const double drop = vs_plain[i].false_positive_rate - vs_hard[i].false_positive_rate;
    const bool matched = std::abs(vs_plain[i].mean_ssim - vs_hard[i].mean_ssim) <= 0.02;
    if (matched && drop >= 0.15) pass = true;
    detail += fmt("%seps %.0f/255 ssim %.3f: plain %.3f hardened %.3f", i ? "; " : "", eps[i] * 255,
                  vs_plain[i].mean_ssim, vs_plain[i].false_positive_rate, vs_hard[i].false_positive_rate);
  }
  const auto self = specificity_transfer_eval({hardened}, hardened, signals, std::vector<double>{kEps}, embed_cfg(), r1);
  return {pass, detail + fmt(" (need a drop >= 0.15 at matched ssim); hardened self-detection %.3f",
                             self[0].false_positive_rate)};
}

// ---------------------------------------------------------------- 9

Verdict ood_holdout() {
  OodOptions opts;
  opts.arch = desk_arch();
  opts.train = desk_train(TransformPipeline{});
  opts.train.steps = 2000;
  opts.train.pipe.mode = PipelineMode::single_random;
  opts.embed = embed_cfg();
  opts.n_variants = 1;

  const std::string key = describe(opts.arch, opts.train, "ood");
  const fs::path path = g_cache / "ood_matrix.csv";
  Dataset d{desk_data().train, slice(desk_data().test, 0, 1000)};
  OodMatrix m;
  bool from_cache = false;
  // The matrix itself is cached; it costs seven trainings.
  if (fs::exists(path) && fs::exists(g_cache / "ood_matrix.key") && read_file(g_cache / "ood_matrix.key") == key) {
    const auto rows = parse_csv(read_file(path));
    m.names = [] {
      std::vector<std::string> n;
      for (const auto& s : ood_transforms()) n.push_back(kind_name(s));
      return n;
    }();
    m.accuracy = Eigen::MatrixXd::Zero(7, 7);
    m.correct = Eigen::MatrixXi::Zero(7, 7);
    for (std::size_t i = 1; i < rows.size(); ++i) {
      const auto find = [&](const std::string& name) {
        return static_cast<Index>(std::find(m.names.begin(), m.names.end(), name) - m.names.begin());
      };
      const Index r = find(rows[i][0]), c = find(rows[i][1]);
      m.correct(r, c) = std::stoi(rows[i][3]);
      m.trials_per_cell = std::stoll(rows[i][4]);
      m.accuracy(r, c) = std::stod(rows[i][5]);
    }
    from_cache = true;
  } else {
    Rng rng(9);
    m = ood_holdout_eval(d, ood_transforms(), opts, rng, [](Index row, const OodMatrix& mm) {
      std::cerr << "  ood row " << mm.names[row] << " done\n";
    });
    fs::create_directories(g_cache);
    write_report_csv(ood_table(m), path);
    write_file(g_cache / "ood_matrix.key", key);
  }

  bool diag_ok = true;
  std::string rows;
  for (Index r = 0; r < 7; ++r) {
    const double off = m.off_diagonal_mean(r);
    const bool ok = m.accuracy(r, r) <= off;
    diag_ok = diag_ok && ok;
    rows += fmt("%s%s %.4f/%.4f%s", r ? ", " : "", m.names[r].c_str(), m.accuracy(r, r), off, ok ? "" : "!");
  }
  const double off_all = m.off_diagonal_mean();
  return {diag_ok && off_all >= 0.95,
          fmt("held-out diagonal <= row off-diagonal mean in every row: %s [%s]; off-diagonal mean %.4f (>= 0.95); "
              "%lld trials per cell%s",
              diag_ok ? "yes" : "no", rows.c_str(), off_all, static_cast<long long>(m.trials_per_cell),
              from_cache ? " [cached]" : "")};
}

// ---------------------------------------------------------------- 10

int shell(const std::string& cmd) {
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

// Runs the command-line pipeline in `dir` with relative paths only.
bool cli_pipeline(const fs::path& dir) {
  fs::remove_all(dir);
  fs::create_directories(dir);
  write_file(dir / "pipe.txt", format_pipeline(composition_pipe()));
  TransformPipeline mb = multibit_pipe();
  write_file(dir / "mb_pipe.txt", format_pipeline(mb));
  const std::string rwm = std::string("cd '") + dir.string() + "' && " + RWM_CLI_PATH + " --seed 5 ";
  const std::string arch = " --widths 8,16 --strides 1,2";
  const std::vector<std::string> steps{
      "--out data gen-data --count 200 --height 16 --width 16",
      "--out zb train --data data/data.rtns --steps 40 --batch 16 --pipeline pipe.txt" + arch,
      "--out ens train-ensemble --data data/data.rtns --steps 20 --batch 16 --member-seeds 1,2" + arch,
      "--out hard train-hardened --data data/data.rtns --steps 20 --batch 16 --ensemble ens/member_1.rswt" + arch,
      "--out emb embed --model zb/model.rswt --input data/data.rtns --tensor test --limit 20",
      "--out curve attack-curve --model zb/model.rswt --input data/data.rtns --tensor test --limit 20 --variants 3 "
      "--pipeline pipe.txt",
      "--out mineps min-eps --model zb/model.rswt --input data/data.rtns --tensor test --limit 20 --variants 2 "
      "--pipeline pipe.txt",
      "--out spec specificity --model hard/model.rswt --sources ens/member_2.rswt --input data/data.rtns --tensor "
      "test --limit 20",
      "--out cert certify --model zb/model.rswt --input emb/watermarked.rtns --sigma 0.25 --samples 100",
      "--out ccurve certified-curve --model zb/model.rswt --input emb/watermarked.rtns --sigma 0.25 --samples 100",
      "--out mb train-multibit --data data/data.rtns --steps 20 --batch 16 --bits 8 --epsilon 0.03 --pipeline "
      "mb_pipe.txt" + arch,
      "--out mbc multibit-curve --model mb/model.rswt --input data/data.rtns --tensor test --limit 20 --epsilon 0.03 "
      "--sweep identity --sweep 'blur sigma=1' --sweep 'pixel_dropout keep_percent=30'",
      "--out met metrics --a data/data.rtns --tensor-a test --b emb/watermarked.rtns --limit 20",
      "--out ood ood-matrix --data data/data.rtns --steps 3 --batch 8 --test-limit 10" + arch,
  };
  for (const auto& s : steps) {
    if (shell(rwm + s + " > /dev/null 2>&1") != 0) {
      std::cerr << "  step failed: " << s << "\n";
      return false;
    }
  }
  return true;
}

Verdict reproducibility() {
  const fs::path a = g_cache / "repro_a", b = g_cache / "repro_b";
  if (!cli_pipeline(a) || !cli_pipeline(b)) return {false, "command-line pipeline failed"};
  Index files = 0, differing = 0, checked_reports = 0, checked_models = 0;
  std::string first;
  for (const auto& e : fs::recursive_directory_iterator(a)) {
    if (!e.is_regular_file()) continue;
    const auto rel = fs::relative(e.path(), a);
    ++files;
    const auto ext = rel.extension().string();
    checked_reports += ext == ".csv";
    checked_models += ext == ".rswt";
    if (!fs::exists(b / rel) || read_file(e.path()) != read_file(b / rel)) {
      ++differing;
      if (first.empty()) first = rel.string();
    }
  }
  return {differing == 0 && checked_reports > 0 && checked_models > 0,
          fmt("two runs of %lld outputs (%lld csv reports, %lld checkpoints, manifests, tensors): %lld differ%s",
              static_cast<long long>(files), static_cast<long long>(checked_reports),
              static_cast<long long>(checked_models), static_cast<long long>(differing),
              first.empty() ? "" : (", first " + first).c_str())};
}

}  // namespace

int main(int argc, char** argv) {
  tune_allocator();
  CLI::App app{"Acceptance criteria"};
  std::vector<int> which{1, 2, 3, 4, 5, 6, 7, 8, 9, 10};
  std::string cache = "acceptance_cache";
  app.add_option("--criteria", which, "Criteria to run")->delimiter(',')->check(CLI::Range(1, 10));
  app.add_option("--cache", cache, "Directory for trained models");
  CLI11_PARSE(app, argc, argv);
  g_cache = cache;

  const std::map<int, std::pair<const char*, Verdict (*)()>> criteria{
      {1, {"gradient suite", gradient_suite}},
      {2, {"desk-scale training", desk_training}},
      {3, {"l-inf invariant", linf_invariant}},
      {4, {"transformation resilience", transformation_resilience}},
      {5, {"certification", certification}},
      {6, {"metrics", metrics_check}},
      {7, {"multi-bit", multibit}},
      {8, {"specificity", specificity}},
      {9, {"held-out transformations", ood_holdout}},
      {10, {"reproducibility", reproducibility}},
  };
  int failed = 0;
  for (int c : which) {
    const auto& [name, fn] = criteria.at(c);
    Clock clock;
    Verdict v;
    try {
      v = fn();
    } catch (const std::exception& e) {
      v = {false, std::string("error: ") + e.what()};
    }
    failed += !v.pass;
    std::cout << (v.pass ? "PASS" : "FAIL") << " criterion " << c << " (" << name << "): " << v.detail
              << fmt(" [%.0f s]", clock.seconds()) << std::endl;
  }
  return failed == 0 ? 0 : 1;
}
