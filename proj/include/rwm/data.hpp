#pragma once

#include "rwm/ndgrad/tensor.hpp"

#include <cstdint>
#include <string>

namespace rwm {

enum class Generator { gaussian_field, shapes, mixed };

std::string generator_name(Generator g);
Generator parse_generator(const std::string& name);

struct SynthDatasetSpec {
  Index count = 4000;
  Index channels = 3;
  Index height = 32;
  Index width = 32;
  Generator generator = Generator::mixed;
  double correlation_length = 3.0;  // gaussian_field smoothing, pixels
  int max_shapes = 6;
  std::uint64_t seed = 0;
  double train_fraction = 0.5;  // the rest is the test split

  void validate() const;
  Index train_count() const;
};

struct Dataset {
  Tensor<Real> train;
  Tensor<Real> test;
};

/// Deterministic signals in [0,1]. Item i depends only on (seed, i).
Dataset synth_dataset(const SynthDatasetSpec& spec);

/// A single generated item, (C,H,W).
Tensor<Real> synth_item(const SynthDatasetSpec& spec, Index index);

}  // namespace rwm
