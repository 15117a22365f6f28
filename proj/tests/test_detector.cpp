#include "doctest.h"

#include "support/gradcheck.hpp"

#include "rwm/detector.hpp"

using namespace rwm;
using rwm::testing::random_tensor;
using rwm::testing::TensorD;

namespace {

DetectorConfig small_config(Index head_dim = 1) {
  DetectorConfig c;
  c.height = c.width = 8;
  c.channel_widths = {4, 6};
  c.strides = {1, 2};
  c.head_dim = head_dim;
  c.seed = 11;
  return c;
}

// Counted block by block from the layer list.
Index counted_parameters(const DetectorConfig& c) {
  Index total = 0, in = c.channels;
  for (Index w : c.channel_widths) {
    total += w * in * c.kernel_size * c.kernel_size + w;  // conv
    total += 2 * w;                                       // norm
    in = w;
  }
  return total + in * c.head_dim + c.head_dim;
}

}  // namespace

TEST_SUITE("detector") {

TEST_CASE("build is deterministic") {
  const auto a = build_detector<float>(small_config()), b = build_detector<float>(small_config());
  REQUIRE(a.named_parameters().size() == b.named_parameters().size());
  for (std::size_t i = 0; i < a.named_parameters().size(); ++i) {
    CHECK(a.named_parameters()[i].name == b.named_parameters()[i].name);
    CHECK((a.named_parameters()[i].value.data() == b.named_parameters()[i].value.data()).all());
  }
  auto other = small_config();
  other.seed = 12;
  const auto c = build_detector<float>(other);
  CHECK_FALSE((a.named_parameters()[0].value.data() == c.named_parameters()[0].value.data()).all());
}

TEST_CASE("parameter count") {
  DetectorConfig c;
  CHECK(build_detector<float>(c).num_parameters() == counted_parameters(c));
  CHECK(parameter_count(c) == counted_parameters(c));
  c.head_dim = 30;
  CHECK(parameter_count(c) == counted_parameters(c));
}

TEST_CASE("initialization ranges") {
  const auto m = build_detector<double>(DetectorConfig{});
  for (const auto& [name, t] : m.named_parameters()) {
    if (name.ends_with("conv.weight")) {
      const double fan_in = double(t.dim(1) * t.dim(2) * t.dim(3));
      CHECK(t.data().abs().maxCoeff() <= std::sqrt(6.0 / fan_in));
    } else if (name.ends_with("gamma")) {
      CHECK((t.data() == 1.0).all());
    } else if (name.ends_with("bias") || name.ends_with("beta")) {
      CHECK(t.data().isZero());
    }
  }
}

TEST_CASE("invalid configs") {
  auto c = small_config();
  c.strides = {1};
  CHECK_THROWS_AS(build_detector<float>(c), InvalidArgument);
  c = small_config(0);
  CHECK_THROWS_AS(build_detector<float>(c), InvalidArgument);
}

TEST_CASE("forward shapes and values") {
  Rng rng(3);
  const auto m = build_detector<double>(small_config(30));
  CHECK(forward_logits(m, random_tensor({5, 3, 8, 8}, rng, 0, 1, false)).shape() == Shape{5, 30});
  CHECK(forward_logits(m, Tensor<double>(Shape{0, 3, 8, 8})).shape() == Shape{0, 30});
  CHECK_THROWS_AS(forward_logits(m, Tensor<double>(Shape{1, 3, 8, 9})), InvalidArgument);
  CHECK_THROWS_AS(forward_logits(m, Tensor<double>(Shape{1, 1, 8, 8})), InvalidArgument);

  const auto z = build_detector<float>(small_config());
  Tensor<float> x = random_tensor({4, 3, 8, 8}, rng, 0, 1, false).cast<float>();
  const Tensor<float> y1 = forward_logits(z, x), y2 = forward_logits(z, x);
  CHECK(y1.data().allFinite());
  CHECK((y1.data() == y2.data()).all());
  CHECK(((logits_no_grad(z, x, 3) - y1.data().cast<double>()).abs() < 1e-6).all());
}

TEST_CASE("batch permutation equivariance") {
  Rng rng(4);
  const auto m = build_detector<double>(small_config(2));
  TensorD x = random_tensor({3, 3, 8, 8}, rng, 0, 1, false);
  TensorD perm(x.shape());
  const Index per = 3 * 64;
  const int order[3] = {2, 0, 1};
  for (int i = 0; i < 3; ++i) perm.data().segment(i * per, per) = x.data().segment(order[i] * per, per);
  const TensorD a = forward_logits(m, x), b = forward_logits(m, perm);
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 2; ++j) CHECK(b.data()[i * 2 + j] == doctest::Approx(a.data()[order[i] * 2 + j]).epsilon(1e-12));
}

TEST_CASE("predict threshold rule") {
  auto m = build_detector<double>(small_config());
  // parameters() shares storage with the model.
  auto params = m.parameters();
  const auto& named = m.named_parameters();
  auto find = [&](const std::string& name) {
    for (std::size_t i = 0; i < named.size(); ++i)
      if (named[i].name == name) return params[i];
    FAIL("missing " << name);
    return TensorD();
  };
  find("head.weight").data().setZero();
  auto set_bias = [&](double v) { find("head.bias").data().setConstant(v); };
  const TensorD x = TensorD::full({2, 3, 8, 8}, 0.5);
  set_bias(0.0);
  CHECK(predict(m, x) == std::vector<int>{0, 0});
  set_bias(3.0);
  CHECK(predict(m, x) == std::vector<int>{1, 1});
  set_bias(-3.0);
  CHECK(predict(m, x) == std::vector<int>{0, 0});
  CHECK(predict(m, x, -4.0) == std::vector<int>{1, 1});
  CHECK_THROWS_AS(predict(build_detector<double>(small_config(3)), x), InvalidArgument);
}

TEST_CASE("gradients reach inputs and parameters") {
  Rng rng(5);
  auto m = build_detector<double>(small_config());
  m.set_requires_grad(true);
  TensorD x = random_tensor({2, 3, 8, 8}, rng, 0, 1, true);
  backward(sum(forward_logits(m, x)));
  CHECK(x.has_grad());
  for (auto p : m.parameters()) CHECK(p.has_grad());

  rwm::testing::GradChecker checker;
  auto res = checker.check([&](const std::vector<TensorD>& in) { return forward_logits(m, in[0]); },
                           {random_tensor({2, 3, 8, 8}, rng, 0, 1, true)}, rng);
  CHECK_MESSAGE(res.ok, res.detail);
}

TEST_CASE("clone is deep") {
  auto a = build_detector<float>(small_config());
  auto b = a.clone();
  b.parameters()[0].data().setZero();
  CHECK_FALSE(a.parameters()[0].data().isZero());
}

}  // TEST_SUITE
