#include <catch2/catch_amalgamated.hpp>

#include "avclab/gradcheck.hpp"
#include "avclab/ops.hpp"

using namespace avc;
using Catch::Approx;

namespace {

template <typename T>
Tensor<T> filled(Shape shape, std::vector<T> v) {
  return Tensor<T>(std::move(shape), std::move(v));
}

}  // namespace

TEST_CASE("conv2d forward basics", "[tensor][conv]") {
  SECTION("all-ones 3x3 input under an all-ones 3x3 kernel sums full overlap at the center") {
    auto x = filled<float>({1, 1, 3, 3}, std::vector<float>(9, 1.f));
    auto w = filled<float>({1, 1, 3, 3}, std::vector<float>(9, 1.f));
    auto b = Tensor<float>(Shape{1});
    auto y = conv2d(x, w, b, 1);
    REQUIRE(y.shape() == Shape{1, 1, 3, 3});
    CHECK(y(0, 0, 1, 1) == Approx(9.f));
    CHECK(y(0, 0, 0, 0) == Approx(4.f));  // zero padding clips the corner window
  }
  SECTION("all-zero input maps to all-zero output") {
    auto x = Tensor<float>(Shape{2, 3, 4, 4});
    Rng rng(7);
    auto p = LayerParams<float>::conv(5, 3, 3, 3, rng);
    auto y = conv2d(x, p, 1);
    for (int64_t i = 0; i < y.numel(); ++i) CHECK(y.at(i) == 0.f);
  }
  SECTION("channel mismatch is a fatal configuration error") {
    auto x = Tensor<float>(Shape{1, 3, 4, 4});
    Rng rng(7);
    auto p = LayerParams<float>::conv(2, 4, 3, 3, rng);
    CHECK_THROWS_AS(conv2d(x, p, 1), ConfigError);
  }
  SECTION("extent not divisible by stride is rejected") {
    auto x = Tensor<float>(Shape{1, 1, 5, 4});
    Rng rng(7);
    auto p = LayerParams<float>::conv(1, 1, 3, 3, rng);
    CHECK_THROWS_AS(conv2d(x, p, 2), ConfigError);
  }
}

TEST_CASE("maxpool2d forward and routing", "[tensor][pool]") {
  auto x = filled<float>({1, 1, 2, 2}, {1.f, 2.f, 3.f, 4.f});
  x.set_requires_grad();
  auto y = maxpool2d(x, 2);
  REQUIRE(y.numel() == 1);
  CHECK(y.at(0) == 4.f);

  SECTION("backward routes the gradient to the argmax only") {
    auto loss = projected_sum(y, {1.0f});
    loss.backward();
    std::vector<float> expect{0.f, 0.f, 0.f, 1.f};
    CHECK(x.grad() == expect);
  }
  SECTION("ties resolve to the first element in row-major order") {
    auto t = filled<float>({1, 1, 2, 2}, {5.f, 5.f, 5.f, 5.f});
    t.set_requires_grad();
    auto p = maxpool2d(t, 2);
    CHECK(p.at(0) == 5.f);
    projected_sum(p, {1.0f}).backward();
    std::vector<float> expect{1.f, 0.f, 0.f, 0.f};
    CHECK(t.grad() == expect);
  }
  SECTION("non-divisible extents are rejected") {
    auto t = Tensor<float>(Shape{1, 1, 3, 2});
    CHECK_THROWS_AS(maxpool2d(t, 2), ConfigError);
  }
}

TEST_CASE("maxpool2d gradient is a 0/1 mask summing to one per window", "[tensor][pool]") {
  Rng rng(42);
  auto x = Tensor<float>(Shape{2, 3, 6, 6});
  for (auto& v : x.values()) v = float(rng.uniform(-1.0, 1.0));
  x.set_requires_grad();
  auto y = maxpool2d(x, 2);
  projected_sum(y, std::vector<float>(size_t(y.numel()), 1.f)).backward();
  const auto& g = x.grad();
  for (float v : g) CHECK((v == 0.f || v == 1.f));
  // one unit of gradient per pooling window
  for (int n = 0; n < 2; ++n)
    for (int c = 0; c < 3; ++c)
      for (int oy = 0; oy < 3; ++oy)
        for (int ox = 0; ox < 3; ++ox) {
          float s = 0.f;
          for (int ki = 0; ki < 2; ++ki)
            for (int kj = 0; kj < 2; ++kj)
              s += g[size_t((((n * 3) + c) * 6 + oy * 2 + ki) * 6 + ox * 2 + kj)];
          CHECK(s == 1.f);
        }
}

TEST_CASE("batchnorm2d normalization", "[tensor][batchnorm]") {
  SECTION("constant input becomes zero in train mode") {
    auto x = filled<float>({2, 1, 2, 2}, std::vector<float>(8, 3.25f));
    auto p = LayerParams<float>::batchnorm(1);
    auto y = batchnorm2d(x, p, Mode::train);
    for (int64_t i = 0; i < y.numel(); ++i) CHECK(y.at(i) == Approx(0.f).margin(1e-6));
  }
  SECTION("values {0,2} normalize to {-1,+1}") {
    auto x = filled<float>({2, 1, 1, 1}, {0.f, 2.f});
    auto p = LayerParams<float>::batchnorm(1);
    auto y = batchnorm2d(x, p, Mode::train);
    CHECK(y.at(0) == Approx(-1.f).epsilon(1e-3));
    CHECK(y.at(1) == Approx(1.f).epsilon(1e-3));
    // running statistics moved toward the batch
    CHECK(p.running_mean.at(0) == Approx(0.1f));
    CHECK(p.running_var.at(0) == Approx(0.9f * 1.f + 0.1f * 1.f));
  }
  SECTION("eval mode with fresh (0,1) statistics is the identity") {
    auto x = filled<float>({1, 2, 1, 2}, {0.5f, -1.f, 2.f, 0.f});
    auto p = LayerParams<float>::batchnorm(2);
    auto y = batchnorm2d(x, p, Mode::eval);
    for (int64_t i = 0; i < y.numel(); ++i)
      CHECK(y.at(i) == Approx(x.at(i)).margin(1e-4));
  }
}

TEST_CASE("dense forward basics", "[tensor][dense]") {
  SECTION("identity weights, zero bias") {
    auto x = filled<float>({2, 3}, {1.f, 2.f, 3.f, 4.f, 5.f, 6.f});
    auto w = filled<float>({3, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1});
    auto b = Tensor<float>(Shape{3});
    auto y = dense(x, w, b);
    for (int64_t i = 0; i < y.numel(); ++i) CHECK(y.at(i) == x.at(i));
  }
  SECTION("zero weights reproduce the bias in every row") {
    auto x = filled<float>({2, 3}, {1.f, 2.f, 3.f, 4.f, 5.f, 6.f});
    auto w = Tensor<float>(Shape{2, 3});
    auto b = filled<float>({2}, {0.5f, -1.5f});
    auto y = dense(x, w, b);
    CHECK(y(0, 0) == 0.5f);
    CHECK(y(1, 0) == 0.5f);
    CHECK(y(0, 1) == -1.5f);
    CHECK(y(1, 1) == -1.5f);
  }
  SECTION("dimension mismatch is fatal") {
    auto x = Tensor<float>(Shape{2, 3});
    auto w = Tensor<float>(Shape{2, 4});
    auto b = Tensor<float>(Shape{2});
    CHECK_THROWS_AS(dense(x, w, b), ConfigError);
  }
}

TEST_CASE("activations", "[tensor][activation]") {
  auto x = filled<float>({1, 3}, {-1.f, 0.f, 2.f});
  auto y = relu(x);
  CHECK(y.at(0) == 0.f);
  CHECK(y.at(1) == 0.f);
  CHECK(y.at(2) == 2.f);

  auto z = filled<float>({1, 1}, {0.f});
  z.set_requires_grad();
  auto s = sigmoid(z);
  CHECK(s.at(0) == Approx(0.5f));
  projected_sum(s, {1.0f}).backward();
  CHECK(z.grad()[0] == Approx(0.25f));
}

TEST_CASE("l2_normalize", "[tensor][l2norm]") {
  SECTION("3-4-5 row") {
    auto x = filled<float>({1, 2}, {3.f, 4.f});
    auto y = l2_normalize(x);
    CHECK(y.at(0) == Approx(0.6f));
    CHECK(y.at(1) == Approx(0.8f));
  }
  SECTION("unit vector unchanged") {
    auto x = filled<float>({1, 3}, {0.f, 1.f, 0.f});
    auto y = l2_normalize(x);
    CHECK(y.at(0) == 0.f);
    CHECK(y.at(1) == Approx(1.f));
  }
  SECTION("zero vector passes through via the norm floor") {
    auto x = Tensor<float>(Shape{1, 4});
    auto y = l2_normalize(x);
    for (int64_t i = 0; i < 4; ++i) CHECK(y.at(i) == 0.f);
  }
  SECTION("rows have unit norm whenever the input norm is non-trivial") {
    Rng rng(11);
    auto x = Tensor<float>(Shape{8, 16});
    for (auto& v : x.values()) v = float(rng.normal());
    auto y = l2_normalize(x);
    for (int n = 0; n < 8; ++n) {
      double s = 0;
      for (int d = 0; d < 16; ++d) s += double(y(n, d)) * y(n, d);
      CHECK(std::sqrt(s) == Approx(1.0).margin(1e-6));
    }
  }
}

TEST_CASE("euclidean_distance", "[tensor][distance]") {
  SECTION("identical rows give zero") {
    auto a = filled<float>({1, 3}, {1.f, 2.f, 3.f});
    auto d = euclidean_distance(a, a);
    CHECK(d.at(0) == 0.f);
  }
  SECTION("antipodal unit vectors give two") {
    auto a = filled<float>({1, 2}, {1.f, 0.f});
    auto b = filled<float>({1, 2}, {-1.f, 0.f});
    CHECK(euclidean_distance(a, b).at(0) == Approx(2.f));
  }
  SECTION("shape mismatch is fatal") {
    auto a = Tensor<float>(Shape{1, 3});
    auto b = Tensor<float>(Shape{1, 4});
    CHECK_THROWS_AS(euclidean_distance(a, b), ConfigError);
  }
  SECTION("for unit rows, d^2 = 2 - 2 a.b") {
    // independent dot-product route for the same quantity
    Rng rng(23);
    for (int k = 0; k < 40; ++k) {
      Tensor<double> a(Shape{1, 8}), b(Shape{1, 8});
      for (auto& v : a.values()) v = rng.normal();
      for (auto& v : b.values()) v = rng.normal();
      auto an = l2_normalize(a), bn = l2_normalize(b);
      double dot = 0;
      for (int i = 0; i < 8; ++i) dot += an.at(i) * bn.at(i);
      double d = euclidean_distance(an, bn).at(0);
      CHECK(d * d == Approx(2.0 - 2.0 * dot).margin(1e-9));
    }
  }
}

TEST_CASE("losses at chance", "[tensor][loss]") {
  SECTION("softmax cross-entropy on equal logits is ln 2") {
    auto l = Tensor<float>(Shape{1, 2});
    CHECK(softmax_xent(l, {0}).at(0) == Approx(std::log(2.0)));
  }
  SECTION("logistic loss at pre-sigmoid zero is ln 2") {
    auto z = Tensor<float>(Shape{1});
    CHECK(logistic_loss(z, {1}).at(0) == Approx(std::log(2.0)));
  }
  SECTION("targets outside {0,1} are fatal") {
    auto z = Tensor<float>(Shape{1});
    CHECK_THROWS_AS(logistic_loss(z, {2}), ConfigError);
    auto l = Tensor<float>(Shape{1, 2});
    CHECK_THROWS_AS(softmax_xent(l, {-1}), ConfigError);
  }
}

TEST_CASE("forward passes are deterministic", "[tensor]") {
  Rng rng(5);
  auto x = Tensor<float>(Shape{2, 3, 8, 8});
  for (auto& v : x.values()) v = float(rng.normal());
  auto p = LayerParams<float>::conv(4, 3, 3, 3, rng);
  auto y1 = conv2d(x, p, 2);
  auto y2 = conv2d(x, p, 2);
  REQUIRE(y1.values() == y2.values());
}

TEST_CASE("gradients match central finite differences", "[tensor][gradcheck]") {
  Rng rng(20240811);
  for (const auto& spec : standard_grad_checks()) {
    Rng sub = rng.fork(fnv1a64(spec.name));
    auto report = grad_check_many(spec, 3, sub);
    INFO(report.op_name << " max_rel_error=" << report.max_rel_error);
    CHECK(report.passed);
  }
}

TEST_CASE("composed two-layer graph matches finite differences", "[tensor][gradcheck]") {
  GradCheckSpec spec{
      "dense-relu-dense-xent",
      [](Rng& rng) {
        auto x = avc::detail::rand_leaf({3, 5}, rng);
        auto w1 = avc::detail::rand_leaf({6, 5}, rng, 0.5);
        auto b1 = avc::detail::rand_leaf({6}, rng, 0.2);
        auto w2 = avc::detail::rand_leaf({2, 6}, rng, 0.5);
        auto b2 = avc::detail::rand_leaf({2}, rng, 0.2);
        return std::vector<Tensor<double>>{x, w1, b1, w2, b2};
      },
      [](const std::vector<Tensor<double>>& in) {
        auto h = relu(dense(in[0], in[1], in[2]));
        auto logits = dense(h, in[3], in[4]);
        return softmax_xent(logits, std::vector<int>{0, 1, 0});
      }};
  Rng rng(99);
  auto report = grad_check_many(spec, 5, rng);
  INFO("max_rel_error=" << report.max_rel_error);
  CHECK(report.passed);
  CHECK(report.max_rel_error < 1e-4);
}
