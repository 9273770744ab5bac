#pragma once

// Central-finite-difference verification of backward rules.
//
// A check owns two callables: one that samples fresh leaf inputs, and a pure
// forward function from those inputs to a scalar. The checker compares the
// recorded backward sweep against central differences over every element of
// every differentiable input. Inputs are re-sampled (rejection) while the
// forward pass lands too close to a non-differentiable point: a max-pool tie,
// a ReLU kink, a vanishing norm or distance.

#include <functional>
#include <string>
#include <vector>

#include "avclab/ops.hpp"

namespace avc {

struct GradCheckReport {
  std::string op_name;
  double max_rel_error = 0.0;
  bool passed = false;
};

struct GradCheckSpec {
  std::string name;
  std::function<std::vector<Tensor<double>>(Rng&)> make_inputs;
  std::function<Tensor<double>(const std::vector<Tensor<double>>&)> forward;
  double tolerance = 1e-4;
  double fd_step = 1e-4;
  double min_margin = 1e-3;
  int max_resamples = 64;
};

namespace detail {

// Relative error with an absolute floor so that near-zero gradient pairs are
// compared absolutely rather than amplifying finite-difference noise.
inline double rel_error(double a, double b) {
  double denom = std::max({std::abs(a), std::abs(b), 1e-3});
  return std::abs(a - b) / denom;
}

}  // namespace detail

inline GradCheckReport grad_check(const GradCheckSpec& spec, Rng& rng) {
  GradCheckReport report;
  report.op_name = spec.name;

  // Sample inputs away from kinks.
  std::vector<Tensor<double>> inputs;
  for (int attempt = 0;; ++attempt) {
    inputs = spec.make_inputs(rng);
    SmoothnessTrace trace;
    SmoothnessTrace::active() = &trace;
    {
      NoGradGuard ng;
      (void)spec.forward(inputs);
    }
    SmoothnessTrace::active() = nullptr;
    if (trace.worst() >= spec.min_margin || attempt >= spec.max_resamples) break;
  }

  // Analytic gradients.
  for (auto& t : inputs) t.zero_grad();
  Tensor<double> loss = spec.forward(inputs);
  AVC_CHECK_ARG(loss.numel() == 1, "grad_check: forward must produce a scalar");
  loss.backward();
  std::vector<std::vector<double>> analytic;
  analytic.reserve(inputs.size());
  for (auto& t : inputs)
    analytic.push_back(t.requires_grad() ? t.grad() : std::vector<double>());

  // Central differences.
  NoGradGuard ng;
  double max_err = 0.0;
  const double h = spec.fd_step;
  for (size_t ti = 0; ti < inputs.size(); ++ti) {
    if (!inputs[ti].requires_grad()) continue;
    Tensor<double>& t = inputs[ti];
    for (int64_t i = 0; i < t.numel(); ++i) {
      double saved = t.at(i);
      t.at(i) = saved + h;
      double fp = spec.forward(inputs).at(0);
      t.at(i) = saved - h;
      double fm = spec.forward(inputs).at(0);
      t.at(i) = saved;
      double fd = (fp - fm) / (2.0 * h);
      max_err = std::max(max_err, detail::rel_error(analytic[ti][size_t(i)], fd));
    }
  }
  report.max_rel_error = max_err;
  report.passed = max_err < spec.tolerance;
  return report;
}

// Runs a spec on several independently sampled instances and keeps the worst.
inline GradCheckReport grad_check_many(const GradCheckSpec& spec, int instances, Rng& rng) {
  GradCheckReport agg;
  agg.op_name = spec.name;
  agg.passed = true;
  for (int k = 0; k < instances; ++k) {
    Rng sub = rng.fork(uint64_t(k) + 1);
    GradCheckReport r = grad_check(spec, sub);
    agg.max_rel_error = std::max(agg.max_rel_error, r.max_rel_error);
    agg.passed = agg.passed && r.passed;
  }
  return agg;
}

namespace detail {

inline Tensor<double> rand_leaf(Shape shape, Rng& rng, double scale = 1.0, bool grad = true) {
  Tensor<double> t(std::move(shape));
  for (auto& v : t.values()) v = rng.normal() * scale;
  if (grad) t.set_requires_grad();
  return t;
}

inline std::vector<double> rand_proj(int64_t n, Rng& rng) {
  std::vector<double> p(size_t(n), 0.0);
  for (auto& v : p) v = rng.uniform(-1.0, 1.0);
  return p;
}

}  // namespace detail

// Checks for every individual layer type. Composite model graphs are covered
// separately (models.hpp builds miniature networks for that purpose).
inline std::vector<GradCheckSpec> standard_grad_checks() {
  std::vector<GradCheckSpec> specs;

  specs.push_back(GradCheckSpec{
      "conv2d(stride=1)",
      [](Rng& rng) {
        auto x = detail::rand_leaf({1, 2, 5, 5}, rng);
        auto w = detail::rand_leaf({3, 2, 3, 3}, rng, 0.5);
        auto b = detail::rand_leaf({3}, rng, 0.2);
        return std::vector<Tensor<double>>{x, w, b};
      },
      [](const std::vector<Tensor<double>>& in) {
        Rng prng(101);
        auto y = conv2d(in[0], in[1], in[2], 1);
        return projected_sum(y, detail::rand_proj(y.numel(), prng));
      }});

  specs.push_back(GradCheckSpec{
      "conv2d(stride=2)",
      [](Rng& rng) {
        auto x = detail::rand_leaf({2, 3, 6, 6}, rng);
        auto w = detail::rand_leaf({4, 3, 3, 3}, rng, 0.5);
        auto b = detail::rand_leaf({4}, rng, 0.2);
        return std::vector<Tensor<double>>{x, w, b};
      },
      [](const std::vector<Tensor<double>>& in) {
        Rng prng(102);
        auto y = conv2d(in[0], in[1], in[2], 2);
        return projected_sum(y, detail::rand_proj(y.numel(), prng));
      }});

  specs.push_back(GradCheckSpec{
      "dense",
      [](Rng& rng) {
        auto x = detail::rand_leaf({3, 4}, rng);
        auto w = detail::rand_leaf({5, 4}, rng, 0.6);
        auto b = detail::rand_leaf({5}, rng, 0.3);
        return std::vector<Tensor<double>>{x, w, b};
      },
      [](const std::vector<Tensor<double>>& in) {
        Rng prng(103);
        auto y = dense(in[0], in[1], in[2]);
        return projected_sum(y, detail::rand_proj(y.numel(), prng));
      }});

  specs.push_back(GradCheckSpec{
      "batchnorm2d(train)",
      [](Rng& rng) {
        auto x = detail::rand_leaf({3, 2, 4, 4}, rng);
        auto gamma = detail::rand_leaf({2}, rng, 0.4);
        for (auto& v : gamma.values()) v += 1.0;
        auto beta = detail::rand_leaf({2}, rng, 0.3);
        return std::vector<Tensor<double>>{x, gamma, beta};
      },
      [](const std::vector<Tensor<double>>& in) {
        Rng prng(104);
        LayerParams<double> p = LayerParams<double>::batchnorm(2);
        p.weights = in[1];
        p.bias = in[2];
        auto y = batchnorm2d(in[0], p, Mode::train);
        return projected_sum(y, detail::rand_proj(y.numel(), prng));
      }});

  specs.push_back(GradCheckSpec{
      "batchnorm2d(eval)",
      [](Rng& rng) {
        auto x = detail::rand_leaf({3, 2, 4, 4}, rng);
        auto gamma = detail::rand_leaf({2}, rng, 0.4);
        for (auto& v : gamma.values()) v += 1.0;
        auto beta = detail::rand_leaf({2}, rng, 0.3);
        return std::vector<Tensor<double>>{x, gamma, beta};
      },
      [](const std::vector<Tensor<double>>& in) {
        Rng prng(105);
        LayerParams<double> p = LayerParams<double>::batchnorm(2);
        p.weights = in[1];
        p.bias = in[2];
        auto y = batchnorm2d(in[0], p, Mode::eval);
        return projected_sum(y, detail::rand_proj(y.numel(), prng));
      }});

  specs.push_back(GradCheckSpec{
      "maxpool2d",
      [](Rng& rng) {
        auto x = detail::rand_leaf({2, 2, 4, 4}, rng);
        return std::vector<Tensor<double>>{x};
      },
      [](const std::vector<Tensor<double>>& in) {
        Rng prng(106);
        auto y = maxpool2d(in[0], 2);
        return projected_sum(y, detail::rand_proj(y.numel(), prng));
      }});

  specs.push_back(GradCheckSpec{
      "relu",
      [](Rng& rng) {
        auto x = detail::rand_leaf({2, 12}, rng);
        return std::vector<Tensor<double>>{x};
      },
      [](const std::vector<Tensor<double>>& in) {
        Rng prng(107);
        auto y = relu(in[0]);
        return projected_sum(y, detail::rand_proj(y.numel(), prng));
      }});

  specs.push_back(GradCheckSpec{
      "sigmoid",
      [](Rng& rng) {
        auto x = detail::rand_leaf({2, 12}, rng);
        return std::vector<Tensor<double>>{x};
      },
      [](const std::vector<Tensor<double>>& in) {
        Rng prng(108);
        auto y = sigmoid(in[0]);
        return projected_sum(y, detail::rand_proj(y.numel(), prng));
      }});

  specs.push_back(GradCheckSpec{
      "l2_normalize",
      [](Rng& rng) {
        auto x = detail::rand_leaf({3, 6}, rng);
        return std::vector<Tensor<double>>{x};
      },
      [](const std::vector<Tensor<double>>& in) {
        Rng prng(109);
        auto y = l2_normalize(in[0]);
        return projected_sum(y, detail::rand_proj(y.numel(), prng));
      }});

  specs.push_back(GradCheckSpec{
      "euclidean_distance",
      [](Rng& rng) {
        auto a = detail::rand_leaf({3, 5}, rng);
        auto b = detail::rand_leaf({3, 5}, rng);
        return std::vector<Tensor<double>>{a, b};
      },
      [](const std::vector<Tensor<double>>& in) {
        Rng prng(110);
        auto y = euclidean_distance(in[0], in[1]);
        return projected_sum(y, detail::rand_proj(y.numel(), prng));
      }});

  specs.push_back(GradCheckSpec{
      "softmax_xent",
      [](Rng& rng) {
        auto l = detail::rand_leaf({4, 2}, rng);
        return std::vector<Tensor<double>>{l};
      },
      [](const std::vector<Tensor<double>>& in) {
        return softmax_xent(in[0], std::vector<int>{0, 1, 1, 0});
      }});

  specs.push_back(GradCheckSpec{
      "logistic_loss",
      [](Rng& rng) {
        auto z = detail::rand_leaf({5}, rng);
        return std::vector<Tensor<double>>{z};
      },
      [](const std::vector<Tensor<double>>& in) {
        return logistic_loss(in[0], std::vector<int>{1, 0, 1, 1, 0});
      }});

  specs.push_back(GradCheckSpec{
      "grid_dot",
      [](Rng& rng) {
        auto v = detail::rand_leaf({2, 3, 2, 2}, rng);
        auto a = detail::rand_leaf({2, 3}, rng);
        return std::vector<Tensor<double>>{v, a};
      },
      [](const std::vector<Tensor<double>>& in) {
        Rng prng(111);
        auto y = grid_dot(in[0], in[1]);
        return projected_sum(y, detail::rand_proj(y.numel(), prng));
      }});

  return specs;
}

}  // namespace avc
