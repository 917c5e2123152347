#include <cmath>

#include "doctest.h"
#include "g2s/adamw.hpp"
#include "g2s/ops.hpp"
#include "g2s/rng.hpp"
#include "oracles.hpp"

using namespace g2s;

namespace {

Tensor random_leaf(Rng& rng, Shape shape, double lo = -1.0, double hi = 1.0) {
  Tensor t = Tensor::zeros(std::move(shape), true);
  for (auto& v : t.mutable_data()) v = rng.uniform(lo, hi);
  return t;
}

}  // namespace

TEST_CASE("matmul of 2x3 and 3x1 ones") {
  const Tensor c = matmul(Tensor::full({2, 3}, 1.0), Tensor::full({3, 1}, 1.0));
  CHECK(c.shape() == Shape{2, 1});
  CHECK(c[0] == 3.0);
  CHECK(c[1] == 3.0);
}

TEST_CASE("softmax of zeros is uniform") {
  const Tensor s = softmax(Tensor::zeros({3}));
  for (int i = 0; i < 3; ++i) CHECK(s[i] == doctest::Approx(1.0 / 3.0).epsilon(1e-15));
}

TEST_CASE("layer_norm of a constant vector is zero") {
  const Tensor y = layer_norm(Tensor::full({5}, 7.25));
  for (int i = 0; i < 5; ++i) CHECK(y[i] == 0.0);
}

TEST_CASE("shape errors name the op and shapes") {
  try {
    matmul(Tensor::zeros({2, 3}), Tensor::zeros({2, 3}));
    FAIL("expected ShapeError");
  } catch (const ShapeError& e) {
    CHECK(e.op() == "matmul");
    REQUIRE(e.shapes().size() == 2);
    CHECK(e.shapes()[0] == Shape{2, 3});
  }
  CHECK_THROWS_AS(add(Tensor::zeros({2, 3}), Tensor::zeros({4})), ShapeError);
  CHECK_THROWS_AS(concat({Tensor::zeros({2, 3}), Tensor::zeros({2, 4})}, 0), ShapeError);
}

TEST_CASE("backward of sum(x*x)") {
  Tensor x = Tensor::from({3}, {1, 2, 3}, true);
  sum(x * x).backward();
  CHECK(x.grad()[0] == 2.0);
  CHECK(x.grad()[1] == 4.0);
  CHECK(x.grad()[2] == 6.0);
}

TEST_CASE("backward accumulates across calls and through a named root") {
  Tensor x = Tensor::from({2}, {1.5, -2.0}, true);
  sum(x * x).backward();
  Tensor root = sum(x * x);  // intermediate owned only by the graph
  root.backward();
  CHECK(x.grad()[0] == 6.0);
  CHECK(x.grad()[1] == -8.0);
}

TEST_CASE("backward on a constant root is a no-op") {
  Tensor c = sum(Tensor::full({3}, 2.0));
  CHECK_NOTHROW(c.backward());
}

TEST_CASE("backward errors") {
  Tensor x = Tensor::from({2}, {1, 2}, true);
  CHECK_THROWS_AS((x * 2.0).backward(), ShapeError);
  Tensor root = sum(x * x);
  root.backward();
  CHECK_THROWS_AS(root.backward(), std::logic_error);
}

TEST_CASE("NoGradGuard stops recording") {
  Tensor x = Tensor::from({2}, {1, 2}, true);
  NoGradGuard guard;
  const Tensor y = x * x;
  CHECK_FALSE(y.requires_grad());
}

TEST_CASE("linearity of backward") {
  Rng rng(3);
  Tensor x = random_leaf(rng, {4});
  auto f = [&] { return sum(exp(x)); };
  auto g = [&] { return sum(x * x * x); };
  f().backward();
  std::vector<double> gf(x.grad().begin(), x.grad().end());
  x.zero_grad();
  g().backward();
  std::vector<double> gg(x.grad().begin(), x.grad().end());
  x.zero_grad();
  (f() * 2.5 + g() * -0.5).backward();
  for (std::size_t i = 0; i < 4; ++i)
    CHECK(x.grad()[i] == doctest::Approx(2.5 * gf[i] - 0.5 * gg[i]).epsilon(1e-14));
}

TEST_CASE("every op matches finite differences") {
  Rng rng(101);
  const double h = 1e-6;
  const double tol = 1e-5;
  for (int trial = 0; trial < 5; ++trial) {
    Tensor a = random_leaf(rng, {3, 4});
    Tensor b = random_leaf(rng, {3, 4});
    Tensor row = random_leaf(rng, {4});
    Tensor pos = random_leaf(rng, {3, 4}, 0.5, 2.0);
    Tensor m = random_leaf(rng, {4, 2});
    auto check = [&](const char* name, std::function<Tensor()> f,
                     std::vector<Tensor> leaves) {
      // random weights so every output element reaches the scalar
      Rng local(7);
      Tensor w;
      {
        NoGradGuard guard;
        const Tensor y = f();
        w = Tensor::zeros(y.shape());
        for (auto& v : w.mutable_data()) v = local.uniform(-1.0, 1.0);
      }
      const double err = oracle::gradcheck([&] { return sum(f() * w); }, leaves, h);
      INFO(name);
      CHECK(err < tol);
    };
    check("add", [&] { return a + row; }, {a, row});
    check("sub", [&] { return a - b; }, {a, b});
    check("mul", [&] { return a * row; }, {a, row});
    check("div", [&] { return a / pos; }, {a, pos});
    check("scalar", [&] { return 3.0 - a * 2.0 + 1.0; }, {a});
    check("exp", [&] { return exp(a); }, {a});
    check("log", [&] { return log(pos); }, {pos});
    check("sigmoid", [&] { return sigmoid(a); }, {a});
    check("relu", [&] { return relu(a); }, {a});
    check("gelu", [&] { return gelu(a); }, {a});
    check("abs", [&] { return abs(a); }, {a});
    check("square", [&] { return square(a); }, {a});
    check("sqrt", [&] { return sqrt(pos); }, {pos});
    check("matmul", [&] { return matmul(a, m); }, {a, m});
    check("transpose", [&] { return transpose(a); }, {a});
    check("reshape", [&] { return reshape(a, {2, 6}); }, {a});
    check("sum", [&] { return sum(a); }, {a});
    check("mean", [&] { return mean(a); }, {a});
    check("sum_dim", [&] { return sum(a, 0); }, {a});
    check("mean_dim", [&] { return mean(a, 1, true); }, {a});
    check("max", [&] { return max(a, 1); }, {a});
    check("min", [&] { return min(a, 0); }, {a});
    check("softmax", [&] { return softmax(a); }, {a});
    check("layer_norm", [&] { return layer_norm(a); }, {a});
    check("gather", [&] { return gather_rows(a, {2, 0, 2}); }, {a});
    check("scatter", [&] { return scatter_rows(a, {1, 1, 0}, 4); }, {a});
    check("concat0", [&] { return concat({a, b}, 0); }, {a, b});
    check("concat1", [&] { return concat({a, b}, 1); }, {a, b});
    check("slice", [&] { return slice(a, 1, 1, 2); }, {a});
  }
}

TEST_CASE("random 5-layer MLP matches finite differences") {
  Rng rng(55);
  std::vector<Tensor> weights, biases;
  std::size_t width = 5;
  for (int l = 0; l < 5; ++l) {
    weights.push_back(random_leaf(rng, {width, width}, -0.7, 0.7));
    biases.push_back(random_leaf(rng, {width}, -0.2, 0.2));
  }
  Tensor x = random_leaf(rng, {3, width});
  auto net = [&] {
    Tensor h = x;
    for (int l = 0; l < 5; ++l) {
      h = matmul(h, weights[l]) + biases[l];
      if (l < 4) h = gelu(h);
    }
    return sum(h * h);
  };
  std::vector<Tensor> leaves = weights;
  leaves.insert(leaves.end(), biases.begin(), biases.end());
  leaves.push_back(x);
  CHECK(oracle::gradcheck(net, leaves, 1e-6, 1e-6) < 1e-5);
}

TEST_CASE("determinism of forward and backward") {
  auto run = [] {
    Rng rng(9);
    Tensor a = random_leaf(rng, {4, 4});
    Tensor y = sum(softmax(matmul(a, a)) * layer_norm(a));
    y.backward();
    return std::make_pair(y.item(), std::vector<double>(a.grad().begin(), a.grad().end()));
  };
  CHECK(run() == run());
}

TEST_CASE("adamw: first step moves by about lr") {
  Tensor p = Tensor::from({1}, {1.0}, true);
  AdamW opt({{"p", p}}, AdamWOptions{.lr = 0.1, .weight_decay = 0.0});
  p.mutable_grad()[0] = 1.0;
  opt.step();
  // m_hat = 1, v_hat = 1 -> update = lr / (1 + eps)
  CHECK(p[0] == doctest::Approx(1.0 - 0.1 / (1.0 + 1e-8)).epsilon(1e-15));
  CHECK(opt.step_count() == 1);
}

TEST_CASE("adamw: decoupled decay with zero gradient") {
  Tensor p = Tensor::from({1}, {1.0}, true);
  AdamW opt({{"p", p}}, AdamWOptions{.lr = 0.1, .weight_decay = 0.05});
  opt.zero_grad();
  opt.step();
  CHECK(p[0] == doctest::Approx(0.995).epsilon(1e-15));
}

TEST_CASE("adamw: zero lr leaves parameters unchanged") {
  Tensor p = Tensor::from({2}, {0.3, -0.7}, true);
  AdamW opt({{"p", p}}, AdamWOptions{.lr = 0.0});
  p.mutable_grad()[0] = 5.0;
  opt.step();
  CHECK(p[0] == 0.3);
  CHECK(p[1] == -0.7);
}

TEST_CASE("adamw: missing gradient names the parameter") {
  Tensor p = Tensor::from({1}, {1.0}, true);
  AdamW opt({{"encoder.w", p}}, AdamWOptions{});
  try {
    opt.step();
    FAIL("expected error");
  } catch (const std::exception& e) {
    CHECK(std::string(e.what()).find("encoder.w") != std::string::npos);
  }
}

TEST_CASE("adamw: moments track parameter shapes and steps increase") {
  Tensor p = Tensor::from({2, 3}, std::vector<double>(6, 0.5), true);
  AdamW opt({{"p", p}}, AdamWOptions{});
  for (int s = 1; s <= 3; ++s) {
    for (auto& g : p.mutable_grad()) g = 0.1 * s;
    opt.step(true);
    CHECK(opt.step_count() == static_cast<std::uint64_t>(s));
    CHECK(opt.first_moment(0).size() == 6);
    CHECK(opt.second_moment(0).size() == 6);
    CHECK(p.grad()[0] == 0.0);
  }
}

TEST_CASE("adamw: matches a hand-rolled reference over several steps") {
  Rng rng(4);
  Tensor p = random_leaf(rng, {5});
  std::vector<double> ref(p.data().begin(), p.data().end()), m(5, 0.0), v(5, 0.0);
  const double lr = 0.01, b1 = 0.9, b2 = 0.999, eps = 1e-8, wd = 0.05;
  AdamW opt({{"p", p}}, AdamWOptions{.lr = lr, .weight_decay = wd});
  for (int t = 1; t <= 10; ++t) {
    std::vector<double> g(5);
    for (auto& x : g) x = rng.normal();
    for (int i = 0; i < 5; ++i) p.mutable_grad()[i] = g[i];
    opt.step();
    for (int i = 0; i < 5; ++i) {
      ref[i] *= 1.0 - lr * wd;
      m[i] = b1 * m[i] + (1 - b1) * g[i];
      v[i] = b2 * v[i] + (1 - b2) * g[i] * g[i];
      const double mh = m[i] / (1 - std::pow(b1, t));
      const double vh = v[i] / (1 - std::pow(b2, t));
      ref[i] -= lr * mh / (std::sqrt(vh) + eps);
    }
  }
  for (int i = 0; i < 5; ++i) CHECK(p[i] == doctest::Approx(ref[i]).epsilon(1e-12));
}
