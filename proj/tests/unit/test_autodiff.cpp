#include <cmath>
#include <functional>
#include <random>

#include "adt/autodiff.hpp"
#include "doctest.h"
#include "support/oracles.hpp"

using namespace adt;
using adt::testing::finite_difference_check;

namespace {

using G = Graph<double>;
using V = Var<double>;
using Build = std::function<V(G&)>;

Tensor<double> random_tensor(std::size_t r, std::size_t c, std::mt19937_64& rng, double lim = 1.0) {
  return uniform_init<double>(r, c, lim, rng);
}

// Scalarises an op output with a fixed random projection so that every
// output element contributes a distinct weight, then compares autodiff with
// central differences over all parameters in `store`.
double op_grad_error(ParamStore<double>& store, const Build& build, std::uint64_t seed = 99) {
  Tensor<double> proj;
  auto loss = [&](bool with_backward) {
    G g(false, with_backward);
    V out = build(g);
    if (proj.empty()) {
      std::mt19937_64 rng(seed);
      proj = random_tensor(out.value().cols(), 1, rng);
    }
    V l = sum(matmul(out, g.input(proj)));
    if (with_backward) {
      store.zero_grad();
      g.backward(l);
      g.accumulate_param_grads(store);
    }
    return double(l.value()[0]);
  };
  loss(true);
  return finite_difference_check(store, [&] { return loss(false); }).max_rel_error;
}

struct OpFixture {
  std::mt19937_64 rng{7};
  ParamStore<double> store;
  V p(G& g, const std::string& name) { return g.param(store.get(name)); }
  void add(const std::string& name, std::size_t r, std::size_t c, double lim = 1.0) {
    store.add(name, random_tensor(r, c, rng, lim));
  }
};

}  // namespace

TEST_CASE("forward values of the basic ops") {
  G g(false, false);
  auto sm = softmax(g.input(Tensor<double>(1, 3, 0.0)));
  for (double x : sm.value().data()) CHECK(x == doctest::Approx(1.0 / 3.0));
  CHECK(relu(g.input(Tensor<double>(1, 1, -2.5))).value()[0] == 0.0);
  const V m = g.input(Tensor<double>(2, 2, std::vector<double>{1, 4, 3, 2}));
  const std::vector<RowSpan> all{{0, 2}};
  CHECK(max_pool(m, all).value().data()[0] == 3.0);
  CHECK(max_pool(m, all).value().data()[1] == 4.0);
  CHECK(mean_pool(m, all).value().data()[0] == 2.0);
  CHECK(mean_pool(m, all).value().data()[1] == 3.0);
  CHECK(concat(m, m).value().cols() == 4);
  CHECK(scale(m, 0.5).value()(1, 0) == 1.5);
}

TEST_CASE("softmax rows are distributions") {
  std::mt19937_64 rng(3);
  G g(false, false);
  auto s = softmax(g.input(random_tensor(20, 9, rng, 30.0)));
  for (std::size_t r = 0; r < 20; ++r) {
    double total = 0;
    for (double x : s.value().row(r)) {
      CHECK(x > 0.0);
      CHECK(x < 1.0);
      total += x;
    }
    CHECK(std::abs(total - 1.0) < 1e-6);
  }
}

TEST_CASE("shape errors name both shapes") {
  G g(false, false);
  auto a = g.input(Tensor<double>(2, 3));
  auto b = g.input(Tensor<double>(2, 3));
  try {
    matmul(a, b);
    FAIL("expected ShapeError");
  } catch (const ShapeError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("[2, 3] vs [2, 3]") != std::string::npos);
  }
  CHECK_THROWS_AS(add(a, g.input(Tensor<double>(3, 2))), ShapeError);
  CHECK_THROWS_AS(concat(a, g.input(Tensor<double>(1, 3))), ShapeError);
}

TEST_CASE("dropout: identity in eval mode, inverted scaling in training") {
  std::mt19937_64 rng(1);
  const auto x = random_tensor(50, 40, rng);
  {
    G g(false, false);
    CHECK(dropout(g.input(x), 0.5).value() == x);
  }
  G g(true, true, &rng);
  const auto y = dropout(g.input(x), 0.25).value();
  std::size_t kept = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (y[i] != 0.0) {
      ++kept;
      CHECK(y[i] == doctest::Approx(x[i] / 0.75));
    }
  }
  CHECK(double(kept) / double(x.size()) == doctest::Approx(0.75).epsilon(0.05));
  CHECK_THROWS(dropout(g.input(x), 1.0));
  G no_rng(true, true);
  CHECK_THROWS(dropout(no_rng.input(x), 0.1));
}

TEST_CASE("gradient of sum(W x) has rows equal to x") {
  ParamStore<double> store;
  store.add("w", Tensor<double>(3, 2, std::vector<double>{1, 2, 3, 4, 5, 6}));
  G g;
  const Tensor<double> x(1, 3, std::vector<double>{0.5, -1.0, 2.0});
  auto l = sum(matmul(g.input(x), g.param(store.get("w"))));
  g.backward(l);
  g.accumulate_param_grads(store);
  const auto& gw = store.get("w").grad;
  for (std::size_t r = 0; r < 3; ++r)
    for (std::size_t c = 0; c < 2; ++c) CHECK(gw(r, c) == x[r]);
}

TEST_CASE("backward twice without reset is an error; unreachable params stay zero") {
  ParamStore<double> store;
  store.add("a", Tensor<double>(1, 1, 2.0));
  store.add("unused", Tensor<double>(1, 1, 3.0));
  G g;
  auto a = g.param(store.get("a"));
  g.param(store.get("unused"));
  auto l = sum(scale(a, 3.0));
  g.backward(l);
  CHECK_THROWS_AS(g.backward(l), std::logic_error);
  g.accumulate_param_grads(store);
  CHECK(store.get("a").grad[0] == 3.0);
  CHECK(store.get("unused").grad[0] == 0.0);
  g.reset_grads();
  CHECK_NOTHROW(g.backward(l));
  G inference(false, false);
  auto b = inference.input(Tensor<double>(1, 1, 1.0));
  CHECK_THROWS(inference.backward(b));
}

TEST_CASE("finite differences agree for every op") {
  constexpr double kTol = 1e-4;
  OpFixture f;

  SUBCASE("matmul, linear, add, add_row") {
    f.add("a", 3, 4);
    f.add("b", 4, 5);
    f.add("c", 3, 5);
    f.add("r", 1, 5);
    CHECK(op_grad_error(f.store, [&](G& g) {
            return add_row(add(matmul(f.p(g, "a"), f.p(g, "b")), f.p(g, "c")), f.p(g, "r"));
          }) < kTol);
    CHECK(op_grad_error(f.store, [&](G& g) {
            return linear(f.p(g, "a"), f.p(g, "b"), f.p(g, "r"));
          }) < kTol);
  }
  SUBCASE("relu, scale, softmax") {
    f.add("a", 4, 6, 2.0);
    CHECK(op_grad_error(f.store, [&](G& g) { return relu(scale(f.p(g, "a"), 1.7)); }) < kTol);
    CHECK(op_grad_error(f.store, [&](G& g) { return softmax(f.p(g, "a")); }) < kTol);
  }
  SUBCASE("layer_norm") {
    f.add("x", 5, 6, 2.0);
    f.add("gain", 1, 6);
    f.add("bias", 1, 6);
    CHECK(op_grad_error(f.store, [&](G& g) {
            return layer_norm(f.p(g, "x"), f.p(g, "gain"), f.p(g, "bias"));
          }) < kTol);
  }
  SUBCASE("embedding_lookup with repeated ids") {
    f.add("table", 6, 4);
    const std::vector<int> ids{0, 3, 3, 5, 1};
    CHECK(op_grad_error(f.store, [&](G& g) { return embedding_lookup(f.p(g, "table"), std::span<const int>(ids)); }) < kTol);
  }
  SUBCASE("concat and pooling") {
    f.add("a", 7, 3);
    f.add("b", 7, 2);
    const std::vector<RowSpan> spans{{0, 3}, {3, 4}, {4, 7}};
    CHECK(op_grad_error(f.store, [&](G& g) {
            auto x = concat(f.p(g, "a"), f.p(g, "b"));
            return concat(max_pool(x, spans), mean_pool(x, spans));
          }) < kTol);
  }
  SUBCASE("gather and overwrite rows") {
    f.add("base", 5, 3);
    f.add("upd", 2, 3);
    const std::vector<std::size_t> rows{4, 1};
    CHECK(op_grad_error(f.store, [&](G& g) {
            auto upd = add(f.p(g, "upd"), gather_rows(f.p(g, "base"), rows));
            return overwrite_rows(f.p(g, "base"), upd, rows);
          }) < kTol);
  }
  SUBCASE("dropout in training mode") {
    f.add("a", 6, 5);
    Tensor<double> proj;
    auto loss = [&](bool bw) {
      std::mt19937_64 rng(123);  // same mask on every pass
      G g(true, bw, &rng);
      auto out = dropout(f.p(g, "a"), 0.3);
      if (proj.empty()) {
        std::mt19937_64 r2(5);
        proj = random_tensor(5, 1, r2);
      }
      auto l = sum(matmul(out, g.input(proj)));
      if (bw) {
        f.store.zero_grad();
        g.backward(l);
        g.accumulate_param_grads(f.store);
      }
      return l.value()[0];
    };
    loss(true);
    CHECK(finite_difference_check(f.store, [&] { return loss(false); }).max_rel_error < kTol);
  }
  SUBCASE("attention over separate key spans") {
    f.add("q", 5, 8);
    f.add("k", 5, 8);
    f.add("v", 5, 8);
    const std::vector<RowSpan> spans{{0, 2}, {0, 2}, {2, 5}, {2, 5}, {2, 5}};
    CHECK(op_grad_error(f.store, [&](G& g) {
            return attention(f.p(g, "q"), f.p(g, "k"), f.p(g, "v"), spans, 2, 0.0);
          }) < kTol);
  }
  SUBCASE("softmax cross entropy") {
    f.add("logits", 4, 5, 2.0);
    const std::vector<int> targets{0, 4, 2, 2};
    CHECK(op_grad_error(f.store, [&](G& g) {
            return softmax_cross_entropy(f.p(g, "logits"), targets);
          }) < kTol);
  }
}

TEST_CASE("cross entropy helpers agree") {
  std::mt19937_64 rng(2);
  const auto logits = random_tensor(3, 4, rng, 3.0);
  const std::vector<int> t{1, 0, 3};
  const auto rows = row_cross_entropy(logits, t);
  G g(false, false);
  const double total = softmax_cross_entropy(g.input(logits), t).value()[0];
  CHECK(total == doctest::Approx(rows[0] + rows[1] + rows[2]));
  for (double r : rows) CHECK(r > 0.0);
}

TEST_CASE("matmul counts multiply-accumulates") {
  G g(false, false);
  matmul(g.input(Tensor<double>(3, 4)), g.input(Tensor<double>(4, 5)));
  CHECK(g.macs == 60);
}
