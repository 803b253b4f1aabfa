#include <doctest.h>

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "dreamnet/autograd.hpp"
#include "dreamnet/errors.hpp"
#include "support.hpp"

using namespace dreamnet;

namespace {

// Projects a matrix-valued op onto a scalar with fixed random weights so every
// output coordinate contributes to the checked gradient.
Var weighted_sum(Graph& g, Var x, std::uint64_t seed) {
  Rng rng(seed);
  return sum(mul(x, g.constant(dntest::random_tensor(rng, x.rows(), x.cols()))));
}

double check(const std::function<Var(Graph&)>& build, std::vector<Tensor*> params, double eps = 1e-5) {
  GradCheckOptions opts;
  opts.eps = eps;
  return grad_check(build, params, opts).max_rel_error;
}

// Reference LSTM assembled from elementary ops, one tape node per gate.
Var lstm_composed(Graph& g, Var projected, Var w_hh, bool reverse) {
  const std::size_t steps = projected.rows(), h = w_hh.rows();
  Var hs = g.constant(Tensor::zeros(1, h));
  Var cs = g.constant(Tensor::zeros(1, h));
  for (std::size_t s = 0; s < steps; ++s) {
    const std::size_t t = reverse ? steps - 1 - s : s;
    const Var gates = add(slice_rows(projected, t, 1), matmul(hs, w_hh));
    const Var i = sigmoid(slice_cols(gates, 0, h));
    const Var f = sigmoid(slice_cols(gates, h, h));
    const Var cand = tanh(slice_cols(gates, 2 * h, h));
    const Var o = sigmoid(slice_cols(gates, 3 * h, h));
    cs = add(mul(f, cs), mul(i, cand));
    hs = mul(o, tanh(cs));
  }
  return hs;
}

}  // namespace

TEST_CASE("elementwise fixed values") {
  Graph g;
  CHECK(sigmoid(g.constant(Tensor({1, 1}, {0.0}))).item() == 0.5);
  const Var r = relu(g.constant(Tensor::row({-2.0, 3.0})));
  CHECK(r.value().data == std::vector<double>{0.0, 3.0});
}

TEST_CASE("sigmoid derivative at zero is one quarter") {
  Tensor x({1, 1}, {0.0});
  Graph g;
  const Var xv = g.parameter(x);
  g.backward(sigmoid(xv));
  CHECK(xv.grad()[0] == doctest::Approx(0.25).epsilon(1e-15));
}

TEST_CASE("x squared at 3 has gradient 6") {
  Tensor x({1, 1}, {3.0});
  Graph g;
  const Var xv = g.parameter(x);
  g.backward(mul(xv, xv));
  CHECK(xv.grad()[0] == 6.0);
}

TEST_CASE("d sum(A B) / dA equals ones times B transposed") {
  Rng rng(5);
  Tensor a = dntest::random_tensor(rng, 3, 4), b = dntest::random_tensor(rng, 4, 2);
  Graph g;
  const Var av = g.parameter(a);
  g.backward(sum(matmul(av, g.constant(b))));
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t k = 0; k < 4; ++k) CHECK(av.grad()[i * 4 + k] == doctest::Approx(b(k, 0) + b(k, 1)));
}

TEST_CASE("backward on a non-scalar is a contract error") {
  Graph g;
  const Var x = g.constant(Tensor::zeros(2, 2));
  CHECK_THROWS_AS(g.backward(x), ContractError);
}

TEST_CASE("parameter leaves are shared within a graph") {
  Tensor w = Tensor::zeros(2, 2);
  Graph g;
  CHECK(g.parameter(w).id == g.parameter(w).id);
}

TEST_CASE("grad_check: quadratic form") {
  Rng rng(6);
  Tensor x = dntest::random_tensor(rng, 1, 5);
  const Tensor a = dntest::random_tensor(rng, 5, 5);
  const double err = check([&](Graph& g) {
    const Var xv = g.parameter(x);
    return sum(mul(matmul(xv, g.constant(a)), xv));
  }, {&x});
  CHECK(err < 1e-9);
}

TEST_CASE("grad_check: softmax feeding a binary cross-entropy") {
  Rng rng(7);
  Tensor w = dntest::random_tensor(rng, 3, 6);
  const std::vector<double> y = {1, 0, 0, 1, 0, 1};
  const double err = check([&](Graph& g) {
    return bce_sum(slice_rows(softmax_rows(g.parameter(w)), 1, 1), y, 1e-7);
  }, {&w});
  CHECK(err < 1e-6);
}

TEST_CASE("grad_check: two-layer toy model under the multilabel objective") {
  Rng rng(8);
  Tensor w1 = dntest::random_tensor(rng, 6, 10, 0.5), b1 = dntest::random_tensor(rng, 1, 10, 0.1);
  Tensor w2 = dntest::random_tensor(rng, 10, 20, 0.5), b2 = dntest::random_tensor(rng, 1, 20, 0.1);
  const Tensor x = dntest::random_tensor(rng, 1, 6);
  std::vector<double> y(20);
  for (double& v : y) v = rng.bernoulli(0.3) ? 1.0 : 0.0;
  const double err = check([&](Graph& g) {
    const Var h = tanh(add_row(matmul(g.constant(x), g.parameter(w1)), g.parameter(b1)));
    const Var p = sigmoid(add_row(matmul(h, g.parameter(w2)), g.parameter(b2)));
    return add(bce_sum(slice_cols(p, 0, 8), std::span<const double>(y.data(), 8), 1e-7),
               bce_sum(slice_cols(p, 8, 12), std::span<const double>(y.data() + 8, 12), 1e-7));
  }, {&w1, &b1, &w2, &b2});
  CHECK(err < 1e-4);
}

TEST_CASE("every op passes a finite-difference check on random shapes") {
  Rng shapes(9);
  for (int trial = 0; trial < 4; ++trial) {
    const std::size_t m = 1 + shapes.below(4), n = 2 + shapes.below(4), k = 1 + shapes.below(4);
    Rng rng(100 + trial);
    Tensor a = dntest::random_tensor(rng, m, n), b = dntest::random_tensor(rng, m, n);
    Tensor c = dntest::random_tensor(rng, n, k), row = dntest::random_tensor(rng, 1, n);
    Tensor d = dntest::random_tensor(rng, k, n);
    Tensor gain = dntest::random_tensor(rng, 1, n), bias = dntest::random_tensor(rng, 1, n);
    const std::uint64_t s = 200 + trial;
    using Build = std::function<Var(Graph&)>;
    const std::vector<std::pair<std::string, std::pair<Build, std::vector<Tensor*>>>> cases = {
        {"matmul", {[&](Graph& g) { return weighted_sum(g, matmul(g.parameter(a), g.parameter(c)), s); }, {&a, &c}}},
        {"matmul_nt", {[&](Graph& g) { return weighted_sum(g, matmul_nt(g.parameter(a), g.parameter(d)), s); }, {&a, &d}}},
        {"transpose", {[&](Graph& g) { return weighted_sum(g, transpose(g.parameter(a)), s); }, {&a}}},
        {"add", {[&](Graph& g) { return weighted_sum(g, add(g.parameter(a), g.parameter(b)), s); }, {&a, &b}}},
        {"sub", {[&](Graph& g) { return weighted_sum(g, sub(g.parameter(a), g.parameter(b)), s); }, {&a, &b}}},
        {"mul", {[&](Graph& g) { return weighted_sum(g, mul(g.parameter(a), g.parameter(b)), s); }, {&a, &b}}},
        {"add_row", {[&](Graph& g) { return weighted_sum(g, add_row(g.parameter(a), g.parameter(row)), s); }, {&a, &row}}},
        {"scale", {[&](Graph& g) { return weighted_sum(g, scale(g.parameter(a), -1.7), s); }, {&a}}},
        {"add_scalar", {[&](Graph& g) { return weighted_sum(g, add_scalar(g.parameter(a), 0.3), s); }, {&a}}},
        {"sigmoid", {[&](Graph& g) { return weighted_sum(g, sigmoid(g.parameter(a)), s); }, {&a}}},
        {"relu", {[&](Graph& g) { return weighted_sum(g, relu(g.parameter(a)), s); }, {&a}}},
        {"tanh", {[&](Graph& g) { return weighted_sum(g, tanh(g.parameter(a)), s); }, {&a}}},
        {"concat_cols", {[&](Graph& g) {
           const Var parts[] = {g.parameter(a), g.parameter(b)};
           return weighted_sum(g, concat_cols(parts), s);
         }, {&a, &b}}},
        {"concat_rows", {[&](Graph& g) {
           const Var parts[] = {g.parameter(a), g.parameter(row)};
           return weighted_sum(g, concat_rows(parts), s);
         }, {&a, &row}}},
        {"slice_cols", {[&](Graph& g) { return weighted_sum(g, slice_cols(g.parameter(a), 1, n - 1), s); }, {&a}}},
        {"slice_rows", {[&](Graph& g) { return weighted_sum(g, slice_rows(g.parameter(a), 0, m), s); }, {&a}}},
        {"mean_rows", {[&](Graph& g) { return weighted_sum(g, mean_rows(g.parameter(a)), s); }, {&a}}},
        {"softmax_rows", {[&](Graph& g) { return weighted_sum(g, softmax_rows(g.parameter(a)), s); }, {&a}}},
        {"softmax_rows masked", {[&](Graph& g) { return weighted_sum(g, softmax_rows(g.parameter(a), n - 1), s); }, {&a}}},
        {"layer_norm_rows", {[&](Graph& g) {
           return weighted_sum(g, layer_norm_rows(g.parameter(a), g.parameter(gain), g.parameter(bias)), s);
         }, {&a, &gain, &bias}}},
        {"dropout", {[&](Graph& g) {
           Rng mask_rng(s);
           return weighted_sum(g, dropout(g.parameter(a), 0.4, mask_rng), s);
         }, {&a}}},
    };
    for (const auto& [name, entry] : cases) {
      CAPTURE(name);
      CAPTURE(trial);
      CHECK(check(entry.first, entry.second) < 1e-6);
    }
  }
}

TEST_CASE("embedding gradient accumulates repeated ids") {
  Rng rng(10);
  Tensor table = dntest::random_tensor(rng, 6, 3);
  const std::vector<std::size_t> ids = {2, 4, 2, 0, 2};
  const double err = check([&](Graph& g) { return weighted_sum(g, embedding(g.parameter(table), ids), 11); }, {&table});
  CHECK(err < 1e-6);
  Graph g;
  const Var tv = g.parameter(table);
  g.backward(sum(embedding(tv, ids)));
  CHECK(tv.grad()[2 * 3] == 3.0);
  CHECK(tv.grad()[1 * 3] == 0.0);
}

TEST_CASE("softmax cross-entropy gradient") {
  Rng rng(12);
  Tensor logits = dntest::random_tensor(rng, 4, 7, 2.0);
  const std::vector<std::pair<std::size_t, std::size_t>> targets = {{0, 3}, {2, 6}, {3, 0}};
  CHECK(check([&](Graph& g) { return softmax_cross_entropy(g.parameter(logits), targets); }, {&logits}) < 1e-6);
}

TEST_CASE("bce_sum clamps probabilities") {
  Graph g;
  const std::vector<double> y = {1.0, 0.0};
  const Var loss = bce_sum(g.constant(Tensor::row({0.0, 1.0})), y, 1e-7);
  CHECK(loss.item() == doctest::Approx(-2.0 * std::log(1e-7)));
}

TEST_CASE("fused LSTM matches the composed-op reference in value and gradient") {
  for (bool reverse : {false, true}) {
    Rng rng(reverse ? 14 : 13);
    const std::size_t steps = 5, h = 3;
    Tensor projected = dntest::random_tensor(rng, steps, 4 * h), w_hh = dntest::random_tensor(rng, h, 4 * h);
    const Tensor readout = dntest::random_tensor(rng, 1, h);

    Graph g1, g2;
    const Var p1 = g1.parameter(projected), w1 = g1.parameter(w_hh);
    const Var p2 = g2.parameter(projected), w2 = g2.parameter(w_hh);
    const Var fused = lstm_final_state(p1, w1, reverse);
    const Var composed = lstm_composed(g2, p2, w2, reverse);
    for (std::size_t j = 0; j < h; ++j) CHECK(fused.value().data[j] == doctest::Approx(composed.value().data[j]).epsilon(1e-13));
    g1.backward(sum(mul(fused, g1.constant(readout))));
    g2.backward(sum(mul(composed, g2.constant(readout))));
    for (std::size_t i = 0; i < projected.numel(); ++i) CHECK(p1.grad()[i] == doctest::Approx(p2.grad()[i]).epsilon(1e-12));
    for (std::size_t i = 0; i < w_hh.numel(); ++i) CHECK(w1.grad()[i] == doctest::Approx(w2.grad()[i]).epsilon(1e-12));
  }
}

TEST_CASE("fused LSTM passes a finite-difference check") {
  Rng rng(15);
  Tensor projected = dntest::random_tensor(rng, 7, 16), w_hh = dntest::random_tensor(rng, 4, 16);
  for (bool reverse : {false, true}) {
    CHECK(check([&](Graph& g) {
      return weighted_sum(g, lstm_final_state(g.parameter(projected), g.parameter(w_hh), reverse), 16);
    }, {&projected, &w_hh}) < 1e-6);
  }
}

TEST_CASE("backward is bitwise deterministic") {
  Rng rng(17);
  Tensor w = dntest::random_tensor(rng, 5, 5), x = dntest::random_tensor(rng, 3, 5);
  auto run = [&] {
    Graph g;
    const Var wv = g.parameter(w);
    g.backward(weighted_sum(g, softmax_rows(matmul(g.constant(x), tanh(wv))), 18));
    return std::vector<double>(wv.grad().begin(), wv.grad().end());
  };
  CHECK(run() == run());
}

TEST_CASE("dropout passes gradient only through kept units") {
  Tensor x = Tensor::filled(1, 200, 1.0);
  Rng rng(19);
  Graph g;
  const Var xv = g.parameter(x);
  const Var y = dropout(xv, 0.5, rng);
  g.backward(sum(y));
  for (std::size_t i = 0; i < 200; ++i) {
    if (y.value().data[i] == 0.0) {
      CHECK(xv.grad()[i] == 0.0);
    } else {
      CHECK(y.value().data[i] == 2.0);
      CHECK(xv.grad()[i] == 2.0);
    }
  }
}

TEST_CASE("disabled gradients record no backward rules") {
  Tensor w = Tensor::filled(2, 2, 1.0);
  Graph g;
  g.set_grad_enabled(false);
  const Var wv = g.parameter(w);
  const Var y = sum(mul(wv, wv));
  CHECK_FALSE(g.needs_grad(y.id));
  CHECK(y.item() == 4.0);
}
