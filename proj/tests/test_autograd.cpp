#include <catch2/catch_amalgamated.hpp>

#include "ptlab/autograd.hpp"
#include "ptlab/rng.hpp"
#include "test_support.hpp"

using namespace ptlab;
using ptest::central_diff;
using ptest::max_rel_err;
using ptest::random_tensor;

TEST_CASE("d/dx of x*x at 3 is 6") {
  Tape tape;
  Tensor x = Tensor::scalar(3.0, true);
  Tensor y = tape.mul(x, x);
  tape.backward(y);
  CHECK(x.grad()[0] == Catch::Approx(6.0).margin(1e-12));
}

TEST_CASE("relu gradient vanishes in the inactive region") {
  Tape tape;
  Tensor x = Tensor::scalar(-1.0, true);
  Tensor y = tape.relu(x);
  Tensor s = tape.sum(y);
  tape.backward(s);
  CHECK(x.grad()[0] == 0.0);
}

TEST_CASE("backward rejects non-scalar loss and empty tape") {
  Tape tape;
  Tensor x = Tensor::from_data({2}, {1, 2}, true);
  Tensor y = tape.relu(x);
  CHECK_THROWS_AS(tape.backward(y), ShapeError);
  Tape empty;
  CHECK_THROWS_AS(empty.backward(Tensor::scalar(1.0, true)), StateError);
}

TEST_CASE("tape is cleared after backward") {
  Tape tape;
  Tensor x = Tensor::scalar(2.0, true);
  Tensor y = tape.mul(x, x);
  tape.backward(y);
  CHECK(tape.node_count() == 0);
}

TEST_CASE("layer norm chain matches central finite differences") {
  Rng rng(7);
  Tensor x = random_tensor(rng, {1, 8}, 2.0);
  Tensor w = random_tensor(rng, {8, 8}, 0.5);
  auto eval = [&]() {
    Tape t;
    Tensor h = t.matmul(x, w);
    Tensor n = t.layer_norm_rows(h);
    Tensor y = t.tanh(n);
    return t.sum(y).value();
  };
  auto fd = central_diff(x, eval);
  Tape t;
  Tensor h = t.matmul(x, w);
  Tensor n = t.layer_norm_rows(h);
  Tensor y = t.tanh(n);
  Tensor loss = t.sum(y);
  t.backward(loss);
  CHECK(max_rel_err(x.grad(), fd) < 1e-4);
}

TEST_CASE("softmax rows sum to one and stay strictly positive") {
  Rng rng(11);
  for (int trial = 0; trial < 50; ++trial) {
    Tape tape;
    Tensor x = random_tensor(rng, {4, 9}, 3.0, false);
    Tensor y = tape.softmax_rows(x);
    for (int i = 0; i < 4; ++i) {
      double row_sum = 0.0;
      for (int j = 0; j < 9; ++j) {
        CHECK(y.at(i, j) > 0.0);
        row_sum += y.at(i, j);
      }
      CHECK(row_sum == Catch::Approx(1.0).margin(1e-9));
    }
  }
}

TEST_CASE("causal softmax normalizes prefixes and zeroes the future") {
  Tape tape;
  Tensor x = Tensor::from_data({3, 3}, {1, 9, 9, 2, 1, 9, 0, 1, 2});
  Tensor y = tape.causal_softmax_rows(x);
  CHECK(y.at(0, 0) == 1.0);
  CHECK(y.at(0, 1) == 0.0);
  CHECK(y.at(0, 2) == 0.0);
  CHECK(y.at(1, 0) + y.at(1, 1) == Catch::Approx(1.0).margin(1e-12));
  CHECK(y.at(1, 2) == 0.0);
  CHECK(y.at(2, 0) + y.at(2, 1) + y.at(2, 2) == Catch::Approx(1.0).margin(1e-12));
}

TEST_CASE("layer norm output has zero mean and unit population variance") {
  Rng rng(13);
  for (int trial = 0; trial < 50; ++trial) {
    Tape tape;
    Tensor x = random_tensor(rng, {2, 16}, 6.0, false);
    Tensor y = tape.layer_norm_rows(x);
    for (int i = 0; i < 2; ++i) {
      double mean = 0.0;
      for (int j = 0; j < 16; ++j) mean += y.at(i, j);
      mean /= 16;
      double var = 0.0;
      for (int j = 0; j < 16; ++j) var += (y.at(i, j) - mean) * (y.at(i, j) - mean);
      var /= 16;
      CHECK(std::fabs(mean) < 1e-9);
      CHECK(std::fabs(var - 1.0) < 1e-6);
    }
  }
}

TEST_CASE("concatenation backward splits gradients without loss") {
  Rng rng(17);
  Tensor a = random_tensor(rng, {2, 3});
  Tensor b = random_tensor(rng, {4, 3});
  Tensor w = random_tensor(rng, {6, 3}, 1.0, false);
  Tape tape;
  Tensor cat = tape.concat_rows({a, b});
  Tensor prod = tape.mul(cat, w);
  Tensor loss = tape.sum(prod);
  tape.backward(loss);
  // the gradient of the whole is exactly the parts' gradients stacked
  double whole_sq = 0.0, parts_sq = 0.0;
  for (int i = 0; i < 2; ++i)
    for (int j = 0; j < 3; ++j) {
      CHECK(a.grad()[i * 3 + j] == w.at(i, j));
      parts_sq += a.grad()[i * 3 + j] * a.grad()[i * 3 + j];
    }
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 3; ++j) {
      CHECK(b.grad()[i * 3 + j] == w.at(i + 2, j));
      parts_sq += b.grad()[i * 3 + j] * b.grad()[i * 3 + j];
    }
  for (int i = 0; i < 6; ++i)
    for (int j = 0; j < 3; ++j) whole_sq += w.at(i, j) * w.at(i, j);
  CHECK(parts_sq == Catch::Approx(whole_sq).margin(1e-12));
}

TEST_CASE("gradient accumulates when a tensor is used twice") {
  Tape tape;
  Tensor x = Tensor::from_data({2}, {1.0, 2.0}, true);
  Tensor y = tape.add(x, x);
  Tensor loss = tape.sum(y);
  tape.backward(loss);
  CHECK(x.grad()[0] == 2.0);
  CHECK(x.grad()[1] == 2.0);
}

TEST_CASE("backward_collect routes external-leaf grads into the sink") {
  Tensor shared = Tensor::from_data({2}, {1.0, 3.0}, true);
  GradMap sink;
  Tape tape;
  Tensor y = tape.mul(shared, shared);
  Tensor loss = tape.sum(y);
  tape.backward_collect(loss, sink);
  CHECK_FALSE(shared.has_grad());
  REQUIRE(sink.size() == 1);
  const auto& g = sink.begin()->second;
  CHECK(g[0] == Catch::Approx(2.0));
  CHECK(g[1] == Catch::Approx(6.0));
}

// Finite-difference sweep over every differentiable op the models use.
TEST_CASE("analytic gradients match central differences across ops") {
  Rng rng(23);
  auto check = [&](const std::function<Tensor(Tape&, std::vector<Tensor>&)>& graph,
                   std::vector<Tensor> inputs) {
    auto eval = [&]() {
      Tape t;
      std::vector<Tensor> in = inputs;
      return graph(t, in).value();
    };
    for (auto& input : inputs) {
      if (!input.requires_grad()) continue;
      auto fd = central_diff(input, eval);
      Tape t;
      std::vector<Tensor> in = inputs;
      Tensor loss = graph(t, in);
      t.backward(loss);
      REQUIRE(input.has_grad());
      CHECK(max_rel_err(input.grad(), fd) < 1e-4);
      for (auto& i2 : inputs) i2.drop_grad();
    }
  };

  SECTION("matmul and matmul_nt") {
    for (int trial = 0; trial < 10; ++trial) {
      check(
          [](Tape& t, std::vector<Tensor>& in) {
            return t.sum(t.tanh(t.matmul(in[0], in[1])));
          },
          {random_tensor(rng, {3, 4}), random_tensor(rng, {4, 2})});
      check(
          [](Tape& t, std::vector<Tensor>& in) {
            return t.sum(t.tanh(t.matmul_nt(in[0], in[1])));
          },
          {random_tensor(rng, {3, 4}), random_tensor(rng, {2, 4})});
    }
  }
  SECTION("elementwise and rowwise") {
    for (int trial = 0; trial < 10; ++trial) {
      check([](Tape& t, std::vector<Tensor>& in) { return t.sum(t.mul(in[0], in[1])); },
            {random_tensor(rng, {2, 5}), random_tensor(rng, {2, 5})});
      check([](Tape& t, std::vector<Tensor>& in) { return t.sum(t.sub(in[0], in[1])); },
            {random_tensor(rng, {7}), random_tensor(rng, {7})});
      check(
          [](Tape& t, std::vector<Tensor>& in) {
            return t.sum(t.tanh(t.add_rowwise(in[0], in[1])));
          },
          {random_tensor(rng, {3, 4}), random_tensor(rng, {4})});
      check(
          [](Tape& t, std::vector<Tensor>& in) {
            return t.sum(t.tanh(t.mul_rowwise(in[0], in[1])));
          },
          {random_tensor(rng, {3, 4}), random_tensor(rng, {4})});
      check([](Tape& t, std::vector<Tensor>& in) { return t.sum(t.scale(in[0], -1.7)); },
            {random_tensor(rng, {3, 3})});
    }
  }
  SECTION("activations away from kinks") {
    for (int trial = 0; trial < 10; ++trial) {
      // keep samples off |x| < 1e-3 so the kink cannot corrupt the stencil
      auto off_kink = [&](std::vector<int> shape) {
        Tensor t = random_tensor(rng, shape);
        for (auto& v : t.mutable_data())
          if (std::fabs(v) < 1e-3) v = v < 0 ? v - 1e-3 : v + 1e-3;
        return t;
      };
      check([](Tape& t, std::vector<Tensor>& in) { return t.sum(t.relu(in[0])); },
            {off_kink({4, 4})});
      check([](Tape& t, std::vector<Tensor>& in) { return t.sum(t.leaky_relu(in[0], 0.01)); },
            {off_kink({4, 4})});
      check([](Tape& t, std::vector<Tensor>& in) { return t.sum(t.tanh(in[0])); },
            {random_tensor(rng, {4, 4})});
    }
  }
  SECTION("softmax, causal softmax, layer norm") {
    for (int trial = 0; trial < 10; ++trial) {
      check(
          [](Tape& t, std::vector<Tensor>& in) {
            return t.sum(t.mul(t.softmax_rows(in[0]), in[1]));
          },
          {random_tensor(rng, {3, 5}), random_tensor(rng, {3, 5}, 1.0, false)});
      check(
          [](Tape& t, std::vector<Tensor>& in) {
            return t.sum(t.mul(t.causal_softmax_rows(in[0]), in[1]));
          },
          {random_tensor(rng, {4, 4}), random_tensor(rng, {4, 4}, 1.0, false)});
      check(
          [](Tape& t, std::vector<Tensor>& in) {
            return t.sum(t.mul(t.layer_norm_rows(in[0]), in[1]));
          },
          {random_tensor(rng, {2, 8}, 3.0), random_tensor(rng, {2, 8}, 1.0, false)});
    }
  }
  SECTION("gather, layout, losses") {
    for (int trial = 0; trial < 10; ++trial) {
      std::vector<int> ids = {2, 0, 2, 1};
      check(
          [ids](Tape& t, std::vector<Tensor>& in) {
            return t.sum(t.tanh(t.embedding(in[0], ids)));
          },
          {random_tensor(rng, {3, 4})});
      check(
          [](Tape& t, std::vector<Tensor>& in) {
            return t.sum(t.tanh(t.concat_rows({in[0], in[1]})));
          },
          {random_tensor(rng, {2, 3}), random_tensor(rng, {1, 3})});
      check(
          [](Tape& t, std::vector<Tensor>& in) {
            return t.sum(t.tanh(t.concat_cols({in[0], in[1]})));
          },
          {random_tensor(rng, {2, 3}), random_tensor(rng, {2, 2})});
      check(
          [](Tape& t, std::vector<Tensor>& in) {
            return t.sum(t.tanh(t.slice_cols(in[0], 1, 2)));
          },
          {random_tensor(rng, {3, 4})});
      check([](Tape& t, std::vector<Tensor>& in) { return t.sum(t.take_row(in[0], 1)); },
            {random_tensor(rng, {3, 4})});
      check(
          [](Tape& t, std::vector<Tensor>& in) {
            return t.sum(t.tanh(t.reshape(in[0], {2, 6})));
          },
          {random_tensor(rng, {3, 4})});
      std::vector<int> tgt = {1, 3};
      check([tgt](Tape& t, std::vector<Tensor>& in) { return t.cross_entropy(in[0], tgt); },
            {random_tensor(rng, {2, 5})});
      check([](Tape& t, std::vector<Tensor>& in) { return t.sqrt_eps(t.sum(t.mul(in[0], in[0]))); },
            {random_tensor(rng, {6})});
      check([](Tape& t, std::vector<Tensor>& in) { return t.mean(t.tanh(in[0])); },
            {random_tensor(rng, {2, 3})});
    }
  }
}
