#include <catch2/catch_amalgamated.hpp>

#include "ptlab/autograd.hpp"
#include "ptlab/optim.hpp"

using namespace ptlab;

TEST_CASE("default learning rate is 0.001") {
  AdamWConfig cfg;
  CHECK(cfg.learning_rate == 0.001);
}

TEST_CASE("zero gradients with zero weight decay leave parameters unchanged") {
  AdamWConfig cfg;
  cfg.weight_decay = 0.0;
  AdamW opt(cfg);
  Tensor p = Tensor::from_data({3}, {1.0, -2.0, 0.5}, true);
  opt.add_param("p", p);
  opt.zero_grad();
  (void)p.grad();  // materialize a zero gradient buffer
  opt.step();
  CHECK(p.data()[0] == 1.0);
  CHECK(p.data()[1] == -2.0);
  CHECK(p.data()[2] == 0.5);
  CHECK(opt.step_count() == 1);
}

TEST_CASE("one step matches the hand-evaluated AdamW update") {
  AdamWConfig cfg;  // lr 1e-3, b1 0.9, b2 0.999, eps 1e-8, wd 0.01
  AdamW opt(cfg);
  const double theta0 = 0.7, g = 0.3;
  Tensor p = Tensor::scalar(theta0, true);
  opt.add_param("theta", p);
  p.grad()[0] = g;
  opt.step();
  // hand evaluation of the decoupled update at t = 1
  const double m = (1 - 0.9) * g, v = (1 - 0.999) * g * g;
  const double m_hat = m / (1 - 0.9), v_hat = v / (1 - 0.999);
  const double expected =
      theta0 - cfg.learning_rate * (m_hat / (std::sqrt(v_hat) + cfg.epsilon) + 0.01 * theta0);
  CHECK(p.data()[0] == Catch::Approx(expected).margin(1e-12));
}

TEST_CASE("missing gradient is rejected naming the parameter") {
  AdamW opt;
  Tensor a = Tensor::scalar(1.0, true);
  Tensor b = Tensor::scalar(2.0, true);
  opt.add_param("alpha", a);
  opt.add_param("beta", b);
  a.grad()[0] = 0.1;
  try {
    opt.step();
    FAIL("expected StateError");
  } catch (const StateError& e) {
    CHECK(std::string(e.what()).find("beta") != std::string::npos);
  }
}

TEST_CASE("frozen tensors cannot be registered") {
  AdamW opt;
  Tensor p = Tensor::from_data({2}, {1.0, 2.0}, false);
  CHECK_THROWS_AS(opt.add_param("frozen", p), StateError);
}

TEST_CASE("step counter increases by one per apply") {
  AdamW opt;
  Tensor p = Tensor::scalar(1.0, true);
  opt.add_param("p", p);
  for (int i = 1; i <= 5; ++i) {
    p.zero_grad();
    (void)p.grad();
    opt.step();
    CHECK(opt.step_count() == i);
  }
}

TEST_CASE("moment buffers follow the parameter shape") {
  AdamW opt;
  Tensor p = Tensor::from_data({2, 3}, {1, 2, 3, 4, 5, 6}, true);
  opt.add_param("w", p);
  (void)p.grad();
  opt.step();  // would fault if the buffers were sized wrong
  CHECK(opt.param_count() == 1);
}
