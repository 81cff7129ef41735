#include <catch2/catch_amalgamated.hpp>

#include "ptlab/autograd.hpp"
#include "ptlab/tensor.hpp"

using namespace ptlab;

TEST_CASE("shape and data length must agree") {
  CHECK_THROWS_AS(Tensor::from_data({2, 3}, {1.0, 2.0}), ShapeError);
  CHECK_THROWS_AS(Tensor::from_data({0}, {}), ShapeError);
  Tensor t = Tensor::from_data({2, 2}, {1, 2, 3, 4});
  CHECK(t.size() == 4);
  CHECK(t.at(1, 0) == 3.0);
}

TEST_CASE("non-finite input data is rejected") {
  CHECK_THROWS_AS(Tensor::from_data({2}, {1.0, std::nan("")}, false), NonFiniteError);
  CHECK_THROWS_AS(Tensor::from_data({1}, {std::numeric_limits<double>::infinity()}),
                  NonFiniteError);
}

TEST_CASE("relu clamps negatives") {
  Tape tape;
  Tensor x = Tensor::from_data({3}, {-1.0, 0.0, 2.0});
  Tensor y = tape.relu(x);
  CHECK(y.data()[0] == 0.0);
  CHECK(y.data()[1] == 0.0);
  CHECK(y.data()[2] == 2.0);
}

TEST_CASE("layer norm maps a constant vector to zero") {
  Tape tape;
  Tensor x = Tensor::from_data({1, 4}, {2.0, 2.0, 2.0, 2.0});
  Tensor y = tape.layer_norm_rows(x);
  for (double v : y.data()) CHECK(v == 0.0);
}

TEST_CASE("softmax of equal logits is uniform") {
  Tape tape;
  Tensor x = Tensor::from_data({2}, {0.0, 0.0});
  Tensor y = tape.softmax_rows(x);
  CHECK(y.data()[0] == Catch::Approx(0.5).margin(1e-15));
  CHECK(y.data()[1] == Catch::Approx(0.5).margin(1e-15));
}

TEST_CASE("ops reject mismatched shapes with both shapes named") {
  Tape tape;
  Tensor a = Tensor::from_data({2, 2}, {1, 2, 3, 4});
  Tensor b = Tensor::from_data({3}, {1, 2, 3});
  try {
    tape.matmul(a, b);
    FAIL("expected ShapeError");
  } catch (const ShapeError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("[2x2]") != std::string::npos);
    CHECK(msg.find("[3]") != std::string::npos);
  }
}

TEST_CASE("non-finite op results are rejected") {
  Tape tape;
  Tensor big = Tensor::from_data({1, 1}, {1e308});
  CHECK_THROWS_AS(tape.mul(big, big), NonFiniteError);
}

TEST_CASE("ops are recorded only when an input requires grad") {
  Tape tape;
  Tensor a = Tensor::from_data({2}, {1, 2}, false);
  Tensor b = Tensor::from_data({2}, {3, 4}, false);
  tape.add(a, b);
  CHECK(tape.node_count() == 0);
  Tensor c = Tensor::from_data({2}, {3, 4}, true);
  Tensor d = tape.add(a, c);
  CHECK(tape.node_count() == 1);
  CHECK(d.requires_grad());
}
