#include <doctest.h>

#include <cstdio>
#include <fstream>
#include <sstream>

#include "cerberus/ops.hpp"
#include "cerberus/rng.hpp"
#include "cerberus/tensor.hpp"
#include "cerberus/tensor_io.hpp"

using namespace cerberus;

TEST_SUITE_BEGIN("tensor");

TEST_CASE("shape bookkeeping") {
  Tensor t = Tensor::zeros({2, 3, 4});
  CHECK(t.rank() == 3);
  CHECK(t.size() == 24);
  CHECK(t.dim(1) == 3);
  CHECK_THROWS_AS(Tensor::from_vector({2, 2}, {1.0, 2.0, 3.0}), DimensionError);
}

TEST_CASE("scalar item") {
  CHECK(Tensor::scalar(2.5).item() == 2.5);
  CHECK_THROWS_AS(Tensor::zeros({2}).item(), DimensionError);
}

TEST_CASE("gradients accumulate and zero") {
  Tensor t = Tensor::from_vector({2}, {1.0, 2.0}, true);
  t.accumulate_grad(Eigen::ArrayXd::Constant(2, 1.5));
  t.accumulate_grad(Eigen::ArrayXd::Constant(2, 0.5));
  CHECK(t.grad()[0] == 2.0);
  t.zero_grad();
  CHECK(t.grad()[1] == 0.0);
}

TEST_CASE("non-finite values are a hard error") {
  Tensor a = Tensor::from_vector({1}, {1e308});
  Tensor b = Tensor::from_vector({1}, {1e308});
  GradientTape tape;
  CHECK_THROWS_AS(add(a, b), NumericError);
}

TEST_CASE("two backward passes on identical tapes are bit-identical") {
  Rng rng(11);
  std::vector<double> vals(12);
  for (double& v : vals) v = rng.normal();

  auto run = [&]() {
    Tensor x = Tensor::from_vector({3, 4}, vals, true);
    GradientTape tape;
    Tensor loss = sum(mul(x, gelu(x)));
    tape.backward(loss);
    return Eigen::ArrayXd(x.grad());
  };
  Eigen::ArrayXd g1 = run();
  Eigen::ArrayXd g2 = run();
  for (long i = 0; i < g1.size(); ++i) CHECK(g1[i] == g2[i]);
}

TEST_CASE("cleared tape drops recorded state") {
  Tensor x = Tensor::from_vector({2}, {1.0, 2.0}, true);
  GradientTape tape;
  Tensor loss = sum(mul(x, x));
  CHECK(tape.size() > 0);
  tape.clear();
  CHECK(tape.size() == 0);
  // A fresh pass on a new tape starts from clean gradients after zero_grad.
  x.zero_grad();
  GradientTape tape2;
  Tensor loss2 = sum(mul(x, x));
  tape2.backward(loss2);
  CHECK(x.grad()[0] == doctest::Approx(2.0));
  CHECK(x.grad()[1] == doctest::Approx(4.0));
}

TEST_CASE("backward rejects non-scalar loss") {
  Tensor x = Tensor::from_vector({2}, {1.0, 2.0}, true);
  GradientTape tape;
  Tensor y = mul(x, x);
  CHECK_THROWS_AS(tape.backward(y), DimensionError);
}

TEST_CASE("tensor file round-trip") {
  Rng rng(3);
  Eigen::ArrayXd data(30);
  for (long i = 0; i < data.size(); ++i) data[i] = rng.normal();
  Tensor t = Tensor::from_array({2, 3, 5}, data);

  std::stringstream ss;
  write_tensor(ss, t);
  Tensor back = read_tensor(ss, "<mem>");
  REQUIRE(back.shape() == Shape{2, 3, 5});
  for (long i = 0; i < t.size(); ++i) CHECK(back.array()[i] == t.array()[i]);
}

TEST_CASE("tensor file header is the documented layout") {
  Tensor t = Tensor::from_vector({2}, {1.0, 2.0});
  std::stringstream ss;
  write_tensor(ss, t);
  const std::string blob = ss.str();
  REQUIRE(blob.size() == 4 + 4 + 4 + 4 + 16);
  CHECK(blob.substr(0, 4) == "CERB");
  CHECK(static_cast<unsigned char>(blob[4]) == 1);  // version u32 LE
  CHECK(static_cast<unsigned char>(blob[8]) == 1);  // rank u32 LE
  CHECK(static_cast<unsigned char>(blob[12]) == 2); // extent u32 LE
}

TEST_CASE("malformed tensor file reports the path") {
  std::stringstream ss;
  ss << "JUNKxxxx";
  CHECK_THROWS_WITH_AS(read_tensor(ss, "bad.bin"), "bad tensor magic in bad.bin", ParseError);
}

TEST_SUITE_END();
