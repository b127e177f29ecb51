#include <gtest/gtest.h>

#include <cmath>

#include "gbemt/errors.hpp"
#include "gbemt/tensor.hpp"
#include "support/gradcheck.hpp"

namespace gbemt {
namespace {

using testing::max_gradient_error;
using testing::random_tensor;

constexpr double kTol = 1e-5;

TEST(Tensor, Construction) {
  const Tensor m = Tensor::matrix({{1, 2, 3}, {4, 5, 6}});
  EXPECT_EQ(m.shape(), (Shape{2, 3}));
  EXPECT_EQ(m.at(1, 2), 6);
  EXPECT_EQ(Tensor::scalar(2.5).item(), 2.5);
  EXPECT_THROW(Tensor(Shape{2, 2}, std::vector<double>{1, 2, 3}), ShapeError);
  EXPECT_EQ(m.reshaped({3, 2}).at(2, 1), 6);
  EXPECT_THROW(m.reshaped({4}), ShapeError);
}

TEST(Matmul, Examples) {
  const Tensor a = Tensor::matrix({{1, 2}, {3, 4}});
  EXPECT_EQ(matmul(a, Tensor::matrix({{1}, {1}})), Tensor::matrix({{3}, {7}}));
  EXPECT_EQ(matmul(Tensor::matrix({{1, 0}, {0, 1}}), a), a);
  const Tensor empty = matmul(Tensor(Shape{1, 0}), Tensor(Shape{0, 1}));
  EXPECT_EQ(empty, Tensor::matrix({{0}}));
}

TEST(Matmul, ShapeErrorNamesShapes) {
  try {
    matmul(Tensor(Shape{2, 3}), Tensor(Shape{2, 3}));
    FAIL();
  } catch (const ShapeError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("[2x3]"), std::string::npos) << msg;
  }
}

TEST(Matmul, Associativity) {
  SplitMix64 rng(1);
  const Tensor a = random_tensor({4, 5}, rng), b = random_tensor({5, 3}, rng), c = random_tensor({3, 2}, rng);
  const Tensor left = matmul(matmul(a, b), c), right = matmul(a, matmul(b, c));
  for (std::size_t i = 0; i < left.size(); ++i) EXPECT_NEAR(left[i], right[i], 1e-9);
}

TEST(Softmax, Examples) {
  const Tensor half = softmax(Tensor::vector({0, 0}), 0);
  EXPECT_DOUBLE_EQ(half[0], 0.5);
  const Tensor big = softmax(Tensor::vector({1000, 1000}), 0);
  EXPECT_DOUBLE_EQ(big[0], 0.5);
  EXPECT_DOUBLE_EQ(big[1], 0.5);
  const Tensor q = softmax(Tensor::vector({0, std::log(3.0)}), 0);
  EXPECT_NEAR(q[0], 0.25, 1e-15);
  EXPECT_NEAR(q[1], 0.75, 1e-15);
}

TEST(Softmax, RowsSumToOneAndShiftInvariant) {
  SplitMix64 rng(2);
  Tensor x = random_tensor({3, 4, 5}, rng);
  for (std::size_t axis = 0; axis < 3; ++axis) {
    const Tensor s = softmax(x, axis);
    Tensor shifted = x;
    for (auto& v : shifted.data()) v += 17.0;
    const Tensor s2 = softmax(shifted, axis);
    for (std::size_t i = 0; i < s.size(); ++i) EXPECT_NEAR(s[i], s2[i], 1e-12);
  }
  const Tensor s = softmax(x, 2);
  for (std::size_t r = 0; r < s.rows(); ++r) {
    double total = 0;
    for (std::size_t c = 0; c < s.cols(); ++c) total += s.at(r, c);
    EXPECT_NEAR(total, 1.0, 1e-12);
  }
}

TEST(Backward, SumGivesOnes) {
  Tape tape;
  Var x = tape.parameter(Tensor(Shape{2, 3}, 0.7));
  tape.backward(sum(x));
  for (double g : x.grad().data()) EXPECT_EQ(g, 1.0);
}

TEST(Backward, Square) {
  Tape tape;
  Var x = tape.parameter(Tensor::scalar(3.0));
  tape.backward(mul(x, x));
  EXPECT_EQ(x.grad().item(), 6.0);
}

TEST(Backward, Contract) {
  Tape tape;
  Var x = tape.parameter(Tensor(Shape{2}, 1.0));
  EXPECT_THROW(tape.backward(x), ContractError);
  Var loss = sum(x);
  tape.backward(loss);
  EXPECT_THROW(tape.backward(loss), ContractError);
  tape.reset_grads();
  tape.backward(loss);
  EXPECT_EQ(x.grad()[0], 1.0);
}

TEST(Backward, ConstantsGetNoGradientNodes) {
  Tape tape;
  Var a = tape.constant(Tensor::matrix({{1, 2}}));
  Var b = tape.constant(Tensor::matrix({{3}, {4}}));
  Var c = matmul(a, b);
  EXPECT_FALSE(c.requires_grad());
  EXPECT_EQ(c.value().item(), 11.0);
}

TEST(Backward, BindReadsExternalTensor) {
  Tensor w = Tensor::matrix({{2, 0}, {0, 2}});
  Tape tape;
  Var v = tape.bind(w, true);
  Var x = tape.constant(Tensor::matrix({{1, 1}}));
  tape.backward(sum(matmul(x, v)));
  EXPECT_EQ(v.value(), w);
  EXPECT_EQ(v.grad(), Tensor::matrix({{1, 1}, {1, 1}}));
}

// Weighted sum so that every output element gets a distinct upstream gradient.
Var weighted(Var x, std::uint64_t seed) {
  SplitMix64 rng(seed);
  Tensor w(x.shape());
  for (auto& v : w.data()) v = 2.0 * rng.uniform() - 1.0;
  return sum(mul(x, x.tape().constant(w)));
}

struct GradCase {
  const char* name;
  std::vector<Shape> shapes;
  testing::LossBuilder build;
};

class GradientCheck : public ::testing::TestWithParam<int> {};

const std::vector<GradCase>& grad_cases() {
  static const std::vector<GradCase> cases{
      {"matmul", {{3, 4}, {4, 2}}, [](Tape&, const std::vector<Var>& v) { return weighted(matmul(v[0], v[1]), 1); }},
      {"matmul_transposed", {{3, 4}, {5, 4}},
       [](Tape&, const std::vector<Var>& v) { return weighted(matmul_transposed(v[0], v[1]), 2); }},
      {"transpose", {{3, 4}}, [](Tape&, const std::vector<Var>& v) { return weighted(transpose(v[0]), 3); }},
      {"add", {{2, 3}, {2, 3}}, [](Tape&, const std::vector<Var>& v) { return weighted(add(v[0], v[1]), 4); }},
      {"add_bias", {{4, 3}, {3}}, [](Tape&, const std::vector<Var>& v) { return weighted(add_bias(v[0], v[1]), 5); }},
      {"mul", {{2, 3}, {2, 3}}, [](Tape&, const std::vector<Var>& v) { return weighted(mul(v[0], v[1]), 6); }},
      {"scale", {{2, 3}}, [](Tape&, const std::vector<Var>& v) { return weighted(scale(v[0], -1.7), 7); }},
      {"relu", {{4, 5}}, [](Tape&, const std::vector<Var>& v) { return weighted(relu(v[0]), 8); }},
      {"reshape", {{2, 6}}, [](Tape&, const std::vector<Var>& v) { return weighted(reshape(v[0], {3, 4}), 9); }},
      {"softmax_rows", {{3, 5}}, [](Tape&, const std::vector<Var>& v) { return weighted(softmax_rows(v[0]), 10); }},
      {"masked_softmax", {{3, 3}},
       [](Tape&, const std::vector<Var>& v) {
         static const std::vector<std::uint8_t> mask{1, 0, 0, 1, 1, 0, 0, 0, 0};
         return weighted(masked_softmax(v[0], mask), 11);
       }},
      {"layer_norm", {{3, 5}, {5}, {5}},
       [](Tape&, const std::vector<Var>& v) { return weighted(layer_norm(v[0], v[1], v[2], 1e-6), 12); }},
      {"embedding", {{6, 4}},
       [](Tape&, const std::vector<Var>& v) {
         static const std::vector<int> ids{2, 0, 2, 5};
         return weighted(embedding(v[0], ids), 13);
       }},
      {"slice_concat", {{3, 5}, {3, 2}},
       [](Tape&, const std::vector<Var>& v) {
         Var parts = concat_cols({slice_cols(v[0], 1, 3), v[1], slice_cols(v[0], 0, 1)});
         return weighted(concat_rows({parts, parts}), 14);
       }},
      {"dropout", {{4, 5}}, [](Tape&, const std::vector<Var>& v) { return weighted(dropout(v[0], 0.3, 99), 15); }},
      {"add_constant", {{2, 2}},
       [](Tape&, const std::vector<Var>& v) { return weighted(add_constant(v[0], Tensor::matrix({{1, 2}, {3, 4}})), 16); }},
      {"cross_entropy_sum", {{4, 5}},
       [](Tape&, const std::vector<Var>& v) {
         static const std::vector<int> targets{1, 0, 4, 2};
         return cross_entropy_sum(v[0], targets, 0, 0.1);
       }},
  };
  return cases;
}

TEST_P(GradientCheck, MatchesFiniteDifferences) {
  const GradCase& c = grad_cases()[static_cast<std::size_t>(GetParam())];
  SplitMix64 rng(100 + static_cast<std::uint64_t>(GetParam()));
  std::vector<Tensor> inputs;
  for (const auto& s : c.shapes) inputs.push_back(random_tensor(s, rng));
  EXPECT_LT(max_gradient_error(c.build, inputs), kTol) << c.name;
}

INSTANTIATE_TEST_SUITE_P(Ops, GradientCheck, ::testing::Range(0, 17),
                         [](const ::testing::TestParamInfo<int>& info) {
                           return std::string(grad_cases()[static_cast<std::size_t>(info.param)].name);
                         });

TEST(Ops, ShapeErrors) {
  Tape tape;
  Var a = tape.constant(Tensor(Shape{2, 3}));
  Var b = tape.constant(Tensor(Shape{3, 2}));
  EXPECT_THROW(add(a, b), ShapeError);
  EXPECT_THROW(add_bias(a, tape.constant(Tensor(Shape{2}))), ShapeError);
  EXPECT_THROW(mul(a, b), ShapeError);
  EXPECT_THROW(matmul_transposed(a, b), ShapeError);
}

TEST(Ops, MaskedSoftmaxZeroesFullyMaskedRows) {
  Tape tape;
  Var s = tape.constant(Tensor::matrix({{1, 2}, {3, 4}}));
  const std::vector<std::uint8_t> mask{1, 1, 0, 0};
  const Tensor out = masked_softmax(s, mask).value();
  EXPECT_EQ(out.at(1, 0), 0.0);
  EXPECT_EQ(out.at(1, 1), 0.0);
  EXPECT_NEAR(out.at(0, 0) + out.at(0, 1), 1.0, 1e-15);
}

TEST(Ops, EmbeddingRangeError) {
  Tape tape;
  Var table = tape.constant(Tensor(Shape{3, 2}));
  const std::vector<int> ids{3};
  EXPECT_THROW(embedding(table, ids), VocabError);
}

TEST(Ops, DropoutKeepsExpectationAndIsSeeded) {
  Tape tape;
  Var x = tape.constant(Tensor(Shape{100, 100}, 1.0));
  const Tensor a = dropout(x, 0.25, 5).value();
  EXPECT_EQ(a, dropout(x, 0.25, 5).value());
  EXPECT_NE(a, dropout(x, 0.25, 6).value());
  double total = 0;
  for (double v : a.data()) {
    EXPECT_TRUE(v == 0.0 || std::abs(v - 1.0 / 0.75) < 1e-12);
    total += v;
  }
  EXPECT_NEAR(total / 10000.0, 1.0, 0.05);
  EXPECT_EQ(dropout(x, 0.0, 5).value(), x.value());
}

TEST(Ops, CrossEntropyUniformLogits) {
  Tape tape;
  Var logits = tape.constant(Tensor(Shape{2, 4}, 0.3));
  const std::vector<int> targets{1, 0};
  EXPECT_NEAR(cross_entropy_sum(logits, targets, 0, 0.0).value().item(), std::log(4.0), 1e-12);
}

}  // namespace
}  // namespace gbemt
