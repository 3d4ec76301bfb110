#include <gtest/gtest.h>

#include <cmath>
#include <cstring>

#include "atgn/gradcheck.hpp"
#include "atgn/ops.hpp"
#include "support.hpp"

using namespace atgn;
using testing_support::numeric_grad;
using testing_support::randn;
using testing_support::worst_violation;

namespace {

// Runs f once with tracking, compares each leaf gradient against central
// differences.
void expect_grads_match(const std::function<Tensor()>& f, std::vector<Tensor> leaves) {
  for (auto& l : leaves) l.zero_grad();
  const auto g = backward(f());
  for (auto& l : leaves) {
    const std::vector<double> analytic = g.contains(l) ? g.at(l) : std::vector<double>(l.numel(), 0.0);
    const auto numeric = numeric_grad([&] { return f().item(); }, l);
    EXPECT_LE(worst_violation(analytic, numeric), 1.0) << "leaf of shape " << shape_str(l.shape());
  }
}

Tensor weights_like(const Tensor& t, std::mt19937_64& rng) { return randn(t.shape(), rng); }

// Reduces any tensor to a scalar with fixed random weights, so every output
// element influences the loss differently.
Tensor probe(const Tensor& y, const Tensor& w) { return sum(mul(y, w)); }

}  // namespace

TEST(Matmul, MatchesTripleLoop) {
  std::mt19937_64 rng(1);
  const Tensor a = randn({7, 5}, rng), b = randn({5, 9}, rng);
  const Tensor c = matmul(a, b);
  for (std::size_t i = 0; i < 7; ++i)
    for (std::size_t j = 0; j < 9; ++j) {
      double acc = 0.0;
      for (std::size_t k = 0; k < 5; ++k) acc += a.at(i, k) * b.at(k, j);
      EXPECT_NEAR(c.at(i, j), acc, 1e-12);
    }
}

TEST(Matmul, SmallExamples) {
  const Tensor eye = Tensor::from({2, 2}, {1, 0, 0, 1});
  const Tensor b = Tensor::from({2, 2}, {3, 4, 5, 6});
  EXPECT_EQ(matmul(eye, b).values(), b.values());
  const Tensor c = matmul(Tensor::from({2, 2}, {1, 2, 3, 4}), Tensor::from({2, 1}, {5, 6}));
  EXPECT_EQ(c.values(), (std::vector<double>{17, 39}));
  EXPECT_EQ(matmul(b, Tensor::zeros({2, 3})).values(), std::vector<double>(6, 0.0));
}

TEST(Matmul, ShapeMismatchNamesBothShapes) {
  try {
    matmul(Tensor::zeros({2, 3}), Tensor::zeros({4, 2}));
    FAIL();
  } catch (const DimensionError& e) {
    EXPECT_NE(std::string(e.what()).find("[2x3]"), std::string::npos) << e.what();
    EXPECT_NE(std::string(e.what()).find("[4x2]"), std::string::npos) << e.what();
  }
}

TEST(Backward, SumAndSquare) {
  Tensor x = Tensor::from({2}, {1, 2}, true);
  auto g = backward(sum(x));
  EXPECT_EQ(g.at(x), (std::vector<double>{1, 1}));
  x.zero_grad();
  g = backward(sum(mul(x, x)));
  EXPECT_EQ(g.at(x), (std::vector<double>{2, 4}));
}

TEST(Backward, FrozenLeafAbsentAndErrors) {
  Tensor x = Tensor::from({2}, {1, 2}, true);
  Tensor frozen = Tensor::from({2}, {3, 4});
  const auto g = backward(sum(mul(x, frozen)));
  EXPECT_TRUE(g.contains(x));
  EXPECT_FALSE(g.contains(frozen));
  EXPECT_THROW(backward(mul(x, frozen)), ArgumentError);
  EXPECT_THROW(backward(sum(frozen)), ArgumentError);
}

TEST(Backward, LeafGradientsAccumulate) {
  Tensor x = Tensor::from({1}, {3}, true);
  backward(sum(mul(x, x)));
  backward(sum(mul(x, x)));
  EXPECT_DOUBLE_EQ(x.grad()[0], 12.0);
}

TEST(Backward, SharedSubgraphVisitedOnce) {
  Tensor x = Tensor::from({1}, {2}, true);
  const Tensor y = mul(x, x);
  const auto g = backward(sum(add(y, y)));  // 2x²
  EXPECT_DOUBLE_EQ(g.at(x)[0], 8.0);
}

TEST(Backward, DeterministicBytes) {
  auto run = [] {
    std::mt19937_64 rng(4);
    Tensor a = randn({6, 5}, rng, true), f = randn({3, 5, 4}, rng, true);
    const auto g = backward(sum(gelu(conv1d_dilated(a, f, 2))));
    return std::make_pair(g.at(a), g.at(f));
  };
  const auto r1 = run(), r2 = run();
  EXPECT_EQ(0, std::memcmp(r1.first.data(), r2.first.data(), r1.first.size() * sizeof(double)));
  EXPECT_EQ(0, std::memcmp(r1.second.data(), r2.second.data(), r1.second.size() * sizeof(double)));
}

TEST(Gradients, ElementwiseAndLinearOps) {
  std::mt19937_64 rng(7);
  Tensor a = randn({4, 3}, rng, true), b = randn({4, 3}, rng, true), m = randn({3, 5}, rng, true);
  Tensor bias = randn({3}, rng, true);
  const Tensor w43 = weights_like(a, rng), w45 = randn({4, 5}, rng), w34 = randn({3, 4}, rng);
  expect_grads_match([&] { return probe(matmul(a, m), w45); }, {a, m});
  expect_grads_match([&] { return probe(transpose(a), w34); }, {a});
  expect_grads_match([&] { return probe(reshape(a, {3, 4}), w34); }, {a});
  expect_grads_match([&] { return probe(add(a, b), w43); }, {a, b});
  expect_grads_match([&] { return probe(sub(a, b), w43); }, {a, b});
  expect_grads_match([&] { return probe(mul(a, b), w43); }, {a, b});
  expect_grads_match([&] { return probe(scale(a, -1.7), w43); }, {a});
  expect_grads_match([&] { return probe(add_bias(a, bias), w43); }, {a, bias});
  expect_grads_match([&] { return mean(mul(a, a)); }, {a});
}

TEST(Gradients, Activations) {
  std::mt19937_64 rng(8);
  Tensor x = randn({5, 4}, rng, true);
  // Keep relu inputs away from the kink.
  for (double& v : x.mutable_data())
    if (std::abs(v) < 1e-3) v = 0.5;
  const Tensor w = weights_like(x, rng);
  expect_grads_match([&] { return probe(relu(x), w); }, {x});
  expect_grads_match([&] { return probe(sigmoid(x), w); }, {x});
  expect_grads_match([&] { return probe(gelu(x), w); }, {x});
  expect_grads_match([&] { return probe(softmax_lastaxis(x), w); }, {x});
  Tensor sq = randn({5, 5}, rng, true);
  const Tensor w55 = weights_like(sq, rng);
  expect_grads_match([&] { return probe(softmax_lastaxis(sq, true), w55); }, {sq});
}

TEST(Gradients, LayerNorm) {
  std::mt19937_64 rng(9);
  Tensor x = randn({3, 6}, rng, true), g = randn({6}, rng, true), b = randn({6}, rng, true);
  const Tensor w = weights_like(x, rng);
  expect_grads_match([&] { return probe(layer_norm(x, g, b), w); }, {x, g, b});
}

TEST(Gradients, StructuralOps) {
  std::mt19937_64 rng(10);
  Tensor a = randn({3, 2}, rng, true), b = randn({3, 4}, rng, true), c = randn({2, 2}, rng, true);
  const Tensor w_cat = randn({3, 6}, rng);
  expect_grads_match([&] { return probe(concat_lastaxis({a, b}), w_cat); }, {a, b});
  const Tensor w_slice = randn({3, 2}, rng);
  expect_grads_match([&] { return probe(slice_lastaxis(b, 1, 2), w_slice); }, {b});
  const Tensor w_rows = randn({5, 2}, rng);
  expect_grads_match([&] { return probe(concat_rows({a, c}), w_rows); }, {a, c});
  Tensor v = randn({2, 3, 4}, rng, true);
  const Tensor w0 = randn({3, 4}, rng), w1 = randn({2, 4}, rng);
  expect_grads_match([&] { return probe(mean_pool_axis(v, 0), w0); }, {v});
  expect_grads_match([&] { return probe(mean_pool_axis(v, 1), w1); }, {v});
}

TEST(Gradients, Convolutions) {
  std::mt19937_64 rng(11);
  Tensor x = randn({11, 3}, rng, true), f = randn({3, 3, 2}, rng, true);
  const Tensor w = randn({11, 2}, rng);
  for (std::size_t d : {1, 2, 4}) expect_grads_match([&] { return probe(conv1d_dilated(x, f, d), w); }, {x, f});
  Tensor img = randn({6, 4, 2}, rng, true), k = randn({3, 3, 2, 3}, rng, true);
  const Tensor wi = randn({6, 4, 3}, rng), wp = randn({3, 2, 2}, rng);
  expect_grads_match([&] { return probe(conv2d_same(img, k), wi); }, {img, k});
  expect_grads_match([&] { return probe(avg_pool2x2(img), wp); }, {img});
}

TEST(Gradients, DropoutFixedSeed) {
  std::mt19937_64 rng(12);
  Tensor x = randn({6, 5}, rng, true);
  const Tensor w = weights_like(x, rng);
  expect_grads_match([&] { return probe(dropout(x, 0.3, 99), w); }, {x});
}

TEST(Gradients, LibraryCheckerAgrees) {
  std::mt19937_64 rng(13);
  Tensor x = randn({4, 4}, rng, true), g = randn({4}, rng, true), b = randn({4}, rng, true);
  const auto r = check_gradients([&] { return sum(gelu(layer_norm(x, g, b))); }, {x, g, b});
  EXPECT_TRUE(r.ok) << r.worst;
  EXPECT_EQ(r.probes, 24u);
}

TEST(Gradients, LibraryCheckerCatchesWrongGradient) {
  // An op whose backward is off by a factor of two must be flagged.
  Tensor x = Tensor::from({3}, {0.3, -1.2, 2.0}, true);
  auto bad_square = [](const Tensor& t) {
    std::vector<double> out;
    for (double v : t.data()) out.push_back(v * v);
    return detail::make_result("bad_square", t.shape(), out, {t}, [](detail::Node& self) {
      double* g = detail::input_grad(self, 0);
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += 4.0 * self.inputs[0]->data[i] * self.grad[i];
    });
  };
  const auto r = check_gradients([&] { return sum(bad_square(x)); }, {x});
  EXPECT_FALSE(r.ok);
}

TEST(Conv1d, MatchesQuadrupleLoop) {
  std::mt19937_64 rng(14);
  const std::size_t len = 17, cin = 3, cout = 4, k = 3;
  const Tensor x = randn({len, cin}, rng), f = randn({k, cin, cout}, rng);
  for (std::size_t d : {1, 2, 3, 8}) {
    const Tensor y = conv1d_dilated(x, f, d);
    for (std::size_t t = 0; t < len; ++t)
      for (std::size_t o = 0; o < cout; ++o) {
        double acc = 0.0;
        for (std::size_t s = 0; s < k; ++s) {
          if (t < d * s) continue;
          for (std::size_t c = 0; c < cin; ++c) acc += f[(s * cin + c) * cout + o] * x[(t - d * s) * cin + c];
        }
        EXPECT_NEAR(y[t * cout + o], acc, 1e-12);
      }
  }
}

TEST(Conv1d, HandExamples) {
  const Tensor x = Tensor::from({4, 1}, {1, 2, 3, 4});
  const Tensor f = Tensor::from({2, 1, 1}, {1, 1});
  EXPECT_EQ(conv1d_dilated(x, f, 2).values(), (std::vector<double>{1, 2, 4, 6}));

  // Identity kernel passes input through for any dilation.
  const Tensor x2 = Tensor::from({3, 2}, {1, 2, 3, 4, 5, 6});
  const Tensor eye = Tensor::from({1, 2, 2}, {1, 0, 0, 1});
  for (std::size_t d : {1, 3}) EXPECT_EQ(conv1d_dilated(x2, eye, d).values(), x2.values());

  std::vector<double> imp(12, 0.0);
  imp[0] = 1.0;
  const Tensor y = conv1d_dilated(Tensor::from({12, 1}, imp), Tensor::from({3, 1, 1}, {1, 1, 1}), 4);
  for (std::size_t t = 0; t < 12; ++t) EXPECT_EQ(y[t] != 0.0, t == 0 || t == 4 || t == 8) << t;
}

TEST(Conv1d, Errors) {
  EXPECT_THROW(conv1d_dilated(Tensor::zeros({3, 1}), Tensor::zeros({2, 1, 1}), 0), ArgumentError);
  EXPECT_THROW(conv1d_dilated(Tensor::zeros({0, 1}), Tensor::zeros({2, 1, 1}), 1), ArgumentError);
  EXPECT_THROW(conv1d_dilated(Tensor::zeros({3, 2}), Tensor::zeros({2, 1, 1}), 1), DimensionError);
}

TEST(LayerNorm, Examples) {
  const Tensor one = Tensor::full({2}, 1.0), zero = Tensor::zeros({2});
  const Tensor y = layer_norm(Tensor::from({1, 2}, {1, 3}), one, zero, 1e-12);
  EXPECT_NEAR(y[0], -1.0, 1e-9);
  EXPECT_NEAR(y[1], 1.0, 1e-9);
  EXPECT_EQ(layer_norm(Tensor::from({1, 2}, {5, 5}), one, zero).values(), (std::vector<double>{0, 0}));
  const Tensor b = Tensor::from({2}, {0.25, -2});
  EXPECT_EQ(layer_norm(Tensor::from({1, 2}, {4, -7}), zero, b).values(), b.values());
  EXPECT_THROW(layer_norm(Tensor::from({1, 2}, {1, 3}), one, zero, 0.0), ArgumentError);
}

TEST(Softmax, RowsSumToOneAndMaskIsExact) {
  std::mt19937_64 rng(15);
  const Tensor x = randn({6, 6}, rng, false, 5.0);
  const Tensor p = softmax_lastaxis(x, true);
  for (std::size_t i = 0; i < 6; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < 6; ++j) {
      s += p.at(i, j);
      if (j > i) {
        EXPECT_EQ(p.at(i, j), 0.0);
      }
    }
    EXPECT_NEAR(s, 1.0, 1e-12);
  }
  EXPECT_EQ(softmax_lastaxis(Tensor::from({1, 2}, {0, 0})).values(), (std::vector<double>{0.5, 0.5}));
  // Masked 2×2 scores: row 0 can only see itself.
  const Tensor m = softmax_lastaxis(Tensor::from({2, 2}, {0.3, 9.0, 0.1, 0.7}), true);
  EXPECT_EQ(m[0], 1.0);
  EXPECT_EQ(m[1], 0.0);
}

TEST(Activations, Ranges) {
  EXPECT_EQ(sigmoid(Tensor::scalar(0.0)).item(), 0.5);
  const Tensor s = sigmoid(Tensor::from({4}, {-800, -30, 30, 800}));
  for (double v : s.data()) {
    EXPECT_GE(v, 0.0);
    EXPECT_LE(v, 1.0);
    EXPECT_TRUE(std::isfinite(v));
  }
  EXPECT_GT(s[1], 0.0);
  EXPECT_LT(s[2], 1.0);
  EXPECT_EQ(relu(Tensor::from({2}, {-1, 2})).values(), (std::vector<double>{0, 2}));
}

TEST(Concat, ShapesAndErrors) {
  const Tensor c = concat_lastaxis({Tensor::zeros({4, 2}), Tensor::zeros({4, 3})});
  EXPECT_EQ(c.shape(), (Shape{4, 5}));
  EXPECT_THROW(concat_lastaxis({Tensor::zeros({4, 2}), Tensor::zeros({3, 3})}), DimensionError);
}

TEST(Dropout, InvertedScalingAndDeterminism) {
  const Tensor x = Tensor::full({1000}, 1.0);
  const Tensor a = dropout(x, 0.25, 5), b = dropout(x, 0.25, 5);
  EXPECT_EQ(a.values(), b.values());
  std::size_t kept = 0;
  for (double v : a.data()) {
    if (v != 0.0) {
      EXPECT_DOUBLE_EQ(v, 1.0 / 0.75);
      ++kept;
    }
  }
  EXPECT_NEAR(static_cast<double>(kept) / 1000.0, 0.75, 0.05);
  EXPECT_EQ(dropout(x, 0.0, 5).values(), x.values());
}

TEST(Tensor, ShapeInvariant) {
  EXPECT_THROW(Tensor::from({2, 3}, {1, 2, 3}), DimensionError);
  Tensor t = Tensor::from({2, 2}, {1, 2, 3, 4}, true);
  backward(sum(t));
  EXPECT_EQ(t.grad().size(), t.numel());
}
