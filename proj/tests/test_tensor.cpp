#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "geocaps/gradcheck.hpp"
#include "geocaps/ops.hpp"

using namespace geocaps;

namespace {

Tensor<double> random_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Tensor<double> t = Tensor<double>::zeros(std::move(shape));
  for (Index i = 0; i < t.size(); ++i) t[i] = rng.uniform(lo, hi);
  return t;
}

}  // namespace

TEST_CASE("conv2d spatial arithmetic") {
  Rng rng(1);
  // 7x7 input, 3x3 kernel, stride 1, valid -> 5x5 output
  Tensor<double> x = random_tensor({1, 2, 7, 7}, rng);
  Tensor<double> k = random_tensor({4, 2, 3, 3}, rng);
  Tensor<double> y = conv2d(x, k, 1, Padding::valid);
  CHECK(y.shape() == Shape{1, 4, 5, 5});

  // 1x1 kernel of value 1 is the identity on a single channel
  Tensor<double> x1 = random_tensor({2, 1, 5, 6}, rng);
  Tensor<double> k1 = Tensor<double>::full({1, 1, 1, 1}, 1.0);
  Tensor<double> y1 = conv2d(x1, k1, 1, Padding::valid);
  REQUIRE(y1.shape() == x1.shape());
  for (Index i = 0; i < x1.size(); ++i) CHECK(y1[i] == doctest::Approx(x1[i]).epsilon(1e-12));

  // all-ones 3x3 (*) all-ones 3x3, valid -> single 9.0
  Tensor<double> ones = Tensor<double>::full({1, 1, 3, 3}, 1.0);
  Tensor<double> kern = Tensor<double>::full({1, 1, 3, 3}, 1.0);
  Tensor<double> s = conv2d(ones, kern, 1, Padding::valid);
  CHECK(s.shape() == Shape{1, 1, 1, 1});
  CHECK(s[0] == doctest::Approx(9.0));
}

TEST_CASE("conv2d channel mismatch reports both shapes") {
  Tensor<double> x = Tensor<double>::zeros({1, 3, 5, 5});
  Tensor<double> k = Tensor<double>::zeros({2, 4, 3, 3});
  try {
    conv2d(x, k, 1, Padding::valid);
    FAIL("expected DimensionError");
  } catch (const DimensionError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("[1x3x5x5]") != std::string::npos);
    CHECK(msg.find("[2x4x3x3]") != std::string::npos);
  }
}

TEST_CASE("conv2d output shape obeys the floor formula on a grid") {
  Rng rng(7);
  for (Index h : {3, 5, 8, 11, 13}) {
    for (Index kh : {1, 2, 3, 5}) {
      for (Index stride : {1, 2, 3}) {
        for (Padding pad : {Padding::valid, Padding::same}) {
          if (pad == Padding::same && kh % 2 == 0) continue;
          const Index p = pad == Padding::same ? (kh - 1) / 2 : 0;
          Tensor<double> x = random_tensor({1, 1, h, h}, rng);
          Tensor<double> k = random_tensor({2, 1, kh, kh}, rng);
          if (h + 2 * p < kh) {
            CHECK_THROWS_AS(conv2d(x, k, stride, pad), DimensionError);
            continue;
          }
          Tensor<double> y = conv2d(x, k, stride, pad);
          const Index expected = (h + 2 * p - kh) / stride + 1;
          CHECK(y.dim(2) == expected);
          CHECK(y.dim(3) == expected);
        }
      }
    }
  }
  Tensor<double> x = random_tensor({1, 1, 5, 5}, rng);
  Tensor<double> k = random_tensor({1, 1, 3, 3}, rng);
  CHECK_THROWS_AS(conv2d(x, k, 0, Padding::valid), ContractError);
}

TEST_CASE("batch_norm train-mode statistics") {
  Rng rng(3);
  const Index n = 6, c = 3, s = 4;
  Tensor<double> x = random_tensor({n, c, s, s}, rng, -2.0, 5.0);
  Tensor<double> gamma = Tensor<double>::full({c}, 1.0);
  Tensor<double> beta = Tensor<double>::zeros({c});
  Tensor<double> rm = Tensor<double>::zeros({c});
  Tensor<double> rv = Tensor<double>::full({c}, 1.0);

  Tensor<double> y = batch_norm(x, gamma, beta, rm, rv, Mode::train);
  const Index m = n * s * s;
  for (Index ci = 0; ci < c; ++ci) {
    double mean = 0.0, var = 0.0;
    for (Index ni = 0; ni < n; ++ni) {
      for (Index p = 0; p < s * s; ++p) mean += y[(ni * c + ci) * s * s + p];
    }
    mean /= static_cast<double>(m);
    for (Index ni = 0; ni < n; ++ni) {
      for (Index p = 0; p < s * s; ++p) {
        const double d = y[(ni * c + ci) * s * s + p] - mean;
        var += d * d;
      }
    }
    var /= static_cast<double>(m);
    CHECK(std::abs(mean) < 1e-5);
    CHECK(std::abs(var - 1.0) < 1e-4);
  }

  SUBCASE("running stats follow the exponential moving average") {
    // one step from (0, 1): running_mean = 0.1 * batch_mean
    double batch_mean0 = 0.0;
    for (Index ni = 0; ni < n; ++ni) {
      for (Index p = 0; p < s * s; ++p) batch_mean0 += x[(ni * c + 0) * s * s + p];
    }
    batch_mean0 /= static_cast<double>(m);
    CHECK(rm[0] == doctest::Approx(0.1 * batch_mean0).epsilon(1e-9));
  }
}

TEST_CASE("batch_norm constant channel maps to zero") {
  Tensor<double> x = Tensor<double>::full({4, 1, 2, 2}, 3.25);
  Tensor<double> gamma = Tensor<double>::full({1}, 1.0);
  Tensor<double> beta = Tensor<double>::zeros({1});
  Tensor<double> rm = Tensor<double>::zeros({1});
  Tensor<double> rv = Tensor<double>::full({1}, 1.0);
  Tensor<double> y = batch_norm(x, gamma, beta, rm, rv, Mode::train);
  for (Index i = 0; i < y.size(); ++i) CHECK(std::abs(y[i]) < 1e-6);
}

TEST_CASE("batch_norm affine rescale to mean 3 std 2") {
  Rng rng(11);
  Tensor<double> x = random_tensor({16, 2, 3, 3}, rng, -1.0, 1.0);
  Tensor<double> gamma = Tensor<double>::full({2}, 2.0);
  Tensor<double> beta = Tensor<double>::full({2}, 3.0);
  Tensor<double> rm = Tensor<double>::zeros({2});
  Tensor<double> rv = Tensor<double>::full({2}, 1.0);
  Tensor<double> y = batch_norm(x, gamma, beta, rm, rv, Mode::train);
  const Index m = y.size() / 2;
  for (Index ci = 0; ci < 2; ++ci) {
    double mean = 0.0, var = 0.0;
    for (Index ni = 0; ni < 16; ++ni) {
      for (Index p = 0; p < 9; ++p) mean += y[(ni * 2 + ci) * 9 + p];
    }
    mean /= static_cast<double>(m);
    for (Index ni = 0; ni < 16; ++ni) {
      for (Index p = 0; p < 9; ++p) {
        const double d = y[(ni * 2 + ci) * 9 + p] - mean;
        var += d * d;
      }
    }
    var /= static_cast<double>(m);
    CHECK(mean == doctest::Approx(3.0).epsilon(1e-6));
    CHECK(std::sqrt(var) == doctest::Approx(2.0).epsilon(1e-4));
  }
}

TEST_CASE("batch_norm degenerate batch and eval behavior") {
  Tensor<double> x = Tensor<double>::zeros({1, 2, 3, 3});
  Tensor<double> gamma = Tensor<double>::full({2}, 1.0);
  Tensor<double> beta = Tensor<double>::zeros({2});
  Tensor<double> rm = Tensor<double>::zeros({2});
  Tensor<double> rv = Tensor<double>::full({2}, 1.0);
  CHECK_THROWS_AS(batch_norm(x, gamma, beta, rm, rv, Mode::train), ContractError);

  // eval mode accepts N=1 and uses the running stats only
  rm[0] = 1.0;
  rm[1] = -1.0;
  Tensor<double> xe = Tensor<double>::zeros({1, 2, 3, 3});
  Tensor<double> y = batch_norm(xe, gamma, beta, rm, rv, Mode::eval);
  CHECK(y[0] == doctest::Approx(-1.0 / std::sqrt(1.0 + 1e-5)).epsilon(1e-9));
  CHECK(rm[0] == 1.0);  // eval must not touch running stats
}

TEST_CASE("l2_normalize examples and idempotence") {
  Tensor<double> v = Tensor<double>::from_data({2}, {3.0, 4.0});
  Tensor<double> u = l2_normalize(v);
  CHECK(u[0] == doctest::Approx(0.6));
  CHECK(u[1] == doctest::Approx(0.8));

  Tensor<double> unit = Tensor<double>::from_data({2}, {0.6, 0.8});
  Tensor<double> same = l2_normalize(unit);
  CHECK(std::abs(same[0] - 0.6) < 1e-12);
  CHECK(std::abs(same[1] - 0.8) < 1e-12);

  Tensor<double> zero = Tensor<double>::zeros({3});
  Tensor<double> z = l2_normalize(zero);
  for (Index i = 0; i < 3; ++i) CHECK(z[i] == 0.0);
  CHECK(degenerate_rows(zero)[0] == 1);
  CHECK(degenerate_rows(v)[0] == 0);

  Rng rng(5);
  for (int trial = 0; trial < 50; ++trial) {
    Tensor<double> x = random_tensor({8}, rng, -3.0, 3.0);
    Tensor<double> once = l2_normalize(x);
    Tensor<double> twice = l2_normalize(once);
    for (Index i = 0; i < 8; ++i) CHECK(std::abs(once[i] - twice[i]) <= 1e-12);
  }
}

TEST_CASE("backward computes d(x^2)/dx = 2x") {
  Graph<double> g;
  Tensor<double> x = Tensor<double>::from_data({1}, {3.0});
  Tensor<double> xt = g.leaf(x);
  Tensor<double> loss = reduce_sum_all(mul(xt, xt));
  auto grads = g.backward(loss);
  CHECK(grads.at(x)[0] == doctest::Approx(6.0));
}

TEST_CASE("unreachable parameters get zero gradient") {
  Graph<double> g;
  Tensor<double> x = Tensor<double>::from_data({2}, {1.0, 2.0});
  Tensor<double> p = Tensor<double>::from_data({3}, {5.0, 6.0, 7.0});
  Tensor<double> xt = g.leaf(x);
  Tensor<double> pt = g.leaf(p);
  (void)pt;
  Tensor<double> loss = reduce_sum_all(mul(xt, xt));
  auto grads = g.backward(loss);
  const Tensor<double>& gp = grads.at(p);
  CHECK(gp.shape() == p.shape());
  for (Index i = 0; i < gp.size(); ++i) CHECK(gp[i] == 0.0);
}

TEST_CASE("backward replay without re-running forward is identical") {
  Rng rng(9);
  Graph<double> g;
  Tensor<double> x = random_tensor({4, 3}, rng);
  Tensor<double> w = random_tensor({3, 2}, rng);
  Tensor<double> xt = g.leaf(x);
  Tensor<double> wt = g.leaf(w);
  Tensor<double> loss = reduce_sum_all(relu(matmul(xt, wt)));
  auto g1 = g.backward(loss);
  auto g2 = g.backward(loss);
  const Tensor<double>& a = g1.at(w);
  const Tensor<double>& b = g2.at(w);
  for (Index i = 0; i < a.size(); ++i) CHECK(a[i] == b[i]);
}

TEST_CASE("backward rejects non-scalar loss") {
  Graph<double> g;
  Tensor<double> x = Tensor<double>::from_data({2}, {1.0, 2.0});
  Tensor<double> xt = g.leaf(x);
  Tensor<double> y = mul(xt, xt);
  CHECK_THROWS_AS(g.backward(y), ContractError);
}

TEST_CASE("l2_normalize gradient matches finite differences") {
  Rng rng(21);
  Tensor<double> x = random_tensor({6}, rng, -2.0, 2.0);
  Graph<double> g;
  Tensor<double> xt = g.leaf(x);
  Tensor<double> weights = random_tensor({6}, rng);
  Tensor<double> loss = reduce_sum_all(mul(l2_normalize(xt), weights));
  auto grads = g.backward(loss);
  Tensor<double> fd = finite_diff_grad<double>(
      [&](const Tensor<double>& probe) {
        return reduce_sum_all(mul(l2_normalize(probe), weights)).item();
      },
      x, 1e-5);
  for (Index i = 0; i < x.size(); ++i) {
    CHECK(relative_error(grads.at(x)[i], fd[i]) < 1e-6);
  }
}

TEST_CASE("finite_diff_grad on linear and quadratic functions") {
  Tensor<double> x = Tensor<double>::from_data({3}, {0.5, -1.0, 2.0});
  Tensor<double> g_sum = finite_diff_grad<double>(
      [](const Tensor<double>& t) { return reduce_sum_all(t).item(); }, x, 1e-5);
  for (Index i = 0; i < 3; ++i) CHECK(g_sum[i] == doctest::Approx(1.0).epsilon(1e-9));

  Tensor<double> x2 = Tensor<double>::from_data({2}, {1.0, 2.0});
  Tensor<double> g_quad = finite_diff_grad<double>(
      [](const Tensor<double>& t) { return reduce_sum_all(mul(t, t)).item(); }, x2, 1e-5);
  CHECK(std::abs(g_quad[0] - 2.0) < 1e-8);
  CHECK(std::abs(g_quad[1] - 4.0) < 1e-8);
}

TEST_CASE("forward results are bit-identical across repeated runs") {
  Rng rng(33);
  Tensor<double> x = random_tensor({2, 3, 9, 9}, rng);
  Tensor<double> k = random_tensor({4, 3, 3, 3}, rng);
  Tensor<double> y1 = conv2d(x, k, 2, Padding::same);
  Tensor<double> y2 = conv2d(x, k, 2, Padding::same);
  for (Index i = 0; i < y1.size(); ++i) CHECK(y1[i] == y2[i]);
}

TEST_CASE("distinct graphs are independent") {
  Tensor<double> x = Tensor<double>::from_data({1}, {2.0});
  Graph<double> g1, g2;
  Tensor<double> t1 = g1.leaf(x);
  Tensor<double> t2 = g2.leaf(x);
  Tensor<double> l1 = reduce_sum_all(mul(t1, t1));
  Tensor<double> l2 = reduce_sum_all(mul(mul(t2, t2), t2));
  CHECK(g1.backward(l1).at(x)[0] == doctest::Approx(4.0));
  CHECK(g2.backward(l2).at(x)[0] == doctest::Approx(12.0));
  CHECK_THROWS_AS(mul(t1, t2), ContractError);
}

TEST_CASE("primitive forwards keep finite inputs finite") {
  Rng rng(17);
  Tensor<double> x = random_tensor({2, 4, 6, 6}, rng, -50.0, 50.0);
  Tensor<double> k = random_tensor({3, 4, 3, 3}, rng, -5.0, 5.0);
  CHECK(conv2d(x, k, 1, Padding::same).all_finite());
  CHECK(softmax(random_tensor({4, 9}, rng, -500.0, 500.0), 1).all_finite());
  CHECK(squash(random_tensor({5, 3}, rng, -100.0, 100.0)).all_finite());
  CHECK(l2_normalize(random_tensor({5, 3}, rng, -100.0, 100.0)).all_finite());
}
