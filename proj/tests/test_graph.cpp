#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "infgen/graph.hpp"
#include "testutil.hpp"

using namespace infgen;
using testutil::rel_err;

namespace {

// naive direct convolution for value cross-checks
TensorT<double> naive_conv(const TensorT<double>& x, const TensorT<double>& w,
                           const TensorT<double>& b, int stride, int pad) {
  int ic = x.dim(0), h = x.dim(1), wd = x.dim(2);
  int oc = w.dim(0), kh = w.dim(2), kw = w.dim(3);
  int oh = (h + 2 * pad - kh) / stride + 1;
  int ow = (wd + 2 * pad - kw) / stride + 1;
  TensorT<double> out({oc, oh, ow});
  for (int o = 0; o < oc; ++o)
    for (int oy = 0; oy < oh; ++oy)
      for (int ox = 0; ox < ow; ++ox) {
        double s = b.v[static_cast<size_t>(o)];
        for (int c = 0; c < ic; ++c)
          for (int ki = 0; ki < kh; ++ki)
            for (int kj = 0; kj < kw; ++kj) {
              int iy = oy * stride - pad + ki;
              int ix = ox * stride - pad + kj;
              if (iy < 0 || iy >= h || ix < 0 || ix >= wd) continue;
              s += x.at(c, iy, ix) * w.v[((static_cast<size_t>(o) * ic + c) * kh + ki) * kw + kj];
            }
        out.at(o, oy, ox) = s;
      }
  return out;
}

}  // namespace

TEST_CASE("conv2d matches a naive direct convolution") {
  Rng rng(11);
  for (auto [stride, pad] : {std::pair{1, 1}, std::pair{2, 1}}) {
    auto x = testutil::random_tensor({3, 9, 7}, rng);
    auto w = testutil::random_tensor({5, 3, 3, 3}, rng);
    auto b = testutil::random_tensor({5}, rng);
    GraphT<double> g;
    int out = g.conv2d(g.constant(x), g.constant(w), g.constant(b), stride, pad);
    auto ref = naive_conv(x, w, b, stride, pad);
    REQUIRE(g.val(out).shape == ref.shape);
    for (size_t i = 0; i < ref.v.size(); ++i)
      CHECK(rel_err(g.val(out).v[i], ref.v[i]) < 1e-12);
  }
}

TEST_CASE("softmax rows sum to one and match exp normalization") {
  Rng rng(3);
  auto x = testutil::random_tensor({6, 9}, rng, 3.0);
  GraphT<double> g;
  int y = g.softmax_rows(g.constant(x));
  for (int i = 0; i < 6; ++i) {
    double s = 0.0;
    for (int j = 0; j < 9; ++j) s += g.val(y).at(i, j);
    CHECK(std::abs(s - 1.0) < 1e-12);
  }
}

TEST_CASE("gradients of elementwise, norm and reduction ops match finite differences") {
  Rng rng(17);
  ParamT<double> a("a", testutil::random_tensor({4, 6}, rng));
  ParamT<double> b("b", testutil::random_tensor({4, 6}, rng));
  ParamT<double> gamma("g", testutil::random_tensor({6}, rng, 0.3));
  ParamT<double> beta("be", testutil::random_tensor({6}, rng, 0.3));
  for (auto& v : gamma.value.v) v += 1.0;

  auto build = [&](GraphT<double>& g) {
    int x = g.param(a);
    int y = g.param(b);
    int t = g.layer_norm_rows(g.mul(g.gelu(x), g.tanh_(y)), g.param(gamma), g.param(beta), 1e-5);
    t = g.softmax_rows(t);
    int u = g.add(g.relu(g.affine(x, -1.0, 0.3)), g.leaky_relu(y, 0.1));
    int s1 = g.mean_sq_diff(t, g.exp_(g.scale(y, 0.1)));
    int s2 = g.mean_abs_diff(u, x);
    int s3 = g.sum_squares(g.clamp(x, -0.5, 0.5));
    return g.lincomb({s1, s2, s3}, {1.0, 0.7, 0.2});
  };
  ParamRefs<double> params{&a, &b, &gamma, &beta};
  Rng pick(5);
  auto slots = testutil::sample_slots(params, 12, pick);
  double worst = testutil::check_gradients(
      params, slots,
      [&] {
        GraphT<double> g;
        return g.scalar(build(g));
      },
      [&] {
        GraphT<double> g;
        g.backward(build(g));
      });
  CHECK(worst < 1e-6);
}

TEST_CASE("gradients of matmul, slicing, broadcast and attention-style composites") {
  Rng rng(23);
  ParamT<double> wq("wq", testutil::random_tensor({8, 8}, rng, 0.4));
  ParamT<double> wk("wk", testutil::random_tensor({8, 8}, rng, 0.4));
  ParamT<double> seed("seed", testutil::random_tensor({8}, rng, 0.4));
  auto keys = testutil::random_tensor({5, 8}, rng);

  auto build = [&](GraphT<double>& g) {
    int q = g.matmul(g.broadcast_row(g.param(seed), 3), g.param(wq));
    int k = g.matmul(g.constant(keys), g.param(wk));
    int qh = g.concat_cols({g.slice_cols(q, 0, 4), g.slice_cols(q, 4, 8)});
    int scores = g.scale(g.matmul_nt(qh, k), 0.35);
    int attn = g.softmax_rows(scores);
    int mixed = g.matmul(attn, k);
    return g.sum_squares(mixed);
  };
  ParamRefs<double> params{&wq, &wk, &seed};
  Rng pick(7);
  auto slots = testutil::sample_slots(params, 10, pick);
  double worst = testutil::check_gradients(
      params, slots,
      [&] {
        GraphT<double> g;
        return g.scalar(build(g));
      },
      [&] {
        GraphT<double> g;
        g.backward(build(g));
      });
  CHECK(worst < 1e-6);
}

TEST_CASE("gradients of conv, upsample, crop and channel norm") {
  Rng rng(31);
  ParamT<double> w("w", testutil::random_tensor({4, 2, 3, 3}, rng, 0.3));
  ParamT<double> b("b", testutil::random_tensor({4}, rng, 0.3));
  ParamT<double> w2("w2", testutil::random_tensor({2, 4, 3, 3}, rng, 0.3));
  ParamT<double> b2("b2", testutil::random_tensor({2}, rng, 0.3));
  auto x = testutil::random_tensor({2, 6, 5}, rng);
  auto target = testutil::random_tensor({2, 4, 3}, rng);

  auto build = [&](GraphT<double>& g) {
    int h = g.conv2d(g.constant(x), g.param(w), g.param(b), 2, 1);
    h = g.gelu(h);
    h = g.upsample_nearest2x(h);
    h = g.conv2d(h, g.param(w2), g.param(b2), 1, 1);
    h = g.channel_unit_norm(h, 1e-10);
    h = g.crop_center(h, 4, 3);
    return g.mean_sq_diff(h, g.constant(target));
  };
  ParamRefs<double> params{&w, &b, &w2, &b2};
  Rng pick(9);
  auto slots = testutil::sample_slots(params, 12, pick);
  double worst = testutil::check_gradients(
      params, slots,
      [&] {
        GraphT<double> g;
        return g.scalar(build(g));
      },
      [&] {
        GraphT<double> g;
        g.backward(build(g));
      });
  CHECK(worst < 1e-6);
}

TEST_CASE("parameter gradients accumulate across multiple uses") {
  ParamT<double> p("p", TensorT<double>({2}, 1.5));
  GraphT<double> g;
  int a = g.param(p);
  int loss = g.sum_squares(g.add(a, a));  // (2p)^2 summed, d/dp = 8p
  p.zero_grad();
  g.backward(loss);
  CHECK(rel_err(p.grad.v[0], 8.0 * 1.5) < 1e-12);
  CHECK(rel_err(p.grad.v[1], 8.0 * 1.5) < 1e-12);
}

TEST_CASE("frozen parameters receive no gradient") {
  ParamT<double> p("p", TensorT<double>({2}, 1.0));
  p.frozen = true;
  GraphT<double> g;
  int loss = g.sum_squares(g.param(p));
  p.zero_grad();
  g.backward(loss);
  CHECK(p.grad.v[0] == 0.0);
}

TEST_CASE("flop counter grows with conv output size") {
  Rng rng(2);
  auto w = testutil::random_tensor({4, 3, 3, 3}, rng);
  auto b = testutil::random_tensor({4}, rng);
  auto x_small = testutil::random_tensor({3, 8, 8}, rng);
  auto x_big = testutil::random_tensor({3, 16, 16}, rng);
  GraphT<double> g1, g2;
  g1.conv2d(g1.constant(x_small), g1.constant(w), g1.constant(b), 1, 1);
  g2.conv2d(g2.constant(x_big), g2.constant(w), g2.constant(b), 1, 1);
  CHECK(g2.flops() == 4 * g1.flops());
}

TEST_CASE("shape mismatches are rejected") {
  GraphT<double> g;
  int a = g.constant(TensorT<double>({2, 3}, 1.0));
  int b = g.constant(TensorT<double>({3, 2}, 1.0));
  CHECK_THROWS_AS((void)g.add(a, b), std::invalid_argument);
  CHECK_THROWS_AS((void)g.matmul_nt(a, g.constant(TensorT<double>({2, 4}, 1.0))),
                  std::invalid_argument);
  CHECK_THROWS_AS((void)g.reshape(a, {5}), std::invalid_argument);
}
