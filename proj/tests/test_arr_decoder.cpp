#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "infgen/arr_decoder.hpp"
#include "testutil.hpp"

using namespace infgen;
using testutil::rel_err;

namespace {

ArrDecoderT<double> tiny_decoder(int d_model = 16, int blocks = 1, int heads = 2,
                                 int max_res = 512, uint64_t seed = 42) {
  Rng init = Rng::subsystem(seed, "init");
  Rng fourier = Rng::subsystem(seed, "fourier");
  return ArrDecoderT<double>(d_model, blocks, heads, 4, 8, 10.0, max_res, init, fourier);
}

void set_identity(ParamT<double>& w) {
  w.value.fill(0.0);
  for (int i = 0; i < w.value.dim(0); ++i) w.value.at(i, i) = 1.0;
}

void make_identity_attention(AttnParamsT<double>& p) {
  set_identity(p.wq);
  set_identity(p.wk);
  set_identity(p.wv);
  set_identity(p.wo);
  p.bq.value.fill(0.0);
  p.bk.value.fill(0.0);
  p.bv.value.fill(0.0);
  p.bo.value.fill(0.0);
}

}  // namespace

TEST_CASE("mask grid dims follow the ceiling-of-eighth rule") {
  CHECK(mask_grid_dims({512, 512}) == std::pair<int, int>{64, 64});
  CHECK(mask_grid_dims({1000, 600}) == std::pair<int, int>{125, 75});
  CHECK(mask_grid_dims({9, 9}) == std::pair<int, int>{2, 2});
  CHECK_THROWS_AS(mask_grid_dims({0, 9}), std::invalid_argument);
  CHECK_THROWS_AS(mask_grid_dims({9, -1}), std::invalid_argument);
}

TEST_CASE("mask token grid replicates the single learned seed vector") {
  auto dec = tiny_decoder();
  auto grid = dec.make_mask_token_grid({100, 60});
  CHECK(grid.grid_h == 13);
  CHECK(grid.grid_w == 8);
  CHECK(grid.tokens.dim(0) == 13 * 8);
  for (int r = 0; r < grid.tokens.dim(0); ++r)
    for (int c = 0; c < dec.d_model; ++c)
      REQUIRE(grid.tokens.at(r, c) == dec.mask_seed.value.v[static_cast<size_t>(c)]);
}

TEST_CASE("attention over a single key returns that value for every query") {
  Rng rng(3);
  AttnParamsT<double> p("p", 4, rng);
  make_identity_attention(p);
  auto value = testutil::random_tensor({1, 4}, rng);
  auto queries = testutil::random_tensor({5, 4}, rng);
  GraphT<double> g;
  int out = multihead_cross_attention(g, g.constant(queries), g.constant(value),
                                      g.constant(value), p, 1);
  for (int i = 0; i < 5; ++i)
    for (int j = 0; j < 4; ++j) CHECK(g.val(out).at(i, j) == doctest::Approx(value.at(0, j)));
}

TEST_CASE("attention with equal logits averages the values") {
  Rng rng(4);
  AttnParamsT<double> p("p", 4, rng);
  make_identity_attention(p);
  // both keys orthogonal to every query row -> uniform softmax
  TensorT<double> keys({2, 4});
  keys.at(0, 2) = 1.0;
  keys.at(1, 3) = 1.0;
  TensorT<double> values({2, 4});
  for (int j = 0; j < 4; ++j) {
    values.at(0, j) = j;
    values.at(1, j) = 10.0 + j;
  }
  TensorT<double> queries({3, 4});
  queries.at(0, 0) = 1.0;
  queries.at(1, 1) = 1.0;
  queries.at(2, 0) = -2.0;
  GraphT<double> g;
  int out = multihead_cross_attention(g, g.constant(queries), g.constant(keys),
                                      g.constant(values), p, 1);
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 4; ++j)
      CHECK(g.val(out).at(i, j) == doctest::Approx(0.5 * (values.at(0, j) + values.at(1, j))));
}

TEST_CASE("block output matches the scalar double-loop reference") {
  Rng rng(9);
  for (int trial = 0; trial < 100; ++trial) {
    DecoderBlockT<double> blk("blk", 8, 2, rng);
    auto mask = testutil::random_tensor({9, 8}, rng);      // 3x3 queries
    auto latent = testutil::random_tensor({4, 8}, rng);    // 2x2 keys
    auto pe_m = testutil::random_tensor({9, 8}, rng, 0.5);
    auto pe_l = testutil::random_tensor({4, 8}, rng, 0.5);

    GraphT<double> g;
    int out = blk.forward(g, g.constant(mask), g.constant(pe_m), g.constant(latent),
                          g.constant(pe_l));
    auto ref = testutil::naive_block(testutil::to_rows(mask), testutil::to_rows(pe_m),
                                     testutil::to_rows(latent), testutil::to_rows(pe_l), blk);
    REQUIRE(g.val(out).dim(0) == 9);
    for (int i = 0; i < 9; ++i)
      for (int j = 0; j < 8; ++j)
        REQUIRE(std::abs(g.val(out).at(i, j) - ref[static_cast<size_t>(i)][static_cast<size_t>(j)]) < 1e-5);
  }
}

TEST_CASE("block preserves the mask grid shape regardless of latent size") {
  Rng rng(10);
  DecoderBlockT<double> blk("blk", 8, 2, rng);
  for (auto [nq, nk] : {std::pair{6, 4}, std::pair{1, 9}, std::pair{20, 1}}) {
    GraphT<double> g;
    int out = blk.forward(g, g.constant(testutil::random_tensor({nq, 8}, rng)),
                          g.constant(testutil::random_tensor({nq, 8}, rng, 0.3)),
                          g.constant(testutil::random_tensor({nk, 8}, rng)),
                          g.constant(testutil::random_tensor({nk, 8}, rng, 0.3)));
    CHECK(g.val(out).dim(0) == nq);
    CHECK(g.val(out).dim(1) == 8);
  }
}

TEST_CASE("query permutation equivariance of the block") {
  Rng rng(12);
  DecoderBlockT<double> blk("blk", 8, 2, rng);
  auto mask = testutil::random_tensor({6, 8}, rng);
  auto pe_m = testutil::random_tensor({6, 8}, rng, 0.5);
  auto latent = testutil::random_tensor({4, 8}, rng);
  auto pe_l = testutil::random_tensor({4, 8}, rng, 0.5);
  std::vector<int> perm = {3, 0, 5, 1, 4, 2};

  TensorT<double> mask_p({6, 8}), pe_p({6, 8});
  for (int i = 0; i < 6; ++i)
    for (int j = 0; j < 8; ++j) {
      mask_p.at(i, j) = mask.at(perm[static_cast<size_t>(i)], j);
      pe_p.at(i, j) = pe_m.at(perm[static_cast<size_t>(i)], j);
    }
  GraphT<double> g1, g2;
  int out = blk.forward(g1, g1.constant(mask), g1.constant(pe_m), g1.constant(latent),
                        g1.constant(pe_l));
  int out_p = blk.forward(g2, g2.constant(mask_p), g2.constant(pe_p), g2.constant(latent),
                          g2.constant(pe_l));
  for (int i = 0; i < 6; ++i)
    for (int j = 0; j < 8; ++j)
      REQUIRE(g2.val(out_p).at(i, j) == g1.val(out).at(perm[static_cast<size_t>(i)], j));
}

TEST_CASE("upsample head hits the exact target size, with and without crop") {
  Rng rng(14);
  UpsampleHeadT<double> head(16, rng);
  {
    GraphT<double> g;
    int out = head.forward(g, g.constant(testutil::random_tensor({16, 8, 8}, rng)), {64, 64});
    CHECK(g.val(out).shape == std::vector<int>{3, 64, 64});
  }
  {
    GraphT<double> g;  // grid (13, 8): internal 104x64 center-cropped to 100x64
    int out = head.forward(g, g.constant(testutil::random_tensor({16, 13, 8}, rng)), {100, 64});
    CHECK(g.val(out).shape == std::vector<int>{3, 100, 64});
  }
  for (double v : [&] {
         GraphT<double> g;
         return g.val(head.forward(g, g.constant(testutil::random_tensor({16, 4, 4}, rng)),
                                   {32, 32}));
       }().v) {
    CHECK(v <= 1.0);
    CHECK(v >= -1.0);
  }
}

TEST_CASE("all-zero head parameters produce a constant image") {
  Rng rng(15);
  UpsampleHeadT<double> head(8, rng);
  ParamRefs<double> ps;
  head.collect(ps);
  for (auto* p : ps) p->value.fill(0.0);
  head.to_rgb.b.value.v = {0.3, -0.1, 0.7};
  GraphT<double> g;
  int out = head.forward(g, g.constant(testutil::random_tensor({8, 3, 3}, rng)), {20, 20});
  for (int c = 0; c < 3; ++c) {
    double expect = std::tanh(head.to_rgb.b.value.v[static_cast<size_t>(c)]);
    for (int y = 0; y < 20; ++y)
      for (int x = 0; x < 20; ++x) REQUIRE(g.val(out).at(c, y, x) == doctest::Approx(expect));
  }
}

TEST_CASE("decode satisfies the shape contract over a sweep of targets") {
  auto dec = tiny_decoder(16, 1, 2, 256);
  Rng rng(16);
  auto z = testutil::random_tensor({4, 8, 8}, rng);
  for (int h : {8, 37, 64, 100, 256})
    for (int w : {8, 51, 64, 119, 256}) {
      auto img = dec.decode(z, {h, w});
      REQUIRE(img.shape == std::vector<int>{3, h, w});
    }
  CHECK_THROWS_AS(dec.decode(z, {0, 64}), std::invalid_argument);
  CHECK_THROWS_AS(dec.decode(z, {64, 257}), std::invalid_argument);
  CHECK_THROWS_AS(dec.decode(testutil::random_tensor({3, 8, 8}, rng), {64, 64}),
                  std::invalid_argument);
}

TEST_CASE("decode accepts non-square and non-default latent grids") {
  auto dec = tiny_decoder(16, 1, 2, 256);
  Rng rng(17);
  auto img = dec.decode(testutil::random_tensor({4, 16, 12}, rng), {100, 60});
  CHECK(img.shape == std::vector<int>{3, 100, 60});
}

TEST_CASE("decode is bitwise deterministic") {
  auto dec = tiny_decoder(16, 2, 2, 256);
  Rng rng(18);
  auto z = testutil::random_tensor({4, 8, 8}, rng);
  auto a = dec.decode(z, {70, 46});
  auto b = dec.decode(z, {70, 46});
  REQUIRE(a.v.size() == b.v.size());
  for (size_t i = 0; i < a.v.size(); ++i) REQUIRE(a.v[i] == b.v[i]);
}

TEST_CASE("decode cost grows about linearly with the output pixel count") {
  auto dec = tiny_decoder(16, 2, 2, 256);
  Rng rng(19);
  auto z = testutil::random_tensor({4, 8, 8}, rng);
  std::vector<double> log_px, log_fl;
  for (int s : {64, 128, 192, 256}) {
    GraphT<double> g;
    dec.decode_node(g, z, {s, s});
    log_px.push_back(std::log(static_cast<double>(s) * s));
    log_fl.push_back(std::log(static_cast<double>(g.flops())));
  }
  double n = 4, sx = 0, sy = 0, sxx = 0, sxy = 0;
  for (size_t i = 0; i < log_px.size(); ++i) {
    sx += log_px[i];
    sy += log_fl[i];
    sxx += log_px[i] * log_px[i];
    sxy += log_px[i] * log_fl[i];
  }
  double slope = (n * sxy - sx * sy) / (n * sxx - sx * sx);
  CHECK(slope > 0.8);
  CHECK(slope < 1.3);
}

TEST_CASE("decoder gradients through decode match finite differences") {
  auto dec = tiny_decoder(16, 1, 2, 256, 77);
  Rng rng(20);
  auto z = testutil::random_tensor({4, 4, 4}, rng);

  auto build = [&](GraphT<double>& g) {
    return g.sum_squares(dec.decode_node(g, z, {20, 28}));
  };
  auto params = dec.params();
  Rng pick(21);
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
  CHECK(worst < 1e-3);
}
