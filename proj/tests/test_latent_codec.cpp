#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "infgen/latent_codec.hpp"
#include "testutil.hpp"

using namespace infgen;
using testutil::rel_err;

namespace {

template <typename T>
TensorT<T> gray_image(int h, int w, T value) {
  TensorT<T> t({3, h, w});
  t.fill(value);
  return t;
}

}  // namespace

TEST_CASE("encode emits latents at exactly one eighth of the input dims") {
  Rng rng(5);
  VaeT<double> vae(4, 4, rng);
  auto lat = vae.encode(testutil::random_tensor({3, 64, 64}, rng, 0.3));
  CHECK(lat.mu.shape == std::vector<int>{4, 8, 8});
  CHECK(lat.logvar.shape == std::vector<int>{4, 8, 8});
  lat = vae.encode(testutil::random_tensor({3, 128, 96}, rng, 0.3));
  CHECK(lat.mu.shape == std::vector<int>{4, 16, 12});
  CHECK(lat.logvar.shape == std::vector<int>{4, 16, 12});
}

TEST_CASE("encode rejects bad inputs and is deterministic") {
  Rng rng(6);
  VaeT<double> vae(4, 4, rng);
  CHECK_THROWS_AS(vae.encode(testutil::random_tensor({3, 60, 64}, rng)), std::invalid_argument);
  CHECK_THROWS_AS(vae.encode(testutil::random_tensor({3, 64, 63}, rng)), std::invalid_argument);
  auto bad = gray_image<double>(64, 64, 0.0);
  bad.v[10] = std::numeric_limits<double>::quiet_NaN();
  CHECK_THROWS_AS(vae.encode(bad), std::invalid_argument);

  auto img = testutil::random_tensor({3, 64, 64}, rng, 0.3);
  auto a = vae.encode(img);
  auto b = vae.encode(img);
  for (size_t i = 0; i < a.mu.v.size(); ++i) {
    CHECK(a.mu.v[i] == b.mu.v[i]);
    CHECK(a.logvar.v[i] == b.logvar.v[i]);
  }
}

TEST_CASE("logvar is clamped into [-30, 20]") {
  Rng rng(7);
  VaeT<double> vae(2, 4, rng);
  auto lat = vae.encode(gray_image<double>(32, 32, 0.9));
  for (double v : lat.logvar.v) {
    CHECK(v >= -30.0);
    CHECK(v <= 20.0);
  }
}

TEST_CASE("reparameterize: vanishing variance, seed purity, Monte Carlo mean") {
  GaussianLatentT<double> lat;
  lat.mu = TensorT<double>({1, 2, 2}, 0.4);
  lat.logvar = TensorT<double>({1, 2, 2}, -30.0);
  auto z = VaeT<double>::reparameterize(lat, 99);
  for (double v : z.v) CHECK(std::abs(v - 0.4) < 1e-6);

  lat.logvar.fill(0.3);
  auto z1 = VaeT<double>::reparameterize(lat, 1234);
  auto z2 = VaeT<double>::reparameterize(lat, 1234);
  for (size_t i = 0; i < z1.v.size(); ++i) CHECK(z1.v[i] == z2.v[i]);
  auto z3 = VaeT<double>::reparameterize(lat, 1235);
  bool any_diff = false;
  for (size_t i = 0; i < z1.v.size(); ++i) any_diff |= z1.v[i] != z3.v[i];
  CHECK(any_diff);

  GaussianLatentT<double> scalar_lat;
  scalar_lat.mu = TensorT<double>({1, 1, 1}, 0.7);
  scalar_lat.logvar = TensorT<double>({1, 1, 1}, 0.0);
  double acc = 0.0;
  for (int i = 0; i < 10000; ++i)
    acc += VaeT<double>::reparameterize(scalar_lat, static_cast<uint64_t>(i)).v[0];
  CHECK(std::abs(acc / 10000.0 - 0.7) < 0.03);
}

TEST_CASE("kl divergence closed forms and nonnegativity") {
  GaussianLatentT<double> lat;
  lat.mu = TensorT<double>::zeros({2, 3, 3});
  lat.logvar = TensorT<double>::zeros({2, 3, 3});
  CHECK(VaeT<double>::kl_divergence(lat) == 0.0);

  lat.mu = TensorT<double>({1, 1, 1}, 1.0);
  lat.logvar = TensorT<double>::zeros({1, 1, 1});
  CHECK(VaeT<double>::kl_divergence(lat) == doctest::Approx(0.5));

  lat.mu.fill(0.0);
  lat.logvar.fill(std::log(4.0));
  CHECK(VaeT<double>::kl_divergence(lat) ==
        doctest::Approx(0.5 * (4.0 - 1.0 - std::log(4.0))));  // ~0.8069

  Rng rng(11);
  for (int trial = 0; trial < 50; ++trial) {
    GaussianLatentT<double> r;
    r.mu = testutil::random_tensor({2, 2, 2}, rng);
    r.logvar = testutil::random_tensor({2, 2, 2}, rng);
    double kl = VaeT<double>::kl_divergence(r);
    REQUIRE(kl >= 0.0);
    bool standard = true;
    for (size_t i = 0; i < r.mu.v.size(); ++i)
      standard &= r.mu.v[i] == 0.0 && r.logvar.v[i] == 0.0;
    if (!standard) REQUIRE(kl > 0.0);
  }
}

TEST_CASE("pretrain step keeps losses finite and moves parameters") {
  Rng rng(13);
  VaeT<double> vae(2, 4, rng);
  AdamWT<double> opt;
  Rng noise(14);
  auto batch = std::vector<TensorT<double>>{gray_image<double>(32, 32, 0.2),
                                            gray_image<double>(32, 32, 0.2)};
  auto before = vae.encoder.stem.w.value;
  auto lb = vae.pretrain_step(batch, opt, 1e-3, 1e-4, noise);
  CHECK(std::isfinite(lb.total));
  CHECK(lb.total == doctest::Approx(lb.l1 + 1e-4 * lb.kl));
  bool moved = false;
  for (size_t i = 0; i < before.v.size(); ++i)
    moved |= before.v[i] != vae.encoder.stem.w.value.v[i];
  CHECK(moved);
}

TEST_CASE("pretrain loss gradients match finite differences") {
  Rng rng(15);
  VaeT<double> vae(2, 4, rng);
  auto img = testutil::random_tensor({3, 16, 16}, rng, 0.3);
  TensorT<double> eps({2, 2, 2});
  Rng noise(16);
  for (auto& v : eps.v) v = noise.normal();
  double beta = 1e-2;

  auto build = [&](GraphT<double>& g) {
    auto [mu, lv] = vae.encoder.forward(g, g.constant(img));
    int z = g.add(mu, g.mul(g.exp_(g.scale(lv, 0.5)), g.constant(eps)));
    int recon = vae.decoder.forward(g, z);
    int l1 = g.mean_abs_diff(recon, g.constant(img));
    int kl = g.mean_all(g.add(g.add(g.mul(mu, mu), g.exp_(lv)), g.affine(lv, -1.0, -1.0)));
    return g.lincomb({l1, kl}, {1.0, 0.5 * beta});
  };
  auto params = vae.params();
  Rng pick(17);
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

TEST_CASE("single-image overfit halves the reconstruction error with beta zero") {
  Rng rng(18);
  VaeT<float> vae(2, 6, rng);
  Rng img_rng(19);
  Image img = synth_image(32, 32, img_rng);
  std::vector<Tensor> batch{img.pixels};
  AdamW opt;
  Rng noise(20);
  double first = -1.0, last = 0.0;
  for (int step = 0; step < 500; ++step) {
    auto lb = vae.pretrain_step(batch, opt, 2e-3, 0.0, noise);
    if (step == 0) first = lb.l1;
    last = lb.l1;
  }
  CHECK(first > 0.0);
  CHECK(last <= 0.5 * first);
}

TEST_CASE("frozen encoder reports frozen and skips gradient accumulation") {
  Rng rng(21);
  VaeT<double> vae(2, 4, rng);
  CHECK_FALSE(vae.encoder.frozen());
  vae.encoder.set_frozen(true);
  CHECK(vae.encoder.frozen());
  GraphT<double> g;
  auto [mu, lv] = vae.encoder.forward(g, g.constant(gray_image<double>(16, 16, 0.1)));
  vae.encoder.stem.w.zero_grad();
  g.backward(g.mean_all(mu));
  for (double v : vae.encoder.stem.w.grad.v) CHECK(v == 0.0);
}
