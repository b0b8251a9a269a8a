#include <doctest.h>

#include <sstream>

#include "gradcheck.hpp"
#include "mtdlift/error.hpp"
#include "mtdlift/neural.hpp"
#include "mtdlift/random.hpp"

using namespace mtdlift;
using nn::Tensor;

TEST_CASE("finite-difference checks per layer") {
  for (std::size_t i = 0; i < 50; ++i) {
    const auto rep = gradcheck::check_layer(i, derive_seed(17, i));
    CAPTURE(rep.layer);
    CAPTURE(rep.max_rel_error);
    CHECK(rep.ok());
  }
}

TEST_CASE("lstm padding carries state and attention ignores padded steps") {
  Rng rng(4);
  const Tensor wx = gradcheck::random_tensor(rng, 2, 12), wh = gradcheck::random_tensor(rng, 3, 12),
               b = gradcheck::random_tensor(rng, 1, 12);
  Tensor x = gradcheck::random_tensor(rng, 3, 2);
  for (std::size_t k = 0; k < 2; ++k) x(1, k) = 0.0;
  const std::vector<std::uint8_t> mask{1, 0, 1};
  const auto tr = nn::lstm_forward(x, mask, wx, wh, b);
  for (std::size_t j = 0; j < 3; ++j) CHECK(tr.hidden(1, j) == tr.hidden(0, j));

  const Tensor wa = gradcheck::random_tensor(rng, 3, 2), wc = gradcheck::random_tensor(rng, 1, 2),
               v = gradcheck::random_tensor(rng, 2, 1), ctx = gradcheck::random_tensor(rng, 1, 1);
  const auto att = nn::attention_forward(tr.hidden, ctx, mask, wa, wc, v);
  CHECK(att.weights[1] == 0.0);
  CHECK(att.weights[0] + att.weights[2] == doctest::Approx(1.0));
  const std::vector<std::uint8_t> none{0, 0, 0};
  const auto empty = nn::attention_forward(tr.hidden, ctx, none, wa, wc, v);
  CHECK(empty.empty);
  for (std::size_t j = 0; j < 3; ++j) CHECK(empty.pooled(0, j) == 0.0);
}

TEST_CASE("gaussian kld properties") {
  Rng rng(12);
  for (int rep = 0; rep < 100; ++rep) {
    const Tensor a = gradcheck::random_tensor(rng, 2 + rng.below(6), 1 + rng.below(5));
    CHECK(std::abs(nn::gaussian_kld(a, a).value) <= 1e-10);
    const Tensor b = gradcheck::random_tensor(rng, 2 + rng.below(6), a.cols(), 2.0);
    CHECK(nn::gaussian_kld(a, b).value >= 0.0);
  }
  const Tensor c(2, 1, {-1.0, 1.0}), t(2, 1, {0.0, 2.0});
  CHECK(std::abs(nn::gaussian_kld(c, t).value - 0.5) <= 1e-10);
  CHECK(std::abs(nn::gaussian_kl(1.0, 1.0, 0.0, 1.0) - 0.5) <= 1e-12);
  CHECK_THROWS_AS(nn::gaussian_kld(Tensor(1, 2), Tensor(3, 2)), Error);

  // Constant columns sit on the variance floor and stay finite.
  const Tensor flat(3, 1, {0.5, 0.5, 0.5});
  const auto r = nn::gaussian_kld(flat, t);
  CHECK(std::isfinite(r.value));
}

TEST_CASE("bce loss values and clamping") {
  const std::vector<double> p{0.5, 0.9};
  const std::vector<int> y{1, 0};
  const auto r = nn::bce_loss(p, y);
  CHECK(r.loss == doctest::Approx((-std::log(0.5) - std::log(0.1)) / 2.0));
  const std::vector<double> edge{0.0, 1.0};
  const auto e = nn::bce_loss(edge, y);
  CHECK(std::isfinite(e.loss));
  CHECK(e.d_pred[0] == 0.0);
  CHECK(nn::bce_loss({}, {}).loss == 0.0);
}

TEST_CASE("adam first step moves each weight by about the learning rate") {
  nn::ParamStore ps;
  ps.add("w", Tensor(1, 3, {1.0, -2.0, 0.5}));
  ps.grad("w") = Tensor(1, 3, {0.3, -4.0, 1e-3});
  nn::Adam adam({0.01, 0.0});
  adam.step(ps);
  const Tensor& w = ps.value("w");
  CHECK(w[0] == doctest::Approx(1.0 - 0.01).epsilon(1e-6));
  CHECK(w[1] == doctest::Approx(-2.0 + 0.01).epsilon(1e-6));
  CHECK(w[2] == doctest::Approx(0.5 - 0.01).epsilon(1e-4));

  nn::ParamStore decay;
  decay.add("w", Tensor(1, 1, {2.0}));
  nn::Adam wd({0.1, 0.5});
  wd.step(decay);
  CHECK(decay.value("w")[0] == doctest::Approx(2.0 - 0.1 * 0.5 * 2.0));
}

TEST_CASE("parameter store round-trips bit-exactly") {
  nn::ParamStore ps;
  ps.add("a.w", nn::glorot_uniform(4, 3, 1));
  ps.add("a.b", nn::uniform_tensor(1, 3, 0.1, 2));
  std::stringstream buf;
  ps.write(buf);
  const auto back = nn::ParamStore::read(buf);
  REQUIRE(back.size() == 2);
  CHECK(back.name(0) == "a.w");
  CHECK(back.value(0) == ps.value(0));
  CHECK(back.value(1) == ps.value(1));
  CHECK(ps.parameter_count() == 15);

  const double bound = std::sqrt(6.0 / 7.0);
  for (double v : ps.value(0).values()) CHECK(std::abs(v) <= bound);
  CHECK(nn::glorot_uniform(4, 3, 1) == ps.value(0));
  CHECK_FALSE(nn::glorot_uniform(4, 3, 9) == ps.value(0));

  std::istringstream junk("#mtdlift-params v1 1\nw 1 2\n0.5\n");
  CHECK_THROWS_AS(nn::ParamStore::read(junk), Error);
}
