#include <doctest.h>

#include <cmath>
#include <limits>
#include <numbers>

#include "davlab/errors.hpp"
#include "davlab/numkit.hpp"
#include "test_util.hpp"

using namespace davlab;
using namespace davlab::num;

TEST_CASE("log_sum_exp examples") {
  CHECK(log_sum_exp(std::vector<double>{0.0, 0.0}) == doctest::Approx(std::log(2.0)).epsilon(1e-15));
  CHECK(log_sum_exp(std::vector<double>{5.0}) == 5.0);
  // max subtracted by hand: 1000 + log(e^0 + e^0)
  CHECK(log_sum_exp(std::vector<double>{1000.0, 1000.0}) == 1000.0 + std::log(2.0));
  CHECK_THROWS_AS(log_sum_exp(std::vector<double>{}), DomainError);
  CHECK_THROWS_AS(log_sum_exp(std::vector<double>{1.0, std::nan("")}), DomainError);
}

TEST_CASE("log_sum_exp minus max lies in [0, log n]") {
  RngStream rng(3, 0);
  for (int rep = 0; rep < 200; ++rep) {
    const std::size_t n = 1 + rng.next_u64() % 20;
    std::vector<double> v(n);
    double mx = -1e300;
    for (auto& x : v) {
      x = 50.0 * rng.normal();
      mx = std::max(mx, x);
    }
    const double gap = log_sum_exp(v) - mx;
    CHECK(gap >= 0.0);
    CHECK(gap <= std::log(static_cast<double>(n)) + 1e-12);
  }
}

TEST_CASE("softmax examples") {
  const Vec u = softmax(std::vector<double>{0, 0, 0});
  for (double p : u) CHECK(p == doctest::Approx(1.0 / 3).epsilon(1e-15));
  for (double c : {-30.0, 0.0, 2.5, 400.0}) {
    const Vec p = softmax(std::vector<double>{c, c + std::log(3.0)});
    CHECK(p[0] == doctest::Approx(0.25).epsilon(1e-12));
    CHECK(p[1] == doctest::Approx(0.75).epsilon(1e-12));
  }
  RngStream rng(1, 1);
  std::vector<double> v(7);
  for (auto& x : v) x = rng.normal() * 3;
  std::vector<double> w = v;
  for (auto& x : w) x += 7.0;
  const Vec a = softmax(v);
  const Vec b = softmax(w);
  double sum = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i] == doctest::Approx(b[i]).epsilon(1e-14));
    CHECK(a[i] > 0.0);
    sum += a[i];
  }
  CHECK(std::abs(sum - 1.0) < 1e-12);
  const Vec ls = log_softmax(v);
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(std::exp(ls[i]) == doctest::Approx(a[i]).epsilon(1e-13));
  CHECK_THROWS_AS(softmax(std::vector<double>{1.0, std::numeric_limits<double>::infinity()}), DomainError);
}

TEST_CASE("rng streams are reproducible and independent") {
  RngStream a(42, 7);
  RngStream b(42, 7);
  RngStream c(42, 8);
  int same_c = 0;
  for (int i = 0; i < 1000; ++i) {
    const auto x = a.next_u64();
    CHECK(x == b.next_u64());
    same_c += x == c.next_u64();
  }
  CHECK(same_c == 0);
  CHECK(a.counter() == 1000);
  // split does not advance the parent
  RngStream p(5, 0);
  const auto before = p.counter();
  RngStream s1 = p.split(1);
  RngStream s1b = p.split(1);
  RngStream s2 = p.split(2);
  CHECK(p.counter() == before);
  CHECK(s1.next_u64() == s1b.next_u64());
  CHECK(s1.next_u64() != s2.next_u64());
}

TEST_CASE("uniform and normal moments") {
  RngStream rng(11, 2);
  const int n = 100000;
  double su = 0.0;
  double sn = 0.0;
  double sn2 = 0.0;
  for (int i = 0; i < n; ++i) {
    const double u = rng.uniform();
    CHECK(u >= 0.0);
    CHECK(u < 1.0);
    su += u;
    const double z = rng.normal();
    sn += z;
    sn2 += z * z;
  }
  CHECK(std::abs(su / n - 0.5) < 3 * std::sqrt(1.0 / 12 / n));
  CHECK(std::abs(sn / n) < 3 / std::sqrt(static_cast<double>(n)));
  CHECK(std::abs(sn2 / n - 1.0) < 3 * std::sqrt(2.0 / n));
}

TEST_CASE("sample_categorical examples") {
  RngStream rng(9, 9);
  for (int i = 0; i < 1000; ++i) CHECK(sample_categorical(std::vector<double>{1, 0, 0}, rng) == 0);
  for (int i = 0; i < 1000; ++i) CHECK(sample_categorical(std::vector<double>{0, 0, 1}, rng) == 2);
  const int n = 100000;
  int ones = 0;
  for (int i = 0; i < n; ++i) ones += static_cast<int>(sample_categorical(std::vector<double>{0.5, 0.5}, rng));
  CHECK(std::abs(ones - n / 2.0) < 3 * std::sqrt(n * 0.25));
  CHECK_THROWS_AS(sample_categorical(std::vector<double>{0.5, 0.6}, rng), DomainError);
  CHECK_THROWS_AS(sample_categorical(std::vector<double>{-0.1, 1.1}, rng), DomainError);
  // within tolerance: renormalized
  CHECK_NOTHROW(sample_categorical(std::vector<double>{0.5, 0.5 + 5e-10}, rng));
}

TEST_CASE("sample_categorical passes a chi-square test on a 4-way distribution") {
  const std::vector<double> p{0.1, 0.2, 0.3, 0.4};
  for (std::uint64_t seed : {1, 2, 3}) {
    RngStream rng(seed, 77);
    std::vector<double> counts(4, 0.0);
    for (int i = 0; i < 100000; ++i) counts[sample_categorical(p, rng)] += 1;
    CHECK(testutil::chi2_pvalue(counts, p) > 0.01);
  }
}

TEST_CASE("chi-square helper matches known quantiles") {
  CHECK(testutil::chi2_sf(3.841458820694124, 1) == doctest::Approx(0.05).epsilon(1e-8));
  CHECK(testutil::chi2_sf(11.344866730144373, 3) == doctest::Approx(0.01).epsilon(1e-8));
  CHECK(testutil::chi2_sf(2.0, 2) == doctest::Approx(std::exp(-1.0)).epsilon(1e-10));
}

TEST_CASE("mlp with zeroed final layer outputs zeros") {
  Mlp net({3, 8, 8, 2}, Activation::tanh);
  RngStream rng(1, 2);
  net.init(rng, true);
  for (int i = 0; i < 10; ++i) {
    const Vec y = net.forward(rng.normal_vec(3));
    CHECK(y.size() == 2);
    CHECK(y[0] == 0.0);
    CHECK(y[1] == 0.0);
  }
  CHECK_THROWS_AS(net.forward(Vec(4)), DomainError);
}

TEST_CASE("linear mlp input gradient is W transpose times upstream") {
  Mlp net({3, 2}, Activation::identity);
  RngStream rng(4, 4);
  net.init(rng, false);
  const auto& p = net.params();  // W (2x3) then b
  const Vec up{0.7, -1.3};
  const auto g = net.backward(rng.normal_vec(3), up);
  for (std::size_t j = 0; j < 3; ++j) {
    const double expect = p[0 * 3 + j] * up[0] + p[1 * 3 + j] * up[1];
    CHECK(g.input[j] == doctest::Approx(expect).epsilon(1e-14));
  }
  CHECK(g.params.size() == net.num_params());
}

TEST_CASE("mlp gradients match central differences over 20 seeds") {
  for (Activation act : {Activation::tanh, Activation::relu}) {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
      Mlp net({3, 6, 5, 2}, act, 0.7);
      RngStream rng(seed, 100);
      net.init(rng, false);
      // nonzero biases keep relu pre-activations off the kink at 0
      for (auto& w : net.params()) w += 0.1 * rng.normal();
      const Vec x = rng.normal_vec(3);
      const Vec up = rng.normal_vec(2);
      auto loss = [&](const Vec& in) { return net.forward(in).dot(up); };
      const auto g = net.backward(x, up);
      const double perr = testutil::fd_check(net.params(), [&] { return loss(x); }, g.params);
      CHECK(perr < 1e-4);
      std::vector<double> xs(x.begin(), x.end());
      const double ierr = testutil::fd_check(xs, [&] { return loss(Vec(xs)); }, g.input.span());
      CHECK(ierr < 1e-4);
    }
  }
}

TEST_CASE("backward_into accumulates a scaled gradient") {
  Mlp net({2, 4, 1}, Activation::tanh);
  RngStream rng(8, 8);
  net.init(rng, false);
  const Vec x{0.3, -0.2};
  const auto g = net.backward(x, Vec{1.0});
  std::vector<double> acc(net.num_params(), 1.0);
  net.backward_into(x, Vec{1.0}, acc, 2.5);
  for (std::size_t i = 0; i < acc.size(); ++i) CHECK(acc[i] == doctest::Approx(1.0 + 2.5 * g.params[i]).epsilon(1e-14));
}

TEST_CASE("adam matches the bias-corrected recursion") {
  AdamConfig cfg{0.1, 0.9, 0.999, 1e-8};
  Adam opt(2, cfg);
  std::vector<double> theta{1.0, -2.0};
  const std::vector<double> g1{0.5, -4.0};
  opt.step(theta, g1);
  // first step moves each coordinate by lr * sign(g) up to eps
  CHECK(theta[0] == doctest::Approx(1.0 - 0.1).epsilon(1e-7));
  CHECK(theta[1] == doctest::Approx(-2.0 + 0.1).epsilon(1e-7));
  const double after1 = theta[0];
  const std::vector<double> g2{1.0, 1.0};
  opt.step(theta, g2);
  const double m = 0.9 * 0.1 * 0.5 + 0.1 * 1.0;
  const double v = 0.999 * 0.001 * 0.25 + 0.001 * 1.0;
  const double upd = 0.1 * (m / (1 - 0.81)) / (std::sqrt(v / (1 - 0.999 * 0.999)) + 1e-8);
  CHECK(theta[0] == doctest::Approx(after1 - upd).epsilon(1e-12));
  CHECK(opt.steps() == 2);
  CHECK_THROWS_AS(opt.step(theta, std::vector<double>{1.0}), DomainError);
}
