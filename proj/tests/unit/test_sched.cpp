#include <doctest.h>

#include <cmath>

#include "davlab/errors.hpp"
#include "davlab/sched.hpp"

using namespace davlab;
using namespace davlab::sched;

TEST_CASE("continuous schedule products") {
  const auto one = make_continuous_schedule(1, 0.5, 0.5);
  CHECK(one.alpha_bar(1) == 0.5);
  const auto s = make_continuous_schedule(3, 0.1, 0.1);
  CHECK(s.alpha_bar(3) == doctest::Approx(0.729).epsilon(1e-15));
  CHECK(s.alpha_bar(0) == 1.0);
  CHECK(s.alpha_bar(1) > s.alpha_bar(2));
  CHECK(s.alpha_bar(2) > s.alpha_bar(3));
  CHECK(s.alpha(2) == doctest::Approx(0.9));
}

TEST_CASE("continuous schedule posterior variance") {
  const auto s = make_continuous_schedule(50, 1e-4, 0.02);
  CHECK(s.sigma2(1) == s.beta(1));
  for (int t = 2; t <= 50; ++t) {
    const double expect = s.beta(t) * (1 - s.alpha_bar(t - 1)) / (1 - s.alpha_bar(t));
    CHECK(s.sigma2(t) == doctest::Approx(expect).epsilon(1e-14));
    CHECK(s.sigma2(t) > 0.0);
    CHECK(s.alpha_bar(t) < s.alpha_bar(t - 1));
    CHECK(s.beta(t) >= s.beta(t - 1));
  }
  CHECK(s.beta(1) == doctest::Approx(1e-4));
  CHECK(s.beta(50) == doctest::Approx(0.02));
  CHECK_THROWS_AS(s.alpha_bar(51), DomainError);
  CHECK_THROWS_AS(s.beta(0), DomainError);
}

TEST_CASE("continuous schedule rejects invalid ranges") {
  CHECK_THROWS_AS(make_continuous_schedule(10, 0.0, 0.1), ConfigError);
  CHECK_THROWS_AS(make_continuous_schedule(10, 0.2, 0.1), ConfigError);
  CHECK_THROWS_AS(make_continuous_schedule(10, 0.1, 1.0), ConfigError);
  CHECK_THROWS_AS(make_continuous_schedule(0, 0.1, 0.2), ConfigError);
}

TEST_CASE("discrete schedule") {
  const auto s = make_discrete_schedule(4);
  const double expect[] = {1, .75, .5, .25, 0};
  for (int t = 0; t <= 4; ++t) CHECK(s.alpha_bar(t) == expect[t]);
  for (int T : {2, 3, 7, 50}) {
    const auto d = make_discrete_schedule(T);
    CHECK(d.alpha_bar(0) == 1.0);
    CHECK(d.alpha_bar(T) == 0.0);
    for (int t = 0; t < T; ++t) CHECK(d.alpha_bar(t) - d.alpha_bar(t + 1) == doctest::Approx(1.0 / T).epsilon(1e-14));
  }
  CHECK_THROWS_AS(make_discrete_schedule(1), ConfigError);
  CHECK_THROWS_AS(s.alpha_bar(5), DomainError);
}
