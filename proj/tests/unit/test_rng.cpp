#include <doctest.h>

#include <set>

#include "rulmdp/rng.hpp"

using namespace rulmdp;

TEST_CASE("same seed, same stream") {
  Rng a(42), b(42);
  for (int i = 0; i < 100; ++i) CHECK(a.next_u64() == b.next_u64());
}

TEST_CASE("split streams are independent of parent consumption") {
  Rng a(7), b(7);
  b.next_u64();
  b.next_u64();
  Rng ca = a.split("child"), cb = b.split("child");
  for (int i = 0; i < 10; ++i) CHECK(ca.next_u64() == cb.next_u64());
  CHECK(a.split(1).next_u64() != a.split(2).next_u64());
  CHECK(a.split("x").next_u64() != a.split("y").next_u64());
}

TEST_CASE("uniform moments") {
  Rng r(1);
  const int n = 200000;
  double s = 0, s2 = 0;
  for (int i = 0; i < n; ++i) {
    const double u = r.uniform();
    REQUIRE(u >= 0.0);
    REQUIRE(u < 1.0);
    s += u;
    s2 += u * u;
  }
  CHECK(s / n == doctest::Approx(0.5).epsilon(0.01));
  CHECK(s2 / n - (s / n) * (s / n) == doctest::Approx(1.0 / 12).epsilon(0.02));
}

TEST_CASE("normal moments") {
  Rng r(2);
  const int n = 200000;
  double s = 0, s2 = 0;
  for (int i = 0; i < n; ++i) {
    const double z = r.normal();
    s += z;
    s2 += z * z;
  }
  CHECK(std::abs(s / n) < 0.01);
  CHECK(s2 / n == doctest::Approx(1.0).epsilon(0.02));
}

TEST_CASE("categorical follows weights") {
  Rng r(5);
  const std::vector<double> w{1.0, 0.0, 3.0};
  std::vector<int> counts(3);
  for (int i = 0; i < 40000; ++i) ++counts[r.categorical(w)];
  CHECK(counts[1] == 0);
  CHECK(counts[2] / 40000.0 == doctest::Approx(0.75).epsilon(0.02));
}

TEST_CASE("permutation and uniform_int ranges") {
  Rng r(9);
  auto p = r.permutation(50);
  CHECK(std::set<std::size_t>(p.begin(), p.end()).size() == 50);
  for (int i = 0; i < 1000; ++i) CHECK(r.uniform_int(7) < 7);
}
