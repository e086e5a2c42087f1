// SPDX-License-Identifier: Apache-2.0
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "doctest.h"
#include "ssrt/rng.hpp"

using namespace ssrt;

TEST_CASE("equal seeds give identical streams") {
  Rng a(42), b(42);
  for (int i = 0; i < 100; ++i) CHECK(a.next_u64() == b.next_u64());
}

TEST_CASE("forking does not advance the parent") {
  Rng a(7), b(7);
  (void)a.fork("child");
  (void)a.fork(3);
  CHECK(a.next_u64() == b.next_u64());
}

TEST_CASE("forks with different labels diverge and equal labels repeat") {
  Rng root(9);
  Rng a = root.fork("alpha");
  Rng b = root.fork("beta");
  Rng c = root.fork(0);
  Rng d = root.fork(1);
  CHECK(a.next_u64() != b.next_u64());
  CHECK(c.next_u64() != d.next_u64());

  Rng a2 = root.fork("alpha");
  (void)a2.next_u64();  // align with a, which has already drawn once
  CHECK(a.next_u64() == a2.next_u64());
}

TEST_CASE("uniform stays in range with a sane mean") {
  Rng rng(1);
  double sum = 0.0;
  for (int i = 0; i < 4000; ++i) {
    double u = rng.uniform();
    CHECK(u >= 0.0);
    CHECK(u < 1.0);
    sum += u;
  }
  CHECK(std::abs(sum / 4000.0 - 0.5) < 0.03);

  for (int i = 0; i < 100; ++i) {
    double v = rng.uniform(-2.0, 5.0);
    CHECK(v >= -2.0);
    CHECK(v < 5.0);
  }
}

TEST_CASE("normal draws have standard moments") {
  Rng rng(2);
  const int n = 8000;
  double sum = 0.0, sq = 0.0;
  for (int i = 0; i < n; ++i) {
    double z = rng.normal();
    sum += z;
    sq += z * z;
  }
  double mean = sum / n;
  CHECK(std::abs(mean) < 0.05);
  CHECK(std::abs(sq / n - mean * mean - 1.0) < 0.1);
}

TEST_CASE("truncated normal never exceeds two standard deviations") {
  Rng rng(3);
  for (int i = 0; i < 4000; ++i) {
    double z = rng.truncated_normal(0.02);
    CHECK(std::abs(z) <= 2.0 * 0.02);
  }
}

TEST_CASE("uniform_index covers the range without bias toward any bucket") {
  Rng rng(4);
  const std::size_t n = 8;
  std::vector<int> counts(n, 0);
  for (int i = 0; i < 8000; ++i) {
    std::size_t k = rng.uniform_index(n);
    REQUIRE(k < n);
    ++counts[k];
  }
  for (auto c : counts) {
    CHECK(c > 800);
    CHECK(c < 1200);
  }
}

TEST_CASE("permutation rearranges exactly the identity set") {
  Rng rng(5);
  auto p = rng.permutation(31);
  std::vector<std::size_t> sorted = p;
  std::sort(sorted.begin(), sorted.end());
  for (std::size_t i = 0; i < sorted.size(); ++i) CHECK(sorted[i] == i);
  // Not the identity itself, overwhelmingly likely for n = 31.
  bool identity = true;
  for (std::size_t i = 0; i < p.size(); ++i) identity = identity && p[i] == i;
  CHECK_FALSE(identity);
}

TEST_CASE("partner_index picks a different element uniformly") {
  Rng rng(6);
  std::vector<int> counts(5, 0);
  for (int i = 0; i < 5000; ++i) {
    std::size_t k = rng.partner_index(5, 2);
    REQUIRE(k < 5);
    REQUIRE(k != 2);
    ++counts[k];
  }
  CHECK(counts[2] == 0);
  for (std::size_t j = 0; j < 5; ++j) {
    if (j == 2) continue;
    CHECK(counts[j] > 1000);
    CHECK(counts[j] < 1500);
  }
}

TEST_CASE("bernoulli tracks its probability") {
  Rng rng(7);
  int heads = 0;
  for (int i = 0; i < 6000; ++i) heads += rng.bernoulli(0.5);
  CHECK(std::abs(heads / 6000.0 - 0.5) < 0.03);
  Rng rng2(8);
  for (int i = 0; i < 100; ++i) CHECK_FALSE(rng2.bernoulli(0.0));
}
