#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>
#include <cstddef>

#include "ctxfuse/dropnet.hpp"
#include "ctxfuse/rng.hpp"
#include "ctxfuse/tensor.hpp"
#include "doctest.h"

using namespace ctxfuse;

TEST_CASE("choice thresholds cut at p/2 and 1 - p/2") {
  const double p = 0.4;  // cutoffs at 0.2 and 0.8
  CHECK(dropnet_choice(0.0, p) == BranchChoice::first_only);
  CHECK(dropnet_choice(0.1999, p) == BranchChoice::first_only);
  CHECK(dropnet_choice(0.2001, p) == BranchChoice::both);
  CHECK(dropnet_choice(0.5, p) == BranchChoice::both);
  CHECK(dropnet_choice(0.7999, p) == BranchChoice::both);
  CHECK(dropnet_choice(0.8001, p) == BranchChoice::second_only);
  CHECK(dropnet_choice(0.9999, p) == BranchChoice::second_only);
}

TEST_CASE("p = 0 always mixes and p = 1 almost never does") {
  for (double u : {0.001, 0.25, 0.5, 0.75, 0.999}) {
    CHECK(dropnet_choice(u, 0.0) == BranchChoice::both);
  }
  for (double u : {0.001, 0.25, 0.499}) CHECK(dropnet_choice(u, 1.0) == BranchChoice::first_only);
  for (double u : {0.501, 0.75, 0.999}) CHECK(dropnet_choice(u, 1.0) == BranchChoice::second_only);
  // the boundaries themselves are strict: a draw exactly at a cutoff mixes
  CHECK(dropnet_choice(0.5, 1.0) == BranchChoice::both);
  CHECK(dropnet_choice(0.2, 0.4) == BranchChoice::both);
  CHECK(dropnet_choice(0.8, 0.4) == BranchChoice::both);
}

TEST_CASE("training combination selects or averages exactly") {
  auto a = Tensor::from({2, 2}, {1, 2, 3, 4});
  auto b = Tensor::from({2, 2}, {10, 20, 30, 40});

  auto first = combine_train(a, b, 0.05, 0.4);
  for (std::size_t i = 0; i < 4; ++i) CHECK(first.at(i) == a.at(i));

  auto second = combine_train(a, b, 0.95, 0.4);
  for (std::size_t i = 0; i < 4; ++i) CHECK(second.at(i) == b.at(i));

  auto mixed = combine_train(a, b, 0.5, 0.4);
  for (std::size_t i = 0; i < 4; ++i)
    CHECK(mixed.at(i) == 0.5 * (a.at(i) + b.at(i)));
}

TEST_CASE("eval combination is the exact average regardless of rate") {
  auto a = Tensor::from({3}, {1, -1, 5});
  auto b = Tensor::from({3}, {3, 1, -5});
  auto e = combine_eval(a, b);
  CHECK(e.at(0) == 2.0);
  CHECK(e.at(1) == 0.0);
  CHECK(e.at(2) == 0.0);

  // p = 0 training equals eval bit for bit: u always lands in the both-branch
  for (double u : {0.01, 0.5, 0.99}) {
    auto t = combine_train(a, b, u, 0.0);
    for (std::size_t i = 0; i < 3; ++i) CHECK(t.at(i) == e.at(i));
  }
}

TEST_CASE("combined gradients route to the selected branches only") {
  auto a = Tensor::from({2}, {1, 2}, true);
  auto b = Tensor::from({2}, {3, 4}, true);

  backward(sum(combine_train(a, b, 0.05, 1.0)));  // first only
  CHECK(a.grad()[0] == 1.0);
  CHECK(b.grad()[0] == 0.0);

  a.zero_grad();
  b.zero_grad();
  backward(sum(combine_train(a, b, 0.5, 0.0)));  // averaged
  CHECK(a.grad()[0] == 0.5);
  CHECK(b.grad()[0] == 0.5);
}

TEST_CASE("draws cover both stacks, one uniform per layer") {
  Rng rng(31);
  auto s = draw_dropnet(rng, 3, 2);
  CHECK(s.enc_u.size() == 3);
  CHECK(s.dec_u.size() == 2);
  for (double u : s.enc_u) {
    CHECK(u >= 0.0);
    CHECK(u < 1.0);
  }
  // distinct layers draw independently (identical doubles would be a freak)
  CHECK(s.enc_u[0] != s.enc_u[1]);
}

TEST_CASE("shared draws reuse the encoder uniform for the matching decoder layer") {
  Rng rng(32);
  auto s = draw_dropnet(rng, 2, 2, true);
  CHECK(s.dec_u[0] == s.enc_u[0]);
  CHECK(s.dec_u[1] == s.enc_u[1]);

  Rng rng2(32);
  auto ind = draw_dropnet(rng2, 2, 2, false);
  CHECK(ind.enc_u == s.enc_u);  // same rng state, same encoder prefix
  CHECK(ind.dec_u[0] != ind.enc_u[0]);

  // decoder deeper than encoder: extra layers get fresh draws
  Rng rng3(33);
  auto deep = draw_dropnet(rng3, 1, 3, true);
  CHECK(deep.dec_u[0] == deep.enc_u[0]);
  CHECK(deep.dec_u[1] != deep.dec_u[0]);
}

TEST_CASE("empirical branch frequencies track p/2, p/2 and 1 - p") {
  Rng rng(34);
  const double p = 0.6;
  const int n = 200000;
  int first = 0, second = 0, both = 0;
  for (int i = 0; i < n; ++i) {
    switch (dropnet_choice(rng.uniform(), p)) {
      case BranchChoice::first_only: ++first; break;
      case BranchChoice::second_only: ++second; break;
      case BranchChoice::both: ++both; break;
    }
  }
  // three-sigma bands for binomial counts at n = 2e5
  const double sd_half = std::sqrt(n * 0.3 * 0.7);   // p/2 = 0.3
  const double sd_both = std::sqrt(n * 0.4 * 0.6);   // 1 - p = 0.4
  CHECK(std::abs(first - 0.3 * n) < 3.0 * sd_half);
  CHECK(std::abs(second - 0.3 * n) < 3.0 * sd_half);
  CHECK(std::abs(both - 0.4 * n) < 3.0 * sd_both);
}

TEST_CASE("invalid rates are rejected") {
  CHECK_THROWS(dropnet_choice(0.5, -0.1));
  CHECK_THROWS(dropnet_choice(0.5, 1.1));
}
