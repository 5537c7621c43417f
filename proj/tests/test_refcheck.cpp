#include <cmath>
#include <random>

#include "doctest.h"

#include "ernet/geometry.hpp"
#include "ernet/objective.hpp"
#include "ernet/ops.hpp"
#include "ernet/refcheck.hpp"

using namespace ernet;
using namespace ernet::refcheck;

TEST_CASE("finite differences of simple functions") {
  const std::vector<double> x{0.5, -1.0, 2.0, 3.5};
  const auto sum_f = [](const std::vector<double>& v) {
    double s = 0.0;
    for (double a : v) s += a;
    return s;
  };
  for (double g : fd_gradient(sum_f, x, 1e-5)) CHECK(g == doctest::Approx(1.0).epsilon(1e-9));

  const auto sq = [](const std::vector<double>& v) {
    double s = 0.0;
    for (double a : v) s += a * a;
    return s;
  };
  const auto g = fd_gradient(sq, x, 1e-5);
  for (size_t i = 0; i < x.size(); ++i) CHECK(g[i] == doctest::Approx(2 * x[i]).epsilon(1e-8));
}

TEST_CASE("error measures") {
  CHECK(relative_error({1.0, 2.0}, {1.0, 2.0}) == 0.0);
  CHECK(relative_error({0.0}, {0.0}) == 0.0);
  CHECK(max_abs_diff({1.0, 2.0}, {1.5, 1.0}) == 1.0);
  CHECK(relative_error({1.0, 0.0}, {1.1, 0.0}) > 0.0);
}

TEST_CASE("gradient check of a random composite graph") {
  std::mt19937_64 gen(11);
  std::normal_distribution<double> n(0.0, 1.0);
  std::vector<double> a(24), b(24);
  for (auto& v : a) v = n(gen);
  for (auto& v : b) v = n(gen);
  const std::vector<Tensor> inputs{Tensor::from_values({2, 3, 2, 2}, a, true),
                                   Tensor::from_values({2, 3, 2, 2}, b, true)};
  const auto f = [](const std::vector<Tensor>& in) {
    return mean(mul(steep_sigmoid(mul(in[0], in[1]), 2.0), add(in[0], in[1])));
  };
  CHECK(gradient_check(f, inputs, 1e-6) < 1e-5);
}

TEST_CASE("oracle analytic values") {
  const Dims3 d{5, 5, 5};
  std::vector<double> single(125, 0.0);
  single[62] = 1.0;
  CHECK(naive_smoothness(d, single) == 6.0);
  CHECK(naive_smoothness(d, std::vector<double>(125, 1.0)) == 0.0);

  std::vector<double> ramp(125);
  for (size_t i = 0; i < ramp.size(); ++i) ramp[i] = double(i % 7);
  CHECK(naive_ncc(d, 3, 1e-5, ramp, ramp) == doctest::Approx(-1.0).epsilon(1e-3));

  CHECK(brute_dice(single, single) == 1.0);
  CHECK(brute_dice(single, std::vector<double>(125, 0.0)) == 0.0);

  CHECK(union_find_components(d, single) == 1);
  std::vector<double> two = single;
  two[0] = 1.0;
  CHECK(union_find_components(d, two) == 2);

  const std::array<double, 12> id{1, 0, 0, 0, 0, 1, 0, 0, 0, 0, 1, 0};
  CHECK(naive_warp(d, ramp, id) == ramp);
  const auto p = naive_map_point({1, 0, 0, 0.5, 0, 2, 0, 0, 0, 0, 1, -1}, {1.0, 1.0, 1.0});
  CHECK(p == std::array<double, 3>{1.5, 2.0, 0.0});
}

TEST_CASE("naive ncc agrees with the library loss") {
  const Dims3 d{6, 6, 6};
  std::mt19937_64 gen(2);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<double> a(216), b(216);
  for (auto& v : a) v = u(gen);
  for (auto& v : b) v = u(gen);
  const Tensor ta = Tensor::from_values({1, 6, 6, 6}, a);
  const Tensor tb = Tensor::from_values({1, 6, 6, 6}, b);
  CHECK(ncc_loss(ta, tb, 3).item() == doctest::Approx(naive_ncc(d, 3, 1e-5, a, b)).epsilon(1e-10));
}

TEST_CASE("block averaging") {
  Volume v({4, 4, 4});
  for (size_t i = 0; i < v.values.size(); ++i) v.values[i] = double(i);
  const Volume b = block_average(v, 2);
  CHECK(b.extents == Extents{2, 2, 2});
  double total = 0.0;
  for (double x : b.values) total += x;
  CHECK(total * 8 == doctest::Approx(63.0 * 64 / 2));
  CHECK_THROWS(block_average(v, 3));
}

TEST_CASE("reference suites pass") {
  const VerifyReport r = run_verify(5, 8);
  CHECK(!r.suites.empty());
  for (const auto& s : r.suites) {
    INFO(s.name << " error " << s.max_error << " tolerance " << s.tolerance);
    CHECK(s.passed);
  }
  CHECK(r.all_passed());
}
