#include <cmath>

#include "doctest.h"

#include "ernet/objective.hpp"
#include "ernet/ops.hpp"
#include "ernet/phantom.hpp"
#include "ernet/refcheck.hpp"
#include "ernet/registration.hpp"

using namespace ernet;

namespace {

Tensor random_image(Shape shape, Rng& rng) {
  Tensor t = Tensor::zeros(std::move(shape));
  for (double& v : t.mutable_values()) v = rng.uniform();
  return t;
}

std::vector<double> vec(const Tensor& t) { return {t.values().begin(), t.values().end()}; }

AffineTransform small_affine(Rng& rng, double spread) {
  std::array<double, 12> a{1, 0, 0, 0, 0, 1, 0, 0, 0, 0, 1, 0};
  for (double& v : a) v += rng.uniform(-spread, spread);
  return AffineTransform(a);
}

}  // namespace

TEST_CASE("registration widths and padding") {
  CHECK(RegistrationWidths{}.filters == std::array<int64_t, 6>{16, 32, 64, 128, 256, 512});
  CHECK(RegistrationWidths{}.hidden == 128);
  CHECK(RegistrationWidths::reduced(4).filters == std::array<int64_t, 6>{4, 8, 16, 32, 64, 128});
  CHECK(RegistrationWidths::reduced(4).hidden == 128);
  CHECK(pad_to_multiple_of_64(64) == std::array<int64_t, 2>{0, 0});
  CHECK(pad_to_multiple_of_64(32) == std::array<int64_t, 2>{16, 16});
  CHECK(pad_to_multiple_of_64(33) == std::array<int64_t, 2>{15, 16});
  CHECK(pad_to_multiple_of_64(65)[0] + pad_to_multiple_of_64(65)[1] == 63);
}

TEST_CASE("fresh net predicts the identity") {
  Rng rng(1);
  const RegistrationNet net(RegistrationWidths::reduced(8), rng);
  for (int trial = 0; trial < 3; ++trial) {
    const Tensor a = net.predict_increment(random_image({1, 8, 12, 16}, rng), random_image({1, 8, 12, 16}, rng));
    CHECK(to_affine(a) == AffineTransform::identity());
  }
}

TEST_CASE("predicted increments are finite and shapes must match") {
  Rng rng(2);
  RegistrationNet net(RegistrationWidths::reduced(8), rng);
  for (double& w : net.output_layer().weight.mutable_values()) w = rng.normal();
  const Tensor a = net.predict_increment(random_image({1, 16, 16, 16}, rng), random_image({1, 16, 16, 16}, rng));
  CHECK(a.numel() == 12);
  for (double v : a.values()) CHECK(std::isfinite(v));
  CHECK_THROWS_AS(net.predict_increment(Tensor::zeros({1, 8, 8, 8}), Tensor::zeros({1, 8, 8, 4})), ShapeError);
}

TEST_CASE("increment gradients match finite differences on 16^3 inputs") {
  Rng rng(3);
  RegistrationWidths widths = RegistrationWidths::reduced(16);
  widths.hidden = 8;
  RegistrationNet net(widths, rng);
  for (double& w : net.output_layer().weight.mutable_values()) w = 0.1 * rng.normal();
  for (auto& np : net.parameters())
    if (np.name.ends_with(".bias")) {
      Tensor b = np.tensor;
      for (double& v : b.mutable_values()) v += 0.05 * rng.normal();
    }
  Tensor w = random_image({1, 16, 16, 16}, rng);
  w.set_requires_grad(true);
  const Tensor t = random_image({1, 16, 16, 16}, rng);
  const Tensor weights = random_image({12}, rng);
  std::vector<Tensor> inputs{w};
  for (const auto& np : net.parameters()) inputs.push_back(np.tensor);
  const auto f = [&net, t, weights](const std::vector<Tensor>& in) {
    const Tensor a = net.predict_increment(in[0], t);
    return sum(mul(mul(a, a), weights));
  };
  CHECK(refcheck::gradient_check(f, inputs, 1e-6, 4, 5) < 1e-3);
}

TEST_CASE("one identity stage reproduces the input") {
  Rng rng(4);
  const RegistrationNet net(RegistrationWidths::reduced(8), rng);
  const Tensor e = random_image({1, 8, 8, 8}, rng);
  const RegistrationTrace tr = run_registration(net, e, random_image({1, 8, 8, 8}, rng), 1, CoordinateFrame{{8, 8, 8}});
  REQUIRE(tr.warped.size() == 2);
  CHECK(vec(tr.output()) == vec(e));
  CHECK(to_affine(tr.transform()) == AffineTransform::identity());
  CHECK_THROWS_AS(run_registration(net, e, e, 0, CoordinateFrame{{8, 8, 8}}), std::invalid_argument);
}

TEST_CASE("combined transform is the ordered product of increments") {
  Rng rng(5);
  const Extents ext{8, 8, 8};
  std::vector<AffineTransform> incs;
  for (int k = 0; k < 4; ++k) incs.push_back(small_affine(rng, 0.1));
  size_t calls = 0;
  const IncrementPredictor scripted = [&](const Tensor&, const Tensor&) { return to_tensor(incs[calls++]); };
  const Tensor e = random_image({1, 8, 8, 8}, rng);
  const RegistrationTrace tr = run_registration(scripted, e, e, 4, CoordinateFrame{ext});
  REQUIRE(tr.combined.size() == 5);
  CHECK(to_affine(tr.combined[0]) == AffineTransform::identity());
  Mat4 product = mat4_identity();
  for (int k = 0; k < 4; ++k) {
    product = mat4_multiply(incs[size_t(k)].matrix(), product);
    const Mat4 got = to_affine(tr.combined[size_t(k + 1)]).matrix();
    for (int i = 0; i < 4; ++i)
      for (int j = 0; j < 4; ++j) CHECK(std::abs(got[i][j] - product[i][j]) < 1e-12);
    // Every stage is one interpolation of the extracted image.
    CHECK(vec(tr.warped[size_t(k + 1)]) == vec(warp(e, tr.combined[size_t(k + 1)], CoordinateFrame{ext})));
  }
  // Applying the increments one after another to a point agrees with the combined transform.
  const Vec3 p{0.3, -0.2, 0.7};
  Vec3 q = p;
  for (const auto& a : incs) q = refcheck::naive_map_point(a.params(), q);
  const Vec3 c = to_affine(tr.transform()).map_point(p);
  for (int i = 0; i < 3; ++i) CHECK(std::abs(c[size_t(i)] - q[size_t(i)]) < 1e-10);
}

TEST_CASE("oracle increment aligns a phantom") {
  const PhantomSample p = make_phantom(21, {32, 32, 32}, AugmentationRanges::lpba40());
  const CoordinateFrame frame{p.source.extents};
  const Tensor truth = to_tensor(p.truth_transform);
  const IncrementPredictor oracle = [truth](const Tensor&, const Tensor&) { return truth; };
  const RegistrationTrace tr = run_registration(oracle, to_tensor(p.source), to_tensor(p.target), 1, frame);
  CHECK(to_affine(tr.transform()) == p.truth_transform);
  const DiceRegResult d = dice_reg(p.truth_labels, p.target_labels, to_affine(tr.transform()), frame);
  CHECK(d.mean >= 0.99);
  CHECK(dice_ext(warp_mask(p.truth_mask, p.truth_transform), p.target_mask) >= 0.95);
}

TEST_CASE("single interpolation is at least as sharp as sequential re-interpolation") {
  Rng rng(6);
  for (uint64_t seed : {31, 32, 33}) {
    const PhantomSample p = make_phantom(seed, {32, 32, 32}, AugmentationRanges{});
    std::vector<AffineTransform> incs;
    for (int k = 0; k < 5; ++k) incs.push_back(small_affine(rng, 0.02));
    AffineTransform combined;
    for (const auto& a : incs) combined = compose(combined, a);
    const double direct = mean_gradient_magnitude(warp(p.target, combined));
    const double control = mean_gradient_magnitude(sequential_rewarp(p.target, incs));
    CHECK(direct >= control);
  }
}

TEST_CASE("sequential control reproduces integer shifts exactly") {
  const PhantomSample p = make_phantom(41, {32, 32, 32}, AugmentationRanges{});
  const double u = 2.0 / 31.0;
  const std::vector<AffineTransform> incs{AffineTransform::translation({u, 0, 0}),
                                          AffineTransform::translation({0, -u, 0})};
  const Volume direct = warp(p.target, compose(incs[0], incs[1]));
  const Volume seq = sequential_rewarp(p.target, incs);
  for (int64_t x = 0; x < 31; ++x)
    for (int64_t y = 1; y < 32; ++y)
      for (int64_t z = 0; z < 32; ++z) CHECK(seq.at(x, y, z) == doctest::Approx(direct.at(x, y, z)).epsilon(1e-13));
}

TEST_CASE("shared weights across stages") {
  Rng rng(7);
  RegistrationNet net(RegistrationWidths::reduced(8), rng);
  const auto params = net.parameters();
  std::vector<std::vector<double>> before;
  for (const auto& np : params) before.push_back(vec(np.tensor));
  run_registration(net, random_image({1, 8, 8, 8}, rng), random_image({1, 8, 8, 8}, rng), 3, CoordinateFrame{{8, 8, 8}});
  const auto after = net.parameters();
  for (size_t i = 0; i < params.size(); ++i) {
    CHECK(after[i].tensor.same_storage(params[i].tensor));
    CHECK(vec(after[i].tensor) == before[i]);
  }
}
