#include <cmath>

#include "doctest.h"

#include "ernet/extraction.hpp"
#include "ernet/objective.hpp"
#include "ernet/ops.hpp"
#include "ernet/phantom.hpp"
#include "ernet/refcheck.hpp"

using namespace ernet;

namespace {

Tensor random_image(Shape shape, Rng& rng) {
  Tensor t = Tensor::zeros(std::move(shape));
  for (double& v : t.mutable_values()) v = rng.uniform();
  return t;
}

std::vector<double> vec(const Tensor& t) { return {t.values().begin(), t.values().end()}; }

ExtractionNet small_net(Rng& rng) { return ExtractionNet(ExtractionWidths::reduced(8), 10.0, rng); }

}  // namespace

TEST_CASE("widths follow the reference stack") {
  CHECK(ExtractionWidths{}.filters == std::array<int64_t, 10>{16, 32, 32, 64, 64, 64, 32, 32, 32, 16});
  CHECK(ExtractionWidths::reduced(4).filters == std::array<int64_t, 10>{4, 8, 8, 16, 16, 16, 8, 8, 8, 4});
  CHECK(ExtractionWidths::reduced(64).filters[0] == 1);
  CHECK_THROWS_AS(ExtractionWidths::reduced(0), std::invalid_argument);
}

TEST_CASE("gamma must be positive") {
  Rng rng(1);
  CHECK_THROWS_AS(ExtractionNet(ExtractionWidths::reduced(8), 0.0, rng), std::invalid_argument);
  CHECK_THROWS_AS(ExtractionNet(ExtractionWidths::reduced(8), -2.0, rng), std::invalid_argument);
}

TEST_CASE("zeroed head gives a half mask in training and an empty mask at inference") {
  Rng rng(2);
  ExtractionNet net = small_net(rng);
  for (double& w : net.head().weight.mutable_values()) w = 0.0;
  for (double& b : net.head().bias.mutable_values()) b = 0.0;
  const Tensor img = random_image({1, 8, 12, 4}, rng);
  const Tensor train = net.predict_mask(img, Mode::Train);
  const Tensor infer = net.predict_mask(img, Mode::Infer);
  CHECK(train.shape() == img.shape());
  for (double v : train.values()) CHECK(v == 0.5);
  for (double v : infer.values()) CHECK(v == 0.0);
}

TEST_CASE("fresh head keeps most of the image") {
  Rng rng(3);
  const ExtractionNet net = small_net(rng);
  const Tensor m = net.predict_mask(random_image({1, 8, 8, 8}, rng), Mode::Train);
  for (double v : m.values()) CHECK(v == doctest::Approx(1.0 / (1.0 + std::exp(-5.0))));
}

TEST_CASE("mask ranges and inference thresholding") {
  Rng rng(4);
  ExtractionNet net = small_net(rng);
  for (double& w : net.head().weight.mutable_values()) w = rng.normal();
  const Tensor img = random_image({1, 8, 8, 12}, rng);
  const Tensor logits = net.logits(img);
  const Tensor train = net.predict_mask(img, Mode::Train);
  const Tensor infer = net.predict_mask(img, Mode::Infer);
  int64_t both = 0;
  for (int64_t i = 0; i < img.numel(); ++i) {
    const size_t k = size_t(i);
    CHECK(train.values()[k] > 0.0);
    CHECK(train.values()[k] < 1.0);
    if (logits.values()[k] != 0.0) {
      CHECK(infer.values()[k] == (train.values()[k] > 0.5 ? 1.0 : 0.0));
      ++both;
    }
  }
  CHECK(both > 0);
}

TEST_CASE("extents must be divisible by 4") {
  Rng rng(5);
  const ExtractionNet net = small_net(rng);
  try {
    net.predict_mask(Tensor::zeros({1, 8, 6, 8}), Mode::Train);
    FAIL("expected rejection");
  } catch (const ShapeError& e) {
    CHECK(std::string(e.what()).find("divisible by 4") != std::string::npos);
  }
}

TEST_CASE("overlay") {
  Rng rng(6);
  const Tensor img = random_image({1, 3, 4, 5}, rng);
  CHECK(vec(overlay(img, Tensor::full(img.shape(), 1.0))) == vec(img));
  for (double v : vec(overlay(img, Tensor::zeros(img.shape())))) CHECK(v == 0.0);
  const Tensor mask = random_image(img.shape(), rng);
  const Tensor out = overlay(img, mask);
  for (int64_t i = 0; i < img.numel(); ++i)
    CHECK(out.values()[size_t(i)] == img.values()[size_t(i)] * mask.values()[size_t(i)]);
  CHECK_THROWS_AS(overlay(img, Tensor::zeros({1, 3, 4, 4})), ShapeError);
}

TEST_CASE("single stage is one mask application") {
  Rng rng(7);
  ExtractionNet net = small_net(rng);
  for (double& w : net.head().weight.mutable_values()) w = rng.normal();
  const Tensor s = random_image({1, 8, 8, 8}, rng);
  const ExtractionTrace t = run_extraction(net, s, 1, Mode::Train);
  REQUIRE(t.masks.size() == 1);
  REQUIRE(t.images.size() == 2);
  CHECK(vec(t.images[0]) == vec(s));
  CHECK(vec(t.output()) == vec(overlay(s, net.predict_mask(s, Mode::Train))));
  CHECK_THROWS_AS(run_extraction(net, s, 0, Mode::Train), std::invalid_argument);
}

TEST_CASE("stage images chain masks and inference supports shrink") {
  Rng rng(8);
  ExtractionNet net = small_net(rng);
  for (double& w : net.head().weight.mutable_values()) w = 2.0 * rng.normal();
  const Tensor s = random_image({1, 8, 8, 8}, rng);
  for (Mode mode : {Mode::Train, Mode::Infer}) {
    const ExtractionTrace t = run_extraction(net, s, 4, mode);
    REQUIRE(t.masks.size() == 4);
    for (size_t j = 1; j < t.images.size(); ++j)
      CHECK(vec(t.images[j]) == vec(overlay(t.images[j - 1], t.masks[j - 1])));
    if (mode == Mode::Infer) {
      for (size_t j = 1; j < t.images.size(); ++j)
        for (int64_t i = 0; i < s.numel(); ++i)
          if (t.images[j].values()[size_t(i)] != 0.0) CHECK(t.images[j - 1].values()[size_t(i)] != 0.0);
      for (double v : vec(t.cumulative_mask())) CHECK((v == 0.0 || v == 1.0));
    }
  }
}

TEST_CASE("oracle predictor extracts the phantom brain for any stage count") {
  const PhantomSample p = make_phantom(11, {32, 32, 32}, AugmentationRanges::lpba40());
  const Tensor truth = to_tensor(p.truth_mask);
  const MaskPredictor oracle = [truth](const Tensor&, Mode) { return truth; };
  const Tensor s = to_tensor(p.source);
  for (int64_t m : {1, 3, 5}) {
    const ExtractionTrace t = run_extraction(oracle, s, m, Mode::Infer);
    for (int64_t i = 0; i < s.numel(); ++i) {
      const size_t k = size_t(i);
      CHECK(t.output().values()[k] == (p.truth_mask.values[k] > 0.5 ? p.source.values[k] : 0.0));
    }
    CHECK(dice_ext(to_volume(t.cumulative_mask()), p.truth_mask) == 1.0);
  }
}

TEST_CASE("forward passes leave the shared parameters untouched") {
  Rng rng(9);
  ExtractionNet net = small_net(rng);
  std::vector<std::vector<double>> before;
  for (const auto& np : net.parameters()) before.push_back(vec(np.tensor));
  const auto params = net.parameters();
  run_extraction(net, random_image({1, 8, 8, 8}, rng), 3, Mode::Train);
  const auto after = net.parameters();
  REQUIRE(after.size() == before.size());
  for (size_t i = 0; i < after.size(); ++i) {
    CHECK(after[i].tensor.same_storage(params[i].tensor));
    CHECK(vec(after[i].tensor) == before[i]);
  }
  CHECK(params.size() == 22);
}

TEST_CASE("two-stage extraction gradients match finite differences") {
  Rng rng(10);
  ExtractionNet net(ExtractionWidths::reduced(16), 10.0, rng);
  for (double& w : net.head().weight.mutable_values()) w = 0.5 * rng.normal();
  for (auto& np : net.parameters())
    if (np.name.ends_with(".bias")) {
      Tensor b = np.tensor;
      for (double& v : b.mutable_values()) v += 0.05 * rng.normal();
    }
  const Tensor s = random_image({1, 8, 8, 8}, rng);
  std::vector<Tensor> inputs;
  for (const auto& np : net.parameters()) inputs.push_back(np.tensor);
  const auto f = [&net, s](const std::vector<Tensor>&) { return sum(run_extraction(net, s, 2, Mode::Train).output()); };
  CHECK(refcheck::gradient_check(f, inputs, 1e-6, 4, 3) < 1e-3);
}
