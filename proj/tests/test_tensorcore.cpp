#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <filesystem>
#include <random>

#include "doctest.h"

#include "ernet/checkpoint.hpp"
#include "ernet/ops.hpp"
#include "ernet/optim.hpp"
#include "ernet/refcheck.hpp"

using namespace ernet;

namespace {

Tensor random_tensor(Shape shape, uint64_t seed, bool grad = true) {
  std::mt19937_64 gen(seed);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  Tensor t = Tensor::zeros(std::move(shape), grad);
  for (double& v : t.mutable_values()) v = u(gen);
  return t;
}

std::vector<double> vec(const Tensor& t) { return {t.values().begin(), t.values().end()}; }

Tensor backward_of(const std::function<Tensor()>& f, Tensor& wrt) {
  wrt.zero_grad();
  Tape tape;
  Tensor out;
  {
    TapeScope scope(tape);
    out = f();
  }
  tape.backward(out);
  return Tensor::from_values(wrt.shape(), {wrt.grad().begin(), wrt.grad().end()});
}

}  // namespace

TEST_CASE("elementwise product with ones and zeros") {
  const Tensor x = random_tensor({2, 3, 4}, 1, false);
  CHECK(vec(mul(x, Tensor::full({2, 3, 4}, 1.0))) == vec(x));
  for (double v : vec(mul(x, Tensor::zeros({2, 3, 4})))) CHECK(v == 0.0);
}

TEST_CASE("elementwise shape mismatch names both shapes") {
  const Tensor a = Tensor::zeros({2, 3});
  const Tensor b = Tensor::zeros({3, 2});
  try {
    add(a, b);
    FAIL("expected a shape error");
  } catch (const ShapeError& e) {
    const std::string msg = e.what();
    CHECK(msg.find(shape_to_string(a.shape())) != std::string::npos);
    CHECK(msg.find(shape_to_string(b.shape())) != std::string::npos);
  }
}

TEST_CASE("gradient of sum(x*y) with respect to x is y") {
  Tensor x = random_tensor({2, 3, 4}, 2);
  Tensor y = random_tensor({2, 3, 4}, 3);
  const Tensor g = backward_of([&] { return sum(mul(x, y)); }, x);
  CHECK(refcheck::max_abs_diff(vec(g), vec(y)) == 0.0);
  const double err = refcheck::gradient_check([](const std::vector<Tensor>& in) { return sum(mul(in[0], in[1])); },
                                              {x, y}, 1e-5);
  CHECK(err < 1e-6);
}

TEST_CASE("elementwise kinds and scalar operand pass finite differences") {
  Tensor a = random_tensor({3, 4}, 4);
  Tensor b = random_tensor({3, 4}, 5);
  for (auto kind : {ElementwiseKind::Add, ElementwiseKind::Sub, ElementwiseKind::Mul, ElementwiseKind::Max}) {
    const auto f = [kind](const std::vector<Tensor>& in) {
      return sum(mul(elementwise(kind, in[0], in[1]), elementwise(kind, in[0], 0.3)));
    };
    CHECK(refcheck::gradient_check(f, {a, b}) < 1e-6);
  }
}

TEST_CASE("conv3d identity kernel, zero input, and naive loops") {
  const Tensor x = random_tensor({1, 4, 3, 5}, 6, false);
  const Tensor id = Tensor::full({1, 1, 1, 1, 1}, 1.0);
  CHECK(vec(conv3d(x, id, Tensor(), 1, 0)) == vec(x));

  const Tensor w = random_tensor({2, 1, 3, 3, 3}, 7, false);
  for (double v : vec(conv3d(Tensor::zeros({1, 4, 4, 4}), w, Tensor::zeros({2}), 1, 1))) CHECK(v == 0.0);

  const Tensor in = random_tensor({2, 5, 5, 5}, 8, false);
  const Tensor k = random_tensor({3, 2, 3, 3, 3}, 9, false);
  const Tensor b = random_tensor({3}, 10, false);
  for (int64_t stride : {1, 2}) {
    const Tensor y = conv3d(in, k, b, stride, 1);
    const int64_t o = (5 + 2 - 3) / stride + 1;
    CHECK(y.shape() == Shape{3, o, o, o});
    CHECK(refcheck::max_abs_diff(vec(y), refcheck::naive_conv(2, 3, 3, stride, 1, {5, 5, 5}, vec(in), vec(k), vec(b))) <
          1e-10);
  }
}

TEST_CASE("conv3d rejects channel mismatch") {
  CHECK_THROWS_AS(conv3d(Tensor::zeros({2, 4, 4, 4}), Tensor::zeros({1, 3, 3, 3, 3}), Tensor(), 1, 1), ShapeError);
}

TEST_CASE("conv3d gradients for input, kernel and bias") {
  Tensor x = random_tensor({2, 4, 5, 3}, 11);
  Tensor k = random_tensor({2, 2, 3, 3, 3}, 12);
  Tensor b = random_tensor({2}, 13);
  for (int64_t stride : {1, 2}) {
    const auto f = [stride](const std::vector<Tensor>& in) {
      const Tensor y = conv3d(in[0], in[1], in[2], stride, 1);
      return sum(mul(y, y));
    };
    CHECK(refcheck::gradient_check(f, {x, k, b}) < 1e-6);
  }
}

TEST_CASE("upsample nearest 2x") {
  const Tensor one = Tensor::from_values({1, 1, 1, 1}, {2.5});
  const Tensor up = upsample_nearest2x(one);
  CHECK(up.shape() == Shape{1, 2, 2, 2});
  for (double v : up.values()) CHECK(v == 2.5);
  CHECK(upsample_nearest2x(upsample_nearest2x(Tensor::zeros({1, 2, 2, 2}))).shape() == Shape{1, 8, 8, 8});

  Tensor x = random_tensor({1, 2, 2, 2}, 14);
  Tensor w = random_tensor({1, 4, 4, 4}, 15, false);
  const auto f = [w](const std::vector<Tensor>& in) { return sum(mul(upsample_nearest2x(in[0]), w)); };
  CHECK(refcheck::gradient_check(f, {x}) < 1e-6);
}

TEST_CASE("steep sigmoid values and limit") {
  const Tensor zero = Tensor::zeros({3});
  for (double g : {0.1, 10.0, 1e6}) CHECK(steep_sigmoid(zero, g).values()[0] == 0.5);
  CHECK(steep_sigmoid(Tensor::scalar(1.0), 10.0).item() == doctest::Approx(1.0 / (1.0 + std::exp(-10.0))).epsilon(1e-15));
  CHECK(steep_sigmoid(Tensor::scalar(1.0), 10.0).item() == doctest::Approx(0.9999546).epsilon(1e-7));
  const Tensor x = Tensor::from_values({4}, {-0.3, -1e-3, 2e-3, 0.7});
  const Tensor h = heaviside(x);
  const Tensor s = steep_sigmoid(x, 1e9);
  for (int i = 0; i < 4; ++i) CHECK(s.values()[i] == doctest::Approx(h.values()[i]));
  CHECK_THROWS_AS(steep_sigmoid(x, 0.0), std::invalid_argument);

  Tensor y = random_tensor({5}, 16);
  CHECK(refcheck::gradient_check([](const std::vector<Tensor>& in) { return sum(steep_sigmoid(in[0], 3.0)); }, {y}) <
        1e-6);
}

TEST_CASE("heaviside at zero and above") {
  CHECK(heaviside(Tensor::scalar(0.0)).item() == 0.0);
  CHECK(heaviside(Tensor::scalar(0.3)).item() == 1.0);
  const Tensor x = random_tensor({3, 4, 5}, 17, false);
  const Tensor h = heaviside(x);
  const Tensor s = steep_sigmoid(x, 10.0);
  for (int64_t i = 0; i < x.numel(); ++i) CHECK(h.values()[size_t(i)] == (s.values()[size_t(i)] > 0.5 ? 1.0 : 0.0));
}

TEST_CASE("reduce sum and mean") {
  CHECK(sum(Tensor::full({2, 2, 2}, 1.0)).item() == 8.0);
  CHECK(mean(Tensor::full({3, 5}, 0.7)).item() == doctest::Approx(0.7));
  Tensor x = random_tensor({2, 3}, 18);
  const auto f = [](const std::vector<Tensor>& in) { return add(sum(mul(in[0], in[0])), mean(in[0])); };
  CHECK(refcheck::gradient_check(f, {x}) < 1e-6);
}

TEST_CASE("dense identity and bias-only cases") {
  const Tensor x = random_tensor({3}, 19, false);
  Tensor eye = Tensor::zeros({3, 3});
  for (int i = 0; i < 3; ++i) eye.mutable_values()[size_t(i * 4)] = 1.0;
  CHECK(vec(dense(x, eye, Tensor::zeros({3}))) == vec(x));
  const Tensor b = random_tensor({2}, 20, false);
  CHECK(vec(dense(x, Tensor::zeros({2, 3}), b)) == vec(b));
  CHECK_THROWS_AS(dense(x, Tensor::zeros({2, 4}), b), ShapeError);

  Tensor xi = random_tensor({4}, 21);
  Tensor w = random_tensor({3, 4}, 22);
  Tensor bi = random_tensor({3}, 23);
  const auto f = [](const std::vector<Tensor>& in) {
    const Tensor y = dense(in[0], in[1], in[2]);
    return sum(mul(y, y));
  };
  CHECK(refcheck::gradient_check(f, {xi, w, bi}) < 1e-6);
}

TEST_CASE("concat, pad and global pooling gradients") {
  Tensor a = random_tensor({1, 2, 3, 2}, 24);
  Tensor b = random_tensor({2, 2, 3, 2}, 25);
  const auto f = [](const std::vector<Tensor>& in) {
    const Tensor c = concat_channels(in[0], in[1]);
    const Tensor p = pad_spatial(c, {1, 0, 2}, {0, 3, 1});
    const Tensor g = global_average_pool(mul(p, p));
    return sum(mul(g, g));
  };
  CHECK(refcheck::gradient_check(f, {a, b}) < 1e-6);
  CHECK(pad_spatial(a, {1, 0, 2}, {0, 3, 1}).shape() == Shape{1, 3, 6, 5});
}

TEST_CASE("unreachable tensors get no gradient") {
  Tensor x = random_tensor({3}, 26);
  Tensor unused = random_tensor({3}, 27);
  unused.zero_grad();
  backward_of([&] { return sum(x); }, x);
  CHECK(std::all_of(x.grad().begin(), x.grad().end(), [](double g) { return g == 1.0; }));
  CHECK((!unused.has_grad() || std::all_of(unused.grad().begin(), unused.grad().end(), [](double g) { return g == 0.0; })));
}

TEST_CASE("no recording outside a tape scope") {
  Tensor x = random_tensor({3}, 28);
  Tape tape;
  sum(x);
  CHECK(tape.size() == 0);
  {
    TapeScope scope(tape);
    sum(x);
  }
  CHECK(tape.size() > 0);
}

TEST_CASE("adam zero gradient leaves parameters and advances the step") {
  std::vector<NamedTensor> params{{"p", random_tensor({4}, 29)}};
  const auto before = vec(params[0].tensor);
  for (double& g : params[0].tensor.grad_buffer()) g = 0.0;
  AdamState state;
  adam_step(params, state, AdamConfig{});
  CHECK(state.step == 1);
  CHECK(vec(params[0].tensor) == before);
}

TEST_CASE("adam first step moves by lr against a constant gradient") {
  std::vector<NamedTensor> params{{"p", Tensor::from_values({3}, {1.0, -2.0, 0.5}, true)}};
  const std::vector<double> g{0.3, -4.0, 1e-2};
  auto buf = params[0].tensor.grad_buffer();
  std::copy(g.begin(), g.end(), buf.begin());
  AdamConfig cfg;
  cfg.lr = 1e-3;
  AdamState state;
  adam_step(params, state, cfg);
  const std::vector<double> start{1.0, -2.0, 0.5};
  for (size_t i = 0; i < 3; ++i) {
    // m_hat = g, v_hat = g^2 after one bias-corrected step.
    const double expected = start[i] - cfg.lr * g[i] / (std::abs(g[i]) + cfg.eps);
    CHECK(params[0].tensor.values()[i] == doctest::Approx(expected).epsilon(1e-14));
    CHECK(std::abs(params[0].tensor.values()[i] - start[i]) == doctest::Approx(cfg.lr).epsilon(1e-5));
  }
}

TEST_CASE("adam requires gradients and is deterministic") {
  std::vector<NamedTensor> missing{{"p", random_tensor({2}, 30)}};
  missing[0].tensor.zero_grad();
  AdamState s0;
  CHECK_THROWS(adam_step(missing, s0, AdamConfig{}));

  auto run = [] {
    std::vector<NamedTensor> params{{"p", random_tensor({5}, 31)}};
    AdamState state;
    for (int it = 0; it < 7; ++it) {
      Tensor& p = params[0].tensor;
      p.zero_grad();
      Tape tape;
      Tensor loss;
      {
        TapeScope scope(tape);
        loss = sum(mul(p, mul(p, p)));
      }
      tape.backward(loss);
      adam_step(params, state, AdamConfig{1e-2});
    }
    return vec(params[0].tensor);
  };
  CHECK(run() == run());
}

TEST_CASE("checkpoint round-trips bit-exactly") {
  const auto dir = std::filesystem::temp_directory_path() / "ernet_test_ckpt";
  std::filesystem::create_directories(dir);
  std::vector<NamedTensor> tensors{{"a", random_tensor({2, 3}, 32, false)}, {"b.c", random_tensor({7}, 33, false)}};
  tensors[0].tensor.mutable_values()[0] = -0.0;
  tensors[1].tensor.mutable_values()[3] = 1e-310;
  nlohmann::json meta = {{"iteration", 12}, {"note", "x"}};
  write_checkpoint(dir / "t.ckpt", tensors, meta);
  const Checkpoint back = read_checkpoint(dir / "t.ckpt");
  REQUIRE(back.tensors.size() == 2);
  for (size_t i = 0; i < 2; ++i) {
    CHECK(back.tensors[i].name == tensors[i].name);
    CHECK(back.tensors[i].tensor.shape() == tensors[i].tensor.shape());
    CHECK(std::memcmp(back.tensors[i].tensor.values().data(), tensors[i].tensor.values().data(),
                      sizeof(double) * size_t(tensors[i].tensor.numel())) == 0);
  }
  CHECK(back.meta == meta);
  CHECK(back.find("b.c") != nullptr);
  CHECK(back.find("zz") == nullptr);

  std::vector<NamedTensor> wrong{{"a", Tensor::zeros({3, 2})}};
  CHECK_THROWS_AS(load_parameters(wrong, back), CheckpointError);

  std::ofstream(dir / "bad.ckpt") << "NOPE";
  CHECK_THROWS_AS(read_checkpoint(dir / "bad.ckpt"), CheckpointError);
  std::filesystem::remove_all(dir);
}
