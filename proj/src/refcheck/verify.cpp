#include <chrono>
#include <cmath>

#include "ernet/geometry.hpp"
#include "ernet/objective.hpp"
#include "ernet/ops.hpp"
#include "ernet/phantom.hpp"
#include "ernet/pipeline.hpp"
#include "ernet/refcheck.hpp"

namespace ernet::refcheck {

namespace {

std::vector<double> gradient_errors(const std::function<Tensor(const std::vector<Tensor>&)>& f,
                                    const std::vector<Tensor>& inputs, double h, int64_t max_entries, uint64_t seed) {
  for (auto t : inputs) t.zero_grad();
  Tape tape;
  Tensor out;
  {
    TapeScope scope(tape);
    out = f(inputs);
  }
  if (out.numel() != 1) throw ShapeError("gradient_check: function must return a scalar");
  if (out.requires_grad()) tape.backward(out);
  std::vector<std::vector<double>> analytic;
  for (const auto& t : inputs) {
    analytic.push_back(t.has_grad() ? std::vector<double>(t.grad().begin(), t.grad().end())
                                    : std::vector<double>(static_cast<size_t>(t.numel()), 0.0));
  }
  tape.clear();

  Rng rng(seed);
  std::vector<double> errors;
  for (size_t i = 0; i < inputs.size(); ++i) {
    Tensor t = inputs[i];
    auto vals = t.mutable_values();
    std::vector<size_t> entries;
    if (max_entries <= 0 || max_entries >= t.numel()) {
      for (size_t j = 0; j < vals.size(); ++j) entries.push_back(j);
    } else {
      for (int64_t e = 0; e < max_entries; ++e) entries.push_back(rng.index(vals.size()));
    }
    std::vector<double> a, fd;
    for (size_t j : entries) {
      const double v = vals[j];
      vals[j] = v + h;
      const double fp = f(inputs).item();
      vals[j] = v - h;
      const double fm = f(inputs).item();
      vals[j] = v;
      fd.push_back((fp - fm) / (2.0 * h));
      a.push_back(analytic[i][j]);
    }
    errors.push_back(relative_error(a, fd, 1e-8));
  }
  return errors;
}

Tensor random_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0, bool grad = true) {
  Tensor t = Tensor::zeros(std::move(shape), grad);
  for (double& v : t.mutable_values()) v = rng.uniform(lo, hi);
  return t;
}

std::vector<double> to_vec(const Tensor& t) { return {t.values().begin(), t.values().end()}; }

Dims3 random_dims(Rng& rng, int64_t lo, int64_t hi) {
  auto pick = [&] { return lo + static_cast<int64_t>(rng.index(static_cast<uint64_t>(hi - lo + 1))); };
  const int64_t x = pick(), y = pick(), z = pick();
  return {x, y, z};
}

std::array<double, 12> random_affine12(Rng& rng, double spread) {
  std::array<double, 12> a{1, 0, 0, 0, 0, 1, 0, 0, 0, 0, 1, 0};
  for (double& v : a) v += rng.uniform(-spread, spread);
  return a;
}

// Smooth random volume: a few random Gaussian bumps.
std::vector<double> smooth_volume(Dims3 d, Rng& rng) {
  std::vector<double> v(static_cast<size_t>(d.count()), 0.0);
  for (int b = 0; b < 4; ++b) {
    const double cx = rng.uniform(0, double(d.x - 1)), cy = rng.uniform(0, double(d.y - 1)),
                 cz = rng.uniform(0, double(d.z - 1));
    const double s = rng.uniform(1.5, 3.0), amp = rng.uniform(0.3, 1.0);
    for (int64_t x = 0; x < d.x; ++x)
      for (int64_t y = 0; y < d.y; ++y)
        for (int64_t z = 0; z < d.z; ++z) {
          const double r2 = (x - cx) * (x - cx) + (y - cy) * (y - cy) + (z - cz) * (z - cz);
          v[static_cast<size_t>((x * d.y + y) * d.z + z)] += amp * std::exp(-r2 / (2 * s * s));
        }
  }
  return v;
}

SuiteResult finish(std::string name, int64_t n, double err, double tol) {
  return {std::move(name), n, err, tol, err < tol};
}

}  // namespace

double gradient_check(const std::function<Tensor(const std::vector<Tensor>&)>& f, const std::vector<Tensor>& inputs,
                      double h, int64_t max_entries, uint64_t seed) {
  double worst = 0.0;
  for (double e : gradient_errors(f, inputs, h, max_entries, seed)) worst = std::max(worst, e);
  return worst;
}

Volume block_average(const Volume& v, int64_t factor) {
  const Extents e = v.extents;
  if (e.x % factor || e.y % factor || e.z % factor) throw ShapeError("block_average: extents not divisible by factor");
  Volume out({e.x / factor, e.y / factor, e.z / factor});
  const double n = double(factor * factor * factor);
  for (int64_t x = 0; x < e.x; ++x)
    for (int64_t y = 0; y < e.y; ++y)
      for (int64_t z = 0; z < e.z; ++z) out.at(x / factor, y / factor, z / factor) += v.at(x, y, z) / n;
  return out;
}

ModelGradientReport model_gradient_check(uint64_t seed, int64_t entries_per_tensor, double h) {
  const auto t0 = std::chrono::steady_clock::now();
  ModelConfig c;
  c.extraction_stages = 2;
  c.registration_stages = 2;
  c.extraction_widths = ExtractionWidths::reduced(16);
  c.registration_widths = RegistrationWidths::reduced(16);
  c.registration_widths.hidden = 8;
  c.init_seed = seed;
  ErnetModel model(c);
  Rng rng(seed ^ 0xA5A5A5A5ULL);
  for (double& w : model.extraction().head().weight.mutable_values()) w = 0.5 * rng.normal();
  for (double& w : model.registration().output_layer().weight.mutable_values()) w = 0.02 * rng.normal();
  for (double& w : model.registration().output_layer().bias.mutable_values()) w = 0.02 * rng.normal();
  // Zero biases over the zero padding put pre-activations exactly on the leaky kink.
  for (auto& np : model.parameters())
    if (np.name.ends_with(".bias") && np.name != "extraction.head.bias")
      for (double& b : np.tensor.mutable_values()) b += 0.05 * rng.normal();

  const PhantomSample p = make_phantom(seed, {32, 32, 32}, AugmentationRanges::lpba40());
  const Tensor s = to_tensor(block_average(p.source, 4));
  const Tensor t = to_tensor(block_average(p.target, 4));

  const auto params = model.parameters();
  std::vector<Tensor> inputs;
  for (const auto& np : params) inputs.push_back(np.tensor);
  const auto f = [&](const std::vector<Tensor>&) { return model.forward(s, t, Mode::Train).loss->total_tensor; };
  // A step can cross a leaky or trilinear kink somewhere in the volume; keep the best step per tensor.
  auto errors = gradient_errors(f, inputs, h, entries_per_tensor, seed + 1);
  for (double div : {3.0, 10.0}) {
    const auto finer = gradient_errors(f, inputs, h / div, entries_per_tensor, seed + 1);
    for (size_t i = 0; i < errors.size(); ++i) errors[i] = std::min(errors[i], finer[i]);
  }

  ModelGradientReport r;
  for (size_t i = 0; i < params.size(); ++i) {
    r.per_tensor.emplace_back(params[i].name, errors[i]);
    r.max_error = std::max(r.max_error, errors[i]);
  }
  r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return r;
}

bool VerifyReport::all_passed() const {
  for (const auto& s : suites)
    if (!s.passed) return false;
  return !suites.empty();
}

VerifyReport run_verify(uint64_t seed, int64_t instances) {
  VerifyReport report;
  Rng rng(seed);

  {  // convolution
    double err = 0.0;
    for (int64_t i = 0; i < instances; ++i) {
      const Dims3 d = random_dims(rng, 1, 8);
      const int64_t cin = 1 + int64_t(rng.index(3)), cout = 1 + int64_t(rng.index(3));
      const int64_t k = rng.index(2) ? 3 : 1;
      const int64_t stride = rng.index(2) ? 2 : 1;
      const int64_t pad = (k - 1) / 2;
      const Tensor x = random_tensor({cin, d.x, d.y, d.z}, rng, -1, 1, false);
      const Tensor w = random_tensor({cout, cin, k, k, k}, rng, -1, 1, false);
      const Tensor b = random_tensor({cout}, rng, -1, 1, false);
      const Tensor y = conv3d(x, w, b, stride, pad);
      err = std::max(err, max_abs_diff(to_vec(y), naive_conv(cin, cout, k, stride, pad, d, to_vec(x), to_vec(w), to_vec(b))));
    }
    report.suites.push_back(finish("conv3d vs naive loops", instances, err, 1e-10));
  }
  {  // warp
    double err = 0.0;
    for (int64_t i = 0; i < instances; ++i) {
      const Dims3 d = random_dims(rng, 1, 8);
      std::vector<double> src(static_cast<size_t>(d.count()));
      for (double& v : src) v = rng.uniform();
      const auto a = random_affine12(rng, 0.3);
      const Tensor out = warp(Tensor::from_values({1, d.x, d.y, d.z}, src), to_tensor(AffineTransform(a)),
                              CoordinateFrame{d});
      err = std::max(err, max_abs_diff(to_vec(out), naive_warp(d, src, a)));
    }
    report.suites.push_back(finish("warp vs full-grid trilinear sum", instances, err, 1e-10));
  }
  {  // NCC
    double err = 0.0;
    const int64_t windows[5] = {1, 3, 5, 7, 9};
    for (int64_t i = 0; i < instances; ++i) {
      const Dims3 d = random_dims(rng, 2, 8);
      const int64_t w = windows[rng.index(5)];
      std::vector<double> a(static_cast<size_t>(d.count())), b(a.size());
      for (size_t j = 0; j < a.size(); ++j) {
        a[j] = rng.uniform();
        b[j] = 0.5 * a[j] + 0.5 * rng.uniform();
      }
      const double fast = ncc_loss(Tensor::from_values({1, d.x, d.y, d.z}, a), Tensor::from_values({1, d.x, d.y, d.z}, b), w).item();
      err = std::max(err, std::abs(fast - naive_ncc(d, w, kNccEps, a, b)));
    }
    report.suites.push_back(finish("ncc vs explicit windows", instances, err, 1e-10));
  }
  {  // smoothness
    double err = 0.0;
    for (int64_t i = 0; i < instances; ++i) {
      const Dims3 d = random_dims(rng, 1, 8);
      std::vector<double> m(static_cast<size_t>(d.count()));
      for (double& v : m) v = rng.uniform();
      const double fast = mask_smoothness(Tensor::from_values({1, d.x, d.y, d.z}, m)).item();
      err = std::max(err, std::abs(fast - naive_smoothness(d, m)));
    }
    report.suites.push_back(finish("mask smoothness vs naive loops", instances, err, 1e-10));
  }
  {  // label warp, Dice, components
    int64_t mismatches = 0;
    double dice_err = 0.0;
    for (int64_t i = 0; i < instances; ++i) {
      const Dims3 d = random_dims(rng, 2, 8);
      LabelVolume lab(d);
      for (auto& l : lab.labels) l = static_cast<int32_t>(rng.index(3));
      const auto a = random_affine12(rng, 0.3);
      const LabelVolume fast = warp_labels(lab, AffineTransform(a), CoordinateFrame{d});
      if (fast.labels != naive_warp_labels(d, lab.labels, a)) ++mismatches;
      dice_err = std::max(dice_err, std::abs(label_dice(fast, lab).mean - brute_label_dice(fast.labels, lab.labels)));

      Volume ma(d), mb(d);
      for (double& v : ma.values) v = rng.uniform() < 0.4 ? 1.0 : 0.0;
      for (double& v : mb.values) v = rng.uniform() < 0.4 ? 1.0 : 0.0;
      dice_err = std::max(dice_err, std::abs(dice_ext(ma, mb) - brute_dice(ma.values, mb.values)));
      if (count_components(ma) != union_find_components(d, ma.values)) ++mismatches;
    }
    report.suites.push_back(finish("label warp and component count vs oracles (mismatches)", instances,
                                   double(mismatches), 0.5));
    report.suites.push_back(finish("dice vs set enumeration", instances, dice_err, 1e-12));
  }
  {  // composition
    double err = 0.0;
    for (int64_t i = 0; i < instances; ++i) {
      const auto a1 = random_affine12(rng, 0.5), a2 = random_affine12(rng, 0.5);
      const std::array<double, 3> p{rng.uniform(-2, 2), rng.uniform(-2, 2), rng.uniform(-2, 2)};
      const Vec3 fast = compose(AffineTransform(a1), AffineTransform(a2)).map_point(p);
      const auto ref = naive_map_point(a2, naive_map_point(a1, p));
      for (size_t k = 0; k < 3; ++k) err = std::max(err, std::abs(fast[k] - ref[k]));
    }
    report.suites.push_back(finish("compose vs pointwise mapping", instances, err, 1e-12));
  }

  // Finite-difference gradient checks, a few instances per op.
  const int64_t g = std::max<int64_t>(1, instances / 10);
  auto grad_suite = [&](const std::string& name, double tol, const std::function<double(uint64_t)>& one) {
    double err = 0.0;
    for (int64_t i = 0; i < g; ++i) err = std::max(err, one(seed * 1000 + static_cast<uint64_t>(i)));
    report.suites.push_back(finish("gradient: " + name, g, err, tol));
  };
  grad_suite("elementwise mul/add/sub/max", 1e-5, [&](uint64_t s) {
    Rng r(s);
    std::vector<Tensor> in{random_tensor({2, 3, 4}, r), random_tensor({2, 3, 4}, r)};
    return gradient_check([](const std::vector<Tensor>& v) {
      return sum(mul(maximum(add(v[0], v[1]), sub(v[0], v[1])), v[1]));
    }, in);
  });
  grad_suite("reduce mean, leaky relu, steep sigmoid", 1e-5, [&](uint64_t s) {
    Rng r(s);
    std::vector<Tensor> in{random_tensor({1, 3, 3, 3}, r)};
    return gradient_check([](const std::vector<Tensor>& v) { return mean(steep_sigmoid(leaky_relu(v[0]), 3.0)); }, in);
  });
  grad_suite("conv3d (input, kernel, bias; stride 1 and 2)", 1e-5, [&](uint64_t s) {
    Rng r(s);
    std::vector<Tensor> in{random_tensor({2, 5, 4, 5}, r), random_tensor({3, 2, 3, 3, 3}, r), random_tensor({3}, r),
                           random_tensor({1, 3, 3, 3, 3}, r)};
    return gradient_check([](const std::vector<Tensor>& v) {
      const Tensor y = conv3d(v[0], v[1], v[2], 1, 1);
      return sum(mul(conv3d(y, v[3], Tensor(), 2, 1), conv3d(y, v[3], Tensor(), 2, 1)));
    }, in);
  });
  grad_suite("upsample, concat, pad, global pooling, dense", 1e-5, [&](uint64_t s) {
    Rng r(s);
    std::vector<Tensor> in{random_tensor({1, 2, 2, 2}, r), random_tensor({1, 4, 4, 4}, r), random_tensor({3, 2}, r),
                           random_tensor({3}, r)};
    return gradient_check([](const std::vector<Tensor>& v) {
      const Tensor c = concat_channels(upsample_nearest2x(v[0]), v[1]);
      const Tensor p = pad_spatial(mul(c, c), {1, 0, 2}, {0, 1, 1});
      const Tensor y = dense(global_average_pool(p), v[2], v[3]);
      return sum(mul(y, y));
    }, in);
  });
  grad_suite("warp (source and affine entries)", 1e-4, [&](uint64_t s) {
    Rng r(s);
    const Dims3 d{6, 6, 6};
    Tensor src = Tensor::from_values({1, 6, 6, 6}, smooth_volume(d, r), true);
    const auto a12 = random_affine12(r, 0.1);
    Tensor a = Tensor::from_values({12}, std::vector<double>(a12.begin(), a12.end()), true);
    Tensor wgt = random_tensor({1, 6, 6, 6}, r, 0, 1, false);
    return gradient_check([&](const std::vector<Tensor>& v) { return sum(mul(warp(v[0], v[1], CoordinateFrame{d}), wgt)); },
                          {src, a}, 1e-6);
  });
  grad_suite("compose", 1e-5, [&](uint64_t s) {
    Rng r(s);
    std::vector<Tensor> in{random_tensor({12}, r), random_tensor({12}, r)};
    Tensor wgt = random_tensor({12}, r, -1, 1, false);
    return gradient_check([&](const std::vector<Tensor>& v) { return sum(mul(compose(v[0], v[1]), wgt)); }, in);
  });
  grad_suite("ncc loss (both inputs)", 1e-5, [&](uint64_t s) {
    Rng r(s);
    std::vector<Tensor> in{random_tensor({1, 5, 6, 4}, r, 0, 1), random_tensor({1, 5, 6, 4}, r, 0, 1)};
    return gradient_check([](const std::vector<Tensor>& v) { return ncc_loss(v[0], v[1], 3); }, in);
  });
  grad_suite("mask smoothness", 1e-5, [&](uint64_t s) {
    Rng r(s);
    std::vector<Tensor> in{random_tensor({1, 4, 5, 3}, r, 0, 1)};
    return gradient_check([](const std::vector<Tensor>& v) { return mask_smoothness(v[0]); }, in);
  });
  {
    const ModelGradientReport m = model_gradient_check(seed);
    report.suites.push_back(finish("gradient: total loss, every parameter tensor (8^3, M=N=2)",
                                   static_cast<int64_t>(m.per_tensor.size()), m.max_error, 1e-3));
  }
  return report;
}

}  // namespace ernet::refcheck
