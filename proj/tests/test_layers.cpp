#include <doctest.h>

#include <cmath>
#include <numbers>

#include "occfeat/adam.hpp"
#include "occfeat/grad_check.hpp"
#include "occfeat/layers.hpp"
#include "occfeat/module_graph.hpp"
#include "test_util.hpp"

using namespace occfeat;
using namespace occfeat::nn;
using testutil::random_tensor;

namespace {

// Direct nested-loop cross-correlation, zero padded.
Tensor conv2d_oracle(const Tensor& x, const Tensor& w, const Tensor& b, int stride) {
  const long c_in = static_cast<long>(x.dim(0)), h = static_cast<long>(x.dim(1)),
             wd = static_cast<long>(x.dim(2));
  const long c_out = static_cast<long>(w.dim(0)), k = static_cast<long>(w.dim(2)), pad = k / 2;
  const long ho = (h + 2 * pad - k) / stride + 1, wo = (wd + 2 * pad - k) / stride + 1;
  Tensor y({static_cast<std::size_t>(c_out), static_cast<std::size_t>(ho), static_cast<std::size_t>(wo)});
  for (long o = 0; o < c_out; ++o)
    for (long r = 0; r < ho; ++r)
      for (long q = 0; q < wo; ++q) {
        double s = b[static_cast<std::size_t>(o)];
        for (long c = 0; c < c_in; ++c)
          for (long ky = 0; ky < k; ++ky)
            for (long kx = 0; kx < k; ++kx) {
              const long iy = r * stride + ky - pad, ix = q * stride + kx - pad;
              if (iy < 0 || iy >= h || ix < 0 || ix >= wd) continue;
              s += w.at(o, c, ky, kx) * x.at(c, iy, ix);
            }
        y.at(o, r, q) = s;
      }
  return y;
}

}  // namespace

TEST_CASE("conv2d 1x1 identity weights reproduce the input") {
  const Tensor x = random_tensor({3, 4, 5}, 1);
  Tensor w({3, 3, 1, 1});
  for (std::size_t c = 0; c < 3; ++c) w.at(c, c, 0, 0) = 1.0;
  CHECK(conv2d(x, w, Tensor({3}), 1) == x);
}

TEST_CASE("conv2d 3x3 ones on a constant field gives 9c inside") {
  const double c = 0.7;
  Tensor x({1, 5, 6}, c);
  Tensor w({1, 1, 3, 3}, 1.0);
  const Tensor y = conv2d(x, w, Tensor({1}), 1);
  REQUIRE(y.dims() == Shape{1, 5, 6});
  CHECK(y.at(0, 2, 3) == doctest::Approx(9 * c).epsilon(1e-15));
  CHECK(y.at(0, 0, 0) == doctest::Approx(4 * c).epsilon(1e-15));  // corner sees 4 cells
}

TEST_CASE("conv2d matches the nested-loop oracle, both strides") {
  for (int stride : {1, 2}) {
    for (int k : {1, 3}) {
      if (k == 1 && stride == 2) continue;
      const Tensor x = random_tensor({3, 7, 6}, 10 + stride);
      const Tensor w = random_tensor({4, 3, static_cast<std::size_t>(k), static_cast<std::size_t>(k)}, 20 + k);
      const Tensor b = random_tensor({4}, 30);
      const Tensor y = conv2d(x, w, b, stride);
      const Tensor want = conv2d_oracle(x, w, b, stride);
      REQUIRE(y.dims() == want.dims());
      CHECK((y - want).max_abs() < 1e-12);
    }
  }
  CHECK(conv2d(Tensor({1, 64, 96}), Tensor({1, 1, 3, 3}), Tensor({1}), 2).dims() == Shape{1, 32, 48});
  CHECK(conv2d(Tensor({1, 5, 5}), Tensor({1, 1, 3, 3}), Tensor({1}), 2).dims() == Shape{1, 3, 3});
}

TEST_CASE("conv2d rejects channel mismatch") {
  CHECK_THROWS_AS(conv2d(Tensor({2, 3, 3}), Tensor({1, 3, 3, 3}), Tensor({1})), std::invalid_argument);
  CHECK_THROWS_AS(conv2d(Tensor({2, 3, 3}), Tensor({1, 2, 2, 2}), Tensor({1})), std::invalid_argument);
  CHECK_THROWS_AS(conv2d(Tensor({2, 3, 3}), Tensor({1, 2, 3, 3}), Tensor({2})), std::invalid_argument);
}

TEST_CASE("conv3d 1x1x1 identity and bias cases") {
  const Tensor x = random_tensor({3, 2, 3, 4}, 4);
  Tensor eye({3, 3});
  for (std::size_t c = 0; c < 3; ++c) eye.at(c, c) = 1.0;
  CHECK(conv3d_1x1x1(x, eye, Tensor({3})) == x);
  const Tensor b({2}, std::vector<double>{0.5, -1.5});
  const Tensor y = conv3d_1x1x1(x, Tensor({2, 3}), b);
  CHECK(y.at(0, 1, 2, 3) == 0.5);
  CHECK(y.at(1, 0, 0, 0) == -1.5);
  CHECK_THROWS_AS(conv3d_1x1x1(x, Tensor({2, 4}), b), std::invalid_argument);
}

TEST_CASE("instance norm: constant channel maps to zeros") {
  const Tensor y = instance_norm2d(Tensor({2, 3, 3}, 4.2));
  CHECK(y.max_abs() == 0.0);
}

TEST_CASE("instance norm: [1,2,3,4] has mean 0 and variance 1") {
  const Tensor y = instance_norm2d(Tensor({1, 2, 2}, std::vector<double>{1, 2, 3, 4}));
  double mean = y.sum() / 4.0, var = 0.0;
  for (double v : y.values()) var += (v - mean) * (v - mean) / 4.0;
  CHECK(std::abs(mean) < 1e-9);
  CHECK(std::abs(var - 1.0) < 1e-9);
}

TEST_CASE("instance norm statistics on random channels") {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const Tensor y = instance_norm2d(random_tensor({3, 4, 5}, seed, 3.0));
    for (std::size_t c = 0; c < 3; ++c) {
      double mean = 0.0, var = 0.0;
      for (std::size_t i = 0; i < 20; ++i) mean += y[c * 20 + i] / 20.0;
      for (std::size_t i = 0; i < 20; ++i) var += std::pow(y[c * 20 + i] - mean, 2) / 20.0;
      CHECK(std::abs(mean) < 1e-9);
      CHECK(std::abs(var - 1.0) < 1e-6);
    }
  }
}

TEST_CASE("activation values and derivatives") {
  CHECK(softplus(0.0) == doctest::Approx(std::numbers::ln2).epsilon(1e-15));
  CHECK(sigmoid(0.0) == 0.5);
  CHECK(sigmoid_grad(0.0) == 0.25);
  CHECK(relu_grad(3.0) == 1.0);
  CHECK(relu_grad(-3.0) == 0.0);
  CHECK(relu(-2.0) == 0.0);
  CHECK(softplus(40.0) == 40.0);
  CHECK(std::abs(softplus(30.5) - std::log1p(std::exp(30.5))) < 1e-12);
  CHECK(softplus(-800.0) >= 0.0);
  CHECK(std::isfinite(softplus(-800.0)));
  CHECK(sigmoid(-800.0) >= 0.0);
  CHECK(sigmoid(800.0) <= 1.0);
  CHECK(softplus_grad(0.0) == 0.5);
}

TEST_CASE("reshape_to_volume layout and inverse") {
  Tensor x({6, 1, 1});
  for (std::size_t i = 0; i < 6; ++i) x[i] = static_cast<double>(i);
  const Tensor v = reshape_to_volume(x, 3);
  REQUIRE(v.dims() == Shape{2, 3, 1, 1});
  CHECK(v.at(0, 2, 0, 0) == 4.0);  // channel 4 with N=2 lands at z=2, c=0
  CHECK(v.at(1, 0, 0, 0) == 1.0);
  const Tensor r = random_tensor({12, 3, 2}, 5);
  CHECK(volume_to_channels(reshape_to_volume(r, 4)) == r);
  CHECK(reshape_to_volume(Tensor({4, 2, 2}), 2).max_abs() == 0.0);
  CHECK_THROWS_AS(reshape_to_volume(Tensor({5, 2, 2}), 2), std::invalid_argument);
}

TEST_CASE("every layer kind passes finite differences over 20 seeds") {
  GradCheckOptions opt;
  opt.tol = 1e-5;
  opt.max_per_param = 0;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    auto run = [&](ModuleGraph g, const Shape& in) {
      Rng rng(seed);
      g.initialize(rng);
      const Tensor x = random_tensor(in, seed + 100);
      Tensor probe = g.forward(x);
      opt.seed = seed;
      const auto r = grad_check(g, x, random_projection_loss(probe.dims(), seed), opt);
      INFO(g.name() << " seed " << seed << " worst " << r.worst << " " << r.max_rel_error);
      CHECK(r.passed);
    };
    ModuleGraph a("conv3"), b("conv3s2"), c("conv1"), d("conv3d"), e("norm"), f("relu"), s("softplus"),
        sg("sigmoid"), rv("reshape");
    a.emplace<Conv2d>(2, 3, 3);
    b.emplace<Conv2d>(2, 3, 3, 2);
    c.emplace<Conv2d>(2, 3, 1);
    d.emplace<Conv3d1x1x1>(2, 3);
    e.emplace<InstanceNorm2d>();
    f.emplace<ReLU>();
    s.emplace<Softplus>();
    sg.emplace<Sigmoid>();
    rv.emplace<ReshapeToVolume>(2);
    run(std::move(a), {2, 4, 4});
    run(std::move(b), {2, 5, 4});
    run(std::move(c), {2, 4, 4});
    run(std::move(d), {2, 2, 3, 3});
    run(std::move(e), {2, 4, 4});
    run(std::move(f), {2, 4, 4});
    run(std::move(s), {2, 4, 4});
    run(std::move(sg), {2, 4, 4});
    run(std::move(rv), {4, 3, 3});
  }
}

TEST_CASE("module graph names parameters and counts them") {
  ModuleGraph g("net");
  g.emplace<Conv2d>(3, 4, 3);
  g.emplace<ReLU>();
  g.emplace<Conv3d1x1x1>(4, 2);
  const auto params = g.parameters();
  REQUIRE(params.size() == 4);
  CHECK(params[0]->name == "net.0.weight");
  CHECK(params[1]->name == "net.0.bias");
  CHECK(params[2]->name == "net.2.weight");
  CHECK(g.parameter_count() == 3 * 4 * 9 + 4 + 4 * 2 + 2);
}

TEST_CASE("initialization is uniform within sqrt(1/fan_in) and seeded") {
  ModuleGraph g("g");
  auto& conv = g.emplace<Conv2d>(4, 5, 3);
  Rng rng(1);
  g.initialize(rng);
  const double bound = std::sqrt(1.0 / 36.0);
  CHECK(conv.weight.value.max_abs() <= bound);
  CHECK(conv.weight.value.max_abs() > 0.5 * bound);
  ModuleGraph h("g");
  auto& conv2 = h.emplace<Conv2d>(4, 5, 3);
  Rng rng2(1);
  h.initialize(rng2);
  CHECK(conv.weight.value == conv2.weight.value);
}

TEST_CASE("backward without forward is a logic error") {
  ModuleGraph g("g");
  g.emplace<ReLU>();
  ModuleGraph::Tape empty;
  CHECK_THROWS_AS(g.backward(Tensor({1}), empty), std::logic_error);
}

TEST_CASE("adam: zero gradient leaves parameters unchanged") {
  Parameter p("p", {4});
  p.value = random_tensor({4}, 3);
  const Tensor before = p.value;
  Adam adam({&p}, {});
  for (int i = 0; i < 5; ++i) adam.step();
  CHECK(p.value == before);
  CHECK(adam.step_count() == 5);
}

TEST_CASE("adam: first step moves each element by about lr") {
  Parameter p("p", {5});
  p.grad = random_tensor({5}, 4);
  Adam adam({&p}, {.lr = 1e-3});
  adam.step();
  for (std::size_t i = 0; i < 5; ++i) {
    CHECK(std::abs(p.value[i]) == doctest::Approx(1e-3).epsilon(1e-4));
    CHECK(p.value[i] * p.grad[i] < 0.0);
  }
}

TEST_CASE("adam: decoupled weight decay scales the value") {
  Parameter p("p", {1});
  p.value[0] = 2.0;
  Adam adam({&p}, {.lr = 0.1, .weight_decay = 0.5});
  adam.step();
  CHECK(p.value[0] == doctest::Approx(2.0 * (1.0 - 0.05)).epsilon(1e-15));
}

TEST_CASE("adam minimizes |w|^2") {
  Parameter p("w", {3});
  p.value.fill(1.0);
  Adam adam({&p}, {.lr = 0.1});
  for (int step = 0; step < 200; ++step) {
    for (std::size_t i = 0; i < 3; ++i) p.grad[i] = 2.0 * p.value[i];
    adam.step();
  }
  CHECK(std::sqrt(dot(p.value, p.value)) < 1e-3);
}

namespace {

// y = w * x with a deliberately doubled weight gradient.
class BrokenScale final : public Layer {
 public:
  BrokenScale() : w("w", {1}) { w.value[0] = 1.3; }
  std::string kind() const override { return "broken_scale"; }
  Tensor forward(const Tensor& x, LayerCache& cache) const override {
    cache.input = x;
    return x * w.value[0];
  }
  Tensor backward(const Tensor& g, const LayerCache& cache) override {
    w.grad[0] += 2.0 * dot(g, cache.input);
    return g * w.value[0];
  }
  std::vector<Parameter*> parameters() override { return {&w}; }
  Parameter w;
};

}  // namespace

TEST_CASE("grad_check: linear model is exact, corrupted backward fails") {
  ModuleGraph lin("lin");
  lin.emplace<Conv3d1x1x1>(3, 2);
  Rng rng(0);
  lin.initialize(rng);
  const Tensor x = random_tensor({3, 1, 2, 2}, 1);
  auto quadratic = [](const Tensor& out, Tensor& grad) {
    grad = out * 2.0;
    return dot(out, out);
  };
  GradCheckOptions opt;
  opt.tol = 1e-10;
  opt.h = 1e-4;
  CHECK(grad_check(lin, x, quadratic, opt).passed);

  ModuleGraph broken("broken");
  broken.emplace<BrokenScale>();
  const auto r = grad_check(broken, x, random_projection_loss(x.dims(), 2));
  CHECK_FALSE(r.passed);
  CHECK(r.worst == "w[0]");
}

TEST_CASE("grad_check: non-finite loss is an error") {
  Parameter p("p", {1});
  Parameter* ptrs[] = {&p};
  CHECK_THROWS_AS(grad_check(ptrs, [] { return std::nan(""); }), std::runtime_error);
}
