#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <vector>

#include "idrt/gradcheck.hpp"
#include "idrt/layers.hpp"
#include "idrt/resolver.hpp"
#include "idrt/retracor.hpp"

using namespace idrt;

namespace {

Tensor simplex_rows(long b, long n, Rng& rng) {
  Tensor w({b, n});
  auto& d = w.mutable_data();
  for (long r = 0; r < b; ++r) {
    double s = 0.0;
    for (long i = 0; i < n; ++i) {
      d[r * n + i] = rng.uniform(0.05, 1.0);
      s += d[r * n + i];
    }
    for (long i = 0; i < n; ++i) d[r * n + i] /= s;
  }
  return w;
}

double max_abs_diff(const std::vector<double>& a, const std::vector<double>& b) {
  double m = 0.0;
  for (size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

}  // namespace

TEST_CASE("recombine with one-hot omega returns the selected group bitwise") {
  Rng rng(101);
  KernelBank bank = KernelBank::init(3, 4, 2, 3, rng);
  for (long c = 0; c < 3; ++c) {
    std::vector<double> oh(3, 0.0);
    oh[c] = 1.0;
    auto [k, b] = recombine(bank, oh);
    long ksz = 4 * 2 * 3 * 3;
    for (long i = 0; i < ksz; ++i)
      CHECK(k.data()[i] == bank.kernels.data()[c * ksz + i]);
    for (long i = 0; i < 4; ++i)
      CHECK(b.data()[i] == bank.biases.data()[c * 4 + i]);
  }
}

TEST_CASE("recombine convexity: identical groups collapse to the group") {
  Rng rng(102);
  KernelBank bank = KernelBank::init(3, 2, 2, 3, rng);
  // overwrite all groups with group 0
  auto& kd = bank.kernels.mutable_data();
  auto& bd = bank.biases.mutable_data();
  long ksz = 2 * 2 * 3 * 3;
  for (long g = 1; g < 3; ++g) {
    for (long i = 0; i < ksz; ++i) kd[g * ksz + i] = kd[i];
    for (long i = 0; i < 2; ++i) bd[g * 2 + i] = bd[i];
  }
  auto [k, b] = recombine(bank, {0.2, 0.5, 0.3});
  for (long i = 0; i < ksz; ++i)
    CHECK(std::abs(k.data()[i] - kd[i]) <= 1e-12);
  for (long i = 0; i < 2; ++i)
    CHECK(std::abs(b.data()[i] - bd[i]) <= 1e-12);
}

TEST_CASE("recombine (0.3,0.7) over constant banks gives 1.7") {
  Rng rng(103);
  KernelBank bank = KernelBank::init(2, 2, 1, 3, rng);
  auto& kd = bank.kernels.mutable_data();
  long ksz = 2 * 1 * 3 * 3;
  for (long i = 0; i < ksz; ++i) {
    kd[i] = 1.0;
    kd[ksz + i] = 2.0;
  }
  auto [k, b] = recombine(bank, {0.3, 0.7});
  for (double v : k.data()) CHECK(v == doctest::Approx(1.7).epsilon(1e-12));
}

TEST_CASE("recombine rejects wrong omega length and off-simplex rows") {
  Rng rng(104);
  KernelBank bank = KernelBank::init(2, 2, 2, 3, rng);
  CHECK_THROWS(recombine(bank, {0.5, 0.25, 0.25}));
  CHECK_THROWS(recombine(bank, {0.7, 0.7}));
  CHECK_THROWS(recombine(bank, {-0.2, 1.2}));
}

TEST_CASE("mapping_aware_conv one-hot rows equal plain conv per group") {
  Rng rng(105);
  Tensor x = uniform_tensor({2, 3, 8, 8}, rng, -1.0, 1.0);
  KernelBank bank = KernelBank::init(2, 4, 3, 3, rng);
  Tensor omega({2, 2}, {1.0, 0.0, 0.0, 1.0});
  Tensor out = mapping_aware_conv(x, bank.kernels, bank.biases, omega, 1, 1);
  long plane = 4 * 8 * 8;
  for (long b = 0; b < 2; ++b) {
    std::vector<double> oh(2, 0.0);
    oh[b] = 1.0;
    auto [k, bias] = recombine(bank, oh);
    Tensor sample({1, 3, 8, 8},
                  std::vector<double>(x.data().begin() + b * 3 * 64,
                                      x.data().begin() + (b + 1) * 3 * 64));
    Tensor ref = conv2d(sample, k, bias, 1, 1);
    for (long i = 0; i < plane; ++i)
      CHECK(std::abs(out.data()[b * plane + i] - ref.data()[i]) <= 1e-12);
  }
}

TEST_CASE("kernel linearity over 100 seeded configurations") {
  // output(sum_i w_i d_i) == sum_i w_i output(d_i) with zero biases
  for (uint64_t s = 0; s < 100; ++s) {
    Rng rng(derive_seed(2024, 0x6c696eULL, s));
    long n = 2 + static_cast<long>(rng.below(3));
    long cin = 1 + static_cast<long>(rng.below(3));
    long cout = 1 + static_cast<long>(rng.below(4));
    long k = (rng.below(2) == 0) ? 1 : 3;
    long size = 6 + 2 * static_cast<long>(rng.below(3));
    Tensor x = uniform_tensor({1, cin, size, size}, rng, -1.0, 1.0);
    KernelBank bank = KernelBank::init(n, cout, cin, k, rng);
    Tensor zero_b({n, cout}, 0.0);
    Tensor omega = simplex_rows(1, n, rng);
    Tensor mixed =
        mapping_aware_conv(x, bank.kernels, zero_b, omega, 1, k / 2);
    std::vector<double> acc(mixed.numel(), 0.0);
    long ksz = cout * cin * k * k;
    for (long i = 0; i < n; ++i) {
      Tensor ki({cout, cin, k, k},
                std::vector<double>(bank.kernels.data().begin() + i * ksz,
                                    bank.kernels.data().begin() + (i + 1) * ksz));
      Tensor oi = conv2d(x, ki, Tensor({cout}, 0.0), 1, k / 2);
      for (long j = 0; j < oi.numel(); ++j)
        acc[j] += omega.data()[i] * oi.data()[j];
    }
    CHECK(max_abs_diff(mixed.data(), acc) <= 1e-10);
  }
}

TEST_CASE("mapping_aware_conv gradient wrt omega matches finite differences") {
  Rng rng(107);
  Tensor x = uniform_tensor({2, 2, 6, 6}, rng, -1.0, 1.0, true);
  KernelBank bank = KernelBank::init(3, 2, 2, 3, rng);
  bank.kernels.set_requires_grad(true);
  bank.biases.set_requires_grad(true);
  Tensor omega = uniform_tensor({2, 3}, rng, 0.1, 0.8, true);
  auto report = gradcheck(
      "maconv",
      [&] {
        return mean(square(mapping_aware_conv(x, bank.kernels, bank.biases,
                                              omega, 1, 1)));
      },
      {x, bank.kernels, bank.biases, omega});
  CHECK(report.max_rel_err <= 1e-4);
}

TEST_CASE("n=1 degenerates to a vanilla convolution") {
  Rng rng(108);
  Tensor x = uniform_tensor({3, 2, 8, 8}, rng, -1.0, 1.0);
  KernelBank bank = KernelBank::init(1, 3, 2, 3, rng);
  Tensor omega({3, 1}, 1.0);
  Tensor a = mapping_aware_conv(x, bank.kernels, bank.biases, omega, 1, 1);
  Tensor k({3, 2, 3, 3}, std::vector<double>(bank.kernels.data()));
  Tensor bias({3}, std::vector<double>(bank.biases.data()));
  Tensor b = conv2d(x, k, bias, 1, 1);
  CHECK(max_abs_diff(a.data(), b.data()) <= 1e-12);
}

TEST_CASE("simplex violations rejected at the layer boundary") {
  Rng rng(109);
  MappingAwareConvLayer layer = MappingAwareConvLayer::init(2, 4, 3, 3, 1, rng);
  Tensor x = uniform_tensor({1, 3, 8, 8}, rng, -1.0, 1.0);
  CHECK_THROWS(layer.forward(x, Tensor({1, 2}, {0.6, 0.6})));
  CHECK_THROWS(layer.forward(x, Tensor({1, 2}, {1.3, -0.3})));
  CHECK_NOTHROW(layer.forward(x, Tensor({1, 2}, {0.4, 0.6})));
}

TEST_CASE("down/up block shape laws") {
  Rng rng(110);
  DownBlock down = DownBlock::init(2, 8, 3, rng);
  UpBlock up = UpBlock::init(2, 4, 8 + 8, rng);
  for (long size : {8L, 12L, 16L}) {
    Tensor x = uniform_tensor({2, 3, size, size}, rng, 0.0, 1.0);
    Tensor omega = simplex_rows(2, 2, rng);
    auto [pooled, skip] = down.forward(x, omega);
    CHECK(pooled.shape() == Shape{2, 8, size / 2, size / 2});
    CHECK(skip.shape() == Shape{2, 8, size, size});
    Tensor back = up.forward(pooled, skip, omega);
    CHECK(back.shape() == Shape{2, 4, size, size});
  }
}

TEST_CASE("up block rejects mismatched skip shapes") {
  Rng rng(111);
  UpBlock up = UpBlock::init(2, 4, 8 + 8, rng);
  Tensor x = uniform_tensor({1, 8, 4, 4}, rng, 0.0, 1.0);
  Tensor bad_skip = uniform_tensor({1, 8, 10, 10}, rng, 0.0, 1.0);
  Tensor omega({1, 2}, {0.5, 0.5});
  CHECK_THROWS(up.forward(x, bad_skip, omega));
}

TEST_CASE("resolver emits simplex rows; zero head gives uniform omega") {
  Rng rng(112);
  ResolverConfig cfg{4, 3, 16, 8};
  Resolver resolver(cfg, rng);
  Tensor x = uniform_tensor({3, 3, 16, 16}, rng, 0.0, 1.0);
  Tensor omega = resolver.resolve(x);
  CHECK(omega.shape() == Shape{3, 4});
  CHECK_NOTHROW(check_simplex(omega));
  // the head is zero-initialized, so an untrained resolver is exactly uniform
  for (double v : omega.data()) CHECK(v == doctest::Approx(0.25).epsilon(1e-12));
}

TEST_CASE("retracor output matches input shape, lies in [0,1], is finite") {
  Rng rng(113);
  RetracorConfig cfg{3, 3, 16, 8};
  Retracor retracor(cfg, rng);
  Tensor x = uniform_tensor({2, 3, 16, 16}, rng, 0.0, 1.0);
  Tensor omega = simplex_rows(2, 3, rng);
  Tensor out = retracor.retrace(x, omega);
  CHECK(out.shape() == x.shape());
  for (double v : out.data()) {
    CHECK(std::isfinite(v));
    CHECK(v >= 0.0);
    CHECK(v <= 1.0);
  }
}

TEST_CASE("forward_full is deterministic and forwards its own omega") {
  Rng rng1(114), rng2(114);
  ResolverConfig sc{2, 3, 16, 8};
  RetracorConfig rc{2, 3, 16, 8};
  Resolver r1(sc, rng1);
  Retracor n1(rc, rng1);
  Resolver r2(sc, rng2);
  Retracor n2(rc, rng2);
  Rng data(115);
  Tensor x = uniform_tensor({2, 3, 16, 16}, data, 0.0, 1.0);
  ForwardFull a = forward_full(x, r1, n1);
  ForwardFull b = forward_full(x, r2, n2);
  CHECK(a.omega.data() == b.omega.data());
  CHECK(a.retraced.data() == b.retraced.data());
  Tensor direct = n1.retrace(x, a.omega);
  CHECK(direct.data() == a.retraced.data());
}
