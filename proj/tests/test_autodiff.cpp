#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <sstream>

#include "idrt/blob.hpp"
#include "idrt/gradcheck.hpp"
#include "idrt/ops.hpp"
#include "idrt/rng.hpp"
#include "idrt/tensor.hpp"

using namespace idrt;

namespace {

// independent naive 6-loop convolution oracle, written without the kernel layer
std::vector<double> naive_conv(const std::vector<double>& in, long n, long cin,
                               long h, long w, const std::vector<double>& ker,
                               long cout, long k, const std::vector<double>& bias,
                               long stride, long pad) {
  long ho = (h + 2 * pad - k) / stride + 1;
  long wo = (w + 2 * pad - k) / stride + 1;
  std::vector<double> out(n * cout * ho * wo, 0.0);
  for (long b = 0; b < n; ++b)
    for (long co = 0; co < cout; ++co)
      for (long oy = 0; oy < ho; ++oy)
        for (long ox = 0; ox < wo; ++ox) {
          double acc = bias[co];
          for (long ci = 0; ci < cin; ++ci)
            for (long ky = 0; ky < k; ++ky)
              for (long kx = 0; kx < k; ++kx) {
                long iy = oy * stride + ky - pad;
                long ix = ox * stride + kx - pad;
                if (iy < 0 || iy >= h || ix < 0 || ix >= w) continue;
                acc += in[((b * cin + ci) * h + iy) * w + ix] *
                       ker[((co * cin + ci) * k + ky) * k + kx];
              }
          out[((b * cout + co) * ho + oy) * wo + ox] = acc;
        }
  return out;
}

}  // namespace

TEST_CASE("conv2d pointwise scaling") {
  Tensor in({1, 1, 3, 3}, std::vector<double>(9, 1.0));
  Tensor ker({1, 1, 1, 1}, {2.0});
  Tensor bias({1}, {0.0});
  Tensor out = conv2d(in, ker, bias, 1, 0);
  CHECK(out.shape() == Shape{1, 1, 3, 3});
  for (double v : out.data()) CHECK(v == doctest::Approx(2.0));
}

TEST_CASE("conv2d identity kernel") {
  Rng rng(5);
  Tensor in = uniform_tensor({2, 1, 5, 5}, rng, -1, 1);
  std::vector<double> kd(9, 0.0);
  kd[4] = 1.0;
  Tensor ker({1, 1, 3, 3}, kd);
  Tensor bias({1}, {0.0});
  Tensor out = conv2d(in, ker, bias, 1, 1);
  for (size_t i = 0; i < in.data().size(); ++i)
    CHECK(out.data()[i] == doctest::Approx(in.data()[i]).epsilon(1e-15));
}

TEST_CASE("conv2d matches naive 6-loop oracle") {
  Rng rng(7);
  Tensor in = uniform_tensor({2, 3, 8, 8}, rng, -1, 1);
  Tensor ker = uniform_tensor({4, 3, 3, 3}, rng, -1, 1);
  Tensor bias = uniform_tensor({4}, rng, -1, 1);
  for (long pad : {0L, 1L}) {
    Tensor out = conv2d(in, ker, bias, 1, pad);
    auto want = naive_conv(in.data(), 2, 3, 8, 8, ker.data(), 4, 3, bias.data(), 1, pad);
    REQUIRE(out.data().size() == want.size());
    for (size_t i = 0; i < want.size(); ++i)
      CHECK(std::abs(out.data()[i] - want[i]) <= 1e-12);
  }
}

TEST_CASE("conv2d rejects channel mismatch with both shapes named") {
  Tensor in({1, 2, 4, 4});
  Tensor ker({1, 3, 3, 3});
  Tensor bias({1});
  try {
    conv2d(in, ker, bias, 1, 1);
    FAIL("expected rejection");
  } catch (const std::invalid_argument& e) {
    std::string msg = e.what();
    CHECK(msg.find("[1,2,4,4]") != std::string::npos);
    CHECK(msg.find("[1,3,3,3]") != std::string::npos);
  }
}

TEST_CASE("conv2d linearity in the input") {
  Rng rng(9);
  Tensor x = uniform_tensor({1, 2, 6, 6}, rng, -1, 1);
  Tensor y = uniform_tensor({1, 2, 6, 6}, rng, -1, 1);
  Tensor ker = uniform_tensor({3, 2, 3, 3}, rng, -1, 1);
  Tensor zbias({3}, 0.0);
  double a = 0.7, b = -1.3;
  Tensor mixed = add(scalar_mul(x, a), scalar_mul(y, b));
  Tensor lhs = conv2d(mixed, ker, zbias, 1, 1);
  Tensor rhs = add(scalar_mul(conv2d(x, ker, zbias, 1, 1), a),
                   scalar_mul(conv2d(y, ker, zbias, 1, 1), b));
  for (size_t i = 0; i < lhs.data().size(); ++i)
    CHECK(std::abs(lhs.data()[i] - rhs.data()[i]) <= 1e-10);
}

TEST_CASE("softmax symmetry and row sums") {
  Tensor x({4}, {0.0, 0.0, 0.0, 0.0});
  Tensor y = softmax(x);
  for (double v : y.data()) CHECK(v == doctest::Approx(0.25));

  Rng rng(21);
  Tensor z = uniform_tensor({5, 7}, rng, -3, 3);
  Tensor s = softmax(z);
  for (long r = 0; r < 5; ++r) {
    double total = 0.0;
    for (long i = 0; i < 7; ++i) total += s.data()[r * 7 + i];
    CHECK(std::abs(total - 1.0) <= 1e-12);
  }
}

TEST_CASE("mean and l2_norm basics") {
  Tensor x({2, 2}, {1, 2, 3, 4});
  CHECK(mean(x).item() == doctest::Approx(2.5));
  Tensor v({2}, {3, 4});
  CHECK(l2_norm(v).item() == doctest::Approx(5.0));
}

TEST_CASE("backward of sum is all ones") {
  Rng rng(3);
  Tensor x = uniform_tensor({3, 4}, rng, -1, 1, true);
  Tensor loss = sum(x);
  backward(loss);
  for (double g : x.grad()) CHECK(g == doctest::Approx(1.0));
}

TEST_CASE("backward of mean(square(x))") {
  Tensor x({2}, {1.0, 2.0});
  x.set_requires_grad();
  backward(mean(square(x)));
  CHECK(x.grad()[0] == doctest::Approx(1.0));
  CHECK(x.grad()[1] == doctest::Approx(2.0));
}

TEST_CASE("backward called twice is rejected") {
  Tensor x({2}, {1.0, 2.0});
  x.set_requires_grad();
  Tensor loss = sum(x);
  backward(loss);
  CHECK_THROWS_AS(backward(loss), std::logic_error);
}

TEST_CASE("finite differences per primitive") {
  Rng rng(31);
  auto check = [&](const std::string& name, const std::function<Tensor()>& fwd,
                   const std::vector<Tensor>& leaves) {
    auto rep = gradcheck(name, fwd, leaves, 120, 1e-5, 77);
    CAPTURE(name);
    CHECK(rep.max_rel_err <= 1e-4);
  };

  {
    Tensor in = uniform_tensor({2, 2, 6, 6}, rng, -1, 1, true);
    Tensor ker = uniform_tensor({3, 2, 3, 3}, rng, -1, 1, true);
    Tensor bias = uniform_tensor({3}, rng, -1, 1, true);
    check("conv2d", [&] { return mean(square(conv2d(in, ker, bias, 1, 1))); },
          {in, ker, bias});
  }
  {
    Tensor a = uniform_tensor({3, 5}, rng, -1, 1, true);
    Tensor b = uniform_tensor({3, 5}, rng, -1, 1, true);
    check("elementwise", [&] {
      Tensor t = mul(add(a, b), sub(a, b));
      return mean(square(add_scalar(scalar_mul(t, 0.5), 0.25)));
    }, {a, b});
  }
  {
    Tensor a = uniform_tensor({40}, rng, 0.1, 2.0, true);
    check("log_exp_sqrt", [&] {
      return mean(add(log_op(a), add(exp_op(scalar_mul(a, -1.0)), sqrt_op(a))));
    }, {a});
  }
  {
    Tensor a = uniform_tensor({50}, rng, -1, 1, true);
    check("leaky_relu", [&] { return mean(square(leaky_relu(a, 0.1))); }, {a});
    check("sigmoid", [&] { return mean(square(sigmoid(a))); }, {a});
  }
  {
    Tensor a = uniform_tensor({4, 6}, rng, -2, 2, true);
    check("softmax", [&] { return mean(square(softmax(a))); }, {a});
  }
  {
    Tensor a = uniform_tensor({4, 6}, rng, -2, 2, true);
    check("l2_norm+div_rows", [&] {
      Tensor norm = l2_norm(a);
      return mean(square(div_rows(a, norm)));
    }, {a});
  }
  {
    Tensor x = uniform_tensor({3, 8}, rng, -1, 1, true);
    Tensor w = uniform_tensor({5, 8}, rng, -1, 1, true);
    Tensor b = uniform_tensor({5}, rng, -1, 1, true);
    check("linear", [&] { return mean(square(linear(x, w, b))); }, {x, w, b});
  }
  {
    Tensor a = uniform_tensor({2, 3, 4, 4}, rng, -1, 1, true);
    Tensor b = uniform_tensor({2, 2, 4, 4}, rng, -1, 1, true);
    check("concat_pool_upsample", [&] {
      Tensor c = concat(a, b, 1);
      return mean(square(add(upsample_nearest2(avg_pool2(c)), c)));
    }, {a, b});
  }
  {
    Tensor a = uniform_tensor({2, 3, 4, 4}, rng, -1, 1, true);
    check("spatial_mean+flatten", [&] {
      return add(mean(square(spatial_mean(a))),
                 mean(square(sum_per_sample(flatten_rows(a)))));
    }, {a});
  }
}

TEST_CASE("determinism: identical seeds give bit-identical values and grads") {
  auto run = [] {
    Rng rng(123);
    Tensor in = uniform_tensor({1, 2, 8, 8}, rng, -1, 1, true);
    Tensor ker = uniform_tensor({3, 2, 3, 3}, rng, -1, 1, true);
    Tensor bias = uniform_tensor({3}, rng, -1, 1, true);
    Tensor loss = mean(square(leaky_relu(conv2d(in, ker, bias, 1, 1), 0.1)));
    backward(loss);
    return std::make_tuple(loss.item(), in.grad(), ker.grad());
  };
  auto a = run();
  auto b = run();
  CHECK(std::get<0>(a) == std::get<0>(b));
  CHECK(std::get<1>(a) == std::get<1>(b));
  CHECK(std::get<2>(a) == std::get<2>(b));
}

TEST_CASE("non-finite detection names the producing op") {
  Tensor x({2}, {-1.0, 2.0});
  x.set_requires_grad();
  Tensor bad = log_op(x);  // log of a negative -> nan
  Tensor loss = mean(bad);
  CHECK(find_nonfinite_op(loss) == std::string("log"));
}

TEST_CASE("blob round-trip is bit-exact") {
  Rng rng(55);
  Blob b;
  b.shape = {3, 4, 5};
  b.data.resize(60);
  for (double& x : b.data) x = rng.uniform(-1e6, 1e6);
  std::stringstream ss;
  write_blob(ss, b);
  Blob c = read_blob(ss);
  CHECK(c.shape == b.shape);
  CHECK(c.data == b.data);

  // property: random shapes/values round-trip
  for (int trial = 0; trial < 20; ++trial) {
    Blob r;
    long n = 1;
    long rank = 1 + static_cast<long>(rng.below(4));
    for (long i = 0; i < rank; ++i) {
      long e = 1 + static_cast<long>(rng.below(6));
      r.shape.push_back(e);
      n *= e;
    }
    r.data.resize(n);
    for (double& x : r.data) x = rng.normal() * std::pow(10.0, rng.uniform(-10, 10));
    std::stringstream s2;
    write_blob(s2, r);
    Blob back = read_blob(s2);
    CHECK(back.shape == r.shape);
    CHECK(back.data == r.data);
  }
}

TEST_CASE("no-grad mode records nothing") {
  Tensor x({2}, {1.0, 2.0});
  x.set_requires_grad();
  NoGradGuard ng;
  Tensor y = square(x);
  CHECK_FALSE(y.requires_grad());
  CHECK(y.node->parents.empty());
}
