#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <vector>

#include "idrt/gradcheck.hpp"
#include "idrt/losses.hpp"

using namespace idrt;

namespace {

std::vector<double> random_simplex(long n, Rng& rng) {
  std::vector<double> w(n);
  double s = 0.0;
  for (double& v : w) {
    v = rng.uniform(1e-4, 1.0);
    s += v;
  }
  for (double& v : w) v /= s;
  return w;
}

double res_loss(const std::vector<double>& w, long c, double theta,
                long n, bool ss = false) {
  LossConfig cfg;
  cfg.n = n;
  cfg.theta = theta;
  return resolving_loss(Tensor({n}, std::vector<double>(w)), c, cfg, ss)
      .item();
}

}  // namespace

TEST_CASE("resolving loss matches the hand-computed value 0.4349") {
  std::vector<double> w = {0.9, 0.1 / 3, 0.1 / 3, 0.1 / 3};
  CHECK(res_loss(w, 0, 0.9, 4) == doctest::Approx(0.4349).epsilon(1e-4));
}

TEST_CASE("uniform omega at theta=1/n scores log n, independent of c") {
  std::vector<double> w(4, 0.25);
  for (long c = 0; c < 4; ++c)
    // the 1e-12 floor inside the log shifts the value by a few ulps
    CHECK(res_loss(w, c, 0.9, 4, /*ss=*/true) ==
          doctest::Approx(std::log(4.0)).epsilon(1e-9));
}

TEST_CASE("theta=1 reduces to plain cross entropy") {
  std::vector<double> w = {0.6, 0.25, 0.15};
  CHECK(res_loss(w, 0, 1.0, 3) ==
        doctest::Approx(-std::log(0.6)).epsilon(1e-9));
}

TEST_CASE("analytic minimizer beats 1000 random simplex points") {
  for (double theta : {0.3, 0.5, 0.9, 1.0}) {
    long n = 4;
    std::vector<double> opt(n, (1.0 - theta) / (n - 1));
    opt[2] = theta;
    double best = res_loss(opt, 2, theta, n);
    Rng rng(derive_seed(31, 0x6d696eULL, static_cast<uint64_t>(theta * 10)));
    for (int t = 0; t < 1000; ++t) {
      std::vector<double> w = random_simplex(n, rng);
      CHECK(res_loss(w, 2, theta, n) > best);
    }
  }
}

TEST_CASE("theta=1/n permutation symmetry holds exactly") {
  Rng rng(32);
  long n = 4;
  std::vector<double> w = random_simplex(n, rng);
  double ref = res_loss(w, 0, 0.9, n, /*ss=*/true);
  std::vector<long> perm = {0, 1, 2, 3};
  for (int t = 0; t < 20; ++t) {
    rng.shuffle(perm);
    std::vector<double> pw(n);
    for (long i = 0; i < n; ++i) pw[i] = w[perm[i]];
    long c = static_cast<long>(rng.below(n));
    CHECK(res_loss(pw, c, 0.9, n, /*ss=*/true) == ref);
  }
}

TEST_CASE("resolving loss rejects c out of range and bad theta") {
  LossConfig cfg;
  Tensor w({4}, 0.25);
  CHECK_THROWS(resolving_loss(w, 4, cfg, false));
  LossConfig bad = cfg;
  bad.theta = 0.0;
  CHECK_THROWS(bad.validate());
  bad.theta = 1.5;
  CHECK_THROWS(bad.validate());
}

TEST_CASE("reconstruction loss: sqrt(4) on a 4-entry unit difference") {
  Tensor a({1, 2, 3, 3}, 0.0);
  Tensor b({1, 2, 3, 3}, 0.0);
  auto& d = b.mutable_data();
  d[0] = d[3] = d[7] = d[12] = 1.0;
  CHECK(reconstruction_loss(a, b).item() == doctest::Approx(2.0).epsilon(1e-12));
  CHECK(reconstruction_loss(b, a).item() ==
        reconstruction_loss(a, b).item());  // symmetry
  CHECK(reconstruction_loss(a, a).item() == 0.0);
}

TEST_CASE("reconstruction loss is batch mean of per-sample norms") {
  // batch of 2: sample 0 differs by sqrt(4)=2, sample 1 by 0 -> mean 1
  Tensor a({2, 1, 2, 2}, 0.0);
  Tensor b({2, 1, 2, 2}, 0.0);
  for (long i = 0; i < 4; ++i) b.mutable_data()[i] = 1.0;
  CHECK(reconstruction_loss(a, b).item() == doctest::Approx(1.0).epsilon(1e-12));
  CHECK_THROWS(reconstruction_loss(a, Tensor({2, 1, 2, 3}, 0.0)));
}

TEST_CASE("identity loss hits 0 / 1 / 2 and scale invariance") {
  Tensor u({1, 3}, {1.0, 0.0, 0.0});
  Tensor v({1, 3}, {0.0, 1.0, 0.0});
  Tensor nu({1, 3}, {-1.0, 0.0, 0.0});
  CHECK(identity_loss(u, u).item() == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(identity_loss(u, v).item() == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(identity_loss(u, nu).item() == doctest::Approx(2.0).epsilon(1e-12));
  Tensor su({1, 3}, {7.5, 0.0, 0.0});
  CHECK(identity_loss(su, v).item() ==
        doctest::Approx(identity_loss(u, v).item()).epsilon(1e-12));
  CHECK_THROWS(identity_loss(Tensor({1, 3}, 0.0), v));
}

TEST_CASE("total loss is the weighted sum 11.01 at unit components") {
  // craft inputs whose individual losses are exactly (1, 1, 1):
  //   rec: one sample, single-entry diff of 1 -> norm 1
  //   id: orthogonal unit embeddings -> 1
  //   res: theta=1, omega_c = 1/e -> -log(1/e) = 1
  Tensor r({1, 1, 1, 1}, 0.0);
  Tensor t({1, 1, 1, 1}, 1.0);
  Tensor vr({1, 2}, {1.0, 0.0});
  Tensor vt({1, 2}, {0.0, 1.0});
  double p = std::exp(-1.0);
  double q = 1.0 - p;
  Tensor omega({1, 2}, {p, q});
  LossConfig cfg;
  cfg.n = 2;
  cfg.theta = 1.0;
  LossBreakdown lb = total_loss(r, t, vr, vt, omega, {0}, {0}, cfg);
  CHECK(lb.rec == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(lb.id == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(lb.res == doctest::Approx(1.0).epsilon(1e-9));
  CHECK(lb.total_value == doctest::Approx(11.01).epsilon(1e-10));
  // alpha = gamma = 0 -> pure reconstruction
  LossConfig rec_only = cfg;
  rec_only.alpha = 0.0;
  rec_only.gamma = 0.0;
  CHECK(total_loss(r, t, vr, vt, omega, {0}, {0}, rec_only).total_value ==
        doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("undefined omega drops the resolving term") {
  Rng rng(33);
  Tensor r = uniform_tensor({2, 1, 2, 2}, rng, 0.0, 1.0);
  Tensor t = uniform_tensor({2, 1, 2, 2}, rng, 0.0, 1.0);
  Tensor vr = uniform_tensor({2, 4}, rng, 0.1, 1.0);
  Tensor vt = uniform_tensor({2, 4}, rng, 0.1, 1.0);
  LossConfig cfg;
  cfg.n = 2;
  LossBreakdown lb = total_loss(r, t, vr, vt, Tensor(), {0, 1}, {0, 0}, cfg);
  CHECK(lb.res == 0.0);
  CHECK(lb.total_value ==
        doctest::Approx(lb.rec + cfg.alpha * lb.id).epsilon(1e-12));
}

TEST_CASE("gradient of the total equals the weighted component sum") {
  Rng rng(34);
  Tensor r = uniform_tensor({2, 1, 3, 3}, rng, 0.1, 0.9, true);
  Tensor t = uniform_tensor({2, 1, 3, 3}, rng, 0.1, 0.9);
  Tensor vt = uniform_tensor({2, 9}, rng, 0.2, 1.0);
  LossConfig cfg;
  cfg.n = 2;
  auto grad_of = [&](const std::function<Tensor()>& f) {
    r.zero_grad();
    backward(f());
    return r.grad();
  };
  std::vector<double> g_total = grad_of([&] {
    return total_loss(r, t, flatten_rows(r), vt, Tensor(), {0, 0}, {0, 0}, cfg)
        .total;
  });
  std::vector<double> g_rec = grad_of([&] { return reconstruction_loss(r, t); });
  std::vector<double> g_id =
      grad_of([&] { return identity_loss(flatten_rows(r), vt); });
  for (size_t i = 0; i < g_total.size(); ++i) {
    double expect = g_rec[i] + cfg.alpha * g_id[i];
    double denom = std::max(1e-10, std::abs(expect));
    CHECK(std::abs(g_total[i] - expect) / denom <= 1e-10);
  }
}

TEST_CASE("losses are nonnegative and identity loss bounded by 2") {
  Rng rng(35);
  LossConfig cfg;
  cfg.n = 4;
  for (int t = 0; t < 50; ++t) {
    std::vector<double> w = random_simplex(4, rng);
    CHECK(res_loss(w, static_cast<long>(rng.below(4)), cfg.theta, 4) >= 0.0);
    Tensor a = uniform_tensor({1, 6}, rng, -1.0, 1.0);
    Tensor b = uniform_tensor({1, 6}, rng, -1.0, 1.0);
    double s = 0.0;
    for (double v : a.data()) s += v * v;
    if (s == 0.0) continue;
    double l = identity_loss(a, b).item();
    CHECK(l >= 0.0);
    CHECK(l <= 2.0 + 1e-12);
  }
}
