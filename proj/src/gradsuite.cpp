#include "idrt/gradsuite.hpp"

#include <cmath>

#include "idrt/losses.hpp"
#include "idrt/ops.hpp"
#include "idrt/resolver.hpp"
#include "idrt/retracor.hpp"

namespace idrt {

namespace {

// uniform values bounded away from zero (keeps FD off the leaky_relu kink)
Tensor away_from_zero(Shape shape, Rng& rng) {
  Tensor t(std::move(shape));
  for (double& v : t.mutable_data()) {
    double x = rng.uniform(-1.0, 1.0);
    v = x + (x >= 0.0 ? 0.3 : -0.3);
  }
  t.set_requires_grad(true);
  return t;
}

}  // namespace

std::vector<GradCheckReport> run_gradcheck_suite(uint64_t seed) {
  std::vector<GradCheckReport> out;
  Rng rng(derive_seed(seed, 0x67737569ULL));

  {
    Tensor x = uniform_tensor({2, 3, 8, 8}, rng, -1.0, 1.0, true);
    Tensor k = uniform_tensor({4, 3, 3, 3}, rng, -0.5, 0.5, true);
    Tensor b = uniform_tensor({4}, rng, -0.5, 0.5, true);
    out.push_back(gradcheck(
        "conv2d", [&] { return mean(square(conv2d(x, k, b, 1, 1))); },
        {x, k, b}));
  }
  {
    Tensor x = uniform_tensor({2, 3, 9, 9}, rng, -1.0, 1.0, true);
    Tensor k = uniform_tensor({4, 3, 3, 3}, rng, -0.5, 0.5, true);
    Tensor b = uniform_tensor({4}, rng, -0.5, 0.5, true);
    out.push_back(gradcheck(
        "conv2d_stride2",
        [&] { return mean(square(conv2d(x, k, b, 2, 1))); }, {x, k, b}));
  }
  {
    Tensor x = uniform_tensor({3, 10}, rng, -1.0, 1.0, true);
    Tensor w = uniform_tensor({5, 10}, rng, -0.5, 0.5, true);
    Tensor b = uniform_tensor({5}, rng, -0.5, 0.5, true);
    out.push_back(gradcheck(
        "linear", [&] { return mean(square(linear(x, w, b))); }, {x, w, b}));
  }
  {
    Tensor x = uniform_tensor({2, 2, 6, 6}, rng, -1.0, 1.0, true);
    Tensor k = uniform_tensor({3, 4, 2, 3, 3}, rng, -0.5, 0.5, true);
    Tensor b = uniform_tensor({3, 4}, rng, -0.5, 0.5, true);
    Tensor w = uniform_tensor({2, 3}, rng, 0.1, 0.9, true);
    out.push_back(gradcheck(
        "mapping_aware_conv(omega)",
        [&] { return mean(square(mapping_aware_conv(x, k, b, w, 1, 1))); },
        {x, k, b, w}));
  }
  {
    Tensor x = away_from_zero({4, 17}, rng);
    out.push_back(gradcheck(
        "leaky_relu", [&] { return mean(square(leaky_relu(x, 0.1))); }, {x}));
  }
  {
    Tensor x = uniform_tensor({4, 17}, rng, -2.0, 2.0, true);
    out.push_back(
        gradcheck("sigmoid", [&] { return mean(square(sigmoid(x))); }, {x}));
  }
  {
    Tensor x = uniform_tensor({4, 6}, rng, -2.0, 2.0, true);
    out.push_back(gradcheck(
        "softmax", [&] { return mean(square(softmax(x))); }, {x}));
  }
  {
    Tensor x = uniform_tensor({2, 3, 8, 8}, rng, -1.0, 1.0, true);
    out.push_back(gradcheck(
        "pool_upsample_center",
        [&] {
          Tensor a = center_channels(x);
          Tensor p = avg_pool2(a);
          Tensor u = upsample_nearest2(p);
          return add(mean(square(u)), mean(square(spatial_mean(a))));
        },
        {x}));
  }
  {
    Tensor r = uniform_tensor({3, 2, 5, 5}, rng, 0.0, 1.0, true);
    Tensor t = uniform_tensor({3, 2, 5, 5}, rng, 0.0, 1.0, false);
    out.push_back(gradcheck(
        "reconstruction_loss", [&] { return reconstruction_loss(r, t); }, {r}));
  }
  {
    Tensor a = uniform_tensor({4, 8}, rng, 0.2, 1.0, true);
    Tensor b = uniform_tensor({4, 8}, rng, 0.2, 1.0, true);
    out.push_back(
        gradcheck("identity_loss", [&] { return identity_loss(a, b); }, {a, b}));
  }
  {
    Tensor logits = uniform_tensor({4, 4}, rng, -1.0, 1.0, true);
    LossConfig lc;
    out.push_back(gradcheck(
        "resolving_loss",
        [&] {
          return resolving_loss_mean(softmax(logits), {0, 1, 2, 3},
                                     {0, 0, 1, 0}, lc);
        },
        {logits}));
  }
  {
    // end-to-end: resolver + retracor + all three loss terms
    Rng net_rng(derive_seed(seed, 0x6e657473ULL));
    ResolverConfig sc{2, 3, 8, 4};
    RetracorConfig rc{2, 3, 8, 4};
    Resolver resolver(sc, net_rng);
    Retracor retracor(rc, net_rng);
    Tensor images = uniform_tensor({2, 3, 8, 8}, rng, 0.1, 0.9, false);
    Tensor target = uniform_tensor({2, 3, 8, 8}, rng, 0.1, 0.9, false);
    std::vector<Tensor> leaves;
    for (auto& [name, p] : resolver.named_params()) leaves.push_back(p);
    for (auto& [name, p] : retracor.named_params()) leaves.push_back(p);
    LossConfig lc;
    lc.n = 2;
    out.push_back(gradcheck(
        "end_to_end",
        [&] {
          ForwardFull f = forward_full(images, resolver, retracor);
          LossBreakdown lb =
              total_loss(f.retraced, target, flatten_rows(f.retraced),
                         flatten_rows(target), f.omega, {0, 1}, {0, 0}, lc);
          return lb.total;
        },
        // the deep composition amplifies f64 roundoff in the central
        // difference, so use a wider half-width than the shallow checks
        leaves, 120, 1e-4));
  }
  return out;
}

}  // namespace idrt
