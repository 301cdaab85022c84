#include "idrt/embedder.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <stdexcept>

namespace idrt {

Embedder Embedder::create(uint64_t seed, long dim, long in_channels,
                          long image_size) {
  if (image_size % 8 != 0)
    throw std::invalid_argument("embedder: image size must be divisible by 8");
  Embedder e;
  e.seed_ = seed;
  e.dim_ = dim;
  e.in_channels_ = in_channels;
  e.image_size_ = image_size;
  Rng rng(derive_seed(seed, 0x656d6264ULL, 0));
  e.c1_ = ConvLayer::init(12, in_channels, 5, 2, rng);
  e.c2_ = ConvLayer::init(32, 12, 3, 1, rng);
  e.head_ = LinearLayer::init(dim, 32, rng);
  e.fallback_.resize(dim);
  double fn = 0.0;
  for (double& v : e.fallback_) {
    v = rng.normal();
    fn += v * v;
  }
  for (double& v : e.fallback_) v /= std::sqrt(fn);
  // frozen: exclude every parameter from gradient flow and optimizers
  for (Tensor t : {e.c1_.kernel, e.c1_.bias, e.c2_.kernel, e.c2_.bias,
                   e.head_.weight, e.head_.bias})
    t.set_requires_grad(false);
  return e;
}

Tensor Embedder::embed(const Tensor& images) const {
  if (!images.defined() || images.rank() != 4 ||
      images.dim(1) != in_channels_ || images.dim(2) != image_size_ ||
      images.dim(3) != image_size_)
    throw std::invalid_argument("embedder: expected [N," +
                                std::to_string(in_channels_) + "," +
                                std::to_string(image_size_) + "," +
                                std::to_string(image_size_) + "] input");
  if (!all_finite(images.data()))
    throw std::invalid_argument("embedder: non-finite input image");
  // Per-channel mean removal canonicalizes brightness and tint; identity is
  // then carried by the spatial structure. Without it the shared gray
  // component makes every face near-collinear in feature space.
  long N = images.dim(0);
  Tensor x = avg_pool2(leaky_relu(c1_.forward(center_channels(images)), slope_));
  x = avg_pool2(x);
  x = leaky_relu(c2_.forward(x), slope_);
  // channel statistics rather than flattened maps: attribute warps shift
  // features spatially, and spatial_mean makes the embedding robust to that
  Tensor v = head_.forward(spatial_mean(x));
  if (!center_.empty()) {
    std::vector<double> c(N * dim_);
    for (long i = 0; i < N; ++i)
      std::copy(center_.begin(), center_.end(), c.begin() + i * dim_);
    v = sub(v, Tensor({N, dim_}, std::move(c)));
  }
  Tensor norms = l2_norm(v, 1);
  bool degenerate = false;
  for (double nv : norms.data())
    if (nv < 1e-12) degenerate = true;
  if (degenerate) {
    // measure-zero case (e.g. an all-constant image): substitute a fixed
    // seed-derived unit vector so degenerate inputs still embed
    std::vector<double> out(N * dim_);
    NoGradGuard ng;
    for (long i = 0; i < N; ++i)
      for (long j = 0; j < dim_; ++j)
        out[i * dim_ + j] = norms.data()[i] < 1e-12 ? fallback_[j]
                                                    : v.data()[i * dim_ + j] /
                                                          norms.data()[i];
    return Tensor({N, dim_}, std::move(out));
  }
  return div_rows(v, norms);
}

void Embedder::center_on(
    const std::function<Tensor(uint64_t, uint64_t)>& render, long count) {
  if (count < 1) throw std::invalid_argument("center_on: count must be >= 1");
  NoGradGuard ng;
  center_.clear();
  Rng rng(derive_seed(seed_, 0x636e7472ULL, 0));
  std::vector<double> mean(dim_, 0.0);
  for (long i = 0; i < count; ++i) {
    Tensor img = render(rng.next_u64(), rng.next_u64());
    // raw (pre-normalization) feature: rerun the trunk without centering
    Tensor x = avg_pool2(leaky_relu(c1_.forward(center_channels(img)), slope_));
    x = avg_pool2(x);
    x = leaky_relu(c2_.forward(x), slope_);
    Tensor v = head_.forward(spatial_mean(x));
    for (long j = 0; j < dim_; ++j) mean[j] += v.data()[j];
  }
  for (double& v : mean) v /= static_cast<double>(count);
  center_ = std::move(mean);
}

namespace {
Tensor as_batch(const Tensor& img) {
  if (img.rank() == 4) return img;
  if (img.rank() == 3) {
    Shape s = {1, img.dim(0), img.dim(1), img.dim(2)};
    return Tensor(s, std::vector<double>(img.data()));
  }
  throw std::invalid_argument("embedder: image must be [C,H,W] or [1,C,H,W]");
}
}  // namespace

double Embedder::similarity(const Tensor& a, const Tensor& b) const {
  NoGradGuard ng;
  Tensor va = embed(as_batch(a));
  Tensor vb = embed(as_batch(b));
  double dot = 0.0;
  for (long i = 0; i < va.numel(); ++i) dot += va.data()[i] * vb.data()[i];
  return dot;
}

bool Embedder::same_identity(const Tensor& a, const Tensor& b,
                             double tau) const {
  return similarity(a, b) >= tau;
}

uint64_t Embedder::checksum() const {
  // FNV-1a over the raw parameter bytes, in registration order
  uint64_t h = 1469598103934665603ULL;
  auto mix = [&h](const Tensor& t) {
    for (double v : t.data()) {
      uint64_t bits;
      std::memcpy(&bits, &v, sizeof bits);
      for (int i = 0; i < 8; ++i) {
        h ^= (bits >> (8 * i)) & 0xffULL;
        h *= 1099511628211ULL;
      }
    }
  };
  mix(c1_.kernel);
  mix(c1_.bias);
  mix(c2_.kernel);
  mix(c2_.bias);
  mix(head_.weight);
  mix(head_.bias);
  mix(Tensor({static_cast<long>(center_.size())},
             std::vector<double>(center_)));
  return h;
}

TauCalibration calibrate_tau(
    const Embedder& emb,
    const std::function<Tensor(uint64_t, uint64_t)>& render, long pairs,
    uint64_t seed) {
  if (pairs < 2) throw std::invalid_argument("calibrate_tau: pairs must be >= 2");
  NoGradGuard ng;
  Rng rng(derive_seed(seed, 0x74617563ULL, 0));
  std::vector<double> same, diff;
  same.reserve(pairs);
  diff.reserve(pairs);
  for (long p = 0; p < pairs; ++p) {
    uint64_t id_a = rng.next_u64(), id_b = rng.next_u64();
    uint64_t at0 = rng.next_u64(), at1 = rng.next_u64(), at2 = rng.next_u64();
    same.push_back(emb.similarity(render(id_a, at0), render(id_a, at1)));
    diff.push_back(emb.similarity(render(id_a, at0), render(id_b, at2)));
  }
  // sweep candidate thresholds (the observed scores) for the equal-error point
  std::vector<double> cand = same;
  cand.insert(cand.end(), diff.begin(), diff.end());
  std::sort(cand.begin(), cand.end());
  TauCalibration best;
  double best_gap = 2.0, best_sum = 2.0;
  for (double t : cand) {
    double frr = 0, far = 0;
    for (double s : same)
      if (s < t) frr += 1;
    for (double s : diff)
      if (s >= t) far += 1;
    frr /= static_cast<double>(pairs);
    far /= static_cast<double>(pairs);
    double gap = std::abs(frr - far), total = frr + far;
    if (gap < best_gap - 1e-15 ||
        (gap < best_gap + 1e-15 && total < best_sum)) {
      best_gap = gap;
      best_sum = total;
      best.tau = t;
      best.same_error = frr;
      best.diff_error = far;
    }
  }
  return best;
}

}  // namespace idrt
