#pragma once

#include <cstdint>
#include <functional>

#include "idrt/layers.hpp"

namespace idrt {

// Frozen deterministic identity embedder. Seeded random conv features with
// pooling and a linear head; never updated by any optimizer. Construction
// from the same seed is bit-reproducible.
class Embedder {
 public:
  Embedder() = default;
  static Embedder create(uint64_t seed, long dim = 32, long in_channels = 3,
                         long image_size = 32);

  // One-time feature centering on a seeded sample of faces (render maps
  // (identity seed, attribute seed) to [1,C,H,W]). Removes the component
  // shared by all faces, which otherwise compresses every cosine towards 1.
  // Part of construction; the checksum freezes the result.
  void center_on(const std::function<Tensor(uint64_t, uint64_t)>& render,
                 long count = 64);

  // [N,C,H,W] -> [N,dim], rows unit-norm; rejects non-finite input
  Tensor embed(const Tensor& images) const;

  // cosine of embeddings of two single images ([C,H,W] or [1,C,H,W])
  double similarity(const Tensor& a, const Tensor& b) const;
  bool same_identity(const Tensor& a, const Tensor& b, double tau) const;

  uint64_t seed() const { return seed_; }
  long dim() const { return dim_; }
  uint64_t checksum() const;

 private:
  uint64_t seed_ = 0;
  long dim_ = 32, in_channels_ = 3, image_size_ = 32;
  ConvLayer c1_, c2_;
  LinearLayer head_;
  std::vector<double> fallback_;  // unit vector for degenerate inputs
  std::vector<double> center_;    // population-mean raw feature, or empty
  double slope_ = 0.1;
};

struct TauCalibration {
  double tau = 0.0;
  double same_error = 0.0;  // same-identity pairs below tau
  double diff_error = 0.0;  // different-identity pairs above tau
};

// Equal-error-rate sweep over seeded same/different identity pairs. The
// render callback maps (identity seed, attribute seed) to a [1,C,H,W] image.
TauCalibration calibrate_tau(
    const Embedder& emb,
    const std::function<Tensor(uint64_t, uint64_t)>& render, long pairs,
    uint64_t seed);

}  // namespace idrt
