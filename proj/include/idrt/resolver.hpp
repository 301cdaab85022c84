#pragma once

#include "idrt/layers.hpp"

namespace idrt {

struct ResolverConfig {
  long n = 4;           // output classes = kernel groups of the retracor
  long in_channels = 3;
  long image_size = 32;
  long base_channels = 16;  // widened to 2x base after the transition block
};

// Mapping resolver: small residual classifier emitting a simplex weight
// vector per input image.
class Resolver {
 public:
  Resolver() = default;
  Resolver(const ResolverConfig& cfg, Rng& rng);

  // [N,C,H,W] -> [N,n] softmax rows
  Tensor resolve(const Tensor& images) const;

  ParamList named_params() const;
  const ResolverConfig& config() const { return cfg_; }

 private:
  ResolverConfig cfg_;
  ConvLayer stem_;            // C -> base, then pool to size/2
  ConvLayer res1a_, res1b_;   // base -> base residual block
  ConvLayer trans_;           // base -> 2*base, then pool to size/4
  ConvLayer res2a_, res2b_;   // 2*base -> 2*base residual block
  LinearLayer head_;          // 2*base -> n, zero-initialized
  double slope_ = 0.1;
};

}  // namespace idrt
