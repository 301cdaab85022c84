#pragma once

#include "idrt/layers.hpp"
#include "idrt/resolver.hpp"

namespace idrt {

struct RetracorConfig {
  long n = 4;           // kernel groups per mapping-aware convolution
  long in_channels = 3;
  long image_size = 32;  // must be divisible by 8 (three halvings)
  long base_channels = 16;
};

// Reconstruction network: three-level UNet whose convolutions are all
// mapping-aware, controlled by a single weight vector per input image.
class Retracor {
 public:
  Retracor() = default;
  Retracor(const RetracorConfig& cfg, Rng& rng);

  // fake [N,C,H,W] + omega [N,n] -> retraced [N,C,H,W] in (0,1)
  Tensor retrace(const Tensor& fake, const Tensor& omega) const;

  ParamList named_params() const;
  const RetracorConfig& config() const { return cfg_; }

 private:
  RetracorConfig cfg_;
  DownBlock enc1_, enc2_, enc3_;
  MappingAwareConvLayer bottleneck_;
  UpBlock dec3_, dec2_, dec1_;
  MappingAwareConvLayer head_;  // 1x1 to image channels
  double slope_ = 0.1;
};

struct ForwardFull {
  Tensor omega;
  Tensor retraced;
};

// resolve then retrace; both returned for logging
ForwardFull forward_full(const Tensor& images, const Resolver& resolver,
                         const Retracor& retracor);

}  // namespace idrt
