#include "idrt/retracor.hpp"

#include <stdexcept>

namespace idrt {

Retracor::Retracor(const RetracorConfig& cfg, Rng& rng) : cfg_(cfg) {
  if (cfg.image_size % 8 != 0)
    throw std::invalid_argument("retracor: image size " +
                                std::to_string(cfg.image_size) +
                                " not divisible by 8");
  long b = cfg.base_channels;
  long n = cfg.n;
  enc1_ = DownBlock::init(n, b, cfg.in_channels, rng);
  enc2_ = DownBlock::init(n, 2 * b, b, rng);
  enc3_ = DownBlock::init(n, 4 * b, 2 * b, rng);
  bottleneck_ = MappingAwareConvLayer::init(n, 4 * b, 4 * b, 3, 1, rng);
  dec3_ = UpBlock::init(n, 2 * b, 4 * b + 4 * b, rng);
  dec2_ = UpBlock::init(n, b, 2 * b + 2 * b, rng);
  dec1_ = UpBlock::init(n, b, b + b, rng);
  head_ = MappingAwareConvLayer::init(n, cfg.in_channels, b, 1, 0, rng);
}

Tensor Retracor::retrace(const Tensor& fake, const Tensor& omega) const {
  if (fake.rank() != 4 || fake.dim(2) % 8 != 0 || fake.dim(3) % 8 != 0)
    throw std::invalid_argument("retracor: spatial extents of " +
                                shape_str(fake.shape()) +
                                " must be divisible by 8");
  auto [x1, s1] = enc1_.forward(fake, omega);
  auto [x2, s2] = enc2_.forward(x1, omega);
  auto [x3, s3] = enc3_.forward(x2, omega);
  Tensor x = leaky_relu(bottleneck_.forward(x3, omega), slope_);
  x = dec3_.forward(x, s3, omega);
  x = dec2_.forward(x, s2, omega);
  x = dec1_.forward(x, s1, omega);
  // smooth clamp keeps gradients alive everywhere while pinning the range
  return sigmoid(head_.forward(x, omega));
}

ParamList Retracor::named_params() const {
  ParamList p;
  enc1_.register_params(p, "retracor.enc1");
  enc2_.register_params(p, "retracor.enc2");
  enc3_.register_params(p, "retracor.enc3");
  bottleneck_.register_params(p, "retracor.bottleneck");
  dec3_.register_params(p, "retracor.dec3");
  dec2_.register_params(p, "retracor.dec2");
  dec1_.register_params(p, "retracor.dec1");
  head_.register_params(p, "retracor.head");
  return p;
}

ForwardFull forward_full(const Tensor& images, const Resolver& resolver,
                         const Retracor& retracor) {
  ForwardFull out;
  out.omega = resolver.resolve(images);
  out.retraced = retracor.retrace(images, out.omega);
  return out;
}

}  // namespace idrt
