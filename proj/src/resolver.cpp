#include "idrt/resolver.hpp"

#include <stdexcept>

namespace idrt {

Resolver::Resolver(const ResolverConfig& cfg, Rng& rng) : cfg_(cfg) {
  long b = cfg.base_channels;
  stem_ = ConvLayer::init(b, cfg.in_channels, 3, 1, rng);
  res1a_ = ConvLayer::init(b, b, 3, 1, rng);
  res1b_ = ConvLayer::init(b, b, 3, 1, rng);
  trans_ = ConvLayer::init(2 * b, b, 3, 1, rng);
  res2a_ = ConvLayer::init(2 * b, 2 * b, 3, 1, rng);
  res2b_ = ConvLayer::init(2 * b, 2 * b, 3, 1, rng);
  // zero head: an untrained resolver emits the uniform weight vector
  head_ = LinearLayer::zeros(cfg.n, 2 * b);
}

Tensor Resolver::resolve(const Tensor& images) const {
  if (images.rank() != 4 || images.dim(1) != cfg_.in_channels ||
      images.dim(2) != cfg_.image_size || images.dim(3) != cfg_.image_size)
    throw std::invalid_argument("resolver: expected [N," +
                                std::to_string(cfg_.in_channels) + "," +
                                std::to_string(cfg_.image_size) + "," +
                                std::to_string(cfg_.image_size) + "], got " +
                                shape_str(images.shape()));
  Tensor x = avg_pool2(leaky_relu(stem_.forward(images), slope_));
  Tensor r1 = res1b_.forward(leaky_relu(res1a_.forward(x), slope_));
  x = leaky_relu(add(x, r1), slope_);
  x = avg_pool2(leaky_relu(trans_.forward(x), slope_));
  Tensor r2 = res2b_.forward(leaky_relu(res2a_.forward(x), slope_));
  x = leaky_relu(add(x, r2), slope_);
  Tensor logits = head_.forward(spatial_mean(x));
  if (!all_finite(logits.data()))
    throw std::runtime_error("resolver: non-finite logits");
  return softmax(logits, 1);
}

ParamList Resolver::named_params() const {
  ParamList p;
  stem_.register_params(p, "resolver.stem");
  res1a_.register_params(p, "resolver.res1a");
  res1b_.register_params(p, "resolver.res1b");
  trans_.register_params(p, "resolver.trans");
  res2a_.register_params(p, "resolver.res2a");
  res2b_.register_params(p, "resolver.res2b");
  head_.register_params(p, "resolver.head");
  return p;
}

}  // namespace idrt
