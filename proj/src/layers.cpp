#include "idrt/layers.hpp"

#include <cmath>
#include <stdexcept>

#include "idrt/kernels.hpp"

namespace idrt {

void check_simplex(const Tensor& omega, double tol) {
  if (omega.rank() != 2)
    throw std::invalid_argument("simplex: omega must be [B,n], got " +
                                shape_str(omega.shape()));
  long rows = omega.dim(0), n = omega.dim(1);
  for (long r = 0; r < rows; ++r) {
    double s = 0.0;
    for (long i = 0; i < n; ++i) {
      double v = omega.data()[r * n + i];
      if (!(v >= 0.0))
        throw std::logic_error("simplex: negative weight " + std::to_string(v) +
                               " in row " + std::to_string(r));
      s += v;
    }
    if (std::abs(s - 1.0) > tol)
      throw std::logic_error("simplex: row " + std::to_string(r) + " sums to " +
                             std::to_string(s));
  }
}

KernelBank KernelBank::init(long n, long cout, long cin, long k, Rng& rng) {
  if (n < 1) throw std::invalid_argument("kernel bank: n must be >= 1");
  KernelBank b;
  b.n = n;
  double scale = 1.0 / std::sqrt(static_cast<double>(cin * k * k));
  std::vector<double> kd(static_cast<size_t>(n * cout * cin * k * k));
  long group = cout * cin * k * k;
  for (long i = 0; i < n; ++i) {
    Rng sub(derive_seed(rng.next_u64(), 0x6b626e6bULL, static_cast<uint64_t>(i)));
    for (long j = 0; j < group; ++j) kd[i * group + j] = sub.uniform(-scale, scale);
  }
  b.kernels = Tensor({n, cout, cin, k, k}, std::move(kd));
  b.kernels.set_requires_grad();
  b.biases = Tensor({n, cout}, 0.0);
  b.biases.set_requires_grad();
  return b;
}

void KernelBank::register_params(ParamList& out, const std::string& prefix) const {
  out.emplace_back(prefix + ".kernels", kernels);
  out.emplace_back(prefix + ".biases", biases);
}

std::pair<Tensor, Tensor> recombine(const KernelBank& bank,
                                    const std::vector<double>& omega_row) {
  if (static_cast<long>(omega_row.size()) != bank.n)
    throw std::invalid_argument("recombine: omega length " +
                                std::to_string(omega_row.size()) +
                                " does not match group count " +
                                std::to_string(bank.n));
  Tensor row({1, bank.n}, std::vector<double>(omega_row));
  check_simplex(row);
  Shape ker_shape(bank.kernels.shape().begin() + 1, bank.kernels.shape().end());
  long ker_sz = shape_numel(ker_shape);
  long cout = bank.biases.dim(1);
  std::vector<double> kd(static_cast<size_t>(ker_sz), 0.0);
  std::vector<double> bd(static_cast<size_t>(cout), 0.0);
  const auto& K = kernels::active_ops();
  for (long i = 0; i < bank.n; ++i) {
    K.axpy(omega_row[i], bank.kernels.data().data() + i * ker_sz, kd.data(), ker_sz);
    K.axpy(omega_row[i], bank.biases.data().data() + i * cout, bd.data(), cout);
  }
  return {Tensor(ker_shape, std::move(kd)), Tensor({cout}, std::move(bd))};
}

ConvLayer ConvLayer::init(long cout, long cin, long k, long pad, Rng& rng) {
  ConvLayer l;
  double scale = 1.0 / std::sqrt(static_cast<double>(cin * k * k));
  l.kernel = uniform_tensor({cout, cin, k, k}, rng, -scale, scale, true);
  l.bias = Tensor({cout}, 0.0);
  l.bias.set_requires_grad();
  l.pad = pad;
  return l;
}

void ConvLayer::register_params(ParamList& out, const std::string& prefix) const {
  out.emplace_back(prefix + ".kernel", kernel);
  out.emplace_back(prefix + ".bias", bias);
}

LinearLayer LinearLayer::init(long out, long in, Rng& rng) {
  LinearLayer l;
  double scale = 1.0 / std::sqrt(static_cast<double>(in));
  l.weight = uniform_tensor({out, in}, rng, -scale, scale, true);
  l.bias = Tensor({out}, 0.0);
  l.bias.set_requires_grad();
  return l;
}

LinearLayer LinearLayer::zeros(long out, long in) {
  LinearLayer l;
  l.weight = Tensor({out, in}, 0.0);
  l.weight.set_requires_grad();
  l.bias = Tensor({out}, 0.0);
  l.bias.set_requires_grad();
  return l;
}

void LinearLayer::register_params(ParamList& out, const std::string& prefix) const {
  out.emplace_back(prefix + ".weight", weight);
  out.emplace_back(prefix + ".bias", bias);
}

MappingAwareConvLayer MappingAwareConvLayer::init(long n, long cout, long cin,
                                                  long k, long pad, Rng& rng) {
  MappingAwareConvLayer l;
  l.bank = KernelBank::init(n, cout, cin, k, rng);
  l.pad = pad;
  return l;
}

Tensor MappingAwareConvLayer::forward(const Tensor& x, const Tensor& omega) const {
  check_simplex(omega);
  return mapping_aware_conv(x, bank.kernels, bank.biases, omega, stride, pad);
}

void MappingAwareConvLayer::register_params(ParamList& out,
                                            const std::string& prefix) const {
  bank.register_params(out, prefix);
}

DownBlock DownBlock::init(long n, long cout, long cin, Rng& rng) {
  DownBlock b;
  b.conv = MappingAwareConvLayer::init(n, cout, cin, 3, 1, rng);
  return b;
}

std::pair<Tensor, Tensor> DownBlock::forward(const Tensor& x,
                                             const Tensor& omega) const {
  Tensor act = leaky_relu(conv.forward(x, omega), slope);
  return {avg_pool2(act), act};
}

void DownBlock::register_params(ParamList& out, const std::string& prefix) const {
  conv.register_params(out, prefix + ".conv");
}

UpBlock UpBlock::init(long n, long cout, long cin_total, Rng& rng) {
  UpBlock b;
  b.conv = MappingAwareConvLayer::init(n, cout, cin_total, 3, 1, rng);
  return b;
}

Tensor UpBlock::forward(const Tensor& x, const Tensor& skip,
                        const Tensor& omega) const {
  Tensor up = upsample_nearest2(x);
  if (up.dim(2) != skip.dim(2) || up.dim(3) != skip.dim(3) ||
      up.dim(0) != skip.dim(0))
    throw std::invalid_argument("up_block: skip shape " + shape_str(skip.shape()) +
                                " does not match upsampled " + shape_str(up.shape()));
  return leaky_relu(conv.forward(concat(up, skip, 1), omega), slope);
}

void UpBlock::register_params(ParamList& out, const std::string& prefix) const {
  conv.register_params(out, prefix + ".conv");
}

}  // namespace idrt
