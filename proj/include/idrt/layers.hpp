#pragma once

#include <string>
#include <utility>
#include <vector>

#include "idrt/ops.hpp"
#include "idrt/tensor.hpp"

namespace idrt {

// named parameter registry shared by optimizer and checkpointing
using ParamList = std::vector<std::pair<std::string, Tensor>>;

// Rejects weight rows that are off the probability simplex: entries must be
// nonnegative and each row must sum to 1 within tol.
void check_simplex(const Tensor& omega, double tol = 1e-9);

// The n kernel groups of one mapping-aware convolution.
struct KernelBank {
  long n = 0;
  Tensor kernels;  // [n,Cout,Cin,k,k]
  Tensor biases;   // [n,Cout]

  // Zero-mean uniform init scaled by 1/sqrt(Cin*k^2), distinct sub-seed per
  // group so groups never start identical.
  static KernelBank init(long n, long cout, long cin, long k, Rng& rng);

  void register_params(ParamList& out, const std::string& prefix) const;
};

// kernel = sum_i omega_i * kernels[i], bias mixed with the same weights
std::pair<Tensor, Tensor> recombine(const KernelBank& bank,
                                    const std::vector<double>& omega_row);

struct ConvLayer {
  Tensor kernel;  // [Cout,Cin,k,k]
  Tensor bias;    // [Cout]
  long stride = 1, pad = 0;

  static ConvLayer init(long cout, long cin, long k, long pad, Rng& rng);
  Tensor forward(const Tensor& x) const { return conv2d(x, kernel, bias, stride, pad); }
  void register_params(ParamList& out, const std::string& prefix) const;
};

struct LinearLayer {
  Tensor weight;  // [out,in]
  Tensor bias;    // [out]

  static LinearLayer init(long out, long in, Rng& rng);
  static LinearLayer zeros(long out, long in);
  Tensor forward(const Tensor& x) const { return linear(x, weight, bias); }
  void register_params(ParamList& out, const std::string& prefix) const;
};

struct MappingAwareConvLayer {
  KernelBank bank;
  long stride = 1, pad = 0;

  static MappingAwareConvLayer init(long n, long cout, long cin, long k,
                                    long pad, Rng& rng);
  // validates the simplex invariant on omega before convolving
  Tensor forward(const Tensor& x, const Tensor& omega) const;
  void register_params(ParamList& out, const std::string& prefix) const;
};

// conv(k3,pad1) + leaky_relu + 2x average pooling; also returns the pre-pool
// activation as the skip connection
struct DownBlock {
  MappingAwareConvLayer conv;
  double slope = 0.1;

  static DownBlock init(long n, long cout, long cin, Rng& rng);
  std::pair<Tensor, Tensor> forward(const Tensor& x, const Tensor& omega) const;
  void register_params(ParamList& out, const std::string& prefix) const;
};

// 2x nearest upsample + concat(skip) + conv(k3,pad1) + leaky_relu
struct UpBlock {
  MappingAwareConvLayer conv;
  double slope = 0.1;

  static UpBlock init(long n, long cout, long cin_total, Rng& rng);
  Tensor forward(const Tensor& x, const Tensor& skip, const Tensor& omega) const;
  void register_params(ParamList& out, const std::string& prefix) const;
};

}  // namespace idrt
