#pragma once

#include "idrt/rng.hpp"
#include "idrt/tensor.hpp"

namespace idrt {

// convolution: input [N,Cin,H,W], kernel [Cout,Cin,k,k], bias [Cout]
Tensor conv2d(const Tensor& input, const Tensor& kernel, const Tensor& bias,
              long stride = 1, long pad = 0);

// per-sample kernel recombination: kernels [n,Cout,Cin,k,k], biases [n,Cout],
// omega [N,n] rows on the probability simplex. Sample b is convolved with
// sum_i omega[b,i] * kernels[i]; gradients flow to input, kernels, biases
// and omega.
Tensor mapping_aware_conv(const Tensor& input, const Tensor& kernels,
                          const Tensor& biases, const Tensor& omega,
                          long stride = 1, long pad = 0);

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scalar_mul(const Tensor& a, double s);
Tensor add_scalar(const Tensor& a, double s);
Tensor leaky_relu(const Tensor& a, double slope = 0.1);
Tensor log_op(const Tensor& a);
Tensor exp_op(const Tensor& a);
Tensor sqrt_op(const Tensor& a);
Tensor square(const Tensor& a);
Tensor sigmoid(const Tensor& a);
Tensor reciprocal(const Tensor& a);

Tensor sum(const Tensor& a);   // -> scalar
Tensor mean(const Tensor& a);  // -> scalar
// [B, ...] -> [B], reduction over all non-batch axes
Tensor sum_per_sample(const Tensor& a);

// 4-d image ops
Tensor concat(const Tensor& a, const Tensor& b, long axis);  // axis 1 only
Tensor upsample_nearest2(const Tensor& a);
Tensor avg_pool2(const Tensor& a);
Tensor spatial_mean(const Tensor& a);  // [N,C,H,W] -> [N,C]
// subtract the per-(sample,channel) spatial mean; a self-adjoint projection
Tensor center_channels(const Tensor& a);
Tensor flatten_rows(const Tensor& a);  // [N,...] -> [N,D]

// x [N,in], weight [out,in], bias [out] -> [N,out]
Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias);

// row ops; 1-d input is treated as a single row
Tensor softmax(const Tensor& x, long axis = 1);
Tensor l2_norm(const Tensor& x, long axis = 1);  // [N,K] -> [N]
Tensor div_rows(const Tensor& x, const Tensor& s);

// per-sample fusion-regularized cross entropy over omega rows [B,n]:
//   L_b = -[theta_b log(w_{b,c_b}) + (1-theta_b)/(n-1) sum_{i != c_b} log(w_{b,i})]
// with an eps floor inside the log. Returns [B].
Tensor resolving_loss_rows(const Tensor& omega, const std::vector<long>& c,
                           const std::vector<double>& theta,
                           double eps_floor = 1e-12);

Tensor uniform_tensor(Shape shape, Rng& rng, double lo, double hi,
                      bool requires_grad = false);

}  // namespace idrt
