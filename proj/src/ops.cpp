#include "idrt/ops.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "idrt/kernels.hpp"

namespace idrt {

namespace {

using kernels::ConvDims;

Tensor finish(Shape shape, std::vector<double> value, const char* opname,
              std::vector<Tensor> parents, std::function<void(Node&)> bwd) {
  Tensor out(std::move(shape), std::move(value));
  out.node->op = opname;
  if (grad_enabled()) {
    bool rg = false;
    for (const auto& p : parents) rg = rg || p.node->requires_grad;
    if (rg) {
      out.node->requires_grad = true;
      for (const auto& p : parents) out.node->parents.push_back(p.node);
      out.node->backward_fn = std::move(bwd);
    }
  }
  return out;
}

void require(bool ok, const std::string& msg) {
  if (!ok) throw std::invalid_argument(msg);
}

void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  require(a.shape() == b.shape(), std::string(op) + ": shape mismatch " +
                                      shape_str(a.shape()) + " vs " +
                                      shape_str(b.shape()));
}

ConvDims conv_dims(const Shape& in, const Shape& ker, long stride, long pad,
                   const char* op) {
  require(in.size() == 4, std::string(op) + ": input must be 4-d, got " + shape_str(in));
  require(ker.size() == 4, std::string(op) + ": kernel must be 4-d, got " + shape_str(ker));
  require(ker[2] == ker[3] && ker[2] % 2 == 1,
          std::string(op) + ": kernel must be square with odd size, got " + shape_str(ker));
  require(pad >= 0 && stride >= 1, std::string(op) + ": bad stride/pad");
  require(in[1] == ker[1], std::string(op) + ": input channels of " + shape_str(in) +
                               " do not match kernel Cin of " + shape_str(ker));
  ConvDims d;
  d.cin = in[1];
  d.h = in[2];
  d.w = in[3];
  d.cout = ker[0];
  d.k = ker[2];
  d.stride = stride;
  d.pad = pad;
  require((d.h + 2 * pad - d.k) % stride == 0 && (d.w + 2 * pad - d.k) % stride == 0,
          std::string(op) + ": output extent not integral for input " + shape_str(in));
  d.hout = (d.h + 2 * pad - d.k) / stride + 1;
  d.wout = (d.w + 2 * pad - d.k) / stride + 1;
  require(d.hout >= 1 && d.wout >= 1, std::string(op) + ": empty output");
  return d;
}

// map from elementwise forward + pointwise derivative
template <typename F, typename G>
Tensor pointwise(const Tensor& a, const char* opname, F f, G dfd_using_out) {
  std::vector<double> v(a.data().size());
  for (size_t i = 0; i < v.size(); ++i) v[i] = f(a.data()[i]);
  NodePtr an = a.node;
  return finish(a.shape(), std::move(v), opname, {a},
                [an, dfd_using_out](Node& n) {
                  if (!an->requires_grad) return;
                  an->ensure_grad();
                  for (size_t i = 0; i < n.grad.size(); ++i)
                    an->grad[i] += n.grad[i] * dfd_using_out(an->value[i], n.value[i]);
                });
}

}  // namespace

Tensor conv2d(const Tensor& input, const Tensor& kernel, const Tensor& bias,
              long stride, long pad) {
  ConvDims d = conv_dims(input.shape(), kernel.shape(), stride, pad, "conv2d");
  require(bias.rank() == 1 && bias.dim(0) == d.cout,
          "conv2d: bias shape " + shape_str(bias.shape()) + " does not match Cout " +
              std::to_string(d.cout));
  long batch = input.dim(0);
  const auto& K = kernels::active_ops();
  std::vector<double> out(static_cast<size_t>(batch * d.cout * d.hout * d.wout));
  long in_sz = d.cin * d.h * d.w;
  long out_sz = d.cout * d.hout * d.wout;
  for (long b = 0; b < batch; ++b) {
    K.conv2d_fwd(input.data().data() + b * in_sz, kernel.data().data(),
                 bias.data().data(), out.data() + b * out_sz, d);
  }
  NodePtr in_n = input.node, ker_n = kernel.node, bias_n = bias.node;
  return finish(
      {batch, d.cout, d.hout, d.wout}, std::move(out), "conv2d",
      {input, kernel, bias}, [in_n, ker_n, bias_n, d, batch](Node& n) {
        const auto& K = kernels::active_ops();
        long in_sz = d.cin * d.h * d.w;
        long out_sz = d.cout * d.hout * d.wout;
        long plane = d.hout * d.wout;
        if (in_n->requires_grad) in_n->ensure_grad();
        if (ker_n->requires_grad) ker_n->ensure_grad();
        if (bias_n->requires_grad) bias_n->ensure_grad();
        for (long b = 0; b < batch; ++b) {
          const double* gout = n.grad.data() + b * out_sz;
          if (in_n->requires_grad)
            K.conv2d_bwd_input(gout, ker_n->value.data(),
                               in_n->grad.data() + b * in_sz, d);
          if (ker_n->requires_grad)
            K.conv2d_bwd_kernel(in_n->value.data() + b * in_sz, gout,
                                ker_n->grad.data(), d);
          if (bias_n->requires_grad) {
            for (long co = 0; co < d.cout; ++co) {
              double s = 0.0;
              const double* g = gout + co * plane;
              for (long i = 0; i < plane; ++i) s += g[i];
              bias_n->grad[co] += s;
            }
          }
        }
      });
}

Tensor mapping_aware_conv(const Tensor& input, const Tensor& kernels_t,
                          const Tensor& biases, const Tensor& omega,
                          long stride, long pad) {
  require(kernels_t.rank() == 5,
          "mapping_aware_conv: kernel bank must be 5-d, got " + shape_str(kernels_t.shape()));
  long ngroups = kernels_t.dim(0);
  Shape ker_shape(kernels_t.shape().begin() + 1, kernels_t.shape().end());
  ConvDims d = conv_dims(input.shape(), ker_shape, stride, pad, "mapping_aware_conv");
  require(biases.rank() == 2 && biases.dim(0) == ngroups && biases.dim(1) == d.cout,
          "mapping_aware_conv: biases must be [n,Cout], got " + shape_str(biases.shape()));
  long batch = input.dim(0);
  require(omega.rank() == 2 && omega.dim(1) == ngroups,
          "mapping_aware_conv: omega length " +
              std::to_string(omega.rank() == 2 ? omega.dim(1) : omega.numel()) +
              " does not match group count " + std::to_string(ngroups));
  require(omega.dim(0) == batch,
          "mapping_aware_conv: omega batch " + std::to_string(omega.dim(0)) +
              " does not match input batch " + std::to_string(batch));

  const auto& K = kernels::active_ops();
  long ker_sz = d.cout * d.cin * d.k * d.k;
  long in_sz = d.cin * d.h * d.w;
  long out_sz = d.cout * d.hout * d.wout;
  std::vector<double> out(static_cast<size_t>(batch * out_sz));
  std::vector<double> mixed_k(static_cast<size_t>(ker_sz));
  std::vector<double> mixed_b(static_cast<size_t>(d.cout));
  for (long b = 0; b < batch; ++b) {
    std::fill(mixed_k.begin(), mixed_k.end(), 0.0);
    std::fill(mixed_b.begin(), mixed_b.end(), 0.0);
    for (long i = 0; i < ngroups; ++i) {
      double w = omega.data()[b * ngroups + i];
      K.axpy(w, kernels_t.data().data() + i * ker_sz, mixed_k.data(), ker_sz);
      K.axpy(w, biases.data().data() + i * d.cout, mixed_b.data(), d.cout);
    }
    K.conv2d_fwd(input.data().data() + b * in_sz, mixed_k.data(), mixed_b.data(),
                 out.data() + b * out_sz, d);
  }

  NodePtr in_n = input.node, ker_n = kernels_t.node, bias_n = biases.node,
          om_n = omega.node;
  return finish(
      {batch, d.cout, d.hout, d.wout}, std::move(out), "mapping_aware_conv",
      {input, kernels_t, biases, omega},
      [in_n, ker_n, bias_n, om_n, d, batch, ngroups](Node& n) {
        const auto& K = kernels::active_ops();
        long ker_sz = d.cout * d.cin * d.k * d.k;
        long in_sz = d.cin * d.h * d.w;
        long out_sz = d.cout * d.hout * d.wout;
        long plane = d.hout * d.wout;
        if (in_n->requires_grad) in_n->ensure_grad();
        if (ker_n->requires_grad) ker_n->ensure_grad();
        if (bias_n->requires_grad) bias_n->ensure_grad();
        if (om_n->requires_grad) om_n->ensure_grad();
        bool need_gk = ker_n->requires_grad || om_n->requires_grad ||
                       bias_n->requires_grad;
        std::vector<double> mixed_k(static_cast<size_t>(ker_sz));
        std::vector<double> gk(static_cast<size_t>(ker_sz));
        std::vector<double> gb(static_cast<size_t>(d.cout));
        for (long b = 0; b < batch; ++b) {
          const double* gout = n.grad.data() + b * out_sz;
          const double* om_row = om_n->value.data() + b * ngroups;
          if (in_n->requires_grad) {
            std::fill(mixed_k.begin(), mixed_k.end(), 0.0);
            for (long i = 0; i < ngroups; ++i)
              K.axpy(om_row[i], ker_n->value.data() + i * ker_sz, mixed_k.data(),
                     ker_sz);
            K.conv2d_bwd_input(gout, mixed_k.data(), in_n->grad.data() + b * in_sz, d);
          }
          if (!need_gk) continue;
          std::fill(gk.begin(), gk.end(), 0.0);
          K.conv2d_bwd_kernel(in_n->value.data() + b * in_sz, gout, gk.data(), d);
          for (long co = 0; co < d.cout; ++co) {
            double s = 0.0;
            const double* g = gout + co * plane;
            for (long i = 0; i < plane; ++i) s += g[i];
            gb[co] = s;
          }
          for (long i = 0; i < ngroups; ++i) {
            if (ker_n->requires_grad)
              K.axpy(om_row[i], gk.data(), ker_n->grad.data() + i * ker_sz, ker_sz);
            if (bias_n->requires_grad)
              K.axpy(om_row[i], gb.data(), bias_n->grad.data() + i * d.cout, d.cout);
            if (om_n->requires_grad) {
              om_n->grad[b * ngroups + i] +=
                  K.dot(gk.data(), ker_n->value.data() + i * ker_sz, ker_sz) +
                  K.dot(gb.data(), bias_n->value.data() + i * d.cout, d.cout);
            }
          }
        }
      });
}

Tensor add(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "add");
  std::vector<double> v(a.data().size());
  for (size_t i = 0; i < v.size(); ++i) v[i] = a.data()[i] + b.data()[i];
  NodePtr an = a.node, bn = b.node;
  return finish(a.shape(), std::move(v), "add", {a, b}, [an, bn](Node& n) {
    for (NodePtr p : {an, bn}) {
      if (!p->requires_grad) continue;
      p->ensure_grad();
      for (size_t i = 0; i < n.grad.size(); ++i) p->grad[i] += n.grad[i];
    }
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "sub");
  std::vector<double> v(a.data().size());
  for (size_t i = 0; i < v.size(); ++i) v[i] = a.data()[i] - b.data()[i];
  NodePtr an = a.node, bn = b.node;
  return finish(a.shape(), std::move(v), "sub", {a, b}, [an, bn](Node& n) {
    if (an->requires_grad) {
      an->ensure_grad();
      for (size_t i = 0; i < n.grad.size(); ++i) an->grad[i] += n.grad[i];
    }
    if (bn->requires_grad) {
      bn->ensure_grad();
      for (size_t i = 0; i < n.grad.size(); ++i) bn->grad[i] -= n.grad[i];
    }
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "mul");
  std::vector<double> v(a.data().size());
  kernels::active_ops().mul(a.data().data(), b.data().data(), v.data(), v.size());
  NodePtr an = a.node, bn = b.node;
  return finish(a.shape(), std::move(v), "mul", {a, b}, [an, bn](Node& n) {
    if (an->requires_grad) {
      an->ensure_grad();
      for (size_t i = 0; i < n.grad.size(); ++i)
        an->grad[i] += n.grad[i] * bn->value[i];
    }
    if (bn->requires_grad) {
      bn->ensure_grad();
      for (size_t i = 0; i < n.grad.size(); ++i)
        bn->grad[i] += n.grad[i] * an->value[i];
    }
  });
}

Tensor scalar_mul(const Tensor& a, double s) {
  return pointwise(a, "scalar_mul", [s](double x) { return s * x; },
                   [s](double, double) { return s; });
}

Tensor add_scalar(const Tensor& a, double s) {
  return pointwise(a, "add_scalar", [s](double x) { return x + s; },
                   [](double, double) { return 1.0; });
}

Tensor leaky_relu(const Tensor& a, double slope) {
  std::vector<double> v(a.data().size());
  kernels::active_ops().leaky_relu_fwd(a.data().data(), v.data(), slope, v.size());
  NodePtr an = a.node;
  return finish(a.shape(), std::move(v), "leaky_relu", {a}, [an, slope](Node& n) {
    if (!an->requires_grad) return;
    an->ensure_grad();
    kernels::active_ops().leaky_relu_bwd(an->value.data(), n.grad.data(),
                                         an->grad.data(), slope, n.grad.size());
  });
}

Tensor log_op(const Tensor& a) {
  return pointwise(a, "log", [](double x) { return std::log(x); },
                   [](double x, double) { return 1.0 / x; });
}

Tensor exp_op(const Tensor& a) {
  return pointwise(a, "exp", [](double x) { return std::exp(x); },
                   [](double, double y) { return y; });
}

Tensor sqrt_op(const Tensor& a) {
  return pointwise(a, "sqrt", [](double x) { return std::sqrt(x); },
                   [](double, double y) { return 0.5 / y; });
}

Tensor square(const Tensor& a) {
  return pointwise(a, "square", [](double x) { return x * x; },
                   [](double x, double) { return 2.0 * x; });
}

Tensor sigmoid(const Tensor& a) {
  return pointwise(a, "sigmoid",
                   [](double x) { return 1.0 / (1.0 + std::exp(-x)); },
                   [](double, double y) { return y * (1.0 - y); });
}

Tensor reciprocal(const Tensor& a) {
  return pointwise(a, "reciprocal", [](double x) { return 1.0 / x; },
                   [](double, double y) { return -y * y; });
}

Tensor sum(const Tensor& a) {
  double s = 0.0;
  for (double x : a.data()) s += x;
  NodePtr an = a.node;
  return finish({}, {s}, "sum", {a}, [an](Node& n) {
    if (!an->requires_grad) return;
    an->ensure_grad();
    double g = n.grad[0];
    for (double& x : an->grad) x += g;
  });
}

Tensor mean(const Tensor& a) {
  require(a.numel() > 0, "mean: empty tensor");
  double s = 0.0;
  for (double x : a.data()) s += x;
  double inv = 1.0 / static_cast<double>(a.numel());
  NodePtr an = a.node;
  return finish({}, {s * inv}, "mean", {a}, [an, inv](Node& n) {
    if (!an->requires_grad) return;
    an->ensure_grad();
    double g = n.grad[0] * inv;
    for (double& x : an->grad) x += g;
  });
}

Tensor sum_per_sample(const Tensor& a) {
  require(a.rank() >= 1, "sum_per_sample: rank must be >= 1");
  long batch = a.dim(0);
  long stride = batch > 0 ? a.numel() / batch : 0;
  std::vector<double> v(static_cast<size_t>(batch), 0.0);
  for (long b = 0; b < batch; ++b)
    for (long i = 0; i < stride; ++i) v[b] += a.data()[b * stride + i];
  NodePtr an = a.node;
  return finish({batch}, std::move(v), "sum_per_sample", {a},
                [an, batch, stride](Node& n) {
                  if (!an->requires_grad) return;
                  an->ensure_grad();
                  for (long b = 0; b < batch; ++b) {
                    double g = n.grad[b];
                    for (long i = 0; i < stride; ++i) an->grad[b * stride + i] += g;
                  }
                });
}

Tensor concat(const Tensor& a, const Tensor& b, long axis) {
  require(axis == 1, "concat: only channel axis (1) is supported");
  require(a.rank() == 4 && b.rank() == 4,
          "concat: expects 4-d tensors, got " + shape_str(a.shape()) + " and " +
              shape_str(b.shape()));
  require(a.dim(0) == b.dim(0) && a.dim(2) == b.dim(2) && a.dim(3) == b.dim(3),
          "concat: incompatible shapes " + shape_str(a.shape()) + " vs " +
              shape_str(b.shape()));
  long batch = a.dim(0), ca = a.dim(1), cb = b.dim(1);
  long plane = a.dim(2) * a.dim(3);
  std::vector<double> v(static_cast<size_t>(batch * (ca + cb) * plane));
  for (long n = 0; n < batch; ++n) {
    std::copy_n(a.data().data() + n * ca * plane, ca * plane,
                v.data() + n * (ca + cb) * plane);
    std::copy_n(b.data().data() + n * cb * plane, cb * plane,
                v.data() + n * (ca + cb) * plane + ca * plane);
  }
  NodePtr an = a.node, bn = b.node;
  return finish({batch, ca + cb, a.dim(2), a.dim(3)}, std::move(v), "concat",
                {a, b}, [an, bn, batch, ca, cb, plane](Node& n) {
                  for (long s = 0; s < batch; ++s) {
                    const double* g = n.grad.data() + s * (ca + cb) * plane;
                    if (an->requires_grad) {
                      an->ensure_grad();
                      for (long i = 0; i < ca * plane; ++i)
                        an->grad[s * ca * plane + i] += g[i];
                    }
                    if (bn->requires_grad) {
                      bn->ensure_grad();
                      for (long i = 0; i < cb * plane; ++i)
                        bn->grad[s * cb * plane + i] += g[ca * plane + i];
                    }
                  }
                });
}

Tensor upsample_nearest2(const Tensor& a) {
  require(a.rank() == 4, "upsample_nearest2: expects 4-d tensor");
  long batch = a.dim(0), c = a.dim(1), h = a.dim(2), w = a.dim(3);
  std::vector<double> v(static_cast<size_t>(batch * c * 4 * h * w));
  for (long nc = 0; nc < batch * c; ++nc) {
    const double* src = a.data().data() + nc * h * w;
    double* dst = v.data() + nc * 4 * h * w;
    for (long y = 0; y < 2 * h; ++y)
      for (long x = 0; x < 2 * w; ++x)
        dst[y * 2 * w + x] = src[(y / 2) * w + (x / 2)];
  }
  NodePtr an = a.node;
  return finish({batch, c, 2 * h, 2 * w}, std::move(v), "upsample_nearest2", {a},
                [an, batch, c, h, w](Node& n) {
                  if (!an->requires_grad) return;
                  an->ensure_grad();
                  for (long nc = 0; nc < batch * c; ++nc) {
                    const double* g = n.grad.data() + nc * 4 * h * w;
                    double* dst = an->grad.data() + nc * h * w;
                    for (long y = 0; y < 2 * h; ++y)
                      for (long x = 0; x < 2 * w; ++x)
                        dst[(y / 2) * w + (x / 2)] += g[y * 2 * w + x];
                  }
                });
}

Tensor avg_pool2(const Tensor& a) {
  require(a.rank() == 4, "avg_pool2: expects 4-d tensor");
  long batch = a.dim(0), c = a.dim(1), h = a.dim(2), w = a.dim(3);
  require(h % 2 == 0 && w % 2 == 0,
          "avg_pool2: spatial extents must be even, got " + shape_str(a.shape()));
  long oh = h / 2, ow = w / 2;
  std::vector<double> v(static_cast<size_t>(batch * c * oh * ow));
  for (long nc = 0; nc < batch * c; ++nc) {
    const double* src = a.data().data() + nc * h * w;
    double* dst = v.data() + nc * oh * ow;
    for (long y = 0; y < oh; ++y)
      for (long x = 0; x < ow; ++x)
        dst[y * ow + x] = 0.25 * (src[2 * y * w + 2 * x] + src[2 * y * w + 2 * x + 1] +
                                  src[(2 * y + 1) * w + 2 * x] +
                                  src[(2 * y + 1) * w + 2 * x + 1]);
  }
  NodePtr an = a.node;
  return finish({batch, c, oh, ow}, std::move(v), "avg_pool2", {a},
                [an, batch, c, h, w, oh, ow](Node& n) {
                  if (!an->requires_grad) return;
                  an->ensure_grad();
                  for (long nc = 0; nc < batch * c; ++nc) {
                    const double* g = n.grad.data() + nc * oh * ow;
                    double* dst = an->grad.data() + nc * h * w;
                    for (long y = 0; y < oh; ++y)
                      for (long x = 0; x < ow; ++x) {
                        double q = 0.25 * g[y * ow + x];
                        dst[2 * y * w + 2 * x] += q;
                        dst[2 * y * w + 2 * x + 1] += q;
                        dst[(2 * y + 1) * w + 2 * x] += q;
                        dst[(2 * y + 1) * w + 2 * x + 1] += q;
                      }
                  }
                });
}

Tensor spatial_mean(const Tensor& a) {
  require(a.rank() == 4, "spatial_mean: expects 4-d tensor");
  long batch = a.dim(0), c = a.dim(1), plane = a.dim(2) * a.dim(3);
  double inv = 1.0 / static_cast<double>(plane);
  std::vector<double> v(static_cast<size_t>(batch * c), 0.0);
  for (long nc = 0; nc < batch * c; ++nc) {
    const double* src = a.data().data() + nc * plane;
    double s = 0.0;
    for (long i = 0; i < plane; ++i) s += src[i];
    v[nc] = s * inv;
  }
  NodePtr an = a.node;
  return finish({batch, c}, std::move(v), "spatial_mean", {a},
                [an, batch, c, plane, inv](Node& n) {
                  if (!an->requires_grad) return;
                  an->ensure_grad();
                  for (long nc = 0; nc < batch * c; ++nc) {
                    double g = n.grad[nc] * inv;
                    double* dst = an->grad.data() + nc * plane;
                    for (long i = 0; i < plane; ++i) dst[i] += g;
                  }
                });
}

Tensor center_channels(const Tensor& a) {
  require(a.rank() == 4, "center_channels: expects 4-d tensor");
  long planes = a.dim(0) * a.dim(1), plane = a.dim(2) * a.dim(3);
  double inv = 1.0 / static_cast<double>(plane);
  std::vector<double> v = a.data();
  for (long nc = 0; nc < planes; ++nc) {
    double* p = v.data() + nc * plane;
    double mu = 0.0;
    for (long i = 0; i < plane; ++i) mu += p[i];
    mu *= inv;
    for (long i = 0; i < plane; ++i) p[i] -= mu;
  }
  NodePtr an = a.node;
  return finish(a.shape(), std::move(v), "center_channels", {a},
                [an, planes, plane, inv](Node& n) {
                  if (!an->requires_grad) return;
                  an->ensure_grad();
                  // the projection is symmetric, so the VJP is itself
                  for (long nc = 0; nc < planes; ++nc) {
                    const double* g = n.grad.data() + nc * plane;
                    double mu = 0.0;
                    for (long i = 0; i < plane; ++i) mu += g[i];
                    mu *= inv;
                    double* dst = an->grad.data() + nc * plane;
                    for (long i = 0; i < plane; ++i) dst[i] += g[i] - mu;
                  }
                });
}

Tensor flatten_rows(const Tensor& a) {
  require(a.rank() >= 2, "flatten_rows: rank must be >= 2");
  long batch = a.dim(0);
  long d = a.numel() / batch;
  std::vector<double> v = a.data();
  NodePtr an = a.node;
  return finish({batch, d}, std::move(v), "flatten_rows", {a}, [an](Node& n) {
    if (!an->requires_grad) return;
    an->ensure_grad();
    for (size_t i = 0; i < n.grad.size(); ++i) an->grad[i] += n.grad[i];
  });
}

Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias) {
  require(x.rank() == 2, "linear: input must be 2-d, got " + shape_str(x.shape()));
  require(weight.rank() == 2 && weight.dim(1) == x.dim(1),
          "linear: weight " + shape_str(weight.shape()) + " incompatible with input " +
              shape_str(x.shape()));
  long batch = x.dim(0), in = x.dim(1), out = weight.dim(0);
  require(bias.rank() == 1 && bias.dim(0) == out,
          "linear: bias " + shape_str(bias.shape()) + " incompatible with out " +
              std::to_string(out));
  const auto& K = kernels::active_ops();
  std::vector<double> v(static_cast<size_t>(batch * out));
  for (long b = 0; b < batch; ++b)
    for (long o = 0; o < out; ++o)
      v[b * out + o] = bias.data()[o] + K.dot(x.data().data() + b * in,
                                              weight.data().data() + o * in, in);
  NodePtr xn = x.node, wn = weight.node, bn = bias.node;
  return finish({batch, out}, std::move(v), "linear", {x, weight, bias},
                [xn, wn, bn, batch, in, out](Node& n) {
                  const auto& K = kernels::active_ops();
                  if (xn->requires_grad) xn->ensure_grad();
                  if (wn->requires_grad) wn->ensure_grad();
                  if (bn->requires_grad) bn->ensure_grad();
                  for (long b = 0; b < batch; ++b) {
                    const double* g = n.grad.data() + b * out;
                    for (long o = 0; o < out; ++o) {
                      if (xn->requires_grad)
                        K.axpy(g[o], wn->value.data() + o * in,
                               xn->grad.data() + b * in, in);
                      if (wn->requires_grad)
                        K.axpy(g[o], xn->value.data() + b * in,
                               wn->grad.data() + o * in, in);
                      if (bn->requires_grad) bn->grad[o] += g[o];
                    }
                  }
                });
}

namespace {
std::pair<long, long> row_view(const Tensor& x, long axis, const char* op) {
  if (x.rank() == 1) return {1, x.dim(0)};
  require(x.rank() == 2 && (axis == 1 || axis == -1),
          std::string(op) + ": expects 1-d or [N,K] with axis 1, got " +
              shape_str(x.shape()));
  return {x.dim(0), x.dim(1)};
}
}  // namespace

Tensor softmax(const Tensor& x, long axis) {
  auto [rows, k] = row_view(x, axis, "softmax");
  require(all_finite(x.data()), "softmax: non-finite input");
  std::vector<double> v(x.data().size());
  for (long r = 0; r < rows; ++r) {
    const double* src = x.data().data() + r * k;
    double* dst = v.data() + r * k;
    double m = src[0];
    for (long i = 1; i < k; ++i) m = std::max(m, src[i]);
    double s = 0.0;
    for (long i = 0; i < k; ++i) {
      dst[i] = std::exp(src[i] - m);
      s += dst[i];
    }
    double inv = 1.0 / s;
    for (long i = 0; i < k; ++i) dst[i] *= inv;
  }
  NodePtr xn = x.node;
  long rows_c = rows, k_c = k;
  return finish(x.shape(), std::move(v), "softmax", {x}, [xn, rows_c, k_c](Node& n) {
    if (!xn->requires_grad) return;
    xn->ensure_grad();
    for (long r = 0; r < rows_c; ++r) {
      const double* y = n.value.data() + r * k_c;
      const double* gy = n.grad.data() + r * k_c;
      double s = 0.0;
      for (long i = 0; i < k_c; ++i) s += gy[i] * y[i];
      for (long i = 0; i < k_c; ++i) xn->grad[r * k_c + i] += y[i] * (gy[i] - s);
    }
  });
}

Tensor l2_norm(const Tensor& x, long axis) {
  auto [rows, k] = row_view(x, axis, "l2_norm");
  std::vector<double> v(static_cast<size_t>(rows));
  for (long r = 0; r < rows; ++r) {
    double s = 0.0;
    const double* src = x.data().data() + r * k;
    for (long i = 0; i < k; ++i) s += src[i] * src[i];
    v[r] = std::sqrt(s);
  }
  Shape out_shape = x.rank() == 1 ? Shape{} : Shape{rows};
  NodePtr xn = x.node;
  long rows_c = rows, k_c = k;
  return finish(out_shape, std::move(v), "l2_norm", {x}, [xn, rows_c, k_c](Node& n) {
    if (!xn->requires_grad) return;
    xn->ensure_grad();
    for (long r = 0; r < rows_c; ++r) {
      double s = n.value[r];
      if (s == 0.0) continue;
      double g = n.grad[r] / s;
      for (long i = 0; i < k_c; ++i) xn->grad[r * k_c + i] += g * xn->value[r * k_c + i];
    }
  });
}

Tensor div_rows(const Tensor& x, const Tensor& s) {
  require(x.rank() == 2, "div_rows: x must be 2-d");
  require(s.rank() == 1 && s.dim(0) == x.dim(0),
          "div_rows: scale " + shape_str(s.shape()) + " incompatible with " +
              shape_str(x.shape()));
  long rows = x.dim(0), k = x.dim(1);
  std::vector<double> v(x.data().size());
  for (long r = 0; r < rows; ++r) {
    double inv = 1.0 / s.data()[r];
    for (long i = 0; i < k; ++i) v[r * k + i] = x.data()[r * k + i] * inv;
  }
  NodePtr xn = x.node, sn = s.node;
  return finish(x.shape(), std::move(v), "div_rows", {x, s},
                [xn, sn, rows, k](Node& n) {
                  if (xn->requires_grad) xn->ensure_grad();
                  if (sn->requires_grad) sn->ensure_grad();
                  for (long r = 0; r < rows; ++r) {
                    double sv = sn->value[r];
                    double inv = 1.0 / sv;
                    for (long i = 0; i < k; ++i) {
                      double g = n.grad[r * k + i];
                      if (xn->requires_grad) xn->grad[r * k + i] += g * inv;
                      if (sn->requires_grad)
                        sn->grad[r] -= g * n.value[r * k + i] * inv;
                    }
                  }
                });
}

Tensor resolving_loss_rows(const Tensor& omega, const std::vector<long>& c,
                           const std::vector<double>& theta, double eps_floor) {
  require(omega.rank() == 2, "resolving_loss: omega must be [B,n]");
  long batch = omega.dim(0), n = omega.dim(1);
  require(n >= 2, "resolving_loss: n must be >= 2");
  require(static_cast<long>(c.size()) == batch && static_cast<long>(theta.size()) == batch,
          "resolving_loss: c/theta length must match batch");
  for (long b = 0; b < batch; ++b)
    require(c[b] >= 0 && c[b] < n, "resolving_loss: method index " +
                                       std::to_string(c[b]) + " out of range [0," +
                                       std::to_string(n) + ")");
  std::vector<double> v(static_cast<size_t>(batch));
  std::vector<char> uniform(static_cast<size_t>(batch), 0);
  for (long b = 0; b < batch; ++b) {
    double acc = 0.0;
    if (theta[b] == 1.0 / static_cast<double>(n)) {
      // theta = 1/n weighs every index identically; summing the logs in
      // sorted order makes the value bit-invariant under permutations of
      // omega and under the (immaterial) choice of c
      uniform[b] = 1;
      std::vector<double> logs(static_cast<size_t>(n));
      for (long i = 0; i < n; ++i)
        logs[i] = std::log(omega.data()[b * n + i] + eps_floor);
      std::sort(logs.begin(), logs.end());
      for (double l : logs) acc += theta[b] * l;
    } else {
      double off = (1.0 - theta[b]) / static_cast<double>(n - 1);
      for (long i = 0; i < n; ++i) {
        double w = (i == c[b]) ? theta[b] : off;
        acc += w * std::log(omega.data()[b * n + i] + eps_floor);
      }
    }
    v[b] = -acc;
  }
  NodePtr on = omega.node;
  return finish({batch}, std::move(v), "resolving_loss", {omega},
                [on, c, theta, uniform, eps_floor, batch, n](Node& nd) {
                  if (!on->requires_grad) return;
                  on->ensure_grad();
                  for (long b = 0; b < batch; ++b) {
                    double off = (1.0 - theta[b]) / static_cast<double>(n - 1);
                    double g = nd.grad[b];
                    for (long i = 0; i < n; ++i) {
                      double w = (uniform[b] || i == c[b]) ? theta[b] : off;
                      on->grad[b * n + i] -= g * w / (on->value[b * n + i] + eps_floor);
                    }
                  }
                });
}

Tensor uniform_tensor(Shape shape, Rng& rng, double lo, double hi,
                      bool requires_grad) {
  std::vector<double> v(static_cast<size_t>(shape_numel(shape)));
  for (double& x : v) x = rng.uniform(lo, hi);
  Tensor t(std::move(shape), std::move(v));
  if (requires_grad) t.set_requires_grad(true);
  return t;
}

}  // namespace idrt
