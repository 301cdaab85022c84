#include "idrt/kernels.hpp"

namespace idrt::kernels {
namespace {

void conv2d_fwd_scalar(const double* in, const double* ker, const double* bias,
                       double* out, const ConvDims& d) {
  for (long co = 0; co < d.cout; ++co) {
    const double* kco = ker + co * d.cin * d.k * d.k;
    double* oco = out + co * d.hout * d.wout;
    for (long oy = 0; oy < d.hout; ++oy) {
      for (long ox = 0; ox < d.wout; ++ox) {
        double acc = bias ? bias[co] : 0.0;
        for (long ci = 0; ci < d.cin; ++ci) {
          const double* ich = in + ci * d.h * d.w;
          const double* kch = kco + ci * d.k * d.k;
          for (long ky = 0; ky < d.k; ++ky) {
            long iy = oy * d.stride + ky - d.pad;
            if (iy < 0 || iy >= d.h) continue;
            for (long kx = 0; kx < d.k; ++kx) {
              long ix = ox * d.stride + kx - d.pad;
              if (ix < 0 || ix >= d.w) continue;
              acc += ich[iy * d.w + ix] * kch[ky * d.k + kx];
            }
          }
        }
        oco[oy * d.wout + ox] = acc;
      }
    }
  }
}

void conv2d_bwd_input_scalar(const double* gout, const double* ker, double* gin,
                             const ConvDims& d) {
  for (long co = 0; co < d.cout; ++co) {
    const double* kco = ker + co * d.cin * d.k * d.k;
    const double* gco = gout + co * d.hout * d.wout;
    for (long oy = 0; oy < d.hout; ++oy) {
      for (long ox = 0; ox < d.wout; ++ox) {
        double g = gco[oy * d.wout + ox];
        for (long ci = 0; ci < d.cin; ++ci) {
          double* ich = gin + ci * d.h * d.w;
          const double* kch = kco + ci * d.k * d.k;
          for (long ky = 0; ky < d.k; ++ky) {
            long iy = oy * d.stride + ky - d.pad;
            if (iy < 0 || iy >= d.h) continue;
            for (long kx = 0; kx < d.k; ++kx) {
              long ix = ox * d.stride + kx - d.pad;
              if (ix < 0 || ix >= d.w) continue;
              ich[iy * d.w + ix] += g * kch[ky * d.k + kx];
            }
          }
        }
      }
    }
  }
}

void conv2d_bwd_kernel_scalar(const double* in, const double* gout,
                              double* gker, const ConvDims& d) {
  for (long co = 0; co < d.cout; ++co) {
    const double* gco = gout + co * d.hout * d.wout;
    double* kco = gker + co * d.cin * d.k * d.k;
    for (long ci = 0; ci < d.cin; ++ci) {
      const double* ich = in + ci * d.h * d.w;
      double* kch = kco + ci * d.k * d.k;
      for (long ky = 0; ky < d.k; ++ky) {
        for (long kx = 0; kx < d.k; ++kx) {
          double acc = 0.0;
          for (long oy = 0; oy < d.hout; ++oy) {
            long iy = oy * d.stride + ky - d.pad;
            if (iy < 0 || iy >= d.h) continue;
            for (long ox = 0; ox < d.wout; ++ox) {
              long ix = ox * d.stride + kx - d.pad;
              if (ix < 0 || ix >= d.w) continue;
              acc += ich[iy * d.w + ix] * gco[oy * d.wout + ox];
            }
          }
          kch[ky * d.k + kx] += acc;
        }
      }
    }
  }
}

void axpy_scalar(double a, const double* x, double* y, size_t n) {
  for (size_t i = 0; i < n; ++i) y[i] += a * x[i];
}

double dot_scalar(const double* a, const double* b, size_t n) {
  double acc = 0.0;
  for (size_t i = 0; i < n; ++i) acc += a[i] * b[i];
  return acc;
}

void mul_scalar(const double* a, const double* b, double* out, size_t n) {
  for (size_t i = 0; i < n; ++i) out[i] = a[i] * b[i];
}

void leaky_relu_fwd_scalar(const double* x, double* y, double slope, size_t n) {
  for (size_t i = 0; i < n; ++i) y[i] = x[i] > 0.0 ? x[i] : slope * x[i];
}

void leaky_relu_bwd_scalar(const double* x, const double* gy, double* gx,
                           double slope, size_t n) {
  for (size_t i = 0; i < n; ++i) gx[i] += gy[i] * (x[i] > 0.0 ? 1.0 : slope);
}

}  // namespace

const Ops& scalar_ops() {
  static const Ops ops = {
      "scalar",
      conv2d_fwd_scalar,
      conv2d_bwd_input_scalar,
      conv2d_bwd_kernel_scalar,
      axpy_scalar,
      dot_scalar,
      mul_scalar,
      leaky_relu_fwd_scalar,
      leaky_relu_bwd_scalar,
  };
  return ops;
}

}  // namespace idrt::kernels
