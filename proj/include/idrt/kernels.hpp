#pragma once

#include <cstddef>

namespace idrt::kernels {

// One-image convolution geometry: input (cin,h,w), kernel (cout,cin,k,k),
// output (cout,hout,wout). Cross-correlation semantics.
struct ConvDims {
  long cin = 0, h = 0, w = 0;
  long cout = 0, k = 0;
  long stride = 1, pad = 0;
  long hout = 0, wout = 0;
};

// Inner-loop kernel table. Every entry has a scalar reference implementation;
// vector variants must match it to tight tolerance (see test_kernels).
struct Ops {
  const char* name;
  void (*conv2d_fwd)(const double* in, const double* ker, const double* bias,
                     double* out, const ConvDims& d);
  // Both backward kernels accumulate into their output buffers.
  void (*conv2d_bwd_input)(const double* gout, const double* ker, double* gin,
                           const ConvDims& d);
  void (*conv2d_bwd_kernel)(const double* in, const double* gout, double* gker,
                            const ConvDims& d);
  void (*axpy)(double a, const double* x, double* y, size_t n);  // y += a*x
  double (*dot)(const double* a, const double* b, size_t n);
  void (*mul)(const double* a, const double* b, double* out, size_t n);
  void (*leaky_relu_fwd)(const double* x, double* y, double slope, size_t n);
  // gx += gy * (x > 0 ? 1 : slope)
  void (*leaky_relu_bwd)(const double* x, const double* gy, double* gx,
                         double slope, size_t n);
};

const Ops& scalar_ops();
bool avx2_available();
const Ops& avx2_ops();  // valid only when avx2_available()

// Runtime selection: AVX2 when the CPU supports it, unless the environment
// variable IDRT_KERNELS=scalar forces the reference path.
const Ops& active_ops();

}  // namespace idrt::kernels
