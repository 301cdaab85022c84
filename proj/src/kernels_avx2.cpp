// AVX2 variants of the inner-loop kernels. Compiled with -mavx2 -mfma in its
// own translation unit; callers must gate on avx2_available().

#include "idrt/kernels.hpp"

#if defined(__x86_64__) || defined(_M_X64)
#define IDRT_HAVE_AVX2_BUILD 1
#include <immintrin.h>
#else
#define IDRT_HAVE_AVX2_BUILD 0
#endif

namespace idrt::kernels {

#if IDRT_HAVE_AVX2_BUILD

namespace {

inline double conv_point(const double* in, const double* kco, double bias,
                         long oy, long ox, const ConvDims& d) {
  double acc = bias;
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
  return acc;
}

void conv2d_fwd_avx2(const double* in, const double* ker, const double* bias,
                     double* out, const ConvDims& d) {
  if (d.stride != 1) {
    scalar_ops().conv2d_fwd(in, ker, bias, out, d);
    return;
  }
  // interior ox: every kx tap stays inside the row
  long lo = d.pad < d.wout ? d.pad : d.wout;
  long hi = d.w - d.k + d.pad + 1;
  if (hi > d.wout) hi = d.wout;
  if (hi < lo) hi = lo;
  for (long co = 0; co < d.cout; ++co) {
    const double* kco = ker + co * d.cin * d.k * d.k;
    double* oco = out + co * d.hout * d.wout;
    double b = bias ? bias[co] : 0.0;
    for (long oy = 0; oy < d.hout; ++oy) {
      double* orow = oco + oy * d.wout;
      for (long ox = 0; ox < lo; ++ox) orow[ox] = conv_point(in, kco, b, oy, ox, d);
      long ox = lo;
      for (; ox + 4 <= hi; ox += 4) {
        __m256d acc = _mm256_set1_pd(b);
        for (long ci = 0; ci < d.cin; ++ci) {
          const double* ich = in + ci * d.h * d.w;
          const double* kch = kco + ci * d.k * d.k;
          for (long ky = 0; ky < d.k; ++ky) {
            long iy = oy + ky - d.pad;
            if (iy < 0 || iy >= d.h) continue;
            const double* irow = ich + iy * d.w + ox - d.pad;
            const double* krow = kch + ky * d.k;
            for (long kx = 0; kx < d.k; ++kx) {
              acc = _mm256_fmadd_pd(_mm256_loadu_pd(irow + kx),
                                    _mm256_set1_pd(krow[kx]), acc);
            }
          }
        }
        _mm256_storeu_pd(orow + ox, acc);
      }
      for (; ox < d.wout; ++ox) orow[ox] = conv_point(in, kco, b, oy, ox, d);
    }
  }
}

inline void bwd_input_point(const double* gout, const double* ker, double* gin,
                            long ci, long iy, long ix, const ConvDims& d) {
  double acc = 0.0;
  for (long co = 0; co < d.cout; ++co) {
    const double* gco = gout + co * d.hout * d.wout;
    const double* kch = ker + (co * d.cin + ci) * d.k * d.k;
    for (long ky = 0; ky < d.k; ++ky) {
      long oy = iy - ky + d.pad;
      if (oy < 0 || oy >= d.hout) continue;
      for (long kx = 0; kx < d.k; ++kx) {
        long ox = ix - kx + d.pad;
        if (ox < 0 || ox >= d.wout) continue;
        acc += gco[oy * d.wout + ox] * kch[ky * d.k + kx];
      }
    }
  }
  gin[ci * d.h * d.w + iy * d.w + ix] += acc;
}

void conv2d_bwd_input_avx2(const double* gout, const double* ker, double* gin,
                           const ConvDims& d) {
  if (d.stride != 1) {
    scalar_ops().conv2d_bwd_input(gout, ker, gin, d);
    return;
  }
  long lo = d.k - 1 - d.pad;
  if (lo < 0) lo = 0;
  long hi = d.wout - d.pad;
  if (hi > d.w) hi = d.w;
  if (hi < lo) hi = lo;
  for (long ci = 0; ci < d.cin; ++ci) {
    double* grow_base = gin + ci * d.h * d.w;
    for (long iy = 0; iy < d.h; ++iy) {
      double* grow = grow_base + iy * d.w;
      for (long ix = 0; ix < lo; ++ix) bwd_input_point(gout, ker, gin, ci, iy, ix, d);
      long ix = lo;
      for (; ix + 4 <= hi; ix += 4) {
        __m256d acc = _mm256_loadu_pd(grow + ix);
        for (long co = 0; co < d.cout; ++co) {
          const double* gco = gout + co * d.hout * d.wout;
          const double* kch = ker + (co * d.cin + ci) * d.k * d.k;
          for (long ky = 0; ky < d.k; ++ky) {
            long oy = iy - ky + d.pad;
            if (oy < 0 || oy >= d.hout) continue;
            const double* gr = gco + oy * d.wout + ix + d.pad;
            const double* krow = kch + ky * d.k;
            for (long kx = 0; kx < d.k; ++kx) {
              acc = _mm256_fmadd_pd(_mm256_loadu_pd(gr - kx),
                                    _mm256_set1_pd(krow[kx]), acc);
            }
          }
        }
        _mm256_storeu_pd(grow + ix, acc);
      }
      for (; ix < d.w; ++ix) bwd_input_point(gout, ker, gin, ci, iy, ix, d);
    }
  }
}

inline double hsum(__m256d v) {
  __m128d lo = _mm256_castpd256_pd128(v);
  __m128d hi = _mm256_extractf128_pd(v, 1);
  lo = _mm_add_pd(lo, hi);
  return _mm_cvtsd_f64(_mm_add_sd(lo, _mm_unpackhi_pd(lo, lo)));
}

void conv2d_bwd_kernel_avx2(const double* in, const double* gout, double* gker,
                            const ConvDims& d) {
  if (d.stride != 1) {
    scalar_ops().conv2d_bwd_kernel(in, gout, gker, d);
    return;
  }
  for (long co = 0; co < d.cout; ++co) {
    const double* gco = gout + co * d.hout * d.wout;
    double* kco = gker + co * d.cin * d.k * d.k;
    for (long ci = 0; ci < d.cin; ++ci) {
      const double* ich = in + ci * d.h * d.w;
      double* kch = kco + ci * d.k * d.k;
      for (long ky = 0; ky < d.k; ++ky) {
        for (long kx = 0; kx < d.k; ++kx) {
          long ox_lo = d.pad - kx;
          if (ox_lo < 0) ox_lo = 0;
          long ox_hi = d.w - kx + d.pad;
          if (ox_hi > d.wout) ox_hi = d.wout;
          __m256d vacc = _mm256_setzero_pd();
          double sacc = 0.0;
          for (long oy = 0; oy < d.hout; ++oy) {
            long iy = oy + ky - d.pad;
            if (iy < 0 || iy >= d.h) continue;
            const double* irow = ich + iy * d.w + kx - d.pad;
            const double* grow = gco + oy * d.wout;
            long ox = ox_lo;
            for (; ox + 4 <= ox_hi; ox += 4) {
              vacc = _mm256_fmadd_pd(_mm256_loadu_pd(irow + ox),
                                     _mm256_loadu_pd(grow + ox), vacc);
            }
            for (; ox < ox_hi; ++ox) sacc += irow[ox] * grow[ox];
          }
          kch[ky * d.k + kx] += hsum(vacc) + sacc;
        }
      }
    }
  }
}

void axpy_avx2(double a, const double* x, double* y, size_t n) {
  __m256d va = _mm256_set1_pd(a);
  size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    _mm256_storeu_pd(y + i, _mm256_fmadd_pd(va, _mm256_loadu_pd(x + i),
                                            _mm256_loadu_pd(y + i)));
  }
  for (; i < n; ++i) y[i] += a * x[i];
}

double dot_avx2(const double* a, const double* b, size_t n) {
  __m256d vacc = _mm256_setzero_pd();
  size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    vacc = _mm256_fmadd_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i), vacc);
  }
  double acc = hsum(vacc);
  for (; i < n; ++i) acc += a[i] * b[i];
  return acc;
}

void mul_avx2(const double* a, const double* b, double* out, size_t n) {
  size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    _mm256_storeu_pd(out + i,
                     _mm256_mul_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i)));
  }
  for (; i < n; ++i) out[i] = a[i] * b[i];
}

void leaky_relu_fwd_avx2(const double* x, double* y, double slope, size_t n) {
  __m256d vs = _mm256_set1_pd(slope);
  __m256d zero = _mm256_setzero_pd();
  size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    __m256d v = _mm256_loadu_pd(x + i);
    __m256d mask = _mm256_cmp_pd(v, zero, _CMP_GT_OQ);
    _mm256_storeu_pd(y + i, _mm256_blendv_pd(_mm256_mul_pd(v, vs), v, mask));
  }
  for (; i < n; ++i) y[i] = x[i] > 0.0 ? x[i] : slope * x[i];
}

void leaky_relu_bwd_avx2(const double* x, const double* gy, double* gx,
                         double slope, size_t n) {
  __m256d vs = _mm256_set1_pd(slope);
  __m256d one = _mm256_set1_pd(1.0);
  __m256d zero = _mm256_setzero_pd();
  size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    __m256d v = _mm256_loadu_pd(x + i);
    __m256d mask = _mm256_cmp_pd(v, zero, _CMP_GT_OQ);
    __m256d f = _mm256_blendv_pd(vs, one, mask);
    _mm256_storeu_pd(gx + i, _mm256_fmadd_pd(_mm256_loadu_pd(gy + i), f,
                                             _mm256_loadu_pd(gx + i)));
  }
  for (; i < n; ++i) gx[i] += gy[i] * (x[i] > 0.0 ? 1.0 : slope);
}

}  // namespace

const Ops& avx2_ops() {
  static const Ops ops = {
      "avx2",
      conv2d_fwd_avx2,
      conv2d_bwd_input_avx2,
      conv2d_bwd_kernel_avx2,
      axpy_avx2,
      dot_avx2,
      mul_avx2,
      leaky_relu_fwd_avx2,
      leaky_relu_bwd_avx2,
  };
  return ops;
}

#else  // !IDRT_HAVE_AVX2_BUILD

const Ops& avx2_ops() { return scalar_ops(); }

#endif

}  // namespace idrt::kernels
