#pragma once

// Complex images stored as separate re/im planes and a unitary 2-D FFT.
//
// Convention used everywhere in this project: the transform is centered,
// i.e. the zero-frequency coefficient sits at index (H/2, W/2). Central
// k-space rows are therefore literal central rows of the array, which is
// what the sampling masks assume. Normalization is 1/sqrt(HW) in both
// directions, so fft2 and ifft2 are unitary and adjoint to each other.

#include <array>
#include <complex>
#include <mutex>
#include <vector>

#include "pigan/tensor.hpp"

namespace pigan {

struct ComplexImage {
  std::size_t height = 0, width = 0;
  Tensor re, im;  // both [H, W]

  ComplexImage() = default;
  ComplexImage(std::size_t h, std::size_t w)
      : height(h), width(w), re(Shape{h, w}), im(Shape{h, w}) {}

  std::complex<double> operator()(std::size_t i, std::size_t j) const {
    return {re.at(i, j), im.at(i, j)};
  }
  void set(std::size_t i, std::size_t j, std::complex<double> v) {
    re.at(i, j) = v.real();
    im.at(i, j) = v.imag();
  }

  bool same_shape(const ComplexImage& o) const {
    return height == o.height && width == o.width;
  }
  bool operator==(const ComplexImage& o) const { return re == o.re && im == o.im; }
};

inline bool is_power_of_two(std::size_t n) { return n > 0 && (n & (n - 1)) == 0; }

namespace detail {

// Twiddle factors for a radix-2 pass, cached per transform length.
inline const std::vector<double>& twiddle_table(std::size_t n, bool imag_part) {
  static std::array<std::vector<double>, 32> cos_tab, sin_tab;
  static std::mutex mu;
  const int lg = std::countr_zero(n);
  std::lock_guard<std::mutex> lock(mu);
  if (cos_tab[lg].empty()) {
    cos_tab[lg].resize(n / 2 == 0 ? 1 : n / 2);
    sin_tab[lg].resize(n / 2 == 0 ? 1 : n / 2);
    for (std::size_t k = 0; k < n / 2; ++k) {
      const double ang = -2.0 * M_PI * static_cast<double>(k) / static_cast<double>(n);
      cos_tab[lg][k] = std::cos(ang);
      sin_tab[lg][k] = std::sin(ang);
    }
  }
  return imag_part ? sin_tab[lg] : cos_tab[lg];
}

// In-place iterative radix-2 Cooley-Tukey, not normalized, DC at index 0.
inline void fft_pow2(double* re, double* im, std::size_t n, bool inverse) {
  if (n <= 1) return;
  // Bit reversal permutation.
  for (std::size_t i = 1, j = 0; i < n; ++i) {
    std::size_t bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j ^= bit;
    if (i < j) {
      std::swap(re[i], re[j]);
      std::swap(im[i], im[j]);
    }
  }
  const std::vector<double>& ctab = twiddle_table(n, false);
  const std::vector<double>& stab = twiddle_table(n, true);
  for (std::size_t len = 2; len <= n; len <<= 1) {
    const std::size_t step = n / len;
    for (std::size_t base = 0; base < n; base += len) {
      for (std::size_t k = 0; k < len / 2; ++k) {
        const double wr = ctab[k * step];
        const double wi = inverse ? -stab[k * step] : stab[k * step];
        const std::size_t a = base + k, b = base + k + len / 2;
        const double tr = re[b] * wr - im[b] * wi;
        const double ti = re[b] * wi + im[b] * wr;
        re[b] = re[a] - tr;
        im[b] = im[a] - ti;
        re[a] += tr;
        im[a] += ti;
      }
    }
  }
}

inline void check_fft_extents(std::size_t h, std::size_t w) {
  if (!is_power_of_two(h) || !is_power_of_two(w))
    throw ShapeError("fft2 requires power-of-two extents, got " + std::to_string(h) + "x" +
                     std::to_string(w));
}

// Centered unitary transform on raw planes: shift, row/column FFTs, shift,
// scale by 1/sqrt(HW). For even extents fftshift equals ifftshift.
inline void fft2_planes(const double* in_re, const double* in_im, double* out_re,
                        double* out_im, std::size_t h, std::size_t w, bool inverse) {
  check_fft_extents(h, w);
  const std::size_t hh = h / 2, hw = w / 2;
  // Input shift into the output buffers.
  for (std::size_t i = 0; i < h; ++i) {
    const std::size_t si = (i + hh) % h;
    for (std::size_t j = 0; j < w; ++j) {
      const std::size_t sj = (j + hw) % w;
      out_re[i * w + j] = in_re[si * w + sj];
      out_im[i * w + j] = in_im[si * w + sj];
    }
  }
  // Rows.
  for (std::size_t i = 0; i < h; ++i) fft_pow2(out_re + i * w, out_im + i * w, w, inverse);
  // Columns through a scratch line.
  std::vector<double> cr(h), ci(h);
  for (std::size_t j = 0; j < w; ++j) {
    for (std::size_t i = 0; i < h; ++i) {
      cr[i] = out_re[i * w + j];
      ci[i] = out_im[i * w + j];
    }
    fft_pow2(cr.data(), ci.data(), h, inverse);
    for (std::size_t i = 0; i < h; ++i) {
      out_re[i * w + j] = cr[i];
      out_im[i * w + j] = ci[i];
    }
  }
  // Output shift (in place, even extents: swap of half-planes) and scaling.
  const double scale = 1.0 / std::sqrt(static_cast<double>(h) * static_cast<double>(w));
  std::vector<double> tr(h * w), ti(h * w);
  for (std::size_t i = 0; i < h; ++i) {
    const std::size_t si = (i + hh) % h;
    for (std::size_t j = 0; j < w; ++j) {
      const std::size_t sj = (j + hw) % w;
      tr[i * w + j] = out_re[si * w + sj] * scale;
      ti[i * w + j] = out_im[si * w + sj] * scale;
    }
  }
  std::copy(tr.begin(), tr.end(), out_re);
  std::copy(ti.begin(), ti.end(), out_im);
}

}  // namespace detail

inline ComplexImage fft2(const ComplexImage& z) {
  ComplexImage out(z.height, z.width);
  detail::fft2_planes(z.re.data(), z.im.data(), out.re.data(), out.im.data(), z.height,
                      z.width, false);
  return out;
}

inline ComplexImage ifft2(const ComplexImage& z) {
  ComplexImage out(z.height, z.width);
  detail::fft2_planes(z.re.data(), z.im.data(), out.re.data(), out.im.data(), z.height,
                      z.width, true);
  return out;
}

// ---------------------------------------------------------------------------
// Small pointwise helpers shared by the encoding operators.

inline ComplexImage cmul(const ComplexImage& a, const ComplexImage& b) {
  require_same_shape(a.re, b.re, "cmul");
  ComplexImage out(a.height, a.width);
  for (std::size_t i = 0; i < a.re.size(); ++i) {
    out.re[i] = a.re[i] * b.re[i] - a.im[i] * b.im[i];
    out.im[i] = a.re[i] * b.im[i] + a.im[i] * b.re[i];
  }
  return out;
}

// a * conj(b)
inline ComplexImage cmul_conj(const ComplexImage& a, const ComplexImage& b) {
  require_same_shape(a.re, b.re, "cmul_conj");
  ComplexImage out(a.height, a.width);
  for (std::size_t i = 0; i < a.re.size(); ++i) {
    out.re[i] = a.re[i] * b.re[i] + a.im[i] * b.im[i];
    out.im[i] = a.im[i] * b.re[i] - a.re[i] * b.im[i];
  }
  return out;
}

inline ComplexImage cadd(const ComplexImage& a, const ComplexImage& b) {
  require_same_shape(a.re, b.re, "cadd");
  ComplexImage out(a.height, a.width);
  for (std::size_t i = 0; i < a.re.size(); ++i) {
    out.re[i] = a.re[i] + b.re[i];
    out.im[i] = a.im[i] + b.im[i];
  }
  return out;
}

inline ComplexImage csub(const ComplexImage& a, const ComplexImage& b) {
  require_same_shape(a.re, b.re, "csub");
  ComplexImage out(a.height, a.width);
  for (std::size_t i = 0; i < a.re.size(); ++i) {
    out.re[i] = a.re[i] - b.re[i];
    out.im[i] = a.im[i] - b.im[i];
  }
  return out;
}

inline ComplexImage cscale(const ComplexImage& a, double s) {
  ComplexImage out(a.height, a.width);
  for (std::size_t i = 0; i < a.re.size(); ++i) {
    out.re[i] = a.re[i] * s;
    out.im[i] = a.im[i] * s;
  }
  return out;
}

// Complex inner product <a, b> = sum a * conj(b).
inline std::complex<double> cdot(const ComplexImage& a, const ComplexImage& b) {
  require_same_shape(a.re, b.re, "cdot");
  double re = 0.0, im = 0.0;
  for (std::size_t i = 0; i < a.re.size(); ++i) {
    re += a.re[i] * b.re[i] + a.im[i] * b.im[i];
    im += a.im[i] * b.re[i] - a.re[i] * b.im[i];
  }
  return {re, im};
}

inline double cnorm(const ComplexImage& a) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.re.size(); ++i) s += a.re[i] * a.re[i] + a.im[i] * a.im[i];
  return std::sqrt(s);
}

inline Tensor magnitude(const ComplexImage& a) {
  Tensor out(Shape{a.height, a.width});
  for (std::size_t i = 0; i < out.size(); ++i)
    out[i] = std::hypot(a.re[i], a.im[i]);
  return out;
}

}  // namespace pigan
