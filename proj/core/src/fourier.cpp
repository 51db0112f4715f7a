#include "repr_robust/fourier.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "repr_robust/error.hpp"

namespace repr_robust {

namespace {

bool power_of_two(std::size_t n) { return n != 0 && (n & (n - 1)) == 0; }

void fft_radix2(std::vector<std::complex<double>>& a, bool inverse) {
  const std::size_t n = a.size();
  for (std::size_t i = 1, j = 0; i < n; ++i) {
    std::size_t bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j ^= bit;
    if (i < j) std::swap(a[i], a[j]);
  }
  for (std::size_t len = 2; len <= n; len <<= 1) {
    const double ang = 2.0 * std::numbers::pi / static_cast<double>(len) * (inverse ? 1.0 : -1.0);
    for (std::size_t i = 0; i < n; i += len) {
      for (std::size_t k = 0; k < len / 2; ++k) {
        const std::complex<double> w = std::polar(1.0, ang * static_cast<double>(k));
        const auto u = a[i + k], v = a[i + k + len / 2] * w;
        a[i + k] = u + v;
        a[i + k + len / 2] = u - v;
      }
    }
  }
}

void dft_direct(std::vector<std::complex<double>>& a, bool inverse) {
  const std::size_t n = a.size();
  std::vector<std::complex<double>> out(n);
  const double sign = inverse ? 1.0 : -1.0;
  for (std::size_t k = 0; k < n; ++k) {
    std::complex<double> s = 0.0;
    for (std::size_t t = 0; t < n; ++t) {
      const double ang = sign * 2.0 * std::numbers::pi * static_cast<double>((k * t) % n) / static_cast<double>(n);
      s += a[t] * std::polar(1.0, ang);
    }
    out[k] = s;
  }
  a = std::move(out);
}

// Signed frequency of index u in a length-n transform.
double centered(std::size_t u, std::size_t n) {
  return u < (n + 1) / 2 ? static_cast<double>(u) : static_cast<double>(u) - static_cast<double>(n);
}

void lowpass_plane(std::span<double> plane, std::size_t side, double radius) {
  std::vector<std::complex<double>> v(plane.begin(), plane.end());
  dft2(v, side, false);
  for (std::size_t r = 0; r < side; ++r) {
    for (std::size_t c = 0; c < side; ++c) {
      if (std::hypot(centered(r, side), centered(c, side)) > radius) v[r * side + c] = 0.0;
    }
  }
  dft2(v, side, true);
  for (std::size_t i = 0; i < plane.size(); ++i) plane[i] = v[i].real();
}

void check_fraction(double f) {
  if (!(f > 0.0 && f <= std::numbers::sqrt2 / 2.0 + 1e-12)) {
    throw DomainError("lowpass: radius fraction must lie in (0, sqrt(2)/2]");
  }
}

}  // namespace

void dft(std::vector<std::complex<double>>& v, bool inverse) {
  if (v.empty()) return;
  if (power_of_two(v.size())) fft_radix2(v, inverse);
  else dft_direct(v, inverse);
  if (inverse) {
    const double scale = 1.0 / static_cast<double>(v.size());
    for (auto& x : v) x *= scale;
  }
}

void dft2(std::vector<std::complex<double>>& v, std::size_t side, bool inverse) {
  if (v.size() != side * side) throw ShapeError("dft2: buffer does not hold a square image");
  std::vector<std::complex<double>> line(side);
  for (std::size_t r = 0; r < side; ++r) {
    std::copy_n(v.begin() + static_cast<std::ptrdiff_t>(r * side), side, line.begin());
    dft(line, inverse);
    std::copy(line.begin(), line.end(), v.begin() + static_cast<std::ptrdiff_t>(r * side));
  }
  for (std::size_t c = 0; c < side; ++c) {
    for (std::size_t r = 0; r < side; ++r) line[r] = v[r * side + c];
    dft(line, inverse);
    for (std::size_t r = 0; r < side; ++r) v[r * side + c] = line[r];
  }
}

Tensor lowpass_unclipped(const Tensor& image, double radius_fraction) {
  check_fraction(radius_fraction);
  const std::size_t rank = image.rank();
  if (rank != 2 && rank != 3) throw ShapeError("lowpass: expected [side, side] or [channels, side, side], got " + to_string(image.shape()));
  const std::size_t h = image.dim(rank - 2), w = image.dim(rank - 1);
  if (h != w) throw ShapeError("lowpass: image " + to_string(image.shape()) + " is not square");
  Tensor out = image;
  const std::size_t plane = h * w;
  for (std::size_t c = 0; c < image.size() / plane; ++c) {
    lowpass_plane(out.data().subspan(c * plane, plane), h, radius_fraction * static_cast<double>(h));
  }
  return out;
}

Tensor lowpass(const Tensor& image, double radius_fraction) {
  Tensor out = lowpass_unclipped(image, radius_fraction);
  for (double& v : out.data()) v = std::clamp(v, 0.0, 1.0);
  return out;
}

Tensor lowpass_rows(const Tensor& images, std::size_t side, std::size_t channels, double radius_fraction) {
  if (images.rank() != 2 || images.dim(1) != channels * side * side) {
    throw ShapeError("lowpass: rows " + to_string(images.shape()) + " are not " + std::to_string(channels) + "x" +
                     std::to_string(side) + "x" + std::to_string(side) + " images");
  }
  Tensor out(images.shape());
  for (std::size_t r = 0; r < images.dim(0); ++r) {
    const Tensor f = lowpass(images.row(r).reshaped({channels, side, side}), radius_fraction);
    std::copy(f.data().begin(), f.data().end(), out.row_span(r).begin());
  }
  return out;
}

}  // namespace repr_robust
