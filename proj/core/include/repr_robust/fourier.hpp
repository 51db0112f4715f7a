#pragma once

#include <complex>
#include <cstddef>
#include <vector>

#include "repr_robust/tensor.hpp"

namespace repr_robust {

// Radius 50 on 224-pixel images, scaled to a fraction of the side.
inline constexpr double kDefaultLowpassFraction = 50.0 / 224.0;

// In-place 1-D DFT (radix-2 for powers of two, direct otherwise).
// `inverse` uses the conjugate kernel and divides by the length.
void dft(std::vector<std::complex<double>>& v, bool inverse);

// 2-D DFT of a side x side row-major array.
void dft2(std::vector<std::complex<double>>& v, std::size_t side, bool inverse);

// Keeps the Fourier components within radius_fraction * side of the centered
// DC term, per channel. `image` is [channels, side, side] or [side, side];
// rank and squareness are checked. Requires 0 < radius_fraction <= sqrt(2)/2.
Tensor lowpass_unclipped(const Tensor& image, double radius_fraction);
// As above, then clipped to [0,1].
Tensor lowpass(const Tensor& image, double radius_fraction);

// Row-wise lowpass of flattened CHW images [n, channels * side * side].
Tensor lowpass_rows(const Tensor& images, std::size_t side, std::size_t channels, double radius_fraction);

}  // namespace repr_robust
