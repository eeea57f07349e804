#pragma once

#include <cstddef>
#include <span>

namespace pnpcm::fft {

// In-place unitary 2D DFT of an h x w complex plane stored interleaved.
// Forward uses exp(-2 pi i k n / N); both directions scale by 1/sqrt(h w).
void fft2(std::span<double> plane, std::size_t h, std::size_t w, bool inverse);

// Centered variant: ifftshift, fft2, fftshift. The zero frequency sits at
// (h/2, w/2), which is where k-space sampling masks put their central lines.
void fft2c(std::span<double> plane, std::size_t h, std::size_t w, bool inverse);

// Circular roll of a complex plane by (dy, dx).
void roll2(std::span<double> plane, std::size_t h, std::size_t w,
           std::size_t dy, std::size_t dx);

}  // namespace pnpcm::fft
