#pragma once

#include <cstdint>
#include <span>

/// Convolution kernels. Each `*_reference` function is the direct serial
/// summation kept for testing; the unsuffixed variants are the OpenMP
/// versions used by the tape. Both accumulate every output element in the
/// same order, so their results are bit-identical.
namespace fluvinv::kernels {

struct ConvGeometry {
  std::int64_t cin = 1, cout = 1;
  std::int64_t nz = 1, ny = 1, nx = 1;  // input extents (output equal for conv3d)
  std::int64_t kz = 1, ky = 1, kx = 1;

  std::int64_t volume() const { return nz * ny * nx; }
  std::int64_t taps() const { return kz * ky * kx; }
};

/// Parallel regions are skipped when already inside one (sample-level
/// parallelism has priority).
int max_threads();

// "same" zero padding, stride 1, weight layout [cout, cin, kz, ky, kx].
void conv3d_forward(const ConvGeometry& g, std::span<const double> in, std::span<const double> w,
                    std::span<const double> bias, std::span<double> out);
void conv3d_backward_input(const ConvGeometry& g, std::span<const double> grad_out,
                           std::span<const double> w, std::span<double> grad_in);
void conv3d_backward_weight(const ConvGeometry& g, std::span<const double> in,
                            std::span<const double> grad_out, std::span<double> grad_w);

void conv3d_forward_reference(const ConvGeometry& g, std::span<const double> in,
                              std::span<const double> w, std::span<const double> bias,
                              std::span<double> out);
void conv3d_backward_input_reference(const ConvGeometry& g, std::span<const double> grad_out,
                                     std::span<const double> w, std::span<double> grad_in);
void conv3d_backward_weight_reference(const ConvGeometry& g, std::span<const double> in,
                                      std::span<const double> grad_out,
                                      std::span<double> grad_w);

// Stride-2 transposed convolution; output extents are 2x the input extents,
// weight layout [cin, cout, kz, ky, kx]. Input cell i contributes to output
// 2i + t - (k - 1) / 2 for kernel tap t.
void conv_transpose3d_forward(const ConvGeometry& g, std::span<const double> in,
                              std::span<const double> w, std::span<const double> bias,
                              std::span<double> out);
void conv_transpose3d_backward_input(const ConvGeometry& g, std::span<const double> grad_out,
                                     std::span<const double> w, std::span<double> grad_in);
void conv_transpose3d_backward_weight(const ConvGeometry& g, std::span<const double> in,
                                      std::span<const double> grad_out,
                                      std::span<double> grad_w);

}  // namespace fluvinv::kernels
