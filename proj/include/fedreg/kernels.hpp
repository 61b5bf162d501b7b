#pragma once

// Batched dense and convolution kernels. All buffers are row-major; batch is the leading dim.

#include <cstddef>
#include <cstdint>
#include <span>

namespace fedreg::kernels {

struct DenseShape {
  std::size_t batch, in, out;
};

/// Y = X W^T + b, optionally followed by ReLU in place.
void dense_forward(DenseShape s, std::span<const double> x, std::span<const double> w, std::span<const double> b,
                   std::span<double> y, bool relu);

/// dY must already be masked by the activation derivative. dW, db accumulate; dX (if non-empty) is overwritten.
void dense_backward(DenseShape s, std::span<const double> x, std::span<const double> w, std::span<const double> dy,
                    std::span<double> dw, std::span<double> db, std::span<double> dx);

struct ConvShape {
  std::size_t batch, in_channels, height, width, out_channels;
};

/// 3x3 same-padding stride-1 convolution followed by ReLU. `y` is B x Cout x H x W.
void conv3x3_relu_forward(ConvShape s, std::span<const double> x, std::span<const double> w,
                          std::span<const double> b, std::span<double> y);

/// dY masked by ReLU derivative. dW, db accumulate; dX (if non-empty) is overwritten.
void conv3x3_backward(ConvShape s, std::span<const double> x, std::span<const double> w, std::span<const double> dy,
                      std::span<double> dw, std::span<double> db, std::span<double> dx);

/// 2x2 stride-2 max pool over B*C planes of H x W (odd trailing row/col dropped).
/// `argmax` receives the in-plane index of each winner; ties go to the first in scan order.
void maxpool2x2_forward(std::size_t planes, std::size_t height, std::size_t width, std::span<const double> x,
                        std::span<double> y, std::span<std::uint32_t> argmax);

/// Scatters dY into a zeroed dX using the recorded argmax.
void maxpool2x2_backward(std::size_t planes, std::size_t height, std::size_t width, std::span<const double> dy,
                         std::span<const std::uint32_t> argmax, std::span<double> dx);

}  // namespace fedreg::kernels
