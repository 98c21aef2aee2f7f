#pragma once

#include <array>
#include <cstddef>
#include <vector>

#include "dagr/tensor.hpp"

namespace dagr {

// Binary ops broadcast numpy-style (right-aligned, size-1 axes stretch).
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);

Tensor neg(const Tensor& x);
Tensor scale(const Tensor& x, double c);
Tensor add_scalar(const Tensor& x, double c);

Tensor sigmoid(const Tensor& x);
Tensor relu(const Tensor& x);
Tensor exp(const Tensor& x);
Tensor log(const Tensor& x);
Tensor sqrt(const Tensor& x);
Tensor abs(const Tensor& x);

Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);
Tensor sum_axis(const Tensor& x, std::size_t axis);

Tensor matmul(const Tensor& a, const Tensor& b);  // [m,k] x [k,n]
Tensor transpose(const Tensor& x);                // 2-D
/// x [k] or [m,k], w [k,n], optional bias [n].
Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b);

Tensor concat(const std::vector<Tensor>& parts, std::size_t axis);
Tensor slice(const Tensor& x, std::size_t axis, std::size_t start, std::size_t stop);
Tensor reshape(const Tensor& x, Shape shape);
Tensor stack_rows(const std::vector<Tensor>& rows);     // n x [d] -> [n,d]
Tensor stack_scalars(const std::vector<Tensor>& vals);  // n scalars -> [n]

Tensor softmax(const Tensor& x, std::size_t axis);
/// Population-variance normalization along one axis.
Tensor layernorm(const Tensor& x, std::size_t axis, double eps);

Tensor conv3d(const Tensor& input, const Tensor& weight, const Tensor& bias,
              std::array<std::size_t, 3> stride = {1, 1, 1},
              std::array<std::size_t, 3> padding = {0, 0, 0});
Tensor conv2d(const Tensor& input, const Tensor& weight, const Tensor& bias,
              std::array<std::size_t, 2> stride = {1, 1},
              std::array<std::size_t, 2> padding = {0, 0});

// Pooling acts on the trailing axes named by the window rank; leading axes batch.
Tensor max_pool(const Tensor& x, const std::vector<std::size_t>& window,
                const std::vector<std::size_t>& stride);
Tensor avg_pool(const Tensor& x, const std::vector<std::size_t>& window,
                const std::vector<std::size_t>& stride);
Tensor global_avg_pool(const Tensor& x, std::size_t spatial_axes);
Tensor adaptive_avg_pool(const Tensor& x, const std::vector<std::size_t>& targets);

/// Bilinear resize of the trailing two axes, align-corners-false sampling.
Tensor resize_bilinear(const Tensor& x, std::size_t out_h, std::size_t out_w);
/// Trilinear resize of the trailing three axes, same sampling convention.
Tensor upsample_trilinear(const Tensor& x, std::size_t out_t, std::size_t out_h, std::size_t out_w);

}  // namespace dagr
