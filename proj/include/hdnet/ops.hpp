#pragma once

#include <vector>

#include "hdnet/tensor.hpp"

namespace hdnet {

// Differentiable primitives over the [C,H,W] / [H,W] layouts HDNet uses.
// Elementwise ops require identical shapes; there is no general broadcasting.

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor mul_scalar(const Tensor& a, double s);

Tensor relu(const Tensor& a);
Tensor sigmoid(const Tensor& a);
Tensor abs_val(const Tensor& a);
// Elementwise a^e for a >= 0. e == 1 is the identity.
Tensor pow_const(const Tensor& a, double e);

Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);

Tensor reshape(const Tensor& a, std::vector<int> shape);

// Cross-correlation (no kernel flip). input [C_in,H,W], weight
// [C_out,C_in/groups,k,k], bias [C_out]. Summation order per output element
// is fixed: input channels outer, kernel window innermost.
Tensor conv2d(const Tensor& input, const Tensor& weight, const Tensor& bias,
              int stride, int padding, int groups);

// [M,K] x [K,N] -> [M,N], fixed k-order accumulation.
Tensor matmul(const Tensor& a, const Tensor& b);

// Max-subtracted softmax along one axis.
Tensor softmax(const Tensor& a, int axis);

// [C,H,W] -> [C]
Tensor global_avg_pool(const Tensor& a);
// 3x3 window, stride 1, padding 1, [C,H,W] -> [C,H,W]. Gradient routes to the
// first maximal element in scan order on ties.
Tensor max_pool3x3(const Tensor& a);

Tensor concat_channels(const std::vector<Tensor>& parts);
// Splits [C,H,W] into m equal groups of C/m channels.
std::vector<Tensor> split_channels(const Tensor& a, int m);

// x [C,H,W] scaled per channel by gate [C].
Tensor scale_channels(const Tensor& x, const Tensor& gate);
// x [C,H,W] scaled per pixel by gate [H,W].
Tensor scale_spatial(const Tensor& x, const Tensor& gate);

// [H,W] -> [rows,cols] window with top-left corner (r0, c0).
Tensor crop2d(const Tensor& a, int r0, int c0, int rows, int cols);

}  // namespace hdnet
