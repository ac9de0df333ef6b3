#pragma once

#include <vector>

#include "cerberus/raster.hpp"
#include "cerberus/tensor.hpp"

namespace cerberus {

// Elementwise; shapes must match exactly.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double c);
Tensor gelu(const Tensor& a);

// Sum of all entries, as a scalar tensor.
Tensor sum(const Tensor& a);

// Rank-2 matrix product [m×k]·[k×n] -> [m×n].
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);

// Row / column windows of a rank-2 tensor (copying).
Tensor slice_rows(const Tensor& a, int r0, int r1);
Tensor slice_cols(const Tensor& a, int c0, int c1);

// Repeats a [1×d] row n times -> [n×d].
Tensor tile_rows(const Tensor& row, int n);

// Concatenate rank-2 tensors along columns.
Tensor hconcat(const Tensor& a, const Tensor& b);
Tensor hconcat(const std::vector<Tensor>& parts);

// x[n×d] + bias[d] broadcast over rows.
Tensor add_row_bias(const Tensor& x, const Tensor& bias);

// Cross-correlation of x[c_in×h×w] with k[c_out×c_in×kh×kw].
Tensor conv2d(const Tensor& x, const Tensor& kernel, int stride, int pad);

// x[c×h×w] + bias[c] broadcast over each channel plane.
Tensor add_channel_bias(const Tensor& x, const Tensor& bias);

// Softmax along `axis`; max-subtraction for stability.
Tensor softmax(const Tensor& x, int axis);

// Normalizes over the last axis, then applies gamma/beta of that extent.
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps);

// Bilinear upsampling of x[c×h×w] by an integer factor >= 1. Output pixel o
// samples source coordinate (o+0.5)/factor - 0.5, clamped to the valid range.
Tensor upsample_bilinear(const Tensor& x, int factor);

// [c×h×w] -> [(h·w)×c] row-major over the spatial grid, and its inverse.
Tensor map_to_tokens(const Tensor& x);
Tensor tokens_to_map(const Tensor& tokens, int h, int w);

Tensor reshape(const Tensor& x, Shape new_shape);

// Mean over masked pixels of -log softmax(logits)[label]. Labels hold class
// indices in [0, classes); the value 255 is allowed only at unmasked pixels.
Tensor cross_entropy_masked(const Tensor& logits, const ByteRaster& labels,
                            const ByteRaster& mask);

// Mean over masked pixel/class pairs of the stable sigmoid binary cross
// entropy between logits[k×h×w] and binary targets.
Tensor bce_masked(const Tensor& logits, const BinaryStack& targets, const ByteRaster& mask);

// Seeds the loss gradient with 1 and replays the active tape in reverse.
void backward(const Tensor& loss);

}  // namespace cerberus
