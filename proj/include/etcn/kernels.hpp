#pragma once

// Batched compute kernels. Activations use the batch layout: a
// channels x (batch * steps) matrix where sample b owns the columns
// [b * steps, (b + 1) * steps). Loops over samples are OpenMP-parallel;
// weight-gradient reductions are accumulated over fixed-size sample chunks
// and summed in chunk order, so results do not depend on the thread count.
//
// A serial loop-level implementation of the same maths lives in
// reference.hpp and is what the tests check these against.

#include "etcn/common.hpp"

#include <vector>

namespace etcn::kernels {

/// Samples per partial sum in ordered reductions.
inline constexpr int kReduceChunk = 8;

/// Convolution weights are laid out as C_out x (kernel * C_in); column
/// block i holds tap i, which reads the input delayed by i * dilation.
void im2col_causal(const Matrix& x, int steps, int kernel, int dilation, Matrix& cols);

/// Adds the scatter of `cols` back onto dx (the adjoint of im2col_causal).
void col2im_causal_add(const Matrix& cols, int steps, int kernel, int dilation, Matrix& dx);

/// y = W * im2col(x) + bias. An empty bias means none.
Matrix causal_conv(const Matrix& x, const Matrix& weight, const Vector& bias, int steps, int kernel, int dilation);

struct ConvBackward {
    Matrix d_input;
    Matrix d_weight;
    Vector d_bias;  // empty when the layer has no bias
};

ConvBackward causal_conv_backward(const Matrix& x, const Matrix& weight, const Matrix& d_out, int steps, int kernel,
                                  int dilation, bool has_bias, bool need_input_grad = true);

struct AttentionForward {
    Matrix output;               // C x (B*T)
    Matrix query, key, value;    // d_k x (B*T), d_k x (B*T), C x (B*T)
    // Per sample, the transposed attention matrix: column t holds the
    // weights query t puts on every key, so each column sums to one.
    std::vector<Matrix> weights_t;

    /// Row-stochastic attention matrix (alpha) of sample b.
    Matrix alpha(std::size_t b) const { return weights_t[b].transpose(); }
};

/// Scaled dot-product attention over the time axis of each sample. The
/// per-sample weights are kept only when `keep_weights` is set.
AttentionForward self_attention(const Matrix& x, const Matrix& w_query, const Matrix& w_key, const Matrix& w_value,
                                int steps, bool keep_weights = true);

struct AttentionBackward {
    Matrix d_input;
    Matrix d_query_weight;
    Matrix d_key_weight;
    Matrix d_value_weight;
};

AttentionBackward self_attention_backward(const Matrix& x, const Matrix& w_query, const Matrix& w_key,
                                          const Matrix& w_value, const AttentionForward& fwd, const Matrix& d_out,
                                          int steps);

/// Row-wise numerically stable softmax, in place.
void softmax_rows(Matrix& m);
void softmax_cols(Matrix& m);

/// Per-sample mean over time: C x (B*T) -> C x B.
Matrix time_average(const Matrix& x, int steps);

}  // namespace etcn::kernels
