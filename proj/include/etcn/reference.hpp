#pragma once

// Serial, loop-level implementation of the network maths, written directly
// from the per-element definitions. It is slow on purpose and shares no code
// with kernels.cpp / network.cpp, so tests and the benchmark can use it as an
// independent oracle.

#include "etcn/common.hpp"
#include "etcn/network.hpp"

#include <vector>

namespace etcn::reference {

/// y[o][s] = bias[o] + sum_i sum_c W[o][i*C_in + c] * x[c][s - dilation*i],
/// with x[.][t < 0] = 0. x is C_in x T.
Matrix causal_conv(const Matrix& x, const Matrix& weight, const Vector& bias, int kernel, int dilation);

Matrix weight_norm(const Matrix& direction, const Vector& scale);

/// Attention over the T columns of x. alpha (T x T) is written when given.
Matrix self_attention(const Matrix& x, const Matrix& w_query, const Matrix& w_key, const Matrix& w_value,
                      Matrix* alpha = nullptr);

/// Batch norm over every (sample, time) position of each channel.
std::vector<Matrix> batch_norm_train(const std::vector<Matrix>& batch, const Vector& gamma, const Vector& beta);
Matrix batch_norm_eval(const Matrix& x, const Vector& gamma, const Vector& beta, const RunningStats& running);

/// Dropout-free TCN block on one sample.
Matrix tcn_block(const TcnBlock& block, const Matrix& x, int kernel, int dilation);

std::vector<Matrix> res_block(const ResBlock& block, const NetworkBuffers& buffers, const std::vector<Matrix>& batch,
                              int kernel, Mode mode);

Vector classifier(const Matrix& features, const Classifier& head);

/// Softmax evaluated in long double.
Vector softmax(const Vector& logits);

/// Logits (n_classes x batch) of a dropout-free forward pass. In train
/// mode batch norm uses batch statistics.
Matrix network_forward(const Model& model, const std::vector<Matrix>& windows, Mode mode);

}  // namespace etcn::reference
