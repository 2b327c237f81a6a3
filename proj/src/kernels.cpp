#include "etcn/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace etcn::kernels {

namespace {

Eigen::Index batch_of(const Matrix& x, int steps) {
    if (steps <= 0 || x.cols() % steps != 0) throw std::invalid_argument("kernels: columns not a multiple of steps");
    return x.cols() / steps;
}

Eigen::Index chunk_count(Eigen::Index batch) { return (batch + kReduceChunk - 1) / kReduceChunk; }

// Sums partial(first_column, n_columns) over fixed sample chunks in chunk order.
template <class Partial>
Matrix ordered_chunk_sum(Eigen::Index batch, int steps, Eigen::Index rows, Eigen::Index cols, Partial&& partial) {
    const Eigen::Index chunks = chunk_count(batch);
    std::vector<Matrix> partials(static_cast<std::size_t>(chunks));
#pragma omp parallel for schedule(static)
    for (Eigen::Index c = 0; c < chunks; ++c) {
        const Eigen::Index b0 = c * kReduceChunk;
        const Eigen::Index b1 = std::min(batch, b0 + kReduceChunk);
        partials[static_cast<std::size_t>(c)] = partial(b0 * steps, (b1 - b0) * steps);
    }
    Matrix total = Matrix::Zero(rows, cols);
    for (const auto& p : partials) total += p;
    return total;
}

}  // namespace

void im2col_causal(const Matrix& x, int steps, int kernel, int dilation, Matrix& cols) {
    if (kernel < 1 || dilation < 1) throw std::invalid_argument("im2col: kernel and dilation must be >= 1");
    const Eigen::Index batch = batch_of(x, steps);
    const Eigen::Index c_in = x.rows();
    cols.resize(c_in * kernel, x.cols());
#pragma omp parallel for schedule(static)
    for (Eigen::Index b = 0; b < batch; ++b) {
        const Eigen::Index base = b * steps;
        for (int i = 0; i < kernel; ++i) {
            const Eigen::Index shift = std::min<Eigen::Index>(static_cast<Eigen::Index>(i) * dilation, steps);
            const Eigen::Index keep = steps - shift;
            auto dst = cols.block(i * c_in, base, c_in, steps);
            dst.leftCols(shift).setZero();
            if (keep > 0) dst.rightCols(keep) = x.block(0, base, c_in, keep);
        }
    }
}

void col2im_causal_add(const Matrix& cols, int steps, int kernel, int dilation, Matrix& dx) {
    const Eigen::Index batch = batch_of(dx, steps);
    const Eigen::Index c_in = dx.rows();
    if (cols.rows() != c_in * kernel || cols.cols() != dx.cols())
        throw std::invalid_argument("col2im: shape mismatch");
#pragma omp parallel for schedule(static)
    for (Eigen::Index b = 0; b < batch; ++b) {
        const Eigen::Index base = b * steps;
        for (int i = 0; i < kernel; ++i) {
            const Eigen::Index shift = std::min<Eigen::Index>(static_cast<Eigen::Index>(i) * dilation, steps);
            const Eigen::Index keep = steps - shift;
            if (keep > 0) dx.block(0, base, c_in, keep) += cols.block(i * c_in, base + shift, c_in, keep);
        }
    }
}

Matrix causal_conv(const Matrix& x, const Matrix& weight, const Vector& bias, int steps, int kernel, int dilation) {
    if (weight.cols() != x.rows() * kernel) throw std::invalid_argument("causal_conv: weight/input shape mismatch");
    if (bias.size() != 0 && bias.size() != weight.rows()) throw std::invalid_argument("causal_conv: bias size");
    const Eigen::Index batch = batch_of(x, steps);
    Matrix out(weight.rows(), x.cols());
    if (kernel == 1) {
        // Pointwise: no column buffer needed.
        const Eigen::Index chunks = chunk_count(batch);
#pragma omp parallel for schedule(static)
        for (Eigen::Index c = 0; c < chunks; ++c) {
            const Eigen::Index b0 = c * kReduceChunk;
            const Eigen::Index n = (std::min(batch, b0 + kReduceChunk) - b0) * steps;
            out.middleCols(b0 * steps, n).noalias() = weight * x.middleCols(b0 * steps, n);
        }
    } else {
        Matrix cols;
        im2col_causal(x, steps, kernel, dilation, cols);
        const Eigen::Index chunks = chunk_count(batch);
#pragma omp parallel for schedule(static)
        for (Eigen::Index c = 0; c < chunks; ++c) {
            const Eigen::Index b0 = c * kReduceChunk;
            const Eigen::Index n = (std::min(batch, b0 + kReduceChunk) - b0) * steps;
            out.middleCols(b0 * steps, n).noalias() = weight * cols.middleCols(b0 * steps, n);
        }
    }
    if (bias.size() != 0) out.colwise() += bias;
    return out;
}

ConvBackward causal_conv_backward(const Matrix& x, const Matrix& weight, const Matrix& d_out, int steps, int kernel,
                                  int dilation, bool has_bias, bool need_input_grad) {
    if (d_out.rows() != weight.rows() || d_out.cols() != x.cols())
        throw std::invalid_argument("causal_conv_backward: shape mismatch");
    const Eigen::Index batch = batch_of(x, steps);
    ConvBackward g;
    Matrix cols_storage;
    const Matrix* cols = &x;
    if (kernel != 1) {
        im2col_causal(x, steps, kernel, dilation, cols_storage);
        cols = &cols_storage;
    }
    g.d_weight = ordered_chunk_sum(batch, steps, weight.rows(), weight.cols(), [&](Eigen::Index first, Eigen::Index n) {
        Matrix p = d_out.middleCols(first, n) * cols->middleCols(first, n).transpose();
        return p;
    });
    if (has_bias) {
        g.d_bias = ordered_chunk_sum(batch, steps, weight.rows(), 1, [&](Eigen::Index first, Eigen::Index n) {
            Matrix p = d_out.middleCols(first, n).rowwise().sum();
            return p;
        });
    }
    if (need_input_grad) {
        Matrix d_cols(weight.cols(), x.cols());
        const Eigen::Index chunks = chunk_count(batch);
#pragma omp parallel for schedule(static)
        for (Eigen::Index c = 0; c < chunks; ++c) {
            const Eigen::Index b0 = c * kReduceChunk;
            const Eigen::Index n = (std::min(batch, b0 + kReduceChunk) - b0) * steps;
            d_cols.middleCols(b0 * steps, n).noalias() = weight.transpose() * d_out.middleCols(b0 * steps, n);
        }
        if (kernel == 1) {
            g.d_input = std::move(d_cols);
        } else {
            g.d_input = Matrix::Zero(x.rows(), x.cols());
            col2im_causal_add(d_cols, steps, kernel, dilation, g.d_input);
        }
    }
    return g;
}

void softmax_rows(Matrix& m) {
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
        auto row = m.row(r);
        const double mx = row.maxCoeff();
        row = (row.array() - mx).exp();
        row /= row.sum();
    }
}

void softmax_cols(Matrix& m) {
    for (Eigen::Index c = 0; c < m.cols(); ++c) {
        auto col = m.col(c);
        const double mx = col.maxCoeff();
        col = (col.array() - mx).exp();
        col /= col.sum();
    }
}

AttentionForward self_attention(const Matrix& x, const Matrix& w_query, const Matrix& w_key, const Matrix& w_value,
                                int steps, bool keep_weights) {
    if (w_query.rows() <= 0 || w_query.rows() != w_key.rows())
        throw std::invalid_argument("self_attention: attention dimension must be positive");
    if (w_query.cols() != x.rows() || w_key.cols() != x.rows() || w_value.cols() != x.rows())
        throw std::invalid_argument("self_attention: projection/input shape mismatch");
    const Eigen::Index batch = batch_of(x, steps);
    const double scale = 1.0 / std::sqrt(static_cast<double>(w_query.rows()));

    AttentionForward f;
    f.query.resize(w_query.rows(), x.cols());
    f.key.resize(w_key.rows(), x.cols());
    f.value.resize(w_value.rows(), x.cols());
    f.output.resize(w_value.rows(), x.cols());
    if (keep_weights) f.weights_t.resize(static_cast<std::size_t>(batch));
#pragma omp parallel
    {
        Matrix local;
#pragma omp for schedule(static)
        for (Eigen::Index b = 0; b < batch; ++b) {
            const auto xb = x.middleCols(b * steps, steps);
            auto q = f.query.middleCols(b * steps, steps);
            auto k = f.key.middleCols(b * steps, steps);
            auto v = f.value.middleCols(b * steps, steps);
            q.noalias() = w_query * xb;
            k.noalias() = w_key * xb;
            v.noalias() = w_value * xb;
            Matrix& a = keep_weights ? f.weights_t[static_cast<std::size_t>(b)] : local;
            a.noalias() = scale * (k.transpose() * q);
            softmax_cols(a);
            f.output.middleCols(b * steps, steps).noalias() = v * a;
        }
    }
    return f;
}

AttentionBackward self_attention_backward(const Matrix& x, const Matrix& w_query, const Matrix& w_key,
                                          const Matrix& w_value, const AttentionForward& fwd, const Matrix& d_out,
                                          int steps) {
    const Eigen::Index batch = batch_of(x, steps);
    if (fwd.weights_t.size() != static_cast<std::size_t>(batch))
        throw std::invalid_argument("self_attention_backward: forward did not keep the attention weights");
    const double scale = 1.0 / std::sqrt(static_cast<double>(w_query.rows()));
    Matrix d_query(fwd.query.rows(), x.cols());
    Matrix d_key(fwd.key.rows(), x.cols());
    Matrix d_value(fwd.value.rows(), x.cols());
#pragma omp parallel
    {
        Matrix d_a;
        Vector inner;
#pragma omp for schedule(static)
        for (Eigen::Index b = 0; b < batch; ++b) {
            const Eigen::Index first = b * steps;
            const Matrix& a = fwd.weights_t[static_cast<std::size_t>(b)];
            const auto dy = d_out.middleCols(first, steps);
            d_value.middleCols(first, steps).noalias() = dy * a.transpose();
            d_a.noalias() = fwd.value.middleCols(first, steps).transpose() * dy;
            // Softmax Jacobian, one query column at a time.
            inner = (d_a.array() * a.array()).colwise().sum().transpose();
            d_a = scale * (a.array() * (d_a.rowwise() - inner.transpose()).array());
            d_query.middleCols(first, steps).noalias() = fwd.key.middleCols(first, steps) * d_a;
            d_key.middleCols(first, steps).noalias() = fwd.query.middleCols(first, steps) * d_a.transpose();
        }
    }
    AttentionBackward g;
    auto weight_grad = [&](const Matrix& d_proj) {
        return ordered_chunk_sum(batch, steps, d_proj.rows(), x.rows(), [&](Eigen::Index first, Eigen::Index n) {
            Matrix p = d_proj.middleCols(first, n) * x.middleCols(first, n).transpose();
            return p;
        });
    };
    g.d_query_weight = weight_grad(d_query);
    g.d_key_weight = weight_grad(d_key);
    g.d_value_weight = weight_grad(d_value);
    g.d_input.resize(x.rows(), x.cols());
    const Eigen::Index chunks = chunk_count(batch);
#pragma omp parallel for schedule(static)
    for (Eigen::Index c = 0; c < chunks; ++c) {
        const Eigen::Index b0 = c * kReduceChunk;
        const Eigen::Index first = b0 * steps;
        const Eigen::Index n = (std::min(batch, b0 + kReduceChunk) - b0) * steps;
        auto dx = g.d_input.middleCols(first, n);
        dx.noalias() = w_query.transpose() * d_query.middleCols(first, n);
        dx.noalias() += w_key.transpose() * d_key.middleCols(first, n);
        dx.noalias() += w_value.transpose() * d_value.middleCols(first, n);
    }
    return g;
}

Matrix time_average(const Matrix& x, int steps) {
    const Eigen::Index batch = batch_of(x, steps);
    Matrix pooled(x.rows(), batch);
    for (Eigen::Index b = 0; b < batch; ++b)
        pooled.col(b) = x.middleCols(b * steps, steps).rowwise().sum() / static_cast<double>(steps);
    return pooled;
}

}  // namespace etcn::kernels
