#include "etcn/reference.hpp"

#include <cmath>
#include <stdexcept>

namespace etcn::reference {

Matrix causal_conv(const Matrix& x, const Matrix& weight, const Vector& bias, int kernel, int dilation) {
    const Eigen::Index c_in = x.rows();
    const Eigen::Index steps = x.cols();
    if (weight.cols() != c_in * kernel) throw std::invalid_argument("reference::causal_conv: shape mismatch");
    Matrix y(weight.rows(), steps);
    for (Eigen::Index o = 0; o < weight.rows(); ++o) {
        for (Eigen::Index s = 0; s < steps; ++s) {
            double acc = bias.size() ? bias(o) : 0.0;
            for (int i = 0; i < kernel; ++i) {
                const Eigen::Index t = s - static_cast<Eigen::Index>(dilation) * i;
                if (t < 0) continue;
                for (Eigen::Index c = 0; c < c_in; ++c) acc += weight(o, i * c_in + c) * x(c, t);
            }
            y(o, s) = acc;
        }
    }
    return y;
}

Matrix weight_norm(const Matrix& direction, const Vector& scale) {
    Matrix w(direction.rows(), direction.cols());
    for (Eigen::Index r = 0; r < direction.rows(); ++r) {
        double sq = 0.0;
        for (Eigen::Index c = 0; c < direction.cols(); ++c) sq += direction(r, c) * direction(r, c);
        const double norm = std::sqrt(sq);
        for (Eigen::Index c = 0; c < direction.cols(); ++c) w(r, c) = scale(r) * direction(r, c) / norm;
    }
    return w;
}

namespace {

Matrix project(const Matrix& w, const Matrix& x) {
    Matrix y = Matrix::Zero(w.rows(), x.cols());
    for (Eigen::Index t = 0; t < x.cols(); ++t)
        for (Eigen::Index r = 0; r < w.rows(); ++r)
            for (Eigen::Index c = 0; c < w.cols(); ++c) y(r, t) += w(r, c) * x(c, t);
    return y;
}

Matrix relu(Matrix x) {
    for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = x.data()[i] > 0.0 ? x.data()[i] : 0.0;
    return x;
}

}  // namespace

Matrix self_attention(const Matrix& x, const Matrix& w_query, const Matrix& w_key, const Matrix& w_value,
                      Matrix* alpha) {
    const Matrix q = project(w_query, x);
    const Matrix k = project(w_key, x);
    const Matrix v = project(w_value, x);
    const Eigen::Index steps = x.cols();
    const double scale = std::sqrt(static_cast<double>(w_query.rows()));
    Matrix a(steps, steps);
    for (Eigen::Index t = 0; t < steps; ++t) {
        double mx = -INFINITY;
        for (Eigen::Index j = 0; j < steps; ++j) {
            double dot = 0.0;
            for (Eigen::Index r = 0; r < q.rows(); ++r) dot += q(r, t) * k(r, j);
            a(t, j) = dot / scale;
            mx = std::max(mx, a(t, j));
        }
        double sum = 0.0;
        for (Eigen::Index j = 0; j < steps; ++j) {
            a(t, j) = std::exp(a(t, j) - mx);
            sum += a(t, j);
        }
        for (Eigen::Index j = 0; j < steps; ++j) a(t, j) /= sum;
    }
    Matrix y = Matrix::Zero(v.rows(), steps);
    for (Eigen::Index t = 0; t < steps; ++t)
        for (Eigen::Index j = 0; j < steps; ++j)
            for (Eigen::Index c = 0; c < v.rows(); ++c) y(c, t) += a(t, j) * v(c, j);
    if (alpha) *alpha = a;
    return y;
}

std::vector<Matrix> batch_norm_train(const std::vector<Matrix>& batch, const Vector& gamma, const Vector& beta) {
    const Eigen::Index channels = batch.front().rows();
    std::vector<Matrix> out = batch;
    for (Eigen::Index c = 0; c < channels; ++c) {
        double sum = 0.0;
        double n = 0.0;
        for (const auto& x : batch)
            for (Eigen::Index t = 0; t < x.cols(); ++t) {
                sum += x(c, t);
                n += 1.0;
            }
        const double mean = sum / n;
        double sq = 0.0;
        for (const auto& x : batch)
            for (Eigen::Index t = 0; t < x.cols(); ++t) sq += (x(c, t) - mean) * (x(c, t) - mean);
        const double var = sq / n;
        const double denom = std::sqrt(var + kBatchNormEps);
        for (std::size_t b = 0; b < batch.size(); ++b)
            for (Eigen::Index t = 0; t < batch[b].cols(); ++t)
                out[b](c, t) = gamma(c) * (batch[b](c, t) - mean) / denom + beta(c);
    }
    return out;
}

Matrix batch_norm_eval(const Matrix& x, const Vector& gamma, const Vector& beta, const RunningStats& running) {
    Matrix y(x.rows(), x.cols());
    for (Eigen::Index c = 0; c < x.rows(); ++c) {
        const double denom = std::sqrt(running.var(c) + kBatchNormEps);
        for (Eigen::Index t = 0; t < x.cols(); ++t) y(c, t) = gamma(c) * (x(c, t) - running.mean(c)) / denom + beta(c);
    }
    return y;
}

Matrix tcn_block(const TcnBlock& block, const Matrix& x, int kernel, int dilation) {
    const Matrix w1 = weight_norm(block.conv1.direction, block.conv1.scale);
    const Matrix w2 = weight_norm(block.conv2.direction, block.conv2.scale);
    const Matrix a1 = relu(causal_conv(x, w1, block.conv1.bias, kernel, dilation));
    Matrix y = relu(causal_conv(a1, w2, block.conv2.bias, kernel, dilation));
    if (block.skip.weight.size() != 0) {
        y += causal_conv(x, block.skip.weight, block.skip.bias, 1, 1);
    } else {
        y += x;
    }
    return y;
}

std::vector<Matrix> res_block(const ResBlock& block, const NetworkBuffers& buffers, const std::vector<Matrix>& batch,
                              int kernel, Mode mode) {
    auto conv_all = [](const std::vector<Matrix>& xs, const Conv& conv, int k) {
        std::vector<Matrix> out;
        for (const auto& x : xs) out.push_back(causal_conv(x, conv.weight, conv.bias, k, 1));
        return out;
    };
    auto bn_all = [&](const std::vector<Matrix>& xs, const BatchNorm& bn, const RunningStats& running) {
        if (mode == Mode::Train) return batch_norm_train(xs, bn.gamma, bn.beta);
        std::vector<Matrix> out;
        for (const auto& x : xs) out.push_back(batch_norm_eval(x, bn.gamma, bn.beta, running));
        return out;
    };
    auto h1 = bn_all(conv_all(batch, block.conv1, kernel), block.bn1, buffers.res_bn1);
    for (auto& m : h1) m = relu(m);
    auto f = bn_all(conv_all(h1, block.conv2, kernel), block.bn2, buffers.res_bn2);
    std::vector<Matrix> shortcut = batch;
    if (block.shortcut.weight.size() != 0)
        shortcut = bn_all(conv_all(batch, block.shortcut, 1), block.shortcut_bn, buffers.res_shortcut_bn);
    std::vector<Matrix> out;
    for (std::size_t b = 0; b < batch.size(); ++b) out.push_back(relu(f[b] + shortcut[b]));
    return out;
}

Vector classifier(const Matrix& features, const Classifier& head) {
    Vector pooled(features.rows());
    for (Eigen::Index c = 0; c < features.rows(); ++c) {
        double sum = 0.0;
        for (Eigen::Index t = 0; t < features.cols(); ++t) sum += features(c, t);
        pooled(c) = sum / static_cast<double>(features.cols());
    }
    Vector logits(head.weight.rows());
    for (Eigen::Index k = 0; k < head.weight.rows(); ++k) {
        double acc = head.bias(k);
        for (Eigen::Index c = 0; c < pooled.size(); ++c) acc += head.weight(k, c) * pooled(c);
        logits(k) = acc;
    }
    return logits;
}

Vector softmax(const Vector& logits) {
    long double mx = logits.maxCoeff();
    long double sum = 0.0L;
    for (Eigen::Index i = 0; i < logits.size(); ++i) sum += std::exp(static_cast<long double>(logits(i)) - mx);
    Vector p(logits.size());
    for (Eigen::Index i = 0; i < logits.size(); ++i)
        p(i) = static_cast<double>(std::exp(static_cast<long double>(logits(i)) - mx) / sum);
    return p;
}

Matrix network_forward(const Model& model, const std::vector<Matrix>& windows, Mode mode) {
    const auto& c = model.config;
    std::vector<Matrix> xs = windows;
    for (std::size_t i = 0; i < model.params.tcn.size(); ++i)
        for (auto& x : xs) x = tcn_block(model.params.tcn[i], x, c.tcn_kernel_size, c.tcn_dilations[i]);
    if (c.sa_enabled)
        for (auto& x : xs)
            x = self_attention(x, model.params.attention.query, model.params.attention.key,
                               model.params.attention.value);
    if (c.res_enabled) xs = res_block(model.params.res, model.buffers, xs, c.res_kernel_size, mode);
    Matrix logits(c.n_classes, static_cast<Eigen::Index>(xs.size()));
    for (std::size_t b = 0; b < xs.size(); ++b)
        logits.col(static_cast<Eigen::Index>(b)) = classifier(xs[b], model.params.head);
    return logits;
}

}  // namespace etcn::reference
