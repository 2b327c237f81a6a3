#pragma once

// Central finite-difference checks of the hand-written backward passes.
// Each layer is probed through a scalar loss L = sum(R .* y) with a fixed
// random R, so the upstream gradient is R itself.

#include "etcn/network.hpp"
#include "test_support.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

namespace etcn::test {

inline constexpr double kFiniteDifferenceStep = 1e-4;
/// Denominator floor of the relative error, so entries whose true gradient
/// is zero are compared absolutely.
inline constexpr double kRelativeErrorFloor = 1e-6;

struct GradCheck {
    std::string name;
    double max_relative_error = 0.0;
    std::size_t entries = 0;
};

inline double relative_error(double analytic, double numeric) {
    return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), kRelativeErrorFloor});
}

/// Perturbs every entry of `param` in turn and compares against `analytic`.
template <class Tensor>
GradCheck check_tensor(const std::string& name, Tensor& param, const Tensor& analytic,
                       const std::function<double()>& loss, double h = kFiniteDifferenceStep) {
    GradCheck r{name, 0.0, static_cast<std::size_t>(param.size())};
    if (param.size() != analytic.size()) {
        r.max_relative_error = INFINITY;
        return r;
    }
    for (Eigen::Index i = 0; i < param.size(); ++i) {
        const double saved = param.data()[i];
        param.data()[i] = saved + h;
        const double up = loss();
        param.data()[i] = saved - h;
        const double down = loss();
        param.data()[i] = saved;
        const double numeric = (up - down) / (2.0 * h);
        r.max_relative_error = std::max(r.max_relative_error, relative_error(analytic.data()[i], numeric));
    }
    return r;
}

inline double project(const Matrix& r, const Matrix& y) { return (r.array() * y.array()).sum(); }

/// The tiny network of the gradient oracle: 3 channels, width 8.
inline NetworkConfig tiny_network_config(Variant variant) {
    NetworkConfig c;
    c.n_vars = 2;
    c.window_width = 8;
    c.tcn_channels = 3;
    c.tcn_kernel_size = 2;
    c.tcn_dilations = {1, 2};
    c.dropout_rate = 0.2;
    c.attention_dim = 2;
    c.res_kernel_size = 3;
    return with_variant(c, variant);
}

inline void perturb_all(Rng& rng, NetworkParams& p, double scale) {
    std::normal_distribution<double> n(0.0, scale);
    visit_parameters([&](const std::string&, auto& t) {
        for (Eigen::Index i = 0; i < t.size(); ++i) t.data()[i] += n(rng);
    }, p);
}

/// Smallest |pre-activation| over every ReLU of a train-mode forward.
inline double relu_margin(const Model& model, const ForwardCache& cache) {
    double m = INFINITY;
    for (const auto& c : cache.tcn) m = std::min({m, c.pre1.cwiseAbs().minCoeff(), c.pre2.cwiseAbs().minCoeff()});
    if (model.config.res_enabled) {
        const auto& bn = cache.res.bn1;
        const Matrix pre1 = (model.params.res.bn1.gamma.asDiagonal() * bn.x_hat).colwise() + model.params.res.bn1.beta;
        m = std::min({m, pre1.cwiseAbs().minCoeff(), cache.res.pre_activation.cwiseAbs().minCoeff()});
    }
    return m;
}

/// A central difference is only a derivative estimate when no ReLU input
/// crosses zero inside the probe, so instances with a pre-activation closer
/// than this to the kink are redrawn.
inline constexpr double kReluMargin = 1e-2;

/// Composed network, every trainable tensor, mean cross-entropy over a batch of two.
inline std::vector<GradCheck> network_gradient_checks(Variant variant, std::uint64_t seed) {
    const int batch = 2;
    const std::vector<int> labels{1, 3};
    Model model;
    Matrix input;
    std::uint64_t dropout_seed = 0;
    for (std::uint64_t attempt = 0;; ++attempt) {
        const std::uint64_t s = derive_seed(seed, "gradcheck", attempt);
        Rng rng(s);
        model = init_model(tiny_network_config(variant), s);
        // Move BN / bias parameters off their symmetric initial values.
        perturb_all(rng, model.params, 0.2);
        input = random_matrix(rng, model.config.n_vars, batch * model.config.window_width);
        dropout_seed = s + 1;
        const auto f = network_forward(model, input, Mode::Train, dropout_seed);
        if (relu_margin(model, f.cache) >= kReluMargin || attempt == 1000) break;
    }

    auto loss = [&] {
        const auto f = network_forward(model, input, Mode::Train, dropout_seed);
        return cross_entropy_loss(softmax(f.logits), labels);
    };
    const auto fwd = network_forward(model, input, Mode::Train, dropout_seed);
    const Gradients grads = network_backward(model, fwd.cache, fwd.logits, labels);

    std::vector<GradCheck> out;
    visit_parameters([&](const std::string& name, auto& param, auto& grad) {
        out.push_back(check_tensor(std::string(variant_name(variant)) + "/" + name, param, grad, loss));
    }, model.params, grads);
    return out;
}

/// Per-layer checks of inputs and parameters.
inline std::vector<GradCheck> layer_gradient_checks(std::uint64_t seed) {
    Rng rng(seed);
    std::vector<GradCheck> out;
    const int steps = 8, batch = 2, cols = steps * batch;

    {  // dilated causal convolution
        Matrix x = random_matrix(rng, 3, cols);
        Matrix w = random_matrix(rng, 2, 3 * 3);
        Vector b = random_vector(rng, 2);
        const Matrix r = random_matrix(rng, 2, cols);
        auto loss = [&] { return project(r, dilated_causal_conv_forward(x, w, b, steps, 3, 2)); };
        const auto g = kernels::causal_conv_backward(x, w, r, steps, 3, 2, true);
        out.push_back(check_tensor("conv/input", x, g.d_input, loss));
        out.push_back(check_tensor("conv/weight", w, g.d_weight, loss));
        out.push_back(check_tensor("conv/bias", b, g.d_bias, loss));
    }
    {  // weight normalization
        Matrix v = random_matrix(rng, 3, 6);
        Vector s = random_vector(rng, 3);
        const Matrix r = random_matrix(rng, 3, 6);
        auto loss = [&] { return project(r, weight_norm_apply(v, s)); };
        const auto g = weight_norm_backward(v, s, r);
        out.push_back(check_tensor("weight_norm/direction", v, g.d_direction, loss));
        out.push_back(check_tensor("weight_norm/scale", s, g.d_scale, loss));
    }
    {  // TCN block with a projection skip, dropout active
        const NetworkConfig cfg = tiny_network_config(Variant::Tcn);
        Model m = init_model(cfg, seed);
        TcnBlock blk = m.params.tcn[0];
        perturb_all(rng, m.params, 0.1);
        blk = m.params.tcn[0];
        Matrix x = random_matrix(rng, cfg.n_vars, cols);
        const Matrix r = random_matrix(rng, cfg.tcn_channels, cols);
        const int k = cfg.tcn_kernel_size, d = 2;
        auto loss = [&] { return project(r, tcn_block_forward(blk, x, steps, k, d, 0.3, Mode::Train, 77, nullptr)); };
        TcnBlockCache cache;
        tcn_block_forward(blk, x, steps, k, d, 0.3, Mode::Train, 77, &cache);
        auto g = tcn_block_backward(blk, cache, r, steps, k, d);
        out.push_back(check_tensor("tcn_block/input", x, g.d_input, loss));
        out.push_back(check_tensor("tcn_block/conv1.v", blk.conv1.direction, g.d_params.conv1.direction, loss));
        out.push_back(check_tensor("tcn_block/conv1.g", blk.conv1.scale, g.d_params.conv1.scale, loss));
        out.push_back(check_tensor("tcn_block/conv1.b", blk.conv1.bias, g.d_params.conv1.bias, loss));
        out.push_back(check_tensor("tcn_block/conv2.v", blk.conv2.direction, g.d_params.conv2.direction, loss));
        out.push_back(check_tensor("tcn_block/conv2.g", blk.conv2.scale, g.d_params.conv2.scale, loss));
        out.push_back(check_tensor("tcn_block/conv2.b", blk.conv2.bias, g.d_params.conv2.bias, loss));
        out.push_back(check_tensor("tcn_block/skip.w", blk.skip.weight, g.d_params.skip.weight, loss));
        out.push_back(check_tensor("tcn_block/skip.b", blk.skip.bias, g.d_params.skip.bias, loss));
    }
    {  // self-attention
        Matrix x = random_matrix(rng, 3, cols);
        SelfAttention sa{random_matrix(rng, 2, 3), random_matrix(rng, 2, 3), random_matrix(rng, 3, 3)};
        const Matrix r = random_matrix(rng, 3, cols);
        auto loss = [&] { return project(r, self_attention_forward(x, sa, steps).output); };
        const auto fwd = self_attention_forward(x, sa, steps);
        auto g = self_attention_backward(x, sa, fwd.cache, r, steps);
        out.push_back(check_tensor("attention/input", x, g.d_input, loss));
        out.push_back(check_tensor("attention/query", sa.query, g.d_params.query, loss));
        out.push_back(check_tensor("attention/key", sa.key, g.d_params.key, loss));
        out.push_back(check_tensor("attention/value", sa.value, g.d_params.value, loss));
    }
    for (Mode mode : {Mode::Train, Mode::Eval}) {  // batch normalization
        const std::string tag = mode == Mode::Train ? "batch_norm.train/" : "batch_norm.eval/";
        Matrix x = random_matrix(rng, 3, cols, 2.0);
        BatchNorm bn{random_vector(rng, 3), random_vector(rng, 3)};
        RunningStats running{random_vector(rng, 3), (random_vector(rng, 3).array().abs() + 0.5).matrix()};
        const Matrix r = random_matrix(rng, 3, cols);
        auto loss = [&] { return project(r, batch_norm_forward(x, bn, running, mode, batch, nullptr)); };
        BatchNormCache cache;
        batch_norm_forward(x, bn, running, mode, batch, &cache);
        auto g = batch_norm_backward(bn, cache, r, mode);
        out.push_back(check_tensor(tag + "input", x, g.d_input, loss));
        out.push_back(check_tensor(tag + "gamma", bn.gamma, g.d_gamma, loss));
        out.push_back(check_tensor(tag + "beta", bn.beta, g.d_beta, loss));
    }
    for (Variant v : {Variant::TcnSaRes1, Variant::Etcn}) {  // residual blocks
        const std::string tag = v == Variant::Etcn ? "res_block2/" : "res_block1/";
        Model m = init_model(tiny_network_config(v), seed);
        perturb_all(rng, m.params, 0.2);
        ResBlock blk = m.params.res;
        Matrix x = random_matrix(rng, 3, cols);
        const Matrix r = random_matrix(rng, 3, cols);
        const int k = m.config.res_kernel_size;
        auto loss = [&] {
            return project(r, res_block_forward(blk, m.buffers, x, steps, k, Mode::Train, batch, nullptr));
        };
        ResBlockCache cache;
        res_block_forward(blk, m.buffers, x, steps, k, Mode::Train, batch, &cache);
        auto g = res_block_backward(blk, cache, r, steps, k, Mode::Train);
        out.push_back(check_tensor(tag + "input", x, g.d_input, loss));
        out.push_back(check_tensor(tag + "conv1.w", blk.conv1.weight, g.d_params.conv1.weight, loss));
        out.push_back(check_tensor(tag + "bn1.gamma", blk.bn1.gamma, g.d_params.bn1.gamma, loss));
        out.push_back(check_tensor(tag + "bn1.beta", blk.bn1.beta, g.d_params.bn1.beta, loss));
        out.push_back(check_tensor(tag + "conv2.w", blk.conv2.weight, g.d_params.conv2.weight, loss));
        out.push_back(check_tensor(tag + "bn2.gamma", blk.bn2.gamma, g.d_params.bn2.gamma, loss));
        out.push_back(check_tensor(tag + "bn2.beta", blk.bn2.beta, g.d_params.bn2.beta, loss));
        if (v == Variant::Etcn) {
            out.push_back(check_tensor(tag + "shortcut.w", blk.shortcut.weight, g.d_params.shortcut.weight, loss));
            out.push_back(check_tensor(tag + "shortcut_bn.gamma", blk.shortcut_bn.gamma,
                                       g.d_params.shortcut_bn.gamma, loss));
            out.push_back(check_tensor(tag + "shortcut_bn.beta", blk.shortcut_bn.beta,
                                       g.d_params.shortcut_bn.beta, loss));
        }
    }
    {  // pooling + affine classifier
        Matrix f = random_matrix(rng, 3, cols);
        Classifier head{random_matrix(rng, 4, 3), random_vector(rng, 4)};
        const Matrix r = random_matrix(rng, 4, batch);
        auto loss = [&] { return project(r, classifier_forward(f, head, steps)); };
        Matrix pooled;
        classifier_forward(f, head, steps, &pooled);
        auto g = classifier_backward(head, pooled, r, steps);
        out.push_back(check_tensor("classifier/features", f, g.d_features, loss));
        out.push_back(check_tensor("classifier/weight", head.weight, g.d_params.weight, loss));
        out.push_back(check_tensor("classifier/bias", head.bias, g.d_params.bias, loss));
    }
    {  // softmax + cross-entropy: d/dlogits = (p - onehot) / batch
        Matrix logits = random_matrix(rng, 4, batch, 2.0);
        const std::vector<int> labels{2, 0};
        auto loss = [&] { return cross_entropy_loss(softmax(logits), labels); };
        Matrix g = softmax(logits);
        for (int b = 0; b < batch; ++b) g(labels[static_cast<std::size_t>(b)], b) -= 1.0;
        g /= batch;
        out.push_back(check_tensor("softmax_cross_entropy/logits", logits, g, loss));
    }
    return out;
}

}  // namespace etcn::test
