#include "etcn/network.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace etcn {

std::string_view variant_name(Variant v) {
    switch (v) {
        case Variant::Tcn: return "tcn";
        case Variant::TcnSa: return "tcn+sa";
        case Variant::TcnRes2: return "tcn+res2";
        case Variant::TcnSaRes1: return "tcn+sa+res1";
        case Variant::Etcn: return "etcn";
    }
    return "?";
}

Variant parse_variant(std::string_view name) {
    for (Variant v : {Variant::Tcn, Variant::TcnSa, Variant::TcnRes2, Variant::TcnSaRes1, Variant::Etcn})
        if (variant_name(v) == name) return v;
    throw std::invalid_argument("unknown variant '" + std::string(name) + "'");
}

NetworkConfig with_variant(NetworkConfig config, Variant v) {
    switch (v) {
        case Variant::Tcn:
            config.sa_enabled = false;
            config.res_enabled = false;
            break;
        case Variant::TcnSa:
            config.sa_enabled = true;
            config.res_enabled = false;
            break;
        case Variant::TcnRes2:
            config.sa_enabled = false;
            config.res_enabled = true;
            config.res_block_kind = ResBlockKind::Projection;
            break;
        case Variant::TcnSaRes1:
            config.sa_enabled = true;
            config.res_enabled = true;
            config.res_block_kind = ResBlockKind::Identity;
            break;
        case Variant::Etcn:
            config.sa_enabled = true;
            config.res_enabled = true;
            config.res_block_kind = ResBlockKind::Projection;
            break;
    }
    return config;
}

void validate(const NetworkConfig& c) {
    auto fail = [](const std::string& what) { throw std::invalid_argument("NetworkConfig: " + what); };
    if (c.n_vars < 1) fail("n_vars must be >= 1");
    if (c.window_width < 1) fail("window_width must be >= 1");
    if (c.n_classes < 2) fail("n_classes must be >= 2");
    if (c.tcn_channels < 1) fail("tcn_channels must be >= 1");
    if (c.tcn_kernel_size < 1) fail("tcn_kernel_size must be >= 1");
    if (c.tcn_dilations.empty()) fail("at least one TCN block is required");
    for (int d : c.tcn_dilations)
        if (d < 1) fail("dilations must be strictly positive");
    if (!(c.dropout_rate >= 0.0 && c.dropout_rate <= 0.5)) fail("dropout_rate must lie in [0, 0.5]");
    if (c.attention_dim < 0) fail("attention_dim must be >= 0");
    if (c.res_kernel_size < 1) fail("res_kernel_size must be >= 1");
}

int receptive_field(std::span<const ConvLayerSpec> layers) {
    int field = 1;
    for (const auto& l : layers) field += (l.kernel - 1) * l.dilation;
    return field;
}

int receptive_field(const NetworkConfig& config) {
    std::vector<ConvLayerSpec> layers;
    for (int d : config.tcn_dilations) {
        layers.push_back({config.tcn_kernel_size, d});
        layers.push_back({config.tcn_kernel_size, d});
    }
    return receptive_field(layers);
}

NetworkParams zeros_like(const NetworkParams& params) {
    NetworkParams z = params;
    visit_parameters([](const std::string&, auto& t) { t.setZero(); }, z);
    return z;
}

std::size_t parameter_count(const NetworkParams& params) {
    std::size_t n = 0;
    visit_parameters([&](const std::string&, const auto& t) { n += static_cast<std::size_t>(t.size()); }, params);
    return n;
}

bool all_finite(const NetworkParams& params) {
    bool ok = true;
    visit_parameters([&](const std::string&, const auto& t) { ok = ok && t.allFinite(); }, params);
    return ok;
}

namespace {

Matrix gaussian(Rng& rng, Eigen::Index rows, Eigen::Index cols, double sd) {
    std::normal_distribution<double> g(0.0, sd);
    Matrix m(rows, cols);
    for (Eigen::Index j = 0; j < cols; ++j)
        for (Eigen::Index i = 0; i < rows; ++i) m(i, j) = g(rng);
    return m;
}

WeightNormConv init_weight_norm_conv(Rng& rng, int c_out, int c_in, int kernel) {
    const int fan_in = c_in * kernel;
    WeightNormConv conv;
    conv.direction = gaussian(rng, c_out, fan_in, 1.0 / std::sqrt(static_cast<double>(fan_in)));
    conv.scale = conv.direction.rowwise().norm();
    conv.bias = Vector::Zero(c_out);
    return conv;
}

Conv init_conv(Rng& rng, int c_out, int c_in, int kernel, bool bias) {
    const int fan_in = c_in * kernel;
    Conv conv;
    conv.weight = gaussian(rng, c_out, fan_in, 1.0 / std::sqrt(static_cast<double>(fan_in)));
    if (bias) conv.bias = Vector::Zero(c_out);
    return conv;
}

BatchNorm init_bn(int channels) { return {Vector::Ones(channels), Vector::Zero(channels)}; }
RunningStats init_running(int channels) { return {Vector::Zero(channels), Vector::Ones(channels)}; }

void expect_shape(const std::string& name, Eigen::Index rows, Eigen::Index cols, Eigen::Index er, Eigen::Index ec) {
    if (rows != er || cols != ec)
        throw std::invalid_argument("parameter " + name + " has shape " + std::to_string(rows) + "x" +
                                    std::to_string(cols) + ", expected " + std::to_string(er) + "x" +
                                    std::to_string(ec));
}

Matrix relu(const Matrix& x) { return x.cwiseMax(0.0); }

// Inverted-dropout mask from a counter-based stream: element j keeps with
// probability 1 - rate and is scaled by 1 / (1 - rate).
Matrix dropout_mask(Eigen::Index rows, Eigen::Index cols, double rate, std::uint64_t seed) {
    Matrix mask(rows, cols);
    const double keep_scale = 1.0 / (1.0 - rate);
    double* data = mask.data();
    const Eigen::Index n = mask.size();
    for (Eigen::Index j = 0; j < n; ++j) {
        const double u =
            static_cast<double>(splitmix64(seed + static_cast<std::uint64_t>(j)) >> 11) * 0x1.0p-53;
        data[j] = u < rate ? 0.0 : keep_scale;
    }
    return mask;
}

}  // namespace

Model init_model(const NetworkConfig& config, std::uint64_t seed) {
    validate(config);
    Model m;
    m.config = config;
    Rng rng(seed);
    const int C = config.tcn_channels;
    const int k = config.tcn_kernel_size;
    for (std::size_t i = 0; i < config.tcn_dilations.size(); ++i) {
        const int c_in = i == 0 ? config.n_vars : C;
        TcnBlock block;
        block.conv1 = init_weight_norm_conv(rng, C, c_in, k);
        block.conv2 = init_weight_norm_conv(rng, C, C, k);
        if (c_in != C) block.skip = init_conv(rng, C, c_in, 1, true);
        m.params.tcn.push_back(std::move(block));
    }
    if (config.sa_enabled) {
        const double sd = 1.0 / std::sqrt(static_cast<double>(C));
        m.params.attention.query = gaussian(rng, config.key_dim(), C, sd);
        m.params.attention.key = gaussian(rng, config.key_dim(), C, sd);
        m.params.attention.value = gaussian(rng, C, C, sd);
    }
    if (config.res_enabled) {
        // Convolutions feeding batch norm carry no bias.
        auto& r = m.params.res;
        r.conv1 = init_conv(rng, C, C, config.res_kernel_size, false);
        r.bn1 = init_bn(C);
        r.conv2 = init_conv(rng, C, C, config.res_kernel_size, false);
        r.bn2 = init_bn(C);
        m.buffers.res_bn1 = init_running(C);
        m.buffers.res_bn2 = init_running(C);
        if (config.res_block_kind == ResBlockKind::Projection) {
            r.shortcut = init_conv(rng, C, C, 1, false);
            r.shortcut_bn = init_bn(C);
            m.buffers.res_shortcut_bn = init_running(C);
        }
    }
    m.params.head.weight = gaussian(rng, config.n_classes, C, 1.0 / std::sqrt(static_cast<double>(C)));
    m.params.head.bias = Vector::Zero(config.n_classes);
    return m;
}

void check_shapes(const NetworkConfig& config, const NetworkParams& p) {
    validate(config);
    const int C = config.tcn_channels;
    const int k = config.tcn_kernel_size;
    if (p.tcn.size() != config.tcn_dilations.size())
        throw std::invalid_argument("parameters have " + std::to_string(p.tcn.size()) + " TCN blocks, config " +
                                    std::to_string(config.tcn_dilations.size()));
    for (std::size_t i = 0; i < p.tcn.size(); ++i) {
        const int c_in = i == 0 ? config.n_vars : C;
        const auto& b = p.tcn[i];
        const std::string pre = "tcn." + std::to_string(i) + ".";
        expect_shape(pre + "conv1.v", b.conv1.direction.rows(), b.conv1.direction.cols(), C, k * c_in);
        expect_shape(pre + "conv1.g", b.conv1.scale.size(), 1, C, 1);
        expect_shape(pre + "conv1.b", b.conv1.bias.size(), 1, C, 1);
        expect_shape(pre + "conv2.v", b.conv2.direction.rows(), b.conv2.direction.cols(), C, k * C);
        expect_shape(pre + "conv2.g", b.conv2.scale.size(), 1, C, 1);
        expect_shape(pre + "conv2.b", b.conv2.bias.size(), 1, C, 1);
        if (c_in != C) {
            expect_shape(pre + "skip.w", b.skip.weight.rows(), b.skip.weight.cols(), C, c_in);
            expect_shape(pre + "skip.b", b.skip.bias.size(), 1, C, 1);
        } else if (b.skip.weight.size() != 0) {
            throw std::invalid_argument(pre + "skip present although channel counts match");
        }
    }
    if (config.sa_enabled) {
        expect_shape("sa.wq", p.attention.query.rows(), p.attention.query.cols(), config.key_dim(), C);
        expect_shape("sa.wk", p.attention.key.rows(), p.attention.key.cols(), config.key_dim(), C);
        expect_shape("sa.wv", p.attention.value.rows(), p.attention.value.cols(), C, C);
    }
    if (config.res_enabled) {
        const int rk = config.res_kernel_size;
        expect_shape("res.conv1.w", p.res.conv1.weight.rows(), p.res.conv1.weight.cols(), C, rk * C);
        expect_shape("res.conv2.w", p.res.conv2.weight.rows(), p.res.conv2.weight.cols(), C, rk * C);
        expect_shape("res.bn1.gamma", p.res.bn1.gamma.size(), 1, C, 1);
        expect_shape("res.bn2.gamma", p.res.bn2.gamma.size(), 1, C, 1);
        if (config.res_block_kind == ResBlockKind::Projection)
            expect_shape("res.shortcut.w", p.res.shortcut.weight.rows(), p.res.shortcut.weight.cols(), C, C);
    }
    expect_shape("head.w", p.head.weight.rows(), p.head.weight.cols(), config.n_classes, C);
    expect_shape("head.b", p.head.bias.size(), 1, config.n_classes, 1);
}

// ------------------------------------------------------------------ layers

Matrix weight_norm_apply(const Matrix& direction, const Vector& scale) {
    if (scale.size() != direction.rows()) throw std::invalid_argument("weight_norm: scale size mismatch");
    const Vector norms = direction.rowwise().norm();
    if ((norms.array() <= 0.0).any()) throw std::invalid_argument("weight_norm: zero-norm direction row");
    return (scale.array() / norms.array()).matrix().asDiagonal() * direction;
}

WeightNormGrads weight_norm_backward(const Matrix& direction, const Vector& scale, const Matrix& d_weight) {
    const Vector norms = direction.rowwise().norm();
    // dg = <dW, v> / |v| ; dv = g / |v| * (dW - <dW, v> v / |v|^2)
    const Vector dots = (d_weight.array() * direction.array()).rowwise().sum();
    WeightNormGrads g;
    g.d_scale = dots.array() / norms.array();
    const Vector proj = dots.array() / norms.array().square();
    g.d_direction = (scale.array() / norms.array()).matrix().asDiagonal() *
                    (d_weight - proj.asDiagonal() * direction);
    return g;
}

Matrix dilated_causal_conv_forward(const Matrix& x, const Matrix& weight, const Vector& bias, int steps, int kernel,
                                   int dilation) {
    return kernels::causal_conv(x, weight, bias, steps, kernel, dilation);
}

Matrix batch_norm_forward(const Matrix& x, const BatchNorm& bn, const RunningStats& running, Mode mode, int batch,
                          BatchNormCache* cache) {
    if (bn.gamma.size() != x.rows() || bn.beta.size() != x.rows())
        throw std::invalid_argument("batch_norm: parameter size mismatch");
    Vector mean;
    Vector var;
    if (mode == Mode::Train) {
        if (batch < 2) throw std::invalid_argument("batch_norm: train mode needs a batch of at least 2 samples");
        mean = x.rowwise().mean();
        var = (x.colwise() - mean).array().square().rowwise().mean();
    } else {
        if (running.mean.size() != x.rows() || running.var.size() != x.rows())
            throw std::invalid_argument("batch_norm: running statistics missing");
        mean = running.mean;
        var = running.var;
    }
    const Vector inv_std = (var.array() + kBatchNormEps).rsqrt();
    Matrix x_hat = inv_std.asDiagonal() * (x.colwise() - mean);
    Matrix y = bn.gamma.asDiagonal() * x_hat;
    y.colwise() += bn.beta;
    if (cache) {
        cache->x_hat = std::move(x_hat);
        cache->inv_std = inv_std;
        cache->batch_mean = std::move(mean);
        cache->batch_var = std::move(var);
    }
    return y;
}

BatchNormGrads batch_norm_backward(const BatchNorm& bn, const BatchNormCache& cache, const Matrix& d_out, Mode mode) {
    BatchNormGrads g;
    g.d_beta = d_out.rowwise().sum();
    g.d_gamma = (d_out.array() * cache.x_hat.array()).rowwise().sum();
    const Matrix d_xhat = bn.gamma.asDiagonal() * d_out;
    if (mode == Mode::Eval) {
        g.d_input = cache.inv_std.asDiagonal() * d_xhat;
        return g;
    }
    const double n = static_cast<double>(d_out.cols());
    const Vector sum_d = d_xhat.rowwise().sum();
    const Vector sum_dx = (d_xhat.array() * cache.x_hat.array()).rowwise().sum();
    Matrix centered = d_xhat * n;
    centered.colwise() -= sum_d;
    centered -= sum_dx.asDiagonal() * cache.x_hat;
    g.d_input = (cache.inv_std / n).asDiagonal() * centered;
    return g;
}

void update_running_stats(RunningStats& running, const BatchNormCache& cache, double momentum) {
    running.mean = momentum * running.mean + (1.0 - momentum) * cache.batch_mean;
    running.var = momentum * running.var + (1.0 - momentum) * cache.batch_var;
}

Matrix tcn_block_forward(const TcnBlock& block, const Matrix& x, int steps, int kernel, int dilation, double dropout,
                         Mode mode, std::uint64_t dropout_seed, TcnBlockCache* cache) {
    const bool drop = mode == Mode::Train && dropout > 0.0;
    Matrix w1 = weight_norm_apply(block.conv1.direction, block.conv1.scale);
    Matrix pre1 = kernels::causal_conv(x, w1, block.conv1.bias, steps, kernel, dilation);
    Matrix act1 = relu(pre1);
    Matrix mask1;
    if (drop) {
        mask1 = dropout_mask(act1.rows(), act1.cols(), dropout, derive_seed(dropout_seed, "dropout", 0));
        act1.array() *= mask1.array();
    }
    Matrix w2 = weight_norm_apply(block.conv2.direction, block.conv2.scale);
    Matrix pre2 = kernels::causal_conv(act1, w2, block.conv2.bias, steps, kernel, dilation);
    Matrix out = relu(pre2);
    Matrix mask2;
    if (drop) {
        mask2 = dropout_mask(out.rows(), out.cols(), dropout, derive_seed(dropout_seed, "dropout", 1));
        out.array() *= mask2.array();
    }
    if (block.skip.weight.size() != 0) {
        out += kernels::causal_conv(x, block.skip.weight, block.skip.bias, steps, 1, 1);
    } else {
        if (x.rows() != out.rows()) throw std::invalid_argument("tcn_block: identity skip with channel mismatch");
        out += x;
    }
    if (!out.allFinite()) throw std::runtime_error("tcn_block: non-finite activation");
    if (cache) {
        cache->input = x;
        cache->weight1 = std::move(w1);
        cache->weight2 = std::move(w2);
        cache->pre1 = std::move(pre1);
        cache->pre2 = std::move(pre2);
        cache->mask1 = std::move(mask1);
        cache->mask2 = std::move(mask2);
        cache->act1 = std::move(act1);
    }
    return out;
}

TcnBlockGrads tcn_block_backward(const TcnBlock& block, const TcnBlockCache& cache, const Matrix& d_out, int steps,
                                 int kernel, int dilation, bool need_input_grad) {
    TcnBlockGrads g;
    Matrix d_pre2 = (cache.pre2.array() > 0.0).select(d_out, 0.0);
    if (cache.mask2.size() != 0) d_pre2.array() *= cache.mask2.array();
    auto c2 = kernels::causal_conv_backward(cache.act1, cache.weight2, d_pre2, steps, kernel, dilation, true);
    auto wn2 = weight_norm_backward(block.conv2.direction, block.conv2.scale, c2.d_weight);
    g.d_params.conv2 = {std::move(wn2.d_direction), std::move(wn2.d_scale), std::move(c2.d_bias)};

    Matrix d_pre1 = std::move(c2.d_input);
    if (cache.mask1.size() != 0) d_pre1.array() *= cache.mask1.array();
    d_pre1 = (cache.pre1.array() > 0.0).select(d_pre1, 0.0);
    auto c1 = kernels::causal_conv_backward(cache.input, cache.weight1, d_pre1, steps, kernel, dilation, true,
                                            need_input_grad);
    auto wn1 = weight_norm_backward(block.conv1.direction, block.conv1.scale, c1.d_weight);
    g.d_params.conv1 = {std::move(wn1.d_direction), std::move(wn1.d_scale), std::move(c1.d_bias)};

    if (block.skip.weight.size() != 0) {
        auto s = kernels::causal_conv_backward(cache.input, block.skip.weight, d_out, steps, 1, 1, true,
                                               need_input_grad);
        g.d_params.skip = {std::move(s.d_weight), std::move(s.d_bias)};
        if (need_input_grad) g.d_input = std::move(c1.d_input) + s.d_input;
    } else if (need_input_grad) {
        g.d_input = std::move(c1.d_input) + d_out;
    }
    return g;
}

AttentionResult self_attention_forward(const Matrix& x, const SelfAttention& sa, int steps) {
    AttentionResult r;
    r.cache = kernels::self_attention(x, sa.query, sa.key, sa.value, steps);
    r.output = r.cache.output;
    return r;
}

AttentionGrads self_attention_backward(const Matrix& x, const SelfAttention& sa, const kernels::AttentionForward& cache,
                                       const Matrix& d_out, int steps) {
    auto k = kernels::self_attention_backward(x, sa.query, sa.key, sa.value, cache, d_out, steps);
    AttentionGrads g;
    g.d_input = std::move(k.d_input);
    g.d_params = {std::move(k.d_query_weight), std::move(k.d_key_weight), std::move(k.d_value_weight)};
    return g;
}

Matrix res_block_forward(const ResBlock& block, const NetworkBuffers& buffers, const Matrix& x, int steps, int kernel,
                         Mode mode, int batch, ResBlockCache* cache) {
    const bool projection = block.shortcut.weight.size() != 0;
    if (!projection && block.conv2.weight.rows() != x.rows())
        throw std::invalid_argument("res_block: identity shortcut needs equal input/output channels");
    ResBlockCache local;
    ResBlockCache& c = cache ? *cache : local;
    c.input = x;
    c.conv1_out = kernels::causal_conv(x, block.conv1.weight, block.conv1.bias, steps, kernel, 1);
    c.act1 = relu(batch_norm_forward(c.conv1_out, block.bn1, buffers.res_bn1, mode, batch, &c.bn1));
    c.conv2_out = kernels::causal_conv(c.act1, block.conv2.weight, block.conv2.bias, steps, kernel, 1);
    c.pre_activation = batch_norm_forward(c.conv2_out, block.bn2, buffers.res_bn2, mode, batch, &c.bn2);
    if (projection) {
        c.shortcut_conv_out = kernels::causal_conv(x, block.shortcut.weight, block.shortcut.bias, steps, 1, 1);
        c.pre_activation += batch_norm_forward(c.shortcut_conv_out, block.shortcut_bn, buffers.res_shortcut_bn, mode,
                                               batch, &c.shortcut_bn);
    } else {
        c.pre_activation += x;
    }
    return relu(c.pre_activation);
}

ResBlockGrads res_block_backward(const ResBlock& block, const ResBlockCache& c, const Matrix& d_out, int steps,
                                 int kernel, Mode mode) {
    ResBlockGrads g;
    const Matrix d_sum = (c.pre_activation.array() > 0.0).select(d_out, 0.0);

    auto bn2 = batch_norm_backward(block.bn2, c.bn2, d_sum, mode);
    auto conv2 = kernels::causal_conv_backward(c.act1, block.conv2.weight, bn2.d_input, steps, kernel, 1,
                                               block.conv2.bias.size() != 0);
    Matrix d_act1 = (c.act1.array() > 0.0).select(conv2.d_input, 0.0);
    auto bn1 = batch_norm_backward(block.bn1, c.bn1, d_act1, mode);
    auto conv1 = kernels::causal_conv_backward(c.input, block.conv1.weight, bn1.d_input, steps, kernel, 1,
                                               block.conv1.bias.size() != 0);
    g.d_params.conv1 = {std::move(conv1.d_weight), std::move(conv1.d_bias)};
    g.d_params.bn1 = {std::move(bn1.d_gamma), std::move(bn1.d_beta)};
    g.d_params.conv2 = {std::move(conv2.d_weight), std::move(conv2.d_bias)};
    g.d_params.bn2 = {std::move(bn2.d_gamma), std::move(bn2.d_beta)};
    g.d_input = std::move(conv1.d_input);

    if (block.shortcut.weight.size() != 0) {
        auto bns = batch_norm_backward(block.shortcut_bn, c.shortcut_bn, d_sum, mode);
        auto convs = kernels::causal_conv_backward(c.input, block.shortcut.weight, bns.d_input, steps, 1, 1,
                                                   block.shortcut.bias.size() != 0);
        g.d_params.shortcut = {std::move(convs.d_weight), std::move(convs.d_bias)};
        g.d_params.shortcut_bn = {std::move(bns.d_gamma), std::move(bns.d_beta)};
        g.d_input += convs.d_input;
    } else {
        g.d_input += d_sum;
    }
    return g;
}

Matrix classifier_forward(const Matrix& features, const Classifier& head, int steps, Matrix* pooled_out) {
    if (head.weight.cols() != features.rows()) throw std::invalid_argument("classifier: feature size mismatch");
    Matrix pooled = kernels::time_average(features, steps);
    Matrix logits = head.weight * pooled;
    logits.colwise() += head.bias;
    if (pooled_out) *pooled_out = std::move(pooled);
    return logits;
}

ClassifierGrads classifier_backward(const Classifier& head, const Matrix& pooled, const Matrix& d_logits, int steps) {
    ClassifierGrads g;
    g.d_params.weight = d_logits * pooled.transpose();
    g.d_params.bias = d_logits.rowwise().sum();
    const Matrix d_pooled = head.weight.transpose() * d_logits / static_cast<double>(steps);
    g.d_features.resize(d_pooled.rows(), d_pooled.cols() * steps);
    for (Eigen::Index b = 0; b < d_pooled.cols(); ++b)
        g.d_features.middleCols(b * steps, steps) = d_pooled.col(b).replicate(1, steps);
    return g;
}

Matrix softmax(const Matrix& logits) {
    Matrix p = logits;
    for (Eigen::Index b = 0; b < p.cols(); ++b) {
        auto col = p.col(b);
        col.array() = (col.array() - col.maxCoeff()).exp();
        col /= col.sum();
    }
    return p;
}

Vector softmax(const Vector& logits) {
    Matrix m = logits;
    return softmax(m).col(0);
}

double cross_entropy_loss(const Matrix& probabilities, std::span<const int> labels) {
    if (static_cast<Eigen::Index>(labels.size()) != probabilities.cols() || labels.empty())
        throw std::invalid_argument("cross_entropy_loss: label count mismatch");
    double total = 0.0;
    for (std::size_t b = 0; b < labels.size(); ++b) {
        const int y = labels[b];
        if (y < 0 || y >= probabilities.rows()) throw std::invalid_argument("cross_entropy_loss: invalid class id");
        total -= std::log(std::max(probabilities(y, static_cast<Eigen::Index>(b)), kLogClamp));
    }
    return total / static_cast<double>(labels.size());
}

// ----------------------------------------------------------------- network

namespace {

int batch_size_of(const Model& model, const Matrix& input) {
    const auto& c = model.config;
    if (input.rows() != c.n_vars)
        throw std::invalid_argument("network: input has " + std::to_string(input.rows()) + " variables, config " +
                                    std::to_string(c.n_vars));
    if (input.cols() == 0 || input.cols() % c.window_width != 0)
        throw std::invalid_argument("network: input columns not a multiple of window_width");
    return static_cast<int>(input.cols() / c.window_width);
}

Matrix run_tcn(const Model& model, const Matrix& input, Mode mode, std::uint64_t dropout_seed,
               std::vector<TcnBlockCache>* caches) {
    const auto& c = model.config;
    if (model.params.tcn.size() != c.tcn_dilations.size()) throw std::invalid_argument("network: config/param mismatch");
    Matrix x = input;
    if (caches) caches->resize(model.params.tcn.size());
    for (std::size_t i = 0; i < model.params.tcn.size(); ++i) {
        x = tcn_block_forward(model.params.tcn[i], x, c.window_width, c.tcn_kernel_size, c.tcn_dilations[i],
                              c.dropout_rate, mode, derive_seed(dropout_seed, "tcn-block", i),
                              caches ? &(*caches)[i] : nullptr);
    }
    return x;
}

}  // namespace

Matrix tcn_stage_forward(const Model& model, const Matrix& input, Mode mode, std::uint64_t dropout_seed) {
    batch_size_of(model, input);
    return run_tcn(model, input, mode, dropout_seed, nullptr);
}

ForwardResult network_forward(const Model& model, const Matrix& input, Mode mode, std::uint64_t dropout_seed) {
    const auto& c = model.config;
    const int batch = batch_size_of(model, input);
    const int steps = c.window_width;
    ForwardResult r;
    auto& cache = r.cache;
    cache.mode = mode;
    cache.batch = batch;
    cache.steps = steps;

    // Eval-mode passes keep no intermediate state.
    const bool train = mode == Mode::Train;
    Matrix x = run_tcn(model, input, mode, dropout_seed, train ? &cache.tcn : nullptr);
    if (c.sa_enabled) {
        if (model.params.attention.query.size() == 0) throw std::invalid_argument("network: attention params missing");
        cache.attention = kernels::self_attention(x, model.params.attention.query, model.params.attention.key,
                                                  model.params.attention.value, steps, train);
        if (train) cache.attention_input = std::move(x);
        x = std::move(cache.attention.output);
    }
    if (c.res_enabled) {
        if (model.params.res.conv1.weight.size() == 0) throw std::invalid_argument("network: residual params missing");
        x = res_block_forward(model.params.res, model.buffers, x, steps, c.res_kernel_size, mode, batch,
                              train ? &cache.res : nullptr);
    }
    r.logits = classifier_forward(x, model.params.head, steps, &cache.pooled);
    cache.features = std::move(x);
    return r;
}

Gradients network_backward(const Model& model, const ForwardCache& cache, const Matrix& logits,
                           std::span<const int> labels, double loss_scale) {
    if (cache.mode != Mode::Train) throw std::invalid_argument("network_backward: cache is from an eval-mode forward");
    const auto& c = model.config;
    const int steps = cache.steps;
    if (static_cast<int>(labels.size()) != cache.batch) throw std::invalid_argument("network_backward: label count");

    Matrix d_logits = softmax(logits);
    for (int b = 0; b < cache.batch; ++b) {
        const int y = labels[static_cast<std::size_t>(b)];
        if (y < 0 || y >= c.n_classes) throw std::invalid_argument("network_backward: invalid class id");
        d_logits(y, b) -= 1.0;
    }
    d_logits *= loss_scale / static_cast<double>(cache.batch);

    Gradients g = zeros_like(model.params);
    auto head = classifier_backward(model.params.head, cache.pooled, d_logits, steps);
    g.head = std::move(head.d_params);
    Matrix d = std::move(head.d_features);

    if (c.res_enabled) {
        auto res = res_block_backward(model.params.res, cache.res, d, steps, c.res_kernel_size, Mode::Train);
        g.res = std::move(res.d_params);
        d = std::move(res.d_input);
    }
    if (c.sa_enabled) {
        auto sa = self_attention_backward(cache.attention_input, model.params.attention, cache.attention, d, steps);
        g.attention = std::move(sa.d_params);
        d = std::move(sa.d_input);
    }
    for (std::size_t i = model.params.tcn.size(); i-- > 0;) {
        auto blk = tcn_block_backward(model.params.tcn[i], cache.tcn[i], d, steps, c.tcn_kernel_size,
                                      c.tcn_dilations[i], i > 0);
        g.tcn[i] = std::move(blk.d_params);
        d = std::move(blk.d_input);
    }
    return g;
}

Matrix make_batch(const SampleSet& samples, std::span<const std::size_t> indices) {
    const int width = samples.width();
    Matrix batch(samples.n_vars(), static_cast<Eigen::Index>(indices.size()) * width);
    for (std::size_t b = 0; b < indices.size(); ++b)
        batch.middleCols(static_cast<Eigen::Index>(b) * width, width) = samples.window(indices[b]);
    return batch;
}

Matrix make_batch(std::span<const WindowedSample> samples) {
    if (samples.empty()) throw std::invalid_argument("make_batch: no samples");
    const auto width = samples.front().window.cols();
    Matrix batch(samples.front().window.rows(), static_cast<Eigen::Index>(samples.size()) * width);
    for (std::size_t b = 0; b < samples.size(); ++b) {
        if (samples[b].window.cols() != width || samples[b].window.rows() != batch.rows())
            throw std::invalid_argument("make_batch: inconsistent window shapes");
        batch.middleCols(static_cast<Eigen::Index>(b) * width, width) = samples[b].window;
    }
    return batch;
}

void update_running_stats(NetworkBuffers& buffers, const NetworkConfig& config, const ForwardCache& cache) {
    if (cache.mode != Mode::Train || !config.res_enabled) return;
    update_running_stats(buffers.res_bn1, cache.res.bn1);
    update_running_stats(buffers.res_bn2, cache.res.bn2);
    if (config.res_block_kind == ResBlockKind::Projection) update_running_stats(buffers.res_shortcut_bn, cache.res.shortcut_bn);
}

}  // namespace etcn
