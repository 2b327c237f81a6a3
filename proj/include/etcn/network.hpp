#pragma once

// ETCN classifier: dilated causal TCN blocks -> self-attention over time ->
// residual block -> global average pooling -> affine -> logits. Every layer
// has a hand-written backward pass; all activations use the batch layout
// described in kernels.hpp.

#include "etcn/common.hpp"
#include "etcn/data_pipeline.hpp"
#include "etcn/kernels.hpp"

#include <span>
#include <string>
#include <vector>

namespace etcn {

enum class ResBlockKind { Identity = 1, Projection = 2 };  // ResBlock1, ResBlock2

/// Ablation variants: TCN, TCN+SA, TCN+ResBlock2, TCN+SA+ResBlock1, ETCN.
enum class Variant { Tcn, TcnSa, TcnRes2, TcnSaRes1, Etcn };

std::string_view variant_name(Variant v);
/// Accepts tcn, tcn+sa, tcn+res2, tcn+sa+res1, etcn.
Variant parse_variant(std::string_view name);

struct NetworkConfig {
    int n_vars = kDefaultVars;
    int window_width = 120;
    int n_classes = kNumClasses;
    int tcn_channels = 32;
    int tcn_kernel_size = 5;
    std::vector<int> tcn_dilations{1, 2, 4};
    double dropout_rate = 0.289;
    int attention_dim = 0;  // 0 selects tcn_channels
    ResBlockKind res_block_kind = ResBlockKind::Projection;
    int res_kernel_size = 3;
    bool sa_enabled = true;
    bool res_enabled = true;

    int key_dim() const { return attention_dim > 0 ? attention_dim : tcn_channels; }
};

void validate(const NetworkConfig& config);
NetworkConfig with_variant(NetworkConfig config, Variant v);

struct ConvLayerSpec {
    int kernel = 1;
    int dilation = 1;
};

/// 1 + sum over layers of (kernel - 1) * dilation.
int receptive_field(std::span<const ConvLayerSpec> layers);
/// Receptive field of the TCN stage (two convolutions per block).
int receptive_field(const NetworkConfig& config);

// ---------------------------------------------------------------- params

/// Weight-normalized convolution: w_r = g_r * v_r / ||v_r|| per output row.
struct WeightNormConv {
    Matrix direction;  // v, C_out x (k * C_in)
    Vector scale;      // g, C_out
    Vector bias;
};

struct Conv {
    Matrix weight;  // C_out x (k * C_in); empty = layer absent
    Vector bias;    // empty = no bias
};

struct BatchNorm {
    Vector gamma;
    Vector beta;
};

struct TcnBlock {
    WeightNormConv conv1;
    WeightNormConv conv2;
    Conv skip;  // 1x1 projection, present only when channel counts differ
};

struct SelfAttention {
    Matrix query;  // d_k x C
    Matrix key;    // d_k x C
    Matrix value;  // C x C
};

struct ResBlock {
    Conv conv1;
    BatchNorm bn1;
    Conv conv2;
    BatchNorm bn2;
    Conv shortcut;  // ResBlock2 only: 1x1 conv followed by shortcut_bn
    BatchNorm shortcut_bn;
};

struct Classifier {
    Matrix weight;  // n_classes x C
    Vector bias;
};

struct NetworkParams {
    std::vector<TcnBlock> tcn;
    SelfAttention attention;
    ResBlock res;
    Classifier head;
};

/// Same shape-tree as the parameters.
using Gradients = NetworkParams;

struct RunningStats {
    Vector mean;
    Vector var;
};

/// Batch-norm running statistics. Not trainable, not touched by Adam.
struct NetworkBuffers {
    RunningStats res_bn1;
    RunningStats res_bn2;
    RunningStats res_shortcut_bn;
};

/// Calls f(name, tensor_from_tree_1, tensor_from_tree_2, ...) for every
/// non-empty trainable tensor. All trees must share the first tree's shape.
template <class F, class First, class... Rest>
void visit_parameters(F&& f, First& first, Rest&... rest) {
    auto conv_like = [&](const std::string& name, auto&& get) {
        auto& a = get(first);
        if (a.size() == 0) return;
        f(name, a, get(rest)...);
    };
    for (std::size_t i = 0; i < first.tcn.size(); ++i) {
        const std::string pre = "tcn." + std::to_string(i) + ".";
        conv_like(pre + "conv1.v", [i](auto& p) -> auto& { return p.tcn[i].conv1.direction; });
        conv_like(pre + "conv1.g", [i](auto& p) -> auto& { return p.tcn[i].conv1.scale; });
        conv_like(pre + "conv1.b", [i](auto& p) -> auto& { return p.tcn[i].conv1.bias; });
        conv_like(pre + "conv2.v", [i](auto& p) -> auto& { return p.tcn[i].conv2.direction; });
        conv_like(pre + "conv2.g", [i](auto& p) -> auto& { return p.tcn[i].conv2.scale; });
        conv_like(pre + "conv2.b", [i](auto& p) -> auto& { return p.tcn[i].conv2.bias; });
        conv_like(pre + "skip.w", [i](auto& p) -> auto& { return p.tcn[i].skip.weight; });
        conv_like(pre + "skip.b", [i](auto& p) -> auto& { return p.tcn[i].skip.bias; });
    }
    conv_like("sa.wq", [](auto& p) -> auto& { return p.attention.query; });
    conv_like("sa.wk", [](auto& p) -> auto& { return p.attention.key; });
    conv_like("sa.wv", [](auto& p) -> auto& { return p.attention.value; });
    conv_like("res.conv1.w", [](auto& p) -> auto& { return p.res.conv1.weight; });
    conv_like("res.conv1.b", [](auto& p) -> auto& { return p.res.conv1.bias; });
    conv_like("res.bn1.gamma", [](auto& p) -> auto& { return p.res.bn1.gamma; });
    conv_like("res.bn1.beta", [](auto& p) -> auto& { return p.res.bn1.beta; });
    conv_like("res.conv2.w", [](auto& p) -> auto& { return p.res.conv2.weight; });
    conv_like("res.conv2.b", [](auto& p) -> auto& { return p.res.conv2.bias; });
    conv_like("res.bn2.gamma", [](auto& p) -> auto& { return p.res.bn2.gamma; });
    conv_like("res.bn2.beta", [](auto& p) -> auto& { return p.res.bn2.beta; });
    conv_like("res.shortcut.w", [](auto& p) -> auto& { return p.res.shortcut.weight; });
    conv_like("res.shortcut.b", [](auto& p) -> auto& { return p.res.shortcut.bias; });
    conv_like("res.shortcut_bn.gamma", [](auto& p) -> auto& { return p.res.shortcut_bn.gamma; });
    conv_like("res.shortcut_bn.beta", [](auto& p) -> auto& { return p.res.shortcut_bn.beta; });
    conv_like("head.w", [](auto& p) -> auto& { return p.head.weight; });
    conv_like("head.b", [](auto& p) -> auto& { return p.head.bias; });
}

/// Zero tensors with the shape of `params`.
NetworkParams zeros_like(const NetworkParams& params);
std::size_t parameter_count(const NetworkParams& params);
bool all_finite(const NetworkParams& params);

struct Model {
    NetworkConfig config;
    NetworkParams params;
    NetworkBuffers buffers;
};

/// Gaussian fan-in scaled weights, zero biases, weight-norm scales equal to
/// the initial row norms, BN gamma = 1 / beta = 0, running mean 0 / var 1.
Model init_model(const NetworkConfig& config, std::uint64_t seed);

/// Checks every tensor shape against the config.
void check_shapes(const NetworkConfig& config, const NetworkParams& params);

// ---------------------------------------------------------------- layers

enum class Mode { Train, Eval };

inline constexpr double kBatchNormEps = 1e-5;
inline constexpr double kBatchNormMomentum = 0.9;

/// Effective convolution weight of a weight-normalized layer.
Matrix weight_norm_apply(const Matrix& direction, const Vector& scale);

struct WeightNormGrads {
    Matrix d_direction;
    Vector d_scale;
};

WeightNormGrads weight_norm_backward(const Matrix& direction, const Vector& scale, const Matrix& d_weight);

/// Dilated causal convolution of one sample or a batch.
Matrix dilated_causal_conv_forward(const Matrix& x, const Matrix& weight, const Vector& bias, int steps, int kernel,
                                   int dilation);

struct BatchNormCache {
    Matrix x_hat;
    Vector inv_std;
    Vector batch_mean;
    Vector batch_var;  // biased
};

/// Statistics per channel over all batch * steps columns in train mode;
/// running statistics in eval mode. Train mode needs at least two samples.
Matrix batch_norm_forward(const Matrix& x, const BatchNorm& bn, const RunningStats& running, Mode mode, int batch,
                          BatchNormCache* cache);

struct BatchNormGrads {
    Matrix d_input;
    Vector d_gamma;
    Vector d_beta;
};

BatchNormGrads batch_norm_backward(const BatchNorm& bn, const BatchNormCache& cache, const Matrix& d_out, Mode mode);

/// running = momentum * running + (1 - momentum) * batch.
void update_running_stats(RunningStats& running, const BatchNormCache& cache, double momentum = kBatchNormMomentum);

struct TcnBlockCache {
    Matrix input;
    Matrix weight1, weight2;  // effective weights
    Matrix pre1, pre2;        // conv outputs before ReLU
    Matrix mask1, mask2;      // inverted-dropout masks (empty in eval)
    Matrix act1;              // conv2 input
};

/// TCN residual block: [weight-norm conv -> ReLU -> dropout] x 2, plus the
/// input (or its 1x1 projection). Dropout masks are drawn from
/// dropout_seed in train mode and are identity in eval mode.
Matrix tcn_block_forward(const TcnBlock& block, const Matrix& x, int steps, int kernel, int dilation, double dropout,
                         Mode mode, std::uint64_t dropout_seed, TcnBlockCache* cache);

struct TcnBlockGrads {
    Matrix d_input;
    TcnBlock d_params;
};

TcnBlockGrads tcn_block_backward(const TcnBlock& block, const TcnBlockCache& cache, const Matrix& d_out, int steps,
                                 int kernel, int dilation, bool need_input_grad = true);

struct AttentionResult {
    Matrix output;
    kernels::AttentionForward cache;
};

AttentionResult self_attention_forward(const Matrix& x, const SelfAttention& sa, int steps);

struct AttentionGrads {
    Matrix d_input;
    SelfAttention d_params;
};

AttentionGrads self_attention_backward(const Matrix& x, const SelfAttention& sa, const kernels::AttentionForward& cache,
                                       const Matrix& d_out, int steps);

struct ResBlockCache {
    Matrix input;
    Matrix conv1_out;
    BatchNormCache bn1;
    Matrix act1;
    Matrix conv2_out;
    BatchNormCache bn2;
    Matrix shortcut_conv_out;
    BatchNormCache shortcut_bn;
    Matrix pre_activation;  // F(x) + h(x)
};

/// y = ReLU(F(x) + h(x)), F = Conv-BN-ReLU-Conv-BN, h = identity or Conv-BN.
Matrix res_block_forward(const ResBlock& block, const NetworkBuffers& buffers, const Matrix& x, int steps, int kernel,
                         Mode mode, int batch, ResBlockCache* cache);

struct ResBlockGrads {
    Matrix d_input;
    ResBlock d_params;
};

ResBlockGrads res_block_backward(const ResBlock& block, const ResBlockCache& cache, const Matrix& d_out, int steps,
                                 int kernel, Mode mode);

/// Global average pooling over time, then affine. Returns n_classes x batch.
Matrix classifier_forward(const Matrix& features, const Classifier& head, int steps, Matrix* pooled_out = nullptr);

struct ClassifierGrads {
    Matrix d_features;
    Classifier d_params;
};

ClassifierGrads classifier_backward(const Classifier& head, const Matrix& pooled, const Matrix& d_logits, int steps);

/// Column-wise softmax of n_classes x batch logits.
Matrix softmax(const Matrix& logits);
Vector softmax(const Vector& logits);

inline constexpr double kLogClamp = 1e-12;

/// Mean of -log(max(p[label], 1e-12)) over the batch columns.
double cross_entropy_loss(const Matrix& probabilities, std::span<const int> labels);

// --------------------------------------------------------------- network

struct ForwardCache {
    Mode mode = Mode::Eval;
    int batch = 0;
    int steps = 0;
    std::vector<TcnBlockCache> tcn;
    Matrix attention_input;
    kernels::AttentionForward attention;
    ResBlockCache res;
    Matrix features;
    Matrix pooled;
};

struct ForwardResult {
    Matrix logits;  // n_classes x batch
    ForwardCache cache;
};

/// Input is n_vars x (batch * window_width). Dropout draws from
/// Rng(dropout_seed) in train mode.
ForwardResult network_forward(const Model& model, const Matrix& input, Mode mode, std::uint64_t dropout_seed = 0);

/// TCN stage only (the causal part of the network).
Matrix tcn_stage_forward(const Model& model, const Matrix& input, Mode mode, std::uint64_t dropout_seed = 0);

/// Gradient of the mean cross-entropy w.r.t. every parameter. The cache must
/// come from a train-mode forward.
Gradients network_backward(const Model& model, const ForwardCache& cache, const Matrix& logits,
                           std::span<const int> labels, double loss_scale = 1.0);

/// Packs windows [indices] of a sample set into the batch layout.
Matrix make_batch(const SampleSet& samples, std::span<const std::size_t> indices);
Matrix make_batch(std::span<const WindowedSample> samples);

/// Applies running-stat updates from a train-mode cache.
void update_running_stats(NetworkBuffers& buffers, const NetworkConfig& config, const ForwardCache& cache);

}  // namespace etcn
