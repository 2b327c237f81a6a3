#include "etcn/training.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>

namespace etcn {

void validate(const TrainConfig& c) {
    if (c.epochs < 1) throw std::invalid_argument("TrainConfig: epochs must be >= 1");
    if (c.batch_size < 2) throw std::invalid_argument("TrainConfig: batch_size must be >= 2");
    if (!(c.learning_rate >= 0.0) || !std::isfinite(c.learning_rate))
        throw std::invalid_argument("TrainConfig: learning_rate must be finite and >= 0");
    if (c.eval_batch_size < 1) throw std::invalid_argument("TrainConfig: eval_batch_size must be >= 1");
}

AdamState make_adam_state(const NetworkParams& params) {
    AdamState s;
    s.first_moment = zeros_like(params);
    s.second_moment = zeros_like(params);
    return s;
}

void adam_step(NetworkParams& params, const Gradients& grads, AdamState& state, double learning_rate) {
    visit_parameters(
        [](const std::string& name, const auto& p, const auto& g) {
            if (g.rows() != p.rows() || g.cols() != p.cols())
                throw std::invalid_argument("adam_step: gradient shape mismatch for " + name);
            if (!g.allFinite()) throw std::runtime_error("adam_step: non-finite gradient in " + name);
        },
        params, grads);
    ++state.step;
    const double t = static_cast<double>(state.step);
    const double correction1 = 1.0 - std::pow(state.beta1, t);
    const double correction2 = 1.0 - std::pow(state.beta2, t);
    const double b1 = state.beta1;
    const double b2 = state.beta2;
    const double eps = state.epsilon;
    visit_parameters(
        [&](const std::string&, auto& p, const auto& g, auto& m, auto& v) {
            m = b1 * m + (1.0 - b1) * g;
            v.array() = b2 * v.array() + (1.0 - b2) * g.array().square();
            p.array() -= learning_rate * (m.array() / correction1) / ((v.array() / correction2).sqrt() + eps);
        },
        params, grads, state.first_moment, state.second_moment);
}

EvalResult evaluate(const Model& model, const SampleSet& samples, int batch_size) {
    if (samples.empty()) throw std::invalid_argument("evaluate: no samples");
    if (batch_size < 1) throw std::invalid_argument("evaluate: batch_size must be >= 1");
    EvalResult r;
    r.predictions.resize(samples.size());
    r.labels.resize(samples.size());
    double loss_sum = 0.0;
    std::size_t correct = 0;
    std::vector<std::size_t> idx;
    std::vector<int> labels;
    for (std::size_t first = 0; first < samples.size(); first += static_cast<std::size_t>(batch_size)) {
        const std::size_t last = std::min(samples.size(), first + static_cast<std::size_t>(batch_size));
        idx.resize(last - first);
        std::iota(idx.begin(), idx.end(), first);
        labels.resize(idx.size());
        for (std::size_t i = 0; i < idx.size(); ++i) labels[i] = samples.label(idx[i]);
        const auto fwd = network_forward(model, make_batch(samples, idx), Mode::Eval);
        const Matrix probs = softmax(fwd.logits);
        loss_sum += cross_entropy_loss(probs, labels) * static_cast<double>(idx.size());
        for (std::size_t i = 0; i < idx.size(); ++i) {
            Eigen::Index best = 0;
            probs.col(static_cast<Eigen::Index>(i)).maxCoeff(&best);
            r.predictions[first + i] = static_cast<int>(best);
            r.labels[first + i] = labels[i];
            if (best == labels[i]) ++correct;
        }
    }
    r.loss = loss_sum / static_cast<double>(samples.size());
    r.accuracy = static_cast<double>(correct) / static_cast<double>(samples.size());
    return r;
}

FitResult fit(Model model, const SampleSet& train, const SampleSet& validation, const TrainConfig& config,
              const EpochCallback& on_epoch) {
    validate(config);
    check_shapes(model.config, model.params);
    if (train.empty()) throw std::invalid_argument("fit: empty training set");
    if (train.size() < 2) throw std::invalid_argument("fit: batch norm needs at least two training samples");
    if (train.width() != model.config.window_width)
        throw std::invalid_argument("fit: window width of the data differs from the network config");
    const int field = receptive_field(model.config);
    if (field < model.config.window_width)
        warn("receptive field " + std::to_string(field) + " is shorter than the window width " +
             std::to_string(model.config.window_width));

    FitResult result;
    AdamState adam = make_adam_state(model.params);
    std::vector<std::size_t> order(train.size());
    std::iota(order.begin(), order.end(), 0);
    std::vector<int> labels;
    std::uint64_t step = 0;
    const auto batch = static_cast<std::size_t>(config.batch_size);

    for (int epoch = 1; epoch <= config.epochs; ++epoch) {
        if (config.shuffle) {
            Rng rng(derive_seed(config.seed, "shuffle", static_cast<std::uint64_t>(epoch)));
            std::shuffle(order.begin(), order.end(), rng);
        }
        double running_loss = 0.0;
        std::size_t running_correct = 0, running_seen = 0;
        for (std::size_t first = 0; first < order.size(); first += batch) {
            const std::size_t n = std::min(batch, order.size() - first);
            if (n < 2) break;
            const std::span<const std::size_t> idx(order.data() + first, n);
            labels.resize(n);
            for (std::size_t i = 0; i < n; ++i) labels[i] = train.label(idx[i]);
            const auto fwd =
                network_forward(model, make_batch(train, idx), Mode::Train, derive_seed(config.seed, "dropout", step++));
            if (config.epoch_metrics == EpochMetrics::Running) {
                const Matrix probs = softmax(fwd.logits);
                running_loss += cross_entropy_loss(probs, labels) * static_cast<double>(n);
                for (std::size_t i = 0; i < n; ++i) {
                    Eigen::Index best = 0;
                    probs.col(static_cast<Eigen::Index>(i)).maxCoeff(&best);
                    if (best == labels[i]) ++running_correct;
                }
                running_seen += n;
            }
            const auto grads = network_backward(model, fwd.cache, fwd.logits, labels);
            adam_step(model.params, grads, adam, config.learning_rate);
            update_running_stats(model.buffers, model.config, fwd.cache);
        }
        EpochRecord rec;
        rec.epoch = epoch;
        if (config.epoch_metrics == EpochMetrics::FullPass) {
            const auto tr = evaluate(model, train, config.eval_batch_size);
            rec.train_loss = tr.loss;
            rec.train_accuracy = tr.accuracy;
        } else {
            rec.train_loss = running_loss / static_cast<double>(running_seen);
            rec.train_accuracy = static_cast<double>(running_correct) / static_cast<double>(running_seen);
        }
        if (!validation.empty()) {
            const auto va = evaluate(model, validation, config.eval_batch_size);
            rec.val_loss = va.loss;
            rec.val_accuracy = va.accuracy;
        } else {
            rec.val_loss = std::numeric_limits<double>::quiet_NaN();
            rec.val_accuracy = std::numeric_limits<double>::quiet_NaN();
        }
        result.history.push_back(rec);
        if (on_epoch) on_epoch(rec);
    }
    result.model = std::move(model);
    return result;
}

}  // namespace etcn
