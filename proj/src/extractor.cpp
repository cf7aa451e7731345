// SPDX-License-Identifier: Apache-2.0
#include "rlarff/extractor.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstring>
#include <numeric>
#include <random>

#include "rlarff/error.hpp"
#include "rlarff/instrument.hpp"
#include "rlarff/seeds.hpp"

namespace rlarff::fx {

namespace {

nd::Tensor uniform_matrix(std::size_t rows, std::size_t cols, std::mt19937_64& rng) {
    const double bound = std::sqrt(6.0 / static_cast<double>(rows + cols));
    std::uniform_real_distribution<double> u(-bound, bound);
    nd::Tensor t({rows, cols});
    for (auto& v : t.data()) v = u(rng);
    return t;
}

double norm_or_fail(std::span<const double> v, const char* what) {
    const double n = nd::l2_norm(v);
    if (!(n > nd::kNormEpsilon)) fail(Errc::degenerate_input, std::string(what) + " has (near) zero norm");
    return n;
}

std::vector<double> cosines(const Embedding& z, const MetricHead& head) {
    head.validate();
    if (z.size() != head.directions.cols()) {
        fail(Errc::dimension, "embedding of size " + std::to_string(z.size()) + " does not match head width " +
                                  std::to_string(head.directions.cols()));
    }
    const double zn = norm_or_fail(z, "embedding");
    const std::size_t d = z.size();
    std::vector<double> out(head.classes());
    for (std::size_t j = 0; j < out.size(); ++j) {
        const auto row = head.directions.data().subspan(j * d, d);
        const double wn = norm_or_fail(row, "class direction");
        out[j] = nd::dot(row, z) / (wn * zn);
    }
    return out;
}

// -ln softmax(scale * cos)[y], max-subtracted.
double nll_from_cosines(const std::vector<double>& cos, double scale, std::size_t y) {
    double mx = -std::numeric_limits<double>::infinity();
    for (double c : cos) mx = std::max(mx, scale * c);
    double denom = 0.0;
    for (double c : cos) denom += std::exp(scale * c - mx);
    return -(scale * cos[y] - mx - std::log(denom));
}

}  // namespace

// ---------------------------------------------------------------------------
// Architecture / model

void Architecture::validate() const {
    if (convs.empty()) fail(Errc::config, "architecture needs at least one conv layer");
    if (embedding_dim == 0) fail(Errc::config, "embedding_dim must be positive");
    std::size_t length = input_length;
    for (std::size_t i = 0; i < convs.size(); ++i) {
        const auto& c = convs[i];
        if (c.out_channels == 0 || c.width == 0 || c.stride == 0)
            fail(Errc::config, "conv layer " + std::to_string(i + 1) + " needs positive channels, width and stride");
        if (length < c.width)
            fail(Errc::config, "conv layer " + std::to_string(i + 1) + " width " + std::to_string(c.width) +
                                   " exceeds its input length " + std::to_string(length));
        length = (length - c.width) / c.stride + 1;
    }
}

std::vector<std::size_t> Architecture::lengths() const {
    std::vector<std::size_t> out{input_length};
    for (const auto& c : convs) out.push_back((out.back() - c.width) / c.stride + 1);
    return out;
}

ExtractorModel::ExtractorModel(Architecture arch, std::uint64_t init_seed) : arch_(std::move(arch)) {
    arch_.validate();
    std::mt19937_64 rng(init_seed);
    std::size_t in_channels = 2;
    for (std::size_t i = 0; i < arch_.convs.size(); ++i) {
        const auto& c = arch_.convs[i];
        Layer l;
        l.name = "conv" + std::to_string(i + 1);
        l.conv = true;
        l.width = c.width;
        l.stride = c.stride;
        l.weight = uniform_matrix(c.out_channels, in_channels * c.width, rng);
        l.bias = nd::Tensor({c.out_channels});
        layers_.push_back(std::move(l));
        in_channels = c.out_channels;
    }
    Layer dense;
    dense.name = "dense";
    dense.weight = uniform_matrix(arch_.embedding_dim, in_channels, rng);
    dense.bias = nd::Tensor({arch_.embedding_dim});
    layers_.push_back(std::move(dense));
}

ExtractorModel::ExtractorModel(Architecture arch, std::vector<Layer> layers)
    : arch_(std::move(arch)), layers_(std::move(layers)) {
    arch_.validate();
    const ExtractorModel reference(arch_, 0);
    if (reference.layers_.size() != layers_.size())
        fail(Errc::format, "model has " + std::to_string(layers_.size()) + " layers, architecture needs " +
                               std::to_string(reference.layers_.size()));
    for (std::size_t i = 0; i < layers_.size(); ++i) {
        const auto& want = reference.layers_[i];
        const auto& got = layers_[i];
        if (got.name != want.name || got.conv != want.conv || got.width != want.width || got.stride != want.stride ||
            got.weight.shape() != want.weight.shape() || got.bias.shape() != want.bias.shape())
            fail(Errc::format, "layer '" + got.name + "' does not match the architecture");
    }
}

const Layer& ExtractorModel::layer(const std::string& name) const {
    for (const auto& l : layers_)
        if (l.name == name) return l;
    fail(Errc::config, "model has no weight named '" + name + "'");
}

Layer& ExtractorModel::layer(const std::string& name) {
    return const_cast<Layer&>(std::as_const(*this).layer(name));
}

bool ExtractorModel::has_layer(const std::string& name) const noexcept {
    return std::any_of(layers_.begin(), layers_.end(), [&](const Layer& l) { return l.name == name; });
}

std::vector<std::string> ExtractorModel::weight_names() const {
    std::vector<std::string> out;
    for (const auto& l : layers_) out.push_back(l.name);
    return out;
}

std::size_t ExtractorModel::parameter_count() const noexcept {
    std::size_t n = 0;
    for (const auto& l : layers_) n += l.weight.size() + l.bias.size();
    return n;
}

std::uint64_t ExtractorModel::checksum() const noexcept {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    auto feed = [&h](const nd::Tensor& t) {
        for (double v : t.data()) {
            unsigned char bytes[sizeof(double)];
            std::memcpy(bytes, &v, sizeof(double));
            for (unsigned char b : bytes) {
                h ^= b;
                h *= 0x100000001b3ULL;
            }
        }
    };
    for (const auto& l : layers_) {
        feed(l.weight);
        feed(l.bias);
    }
    return h;
}

// ---------------------------------------------------------------------------
// Forward

std::vector<BoundLayer> bind(nd::Tape& tape, const ExtractorModel& model, bool trainable) {
    std::vector<BoundLayer> out;
    out.reserve(model.layers().size());
    for (const auto& l : model.layers()) {
        BoundLayer b;
        b.weight = trainable ? tape.parameter(l.weight) : tape.constant(l.weight);
        b.bias = trainable ? tape.parameter(l.bias) : tape.constant(l.bias);
        out.push_back(b);
    }
    return out;
}

nd::Var forward(nd::Tape& tape, const ExtractorModel& model, std::span<const BoundLayer> layers, nd::Var input) {
    const auto& shape = tape.value(input).shape();
    if (shape != nd::Shape{2, model.input_length()}) {
        fail(Errc::dimension, "extractor expects a [2x" + std::to_string(model.input_length()) + "] input, got " +
                                  nd::shape_string(shape));
    }
    if (layers.size() != model.layers().size()) fail(Errc::contract, "forward: layer binding count mismatch");

    auto affine = [&tape](const BoundLayer& b, nd::Var x) {
        nd::Var pre = tape.matmul(b.weight, x);
        if (b.adapter.delta) pre = tape.add(pre, tape.matmul(*b.adapter.delta, x));
        if (b.adapter.factor_a && b.adapter.factor_b)
            pre = tape.add(pre, tape.matmul(*b.adapter.factor_a, tape.matmul(*b.adapter.factor_b, x)));
        return tape.add_channel_bias(pre, b.bias);
    };

    nd::Var h = input;
    const auto model_layers = model.layers();
    for (std::size_t i = 0; i + 1 < model_layers.size(); ++i) {
        const auto& l = model_layers[i];
        h = tape.relu(affine(layers[i], tape.im2col(h, l.width, l.stride)));
    }
    const nd::Var pooled = tape.global_avg_pool(h);
    const std::size_t channels = tape.value(pooled).size();
    const nd::Var z = affine(layers.back(), tape.reshape(pooled, {channels, 1}));
    return tape.reshape(z, {model.embedding_dim()});
}

Embedding embed(const ExtractorModel& model, const nd::Tensor& input) {
    count(Counter::forward_evals);
    nd::Tape tape;
    const auto bound = bind(tape, model, false);
    const nd::Var z = forward(tape, model, bound, tape.constant(input));
    const auto& v = tape.value(z).values();
    return Embedding(v.begin(), v.end());
}

Embedding embed(const ExtractorModel& model, const sim::ComplexSignal& x) {
    if (x.size() != model.input_length()) {
        fail(Errc::dimension, "signal length " + std::to_string(x.size()) + " does not match model input length " +
                                  std::to_string(model.input_length()));
    }
    return embed(model, sim::to_input_tensor(x));
}

std::vector<Embedding> embed_all(const ExtractorModel& model, const sim::LabeledDataset& data) {
    if (data.length != model.input_length()) {
        fail(Errc::dimension, "dataset length " + std::to_string(data.length) + " does not match model input length " +
                                  std::to_string(model.input_length()));
    }
    std::vector<Embedding> out;
    out.reserve(data.size());
    for (std::size_t i = 0; i < data.size(); ++i) out.push_back(embed(model, data.input(i)));
    return out;
}

// ---------------------------------------------------------------------------
// Cosine geometry

bool is_degenerate(const Embedding& z) noexcept { return !(nd::l2_norm(z) > nd::kNormEpsilon); }

Embedding normalized(const Embedding& z) {
    const double n = norm_or_fail(z, "embedding");
    Embedding out(z);
    for (auto& v : out) v /= n;
    return out;
}

double dot_unit(const Embedding& a, const Embedding& b) noexcept { return nd::dot(a, b); }

double cosine_distance(const Embedding& a, const Embedding& b) {
    if (a.size() != b.size())
        fail(Errc::dimension, "cosine_distance: sizes " + std::to_string(a.size()) + " and " + std::to_string(b.size()));
    const double na = norm_or_fail(a, "embedding");
    const double nb = norm_or_fail(b, "embedding");
    return std::clamp(1.0 - nd::dot(a, b) / (na * nb), 0.0, 2.0);
}

void VerificationPolicy::validate() const {
    if (!(threshold >= 0.0 && threshold <= 2.0))
        fail(Errc::config, "verification threshold must lie in [0, 2], got " + std::to_string(threshold));
}

Decision verify(const Embedding& a, const Embedding& b, const VerificationPolicy& policy) {
    policy.validate();
    return cosine_distance(a, b) <= policy.threshold ? Decision::same : Decision::different;
}

// ---------------------------------------------------------------------------
// Metric head and loss

void MetricHead::validate() const {
    if (directions.rank() != 2) fail(Errc::dimension, "metric head directions must be a J x d matrix");
    if (!(scale > 0.0) || !std::isfinite(scale)) fail(Errc::config, "metric head scale must be positive");
}

MetricHead init_head(std::size_t classes, std::size_t dim, std::uint64_t seed, double scale) {
    if (classes == 0 || dim == 0) fail(Errc::config, "metric head needs at least one class and dimension");
    std::mt19937_64 rng(seed);
    MetricHead h{uniform_matrix(classes, dim, rng), scale};
    h.validate();
    return h;
}

std::vector<double> posteriors(const Embedding& z, const MetricHead& head) {
    const auto cos = cosines(z, head);
    double mx = -std::numeric_limits<double>::infinity();
    for (double c : cos) mx = std::max(mx, head.scale * c);
    std::vector<double> p(cos.size());
    double denom = 0.0;
    for (std::size_t j = 0; j < cos.size(); ++j) denom += (p[j] = std::exp(head.scale * cos[j] - mx));
    for (auto& v : p) v /= denom;
    return p;
}

double posterior(const Embedding& z, const MetricHead& head, std::size_t y) {
    if (y >= head.classes())
        fail(Errc::contract, "class index " + std::to_string(y) + " outside [0, " + std::to_string(head.classes()) + ")");
    return posteriors(z, head)[y];
}

double mle_loss(std::span<const Embedding> embeddings, std::span<const std::uint32_t> labels, const MetricHead& head) {
    if (embeddings.empty()) fail(Errc::contract, "mle_loss: empty batch");
    if (embeddings.size() != labels.size()) fail(Errc::dimension, "mle_loss: embedding/label count mismatch");
    double total = 0.0;
    for (std::size_t i = 0; i < embeddings.size(); ++i) {
        if (labels[i] >= head.classes())
            fail(Errc::contract, "mle_loss: label " + std::to_string(labels[i]) + " outside head range");
        total += nll_from_cosines(cosines(embeddings[i], head), head.scale, labels[i]);
    }
    return total / static_cast<double>(embeddings.size());
}

double mle_loss(const ExtractorModel& model, const MetricHead& head, const sim::LabeledDataset& data,
                std::span<const std::size_t> batch) {
    if (batch.empty()) fail(Errc::contract, "mle_loss: empty batch");
    std::vector<Embedding> z;
    std::vector<std::uint32_t> y;
    for (auto i : batch) {
        z.push_back(embed(model, data.input(i)));
        y.push_back(data.samples.at(i).device);
    }
    return mle_loss(z, y, head);
}

nd::Var nll_on_tape(nd::Tape& tape, nd::Var embedding, nd::Var head_directions, double scale, std::size_t label) {
    const std::size_t d = tape.value(embedding).size();
    const std::size_t classes = tape.value(head_directions).rows();
    const nd::Var zn = tape.reshape(tape.l2_normalize(embedding), {d, 1});
    const nd::Var wn = tape.normalize_rows(head_directions);
    const nd::Var logits = tape.reshape(tape.matmul(wn, zn), {classes});
    return tape.softmax_nll(tape.scale(logits, scale), label);
}

LossAndGrads mle_loss_and_grads(const ExtractorModel& model, const MetricHead& head, const sim::LabeledDataset& data,
                                std::span<const std::size_t> batch) {
    if (batch.empty()) fail(Errc::contract, "mle_loss_and_grads: empty batch");
    head.validate();
    LossAndGrads out;
    for (const auto& l : model.layers()) {
        out.model_grads.emplace_back(l.weight.shape());
        out.model_grads.emplace_back(l.bias.shape());
    }
    out.head_grad = nd::Tensor(head.directions.shape());
    const double inv = 1.0 / static_cast<double>(batch.size());
    for (auto i : batch) {
        const auto label = data.samples.at(i).device;
        if (label >= head.classes()) fail(Errc::contract, "mle_loss_and_grads: label outside head range");
        count(Counter::forward_evals);
        nd::Tape tape;
        const auto bound = bind(tape, model, true);
        const nd::Var w = tape.parameter(head.directions);
        const nd::Var z = forward(tape, model, bound, tape.constant(data.input(i)));
        const nd::Var loss = nll_on_tape(tape, z, w, head.scale, label);
        out.loss += tape.value(loss).item() * inv;
        auto grads = tape.backward(loss);
        for (std::size_t k = 0; k < out.model_grads.size(); ++k) nd::axpy(inv, grads[k], out.model_grads[k]);
        nd::axpy(inv, grads.back(), out.head_grad);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Training

void TrainerConfig::validate() const {
    if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) fail(Errc::config, "learning_rate must be positive");
    if (!(momentum >= 0.0 && momentum < 1.0)) fail(Errc::config, "momentum must lie in [0, 1)");
    if (batch_size == 0) fail(Errc::config, "batch_size must be positive");
    if (auc_stop && !(*auc_stop > 0.0 && *auc_stop <= 1.0)) fail(Errc::config, "auc_stop must lie in (0, 1]");
    if (val_max_pairs < 2) fail(Errc::config, "val_max_pairs must be at least 2");
}

void sgd_step(std::span<nd::Tensor* const> params, std::span<const nd::Tensor> grads, std::span<nd::Tensor> velocity,
              const TrainerConfig& cfg) {
    if (params.size() != grads.size() || params.size() != velocity.size())
        fail(Errc::dimension, "sgd_step: " + std::to_string(params.size()) + " params, " +
                                  std::to_string(grads.size()) + " grads, " + std::to_string(velocity.size()) +
                                  " velocities");
    for (std::size_t k = 0; k < params.size(); ++k) {
        nd::Tensor& p = *params[k];
        if (p.shape() != grads[k].shape() || p.shape() != velocity[k].shape())
            fail(Errc::dimension, "sgd_step: parameter " + std::to_string(k) + " shape " + nd::shape_string(p.shape()) +
                                      " vs grad " + nd::shape_string(grads[k].shape()));
    }
    for (std::size_t k = 0; k < params.size(); ++k) {
        auto p = params[k]->data();
        auto v = velocity[k].data();
        const auto g = grads[k].data();
        for (std::size_t i = 0; i < p.size(); ++i) {
            v[i] = cfg.momentum * v[i] + g[i];
            p[i] -= cfg.learning_rate * v[i];
        }
    }
    count(Counter::gradient_updates);
}

std::pair<double, double> verification_metrics(std::span<const Embedding> embeddings,
                                               std::span<const std::uint32_t> labels, std::size_t max_pairs,
                                               std::uint64_t seed) {
    const auto pairs = eval::make_pairs(embeddings, labels, max_pairs, seed);
    return {eval::compute_auc(pairs), eval::compute_eer(pairs).eer};
}

TrainHistory fit(std::span<nd::Tensor* const> params, std::size_t sample_count, const BatchGradFn& batch_grad,
                 const ValidationFn& validate, const TrainerConfig& cfg) {
    cfg.validate();
    TrainHistory history;
    if (cfg.max_epochs == 0) return history;
    if (sample_count == 0) fail(Errc::contract, "fit: no training samples");

    std::vector<nd::Tensor> velocity;
    for (auto* p : params) velocity.emplace_back(p->shape());
    std::vector<std::size_t> order(sample_count);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::mt19937_64 rng(derive_seed(cfg.seed, "shuffle"));

    for (std::size_t epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
        const auto start = std::chrono::steady_clock::now();
        std::shuffle(order.begin(), order.end(), rng);
        double loss_sum = 0.0;
        std::size_t batches = 0;
        std::vector<nd::Tensor> grads;
        for (std::size_t at = 0; at < sample_count; at += cfg.batch_size) {
            const std::size_t end = std::min(sample_count, at + cfg.batch_size);
            grads.clear();
            const double loss = batch_grad(std::span<const std::size_t>(order).subspan(at, end - at), grads);
            if (!std::isfinite(loss)) {
                fail(Errc::training_diverged, "training diverged in epoch " + std::to_string(epoch) + " (loss " +
                                                  std::to_string(loss) + ")");
            }
            sgd_step(params, grads, velocity, cfg);
            loss_sum += loss;
            ++batches;
        }
        EpochMetrics m;
        m.epoch = epoch;
        m.train_loss = loss_sum / static_cast<double>(batches);
        std::tie(m.val_auc, m.val_eer) = validate();
        m.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        history.epochs.push_back(m);
        if (cfg.auc_stop && epoch >= cfg.min_epochs && m.val_auc >= *cfg.auc_stop) {
            history.stopped_by_auc = true;
            break;
        }
    }
    return history;
}

BaseTrainingResult train_base(ExtractorModel model, MetricHead head, const sim::LabeledDataset& train,
                              const sim::LabeledDataset& val, const TrainerConfig& cfg) {
    cfg.validate();
    head.validate();
    if (train.device_count != val.device_count || train.length != val.length)
        fail(Errc::contract, "train and validation sets must share J and M");
    if (head.classes() != train.device_count)
        fail(Errc::contract, "metric head has " + std::to_string(head.classes()) + " classes, dataset has " +
                                 std::to_string(train.device_count) + " devices");

    std::vector<nd::Tensor*> params;
    for (auto& l : model.layers()) {
        params.push_back(&l.weight);
        params.push_back(&l.bias);
    }
    params.push_back(&head.directions);

    const auto val_labels = val.labels();
    const std::uint64_t pair_seed = derive_seed(cfg.seed, "val-pairs");

    auto batch_grad = [&](std::span<const std::size_t> batch, std::vector<nd::Tensor>& grads) {
        auto lg = mle_loss_and_grads(model, head, train, batch);
        grads = std::move(lg.model_grads);
        grads.push_back(std::move(lg.head_grad));
        return lg.loss;
    };
    auto validate = [&]() {
        const auto z = embed_all(model, val);
        return verification_metrics(z, val_labels, cfg.val_max_pairs, pair_seed);
    };
    BaseTrainingResult out;
    out.history = fit(params, train.size(), batch_grad, validate, cfg);
    out.model = std::move(model);
    out.head = std::move(head);
    return out;
}

}  // namespace rlarff::fx
