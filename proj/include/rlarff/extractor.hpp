// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "rlarff/evalkit.hpp"
#include "rlarff/ndmath.hpp"
#include "rlarff/sigsim.hpp"

namespace rlarff::fx {

using Embedding = std::vector<double>;

struct ConvSpec {
    std::size_t out_channels = 0;
    std::size_t width = 0;
    std::size_t stride = 1;

    bool operator==(const ConvSpec&) const = default;
};

/// Conv stack (valid convolutions + ReLU), global average pooling, then a
/// dense projection to the embedding. Input is the 2 x M I/Q view.
struct Architecture {
    std::size_t input_length = 1280;
    std::vector<ConvSpec> convs{{16, 9, 2}, {32, 9, 2}, {32, 9, 2}};
    std::size_t embedding_dim = 64;

    void validate() const;
    /// Sequence length entering each conv layer, plus the final one.
    std::vector<std::size_t> lengths() const;
    bool operator==(const Architecture&) const = default;
};

/// One affine layer. Convolution kernels are stored in their c_out x (c_in*w)
/// matrix view, dense weights as d_out x d_in.
struct Layer {
    std::string name;
    bool conv = false;
    std::size_t width = 1;
    std::size_t stride = 1;
    nd::Tensor weight;
    nd::Tensor bias;

    bool operator==(const Layer&) const = default;
};

class ExtractorModel {
public:
    ExtractorModel() = default;
    /// Per-matrix uniform init in +-sqrt(6/(fan_in+fan_out)); zero biases.
    ExtractorModel(Architecture arch, std::uint64_t init_seed);
    ExtractorModel(Architecture arch, std::vector<Layer> layers);

    const Architecture& architecture() const noexcept { return arch_; }
    std::size_t embedding_dim() const noexcept { return arch_.embedding_dim; }
    std::size_t input_length() const noexcept { return arch_.input_length; }

    std::span<const Layer> layers() const noexcept { return layers_; }
    std::span<Layer> layers() noexcept { return layers_; }
    const Layer& layer(const std::string& name) const;
    Layer& layer(const std::string& name);
    bool has_layer(const std::string& name) const noexcept;
    std::vector<std::string> weight_names() const;

    std::size_t parameter_count() const noexcept;
    /// FNV-1a over every weight and bias byte.
    std::uint64_t checksum() const noexcept;

    bool operator==(const ExtractorModel&) const = default;

private:
    Architecture arch_;
    std::vector<Layer> layers_;
};

/// Extra term added to one layer's pre-activation on the tape: a
/// materialized delta (Delta * x) and/or a factor pair (A * (B * x)).
struct LayerAdapter {
    std::optional<nd::Var> delta;
    std::optional<nd::Var> factor_a;
    std::optional<nd::Var> factor_b;
};

struct BoundLayer {
    nd::Var weight;
    nd::Var bias;
    LayerAdapter adapter;
};

/// Places the model's weights on the tape, as parameters (registration order:
/// weight then bias per layer) or as constants.
std::vector<BoundLayer> bind(nd::Tape& tape, const ExtractorModel& model, bool trainable);

/// Forward pass on the tape; returns the rank-1 embedding node.
nd::Var forward(nd::Tape& tape, const ExtractorModel& model, std::span<const BoundLayer> layers, nd::Var input);

Embedding embed(const ExtractorModel& model, const nd::Tensor& input);
Embedding embed(const ExtractorModel& model, const sim::ComplexSignal& x);
std::vector<Embedding> embed_all(const ExtractorModel& model, const sim::LabeledDataset& data);

/// True when every component is zero (or the norm is below the epsilon).
bool is_degenerate(const Embedding& z) noexcept;

Embedding normalized(const Embedding& z);
double dot_unit(const Embedding& a, const Embedding& b) noexcept;

/// 1 - cos(a, b), clamped to [0, 2].
double cosine_distance(const Embedding& a, const Embedding& b);

enum class Decision { same, different };

struct VerificationPolicy {
    double threshold = 0.5;  // in [0, 2]
    void validate() const;
};

/// Same device iff D_cos <= T.
Decision verify(const Embedding& a, const Embedding& b, const VerificationPolicy& policy);

inline constexpr double kDefaultScale = 16.0;

struct MetricHead {
    nd::Tensor directions;  // J x d
    double scale = kDefaultScale;

    std::size_t classes() const { return directions.rows(); }
    void validate() const;
};

MetricHead init_head(std::size_t classes, std::size_t dim, std::uint64_t seed, double scale = kDefaultScale);

/// p(y | z) = exp(s*cos(w_y, z)) / sum_j exp(s*cos(w_j, z)).
double posterior(const Embedding& z, const MetricHead& head, std::size_t y);
std::vector<double> posteriors(const Embedding& z, const MetricHead& head);

/// Mean of -ln p(y_i | z_i).
double mle_loss(std::span<const Embedding> embeddings, std::span<const std::uint32_t> labels, const MetricHead& head);
double mle_loss(const ExtractorModel& model, const MetricHead& head, const sim::LabeledDataset& data,
                std::span<const std::size_t> batch);

/// Appends -ln p(label | embedding) to the tape.
nd::Var nll_on_tape(nd::Tape& tape, nd::Var embedding, nd::Var head_directions, double scale, std::size_t label);

struct LossAndGrads {
    double loss = 0.0;
    std::vector<nd::Tensor> model_grads;  // weight, bias per layer
    nd::Tensor head_grad;
};

LossAndGrads mle_loss_and_grads(const ExtractorModel& model, const MetricHead& head, const sim::LabeledDataset& data,
                                std::span<const std::size_t> batch);

struct TrainerConfig {
    double learning_rate = 0.01;
    double momentum = 0.9;
    std::size_t batch_size = 32;
    std::size_t max_epochs = 150;
    std::size_t min_epochs = 0;
    std::optional<double> auc_stop;
    std::uint64_t seed = 0;
    std::size_t val_max_pairs = eval::kDefaultMaxPairs;

    void validate() const;
};

/// Classic momentum: v <- m*v + g; p <- p - lr*v.
void sgd_step(std::span<nd::Tensor* const> params, std::span<const nd::Tensor> grads, std::span<nd::Tensor> velocity,
              const TrainerConfig& cfg);

struct EpochMetrics {
    std::size_t epoch = 0;
    double train_loss = 0.0;
    double val_auc = 0.0;
    double val_eer = 0.0;
    double wall_seconds = 0.0;
};

struct TrainHistory {
    std::vector<EpochMetrics> epochs;
    bool stopped_by_auc = false;
};

/// Computes the mean batch loss and writes one gradient per parameter.
using BatchGradFn = std::function<double(std::span<const std::size_t> batch, std::vector<nd::Tensor>& grads)>;
/// Returns (val AUC, val EER) for the current parameters.
using ValidationFn = std::function<std::pair<double, double>()>;

/// Shared epoch loop: seeded shuffles, minibatch momentum SGD, validation
/// after every epoch, and the stop rule epoch >= min_epochs && AUC >= auc_stop.
TrainHistory fit(std::span<nd::Tensor* const> params, std::size_t sample_count, const BatchGradFn& batch_grad,
                 const ValidationFn& validate, const TrainerConfig& cfg);

/// Verification AUC/EER of embeddings over a seeded pair sample.
std::pair<double, double> verification_metrics(std::span<const Embedding> embeddings,
                                               std::span<const std::uint32_t> labels, std::size_t max_pairs,
                                               std::uint64_t seed);

struct BaseTrainingResult {
    ExtractorModel model;
    MetricHead head;
    TrainHistory history;
};

BaseTrainingResult train_base(ExtractorModel model, MetricHead head, const sim::LabeledDataset& train,
                              const sim::LabeledDataset& val, const TrainerConfig& cfg);

}  // namespace rlarff::fx
