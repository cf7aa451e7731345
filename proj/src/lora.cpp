// SPDX-License-Identifier: Apache-2.0
#include "rlarff/lora.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <set>

#include "rlarff/error.hpp"
#include "rlarff/instrument.hpp"
#include "rlarff/seeds.hpp"

namespace rlarff::lora {

namespace {

void check_delta_shapes(const fx::ExtractorModel& base, const DeltaMap& deltas) {
    for (const auto& [name, d] : deltas) {
        const auto& w = base.layer(name).weight;
        if (d.shape() != w.shape()) {
            fail(Errc::dimension, "delta for '" + name + "' has shape " + nd::shape_string(d.shape()) +
                                      ", weight is " + nd::shape_string(w.shape()));
        }
    }
}

fx::MetricHead fresh_head(const fx::ExtractorModel& base, const sim::LabeledDataset& adapt,
                          const fx::TrainerConfig& cfg) {
    return fx::init_head(adapt.device_count, base.embedding_dim(), derive_seed(cfg.seed, "adapt-head"));
}

void check_adaptation_sets(const fx::ExtractorModel& base, const sim::LabeledDataset& adapt,
                           const sim::LabeledDataset& val) {
    if (adapt.size() == 0) fail(Errc::contract, "adaptation set is empty");
    if (adapt.length != base.input_length() || val.length != base.input_length())
        fail(Errc::dimension, "adaptation data length does not match the model input length " +
                                  std::to_string(base.input_length()));
    if (adapt.device_count != val.device_count)
        fail(Errc::contract, "adaptation and validation sets must share J");
}

}  // namespace

void LoRAModule::validate(const fx::ExtractorModel& base) const {
    if (rank == 0) fail(Errc::config, "LoRA rank must be at least 1");
    if (targets.empty()) fail(Errc::config, "LoRA module has no targets");
    if (factors.size() != targets.size()) fail(Errc::format, "LoRA factor count does not match the target list");
    for (const auto& t : targets) {
        if (!base.has_layer(t)) fail(Errc::config, "LoRA target '" + t + "' is not a weight of the base model");
        const auto it = factors.find(t);
        if (it == factors.end()) fail(Errc::format, "LoRA target '" + t + "' has no factors");
        const auto& w = base.layer(t).weight;
        const std::size_t d1 = w.rows(), d2 = w.cols();
        if (rank > std::min(d1, d2))
            fail(Errc::config, "rank " + std::to_string(rank) + " exceeds min(d1, d2) for '" + t + "'");
        if (it->second.a.shape() != nd::Shape{d1, rank} || it->second.b.shape() != nd::Shape{rank, d2})
            fail(Errc::dimension, "LoRA factors for '" + t + "' are " + nd::shape_string(it->second.a.shape()) +
                                      " and " + nd::shape_string(it->second.b.shape()) + ", expected [" +
                                      std::to_string(d1) + "x" + std::to_string(rank) + "] and [" +
                                      std::to_string(rank) + "x" + std::to_string(d2) + "]");
    }
}

const Factors& LoRAModule::at(const std::string& target) const {
    const auto it = factors.find(target);
    if (it == factors.end()) fail(Errc::config, "LoRA module has no target '" + target + "'");
    return it->second;
}

nd::Tensor LoRAModule::delta(const std::string& target) const {
    const auto& f = at(target);
    return lora_delta(f.a, f.b);
}

std::size_t LoRAModule::parameter_count() const {
    std::size_t n = 0;
    for (const auto& [_, f] : factors) n += f.a.size() + f.b.size();
    return n;
}

std::vector<std::string> default_targets(const fx::ExtractorModel& model) { return model.weight_names(); }

LoRAModule init_lora(const fx::ExtractorModel& model, const std::vector<std::string>& targets, std::size_t rank,
                     std::uint64_t seed, std::string environment_id) {
    if (rank == 0) fail(Errc::config, "LoRA rank must be at least 1");
    const std::set<std::string> wanted(targets.begin(), targets.end());
    for (const auto& t : wanted)
        if (!model.has_layer(t)) fail(Errc::config, "unknown LoRA target '" + t + "'");
    if (wanted.empty()) fail(Errc::config, "LoRA needs at least one target");

    LoRAModule m;
    m.environment_id = std::move(environment_id);
    m.rank = rank;
    for (const auto& layer : model.layers()) {
        if (!wanted.count(layer.name)) continue;
        const std::size_t d1 = layer.weight.rows(), d2 = layer.weight.cols();
        if (rank > std::min(d1, d2))
            fail(Errc::config, "rank " + std::to_string(rank) + " exceeds min(d1, d2) = " +
                                   std::to_string(std::min(d1, d2)) + " for '" + layer.name + "'");
        std::mt19937_64 rng(derive_seed(seed, layer.name));
        const double bound = 1.0 / std::sqrt(static_cast<double>(d1));
        std::uniform_real_distribution<double> u(-bound, bound);
        Factors f{nd::Tensor({d1, rank}), nd::Tensor({rank, d2})};
        for (auto& v : f.a.data()) v = u(rng);
        m.targets.push_back(layer.name);
        m.factors.emplace(layer.name, std::move(f));
    }
    return m;
}

nd::Tensor lora_delta(const nd::Tensor& a, const nd::Tensor& b) { return nd::matmul(a, b); }

DeltaMap deltas(const LoRAModule& module) {
    DeltaMap out;
    for (const auto& t : module.targets) out.emplace(t, module.delta(t));
    return out;
}

fx::Embedding adapted_forward(const fx::ExtractorModel& base, const DeltaMap& deltas, const nd::Tensor& input) {
    check_delta_shapes(base, deltas);
    count(Counter::forward_evals);
    nd::Tape tape;
    auto bound = fx::bind(tape, base, false);
    const auto layers = base.layers();
    for (std::size_t k = 0; k < layers.size(); ++k) {
        const auto it = deltas.find(layers[k].name);
        if (it != deltas.end()) bound[k].adapter.delta = tape.constant(it->second);
    }
    const auto z = fx::forward(tape, base, bound, tape.constant(input));
    const auto& v = tape.value(z).values();
    return fx::Embedding(v.begin(), v.end());
}

fx::Embedding adapted_forward(const fx::ExtractorModel& base, const LoRAModule& module, const nd::Tensor& input) {
    module.validate(base);
    count(Counter::forward_evals);
    nd::Tape tape;
    auto bound = fx::bind(tape, base, false);
    const auto layers = base.layers();
    for (std::size_t k = 0; k < layers.size(); ++k) {
        const auto it = module.factors.find(layers[k].name);
        if (it == module.factors.end()) continue;
        bound[k].adapter.factor_a = tape.constant(it->second.a);
        bound[k].adapter.factor_b = tape.constant(it->second.b);
    }
    const auto z = fx::forward(tape, base, bound, tape.constant(input));
    const auto& v = tape.value(z).values();
    return fx::Embedding(v.begin(), v.end());
}

fx::Embedding adapted_forward(const AdaptedModel& model, const nd::Tensor& input) {
    if (model.base == nullptr) fail(Errc::contract, "adapted model has no base");
    return adapted_forward(*model.base, model.deltas, input);
}

fx::ExtractorModel merge(const fx::ExtractorModel& base, const DeltaMap& deltas) {
    check_delta_shapes(base, deltas);
    fx::ExtractorModel out = base;
    for (const auto& [name, d] : deltas) nd::axpy(1.0, d, out.layer(name).weight);
    return out;
}

fx::ExtractorModel unmerge(const fx::ExtractorModel& merged, const DeltaMap& deltas) {
    check_delta_shapes(merged, deltas);
    fx::ExtractorModel out = merged;
    for (const auto& [name, d] : deltas) nd::axpy(-1.0, d, out.layer(name).weight);
    return out;
}

LoRATrainResult train_lora(const fx::ExtractorModel& base, const sim::LabeledDataset& adapt,
                           const sim::LabeledDataset& val, const std::vector<std::string>& targets, std::size_t rank,
                           const fx::TrainerConfig& cfg, std::string environment_id) {
    cfg.validate();
    check_adaptation_sets(base, adapt, val);

    LoRATrainResult out;
    out.module = init_lora(base, targets, rank, derive_seed(cfg.seed, "lora-init"), std::move(environment_id));
    out.head = fresh_head(base, adapt, cfg);
    auto& module = out.module;
    auto& head = out.head;

    std::vector<nd::Tensor*> params;
    for (const auto& t : module.targets) {
        params.push_back(&module.factors.at(t).a);
        params.push_back(&module.factors.at(t).b);
    }
    params.push_back(&head.directions);
    out.trainable_parameters = module.parameter_count() + head.directions.size();

    const auto layers = base.layers();
    auto batch_grad = [&](std::span<const std::size_t> batch, std::vector<nd::Tensor>& grads) {
        grads.clear();
        for (auto* p : params) grads.emplace_back(p->shape());
        const double inv = 1.0 / static_cast<double>(batch.size());
        double loss_sum = 0.0;
        for (auto i : batch) {
            count(Counter::forward_evals);
            nd::Tape tape;
            auto bound = fx::bind(tape, base, false);
            for (std::size_t k = 0; k < layers.size(); ++k) {
                const auto it = module.factors.find(layers[k].name);
                if (it == module.factors.end()) continue;
                bound[k].adapter.factor_a = tape.parameter(it->second.a);
                bound[k].adapter.factor_b = tape.parameter(it->second.b);
            }
            const nd::Var w = tape.parameter(head.directions);
            const nd::Var z = fx::forward(tape, base, bound, tape.constant(adapt.input(i)));
            const nd::Var loss = fx::nll_on_tape(tape, z, w, head.scale, adapt.samples.at(i).device);
            loss_sum += tape.value(loss).item();
            const auto g = tape.backward(loss);
            for (std::size_t k = 0; k < grads.size(); ++k) nd::axpy(inv, g[k], grads[k]);
        }
        return loss_sum * inv;
    };
    const auto val_labels = val.labels();
    const std::uint64_t pair_seed = derive_seed(cfg.seed, "val-pairs");
    auto validate = [&] {
        const auto merged = merge(base, deltas(module));
        return fx::verification_metrics(fx::embed_all(merged, val), val_labels, cfg.val_max_pairs, pair_seed);
    };
    out.history = fx::fit(params, adapt.size(), batch_grad, validate, cfg);
    return out;
}

FinetuneResult full_finetune(const fx::ExtractorModel& base, const sim::LabeledDataset& adapt,
                             const sim::LabeledDataset& val, const fx::TrainerConfig& cfg) {
    cfg.validate();
    check_adaptation_sets(base, adapt, val);
    auto trained = fx::train_base(base, fresh_head(base, adapt, cfg), adapt, val, cfg);
    FinetuneResult out;
    out.trainable_parameters = trained.model.parameter_count() + trained.head.directions.size();
    out.model = std::move(trained.model);
    out.head = std::move(trained.head);
    out.history = std::move(trained.history);
    return out;
}

}  // namespace rlarff::lora
