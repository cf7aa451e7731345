// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "rlarff/extractor.hpp"

namespace rlarff::lora {

/// A is d1 x r, B is r x d2; the layer update is A*B with no extra scaling.
struct Factors {
    nd::Tensor a;
    nd::Tensor b;

    bool operator==(const Factors&) const = default;
};

struct LoRAModule {
    std::string environment_id;
    std::size_t rank = 0;
    std::vector<std::string> targets;  // in model layer order
    std::map<std::string, Factors> factors;

    /// Rank, target set and factor shapes against the base model.
    void validate(const fx::ExtractorModel& base) const;
    const Factors& at(const std::string& target) const;
    nd::Tensor delta(const std::string& target) const;
    /// sum over targets of r*(d1+d2).
    std::size_t parameter_count() const;

    bool operator==(const LoRAModule&) const = default;
};

/// Materialized per-layer weight deltas, keyed by layer name.
using DeltaMap = std::map<std::string, nd::Tensor>;

/// Every weight matrix of the model (all conv kernels and the dense layer).
std::vector<std::string> default_targets(const fx::ExtractorModel& model);

/// A uniform in +-1/sqrt(d1), B = 0.
LoRAModule init_lora(const fx::ExtractorModel& model, const std::vector<std::string>& targets, std::size_t rank,
                     std::uint64_t seed, std::string environment_id = {});

nd::Tensor lora_delta(const nd::Tensor& a, const nd::Tensor& b);
DeltaMap deltas(const LoRAModule& module);

/// Frozen base plus active deltas; the base is only read.
struct AdaptedModel {
    const fx::ExtractorModel* base = nullptr;
    DeltaMap deltas;
};

/// Each target computes W x + Delta x; other layers are unchanged.
fx::Embedding adapted_forward(const fx::ExtractorModel& base, const DeltaMap& deltas, const nd::Tensor& input);
/// Each target computes W x + A (B x).
fx::Embedding adapted_forward(const fx::ExtractorModel& base, const LoRAModule& module, const nd::Tensor& input);
fx::Embedding adapted_forward(const AdaptedModel& model, const nd::Tensor& input);

/// Standalone model with W <- W + Delta per target.
fx::ExtractorModel merge(const fx::ExtractorModel& base, const DeltaMap& deltas);
/// W <- W - Delta per target.
fx::ExtractorModel unmerge(const fx::ExtractorModel& merged, const DeltaMap& deltas);

struct LoRATrainResult {
    LoRAModule module;
    fx::MetricHead head;  // fresh head over the adaptation labels
    fx::TrainHistory history;
    std::size_t trainable_parameters = 0;
};

/// Optimizes only the factors and a fresh metric head; the base stays frozen.
LoRATrainResult train_lora(const fx::ExtractorModel& base, const sim::LabeledDataset& adapt,
                           const sim::LabeledDataset& val, const std::vector<std::string>& targets, std::size_t rank,
                           const fx::TrainerConfig& cfg, std::string environment_id = {});

struct FinetuneResult {
    fx::ExtractorModel model;
    fx::MetricHead head;
    fx::TrainHistory history;
    std::size_t trainable_parameters = 0;
};

/// Every weight and bias of a copy of the base plus a fresh head.
FinetuneResult full_finetune(const fx::ExtractorModel& base, const sim::LabeledDataset& adapt,
                             const sim::LabeledDataset& val, const fx::TrainerConfig& cfg);

}  // namespace rlarff::lora
