// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "rlarff/evalkit.hpp"
#include "rlarff/extractor.hpp"
#include "rlarff/lora.hpp"
#include "rlarff/rla.hpp"
#include "rlarff/sigsim.hpp"

namespace rlarff::exp {

/// Devices 0..known-1 train the base and the pool; the next `unseen` devices
/// only appear in the target environment.
struct DataSpec {
    sim::PreambleSpec preamble;
    sim::DeviceRanges device_ranges;
    std::size_t known_devices = 10;
    std::size_t unseen_devices = 5;
    std::vector<sim::ChannelProfile> channels;
    std::vector<std::string> base_environments{"ch1", "ch2", "ch3"};
    std::size_t base_train_count = 20;
    std::size_t base_val_count = 4;
    std::vector<std::string> pool_environments{"ch1", "ch2", "ch3", "ch4", "ch5"};
    std::size_t lora_train_count = 10;
    std::size_t lora_val_count = 4;
    std::string target_environment = "ch6";
    std::size_t target_count = 40;
    double adapt_fraction = 0.2;
};

struct RLASettings {
    std::size_t pool_size = 0;   // 0: every module in the pool
    std::size_t population = 0;  // 0: 4 + floor(3 ln K)
    std::size_t parents = 0;     // 0: floor(lambda / 2)
    double sigma0 = 0.7;
    std::size_t max_iterations = 20;
};

struct ExperimentConfig {
    std::uint64_t seed = 1;
    DataSpec data;
    std::vector<fx::ConvSpec> convs{{16, 9, 2}, {32, 9, 2}, {32, 9, 2}};
    std::size_t embedding_dim = 64;
    double scale = fx::kDefaultScale;
    fx::TrainerConfig base_trainer;
    fx::TrainerConfig lora_trainer;
    /// Used by full fine-tuning and by single-LoRA adaptation.
    fx::TrainerConfig ft_trainer;
    std::size_t lora_rank = 4;
    std::vector<std::string> lora_targets;  // empty: every weight matrix
    RLASettings rla;
    std::size_t max_pairs = eval::kDefaultMaxPairs;

    /// M = 1280 with the six-channel recipe.
    static ExperimentConfig defaults();
    /// The desk-scale benchmark: defaults with M = 320.
    static ExperimentConfig benchmark();

    fx::Architecture architecture() const;
    const sim::ChannelProfile& channel(const std::string& environment_id) const;
    /// Config error naming the offending field.
    void validate() const;
};

/// Canonical JSON text: sorted keys, every field present.
std::string to_json(const ExperimentConfig& cfg);
/// Missing fields take their defaults; unknown fields are config errors.
ExperimentConfig config_from_json(const std::string& text);
ExperimentConfig load_config(const std::string& path);
/// 16 hex digits of FNV-1a over the canonical JSON.
std::string config_hash(const ExperimentConfig& cfg);

/// Per-stage seeds, all derive_seed(master, "<stage>").
namespace stage {
inline constexpr const char* devices = "devices";
inline constexpr const char* base_train = "data/base-train";
inline constexpr const char* base_val = "data/base-val";
inline constexpr const char* target = "data/target";
inline constexpr const char* split = "split";
inline constexpr const char* init = "init";
inline constexpr const char* head = "head";
inline constexpr const char* base = "train/base";
inline constexpr const char* rla = "adapt/rla";
inline constexpr const char* ft = "adapt/ft";
inline constexpr const char* adapt_lora = "adapt/lora";
inline constexpr const char* pairs = "eval/pairs";
std::string lora_train(const std::string& env);  // "data/lora-train/<env>"
std::string lora_val(const std::string& env);    // "data/lora-val/<env>"
std::string lora(const std::string& env);        // "train/lora/<env>"
}  // namespace stage

std::uint64_t stage_seed(const ExperimentConfig& cfg, const std::string& stage);

struct Datasets {
    sim::LabeledDataset base_train;
    sim::LabeledDataset base_val;
    std::map<std::string, sim::LabeledDataset> lora_train;
    std::map<std::string, sim::LabeledDataset> lora_val;
    sim::LabeledDataset target_adapt;
    sim::LabeledDataset target_eval;
};

Datasets generate_data(const ExperimentConfig& cfg);

fx::BaseTrainingResult train_base(const ExperimentConfig& cfg, const sim::LabeledDataset& train,
                                  const sim::LabeledDataset& val);
lora::LoRATrainResult train_pool_module(const ExperimentConfig& cfg, const fx::ExtractorModel& base,
                                        const sim::LabeledDataset& train, const sim::LabeledDataset& val,
                                        const std::string& environment_id);
/// Orders modules by environment_id and keeps the first pool_size.
rla::LoRAPool make_pool(const ExperimentConfig& cfg, std::vector<lora::LoRAModule> modules);
rla::CMAESConfig cmaes_config(const ExperimentConfig& cfg, std::size_t k);
rla::RLAResult adapt_rla(const ExperimentConfig& cfg, const fx::ExtractorModel& base, const rla::LoRAPool& pool,
                         const sim::LabeledDataset& adapt);
/// The adaptation set doubles as the validation set for the stop rule.
lora::FinetuneResult adapt_ft(const ExperimentConfig& cfg, const fx::ExtractorModel& base,
                              const sim::LabeledDataset& adapt);
lora::LoRATrainResult adapt_lora(const ExperimentConfig& cfg, const fx::ExtractorModel& base,
                                 const sim::LabeledDataset& adapt);
eval::EvalReport evaluate(const ExperimentConfig& cfg, const fx::ExtractorModel& model,
                          const sim::LabeledDataset& data);

struct MethodResult {
    eval::EvalReport report;
    eval::TimingRecord timing;
};

/// The whole recipe in memory. Only adaptation stages are timed.
struct BenchmarkResult {
    MethodResult base;
    MethodResult rla;
    MethodResult ft;
    rla::RLAResult rla_detail;
    std::size_t ft_epochs = 0;
};

BenchmarkResult run_benchmark(const ExperimentConfig& cfg);

}  // namespace rlarff::exp
