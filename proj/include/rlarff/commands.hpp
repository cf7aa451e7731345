// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <string>

#include "rlarff/experiment.hpp"

namespace rlarff::cmd {

namespace fs = std::filesystem;

inline constexpr const char* kToolVersion = "0.1.0";

/// Artifact names inside data and run directories.
namespace files {
inline constexpr const char* base_train = "base_train.rffd";
inline constexpr const char* base_val = "base_val.rffd";
inline constexpr const char* target_adapt = "target_adapt.rffd";
inline constexpr const char* target_eval = "target_eval.rffd";
inline constexpr const char* base = "base.rffc";
inline constexpr const char* ft = "ft.rffc";
inline constexpr const char* adapt_lora = "adapt_lora.rffl";
inline constexpr const char* rla_report = "rla.json";
inline constexpr const char* ft_report = "ft.json";
inline constexpr const char* adapt_lora_report = "adapt_lora.json";
inline constexpr const char* report = "report.json";
inline constexpr const char* report_csv = "report.csv";
inline constexpr const char* timing = "timing.json";
inline constexpr const char* manifest = "manifest.json";
std::string lora_train(const std::string& env);  // lora_train_<env>.rffd
std::string lora_val(const std::string& env);    // lora_val_<env>.rffd
std::string pool_module(const std::string& env); // <env>.rffl
std::string eval_report(const std::string& name);  // eval_<name>.json
}  // namespace files

using exp::ExperimentConfig;

/// Every command writes under `out` and appends one entry to
/// out/manifest.json. `data` may be a data directory or a dataset file
/// where one dataset is needed.
void gen_data(const ExperimentConfig& cfg, const fs::path& out);
void train_base(const ExperimentConfig& cfg, const fs::path& data, const fs::path& out);
/// Empty env: one module per pool environment.
void train_lora(const ExperimentConfig& cfg, const fs::path& base, const fs::path& data, const std::string& env,
                const fs::path& out);
void adapt_rla(const ExperimentConfig& cfg, const fs::path& base, const fs::path& pool_dir, const fs::path& data,
               const fs::path& out);
void adapt_ft(const ExperimentConfig& cfg, const fs::path& base, const fs::path& data, const fs::path& out);
void adapt_lora(const ExperimentConfig& cfg, const fs::path& base, const fs::path& data, const fs::path& out);

/// Model under evaluation: the checkpoint alone, plus one adapter, or plus
/// the alpha of an RLA report over its pool.
struct EvalModel {
    fs::path adapter;
    fs::path rla_report;
    fs::path pool_dir;
    std::string name;  // default: "rla", the adapter stem or the checkpoint stem
};

void evaluate(const ExperimentConfig& cfg, const fs::path& base, const EvalModel& model, const fs::path& data,
              const fs::path& out);
/// Consolidates eval_*.json into report.json / report.csv and the
/// adaptation records into timing.json.
void report(const fs::path& run_dir);

/// gen-data, train-base, train-lora, adapt-rla, adapt-ft, adapt-lora, eval
/// of every model, report. Layout: out/data, out/pool, everything else in out.
void run_experiment(const ExperimentConfig& cfg, const fs::path& out);

/// Modules of every *.rffl in the directory, ordered by environment_id.
std::vector<lora::LoRAModule> load_pool_dir(const fs::path& pool_dir, const fx::ExtractorModel& base);

}  // namespace rlarff::cmd
