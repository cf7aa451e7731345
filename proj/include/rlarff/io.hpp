// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>

#include "rlarff/evalkit.hpp"
#include "rlarff/extractor.hpp"
#include "rlarff/lora.hpp"
#include "rlarff/sigsim.hpp"

namespace rlarff::io {

/// Every container is: 8-byte magic, u64 LE manifest length, JSON manifest,
/// little-endian payload. The manifest carries "format" and "version".
inline constexpr int kFormatVersion = 1;

void save_dataset(const sim::LabeledDataset& data, const std::filesystem::path& path);
sim::LabeledDataset load_dataset(const std::filesystem::path& path);

struct HistorySummary {
    std::size_t epochs = 0;
    double train_loss = 0.0;
    double val_auc = 0.0;
    double val_eer = 0.0;
    bool stopped_by_auc = false;

    static HistorySummary of(const fx::TrainHistory& h);
    bool operator==(const HistorySummary&) const = default;
};

struct Checkpoint {
    fx::ExtractorModel model;
    fx::MetricHead head;
    std::map<std::string, std::uint64_t> seeds;
    HistorySummary history;
    std::string config_hash;
};

/// Payload: weight then bias per layer, then the head directions, float64.
void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

struct LoRAFile {
    lora::LoRAModule module;
    std::uint64_t base_checksum = 0;
    HistorySummary history;
    std::string config_hash;
};

/// Payload: A then B per target in target order, float64.
void save_lora(const LoRAFile& file, const std::filesystem::path& path);
LoRAFile load_lora(const std::filesystem::path& path);

struct ReportInfo {
    std::string name;
    std::string model;
    std::string config_hash;
    std::uint64_t seed = 0;
    bool operator==(const ReportInfo&) const = default;
};

/// JSON summary plus a ROC CSV (threshold,FAR,FRR) next to it, named
/// <stem>.roc.csv. Timing is not written: reports are bit-reproducible.
void save_eval_report(const eval::EvalReport& report, const ReportInfo& info, const std::filesystem::path& json_path);
std::pair<eval::EvalReport, ReportInfo> load_eval_report(const std::filesystem::path& json_path);
std::filesystem::path roc_csv_path(const std::filesystem::path& json_path);

/// Whole file as bytes; io error naming the path on failure.
std::string read_file(const std::filesystem::path& path);
/// Writes via a temporary sibling and renames.
void write_file(const std::filesystem::path& path, const std::string& bytes);

}  // namespace rlarff::io
