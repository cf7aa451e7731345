// SPDX-License-Identifier: Apache-2.0
#include "rlarff/commands.hpp"

#include <algorithm>
#include <chrono>
#include <json.hpp>
#include <optional>
#include <set>

#include "rlarff/error.hpp"
#include "rlarff/io.hpp"

namespace rlarff::cmd {

using nlohmann::json;

std::string files::lora_train(const std::string& env) { return "lora_train_" + env + ".rffd"; }
std::string files::lora_val(const std::string& env) { return "lora_val_" + env + ".rffd"; }
std::string files::pool_module(const std::string& env) { return env + ".rffl"; }
std::string files::eval_report(const std::string& name) { return "eval_" + name + ".json"; }

namespace {

class Entry {
public:
    Entry(std::string command, const ExperimentConfig* cfg) : command_(std::move(command)), cfg_(cfg) {}

    void input(const fs::path& p) { inputs_.push_back(p.string()); }
    void artifact(const fs::path& p) { artifacts_.push_back(p.string()); }
    void seed(const std::string& stage_name) {
        if (cfg_) seeds_[stage_name] = exp::stage_seed(*cfg_, stage_name);
    }

    void append_to(const fs::path& out) const {
        const fs::path path = out / files::manifest;
        json m = {{"format", "rlarff-run-manifest"}, {"version", io::kFormatVersion}, {"runs", json::array()}};
        if (fs::exists(path)) {
            try {
                m = json::parse(io::read_file(path));
            } catch (const json::exception& e) {
                fail(Errc::format, "'" + path.string() + "' is not a readable run manifest: " + e.what());
            }
            if (!m.contains("runs") || !m["runs"].is_array())
                fail(Errc::format, "'" + path.string() + "' has no runs list");
        }
        json e = {{"command", command_},
                  {"tool_version", kToolVersion},
                  {"inputs", inputs_},
                  {"artifacts", artifacts_},
                  {"stage_seeds", seeds_},
                  {"wall_seconds", std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count()}};
        if (cfg_) {
            e["config_hash"] = exp::config_hash(*cfg_);
            e["seed"] = cfg_->seed;
        }
        m["runs"].push_back(e);
        io::write_file(path, m.dump(2) + "\n");
    }

private:
    std::string command_;
    const ExperimentConfig* cfg_;
    std::vector<std::string> inputs_;
    std::vector<std::string> artifacts_;
    std::map<std::string, std::uint64_t> seeds_;
    std::chrono::steady_clock::time_point start_ = std::chrono::steady_clock::now();
};

fs::path pick(const fs::path& data, const char* default_name) {
    return fs::is_directory(data) ? data / default_name : data;
}

void require_dir(const fs::path& dir, const std::string& what) {
    if (!fs::is_directory(dir)) fail(Errc::io, what + " '" + dir.string() + "' is not a directory");
}

void check_length(const ExperimentConfig& cfg, const sim::LabeledDataset& d, const fs::path& path) {
    if (d.length != cfg.data.preamble.length)
        fail(Errc::config, "'" + path.string() + "' has M = " + std::to_string(d.length) +
                               " but config field 'data.preamble.length' is " +
                               std::to_string(cfg.data.preamble.length));
}

sim::LabeledDataset load_data(const ExperimentConfig& cfg, const fs::path& path, Entry& entry) {
    auto d = io::load_dataset(path);
    check_length(cfg, d, path);
    entry.input(path);
    return d;
}

io::Checkpoint load_base(const fs::path& path, Entry& entry) {
    auto c = io::load_checkpoint(path);
    entry.input(path);
    return c;
}

json timing_json(const eval::TimingRecord& t) {
    return {{"wall_seconds", t.wall_seconds},
            {"gradient_updates", t.gradient_updates},
            {"backward_calls", t.backward_calls},
            {"forward_evals", t.forward_evals},
            {"fitness_evals", t.fitness_evals}};
}

json read_json(const fs::path& path) {
    try {
        return json::parse(io::read_file(path));
    } catch (const json::exception& e) {
        fail(Errc::format, "'" + path.string() + "' is not valid JSON: " + e.what());
    }
}

}  // namespace

std::vector<lora::LoRAModule> load_pool_dir(const fs::path& pool_dir, const fx::ExtractorModel& base) {
    require_dir(pool_dir, "pool directory");
    std::vector<fs::path> paths;
    for (const auto& e : fs::directory_iterator(pool_dir))
        if (e.is_regular_file() && e.path().extension() == ".rffl") paths.push_back(e.path());
    if (paths.empty()) fail(Errc::io, "pool directory '" + pool_dir.string() + "' holds no .rffl files");
    std::sort(paths.begin(), paths.end());
    std::vector<lora::LoRAModule> out;
    for (const auto& p : paths) {
        auto f = io::load_lora(p);
        if (f.base_checksum != base.checksum())
            fail(Errc::contract, "'" + p.string() + "' was trained on a different base model");
        f.module.validate(base);
        out.push_back(std::move(f.module));
    }
    std::sort(out.begin(), out.end(), [](const auto& a, const auto& b) { return a.environment_id < b.environment_id; });
    return out;
}

void gen_data(const ExperimentConfig& cfg, const fs::path& out) {
    Entry entry("gen-data", &cfg);
    const auto d = exp::generate_data(cfg);
    auto save = [&](const sim::LabeledDataset& ds, const std::string& name) {
        io::save_dataset(ds, out / name);
        entry.artifact(out / name);
    };
    save(d.base_train, files::base_train);
    save(d.base_val, files::base_val);
    for (const auto& e : cfg.data.pool_environments) {
        save(d.lora_train.at(e), files::lora_train(e));
        save(d.lora_val.at(e), files::lora_val(e));
        entry.seed(exp::stage::lora_train(e));
        entry.seed(exp::stage::lora_val(e));
    }
    save(d.target_adapt, files::target_adapt);
    save(d.target_eval, files::target_eval);
    for (const char* s : {exp::stage::devices, exp::stage::base_train, exp::stage::base_val, exp::stage::target,
                          exp::stage::split})
        entry.seed(s);
    entry.append_to(out);
}

void train_base(const ExperimentConfig& cfg, const fs::path& data, const fs::path& out) {
    cfg.validate();
    require_dir(data, "data directory");
    Entry entry("train-base", &cfg);
    const auto train = load_data(cfg, data / files::base_train, entry);
    const auto val = load_data(cfg, data / files::base_val, entry);
    const auto result = exp::train_base(cfg, train, val);
    io::Checkpoint ckpt{result.model, result.head, {}, io::HistorySummary::of(result.history), exp::config_hash(cfg)};
    for (const char* s : {exp::stage::init, exp::stage::head, exp::stage::base}) {
        ckpt.seeds[s] = exp::stage_seed(cfg, s);
        entry.seed(s);
    }
    io::save_checkpoint(ckpt, out / files::base);
    entry.artifact(out / files::base);
    entry.append_to(out);
}

void train_lora(const ExperimentConfig& cfg, const fs::path& base, const fs::path& data, const std::string& env,
                const fs::path& out) {
    cfg.validate();
    require_dir(data, "data directory");
    Entry entry("train-lora", &cfg);
    const auto ckpt = load_base(base, entry);
    std::vector<std::string> envs = cfg.data.pool_environments;
    if (!env.empty()) {
        if (std::find(envs.begin(), envs.end(), env) == envs.end())
            fail(Errc::config, "environment '" + env + "' is not listed in config field 'data.pool_environments'");
        envs = {env};
    }
    for (const auto& e : envs) {
        const auto train = load_data(cfg, data / files::lora_train(e), entry);
        const auto val = load_data(cfg, data / files::lora_val(e), entry);
        const auto r = exp::train_pool_module(cfg, ckpt.model, train, val, e);
        io::save_lora({r.module, ckpt.model.checksum(), io::HistorySummary::of(r.history), exp::config_hash(cfg)},
                      out / files::pool_module(e));
        entry.artifact(out / files::pool_module(e));
        entry.seed(exp::stage::lora(e));
    }
    entry.append_to(out);
}

void adapt_rla(const ExperimentConfig& cfg, const fs::path& base, const fs::path& pool_dir, const fs::path& data,
               const fs::path& out) {
    cfg.validate();
    Entry entry("adapt-rla", &cfg);
    const auto ckpt = load_base(base, entry);
    const auto pool = exp::make_pool(cfg, load_pool_dir(pool_dir, ckpt.model));
    entry.input(pool_dir);
    const auto adapt = load_data(cfg, pick(data, files::target_adapt), entry);

    rla::RLAResult r;
    const auto timing = eval::timing_harness([&] { r = exp::adapt_rla(cfg, ckpt.model, pool, adapt); });
    json gens = json::array();
    for (const auto& g : r.generations)
        gens.push_back({{"generation", g.generation},
                        {"best_fitness", g.best_fitness},
                        {"mean_fitness", g.mean_fitness},
                        {"best_so_far", g.best_so_far},
                        {"sigma", g.sigma}});
    json envs = json::array();
    for (const auto& m : pool.modules) envs.push_back(m.environment_id);
    const auto cm = exp::cmaes_config(cfg, pool.size());
    const json j = {
        {"format", "rlarff-rla-report"},
        {"version", io::kFormatVersion},
        {"alpha", r.alpha},
        {"pool", envs},
        {"best_fitness", r.best_fitness},
        {"evaluations", r.evaluations},
        {"budget", cm.population * cm.max_iterations},
        {"population", cm.population},
        {"parents", cm.parents},
        {"sigma0", cm.sigma0},
        {"max_iterations", cm.max_iterations},
        {"generations", gens},
        {"wall_seconds", timing.wall_seconds},
        {"timing", timing_json(timing)},
        {"seeds", {{exp::stage::rla, exp::stage_seed(cfg, exp::stage::rla)}}},
        {"base_checksum", ckpt.model.checksum()},
        {"config_hash", exp::config_hash(cfg)},
    };
    io::write_file(out / files::rla_report, j.dump(2) + "\n");
    entry.seed(exp::stage::rla);
    entry.artifact(out / files::rla_report);
    entry.append_to(out);
}

void adapt_ft(const ExperimentConfig& cfg, const fs::path& base, const fs::path& data, const fs::path& out) {
    cfg.validate();
    Entry entry("adapt-ft", &cfg);
    const auto ckpt = load_base(base, entry);
    const auto adapt = load_data(cfg, pick(data, files::target_adapt), entry);
    lora::FinetuneResult r;
    const auto timing = eval::timing_harness([&] { r = exp::adapt_ft(cfg, ckpt.model, adapt); });
    io::Checkpoint out_ckpt{r.model, r.head, ckpt.seeds, io::HistorySummary::of(r.history), exp::config_hash(cfg)};
    out_ckpt.seeds[exp::stage::ft] = exp::stage_seed(cfg, exp::stage::ft);
    io::save_checkpoint(out_ckpt, out / files::ft);
    const json j = {{"format", "rlarff-ft-report"},
                    {"version", io::kFormatVersion},
                    {"epochs", r.history.epochs.size()},
                    {"stopped_by_auc", r.history.stopped_by_auc},
                    {"trainable_parameters", r.trainable_parameters},
                    {"wall_seconds", timing.wall_seconds},
                    {"timing", timing_json(timing)},
                    {"config_hash", exp::config_hash(cfg)}};
    io::write_file(out / files::ft_report, j.dump(2) + "\n");
    entry.seed(exp::stage::ft);
    entry.artifact(out / files::ft);
    entry.artifact(out / files::ft_report);
    entry.append_to(out);
}

void adapt_lora(const ExperimentConfig& cfg, const fs::path& base, const fs::path& data, const fs::path& out) {
    cfg.validate();
    Entry entry("adapt-lora", &cfg);
    const auto ckpt = load_base(base, entry);
    const auto adapt = load_data(cfg, pick(data, files::target_adapt), entry);
    lora::LoRATrainResult r;
    const auto timing = eval::timing_harness([&] { r = exp::adapt_lora(cfg, ckpt.model, adapt); });
    io::save_lora({r.module, ckpt.model.checksum(), io::HistorySummary::of(r.history), exp::config_hash(cfg)},
                  out / files::adapt_lora);
    const json j = {{"format", "rlarff-lora-adapt-report"},
                    {"version", io::kFormatVersion},
                    {"epochs", r.history.epochs.size()},
                    {"stopped_by_auc", r.history.stopped_by_auc},
                    {"trainable_parameters", r.trainable_parameters},
                    {"wall_seconds", timing.wall_seconds},
                    {"timing", timing_json(timing)},
                    {"config_hash", exp::config_hash(cfg)}};
    io::write_file(out / files::adapt_lora_report, j.dump(2) + "\n");
    entry.seed(exp::stage::adapt_lora);
    entry.artifact(out / files::adapt_lora);
    entry.artifact(out / files::adapt_lora_report);
    entry.append_to(out);
}

void evaluate(const ExperimentConfig& cfg, const fs::path& base, const EvalModel& model, const fs::path& data,
              const fs::path& out) {
    cfg.validate();
    if (!model.adapter.empty() && !model.rla_report.empty())
        fail(Errc::config, "evaluate either an adapter or an RLA report, not both");
    Entry entry("eval", &cfg);
    const auto ckpt = load_base(base, entry);
    fx::ExtractorModel m = ckpt.model;
    std::string name = base.stem().string();
    std::string description = "checkpoint " + base.filename().string();
    if (!model.adapter.empty()) {
        const auto f = io::load_lora(model.adapter);
        entry.input(model.adapter);
        if (f.base_checksum != ckpt.model.checksum())
            fail(Errc::contract, "'" + model.adapter.string() + "' was trained on a different base model");
        f.module.validate(m);
        m = lora::merge(m, lora::deltas(f.module));
        name = model.adapter.stem().string();
        description += " + adapter " + model.adapter.filename().string();
    } else if (!model.rla_report.empty()) {
        if (model.pool_dir.empty()) fail(Errc::config, "an RLA report needs its pool directory");
        const json r = read_json(model.rla_report);
        entry.input(model.rla_report);
        if (r.value("format", std::string{}) != "rlarff-rla-report")
            fail(Errc::format, "'" + model.rla_report.string() + "' is not an RLA report");
        const auto pool = exp::make_pool(cfg, load_pool_dir(model.pool_dir, ckpt.model));
        entry.input(model.pool_dir);
        std::vector<std::string> envs;
        rla::Weights alpha;
        try {
            envs = r.at("pool").get<std::vector<std::string>>();
            alpha = r.at("alpha").get<rla::Weights>();
        } catch (const json::exception& e) {
            fail(Errc::format, "'" + model.rla_report.string() + "': " + e.what());
        }
        std::vector<std::string> have;
        for (const auto& mod : pool.modules) have.push_back(mod.environment_id);
        if (have != envs || alpha.size() != envs.size())
            fail(Errc::contract, "pool in '" + model.pool_dir.string() + "' does not match the modules of '" +
                                     model.rla_report.string() + "'");
        m = lora::merge(m, rla::aggregate(pool, alpha));
        name = "rla";
        description += " + RLA over " + std::to_string(envs.size()) + " modules";
    }
    if (!model.name.empty()) name = model.name;
    const fs::path data_path = pick(data, files::target_eval);
    const auto ds = load_data(cfg, data_path, entry);
    const auto rep = exp::evaluate(cfg, m, ds);
    const fs::path json_path = out / files::eval_report(name);
    io::save_eval_report(rep, {name, description, exp::config_hash(cfg), cfg.seed}, json_path);
    entry.seed(exp::stage::pairs);
    entry.artifact(json_path);
    entry.artifact(io::roc_csv_path(json_path));
    entry.append_to(out);
}

void report(const fs::path& run_dir) {
    require_dir(run_dir, "run directory");
    Entry entry("report", nullptr);
    std::vector<fs::path> paths;
    for (const auto& e : fs::directory_iterator(run_dir)) {
        const auto fn = e.path().filename().string();
        if (e.is_regular_file() && fn.starts_with("eval_") && e.path().extension() == ".json") paths.push_back(e.path());
    }
    if (paths.empty()) fail(Errc::io, "run directory '" + run_dir.string() + "' holds no eval_*.json reports");
    std::sort(paths.begin(), paths.end());

    json methods = json::array();
    std::string csv = "method,eer,auc,eer_threshold,genuine_pairs,impostor_pairs\n";
    std::optional<double> base_eer;
    std::map<std::string, double> eers;
    std::set<std::string> hashes;
    for (const auto& p : paths) {
        const auto [rep, info] = io::load_eval_report(p);
        entry.input(p);
        methods.push_back({{"name", info.name},
                           {"model", info.model},
                           {"eer", rep.eer},
                           {"auc", rep.auc},
                           {"eer_threshold", rep.eer_threshold},
                           {"genuine_pairs", rep.genuine_pairs},
                           {"impostor_pairs", rep.impostor_pairs},
                           {"roc_csv", io::roc_csv_path(p).filename().string()}});
        csv += info.name + "," + json(rep.eer).dump() + "," + json(rep.auc).dump() + "," +
               json(rep.eer_threshold).dump() + "," + std::to_string(rep.genuine_pairs) + "," +
               std::to_string(rep.impostor_pairs) + "\n";
        eers[info.name] = rep.eer;
        hashes.insert(info.config_hash);
        if (info.name == "base") base_eer = rep.eer;
    }
    json rel = json::object();
    if (base_eer && *base_eer > 0.0)
        for (const auto& [n, e] : eers) rel[n] = e / *base_eer;
    const json rep = {{"format", "rlarff-report"},
                      {"version", io::kFormatVersion},
                      {"config_hashes", hashes},
                      {"methods", methods},
                      {"eer_relative_to_base", rel}};
    io::write_file(run_dir / files::report, rep.dump(2) + "\n");
    io::write_file(run_dir / files::report_csv, csv);
    entry.artifact(run_dir / files::report);
    entry.artifact(run_dir / files::report_csv);

    json timing = json::object();
    for (const auto& [key, file] : {std::pair{"rla", files::rla_report}, std::pair{"ft", files::ft_report},
                                    std::pair{"adapt_lora", files::adapt_lora_report}}) {
        const fs::path p = run_dir / file;
        if (!fs::exists(p)) continue;
        const json j = read_json(p);
        if (j.contains("timing")) timing[key] = j["timing"];
        entry.input(p);
    }
    if (timing.contains("rla") && timing.contains("ft")) {
        const double ft = timing["ft"].value("wall_seconds", 0.0);
        if (ft > 0.0) timing["rla_over_ft"] = timing["rla"].value("wall_seconds", 0.0) / ft;
    }
    if (!timing.empty()) {
        io::write_file(run_dir / files::timing, timing.dump(2) + "\n");
        entry.artifact(run_dir / files::timing);
    }
    entry.append_to(run_dir);
}

void run_experiment(const ExperimentConfig& cfg, const fs::path& out) {
    cfg.validate();
    const fs::path data = out / "data";
    const fs::path pool = out / "pool";
    const fs::path base = out / files::base;
    gen_data(cfg, data);
    train_base(cfg, data, out);
    train_lora(cfg, base, data, "", pool);
    adapt_rla(cfg, base, pool, data, out);
    adapt_ft(cfg, base, data, out);
    adapt_lora(cfg, base, data, out);
    evaluate(cfg, base, {}, data, out);
    evaluate(cfg, base, {{}, out / files::rla_report, pool, {}}, data, out);
    evaluate(cfg, out / files::ft, {}, data, out);
    evaluate(cfg, base, {out / files::adapt_lora, {}, {}, {}}, data, out);
    report(out);
}

}  // namespace rlarff::cmd
