// SPDX-License-Identifier: Apache-2.0
// Command-line front end. Talks to the library through rlarff.h only.
#include <CLI11.hpp>
#include <cstdio>
#include <iostream>
#include <json.hpp>
#include <optional>
#include <string>
#include <vector>

#include "rlarff.h"

namespace {

struct Failure {
    rlarff_status status;
};

void check(rlarff_status s) {
    if (s != RLARFF_OK) throw Failure{s};
}

struct Options {
    std::string config;
    std::optional<std::uint64_t> seed;
    bool benchmark = false;
    std::string out;
    std::string data;
    std::string base;
    std::string pool_dir;
    std::string env;
    std::string adapter;
    std::string rla_report;
    std::string name;
};

class Config {
public:
    explicit Config(const Options& o) {
        if (!o.config.empty()) {
            check(rlarff_config_load(o.config.c_str(), &cfg_));
        } else if (o.benchmark) {
            check(rlarff_config_benchmark(&cfg_));
        } else {
            check(rlarff_config_default(&cfg_));
        }
        if (o.seed) check(rlarff_config_set_seed(cfg_, *o.seed));
    }
    ~Config() { rlarff_config_free(cfg_); }
    Config(const Config&) = delete;
    Config& operator=(const Config&) = delete;
    const rlarff_config* get() const { return cfg_; }

private:
    rlarff_config* cfg_ = nullptr;
};

const char* or_null(const std::string& s) { return s.empty() ? nullptr : s.c_str(); }

void add_config(CLI::App* sub, Options& o) {
    sub->add_option("--config", o.config, "experiment config (JSON); defaults when omitted");
    sub->add_option("--seed", o.seed, "master seed, overrides the config");
    sub->add_flag("--benchmark", o.benchmark, "start from the desk-scale benchmark config instead of the defaults");
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Open-set RF-fingerprint authentication with rapid LoRA aggregation"};
    app.require_subcommand(1);
    app.set_version_flag("--version", std::string(rlarff_version()));
    Options o;

    auto* gen = app.add_subcommand("gen-data", "generate base, pool and target datasets");
    add_config(gen, o);
    gen->add_option("--out", o.out, "data directory")->required();

    auto* tb = app.add_subcommand("train-base", "train the base extractor");
    add_config(tb, o);
    tb->add_option("--data", o.data, "data directory")->required();
    tb->add_option("--out", o.out, "run directory")->required();

    auto* tl = app.add_subcommand("train-lora", "pretrain pool LoRA modules");
    add_config(tl, o);
    tl->add_option("--base", o.base, "base checkpoint")->required();
    tl->add_option("--data", o.data, "data directory")->required();
    tl->add_option("--env", o.env, "one pool environment; all when omitted");
    tl->add_option("--out", o.out, "pool directory")->required();

    auto* ar = app.add_subcommand("adapt-rla", "search mixing weights over the pool with CMA-ES");
    add_config(ar, o);
    ar->add_option("--base", o.base, "base checkpoint")->required();
    ar->add_option("--pool-dir", o.pool_dir, "directory of .rffl modules")->required();
    ar->add_option("--data", o.data, "data directory or adaptation dataset")->required();
    ar->add_option("--out", o.out, "run directory")->required();

    auto* af = app.add_subcommand("adapt-ft", "full fine-tuning baseline");
    add_config(af, o);
    af->add_option("--base", o.base, "base checkpoint")->required();
    af->add_option("--data", o.data, "data directory or adaptation dataset")->required();
    af->add_option("--out", o.out, "run directory")->required();

    auto* al = app.add_subcommand("adapt-lora", "single LoRA trained on the adaptation set");
    add_config(al, o);
    al->add_option("--base", o.base, "base checkpoint")->required();
    al->add_option("--data", o.data, "data directory or adaptation dataset")->required();
    al->add_option("--out", o.out, "run directory")->required();

    auto* ev = app.add_subcommand("eval", "verification EER/AUC/ROC of a model");
    add_config(ev, o);
    ev->add_option("--base", o.base, "checkpoint")->required();
    ev->add_option("--adapter", o.adapter, "LoRA file merged into the checkpoint");
    ev->add_option("--rla", o.rla_report, "RLA report whose alpha is applied over --pool-dir");
    ev->add_option("--pool-dir", o.pool_dir, "pool used by --rla");
    ev->add_option("--name", o.name, "report name (eval_<name>.json)");
    ev->add_option("--data", o.data, "data directory or evaluation dataset")->required();
    ev->add_option("--out", o.out, "run directory")->required();

    auto* rp = app.add_subcommand("report", "consolidate eval reports of a run directory");
    rp->add_option("--out", o.out, "run directory")->required();

    auto* rx = app.add_subcommand("run-experiment", "every stage in sequence");
    add_config(rx, o);
    rx->add_option("--out", o.out, "run directory")->required();

    auto* pc = app.add_subcommand("print-config", "print the canonical config and its hash");
    add_config(pc, o);

    CLI11_PARSE(app, argc, argv);

    std::string command = app.get_subcommands().front()->get_name();
    try {
        if (command == "report") {
            check(rlarff_cmd_report(o.out.c_str()));
            return 0;
        }
        const Config cfg(o);
        const char* out = o.out.c_str();
        if (command == "gen-data") {
            check(rlarff_cmd_gen_data(cfg.get(), out));
        } else if (command == "train-base") {
            check(rlarff_cmd_train_base(cfg.get(), o.data.c_str(), out));
        } else if (command == "train-lora") {
            check(rlarff_cmd_train_lora(cfg.get(), o.base.c_str(), o.data.c_str(), or_null(o.env), out));
        } else if (command == "adapt-rla") {
            check(rlarff_cmd_adapt_rla(cfg.get(), o.base.c_str(), o.pool_dir.c_str(), o.data.c_str(), out));
        } else if (command == "adapt-ft") {
            check(rlarff_cmd_adapt_ft(cfg.get(), o.base.c_str(), o.data.c_str(), out));
        } else if (command == "adapt-lora") {
            check(rlarff_cmd_adapt_lora(cfg.get(), o.base.c_str(), o.data.c_str(), out));
        } else if (command == "eval") {
            check(rlarff_cmd_eval(cfg.get(), o.base.c_str(), or_null(o.adapter), or_null(o.rla_report),
                                  or_null(o.pool_dir), o.data.c_str(), or_null(o.name), out));
        } else if (command == "run-experiment") {
            check(rlarff_cmd_run_experiment(cfg.get(), out));
        } else if (command == "print-config") {
            std::size_t needed = 0;
            check(rlarff_config_to_json(cfg.get(), nullptr, 0, &needed));
            std::vector<char> buf(needed);
            check(rlarff_config_to_json(cfg.get(), buf.data(), buf.size(), &needed));
            char hash[17];
            check(rlarff_config_hash(cfg.get(), hash));
            std::cout << buf.data();
            std::cerr << "config hash " << hash << "\n";
        }
    } catch (const Failure& f) {
        const nlohmann::json record = {{"error",
                                        {{"status", static_cast<int>(f.status)},
                                         {"kind", rlarff_status_name(f.status)},
                                         {"message", rlarff_last_error()},
                                         {"command", command}}}};
        std::cerr << record.dump() << "\n";
        return static_cast<int>(f.status);
    }
    return 0;
}
