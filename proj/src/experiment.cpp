// SPDX-License-Identifier: Apache-2.0
#include "rlarff/experiment.hpp"

#include <algorithm>
#include <cstdio>
#include <json.hpp>
#include <set>

#include "rlarff/error.hpp"
#include "rlarff/io.hpp"
#include "rlarff/seeds.hpp"

namespace rlarff::exp {

using nlohmann::json;
using C = std::complex<double>;

namespace {

sim::ChannelProfile make_channel(std::string id, std::vector<C> taps, double cfo, double snr_db) {
    sim::ChannelProfile c;
    c.environment_id = std::move(id);
    c.taps = std::move(taps);
    c.cfo = cfo;
    c.snr_db = snr_db;
    return c;
}

// ch1..ch3: near-flat. ch4..ch6: one strong-multipath family with a common
// frequency offset; ch6 is the unseen target.
std::vector<sim::ChannelProfile> default_channels() {
    return {
        make_channel("ch1", {{1.0, 0.0}, {0.05, 0.03}}, 0.001, 30.0),
        make_channel("ch2", {{1.0, 0.0}, {-0.08, 0.04}}, -0.002, 30.0),
        make_channel("ch3", {{1.0, 0.0}, {0.02, -0.10}}, 0.0, 30.0),
        make_channel("ch4", {{1.0, 0.0}, {0.95, -0.30}, {-0.20, 0.55}}, 0.027, 30.0),
        make_channel("ch5", {{1.0, 0.0}, {0.75, -0.50}, {-0.40, 0.40}}, 0.034, 30.0),
        make_channel("ch6", {{1.0, 0.0}, {0.70, -0.32}, {-0.22, 0.60}}, 0.029, 20.0),
    };
}

fx::TrainerConfig stop_rule_trainer() {
    fx::TrainerConfig t;
    t.min_epochs = 150;
    t.max_epochs = 600;
    t.auc_stop = 0.99;
    return t;
}

[[noreturn]] void field_error(const std::string& field, const std::string& what) {
    fail(Errc::config, "config field '" + field + "' " + what);
}

// Runs a validator and prefixes its message with the field name.
template <class F>
void within(const std::string& field, F&& f) {
    try {
        f();
    } catch (const Error& e) {
        fail(e.code(), "config field '" + field + "': " + e.what());
    }
}

void check_trainer(const fx::TrainerConfig& t, const std::string& field) {
    within(field, [&] { t.validate(); });
    if (t.max_epochs < t.min_epochs) field_error(field + ".max_epochs", "must be at least min_epochs");
}

// ---- JSON mapping ----------------------------------------------------------

json complex_json(const C& c) { return json::array({c.real(), c.imag()}); }

json channel_json(const sim::ChannelProfile& c) {
    json taps = json::array();
    for (const auto& t : c.taps) taps.push_back(complex_json(t));
    return {{"environment_id", c.environment_id},
            {"taps", taps},
            {"cfo", c.cfo},
            {"snr_db", c.snr_db ? json(*c.snr_db) : json(nullptr)}};
}

json range_json(const std::pair<double, double>& r) { return json::array({r.first, r.second}); }

json trainer_json(const fx::TrainerConfig& t) {
    return {{"learning_rate", t.learning_rate},
            {"momentum", t.momentum},
            {"batch_size", t.batch_size},
            {"max_epochs", t.max_epochs},
            {"min_epochs", t.min_epochs},
            {"auc_stop", t.auc_stop ? json(*t.auc_stop) : json(nullptr)},
            {"val_max_pairs", t.val_max_pairs}};
}

json config_json(const ExperimentConfig& c) {
    const auto& d = c.data;
    json channels = json::array();
    for (const auto& ch : d.channels) channels.push_back(channel_json(ch));
    json convs = json::array();
    for (const auto& cv : c.convs)
        convs.push_back({{"out_channels", cv.out_channels}, {"width", cv.width}, {"stride", cv.stride}});
    const auto& r = d.device_ranges;
    return {
        {"seed", c.seed},
        {"data",
         {{"preamble",
           {{"length", d.preamble.length},
            {"waveform", d.preamble.waveform},
            {"samples_per_chip", d.preamble.samples_per_chip},
            {"chirp_span", d.preamble.chirp_span}}},
          {"device_ranges",
           {{"iq_gain", range_json(r.iq_gain)},
            {"iq_phase", range_json(r.iq_phase)},
            {"dc_magnitude", r.dc_magnitude},
            {"pa_a1", range_json(r.pa_a1)},
            {"pa_a3", range_json(r.pa_a3)},
            {"phase_noise_std", range_json(r.phase_noise_std)}}},
          {"known_devices", d.known_devices},
          {"unseen_devices", d.unseen_devices},
          {"channels", channels},
          {"base_environments", d.base_environments},
          {"base_train_count", d.base_train_count},
          {"base_val_count", d.base_val_count},
          {"pool_environments", d.pool_environments},
          {"lora_train_count", d.lora_train_count},
          {"lora_val_count", d.lora_val_count},
          {"target_environment", d.target_environment},
          {"target_count", d.target_count},
          {"adapt_fraction", d.adapt_fraction}}},
        {"model", {{"convs", convs}, {"embedding_dim", c.embedding_dim}, {"scale", c.scale}}},
        {"train",
         {{"base", trainer_json(c.base_trainer)},
          {"lora", trainer_json(c.lora_trainer)},
          {"ft", trainer_json(c.ft_trainer)}}},
        {"lora", {{"rank", c.lora_rank}, {"targets", c.lora_targets}}},
        {"rla",
         {{"pool_size", c.rla.pool_size},
          {"population", c.rla.population},
          {"parents", c.rla.parents},
          {"sigma0", c.rla.sigma0},
          {"max_iterations", c.rla.max_iterations}}},
        {"eval", {{"max_pairs", c.max_pairs}}},
    };
}

// Reads the fields of one JSON object, rejecting keys nobody asked for.
class Obj {
public:
    Obj(const json& j, std::string path) : j_(j), path_(std::move(path)) {
        if (!j_.is_object()) field_error(path_.empty() ? "<root>" : path_, "must be an object");
    }
    ~Obj() noexcept(false) {
        if (std::uncaught_exceptions() > 0) return;
        for (const auto& [key, _] : j_.items())
            if (!seen_.count(key)) field_error(name(key), "is not recognized");
    }

    template <class T>
    void get(const std::string& key, T& out) {
        seen_.insert(key);
        const auto it = j_.find(key);
        if (it == j_.end()) return;
        if constexpr (std::is_integral_v<T> && !std::is_same_v<T, bool>) {
            if (!it->is_number_integer()) field_error(name(key), "must be an integer");
            if (std::is_unsigned_v<T> && !it->is_number_unsigned()) field_error(name(key), "must be non-negative");
        }
        try {
            out = it->get<T>();
        } catch (const json::exception&) {
            field_error(name(key), "has the wrong type");
        }
    }
    void opt(const std::string& key, std::optional<double>& out) {
        seen_.insert(key);
        const auto it = j_.find(key);
        if (it == j_.end()) return;
        if (it->is_null()) {
            out.reset();
        } else if (it->is_number()) {
            out = it->get<double>();
        } else {
            field_error(name(key), "must be a number or null");
        }
    }
    void range(const std::string& key, std::pair<double, double>& out) {
        std::vector<double> v{out.first, out.second};
        get(key, v);
        if (v.size() != 2) field_error(name(key), "must be [low, high]");
        out = {v[0], v[1]};
    }
    bool has(const std::string& key) {
        seen_.insert(key);
        return j_.contains(key);
    }
    const json& at(const std::string& key) const { return j_.at(key); }
    std::string name(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

private:
    const json& j_;
    std::string path_;
    std::set<std::string> seen_;
};

C complex_from(const json& j, const std::string& field) {
    if (!j.is_array() || j.size() != 2 || !j[0].is_number() || !j[1].is_number())
        field_error(field, "must be [re, im]");
    return {j[0].get<double>(), j[1].get<double>()};
}

void read_trainer(const json& j, const std::string& path, fx::TrainerConfig& t) {
    Obj o(j, path);
    o.get("learning_rate", t.learning_rate);
    o.get("momentum", t.momentum);
    o.get("batch_size", t.batch_size);
    o.get("max_epochs", t.max_epochs);
    o.get("min_epochs", t.min_epochs);
    o.opt("auc_stop", t.auc_stop);
    o.get("val_max_pairs", t.val_max_pairs);
}

ExperimentConfig read_config(const json& root) {
    ExperimentConfig c = ExperimentConfig::defaults();
    Obj o(root, "");
    o.get("seed", c.seed);
    if (o.has("data")) {
        auto& d = c.data;
        Obj od(o.at("data"), "data");
        if (od.has("preamble")) {
            Obj op(od.at("preamble"), "data.preamble");
            op.get("length", d.preamble.length);
            op.get("waveform", d.preamble.waveform);
            op.get("samples_per_chip", d.preamble.samples_per_chip);
            op.get("chirp_span", d.preamble.chirp_span);
        }
        if (od.has("device_ranges")) {
            auto& r = d.device_ranges;
            Obj orr(od.at("device_ranges"), "data.device_ranges");
            orr.range("iq_gain", r.iq_gain);
            orr.range("iq_phase", r.iq_phase);
            orr.get("dc_magnitude", r.dc_magnitude);
            orr.range("pa_a1", r.pa_a1);
            orr.range("pa_a3", r.pa_a3);
            orr.range("phase_noise_std", r.phase_noise_std);
        }
        od.get("known_devices", d.known_devices);
        od.get("unseen_devices", d.unseen_devices);
        if (od.has("channels")) {
            const json& arr = od.at("channels");
            if (!arr.is_array()) field_error("data.channels", "must be an array");
            d.channels.clear();
            for (std::size_t k = 0; k < arr.size(); ++k) {
                const std::string path = "data.channels[" + std::to_string(k) + "]";
                Obj oc(arr[k], path);
                sim::ChannelProfile ch;
                ch.snr_db.reset();
                oc.get("environment_id", ch.environment_id);
                if (oc.has("taps")) {
                    const json& taps = oc.at("taps");
                    if (!taps.is_array()) field_error(path + ".taps", "must be an array");
                    ch.taps.clear();
                    for (std::size_t t = 0; t < taps.size(); ++t)
                        ch.taps.push_back(complex_from(taps[t], path + ".taps[" + std::to_string(t) + "]"));
                }
                oc.get("cfo", ch.cfo);
                oc.opt("snr_db", ch.snr_db);
                d.channels.push_back(std::move(ch));
            }
        }
        od.get("base_environments", d.base_environments);
        od.get("base_train_count", d.base_train_count);
        od.get("base_val_count", d.base_val_count);
        od.get("pool_environments", d.pool_environments);
        od.get("lora_train_count", d.lora_train_count);
        od.get("lora_val_count", d.lora_val_count);
        od.get("target_environment", d.target_environment);
        od.get("target_count", d.target_count);
        od.get("adapt_fraction", d.adapt_fraction);
    }
    if (o.has("model")) {
        Obj om(o.at("model"), "model");
        if (om.has("convs")) {
            const json& arr = om.at("convs");
            if (!arr.is_array()) field_error("model.convs", "must be an array");
            c.convs.clear();
            for (std::size_t k = 0; k < arr.size(); ++k) {
                Obj oc(arr[k], "model.convs[" + std::to_string(k) + "]");
                fx::ConvSpec cv;
                oc.get("out_channels", cv.out_channels);
                oc.get("width", cv.width);
                oc.get("stride", cv.stride);
                c.convs.push_back(cv);
            }
        }
        om.get("embedding_dim", c.embedding_dim);
        om.get("scale", c.scale);
    }
    if (o.has("train")) {
        Obj ot(o.at("train"), "train");
        if (ot.has("base")) read_trainer(ot.at("base"), "train.base", c.base_trainer);
        if (ot.has("lora")) read_trainer(ot.at("lora"), "train.lora", c.lora_trainer);
        if (ot.has("ft")) read_trainer(ot.at("ft"), "train.ft", c.ft_trainer);
    }
    if (o.has("lora")) {
        Obj ol(o.at("lora"), "lora");
        ol.get("rank", c.lora_rank);
        ol.get("targets", c.lora_targets);
    }
    if (o.has("rla")) {
        Obj orl(o.at("rla"), "rla");
        orl.get("pool_size", c.rla.pool_size);
        orl.get("population", c.rla.population);
        orl.get("parents", c.rla.parents);
        orl.get("sigma0", c.rla.sigma0);
        orl.get("max_iterations", c.rla.max_iterations);
    }
    if (o.has("eval")) {
        Obj oe(o.at("eval"), "eval");
        oe.get("max_pairs", c.max_pairs);
    }
    return c;
}

sim::LabeledDataset build(const ExperimentConfig& cfg, const std::vector<sim::DeviceImpairment>& devices,
                          const std::vector<std::string>& envs, std::size_t count, const std::string& stage_name,
                          sim::Role role) {
    std::vector<sim::ChannelProfile> channels;
    for (const auto& e : envs) channels.push_back(cfg.channel(e));
    return sim::build_dataset(cfg.data.preamble, devices, channels, count, stage_seed(cfg, stage_name), role);
}

fx::TrainerConfig seeded(fx::TrainerConfig t, const ExperimentConfig& cfg, const std::string& stage_name) {
    t.seed = stage_seed(cfg, stage_name);
    return t;
}

std::vector<std::string> targets_for(const ExperimentConfig& cfg, const fx::ExtractorModel& base) {
    return cfg.lora_targets.empty() ? lora::default_targets(base) : cfg.lora_targets;
}

}  // namespace

ExperimentConfig ExperimentConfig::defaults() {
    ExperimentConfig c;
    c.data.channels = default_channels();
    c.base_trainer.max_epochs = 30;
    c.lora_trainer = stop_rule_trainer();
    c.ft_trainer = stop_rule_trainer();
    return c;
}

ExperimentConfig ExperimentConfig::benchmark() {
    ExperimentConfig c = defaults();
    c.data.preamble.length = 320;
    return c;
}

fx::Architecture ExperimentConfig::architecture() const {
    fx::Architecture a;
    a.input_length = data.preamble.length;
    a.convs = convs;
    a.embedding_dim = embedding_dim;
    return a;
}

const sim::ChannelProfile& ExperimentConfig::channel(const std::string& environment_id) const {
    for (const auto& c : data.channels)
        if (c.environment_id == environment_id) return c;
    fail(Errc::config, "config names environment '" + environment_id + "' but data.channels does not define it");
}

void ExperimentConfig::validate() const {
    const auto& d = data;
    within("data.preamble", [&] { d.preamble.validate(); });
    within("data.device_ranges", [&] { d.device_ranges.validate(); });
    if (d.known_devices < 2) field_error("data.known_devices", "must be at least 2");
    if (d.unseen_devices < 2) field_error("data.unseen_devices", "must be at least 2");
    if (d.channels.empty()) field_error("data.channels", "must not be empty");
    std::set<std::string> ids;
    for (std::size_t k = 0; k < d.channels.size(); ++k) {
        within("data.channels[" + std::to_string(k) + "]", [&] { d.channels[k].validate(); });
        if (!ids.insert(d.channels[k].environment_id).second)
            field_error("data.channels[" + std::to_string(k) + "].environment_id", "is duplicated");
    }
    auto known_env = [&](const std::string& field, const std::string& e) {
        if (!ids.count(e)) field_error(field, "environment '" + e + "' is not in data.channels");
    };
    if (d.base_environments.empty()) field_error("data.base_environments", "must not be empty");
    for (const auto& e : d.base_environments) known_env("data.base_environments", e);
    if (d.pool_environments.empty()) field_error("data.pool_environments", "must not be empty");
    for (const auto& e : d.pool_environments) known_env("data.pool_environments", e);
    if (std::set<std::string>(d.pool_environments.begin(), d.pool_environments.end()).size() !=
        d.pool_environments.size())
        field_error("data.pool_environments", "has duplicates");
    known_env("data.target_environment", d.target_environment);
    if (d.base_train_count == 0) field_error("data.base_train_count", "must be positive");
    if (d.base_val_count == 0) field_error("data.base_val_count", "must be positive");
    if (d.lora_train_count == 0) field_error("data.lora_train_count", "must be positive");
    if (d.lora_val_count == 0) field_error("data.lora_val_count", "must be positive");
    if (d.target_count < 2) field_error("data.target_count", "must be at least 2");
    if (!(d.adapt_fraction > 0.0 && d.adapt_fraction < 1.0)) field_error("data.adapt_fraction", "must lie in (0, 1)");
    within("model", [&] { architecture().validate(); });
    if (!(scale > 0.0) || !std::isfinite(scale)) field_error("model.scale", "must be positive");
    check_trainer(base_trainer, "train.base");
    check_trainer(lora_trainer, "train.lora");
    check_trainer(ft_trainer, "train.ft");
    if (lora_rank == 0) field_error("lora.rank", "must be at least 1");
    if (rla.pool_size > d.pool_environments.size())
        field_error("rla.pool_size", "exceeds the number of pool environments");
    if (!(rla.sigma0 > 0.0) || !std::isfinite(rla.sigma0)) field_error("rla.sigma0", "must be positive");
    if (rla.max_iterations == 0) field_error("rla.max_iterations", "must be positive");
    if (rla.population == 1) field_error("rla.population", "must be 0 (default) or at least 2");
    if (rla.parents != 0 && rla.population != 0 && rla.parents > rla.population)
        field_error("rla.parents", "must not exceed rla.population");
    if (max_pairs < 2) field_error("eval.max_pairs", "must be at least 2");
}

std::string to_json(const ExperimentConfig& cfg) { return config_json(cfg).dump(2) + "\n"; }

ExperimentConfig config_from_json(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::exception& e) {
        fail(Errc::config, std::string("config is not valid JSON: ") + e.what());
    }
    return read_config(j);
}

ExperimentConfig load_config(const std::string& path) {
    try {
        return config_from_json(io::read_file(path));
    } catch (const Error& e) {
        if (e.code() == Errc::io) throw;
        fail(e.code(), "'" + path + "': " + e.what());
    }
}

std::string config_hash(const ExperimentConfig& cfg) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx",
                  static_cast<unsigned long long>(fnv1a64(config_json(cfg).dump())));
    return buf;
}

std::string stage::lora_train(const std::string& env) { return "data/lora-train/" + env; }
std::string stage::lora_val(const std::string& env) { return "data/lora-val/" + env; }
std::string stage::lora(const std::string& env) { return "train/lora/" + env; }

std::uint64_t stage_seed(const ExperimentConfig& cfg, const std::string& stage_name) {
    return derive_seed(cfg.seed, stage_name);
}

Datasets generate_data(const ExperimentConfig& cfg) {
    cfg.validate();
    const auto& d = cfg.data;
    const auto all = sim::sample_devices(d.device_ranges, d.known_devices + d.unseen_devices,
                                         stage_seed(cfg, stage::devices));
    const std::vector<sim::DeviceImpairment> known(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(d.known_devices));
    const std::vector<sim::DeviceImpairment> unseen(all.begin() + static_cast<std::ptrdiff_t>(d.known_devices), all.end());

    Datasets out;
    out.base_train = build(cfg, known, d.base_environments, d.base_train_count, stage::base_train, sim::Role::train);
    out.base_val = build(cfg, known, d.base_environments, d.base_val_count, stage::base_val, sim::Role::validation);
    for (const auto& e : d.pool_environments) {
        out.lora_train.emplace(e, build(cfg, known, {e}, d.lora_train_count, stage::lora_train(e), sim::Role::train));
        out.lora_val.emplace(e, build(cfg, known, {e}, d.lora_val_count, stage::lora_val(e), sim::Role::validation));
    }
    const auto target = build(cfg, unseen, {d.target_environment}, d.target_count, stage::target, sim::Role::eval);
    auto [adapt, ev] = sim::split_adapt_eval(target, d.adapt_fraction, stage_seed(cfg, stage::split));
    out.target_adapt = std::move(adapt);
    out.target_eval = std::move(ev);
    return out;
}

fx::BaseTrainingResult train_base(const ExperimentConfig& cfg, const sim::LabeledDataset& train,
                                  const sim::LabeledDataset& val) {
    cfg.validate();
    fx::ExtractorModel model(cfg.architecture(), stage_seed(cfg, stage::init));
    auto head = fx::init_head(train.device_count, cfg.embedding_dim, stage_seed(cfg, stage::head), cfg.scale);
    return fx::train_base(std::move(model), std::move(head), train, val, seeded(cfg.base_trainer, cfg, stage::base));
}

lora::LoRATrainResult train_pool_module(const ExperimentConfig& cfg, const fx::ExtractorModel& base,
                                        const sim::LabeledDataset& train, const sim::LabeledDataset& val,
                                        const std::string& environment_id) {
    cfg.validate();
    return lora::train_lora(base, train, val, targets_for(cfg, base), cfg.lora_rank,
                            seeded(cfg.lora_trainer, cfg, stage::lora(environment_id)), environment_id);
}

rla::LoRAPool make_pool(const ExperimentConfig& cfg, std::vector<lora::LoRAModule> modules) {
    std::stable_sort(modules.begin(), modules.end(),
                     [](const auto& a, const auto& b) { return a.environment_id < b.environment_id; });
    for (std::size_t k = 1; k < modules.size(); ++k)
        if (modules[k].environment_id == modules[k - 1].environment_id)
            fail(Errc::contract, "pool holds two modules for environment '" + modules[k].environment_id + "'");
    if (cfg.rla.pool_size != 0 && modules.size() > cfg.rla.pool_size) modules.resize(cfg.rla.pool_size);
    return rla::LoRAPool{std::move(modules)};
}

rla::CMAESConfig cmaes_config(const ExperimentConfig& cfg, std::size_t k) {
    auto c = rla::CMAESConfig::defaults(k);
    if (cfg.rla.population != 0) c.population = cfg.rla.population;
    c.parents = cfg.rla.parents != 0 ? cfg.rla.parents : rla::default_parents(c.population);
    c.sigma0 = cfg.rla.sigma0;
    c.max_iterations = cfg.rla.max_iterations;
    return c;
}

rla::RLAResult adapt_rla(const ExperimentConfig& cfg, const fx::ExtractorModel& base, const rla::LoRAPool& pool,
                         const sim::LabeledDataset& adapt) {
    return rla::adapt_rla(base, pool, adapt, cmaes_config(cfg, pool.size()), stage_seed(cfg, stage::rla));
}

lora::FinetuneResult adapt_ft(const ExperimentConfig& cfg, const fx::ExtractorModel& base,
                              const sim::LabeledDataset& adapt) {
    return lora::full_finetune(base, adapt, adapt, seeded(cfg.ft_trainer, cfg, stage::ft));
}

lora::LoRATrainResult adapt_lora(const ExperimentConfig& cfg, const fx::ExtractorModel& base,
                                 const sim::LabeledDataset& adapt) {
    return lora::train_lora(base, adapt, adapt, targets_for(cfg, base), cfg.lora_rank,
                            seeded(cfg.ft_trainer, cfg, stage::adapt_lora), cfg.data.target_environment);
}

eval::EvalReport evaluate(const ExperimentConfig& cfg, const fx::ExtractorModel& model,
                          const sim::LabeledDataset& data) {
    const auto z = fx::embed_all(model, data);
    const auto labels = data.labels();
    return eval::evaluate_pairs(eval::make_pairs(z, labels, cfg.max_pairs, stage_seed(cfg, stage::pairs)));
}

BenchmarkResult run_benchmark(const ExperimentConfig& cfg) {
    const auto data = generate_data(cfg);
    const auto base = train_base(cfg, data.base_train, data.base_val);
    std::vector<lora::LoRAModule> modules;
    for (const auto& e : cfg.data.pool_environments)
        modules.push_back(train_pool_module(cfg, base.model, data.lora_train.at(e), data.lora_val.at(e), e).module);
    const auto pool = make_pool(cfg, std::move(modules));

    BenchmarkResult out;
    out.base.report = evaluate(cfg, base.model, data.target_eval);

    out.rla.timing = eval::timing_harness([&] { out.rla_detail = adapt_rla(cfg, base.model, pool, data.target_adapt); });
    out.rla.report = evaluate(cfg, lora::merge(base.model, rla::aggregate(pool, out.rla_detail.alpha)), data.target_eval);

    lora::FinetuneResult ft;
    out.ft.timing = eval::timing_harness([&] { ft = adapt_ft(cfg, base.model, data.target_adapt); });
    out.ft.report = evaluate(cfg, ft.model, data.target_eval);
    out.ft_epochs = ft.history.epochs.size();
    return out;
}

}  // namespace rlarff::exp
