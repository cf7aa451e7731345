// SPDX-License-Identifier: Apache-2.0
#include "rlarff.h"

#include <algorithm>
#include <cstring>
#include <new>
#include <string>

#include "rlarff/commands.hpp"
#include "rlarff/error.hpp"
#include "rlarff/io.hpp"

struct rlarff_config {
    rlarff::exp::ExperimentConfig cfg;
};
struct rlarff_dataset {
    rlarff::sim::LabeledDataset data;
};
struct rlarff_model {
    rlarff::io::Checkpoint ckpt;
};
struct rlarff_lora {
    rlarff::io::LoRAFile file;
};

namespace {

using rlarff::Errc;

thread_local std::string g_last_error;

rlarff_status record(rlarff_status s, const std::string& message) {
    g_last_error = message;
    return s;
}

template <class F>
rlarff_status guarded(F&& f) noexcept {
    try {
        f();
        return RLARFF_OK;
    } catch (const rlarff::Error& e) {
        return record(static_cast<rlarff_status>(static_cast<int>(e.code())), e.what());
    } catch (const std::bad_alloc&) {
        return record(RLARFF_E_INTERNAL, "out of memory");
    } catch (const std::filesystem::filesystem_error& e) {
        return record(RLARFF_E_IO, e.what());
    } catch (const std::exception& e) {
        return record(RLARFF_E_INTERNAL, e.what());
    } catch (...) {
        return record(RLARFF_E_INTERNAL, "unknown exception");
    }
}

template <class T>
const T& need(const T* p, const char* what) {
    if (p == nullptr) rlarff::fail(Errc::contract, std::string(what) + " must not be NULL");
    return *p;
}

template <class T>
T& need(T* p, const char* what) {
    if (p == nullptr) rlarff::fail(Errc::contract, std::string(what) + " must not be NULL");
    return *p;
}

std::string opt(const char* s) { return s ? s : ""; }

const char* str(const char* s, const char* what) {
    if (s == nullptr) rlarff::fail(Errc::contract, std::string(what) + " must not be NULL");
    return s;
}

template <class H, class V>
rlarff_status make(H** out, V&& value) {
    return guarded([&] {
        need(out, "out");
        *out = nullptr;
        *out = new H{std::forward<V>(value)()};
    });
}

}  // namespace

extern "C" {

const char* rlarff_version(void) { return rlarff::cmd::kToolVersion; }

const char* rlarff_status_name(rlarff_status status) {
    if (status == RLARFF_OK) return "ok";
    if (status == RLARFF_E_INTERNAL) return "internal";
    if (status >= 1 && status <= 11) return rlarff::errc_name(static_cast<Errc>(status)).data();
    return "unknown";
}

const char* rlarff_last_error(void) { return g_last_error.c_str(); }

rlarff_status rlarff_config_default(rlarff_config** out) {
    return make(out, [] { return rlarff::exp::ExperimentConfig::defaults(); });
}

rlarff_status rlarff_config_benchmark(rlarff_config** out) {
    return make(out, [] { return rlarff::exp::ExperimentConfig::benchmark(); });
}

rlarff_status rlarff_config_load(const char* path, rlarff_config** out) {
    return make(out, [&] {
        auto c = rlarff::exp::load_config(str(path, "path"));
        c.validate();
        return c;
    });
}

rlarff_status rlarff_config_set_seed(rlarff_config* cfg, uint64_t seed) {
    return guarded([&] { need(cfg, "cfg").cfg.seed = seed; });
}

rlarff_status rlarff_config_get_seed(const rlarff_config* cfg, uint64_t* seed) {
    return guarded([&] { need(seed, "seed") = need(cfg, "cfg").cfg.seed; });
}

rlarff_status rlarff_config_hash(const rlarff_config* cfg, char out[17]) {
    return guarded([&] {
        const auto h = rlarff::exp::config_hash(need(cfg, "cfg").cfg);
        std::memcpy(&need(out, "out"), h.c_str(), h.size() + 1);
    });
}

rlarff_status rlarff_config_to_json(const rlarff_config* cfg, char* buf, size_t cap, size_t* needed) {
    return guarded([&] {
        const auto text = rlarff::exp::to_json(need(cfg, "cfg").cfg);
        if (needed) *needed = text.size() + 1;
        if (cap == 0) return;
        const std::size_t n = std::min(cap - 1, text.size());
        std::memcpy(&need(buf, "buf"), text.data(), n);
        buf[n] = '\0';
    });
}

void rlarff_config_free(rlarff_config* cfg) { delete cfg; }

rlarff_status rlarff_dataset_load(const char* path, rlarff_dataset** out) {
    return make(out, [&] { return rlarff::io::load_dataset(str(path, "path")); });
}

rlarff_status rlarff_dataset_save(const rlarff_dataset* data, const char* path) {
    return guarded([&] { rlarff::io::save_dataset(need(data, "data").data, str(path, "path")); });
}

rlarff_status rlarff_dataset_info(const rlarff_dataset* data, size_t* samples, size_t* length, size_t* devices) {
    return guarded([&] {
        const auto& d = need(data, "data").data;
        if (samples) *samples = d.size();
        if (length) *length = d.length;
        if (devices) *devices = d.device_count;
    });
}

rlarff_status rlarff_dataset_sample(const rlarff_dataset* data, size_t index, float* iq, size_t iq_len,
                                    uint32_t* device) {
    return guarded([&] {
        const auto& d = need(data, "data").data;
        if (index >= d.size())
            rlarff::fail(Errc::contract, "sample index " + std::to_string(index) + " out of range");
        const auto& s = d.samples[index];
        if (iq != nullptr) {
            if (iq_len != 2 * s.signal.size())
                rlarff::fail(Errc::dimension, "iq buffer holds " + std::to_string(iq_len) + " floats, need " +
                                                  std::to_string(2 * s.signal.size()));
            for (std::size_t i = 0; i < s.signal.size(); ++i) {
                iq[2 * i] = s.signal[i].real();
                iq[2 * i + 1] = s.signal[i].imag();
            }
        }
        if (device) *device = s.device;
    });
}

void rlarff_dataset_free(rlarff_dataset* data) { delete data; }

rlarff_status rlarff_model_load(const char* path, rlarff_model** out) {
    return make(out, [&] { return rlarff::io::load_checkpoint(str(path, "path")); });
}

rlarff_status rlarff_model_save(const rlarff_model* model, const char* path) {
    return guarded([&] { rlarff::io::save_checkpoint(need(model, "model").ckpt, str(path, "path")); });
}

rlarff_status rlarff_model_info(const rlarff_model* model, size_t* input_length, size_t* embedding_dim,
                                size_t* parameters) {
    return guarded([&] {
        const auto& m = need(model, "model").ckpt.model;
        if (input_length) *input_length = m.input_length();
        if (embedding_dim) *embedding_dim = m.embedding_dim();
        if (parameters) *parameters = m.parameter_count();
    });
}

rlarff_status rlarff_model_embed(const rlarff_model* model, const float* iq, size_t iq_len, double* out,
                                 size_t out_len) {
    return guarded([&] {
        const auto& m = need(model, "model").ckpt.model;
        need(iq, "iq");
        need(out, "out");
        if (iq_len != 2 * m.input_length())
            rlarff::fail(Errc::dimension, "iq holds " + std::to_string(iq_len) + " floats, model needs " +
                                              std::to_string(2 * m.input_length()));
        if (out_len != m.embedding_dim())
            rlarff::fail(Errc::dimension, "output holds " + std::to_string(out_len) + " doubles, embedding has " +
                                              std::to_string(m.embedding_dim()));
        rlarff::sim::ComplexSignal x(m.input_length());
        for (std::size_t i = 0; i < x.size(); ++i) x[i] = {iq[2 * i], iq[2 * i + 1]};
        const auto z = rlarff::fx::embed(m, x);
        std::copy(z.begin(), z.end(), out);
    });
}

rlarff_status rlarff_model_merge_lora(rlarff_model* model, const rlarff_lora* adapter, double weight) {
    return guarded([&] {
        auto& m = need(model, "model").ckpt.model;
        const auto& mod = need(adapter, "adapter").file.module;
        mod.validate(m);
        auto d = rlarff::lora::deltas(mod);
        for (auto& [_, t] : d)
            for (auto& v : t.data()) v *= weight;
        m = rlarff::lora::merge(m, d);
    });
}

rlarff_status rlarff_cosine_distance(const double* a, const double* b, size_t len, double* out) {
    return guarded([&] {
        need(a, "a");
        need(b, "b");
        need(out, "out") = rlarff::fx::cosine_distance(rlarff::fx::Embedding(a, a + len),
                                                       rlarff::fx::Embedding(b, b + len));
    });
}

void rlarff_model_free(rlarff_model* model) { delete model; }

rlarff_status rlarff_lora_load(const char* path, rlarff_lora** out) {
    return make(out, [&] { return rlarff::io::load_lora(str(path, "path")); });
}

rlarff_status rlarff_lora_save(const rlarff_lora* adapter, const char* path) {
    return guarded([&] { rlarff::io::save_lora(need(adapter, "adapter").file, str(path, "path")); });
}

rlarff_status rlarff_lora_info(const rlarff_lora* adapter, size_t* rank, size_t* parameters, char* environment_id,
                               size_t cap) {
    return guarded([&] {
        const auto& m = need(adapter, "adapter").file.module;
        if (rank) *rank = m.rank;
        if (parameters) *parameters = m.parameter_count();
        if (environment_id && cap > 0) {
            const std::size_t n = std::min(cap - 1, m.environment_id.size());
            std::memcpy(environment_id, m.environment_id.data(), n);
            environment_id[n] = '\0';
        }
    });
}

void rlarff_lora_free(rlarff_lora* adapter) { delete adapter; }

rlarff_status rlarff_cmd_gen_data(const rlarff_config* cfg, const char* out_dir) {
    return guarded([&] { rlarff::cmd::gen_data(need(cfg, "cfg").cfg, str(out_dir, "out_dir")); });
}

rlarff_status rlarff_cmd_train_base(const rlarff_config* cfg, const char* data, const char* out_dir) {
    return guarded(
        [&] { rlarff::cmd::train_base(need(cfg, "cfg").cfg, str(data, "data"), str(out_dir, "out_dir")); });
}

rlarff_status rlarff_cmd_train_lora(const rlarff_config* cfg, const char* base, const char* data, const char* env,
                                    const char* out_dir) {
    return guarded([&] {
        rlarff::cmd::train_lora(need(cfg, "cfg").cfg, str(base, "base"), str(data, "data"), opt(env),
                                str(out_dir, "out_dir"));
    });
}

rlarff_status rlarff_cmd_adapt_rla(const rlarff_config* cfg, const char* base, const char* pool_dir, const char* data,
                                   const char* out_dir) {
    return guarded([&] {
        rlarff::cmd::adapt_rla(need(cfg, "cfg").cfg, str(base, "base"), str(pool_dir, "pool_dir"),
                               str(data, "data"), str(out_dir, "out_dir"));
    });
}

rlarff_status rlarff_cmd_adapt_ft(const rlarff_config* cfg, const char* base, const char* data, const char* out_dir) {
    return guarded([&] {
        rlarff::cmd::adapt_ft(need(cfg, "cfg").cfg, str(base, "base"), str(data, "data"),
                              str(out_dir, "out_dir"));
    });
}

rlarff_status rlarff_cmd_adapt_lora(const rlarff_config* cfg, const char* base, const char* data,
                                    const char* out_dir) {
    return guarded([&] {
        rlarff::cmd::adapt_lora(need(cfg, "cfg").cfg, str(base, "base"), str(data, "data"),
                                str(out_dir, "out_dir"));
    });
}

rlarff_status rlarff_cmd_eval(const rlarff_config* cfg, const char* base, const char* adapter, const char* rla_report,
                              const char* pool_dir, const char* data, const char* name, const char* out_dir) {
    return guarded([&] {
        rlarff::cmd::EvalModel m{opt(adapter), opt(rla_report), opt(pool_dir), opt(name)};
        rlarff::cmd::evaluate(need(cfg, "cfg").cfg, str(base, "base"), m, str(data, "data"),
                              str(out_dir, "out_dir"));
    });
}

rlarff_status rlarff_cmd_report(const char* run_dir) {
    return guarded([&] { rlarff::cmd::report(str(run_dir, "run_dir")); });
}

rlarff_status rlarff_cmd_run_experiment(const rlarff_config* cfg, const char* out_dir) {
    return guarded([&] { rlarff::cmd::run_experiment(need(cfg, "cfg").cfg, str(out_dir, "out_dir")); });
}

}  // extern "C"
