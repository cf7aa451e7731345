// SPDX-License-Identifier: Apache-2.0
#include "rlarff/error.hpp"
#include "rlarff/instrument.hpp"

namespace rlarff {

std::string_view errc_name(Errc code) noexcept {
    switch (code) {
        case Errc::dimension: return "dimension";
        case Errc::degenerate_input: return "degenerate_input";
        case Errc::contract: return "contract";
        case Errc::config: return "config";
        case Errc::degenerate_channel: return "degenerate_channel";
        case Errc::stratification: return "stratification";
        case Errc::training_diverged: return "training_diverged";
        case Errc::protocol: return "protocol";
        case Errc::optimizer_failure: return "optimizer_failure";
        case Errc::io: return "io";
        case Errc::format: return "format";
    }
    return "unknown";
}

namespace {
Counters g_fallback;
thread_local Counters* t_current = nullptr;
}  // namespace

void Counters::reset() noexcept {
    backward_calls = 0;
    gradient_updates = 0;
    forward_evals = 0;
    fitness_evals = 0;
}

Counters& counters() noexcept { return t_current ? *t_current : g_fallback; }

void count(Counter which, std::uint64_t n) noexcept {
    for (Counters* c = &counters(); c != nullptr; c = c->parent) {
        switch (which) {
            case Counter::backward_calls: c->backward_calls.fetch_add(n, std::memory_order_relaxed); break;
            case Counter::gradient_updates: c->gradient_updates.fetch_add(n, std::memory_order_relaxed); break;
            case Counter::forward_evals: c->forward_evals.fetch_add(n, std::memory_order_relaxed); break;
            case Counter::fitness_evals: c->fitness_evals.fetch_add(n, std::memory_order_relaxed); break;
        }
    }
}

CounterScope::CounterScope() noexcept : previous_(t_current) {
    own_.parent = previous_;
    t_current = &own_;
}

CounterScope::~CounterScope() { t_current = previous_; }

}  // namespace rlarff
