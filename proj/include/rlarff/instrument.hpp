// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <atomic>
#include <cstdint>

namespace rlarff {

/// Work counters read by the timing harness. Increments go to the counters
/// of the innermost CounterScope on the calling thread and to every
/// enclosing scope, so nested measurements each see their own totals.
struct Counters {
    std::atomic<std::uint64_t> backward_calls{0};
    std::atomic<std::uint64_t> gradient_updates{0};
    std::atomic<std::uint64_t> forward_evals{0};
    std::atomic<std::uint64_t> fitness_evals{0};
    Counters* parent = nullptr;

    void reset() noexcept;
};

enum class Counter { backward_calls, gradient_updates, forward_evals, fitness_evals };

void count(Counter which, std::uint64_t n = 1) noexcept;

/// Counters of the innermost active scope (a process-wide instance if none).
Counters& counters() noexcept;

class CounterScope {
public:
    CounterScope() noexcept;
    ~CounterScope();
    CounterScope(const CounterScope&) = delete;
    CounterScope& operator=(const CounterScope&) = delete;

    Counters& get() noexcept { return own_; }

private:
    Counters own_;
    Counters* previous_;
};

}  // namespace rlarff
