// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <vector>

namespace rlarff::eval {

using Embedding = std::vector<double>;

struct Pair {
    double distance = 0.0;  // cosine distance in [0, 2]
    bool genuine = false;   // same transmitting device
};

struct PairSet {
    std::vector<Pair> pairs;

    std::size_t genuine_count() const noexcept;
    std::size_t impostor_count() const noexcept;
    /// Throws Errc::protocol unless both kinds are present.
    void require_both_kinds() const;
};

inline constexpr std::size_t kDefaultMaxPairs = 20000;

/// All pairs when there are at most max_pairs of them; otherwise a balanced
/// sample (half genuine, half impostor, topping up from whichever kind has
/// spare) drawn without replacement. Pairs come out in (i, j) order.
PairSet make_pairs(std::span<const Embedding> embeddings, std::span<const std::uint32_t> labels,
                   std::size_t max_pairs, std::uint64_t seed);

struct RocPoint {
    double threshold = 0.0;
    double far = 0.0;  // impostors with D <= T
    double frr = 0.0;  // genuines with D > T
};

/// Sorted distinct distances and the midpoints between neighbours.
std::vector<double> candidate_thresholds(const PairSet& pairs);
std::vector<RocPoint> roc_curve(const PairSet& pairs);

struct EerResult {
    double eer = 0.0;
    double threshold = 0.0;
};

/// (FAR+FRR)/2 at the lowest candidate threshold minimizing |FAR-FRR|.
EerResult compute_eer(const PairSet& pairs);

/// Mann-Whitney form: P(genuine distance < impostor distance), ties count 1/2.
double compute_auc(const PairSet& pairs);

/// Area under TPR-vs-FAR through (0,0), the ROC points, and (1,1).
double trapezoid_auc(const std::vector<RocPoint>& roc);

struct TimingRecord {
    double wall_seconds = 0.0;
    std::uint64_t gradient_updates = 0;
    std::uint64_t backward_calls = 0;
    std::uint64_t forward_evals = 0;
    std::uint64_t fitness_evals = 0;
};

/// Runs the procedure under fresh counters on a monotonic clock.
TimingRecord timing_harness(const std::function<void()>& procedure);

struct EvalReport {
    std::vector<RocPoint> roc;
    double auc = 0.0;
    double eer = 0.0;
    double eer_threshold = 0.0;
    std::size_t genuine_pairs = 0;
    std::size_t impostor_pairs = 0;
    std::optional<TimingRecord> timing;
};

EvalReport evaluate_pairs(const PairSet& pairs);

}  // namespace rlarff::eval
