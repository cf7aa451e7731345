// SPDX-License-Identifier: Apache-2.0
#include "rlarff/evalkit.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <random>
#include <unordered_set>

#include "rlarff/error.hpp"
#include "rlarff/extractor.hpp"
#include "rlarff/instrument.hpp"

namespace rlarff::eval {

namespace {

// Floyd's algorithm: k distinct values from [0, n), returned sorted.
std::vector<std::size_t> sample_indices(std::size_t n, std::size_t k, std::mt19937_64& rng) {
    std::vector<std::size_t> out;
    if (k >= n) {
        out.resize(n);
        for (std::size_t i = 0; i < n; ++i) out[i] = i;
        return out;
    }
    std::unordered_set<std::size_t> chosen;
    chosen.reserve(k * 2);
    for (std::size_t j = n - k; j < n; ++j) {
        const std::size_t t = std::uniform_int_distribution<std::size_t>(0, j)(rng);
        if (!chosen.insert(t).second) chosen.insert(j);
    }
    out.assign(chosen.begin(), chosen.end());
    std::sort(out.begin(), out.end());
    return out;
}

}  // namespace

std::size_t PairSet::genuine_count() const noexcept {
    return static_cast<std::size_t>(std::count_if(pairs.begin(), pairs.end(), [](const Pair& p) { return p.genuine; }));
}

std::size_t PairSet::impostor_count() const noexcept { return pairs.size() - genuine_count(); }

void PairSet::require_both_kinds() const {
    if (genuine_count() == 0 || impostor_count() == 0) {
        fail(Errc::protocol, "pair set needs at least one genuine and one impostor pair (have " +
                                 std::to_string(genuine_count()) + " genuine, " + std::to_string(impostor_count()) +
                                 " impostor)");
    }
}

PairSet make_pairs(std::span<const Embedding> embeddings, std::span<const std::uint32_t> labels,
                   std::size_t max_pairs, std::uint64_t seed) {
    if (embeddings.size() != labels.size())
        fail(Errc::dimension, "make_pairs: " + std::to_string(embeddings.size()) + " embeddings but " +
                                  std::to_string(labels.size()) + " labels");
    if (max_pairs < 2) fail(Errc::config, "make_pairs: max_pairs must be at least 2");
    {
        std::unordered_set<std::uint32_t> devices(labels.begin(), labels.end());
        if (devices.size() < 2) fail(Errc::protocol, "make_pairs: at least two devices are required");
    }
    const std::size_t n = embeddings.size();
    std::vector<Embedding> unit(n);
    for (std::size_t i = 0; i < n; ++i) unit[i] = fx::normalized(embeddings[i]);

    std::size_t total_genuine = 0, total_impostor = 0;
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i + 1; j < n; ++j) (labels[i] == labels[j] ? total_genuine : total_impostor)++;

    std::size_t take_genuine = total_genuine, take_impostor = total_impostor;
    if (total_genuine + total_impostor > max_pairs) {
        take_genuine = std::min(total_genuine, max_pairs / 2);
        take_impostor = std::min(total_impostor, max_pairs - take_genuine);
        take_genuine = std::min(total_genuine, max_pairs - take_impostor);
    }
    std::mt19937_64 rng(seed);
    const auto pick_genuine = sample_indices(total_genuine, take_genuine, rng);
    const auto pick_impostor = sample_indices(total_impostor, take_impostor, rng);

    PairSet out;
    out.pairs.reserve(take_genuine + take_impostor);
    std::size_t gi = 0, ii = 0, gpos = 0, ipos = 0;
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = i + 1; j < n; ++j) {
            const bool genuine = labels[i] == labels[j];
            std::size_t& counter = genuine ? gi : ii;
            std::size_t& pos = genuine ? gpos : ipos;
            const auto& picks = genuine ? pick_genuine : pick_impostor;
            if (pos < picks.size() && picks[pos] == counter) {
                const double c = fx::dot_unit(unit[i], unit[j]);
                out.pairs.push_back({std::clamp(1.0 - c, 0.0, 2.0), genuine});
                ++pos;
            }
            ++counter;
        }
    }
    return out;
}

std::vector<double> candidate_thresholds(const PairSet& pairs) {
    std::vector<double> d;
    d.reserve(pairs.pairs.size());
    for (const auto& p : pairs.pairs) d.push_back(p.distance);
    std::sort(d.begin(), d.end());
    d.erase(std::unique(d.begin(), d.end()), d.end());
    std::vector<double> out;
    out.reserve(d.size() * 2);
    for (std::size_t i = 0; i < d.size(); ++i) {
        out.push_back(d[i]);
        if (i + 1 < d.size()) out.push_back(0.5 * (d[i] + d[i + 1]));
    }
    return out;
}

std::vector<RocPoint> roc_curve(const PairSet& pairs) {
    pairs.require_both_kinds();
    std::vector<double> genuine, impostor;
    for (const auto& p : pairs.pairs) (p.genuine ? genuine : impostor).push_back(p.distance);
    std::sort(genuine.begin(), genuine.end());
    std::sort(impostor.begin(), impostor.end());
    const double ng = static_cast<double>(genuine.size());
    const double ni = static_cast<double>(impostor.size());

    std::vector<RocPoint> out;
    for (double t : candidate_thresholds(pairs)) {
        const auto accepted_impostors = std::upper_bound(impostor.begin(), impostor.end(), t) - impostor.begin();
        const auto accepted_genuine = std::upper_bound(genuine.begin(), genuine.end(), t) - genuine.begin();
        out.push_back({t, static_cast<double>(accepted_impostors) / ni,
                       static_cast<double>(genuine.size() - static_cast<std::size_t>(accepted_genuine)) / ng});
    }
    return out;
}

EerResult compute_eer(const PairSet& pairs) {
    const auto roc = roc_curve(pairs);
    EerResult best{1.0, 0.0};
    double best_gap = 2.0;
    for (const auto& p : roc) {
        const double gap = std::abs(p.far - p.frr);
        if (gap < best_gap) {
            best_gap = gap;
            best = {(p.far + p.frr) / 2.0, p.threshold};
        }
    }
    return best;
}

double compute_auc(const PairSet& pairs) {
    pairs.require_both_kinds();
    std::vector<double> genuine, impostor;
    for (const auto& p : pairs.pairs) (p.genuine ? genuine : impostor).push_back(p.distance);
    std::sort(genuine.begin(), genuine.end());
    double favorable = 0.0;
    for (double d : impostor) {
        const auto lo = std::lower_bound(genuine.begin(), genuine.end(), d);
        const auto hi = std::upper_bound(lo, genuine.end(), d);
        favorable += static_cast<double>(lo - genuine.begin()) + 0.5 * static_cast<double>(hi - lo);
    }
    return favorable / (static_cast<double>(genuine.size()) * static_cast<double>(impostor.size()));
}

double trapezoid_auc(const std::vector<RocPoint>& roc) {
    double area = 0.0;
    double prev_far = 0.0, prev_tpr = 0.0;
    auto step = [&](double far, double tpr) {
        area += (far - prev_far) * (tpr + prev_tpr) / 2.0;
        prev_far = far;
        prev_tpr = tpr;
    };
    for (const auto& p : roc) step(p.far, 1.0 - p.frr);
    step(1.0, 1.0);
    return area;
}

TimingRecord timing_harness(const std::function<void()>& procedure) {
    CounterScope scope;
    const auto start = std::chrono::steady_clock::now();
    procedure();
    const auto stop = std::chrono::steady_clock::now();
    TimingRecord rec;
    rec.wall_seconds = std::chrono::duration<double>(stop - start).count();
    rec.gradient_updates = scope.get().gradient_updates;
    rec.backward_calls = scope.get().backward_calls;
    rec.forward_evals = scope.get().forward_evals;
    rec.fitness_evals = scope.get().fitness_evals;
    return rec;
}

EvalReport evaluate_pairs(const PairSet& pairs) {
    EvalReport r;
    r.roc = roc_curve(pairs);
    r.auc = compute_auc(pairs);
    const auto eer = compute_eer(pairs);
    r.eer = eer.eer;
    r.eer_threshold = eer.threshold;
    r.genuine_pairs = pairs.genuine_count();
    r.impostor_pairs = pairs.impostor_count();
    return r;
}

}  // namespace rlarff::eval
