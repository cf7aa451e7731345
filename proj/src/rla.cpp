// SPDX-License-Identifier: Apache-2.0
#include "rlarff/rla.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>

#include "rlarff/error.hpp"
#include "rlarff/instrument.hpp"

namespace rlarff::rla {

namespace {

// Symmetrizes cov, refreshes the eigendecomposition, and lifts the spectrum
// when the condition number exceeds kMaxCondition.
void decompose(CMAESState& s) {
    s.cov = 0.5 * (s.cov + s.cov.transpose());
    if (!s.cov.allFinite()) fail(Errc::optimizer_failure, "covariance matrix has non-finite entries");
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(s.cov);
    if (eig.info() != Eigen::Success) fail(Errc::optimizer_failure, "covariance eigendecomposition failed");
    Eigen::VectorXd values = eig.eigenvalues();
    const double hi = values.maxCoeff(), lo = values.minCoeff();
    if (!(hi > 0.0)) fail(Errc::optimizer_failure, "covariance matrix has no positive eigenvalue");
    if (lo <= 0.0 || hi > kMaxCondition * lo) {
        const double jitter = (hi - kMaxCondition * lo) / (kMaxCondition - 1.0);
        s.cov += jitter * Eigen::MatrixXd::Identity(s.n, s.n);
        eig.compute(s.cov);
        values = eig.eigenvalues();
        if (eig.info() != Eigen::Success || !(values.minCoeff() > 0.0))
            fail(Errc::optimizer_failure, "covariance matrix is not positive definite after repair");
    }
    s.basis = eig.eigenvectors();
    s.axis_lengths = values.cwiseSqrt();
}

}  // namespace

void LoRAPool::validate(const fx::ExtractorModel& base) const {
    if (modules.empty()) fail(Errc::config, "LoRA pool is empty");
    const auto& first = modules.front();
    for (std::size_t k = 0; k < modules.size(); ++k) {
        const auto& m = modules[k];
        m.validate(base);
        if (m.targets != first.targets)
            fail(Errc::config, "pool module " + std::to_string(k) + " targets differ from module 0");
    }
}

std::size_t default_population(std::size_t k) {
    if (k < 1) fail(Errc::config, "population formula needs K >= 1");
    return 4 + static_cast<std::size_t>(std::floor(3.0 * std::log(static_cast<double>(k))));
}

std::size_t default_parents(std::size_t lambda) { return lambda / 2; }

lora::DeltaMap aggregate(const LoRAPool& pool, std::span<const double> alpha) {
    if (pool.modules.empty()) fail(Errc::config, "LoRA pool is empty");
    if (alpha.size() != pool.size())
        fail(Errc::dimension, "aggregation weights have length " + std::to_string(alpha.size()) + ", pool has " +
                                  std::to_string(pool.size()) + " modules");
    for (double a : alpha)
        if (!std::isfinite(a)) fail(Errc::contract, "aggregation weight is not finite");
    lora::DeltaMap out;
    for (const auto& t : pool.modules.front().targets) {
        nd::Tensor sum;
        for (std::size_t k = 0; k < pool.size(); ++k) {
            const nd::Tensor d = pool.modules[k].delta(t);
            if (k == 0) sum = nd::Tensor(d.shape());
            if (d.shape() != sum.shape()) fail(Errc::dimension, "pool deltas for '" + t + "' differ in shape");
            nd::axpy(alpha[k], d, sum);
        }
        out.emplace(t, std::move(sum));
    }
    return out;
}

fx::MetricHead prototype_head(std::span<const fx::Embedding> embeddings, std::span<const std::uint32_t> labels,
                              std::size_t classes, double scale) {
    if (embeddings.size() != labels.size()) fail(Errc::dimension, "prototype_head: embedding/label count mismatch");
    if (embeddings.empty()) fail(Errc::contract, "prototype_head: no embeddings");
    const std::size_t d = embeddings.front().size();
    nd::Tensor w({classes, d});
    std::vector<std::size_t> counts(classes, 0);
    for (std::size_t i = 0; i < embeddings.size(); ++i) {
        if (labels[i] >= classes) fail(Errc::contract, "prototype_head: label outside [0, J)");
        const auto u = fx::normalized(embeddings[i]);
        for (std::size_t j = 0; j < d; ++j) w(labels[i], j) += u[j];
        ++counts[labels[i]];
    }
    for (std::size_t c = 0; c < classes; ++c) {
        if (counts[c] == 0) fail(Errc::contract, "device " + std::to_string(c) + " has no adaptation samples");
        for (std::size_t j = 0; j < d; ++j) w(c, j) /= static_cast<double>(counts[c]);
    }
    fx::MetricHead h{std::move(w), scale};
    h.validate();
    return h;
}

double fitness(const fx::ExtractorModel& base, const LoRAPool& pool, std::span<const double> alpha,
               const sim::LabeledDataset& adapt) {
    if (adapt.size() == 0) fail(Errc::contract, "fitness needs a nonempty adaptation set");
    count(Counter::fitness_evals);
    const auto model = lora::merge(base, aggregate(pool, alpha));
    const auto z = fx::embed_all(model, adapt);
    const auto labels = adapt.labels();
    return fx::mle_loss(z, labels, prototype_head(z, labels, adapt.device_count));
}

CMAESConfig CMAESConfig::defaults(std::size_t k) {
    CMAESConfig c;
    c.dimension = k;
    c.population = default_population(k);
    c.parents = default_parents(c.population);
    c.initial_mean.assign(k, 1.0 / static_cast<double>(k));
    return c;
}

void CMAESConfig::validate() const {
    if (dimension < 1) fail(Errc::config, "CMA-ES dimension must be at least 1");
    if (population < 2) fail(Errc::config, "CMA-ES population must be at least 2");
    if (parents < 1 || parents > population) fail(Errc::config, "CMA-ES parents must lie in [1, lambda]");
    if (!(sigma0 > 0.0) || !std::isfinite(sigma0)) fail(Errc::config, "CMA-ES sigma0 must be positive");
    if (initial_mean.size() != dimension)
        fail(Errc::config, "CMA-ES initial mean has length " + std::to_string(initial_mean.size()) +
                               ", dimension is " + std::to_string(dimension));
}

CMAESState cmaes_init(const CMAESConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    CMAESState s;
    const double n = static_cast<double>(cfg.dimension);
    s.n = cfg.dimension;
    s.lambda = cfg.population;
    s.mu = cfg.parents;

    s.weights.resize(static_cast<Eigen::Index>(s.mu));
    for (std::size_t i = 0; i < s.mu; ++i)
        s.weights[static_cast<Eigen::Index>(i)] =
            std::log(static_cast<double>(s.mu) + 0.5) - std::log(static_cast<double>(i + 1));
    s.weights /= s.weights.sum();
    s.mu_eff = 1.0 / s.weights.squaredNorm();

    s.c_sigma = (s.mu_eff + 2.0) / (n + s.mu_eff + 5.0);
    s.d_sigma = 1.0 + 2.0 * std::max(0.0, std::sqrt((s.mu_eff - 1.0) / (n + 1.0)) - 1.0) + s.c_sigma;
    s.c_c = (4.0 + s.mu_eff / n) / (n + 4.0 + 2.0 * s.mu_eff / n);
    s.c_1 = 2.0 / ((n + 1.3) * (n + 1.3) + s.mu_eff);
    s.c_mu = std::min(1.0 - s.c_1, 2.0 * (s.mu_eff - 2.0 + 1.0 / s.mu_eff) / ((n + 2.0) * (n + 2.0) + s.mu_eff));
    s.chi_n = std::sqrt(n) * (1.0 - 1.0 / (4.0 * n) + 1.0 / (21.0 * n * n));

    s.mean = Eigen::Map<const Eigen::VectorXd>(cfg.initial_mean.data(), static_cast<Eigen::Index>(s.n));
    s.sigma = cfg.sigma0;
    s.cov = Eigen::MatrixXd::Identity(s.n, s.n);
    s.p_sigma = Eigen::VectorXd::Zero(s.n);
    s.p_c = Eigen::VectorXd::Zero(s.n);
    s.rng.seed(seed);
    decompose(s);
    return s;
}

std::vector<Weights> cmaes_ask(CMAESState& s) {
    if (!(s.sigma > 0.0) || !std::isfinite(s.sigma)) fail(Errc::optimizer_failure, "step size is not positive");
    std::normal_distribution<double> normal;
    const Eigen::MatrixXd sqrt_cov = s.basis * s.axis_lengths.asDiagonal() * s.basis.transpose();
    std::vector<Weights> out;
    out.reserve(s.lambda);
    Eigen::VectorXd z(s.n);
    for (std::size_t i = 0; i < s.lambda; ++i) {
        for (Eigen::Index j = 0; j < z.size(); ++j) z[j] = normal(s.rng);
        const Eigen::VectorXd x = s.mean + s.sigma * (sqrt_cov * z);
        out.emplace_back(x.data(), x.data() + x.size());
    }
    return out;
}

void cmaes_tell(CMAESState& s, const std::vector<Weights>& candidates, std::span<const double> fitnesses) {
    if (candidates.size() != s.lambda || fitnesses.size() != s.lambda)
        fail(Errc::dimension, "cmaes_tell expects " + std::to_string(s.lambda) + " candidates and fitnesses, got " +
                                  std::to_string(candidates.size()) + " and " + std::to_string(fitnesses.size()));
    for (std::size_t i = 0; i < s.lambda; ++i) {
        if (std::isnan(fitnesses[i])) fail(Errc::optimizer_failure, "fitness of candidate " + std::to_string(i) + " is NaN");
        if (candidates[i].size() != s.n)
            fail(Errc::dimension, "candidate " + std::to_string(i) + " has length " +
                                      std::to_string(candidates[i].size()));
    }
    std::vector<std::size_t> order(s.lambda);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return fitnesses[a] < fitnesses[b]; });

    const double n = static_cast<double>(s.n);
    const Eigen::VectorXd old_mean = s.mean;
    Eigen::MatrixXd y(s.n, s.mu);
    for (std::size_t i = 0; i < s.mu; ++i) {
        const auto& x = candidates[order[i]];
        y.col(static_cast<Eigen::Index>(i)) =
            (Eigen::Map<const Eigen::VectorXd>(x.data(), static_cast<Eigen::Index>(s.n)) - old_mean) / s.sigma;
    }
    const Eigen::VectorXd y_w = y * s.weights;
    s.mean = old_mean + s.sigma * y_w;

    const Eigen::MatrixXd inv_sqrt_cov = s.basis * s.axis_lengths.cwiseInverse().asDiagonal() * s.basis.transpose();
    s.p_sigma = (1.0 - s.c_sigma) * s.p_sigma + std::sqrt(s.c_sigma * (2.0 - s.c_sigma) * s.mu_eff) * (inv_sqrt_cov * y_w);

    const double ps_norm = s.p_sigma.norm();
    const double correction = std::sqrt(1.0 - std::pow(1.0 - s.c_sigma, 2.0 * static_cast<double>(s.generation + 1)));
    const bool h_sigma = ps_norm / correction < (1.4 + 2.0 / (n + 1.0)) * s.chi_n;
    s.p_c = (1.0 - s.c_c) * s.p_c + (h_sigma ? std::sqrt(s.c_c * (2.0 - s.c_c) * s.mu_eff) : 0.0) * y_w;

    const double delta_h = h_sigma ? 0.0 : s.c_c * (2.0 - s.c_c);
    const Eigen::MatrixXd rank_mu = y * s.weights.asDiagonal() * y.transpose();
    s.cov = (1.0 + s.c_1 * delta_h - s.c_1 - s.c_mu * s.weights.sum()) * s.cov +
            s.c_1 * (s.p_c * s.p_c.transpose()) + s.c_mu * rank_mu;

    s.sigma *= std::exp((s.c_sigma / s.d_sigma) * (ps_norm / s.chi_n - 1.0));
    if (!(s.sigma > 0.0) || !std::isfinite(s.sigma)) fail(Errc::optimizer_failure, "step size degenerated");
    ++s.generation;
    decompose(s);
}

MinimizeResult minimize(const Objective& f, const CMAESConfig& cfg, std::uint64_t seed) {
    auto state = cmaes_init(cfg, seed);
    MinimizeResult out;
    out.best_fitness = std::numeric_limits<double>::infinity();
    for (std::size_t it = 0; it < cfg.max_iterations; ++it) {
        const auto candidates = cmaes_ask(state);
        std::vector<double> values(candidates.size());
        for (std::size_t i = 0; i < candidates.size(); ++i) {
            values[i] = f(candidates[i]);
            ++out.evaluations;
            if (values[i] < out.best_fitness) {
                out.best_fitness = values[i];
                out.best = candidates[i];
            }
        }
        GenerationReport g;
        g.generation = it + 1;
        g.best_fitness = *std::min_element(values.begin(), values.end());
        g.mean_fitness = std::accumulate(values.begin(), values.end(), 0.0) / static_cast<double>(values.size());
        g.best_so_far = out.best_fitness;
        cmaes_tell(state, candidates, values);
        g.sigma = state.sigma;
        out.generations.push_back(g);
    }
    out.final_mean.assign(state.mean.data(), state.mean.data() + state.mean.size());
    if (out.best.empty()) out.best = out.final_mean;
    return out;
}

RLAResult adapt_rla(const fx::ExtractorModel& base, const LoRAPool& pool, const sim::LabeledDataset& adapt,
                    const CMAESConfig& cfg, std::uint64_t seed) {
    pool.validate(base);
    if (adapt.size() == 0) fail(Errc::contract, "adapt_rla needs a nonempty adaptation set");
    if (cfg.dimension != pool.size())
        fail(Errc::config, "CMA-ES dimension " + std::to_string(cfg.dimension) + " does not match pool size " +
                               std::to_string(pool.size()));
    const auto start = std::chrono::steady_clock::now();
    auto r = minimize([&](std::span<const double> alpha) { return fitness(base, pool, alpha, adapt); }, cfg, seed);
    RLAResult out;
    out.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    out.alpha = std::move(r.best);
    out.best_fitness = r.best_fitness;
    out.evaluations = r.evaluations;
    out.generations = std::move(r.generations);
    return out;
}

}  // namespace rlarff::rla
