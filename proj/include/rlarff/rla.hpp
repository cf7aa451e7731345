// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <Eigen/Dense>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <random>
#include <span>
#include <vector>

#include "rlarff/lora.hpp"

namespace rlarff::rla {

/// Frozen per-environment modules over one base model.
struct LoRAPool {
    std::vector<lora::LoRAModule> modules;

    std::size_t size() const noexcept { return modules.size(); }
    /// K >= 1, identical target lists and factor shapes, each valid for the base.
    void validate(const fx::ExtractorModel& base) const;
};

/// One mixing coefficient per module, unconstrained.
using Weights = std::vector<double>;

/// lambda = 4 + floor(3 ln K).
std::size_t default_population(std::size_t k);
/// mu = floor(lambda / 2).
std::size_t default_parents(std::size_t lambda);

/// Per target: sum_k alpha_k * A_k B_k.
lora::DeltaMap aggregate(const LoRAPool& pool, std::span<const double> alpha);

/// w_j = mean of the L2-normalized embeddings of device j.
fx::MetricHead prototype_head(std::span<const fx::Embedding> embeddings, std::span<const std::uint32_t> labels,
                              std::size_t classes, double scale = fx::kDefaultScale);

/// Loss of the aggregated model on the adaptation set under its prototype
/// head. Forward passes only.
double fitness(const fx::ExtractorModel& base, const LoRAPool& pool, std::span<const double> alpha,
               const sim::LabeledDataset& adapt);

struct CMAESConfig {
    std::size_t dimension = 0;
    std::size_t population = 0;  // lambda
    std::size_t parents = 0;     // mu
    double sigma0 = 0.7;
    std::size_t max_iterations = 20;
    std::vector<double> initial_mean;

    /// lambda and mu from the defaults, mean (1/K, ..., 1/K).
    static CMAESConfig defaults(std::size_t k);
    void validate() const;
};

/// (mu/mu_w, lambda)-CMA-ES state with the standard default constants.
struct CMAESState {
    std::size_t n = 0;
    std::size_t lambda = 0;
    std::size_t mu = 0;
    Eigen::VectorXd weights;
    double mu_eff = 0.0;
    double c_sigma = 0.0;
    double d_sigma = 0.0;
    double c_c = 0.0;
    double c_1 = 0.0;
    double c_mu = 0.0;
    double chi_n = 0.0;  // E||N(0, I)||

    Eigen::VectorXd mean;
    double sigma = 0.0;
    Eigen::MatrixXd cov;
    Eigen::VectorXd p_sigma;
    Eigen::VectorXd p_c;
    // cov = B diag(D^2) B^T
    Eigen::MatrixXd basis;
    Eigen::VectorXd axis_lengths;
    std::size_t generation = 0;
    std::mt19937_64 rng;
};

inline constexpr double kMaxCondition = 1e14;

CMAESState cmaes_init(const CMAESConfig& cfg, std::uint64_t seed);

/// lambda candidates mean + sigma * C^{1/2} n_i.
std::vector<Weights> cmaes_ask(CMAESState& state);

/// Rank-based update; ties keep candidate order.
void cmaes_tell(CMAESState& state, const std::vector<Weights>& candidates, std::span<const double> fitnesses);

struct GenerationReport {
    std::size_t generation = 0;
    double best_fitness = 0.0;  // this generation
    double mean_fitness = 0.0;
    double best_so_far = 0.0;
    double sigma = 0.0;
};

struct MinimizeResult {
    Weights best;
    double best_fitness = 0.0;
    std::size_t evaluations = 0;
    std::vector<GenerationReport> generations;
    Weights final_mean;
};

using Objective = std::function<double(std::span<const double>)>;

/// max_iterations generations of ask/evaluate/tell, keeping the best-ever
/// candidate.
MinimizeResult minimize(const Objective& f, const CMAESConfig& cfg, std::uint64_t seed);

struct RLAResult {
    Weights alpha;
    double best_fitness = 0.0;
    std::size_t evaluations = 0;
    double wall_seconds = 0.0;
    std::vector<GenerationReport> generations;
};

RLAResult adapt_rla(const fx::ExtractorModel& base, const LoRAPool& pool, const sim::LabeledDataset& adapt,
                    const CMAESConfig& cfg, std::uint64_t seed);

}  // namespace rlarff::rla
