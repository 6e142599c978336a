#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "datesort/neuralmodel.hpp"

namespace datesort {

// ---------------------------------------------------------------------------
// Genome and configuration
// ---------------------------------------------------------------------------

inline constexpr std::array<int, 4> kBatchChoices = {8, 16, 32, 64};
inline constexpr std::array<int, 3> kFilterChoices = {4, 8, 16};
inline constexpr std::array<int, 3> kDenseChoices = {32, 64, 128};
inline constexpr double kLogLrMin = -4.0;
inline constexpr double kLogLrMax = -1.0;
inline constexpr int kConvBlocksMin = 1;
inline constexpr int kConvBlocksMax = 3;

// One GA individual: training hyperparameters plus the 46-bit feature mask.
struct Genome {
    double log_lr = -2.0;  // log10 of the learning rate, in [-4, -1]
    int batch_size = 16;   // one of kBatchChoices
    int conv_blocks = 2;   // 1..3
    int filters_base = 8;  // one of kFilterChoices; filters double per block
    int dense_width = 64;  // one of kDenseChoices
    std::array<std::uint8_t, kFeatureCount> feature_mask = [] {
        std::array<std::uint8_t, kFeatureCount> m{};
        m.fill(1);
        return m;
    }();

    bool operator==(const Genome&) const = default;
};

// Throws ValidationError when a gene leaves its domain or the mask is
// all-zero.
void validate_genome(const Genome& genome);

// Compact stable text form (used as the memoization key and in reports).
std::string genome_key(const Genome& genome);

struct GAConfig {
    int population_size = 8;
    int generations = 5;
    int tournament_size = 3;
    double crossover_rate = 0.9;
    double mutation_rate = 0.05;  // per gene / per mask bit
    int elitism_count = 1;
    int cv_folds = 3;
    // Template for genome-built model configs: the genome overwrites the
    // architecture, learning rate, batch size, and feature mask; everything
    // else (input dims, epochs, augmentation, seed) comes from here.
    ModelConfig model_template;
    std::uint64_t seed = 1;
};

void validate_ga_config(const GAConfig& config);

struct GAReport {
    std::vector<double> best_fitness;       // per generation
    std::vector<double> mean_fitness;       // per generation
    std::vector<long long> generation_evaluations;  // cache misses per generation
    Genome best;
    double best_fitness_value = 0.0;
    long long evaluations = 0;  // total cache misses
};

// ---------------------------------------------------------------------------
// Operations
// ---------------------------------------------------------------------------

// Uniform draw over every gene domain; mask bits Bernoulli(0.5), resampled
// while all-zero.
Genome random_genome(std::uint64_t seed);

// Applies a genome to the template config (filters double per conv block,
// kernel 3).
ModelConfig genome_to_config(const Genome& genome, const ModelConfig& tmpl);

// One un-memoized fitness evaluation: k-fold CV mean variety accuracy of
// the genome's model on `dataset`.  Training failures (divergence,
// infeasible batch size, ...) score 0 with a warning on stderr.
double fitness(const Genome& genome, const std::vector<TrainSample>& dataset, int k,
               const ModelConfig& tmpl);

// Memoizing fitness evaluator bound to one (dataset, k, template) triple.
// The cache key combines the genome with the dataset content hash and k, so
// repeated genomes cost one training.
class FitnessCache {
public:
    FitnessCache(const std::vector<TrainSample>& dataset, int k, const ModelConfig& tmpl);

    double evaluate(const Genome& genome);
    long long evaluations() const { return evaluations_; }
    std::uint64_t dataset_hash() const { return dataset_hash_; }

private:
    const std::vector<TrainSample>& dataset_;
    int k_;
    ModelConfig tmpl_;
    std::uint64_t dataset_hash_ = 0;
    std::map<std::string, double> cache_;
    long long evaluations_ = 0;
};

// Elites (by fitness, ties to the lower index) are copied verbatim; the
// remaining slots come from tournament selection without replacement, then
// uniform crossover at crossover_rate (clone of the first parent
// otherwise), then per-gene mutation: numeric genes are resampled uniformly
// within their domain at mutation_rate, mask bits are resampled to
// Bernoulli(0.5) at mutation_rate.  A mutated-to-zero mask gets one random
// bit set back.
std::vector<Genome> evolve_generation(const std::vector<Genome>& population,
                                      const std::vector<double>& fitnesses, const GAConfig& config,
                                      std::uint64_t seed);

using FitnessFn = std::function<double(const Genome&)>;

// GA loop over an arbitrary (deterministic) fitness function, memoized by
// genome.  Used by tests with surrogate fitness and by run_ga with CV
// fitness.
GAReport run_ga_with_fitness(const GAConfig& config, const FitnessFn& fn);

// Full evolution with k-fold CV fitness on `dataset`.
GAReport run_ga(const std::vector<TrainSample>& dataset, const GAConfig& config);

// Writes ga_report.json and ga_generations.csv (generation, best, mean,
// evaluations) into `dir`.
void write_ga_report(const std::filesystem::path& dir, const GAReport& report);

}  // namespace datesort
