#include "datesort/evolver.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <numeric>

#include "datesort/rng.hpp"
#include "json.hpp"

namespace datesort {

namespace {

template <typename T, std::size_t N>
bool one_of(T value, const std::array<T, N>& choices) {
    return std::find(choices.begin(), choices.end(), value) != choices.end();
}

constexpr std::uint64_t kFnvBasis = 14695981039346656037ULL;
constexpr std::uint64_t kFnvPrime = 1099511628211ULL;

void fnv_bytes(std::uint64_t& h, const void* data, std::size_t size) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < size; ++i) {
        h ^= p[i];
        h *= kFnvPrime;
    }
}

void fnv_double(std::uint64_t& h, double value) {
    std::uint64_t bits = 0;
    std::memcpy(&bits, &value, sizeof(bits));
    fnv_bytes(h, &bits, sizeof(bits));
}

void fnv_int(std::uint64_t& h, std::int64_t value) { fnv_bytes(h, &value, sizeof(value)); }

std::uint64_t hash_dataset(const std::vector<TrainSample>& dataset) {
    std::uint64_t h = kFnvBasis;
    fnv_int(h, static_cast<std::int64_t>(dataset.size()));
    for (const TrainSample& s : dataset) {
        fnv_int(h, s.image.width);
        fnv_int(h, s.image.height);
        for (double v : s.image.data) fnv_double(h, v);
        for (double v : s.features.values) fnv_double(h, v);
        fnv_int(h, static_cast<std::int64_t>(s.variety));
        fnv_int(h, s.spoiled ? 1 : 0);
        fnv_double(h, s.shelf_days);
    }
    return h;
}

// Selection without replacement: partially shuffles an index pool and takes
// the fittest of the first tournament_size entries (ties to the lower
// index).
int tournament_select(const std::vector<double>& fitnesses, int tournament_size, Rng& rng,
                      std::vector<int>& pool) {
    const int n = static_cast<int>(fitnesses.size());
    pool.resize(static_cast<std::size_t>(n));
    std::iota(pool.begin(), pool.end(), 0);
    int winner = -1;
    for (int i = 0; i < tournament_size; ++i) {
        const int j = i + static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(n - i)));
        std::swap(pool[static_cast<std::size_t>(i)], pool[static_cast<std::size_t>(j)]);
        const int cand = pool[static_cast<std::size_t>(i)];
        if (winner < 0 || fitnesses[static_cast<std::size_t>(cand)] >
                              fitnesses[static_cast<std::size_t>(winner)] ||
            (fitnesses[static_cast<std::size_t>(cand)] ==
                 fitnesses[static_cast<std::size_t>(winner)] &&
             cand < winner)) {
            winner = cand;
        }
    }
    return winner;
}

std::string format_double(double value) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.10g", value);
    return buf;
}

void write_text_file(const std::filesystem::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot open for writing: " + path.string());
    out << text;
}

nlohmann::ordered_json genome_to_json(const Genome& g) {
    std::string mask(kFeatureCount, '0');
    for (std::size_t i = 0; i < kFeatureCount; ++i)
        if (g.feature_mask[i]) mask[i] = '1';
    nlohmann::ordered_json j;
    j["log_lr"] = g.log_lr;
    j["batch_size"] = g.batch_size;
    j["conv_blocks"] = g.conv_blocks;
    j["filters_base"] = g.filters_base;
    j["dense_width"] = g.dense_width;
    j["feature_mask"] = mask;
    return j;
}

}  // namespace

void validate_genome(const Genome& genome) {
    if (!std::isfinite(genome.log_lr) || genome.log_lr < kLogLrMin || genome.log_lr > kLogLrMax)
        throw ValidationError("genome log learning rate outside [-4, -1]");
    if (!one_of(genome.batch_size, kBatchChoices))
        throw ValidationError("genome batch size not one of 8/16/32/64");
    if (genome.conv_blocks < kConvBlocksMin || genome.conv_blocks > kConvBlocksMax)
        throw ValidationError("genome conv block count outside 1..3");
    if (!one_of(genome.filters_base, kFilterChoices))
        throw ValidationError("genome filter base not one of 4/8/16");
    if (!one_of(genome.dense_width, kDenseChoices))
        throw ValidationError("genome dense width not one of 32/64/128");
    bool any = false;
    for (std::uint8_t bit : genome.feature_mask) {
        if (bit > 1) throw ValidationError("genome feature mask entries must be 0 or 1");
        any = any || bit == 1;
    }
    if (!any) throw ValidationError("genome feature mask must keep at least one slot");
}

std::string genome_key(const Genome& genome) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", genome.log_lr);
    std::string key = buf;
    key += '|';
    key += std::to_string(genome.batch_size);
    key += '|';
    key += std::to_string(genome.conv_blocks);
    key += '|';
    key += std::to_string(genome.filters_base);
    key += '|';
    key += std::to_string(genome.dense_width);
    key += '|';
    for (std::uint8_t bit : genome.feature_mask) key += bit ? '1' : '0';
    return key;
}

Genome random_genome(std::uint64_t seed) {
    Rng rng(seed);
    Genome g;
    g.log_lr = rng.uniform(kLogLrMin, kLogLrMax);
    g.batch_size = kBatchChoices[rng.uniform_int(kBatchChoices.size())];
    g.conv_blocks = kConvBlocksMin +
                    static_cast<int>(rng.uniform_int(kConvBlocksMax - kConvBlocksMin + 1));
    g.filters_base = kFilterChoices[rng.uniform_int(kFilterChoices.size())];
    g.dense_width = kDenseChoices[rng.uniform_int(kDenseChoices.size())];
    while (true) {
        bool any = false;
        for (auto& bit : g.feature_mask) {
            bit = rng.bernoulli(0.5) ? 1 : 0;
            any = any || bit == 1;
        }
        if (any) break;
    }
    return g;
}

ModelConfig genome_to_config(const Genome& genome, const ModelConfig& tmpl) {
    validate_genome(genome);
    ModelConfig cfg = tmpl;
    cfg.learning_rate = std::pow(10.0, genome.log_lr);
    cfg.batch_size = genome.batch_size;
    cfg.conv_blocks.clear();
    for (int i = 0; i < genome.conv_blocks; ++i)
        cfg.conv_blocks.push_back({genome.filters_base << i, 3});
    cfg.dense_widths = {genome.dense_width};
    cfg.feature_mask = genome.feature_mask;
    validate_config(cfg);
    return cfg;
}

double fitness(const Genome& genome, const std::vector<TrainSample>& dataset, int k,
               const ModelConfig& tmpl) {
    validate_genome(genome);
    try {
        const ModelConfig cfg = genome_to_config(genome, tmpl);
        return kfold_cv(dataset, cfg, k).mean_accuracy;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "warning: fitness evaluation failed (%s); scoring 0\n", e.what());
        return 0.0;
    }
}

FitnessCache::FitnessCache(const std::vector<TrainSample>& dataset, int k,
                           const ModelConfig& tmpl)
    : dataset_(dataset), k_(k), tmpl_(tmpl), dataset_hash_(hash_dataset(dataset)) {}

double FitnessCache::evaluate(const Genome& genome) {
    std::string key = genome_key(genome);
    key += '|';
    key += std::to_string(dataset_hash_);
    key += '|';
    key += std::to_string(k_);
    const auto it = cache_.find(key);
    if (it != cache_.end()) return it->second;
    const double value = fitness(genome, dataset_, k_, tmpl_);
    ++evaluations_;
    cache_.emplace(std::move(key), value);
    return value;
}

void validate_ga_config(const GAConfig& config) {
    if (config.population_size < 4) throw ValidationError("population size must be at least 4");
    if (config.generations < 1) throw ValidationError("generation count must be at least 1");
    if (config.tournament_size < 1 || config.tournament_size > config.population_size)
        throw ValidationError("tournament size must be in 1..population size");
    if (!std::isfinite(config.crossover_rate) || config.crossover_rate < 0.0 ||
        config.crossover_rate > 1.0)
        throw ValidationError("crossover rate must be in [0, 1]");
    if (!std::isfinite(config.mutation_rate) || config.mutation_rate < 0.0 ||
        config.mutation_rate > 1.0)
        throw ValidationError("mutation rate must be in [0, 1]");
    if (config.elitism_count < 0 || config.elitism_count >= config.population_size)
        throw ValidationError("elite count must be below the population size");
    if (config.cv_folds < 2) throw ValidationError("cross-validation needs at least 2 folds");
}

std::vector<Genome> evolve_generation(const std::vector<Genome>& population,
                                      const std::vector<double>& fitnesses, const GAConfig& config,
                                      std::uint64_t seed) {
    validate_ga_config(config);
    const std::size_t n = population.size();
    if (n != static_cast<std::size_t>(config.population_size))
        throw ValidationError("population does not match the configured size");
    if (fitnesses.size() != n)
        throw ValidationError("fitness list does not match the population");

    std::vector<int> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](int a, int b) { return fitnesses[static_cast<std::size_t>(a)] >
                                                fitnesses[static_cast<std::size_t>(b)]; });

    std::vector<Genome> next;
    next.reserve(n);
    for (int i = 0; i < config.elitism_count; ++i)
        next.push_back(population[static_cast<std::size_t>(order[static_cast<std::size_t>(i)])]);

    Rng rng(seed);
    std::vector<int> pool;
    while (next.size() < n) {
        const int pa = tournament_select(fitnesses, config.tournament_size, rng, pool);
        const int pb = tournament_select(fitnesses, config.tournament_size, rng, pool);
        const Genome& a = population[static_cast<std::size_t>(pa)];
        const Genome& b = population[static_cast<std::size_t>(pb)];

        Genome child;
        if (rng.bernoulli(config.crossover_rate)) {
            child.log_lr = rng.bernoulli(0.5) ? a.log_lr : b.log_lr;
            child.batch_size = rng.bernoulli(0.5) ? a.batch_size : b.batch_size;
            child.conv_blocks = rng.bernoulli(0.5) ? a.conv_blocks : b.conv_blocks;
            child.filters_base = rng.bernoulli(0.5) ? a.filters_base : b.filters_base;
            child.dense_width = rng.bernoulli(0.5) ? a.dense_width : b.dense_width;
            for (std::size_t i = 0; i < kFeatureCount; ++i)
                child.feature_mask[i] = rng.bernoulli(0.5) ? a.feature_mask[i] : b.feature_mask[i];
        } else {
            child = a;
        }

        if (rng.bernoulli(config.mutation_rate)) child.log_lr = rng.uniform(kLogLrMin, kLogLrMax);
        if (rng.bernoulli(config.mutation_rate))
            child.batch_size = kBatchChoices[rng.uniform_int(kBatchChoices.size())];
        if (rng.bernoulli(config.mutation_rate))
            child.conv_blocks = kConvBlocksMin +
                                static_cast<int>(rng.uniform_int(kConvBlocksMax - kConvBlocksMin + 1));
        if (rng.bernoulli(config.mutation_rate))
            child.filters_base = kFilterChoices[rng.uniform_int(kFilterChoices.size())];
        if (rng.bernoulli(config.mutation_rate))
            child.dense_width = kDenseChoices[rng.uniform_int(kDenseChoices.size())];
        for (auto& bit : child.feature_mask)
            if (rng.bernoulli(config.mutation_rate)) bit = rng.bernoulli(0.5) ? 1 : 0;

        bool any = false;
        for (std::uint8_t bit : child.feature_mask) any = any || bit == 1;
        if (!any) child.feature_mask[rng.uniform_int(kFeatureCount)] = 1;

        next.push_back(std::move(child));
    }
    return next;
}

GAReport run_ga_with_fitness(const GAConfig& config, const FitnessFn& fn) {
    validate_ga_config(config);
    if (!fn) throw ValidationError("missing fitness function");

    std::vector<Genome> population;
    population.reserve(static_cast<std::size_t>(config.population_size));
    const std::uint64_t pop_seed = derive_seed(config.seed, "population");
    for (int i = 0; i < config.population_size; ++i)
        population.push_back(random_genome(derive_seed(pop_seed, static_cast<std::uint64_t>(i))));

    std::map<std::string, double> memo;
    GAReport report;
    bool have_best = false;

    for (int gen = 0; gen < config.generations; ++gen) {
        long long misses = 0;
        std::vector<double> fitnesses(population.size(), 0.0);
        for (std::size_t i = 0; i < population.size(); ++i) {
            const std::string key = genome_key(population[i]);
            const auto it = memo.find(key);
            if (it != memo.end()) {
                fitnesses[i] = it->second;
            } else {
                fitnesses[i] = fn(population[i]);
                memo.emplace(key, fitnesses[i]);
                ++misses;
            }
        }

        std::size_t best_idx = 0;
        double sum = 0.0;
        for (std::size_t i = 0; i < fitnesses.size(); ++i) {
            sum += fitnesses[i];
            if (fitnesses[i] > fitnesses[best_idx]) best_idx = i;
        }
        report.best_fitness.push_back(fitnesses[best_idx]);
        report.mean_fitness.push_back(sum / static_cast<double>(fitnesses.size()));
        report.generation_evaluations.push_back(misses);
        report.evaluations += misses;
        if (!have_best || fitnesses[best_idx] > report.best_fitness_value) {
            report.best = population[best_idx];
            report.best_fitness_value = fitnesses[best_idx];
            have_best = true;
        }

        if (gen + 1 < config.generations) {
            population = evolve_generation(
                population, fitnesses, config,
                derive_seed(config.seed, "gen" + std::to_string(gen)));
        }
    }
    return report;
}

GAReport run_ga(const std::vector<TrainSample>& dataset, const GAConfig& config) {
    FitnessCache cache(dataset, config.cv_folds, config.model_template);
    return run_ga_with_fitness(config, [&cache](const Genome& g) { return cache.evaluate(g); });
}

void write_ga_report(const std::filesystem::path& dir, const GAReport& report) {
    std::filesystem::create_directories(dir);

    nlohmann::ordered_json j;
    j["layout"] = "dsga1";
    j["generations"] = report.best_fitness.size();
    j["evaluations"] = report.evaluations;
    j["best_fitness"] = report.best_fitness_value;
    j["best_genome"] = genome_to_json(report.best);
    j["generation_best"] = report.best_fitness;
    j["generation_mean"] = report.mean_fitness;
    j["generation_evaluations"] = report.generation_evaluations;
    write_text_file(dir / "ga_report.json", j.dump(2) + "\n");

    std::string csv = "generation,best,mean,evaluations\n";
    for (std::size_t g = 0; g < report.best_fitness.size(); ++g) {
        csv += std::to_string(g);
        csv += ',';
        csv += format_double(report.best_fitness[g]);
        csv += ',';
        csv += format_double(report.mean_fitness[g]);
        csv += ',';
        csv += std::to_string(report.generation_evaluations[g]);
        csv += '\n';
    }
    write_text_file(dir / "ga_generations.csv", csv);
}

}  // namespace datesort
