#pragma once

#include "osrl/agents.hpp"
#include "osrl/baselines.hpp"
#include "osrl/core.hpp"
#include "osrl/market.hpp"

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace osrl::eval {

struct Metric {
    double mean = 0.0;
    double ci90 = 0.0;  // 1.645 sd / sqrt(n)
};

// Mean and 90% half-width. A single sample gives ci90 = 0.
Metric summarize(std::span<const double> xs);

struct EvalReport {
    std::string label;
    std::size_t n_episodes = 0;
    Metric er;    // beta^tau g_tau
    Metric erop;  // return relative to the starting price
    Metric eor;   // (return - price) / price
    bool ci_degenerate = false;     // n = 1
    std::size_t eor_excluded = 0;   // episodes whose model price was below the floor
    std::vector<std::size_t> stopping_times;
};

struct EvalOptions {
    std::uint64_t seed = 0;  // drives Rand
    std::size_t workers = 1;
    double rate = 0.05;
    double dt = 1.0 / 252.0;
    double price_floor = 1e-6;
    // Known volatility for the EOR price; empty calibrates on the t = 0 window.
    std::optional<double> sigma;
};

// (payout - price) / price. Throws if price <= 0.
double option_return(double payout, double price);

// Return of the episode relative to its starting price.
double relative_return(const Episode& ep, std::size_t tau);

// Bermudan CRR price of the episode's option at t = 0, calibrated on the
// trailing window. Zero when the calibration is degenerate.
double episode_price(const Episode& ep, const EvalOptions& opts);

// Best discounted return over all stopping days of the episode.
double clairvoyant_return(const Episode& ep);

// Throws on an empty episode set.
EvalReport evaluate(StoppingPolicy& policy, std::span<const Episode> episodes, const EvalOptions& opts = {});

/// Inputs of the four-stage experiment.
struct ProtocolData {
    market::Dataset training;
    market::Dataset valid_hp;
    market::Dataset valid_model;
    market::Dataset test;
};

// Leak guard: throws if two splits share a trajectory id with overlapping dates
// (or any shared id when dates are absent).
void check_disjoint(const ProtocolData& data);

struct ProtocolOptions {
    PayoutSpec spec;
    market::EpisodeOptions episode;
    // Hyperparameter candidates; several entries may share an algorithm.
    std::vector<agents::AgentConfig> candidates;
    std::size_t seeds = 1;  // training seeds per candidate, selected on Valid_HP
    agents::TrainOptions train;
    std::vector<std::string> baselines = {"rand", "last", "first", "bt"};
    baselines::BinomialTreePolicy::Params tree;
    EvalOptions eval;
    std::size_t stride = 1;  // start stride when enumerating evaluation episodes
    // Valid_HP episodes used for periodic evaluation during training (0: none).
    std::size_t train_eval_episodes = 0;
    std::uint64_t seed = 0;
    std::function<void(const std::string&)> progress;
};

struct Candidate {
    agents::Algorithm algorithm = agents::Algorithm::Ddqn;
    std::size_t index = 0;  // position in ProtocolOptions::candidates
    std::uint64_t seed = 0;
    double valid_hp_er = 0.0;
    double train_seconds = 0.0;
};

struct SplitResult {
    market::Split split = market::Split::Training;
    std::vector<EvalReport> reports;  // column order: DDQN, C51, IQN, Rand, Last, First, B.M.
};

struct ProtocolReport {
    std::vector<Candidate> candidates;
    std::vector<SplitResult> splits;  // Training, Valid_HP, Valid_Model, Test
    std::optional<agents::Algorithm> selected;
    std::vector<std::unique_ptr<agents::Agent>> agents;  // best agent per algorithm, declared order
};

// Highest score wins; exact ties go to the earlier algorithm in DDQN, C51, IQN order.
std::optional<agents::Algorithm> select_model(std::span<const std::pair<agents::Algorithm, double>> scores);

ProtocolReport run_protocol(const ProtocolData& data, const ProtocolOptions& opts);

// Column rank of a policy label in the published tables.
int column_rank(const std::string& label);

void write_report_csv(const std::vector<SplitResult>& splits, std::ostream& out);
void write_report_table(const std::vector<SplitResult>& splits, std::ostream& out,
                        const std::optional<std::string>& selected = std::nullopt);

}  // namespace osrl::eval
