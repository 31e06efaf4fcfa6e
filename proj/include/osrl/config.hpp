#pragma once

#include "osrl/agents.hpp"
#include "osrl/core.hpp"
#include "osrl/eval.hpp"
#include "osrl/market.hpp"

#include <nlohmann/json.hpp>

#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace osrl::config {

/// Every problem found in a run config, reported together.
class ConfigError : public std::runtime_error {
public:
    explicit ConfigError(std::vector<std::string> problems);
    const std::vector<std::string>& problems() const { return problems_; }

private:
    std::vector<std::string> problems_;
};

enum class TaskKind : std::uint8_t { Gbm, Csv };

std::string_view to_string(TaskKind t);
TaskKind parse_task_kind(std::string_view s);

struct GbmSection {
    market::GbmParams params{.n_steps = 64};  // one episode per path under the default spec
    std::size_t training = 20000;
    std::size_t valid_hp = 2000;
    std::size_t valid_model = 2000;
    std::size_t test = 20000;

    bool operator==(const GbmSection&) const = default;
};

struct CsvSection {
    std::vector<std::filesystem::path> paths;
    market::SplitRule training;
    market::SplitRule valid_hp;
    market::SplitRule valid_model;
    market::SplitRule test;

    bool operator==(const CsvSection&) const = default;
};

struct TrainSection {
    std::size_t episodes = 6000;
    std::size_t max_epochs = 5;
    std::size_t eval_every = 500;
    std::size_t checkpoint_every = 0;
    std::size_t eval_episodes = 2000;  // Valid_HP episodes scored at each evaluation
    std::size_t seeds = 1;
    bool keep_best = true;
    bool shuffle = true;

    bool operator==(const TrainSection&) const = default;
};

struct EvalSection {
    std::vector<std::string> baselines = {"rand", "last", "first", "bt"};
    std::size_t stride = 1;
    std::size_t workers = 1;
    double rate = 0.05;
    double dt = 1.0 / 252.0;
    std::optional<double> sigma;  // empty: calibrate on each window
    std::size_t tree_substeps = 1;

    bool operator==(const EvalSection&) const = default;
};

struct RunConfig {
    TaskKind task = TaskKind::Gbm;
    PayoutSpec payout = default_payout();
    market::EpisodeOptions episode;
    GbmSection gbm;
    CsvSection csv;
    std::vector<agents::AgentConfig> agents;  // empty: task defaults for all three
    TrainSection train;
    EvalSection eval;
    std::uint64_t seed = 0;
    std::string outdir = "runs";
    std::string run_id = "run";

    static PayoutSpec default_payout();

    agents::Task agent_task() const { return task == TaskKind::Gbm ? agents::Task::Gbm : agents::Task::Stock; }

    // Agents to run: the configured list, or the three defaults for the task.
    std::vector<agents::AgentConfig> resolved_agents() const;

    // Throws ConfigError listing every violation, including missing files.
    void validate() const;

    bool operator==(const RunConfig&) const = default;
};

nlohmann::json to_json(const RunConfig& cfg);

// Missing keys keep their defaults; unknown keys are errors. Relative csv
// paths resolve against `base`. Does not check that files exist.
RunConfig run_config_from_json(const nlohmann::json& j, const std::filesystem::path& base = {});

// Parses, resolves and validates a config file.
RunConfig load_run_config(const std::filesystem::path& path);

eval::ProtocolData load_data(const RunConfig& cfg);
eval::ProtocolOptions protocol_options(const RunConfig& cfg);
agents::TrainOptions train_options(const RunConfig& cfg);

}  // namespace osrl::config
