#include <catch_amalgamated.hpp>

#include "osrl/config.hpp"

#include <filesystem>
#include <fstream>

using namespace osrl;
using namespace osrl::config;
using nlohmann::json;

namespace {

bool mentions(const ConfigError& e, const std::string& text)
{
    for (const auto& p : e.problems()) {
        if (p.find(text) != std::string::npos) return true;
    }
    return false;
}

}  // namespace

TEST_CASE("run config defaults are valid and round trip", "[config]")
{
    RunConfig cfg;
    CHECK_NOTHROW(cfg.validate());
    CHECK(cfg.payout.discount == std::exp(-0.05 / 252));
    CHECK(cfg.resolved_agents().size() == 3);
    CHECK(run_config_from_json(to_json(cfg)) == cfg);
}

TEST_CASE("a populated run config round trips", "[config]")
{
    RunConfig cfg;
    cfg.task = TaskKind::Csv;
    cfg.csv.paths = {std::filesystem::path(OSRL_TEST_DATA) / "five_symbols.csv"};
    cfg.csv.training = {{"ALFA", "BRVO"}, "2015-01-02", "2015-08-31"};
    cfg.csv.test = {{}, "2016-01-01", ""};
    cfg.payout.kind = PayoutKind::RelativePut;
    cfg.episode.strike_at = market::StrikeAnchor::WarmupStart;
    cfg.episode.rescale = false;
    auto iqn = agents::AgentConfig::defaults(agents::Algorithm::Iqn, agents::Task::Stock);
    iqn.hidden = {32};
    cfg.agents = {iqn};
    cfg.train.episodes = 7;
    cfg.train.keep_best = false;
    cfg.eval.baselines = {"bt", "last"};
    cfg.eval.sigma = 0.3;
    cfg.seed = 12345678901234ULL;
    cfg.run_id = "fixture-1";

    const json j = to_json(cfg);
    const RunConfig back = run_config_from_json(j);
    CHECK(back == cfg);
    CHECK(to_json(back) == j);
    CHECK_NOTHROW(back.validate());
}

TEST_CASE("partial config keeps defaults", "[config]")
{
    const auto cfg = run_config_from_json(json::parse(R"({"seed": 3, "gbm": {"paths": {"test": 10}}})"));
    CHECK(cfg.seed == 3);
    CHECK(cfg.gbm.test == 10);
    CHECK(cfg.gbm.training == RunConfig{}.gbm.training);
    CHECK(cfg.gbm.params.n_steps == 64);
}

TEST_CASE("parse errors are collected", "[config]")
{
    const json j = json::parse(R"({
        "task": "bonds",
        "seed": -1,
        "payout": {"horizon": "long", "colour": 1},
        "eval": {"workers": 1.5},
        "agents": [{"algorithm": "sarsa"}]
    })");
    try {
        run_config_from_json(j);
        FAIL("expected ConfigError");
    } catch (const ConfigError& e) {
        CHECK(e.problems().size() == 6);
        CHECK(mentions(e, "task"));
        CHECK(mentions(e, "seed"));
        CHECK(mentions(e, "payout.horizon"));
        CHECK(mentions(e, "payout.colour: unknown key"));
        CHECK(mentions(e, "eval.workers"));
        CHECK(mentions(e, "agents[0]"));
    }
}

TEST_CASE("validation lists every failure and names missing files", "[config]")
{
    RunConfig cfg;
    cfg.task = TaskKind::Csv;
    cfg.csv.paths = {"/nonexistent/a.csv", std::filesystem::path(OSRL_TEST_DATA) / "five_symbols.csv",
                     "/nonexistent/b.csv"};
    cfg.eval.workers = 0;
    cfg.eval.baselines = {"last", "oracle"};
    cfg.run_id = "../escape";
    try {
        cfg.validate();
        FAIL("expected ConfigError");
    } catch (const ConfigError& e) {
        CHECK(e.problems().size() == 5);
        CHECK(mentions(e, "csv.paths[0]: file not found"));
        CHECK(mentions(e, "csv.paths[2]: file not found"));
        CHECK_FALSE(mentions(e, "csv.paths[1]"));
        CHECK(mentions(e, "eval.workers"));
        CHECK(mentions(e, "oracle"));
        CHECK(mentions(e, "run_id"));
    }

    RunConfig gbm;
    gbm.gbm.params.n_steps = 10;
    gbm.payout.discount = 1.5;
    try {
        gbm.validate();
        FAIL("expected ConfigError");
    } catch (const ConfigError& e) {
        CHECK(mentions(e, "gbm.steps"));
        CHECK(mentions(e, "payout.discount"));
    }
}

TEST_CASE("config file paths resolve against the file", "[config]")
{
    const auto dir = std::filesystem::temp_directory_path() / "osrl_config_test";
    std::filesystem::create_directories(dir);
    std::filesystem::copy_file(std::filesystem::path(OSRL_TEST_DATA) / "five_symbols.csv", dir / "prices.csv",
                               std::filesystem::copy_options::overwrite_existing);
    {
        std::ofstream out(dir / "run.json");
        out << R"({"task": "csv", "csv": {"paths": ["prices.csv"]}})";
    }
    const auto cfg = load_run_config(dir / "run.json");
    REQUIRE(cfg.csv.paths.size() == 1);
    CHECK(cfg.csv.paths[0] == dir / "prices.csv");
    CHECK(cfg.agent_task() == agents::Task::Stock);
    CHECK(cfg.resolved_agents()[2].sync == agents::SyncMode::Soft);

    {
        std::ofstream out(dir / "broken.json");
        out << "{\"task\": ";
    }
    CHECK_THROWS_AS(load_run_config(dir / "broken.json"), ConfigError);
    CHECK_THROWS_AS(load_run_config(dir / "absent.json"), ConfigError);
    std::filesystem::remove_all(dir);
}

TEST_CASE("load_data builds disjoint gbm splits", "[config]")
{
    RunConfig cfg;
    cfg.gbm.training = 5;
    cfg.gbm.valid_hp = 3;
    cfg.gbm.valid_model = 2;
    cfg.gbm.test = 4;
    const auto data = load_data(cfg);
    CHECK(data.training.trajectories.size() == 5);
    CHECK(data.test.trajectories.size() == 4);
    CHECK(data.test.split == market::Split::Test);
    CHECK(data.training.trajectories[0].size() == 65);
    CHECK_NOTHROW(eval::check_disjoint(data));
    CHECK(load_data(cfg).test.trajectories[3].prices == data.test.trajectories[3].prices);
}

TEST_CASE("load_data selects csv splits", "[config]")
{
    RunConfig cfg;
    cfg.task = TaskKind::Csv;
    cfg.csv.paths = {std::filesystem::path(OSRL_TEST_DATA) / "five_symbols.csv"};
    cfg.csv.training = {{"ALFA", "BRVO", "CHRL"}, "2015-01-02", "2015-08-31"};
    cfg.csv.valid_hp = {{"ALFA", "BRVO", "CHRL"}, "2015-09-01", "2015-12-31"};
    cfg.csv.valid_model = {{"DLTA", "ECHO"}, "2015-01-01", "2015-12-31"};
    cfg.csv.test = {{}, "2016-01-01", "2016-08-31"};
    const auto data = load_data(cfg);
    CHECK(data.training.trajectories.size() == 3);
    CHECK(data.valid_model.trajectories.size() == 2);
    CHECK(data.test.trajectories.size() == 5);
    CHECK_NOTHROW(eval::check_disjoint(data));

    cfg.csv.test.date_from = "2015-12-01";
    CHECK_THROWS_AS(eval::check_disjoint(load_data(cfg)), std::invalid_argument);
}

TEST_CASE("protocol options follow the config", "[config]")
{
    RunConfig cfg;
    cfg.eval.sigma = 0.2;
    cfg.eval.workers = 2;
    cfg.train.seeds = 3;
    cfg.seed = 9;
    const auto o = protocol_options(cfg);
    CHECK(o.candidates.size() == 3);
    CHECK(o.candidates[0] == agents::AgentConfig::defaults(agents::Algorithm::Ddqn, agents::Task::Gbm));
    CHECK(o.seeds == 3);
    CHECK(o.tree.known_sigma == 0.2);
    CHECK(o.eval.workers == 2);
    CHECK(o.seed == 9);
    CHECK(o.train.episodes == cfg.train.episodes);
    CHECK(o.train_eval_episodes == cfg.train.eval_episodes);
}
