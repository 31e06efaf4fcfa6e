// osrl: command-line front end for simulation, training, evaluation and pricing.

#include "osrl/agents.hpp"
#include "osrl/baselines.hpp"
#include "osrl/config.hpp"
#include "osrl/eval.hpp"
#include "osrl/market.hpp"

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

namespace fs = std::filesystem;
using namespace osrl;

namespace {

// Errors the user can fix; exit code 1.
struct UserError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct Globals {
    std::optional<std::uint64_t> seed;
    std::optional<std::size_t> workers;
    std::optional<std::string> outdir;
    std::optional<std::string> run_id;
};

config::RunConfig resolve(const std::string& path, const Globals& g)
{
    config::RunConfig cfg = path.empty() ? config::RunConfig{} : config::load_run_config(path);
    if (g.seed) cfg.seed = *g.seed;
    if (g.workers) cfg.eval.workers = *g.workers;
    if (g.outdir) cfg.outdir = *g.outdir;
    if (g.run_id) cfg.run_id = *g.run_id;
    cfg.validate();
    return cfg;
}

fs::path output_dir(const config::RunConfig& cfg, const char* kind)
{
    fs::path dir = fs::path(cfg.outdir) / kind / cfg.run_id;
    fs::create_directories(dir);
    return dir;
}

void write_text(const fs::path& path, const std::string& text)
{
    std::ofstream out(path, std::ios::binary);
    if (!out) throw UserError("cannot write " + path.string());
    out << text;
}

void write_json(const fs::path& path, const nlohmann::json& j)
{
    write_text(path, j.dump(1) + "\n");
}

std::vector<std::string> split_list(const std::string& s)
{
    std::vector<std::string> out;
    std::stringstream in(s);
    for (std::string item; std::getline(in, item, ',');) {
        if (!item.empty()) out.push_back(item);
    }
    return out;
}

const market::Dataset& pick(const eval::ProtocolData& data, market::Split split)
{
    switch (split) {
    case market::Split::Training: return data.training;
    case market::Split::ValidHP: return data.valid_hp;
    case market::Split::ValidModel: return data.valid_model;
    case market::Split::Test: return data.test;
    }
    throw std::logic_error("unreachable split");
}


// ---------------------------------------------------------------- simulate

struct SimulateArgs {
    std::size_t paths = 1;
    market::GbmParams gbm{.n_steps = 64};
    std::string split = "test";
    std::string out;
};

int cmd_simulate(const SimulateArgs& a, const Globals& g)
{
    const auto ds = market::simulate_dataset(a.gbm, a.paths, market::parse_split(a.split), g.seed.value_or(0));
    if (fs::path(a.out).has_parent_path()) fs::create_directories(fs::path(a.out).parent_path());
    market::write_csv(ds, a.out);

    std::vector<double> terminal;
    for (const auto& t : ds.trajectories) terminal.push_back(t.prices.back());
    const auto m = eval::summarize(terminal);
    const double horizon = static_cast<double>(a.gbm.n_steps) * a.gbm.dt;
    const double se = m.ci90 / 1.645;
    std::cout << std::setprecision(8) << "paths " << a.paths << ", steps " << a.gbm.n_steps << "\n"
              << "terminal mean " << m.mean << " (se " << se << ")\n"
              << "risk-neutral forward " << a.gbm.s0 * std::exp(a.gbm.rate * horizon) << "\n"
              << "wrote " << a.out << "\n";
    return 0;
}

// ---------------------------------------------------------------- train

struct TrainArgs {
    std::string config;
    std::string algorithm = "ddqn";
    std::optional<std::size_t> episodes;
};

int cmd_train(const TrainArgs& a, const Globals& g)
{
    auto cfg = resolve(a.config, g);
    if (a.episodes) cfg.train.episodes = *a.episodes;
    const auto algo = agents::parse_algorithm(a.algorithm);

    const auto candidates = cfg.resolved_agents();
    std::size_t index = 0;
    while (index < candidates.size() && candidates[index].algorithm != algo) ++index;
    const agents::AgentConfig acfg =
        index < candidates.size() ? candidates[index] : agents::AgentConfig::defaults(algo, cfg.agent_task());

    const auto data = config::load_data(cfg);
    eval::check_disjoint(data);
    auto eval_set = market::enumerate_episodes(data.valid_hp, cfg.payout, cfg.eval.stride, cfg.episode);
    eval_set.resize(std::min(eval_set.size(), cfg.train.eval_episodes));

    // Same seed the protocol gives the first seed of this candidate.
    const std::uint64_t seed = derive_seed(cfg.seed, 100000 + 1000 * index);
    auto agent = agents::make_agent(acfg, cfg.payout, seed);

    const auto ckpt_dir = output_dir(cfg, "checkpoints");
    const auto log_dir = output_dir(cfg, "logs");
    const std::string name(agents::to_string(algo));

    auto opts = config::train_options(cfg);
    opts.on_checkpoint = [&](std::size_t episode, const agents::Agent& ag) {
        write_json(ckpt_dir / (name + "_ep" + std::to_string(episode) + ".json"), ag.checkpoint());
    };
    const auto result = agents::train(*agent, data.training, opts, seed, eval_set);

    write_json(ckpt_dir / (name + ".json"), agent->checkpoint());
    std::ostringstream log;
    agents::write_train_log(result.log, log);
    write_text(log_dir / (name + "_train.csv"), log.str());
    write_json(log_dir / "config.json", config::to_json(cfg));

    std::cout << agent->label() << ": " << result.episodes << " episodes, " << agent->updates() << " updates\n";
    if (result.best_episode) {
        std::cout << std::setprecision(8) << "best valid_hp ER " << result.best_eval_er << " at episode "
                  << *result.best_episode << "\n";
    }
    std::cout << "checkpoint " << (ckpt_dir / (name + ".json")).string() << "\n";
    return 0;
}

// ---------------------------------------------------------------- evaluate

struct EvaluateArgs {
    std::string config;
    std::string split = "test";
    std::string policies = "rand,last,first,bt";
    std::vector<std::string> checkpoints;
};

std::unique_ptr<agents::Agent> load_agent(const fs::path& path, const config::RunConfig& cfg)
{
    std::ifstream in(path);
    if (!in) throw UserError("cannot open checkpoint " + path.string());
    nlohmann::json doc;
    try {
        doc = nlohmann::json::parse(in);
        const auto acfg = agents::agent_config_from_json(doc.at("meta").at("config"), cfg.agent_task());
        auto agent = agents::make_agent(acfg, cfg.payout, 0);
        agent->load(doc);
        return agent;
    } catch (const std::exception& e) {
        throw UserError("checkpoint " + path.string() + ": " + e.what());
    }
}

int cmd_evaluate(const EvaluateArgs& a, const Globals& g)
{
    const auto cfg = resolve(a.config, g);
    const auto split = market::parse_split(a.split);

    std::map<agents::Algorithm, std::unique_ptr<agents::Agent>> loaded;
    for (const auto& path : a.checkpoints) {
        auto agent = load_agent(path, cfg);
        const auto algo = agent->config().algorithm;
        loaded[algo] = std::move(agent);
    }

    std::vector<std::unique_ptr<StoppingPolicy>> owned;
    std::vector<StoppingPolicy*> policies;
    const baselines::BinomialTreePolicy::Params tree{cfg.eval.sigma, cfg.eval.rate, cfg.eval.dt,
                                                     cfg.eval.tree_substeps};
    for (const auto& name : split_list(a.policies)) {
        if (name == "ddqn" || name == "c51" || name == "iqn") {
            const auto it = loaded.find(agents::parse_algorithm(name));
            if (it == loaded.end()) throw UserError("policy " + name + " needs a --checkpoint of that algorithm");
            policies.push_back(it->second.get());
        } else {
            owned.push_back(baselines::make_baseline(name, tree));
            policies.push_back(owned.back().get());
        }
    }
    if (policies.empty()) throw UserError("no policy to evaluate");

    const auto data = config::load_data(cfg);
    const auto episodes = market::enumerate_episodes(pick(data, split), cfg.payout, cfg.eval.stride, cfg.episode);
    if (episodes.empty()) throw UserError("split " + a.split + " admits no episode");

    eval::SplitResult result;
    result.split = split;
    for (auto* p : policies) {
        eval::EvalOptions e;
        e.seed = derive_seed(cfg.seed, 1000 + result.reports.size());
        e.workers = cfg.eval.workers;
        e.rate = cfg.eval.rate;
        e.dt = cfg.eval.dt;
        e.sigma = cfg.eval.sigma;
        result.reports.push_back(eval::evaluate(*p, episodes, e));
    }
    std::stable_sort(result.reports.begin(), result.reports.end(), [](const auto& x, const auto& y) {
        return eval::column_rank(x.label) < eval::column_rank(y.label);
    });

    const std::vector<eval::SplitResult> splits{result};
    std::ostringstream csv, table;
    eval::write_report_csv(splits, csv);
    eval::write_report_table(splits, table);
    const auto dir = output_dir(cfg, "reports");
    write_text(dir / ("evaluate_" + a.split + ".csv"), csv.str());
    write_text(dir / ("evaluate_" + a.split + ".txt"), table.str());
    std::cout << table.str();
    return 0;
}

// ---------------------------------------------------------------- protocol

struct ProtocolArgs {
    std::string config;
    bool dry_run = false;
};

void print_plan(const config::RunConfig& cfg)
{
    std::cout << "resolved config:\n" << config::to_json(cfg).dump(2) << "\n\nplan:\n";
    if (cfg.task == config::TaskKind::Gbm) {
        std::cout << "  data: GBM paths training " << cfg.gbm.training << ", valid_hp " << cfg.gbm.valid_hp
                  << ", valid_model " << cfg.gbm.valid_model << ", test " << cfg.gbm.test << "\n";
    } else {
        std::cout << "  data: " << cfg.csv.paths.size() << " csv file(s)\n";
    }
    for (const auto& a : cfg.resolved_agents()) {
        std::cout << "  train " << agents::to_string(a.algorithm) << " x" << cfg.train.seeds << " seed(s), "
                  << cfg.train.episodes << " episodes, lr " << a.learning_rate << ", batch " << a.batch_size
                  << ", C " << a.capacity << ", U " << a.sync_every << ", " << agents::to_string(a.sync) << " sync\n";
    }
    std::cout << "  baselines:";
    for (const auto& b : cfg.eval.baselines) std::cout << ' ' << b;
    std::cout << "\n  outputs: " << (fs::path(cfg.outdir) / "{checkpoints,logs,reports}" / cfg.run_id).string()
              << "\n";
}

int cmd_protocol(const ProtocolArgs& a, const Globals& g)
{
    const auto cfg = resolve(a.config, g);
    if (a.dry_run) {
        print_plan(cfg);
        return 0;
    }

    const auto start = std::chrono::steady_clock::now();
    auto opts = config::protocol_options(cfg);
    opts.progress = [&](const std::string& msg) {
        const double s = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        std::cerr << "[" << std::fixed << std::setprecision(1) << s << "s] " << msg << std::endl;
    };
    const auto data = config::load_data(cfg);
    const auto report = eval::run_protocol(data, opts);

    const auto reports = output_dir(cfg, "reports");
    const auto logs = output_dir(cfg, "logs");
    const auto ckpts = output_dir(cfg, "checkpoints");

    std::optional<std::string> selected;
    if (report.selected) selected = std::string(agents::to_string(*report.selected));
    std::ostringstream csv, table, cands, timings;
    eval::write_report_csv(report.splits, csv);
    eval::write_report_table(report.splits, table, selected);
    cands << "algorithm,candidate,seed,valid_hp_er\n" << std::setprecision(10);
    timings << "algorithm,candidate,seed,train_seconds\n";
    for (const auto& c : report.candidates) {
        cands << agents::to_string(c.algorithm) << ',' << c.index << ',' << c.seed << ',' << c.valid_hp_er << '\n';
        timings << agents::to_string(c.algorithm) << ',' << c.index << ',' << c.seed << ',' << c.train_seconds << '\n';
    }
    write_text(reports / "protocol.csv", csv.str());
    write_text(reports / "protocol.txt", table.str());
    write_text(reports / "candidates.csv", cands.str());
    write_text(logs / "timings.csv", timings.str());
    write_json(logs / "config.json", config::to_json(cfg));
    for (const auto& agent : report.agents) {
        write_json(ckpts / (std::string(agents::to_string(agent->config().algorithm)) + ".json"), agent->checkpoint());
    }
    std::cout << table.str();
    return 0;
}

// ---------------------------------------------------------------- price-bt

struct PriceArgs {
    baselines::TreeSpec tree;
    std::string type = "put";
    std::string style = "bermudan";
};

int cmd_price(PriceArgs a)
{
    if (a.type == "put") {
        a.tree.type = baselines::OptionType::Put;
    } else if (a.type == "call") {
        a.tree.type = baselines::OptionType::Call;
    } else {
        throw UserError("--type must be put or call");
    }
    if (a.style == "bermudan") {
        a.tree.style = baselines::ExerciseStyle::Bermudan;
    } else if (a.style == "european") {
        a.tree.style = baselines::ExerciseStyle::European;
    } else {
        throw UserError("--style must be bermudan or european");
    }
    const auto r = baselines::crr_price(a.tree);
    const double t = static_cast<double>(a.tree.steps) * a.tree.dt;
    const double bs = a.tree.type == baselines::OptionType::Put
                          ? baselines::bs_european_put(a.tree.s0, a.tree.strike, a.tree.rate, a.tree.sigma, t)
                          : baselines::bs_european_call(a.tree.s0, a.tree.strike, a.tree.rate, a.tree.sigma, t);
    std::cout << std::setprecision(12) << "crr " << a.style << ' ' << a.type << ' ' << r.price << "\n"
              << "black-scholes european " << a.type << ' ' << bs << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv)
{
    CLI::App app{"Optimal stopping with deep reinforcement learning"};
    app.require_subcommand(1);
    app.fallthrough();

    Globals g;
    app.add_option("--seed", g.seed, "Master seed (overrides the config)");
    app.add_option("--workers", g.workers, "Evaluation threads")->check(CLI::PositiveNumber);
    app.add_option("--outdir", g.outdir, "Output root (overrides the config)");
    app.add_option("--run-id", g.run_id, "Run subdirectory name (overrides the config)");

    SimulateArgs sim;
    auto* simulate = app.add_subcommand("simulate", "Write GBM trajectories to CSV");
    simulate->add_option("--paths", sim.paths, "Number of paths")->capture_default_str();
    simulate->add_option("--steps", sim.gbm.n_steps, "Steps per path")->capture_default_str();
    simulate->add_option("--s0", sim.gbm.s0)->capture_default_str();
    simulate->add_option("--rate", sim.gbm.rate)->capture_default_str();
    simulate->add_option("--sigma", sim.gbm.sigma)->capture_default_str();
    simulate->add_option("--dt", sim.gbm.dt)->capture_default_str();
    simulate->add_option("--split", sim.split, "Split tag used in trajectory ids")->capture_default_str();
    simulate->add_option("--out", sim.out, "Output CSV")->required();

    TrainArgs tr;
    auto* train = app.add_subcommand("train", "Train one agent; writes a checkpoint and a training log");
    train->add_option("--config", tr.config, "Run config (JSON)")->check(CLI::ExistingFile);
    train->add_option("--algorithm", tr.algorithm, "ddqn, c51 or iqn")->capture_default_str();
    train->add_option("--episodes", tr.episodes, "Training episodes (overrides the config)");

    EvaluateArgs ev;
    auto* evaluate = app.add_subcommand("evaluate", "Evaluate policies on one split");
    evaluate->add_option("--config", ev.config, "Run config (JSON)")->check(CLI::ExistingFile);
    evaluate->add_option("--split", ev.split, "training, valid_hp, valid_model or test")->capture_default_str();
    evaluate->add_option("--policies", ev.policies, "Comma list of ddqn,c51,iqn,rand,first,last,bt")
        ->capture_default_str();
    evaluate->add_option("--checkpoint", ev.checkpoints, "Agent checkpoint (repeatable)")->check(CLI::ExistingFile);

    ProtocolArgs pr;
    auto* protocol = app.add_subcommand("protocol", "Train, select and report on all four splits");
    protocol->add_option("--config", pr.config, "Run config (JSON)")->check(CLI::ExistingFile);
    protocol->add_flag("--dry-run", pr.dry_run, "Print the resolved plan and exit");

    PriceArgs pa;
    auto* price = app.add_subcommand("price-bt", "Price an option on a CRR tree");
    price->add_option("--s0", pa.tree.s0)->capture_default_str();
    price->add_option("--strike", pa.tree.strike)->capture_default_str();
    price->add_option("--rate", pa.tree.rate)->capture_default_str();
    price->add_option("--sigma", pa.tree.sigma)->capture_default_str();
    price->add_option("--steps", pa.tree.steps)->capture_default_str();
    price->add_option("--dt", pa.tree.dt, "Years per step")->capture_default_str();
    price->add_option("--type", pa.type, "put or call")->capture_default_str();
    price->add_option("--style", pa.style, "bermudan or european")->capture_default_str();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? 0 : 1;
    }

    try {
        if (*simulate) return cmd_simulate(sim, g);
        if (*train) return cmd_train(tr, g);
        if (*evaluate) return cmd_evaluate(ev, g);
        if (*protocol) return cmd_protocol(pr, g);
        if (*price) return cmd_price(pa);
    } catch (const config::ConfigError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const UserError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const market::ParseError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::invalid_argument& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::domain_error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const fs::filesystem_error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "internal error: " << e.what() << "\n";
        return 2;
    }
    return 2;
}
