#include "osrl/config.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

namespace osrl::config {

namespace {

using nlohmann::json;

std::string join_problems(const std::vector<std::string>& problems)
{
    std::ostringstream s;
    s << "invalid run config (" << problems.size() << (problems.size() == 1 ? " problem)" : " problems)");
    for (const auto& p : problems) s << "\n  " << p;
    return s.str();
}

// Reads keys into typed fields, collecting every type error.
class Reader {
public:
    explicit Reader(std::vector<std::string>& problems) : problems_(problems) {}

    bool object(const json& j, const std::string& where, std::initializer_list<const char*> keys)
    {
        if (!j.is_object()) {
            problems_.push_back(where + ": expected an object");
            return false;
        }
        for (const auto& [key, value] : j.items()) {
            if (std::none_of(keys.begin(), keys.end(), [&](const char* k) { return key == k; })) {
                problems_.push_back(where + "." + key + ": unknown key");
            }
        }
        return true;
    }

    template <class T>
    void field(const json& j, const char* key, T& out, const std::string& where)
    {
        const auto it = j.find(key);
        if (it == j.end()) return;
        const std::string name = where.empty() ? std::string(key) : where + "." + key;
        if constexpr (std::is_same_v<T, bool>) {
            if (!it->is_boolean()) return fail(name, "expected a boolean");
            out = it->template get<bool>();
        } else if constexpr (std::is_unsigned_v<T>) {
            if (!it->is_number_unsigned()) return fail(name, "expected a non-negative integer");
            out = it->template get<T>();
        } else if constexpr (std::is_floating_point_v<T>) {
            if (!it->is_number()) return fail(name, "expected a number");
            out = it->template get<T>();
        } else if constexpr (std::is_same_v<T, std::string>) {
            if (!it->is_string()) return fail(name, "expected a string");
            out = it->template get<std::string>();
        } else if constexpr (std::is_same_v<T, std::optional<double>>) {
            if (it->is_null()) {
                out.reset();
            } else if (it->is_number()) {
                out = it->template get<double>();
            } else {
                fail(name, "expected a number or null");
            }
        } else if constexpr (std::is_same_v<T, std::vector<std::string>>) {
            if (!it->is_array() || !std::all_of(it->begin(), it->end(), [](const json& e) { return e.is_string(); })) {
                return fail(name, "expected an array of strings");
            }
            out = it->template get<std::vector<std::string>>();
        } else {
            static_assert(sizeof(T) == 0, "unsupported field type");
        }
    }

    // Runs `parse` on a string field, recording its exception as a problem.
    template <class T, class F>
    void parsed(const json& j, const char* key, T& out, const std::string& where, F parse)
    {
        std::string text;
        const std::size_t before = problems_.size();
        field(j, key, text, where);
        if (problems_.size() != before || !j.contains(key)) return;
        try {
            out = parse(text);
        } catch (const std::exception& e) {
            fail(where.empty() ? std::string(key) : where + "." + key, e.what());
        }
    }

    void fail(const std::string& name, const std::string& what) { problems_.push_back(name + ": " + what); }

private:
    std::vector<std::string>& problems_;
};

json rule_to_json(const market::SplitRule& r)
{
    return {{"symbols", r.symbols}, {"from", r.date_from}, {"to", r.date_to}};
}

void rule_from_json(Reader& rd, const json& j, market::SplitRule& r, const std::string& where)
{
    if (!rd.object(j, where, {"symbols", "from", "to"})) return;
    rd.field(j, "symbols", r.symbols, where);
    rd.field(j, "from", r.date_from, where);
    rd.field(j, "to", r.date_to, where);
}

bool filename_safe(const std::string& s)
{
    if (s.empty() || s == "." || s == "..") return false;
    return std::all_of(s.begin(), s.end(), [](char c) {
        return std::isalnum(static_cast<unsigned char>(c)) || c == '-' || c == '_' || c == '.';
    });
}

}  // namespace

ConfigError::ConfigError(std::vector<std::string> problems)
    : std::runtime_error(join_problems(problems)), problems_(std::move(problems))
{
}

std::string_view to_string(TaskKind t)
{
    return t == TaskKind::Gbm ? "gbm" : "csv";
}

TaskKind parse_task_kind(std::string_view s)
{
    if (s == "gbm") return TaskKind::Gbm;
    if (s == "csv" || s == "stock") return TaskKind::Csv;
    throw std::invalid_argument("unknown task '" + std::string(s) + "' (expected gbm or csv)");
}

PayoutSpec RunConfig::default_payout()
{
    PayoutSpec spec;
    spec.discount = std::exp(-0.05 / 252.0);
    return spec;
}

std::vector<agents::AgentConfig> RunConfig::resolved_agents() const
{
    if (!agents.empty()) return agents;
    std::vector<agents::AgentConfig> out;
    for (auto a : {agents::Algorithm::Ddqn, agents::Algorithm::C51, agents::Algorithm::Iqn}) {
        out.push_back(agents::AgentConfig::defaults(a, agent_task()));
    }
    return out;
}

void RunConfig::validate() const
{
    std::vector<std::string> problems;
    const auto check = [&](bool ok, const std::string& name, const std::string& what) {
        if (!ok) problems.push_back(name + ": " + what);
    };
    const auto guarded = [&](const std::string& name, auto&& fn) {
        try {
            fn();
        } catch (const std::exception& e) {
            problems.push_back(name + ": " + e.what());
        }
    };

    guarded("payout", [&] { payout.validate(); });
    check(payout.discount > 0.0 && payout.discount <= 1.0, "payout.discount", "must lie in (0, 1]");

    if (task == TaskKind::Gbm) {
        guarded("gbm", [&] { gbm.params.validate(); });
        const std::size_t need = market::min_trajectory_length(payout);
        check(gbm.params.n_steps + 1 >= need, "gbm.steps",
              "must be at least " + std::to_string(need - 1) + " to hold one episode");
        check(gbm.training > 0, "gbm.paths.training", "must be positive");
        check(gbm.valid_hp > 0, "gbm.paths.valid_hp", "must be positive");
        check(gbm.valid_model > 0, "gbm.paths.valid_model", "must be positive");
        check(gbm.test > 0, "gbm.paths.test", "must be positive");
    } else {
        check(!csv.paths.empty(), "csv.paths", "at least one file is required");
        for (std::size_t i = 0; i < csv.paths.size(); ++i) {
            check(std::filesystem::is_regular_file(csv.paths[i]), "csv.paths[" + std::to_string(i) + "]",
                  "file not found: " + csv.paths[i].string());
        }
    }

    for (std::size_t i = 0; i < agents.size(); ++i) {
        guarded("agents[" + std::to_string(i) + "]", [&] { agents[i].validate(); });
    }

    check(train.max_epochs > 0, "train.max_epochs", "must be positive");
    check(train.seeds > 0, "train.seeds", "must be positive");

    const std::set<std::string> known{"rand", "first", "last", "bt"};
    std::set<std::string> seen;
    for (const auto& b : eval.baselines) {
        check(known.contains(b), "eval.baselines", "unknown baseline '" + b + "'");
        check(seen.insert(b).second, "eval.baselines", "duplicate baseline '" + b + "'");
    }
    check(eval.stride > 0, "eval.stride", "must be positive");
    check(eval.workers > 0, "eval.workers", "must be positive");
    check(std::isfinite(eval.rate), "eval.rate", "must be finite");
    check(eval.dt > 0.0 && std::isfinite(eval.dt), "eval.dt", "must be positive");
    check(!eval.sigma || (*eval.sigma > 0.0 && std::isfinite(*eval.sigma)), "eval.sigma", "must be positive");
    check(eval.tree_substeps > 0, "eval.tree_substeps", "must be positive");

    check(!outdir.empty(), "outdir", "must not be empty");
    check(filename_safe(run_id), "run_id", "must be a non-empty name of letters, digits, '-', '_' or '.'");

    if (!problems.empty()) throw ConfigError(std::move(problems));
}

nlohmann::json to_json(const RunConfig& cfg)
{
    json agents_j = json::array();
    for (const auto& a : cfg.agents) agents_j.push_back(agents::to_json(a));
    json paths = json::array();
    for (const auto& p : cfg.csv.paths) paths.push_back(p.string());

    return {
        {"task", to_string(cfg.task)},
        {"payout",
         {{"kind", to_string(cfg.payout.kind)},
          {"discount", cfg.payout.discount},
          {"horizon", cfg.payout.horizon},
          {"window", cfg.payout.window},
          {"warmup", cfg.payout.warmup},
          {"strike_at", market::to_string(cfg.episode.strike_at)},
          {"rescale", cfg.episode.rescale}}},
        {"gbm",
         {{"s0", cfg.gbm.params.s0},
          {"rate", cfg.gbm.params.rate},
          {"sigma", cfg.gbm.params.sigma},
          {"dt", cfg.gbm.params.dt},
          {"steps", cfg.gbm.params.n_steps},
          {"paths",
           {{"training", cfg.gbm.training},
            {"valid_hp", cfg.gbm.valid_hp},
            {"valid_model", cfg.gbm.valid_model},
            {"test", cfg.gbm.test}}}}},
        {"csv",
         {{"paths", paths},
          {"splits",
           {{"training", rule_to_json(cfg.csv.training)},
            {"valid_hp", rule_to_json(cfg.csv.valid_hp)},
            {"valid_model", rule_to_json(cfg.csv.valid_model)},
            {"test", rule_to_json(cfg.csv.test)}}}}},
        {"agents", agents_j},
        {"train",
         {{"episodes", cfg.train.episodes},
          {"max_epochs", cfg.train.max_epochs},
          {"eval_every", cfg.train.eval_every},
          {"checkpoint_every", cfg.train.checkpoint_every},
          {"eval_episodes", cfg.train.eval_episodes},
          {"seeds", cfg.train.seeds},
          {"keep_best", cfg.train.keep_best},
          {"shuffle", cfg.train.shuffle}}},
        {"eval",
         {{"baselines", cfg.eval.baselines},
          {"stride", cfg.eval.stride},
          {"workers", cfg.eval.workers},
          {"rate", cfg.eval.rate},
          {"dt", cfg.eval.dt},
          {"sigma", cfg.eval.sigma ? json(*cfg.eval.sigma) : json(nullptr)},
          {"tree_substeps", cfg.eval.tree_substeps}}},
        {"seed", cfg.seed},
        {"outdir", cfg.outdir},
        {"run_id", cfg.run_id},
    };
}

RunConfig run_config_from_json(const nlohmann::json& j, const std::filesystem::path& base)
{
    std::vector<std::string> problems;
    Reader rd(problems);
    RunConfig cfg;
    if (!rd.object(j, "config", {"task", "payout", "gbm", "csv", "agents", "train", "eval", "seed", "outdir", "run_id"})) {
        throw ConfigError(std::move(problems));
    }

    rd.parsed(j, "task", cfg.task, "", parse_task_kind);

    if (const auto it = j.find("payout"); it != j.end()) {
        const auto& p = *it;
        if (rd.object(p, "payout", {"kind", "discount", "horizon", "window", "warmup", "strike_at", "rescale"})) {
            rd.parsed(p, "kind", cfg.payout.kind, "payout", parse_payout_kind);
            rd.field(p, "discount", cfg.payout.discount, "payout");
            rd.field(p, "horizon", cfg.payout.horizon, "payout");
            rd.field(p, "window", cfg.payout.window, "payout");
            rd.field(p, "warmup", cfg.payout.warmup, "payout");
            rd.parsed(p, "strike_at", cfg.episode.strike_at, "payout", market::parse_strike_anchor);
            rd.field(p, "rescale", cfg.episode.rescale, "payout");
        }
    }

    if (const auto it = j.find("gbm"); it != j.end()) {
        const auto& g = *it;
        if (rd.object(g, "gbm", {"s0", "rate", "sigma", "dt", "steps", "paths"})) {
            rd.field(g, "s0", cfg.gbm.params.s0, "gbm");
            rd.field(g, "rate", cfg.gbm.params.rate, "gbm");
            rd.field(g, "sigma", cfg.gbm.params.sigma, "gbm");
            rd.field(g, "dt", cfg.gbm.params.dt, "gbm");
            rd.field(g, "steps", cfg.gbm.params.n_steps, "gbm");
            if (const auto pt = g.find("paths"); pt != g.end()) {
                if (rd.object(*pt, "gbm.paths", {"training", "valid_hp", "valid_model", "test"})) {
                    rd.field(*pt, "training", cfg.gbm.training, "gbm.paths");
                    rd.field(*pt, "valid_hp", cfg.gbm.valid_hp, "gbm.paths");
                    rd.field(*pt, "valid_model", cfg.gbm.valid_model, "gbm.paths");
                    rd.field(*pt, "test", cfg.gbm.test, "gbm.paths");
                }
            }
        }
    }

    if (const auto it = j.find("csv"); it != j.end()) {
        const auto& c = *it;
        if (rd.object(c, "csv", {"paths", "splits"})) {
            std::vector<std::string> paths;
            rd.field(c, "paths", paths, "csv");
            for (const auto& p : paths) {
                std::filesystem::path path(p);
                cfg.csv.paths.push_back(path.is_relative() && !base.empty() ? base / path : path);
            }
            if (const auto st = c.find("splits"); st != c.end()) {
                if (rd.object(*st, "csv.splits", {"training", "valid_hp", "valid_model", "test"})) {
                    const std::pair<const char*, market::SplitRule*> rules[] = {{"training", &cfg.csv.training},
                                                                                {"valid_hp", &cfg.csv.valid_hp},
                                                                                {"valid_model", &cfg.csv.valid_model},
                                                                                {"test", &cfg.csv.test}};
                    for (const auto& [key, rule] : rules) {
                        if (st->contains(key)) rule_from_json(rd, st->at(key), *rule, std::string("csv.splits.") + key);
                    }
                }
            }
        }
    }

    if (const auto it = j.find("agents"); it != j.end()) {
        if (!it->is_array()) {
            rd.fail("agents", "expected an array");
        } else {
            for (std::size_t i = 0; i < it->size(); ++i) {
                try {
                    cfg.agents.push_back(agents::agent_config_from_json(it->at(i), cfg.agent_task()));
                } catch (const std::exception& e) {
                    rd.fail("agents[" + std::to_string(i) + "]", e.what());
                }
            }
        }
    }

    if (const auto it = j.find("train"); it != j.end()) {
        const auto& t = *it;
        if (rd.object(t, "train", {"episodes", "max_epochs", "eval_every", "checkpoint_every", "eval_episodes", "seeds",
                                   "keep_best", "shuffle"})) {
            rd.field(t, "episodes", cfg.train.episodes, "train");
            rd.field(t, "max_epochs", cfg.train.max_epochs, "train");
            rd.field(t, "eval_every", cfg.train.eval_every, "train");
            rd.field(t, "checkpoint_every", cfg.train.checkpoint_every, "train");
            rd.field(t, "eval_episodes", cfg.train.eval_episodes, "train");
            rd.field(t, "seeds", cfg.train.seeds, "train");
            rd.field(t, "keep_best", cfg.train.keep_best, "train");
            rd.field(t, "shuffle", cfg.train.shuffle, "train");
        }
    }

    if (const auto it = j.find("eval"); it != j.end()) {
        const auto& e = *it;
        if (rd.object(e, "eval", {"baselines", "stride", "workers", "rate", "dt", "sigma", "tree_substeps"})) {
            rd.field(e, "baselines", cfg.eval.baselines, "eval");
            rd.field(e, "stride", cfg.eval.stride, "eval");
            rd.field(e, "workers", cfg.eval.workers, "eval");
            rd.field(e, "rate", cfg.eval.rate, "eval");
            rd.field(e, "dt", cfg.eval.dt, "eval");
            rd.field(e, "sigma", cfg.eval.sigma, "eval");
            rd.field(e, "tree_substeps", cfg.eval.tree_substeps, "eval");
        }
    }

    rd.field(j, "seed", cfg.seed, "");
    rd.field(j, "outdir", cfg.outdir, "");
    rd.field(j, "run_id", cfg.run_id, "");

    if (!problems.empty()) throw ConfigError(std::move(problems));
    return cfg;
}

RunConfig load_run_config(const std::filesystem::path& path)
{
    std::ifstream in(path);
    if (!in) throw ConfigError({"config: cannot open " + path.string()});
    json j;
    try {
        j = json::parse(in);
    } catch (const json::parse_error& e) {
        throw ConfigError({"config: " + path.string() + ": " + e.what()});
    }
    RunConfig cfg = run_config_from_json(j, path.parent_path());
    cfg.validate();
    return cfg;
}

eval::ProtocolData load_data(const RunConfig& cfg)
{
    eval::ProtocolData data;
    if (cfg.task == TaskKind::Gbm) {
        data.training = market::simulate_dataset(cfg.gbm.params, cfg.gbm.training, market::Split::Training, cfg.seed);
        data.valid_hp = market::simulate_dataset(cfg.gbm.params, cfg.gbm.valid_hp, market::Split::ValidHP, cfg.seed);
        data.valid_model =
            market::simulate_dataset(cfg.gbm.params, cfg.gbm.valid_model, market::Split::ValidModel, cfg.seed);
        data.test = market::simulate_dataset(cfg.gbm.params, cfg.gbm.test, market::Split::Test, cfg.seed);
        return data;
    }
    market::LoadOptions opts;
    opts.min_length = market::min_trajectory_length(cfg.payout);
    const auto all = market::load_csv(cfg.csv.paths);
    data.training = market::select(all, cfg.csv.training, market::Split::Training, opts);
    data.valid_hp = market::select(all, cfg.csv.valid_hp, market::Split::ValidHP, opts);
    data.valid_model = market::select(all, cfg.csv.valid_model, market::Split::ValidModel, opts);
    data.test = market::select(all, cfg.csv.test, market::Split::Test, opts);
    return data;
}

agents::TrainOptions train_options(const RunConfig& cfg)
{
    agents::TrainOptions t;
    t.episodes = cfg.train.episodes;
    t.max_epochs = cfg.train.max_epochs;
    t.eval_every = cfg.train.eval_every;
    t.checkpoint_every = cfg.train.checkpoint_every;
    t.shuffle = cfg.train.shuffle;
    t.keep_best = cfg.train.keep_best;
    t.episode = cfg.episode;
    return t;
}

eval::ProtocolOptions protocol_options(const RunConfig& cfg)
{
    eval::ProtocolOptions o;
    o.spec = cfg.payout;
    o.episode = cfg.episode;
    o.candidates = cfg.resolved_agents();
    o.seeds = cfg.train.seeds;
    o.train = train_options(cfg);
    o.baselines = cfg.eval.baselines;
    o.tree = {cfg.eval.sigma, cfg.eval.rate, cfg.eval.dt, cfg.eval.tree_substeps};
    o.eval.seed = cfg.seed;
    o.eval.workers = cfg.eval.workers;
    o.eval.rate = cfg.eval.rate;
    o.eval.dt = cfg.eval.dt;
    o.eval.sigma = cfg.eval.sigma;
    o.stride = cfg.eval.stride;
    o.train_eval_episodes = cfg.train.eval_episodes;
    o.seed = cfg.seed;
    return o;
}

}  // namespace osrl::config
