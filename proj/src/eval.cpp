#include "osrl/eval.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <iomanip>
#include <map>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <thread>

namespace osrl::eval {

Metric summarize(std::span<const double> xs)
{
    Metric m;
    if (xs.empty()) return m;
    double sum = 0.0;
    for (double x : xs) sum += x;
    m.mean = sum / static_cast<double>(xs.size());
    if (xs.size() < 2) return m;
    double ss = 0.0;
    for (double x : xs) ss += (x - m.mean) * (x - m.mean);
    const double sd = std::sqrt(ss / static_cast<double>(xs.size() - 1));
    m.ci90 = 1.645 * sd / std::sqrt(static_cast<double>(xs.size()));
    return m;
}

double option_return(double payout, double price)
{
    if (!(price > 0.0)) {
        throw std::invalid_argument("option_return: price must be positive");
    }
    return (payout - price) / price;
}

double relative_return(const Episode& ep, std::size_t tau)
{
    const double r = discounted_return(ep, tau);
    return ep.spec.kind == PayoutKind::RelativePut ? r : r / ep.anchor;
}

double episode_price(const Episode& ep, const EvalOptions& opts)
{
    const StateVector& s0 = ep.states.front();
    baselines::TreeSpec tree;
    tree.steps = ep.horizon();
    tree.s0 = s0.price();
    tree.strike = ep.spec.strike;
    tree.rate = opts.rate;
    tree.dt = opts.dt;
    tree.style = baselines::ExerciseStyle::Bermudan;
    tree.type = ep.spec.kind == PayoutKind::Call ? baselines::OptionType::Call : baselines::OptionType::Put;
    if (ep.spec.kind == PayoutKind::RelativePut) tree.strike = ep.anchor;
    tree.sigma = opts.sigma ? *opts.sigma : baselines::calibrate_sigma(s0.price_window(), opts.dt);
    double price = 0.0;
    try {
        price = baselines::crr_price(tree).price;
    } catch (const std::domain_error&) {
        return 0.0;
    }
    return ep.spec.kind == PayoutKind::RelativePut ? price / ep.anchor : price;
}

double clairvoyant_return(const Episode& ep)
{
    double best = 0.0;
    for (std::size_t t = 0; t <= ep.horizon(); ++t) best = std::max(best, discounted_return(ep, t));
    return best;
}

EvalReport evaluate(StoppingPolicy& policy, std::span<const Episode> episodes, const EvalOptions& opts)
{
    if (episodes.empty()) {
        throw std::invalid_argument("evaluate: empty episode set");
    }
    EvalReport rep;
    rep.label = policy.label();
    rep.n_episodes = episodes.size();
    rep.ci_degenerate = episodes.size() == 1;
    Rng rng(opts.seed);
    rep.stopping_times = policy.stopping_times(episodes, rng);

    const std::size_t n = episodes.size();
    std::vector<double> er(n), erop(n), prices(n);
    for (std::size_t i = 0; i < n; ++i) {
        er[i] = discounted_return(episodes[i], rep.stopping_times[i]);
        erop[i] = relative_return(episodes[i], rep.stopping_times[i]);
    }
    const std::size_t workers = std::max<std::size_t>(1, std::min(opts.workers, n));
    const auto price_range = [&](std::size_t lo, std::size_t hi) {
        for (std::size_t i = lo; i < hi; ++i) prices[i] = episode_price(episodes[i], opts);
    };
    if (workers == 1) {
        price_range(0, n);
    } else {
        std::vector<std::jthread> pool;
        const std::size_t chunk = (n + workers - 1) / workers;
        for (std::size_t w = 0; w < workers; ++w) {
            const std::size_t lo = w * chunk;
            const std::size_t hi = std::min(n, lo + chunk);
            if (lo < hi) pool.emplace_back(price_range, lo, hi);
        }
    }
    std::vector<double> eor;
    eor.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        if (prices[i] > opts.price_floor) {
            eor.push_back(option_return(er[i], prices[i]));
        } else {
            ++rep.eor_excluded;
        }
    }
    rep.er = summarize(er);
    rep.erop = summarize(erop);
    rep.eor = summarize(eor);
    return rep;
}

void check_disjoint(const ProtocolData& data)
{
    const std::pair<const char*, const market::Dataset*> splits[] = {
        {"training", &data.training},
        {"valid_hp", &data.valid_hp},
        {"valid_model", &data.valid_model},
        {"test", &data.test},
    };
    for (std::size_t a = 0; a < 4; ++a) {
        for (std::size_t b = a + 1; b < 4; ++b) {
            for (const auto& x : splits[a].second->trajectories) {
                for (const auto& y : splits[b].second->trajectories) {
                    if (x.id != y.id) continue;
                    bool overlap = true;
                    if (!x.dates.empty() && !y.dates.empty()) {
                        overlap = !(x.dates.back() < y.dates.front() || y.dates.back() < x.dates.front());
                    }
                    if (overlap) {
                        throw std::invalid_argument(std::string("split leak: '") + x.id + "' overlaps between " +
                                                    splits[a].first + " and " + splits[b].first);
                    }
                }
            }
        }
    }
}

int column_rank(const std::string& label)
{
    static const char* order[] = {"DDQN", "C51", "IQN", "Rand", "Last", "First", "B.M."};
    for (int i = 0; i < 7; ++i) {
        if (label == order[i]) return i;
    }
    return 7;
}

namespace {

void sort_columns(std::vector<EvalReport>& reports)
{
    std::stable_sort(reports.begin(), reports.end(),
                     [](const EvalReport& a, const EvalReport& b) { return column_rank(a.label) < column_rank(b.label); });
}

}  // namespace

std::optional<agents::Algorithm> select_model(std::span<const std::pair<agents::Algorithm, double>> scores)
{
    std::optional<std::pair<agents::Algorithm, double>> best;
    for (const auto& s : scores) {
        if (!best || s.second > best->second || (s.second == best->second && s.first < best->first)) best = s;
    }
    if (!best) return std::nullopt;
    return best->first;
}

ProtocolReport run_protocol(const ProtocolData& data, const ProtocolOptions& opts)
{
    check_disjoint(data);
    const auto say = [&](const std::string& msg) {
        if (opts.progress) opts.progress(msg);
    };
    const std::pair<market::Split, const market::Dataset*> splits[] = {
        {market::Split::Training, &data.training},
        {market::Split::ValidHP, &data.valid_hp},
        {market::Split::ValidModel, &data.valid_model},
        {market::Split::Test, &data.test},
    };
    std::vector<std::vector<Episode>> episodes;
    for (const auto& [split, ds] : splits) {
        episodes.push_back(market::enumerate_episodes(*ds, opts.spec, opts.stride, opts.episode));
        if (episodes.back().empty()) {
            throw std::invalid_argument("run_protocol: split " + std::string(market::to_string(split)) +
                                        " admits no episode");
        }
    }
    const auto eval_opts = [&](std::size_t split_index, std::size_t column) {
        EvalOptions e = opts.eval;
        e.seed = derive_seed(opts.seed, 1000 + 16 * split_index + column);
        return e;
    };

    ProtocolReport report;
    std::map<agents::Algorithm, std::pair<double, std::unique_ptr<agents::Agent>>> best;
    for (std::size_t i = 0; i < opts.candidates.size(); ++i) {
        const auto& cfg = opts.candidates[i];
        for (std::size_t s = 0; s < std::max<std::size_t>(1, opts.seeds); ++s) {
            Candidate c;
            c.algorithm = cfg.algorithm;
            c.index = i;
            c.seed = derive_seed(opts.seed, 100000 + 1000 * i + s);
            auto agent = agents::make_agent(cfg, opts.spec, c.seed);
            const auto t0 = std::chrono::steady_clock::now();
            agents::TrainOptions train = opts.train;
            train.episode = opts.episode;
            const std::size_t n_eval = std::min(opts.train_eval_episodes, episodes[1].size());
            agents::train(*agent, data.training, train, c.seed, std::span<const Episode>(episodes[1].data(), n_eval));
            c.train_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
            c.valid_hp_er = evaluate(*agent, episodes[1], eval_opts(1, 0)).er.mean;
            say(agent->label() + " candidate " + std::to_string(i) + " seed " + std::to_string(s) +
                ": valid_hp ER " + std::to_string(c.valid_hp_er));
            report.candidates.push_back(c);
            auto it = best.find(cfg.algorithm);
            if (it == best.end() || c.valid_hp_er > it->second.first) {
                best[cfg.algorithm] = {c.valid_hp_er, std::move(agent)};
            }
        }
    }

    for (auto& [algo, entry] : best) report.agents.push_back(std::move(entry.second));

    std::vector<std::unique_ptr<StoppingPolicy>> baseline_policies;
    for (const auto& name : opts.baselines) baseline_policies.push_back(baselines::make_baseline(name, opts.tree));

    std::vector<std::pair<agents::Algorithm, double>> model_scores;
    for (std::size_t k = 0; k < 4; ++k) {
        SplitResult res;
        res.split = splits[k].first;
        if (res.split != market::Split::Test) {
            for (auto& agent : report.agents) {
                res.reports.push_back(evaluate(*agent, episodes[k], eval_opts(k, 0)));
                if (res.split == market::Split::ValidModel) {
                    model_scores.emplace_back(agent->config().algorithm, res.reports.back().er.mean);
                }
            }
            if (res.split == market::Split::ValidModel) report.selected = select_model(model_scores);
        } else if (report.selected) {
            for (auto& agent : report.agents) {
                if (agent->config().algorithm == *report.selected) {
                    res.reports.push_back(evaluate(*agent, episodes[k], eval_opts(k, 0)));
                }
            }
        }
        for (std::size_t b = 0; b < baseline_policies.size(); ++b) {
            res.reports.push_back(evaluate(*baseline_policies[b], episodes[k], eval_opts(k, b + 1)));
        }
        sort_columns(res.reports);
        say(std::string(market::to_string(res.split)) + " evaluated on " + std::to_string(episodes[k].size()) +
            " episodes");
        report.splits.push_back(std::move(res));
    }
    return report;
}

void write_report_csv(const std::vector<SplitResult>& splits, std::ostream& out)
{
    out << "split,policy,n_episodes,er,er_ci90,erop,erop_ci90,eor,eor_ci90,eor_excluded\n";
    std::ostringstream row;
    row << std::setprecision(10);
    for (const auto& s : splits) {
        for (const auto& r : s.reports) {
            row.str("");
            row << market::to_string(s.split) << ',' << r.label << ',' << r.n_episodes << ',' << r.er.mean << ','
                << r.er.ci90 << ',' << r.erop.mean << ',' << r.erop.ci90 << ',' << r.eor.mean << ',' << r.eor.ci90
                << ',' << r.eor_excluded << '\n';
            out << row.str();
        }
    }
}

void write_report_table(const std::vector<SplitResult>& splits, std::ostream& out,
                        const std::optional<std::string>& selected)
{
    std::vector<std::string> columns;
    for (const auto& s : splits) {
        for (const auto& r : s.reports) {
            if (std::find(columns.begin(), columns.end(), r.label) == columns.end()) columns.push_back(r.label);
        }
    }
    std::stable_sort(columns.begin(), columns.end(),
                     [](const std::string& a, const std::string& b) { return column_rank(a) < column_rank(b); });

    const auto fixed = [](double x, int digits) {
        std::ostringstream s;
        s << std::fixed << std::setprecision(digits) << x;
        return s.str();
    };
    const auto percent = [&](double x) { return fixed(100.0 * x, 1) + "%"; };

    const int first_width = 20;
    const int width = 10;
    out << std::left << std::setw(first_width) << "Data \\ Method";
    for (const auto& c : columns) out << std::right << std::setw(width) << c;
    out << '\n';
    for (const auto& s : splits) {
        struct Row {
            const char* name;
            std::function<std::string(const EvalReport&)> cell;
        };
        const Row rows[] = {
            {"ER", [&](const EvalReport& r) { return fixed(r.er.mean, 4); }},
            {"CI", [&](const EvalReport& r) { return fixed(r.er.ci90, 4); }},
            {"EROP", [&](const EvalReport& r) { return fixed(r.erop.mean, 4); }},
            {"EOR", [&](const EvalReport& r) { return percent(r.eor.mean); }},
            {"EOR CI", [&](const EvalReport& r) { return percent(r.eor.ci90); }},
        };
        for (const auto& row : rows) {
            const std::string head = std::string(market::to_string(s.split)) + " " + row.name;
            out << std::left << std::setw(first_width) << head;
            for (const auto& c : columns) {
                const auto it = std::find_if(s.reports.begin(), s.reports.end(),
                                             [&](const EvalReport& r) { return r.label == c; });
                out << std::right << std::setw(width) << (it == s.reports.end() ? "-" : row.cell(*it));
            }
            out << '\n';
        }
    }
    if (selected) out << "selected on valid_model: " << *selected << '\n';
}

}  // namespace osrl::eval
