#include "osrl/market.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <sstream>

namespace osrl::market {

void GbmParams::validate() const
{
    if (!(s0 > 0.0)) throw std::invalid_argument("gbm: s0 must be positive");
    if (!(sigma >= 0.0)) throw std::invalid_argument("gbm: sigma must be non-negative");
    if (!(dt > 0.0)) throw std::invalid_argument("gbm: dt must be positive");
    if (!std::isfinite(rate)) throw std::invalid_argument("gbm: rate must be finite");
}

double gbm_step(double s_prev, const GbmParams& p, double eps)
{
    return s_prev * std::exp((p.rate - 0.5 * p.sigma * p.sigma) * p.dt + p.sigma * std::sqrt(p.dt) * eps);
}

Trajectory simulate_gbm(const GbmParams& p, std::uint64_t seed, std::string id)
{
    p.validate();
    Trajectory traj;
    traj.id = std::move(id);
    traj.prices.reserve(p.n_steps + 1);
    double s = p.s0;
    traj.prices.push_back(s);
    for (std::size_t k = 0; k < p.n_steps; ++k) {
        s = gbm_step(s, p, counter_normal(seed, 0, k));
        traj.prices.push_back(s);
    }
    return traj;
}

std::string_view to_string(Split s)
{
    switch (s) {
    case Split::Training: return "training";
    case Split::ValidHP: return "valid_hp";
    case Split::ValidModel: return "valid_model";
    case Split::Test: return "test";
    }
    return "training";
}

Split parse_split(std::string_view s)
{
    if (s == "training") return Split::Training;
    if (s == "valid_hp") return Split::ValidHP;
    if (s == "valid_model") return Split::ValidModel;
    if (s == "test") return Split::Test;
    throw std::invalid_argument("unknown split '" + std::string(s) + "'");
}

Dataset simulate_dataset(const GbmParams& p, std::size_t n_paths, Split split, std::uint64_t seed)
{
    Dataset ds;
    ds.split = split;
    ds.trajectories.reserve(n_paths);
    const std::uint64_t split_seed = derive_seed(seed, static_cast<std::uint64_t>(split) + 1);
    for (std::size_t i = 0; i < n_paths; ++i) {
        ds.trajectories.push_back(
            simulate_gbm(p, derive_seed(split_seed, i), "gbm/" + std::string(to_string(split)) + "/" + std::to_string(i)));
    }
    return ds;
}

ParseError::ParseError(const std::string& file, std::size_t line, const std::string& what)
    : std::runtime_error(file + ":" + std::to_string(line) + ": " + what), line_(line)
{
}

namespace {

std::string_view trim(std::string_view s)
{
    while (!s.empty() && (s.front() == ' ' || s.front() == '\t' || s.front() == '"')) s.remove_prefix(1);
    while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r' || s.back() == '"')) s.remove_suffix(1);
    return s;
}

std::vector<std::string_view> split_row(std::string_view line)
{
    std::vector<std::string_view> cells;
    std::size_t pos = 0;
    while (true) {
        const std::size_t comma = line.find(',', pos);
        cells.push_back(trim(line.substr(pos, comma == std::string_view::npos ? std::string_view::npos : comma - pos)));
        if (comma == std::string_view::npos) break;
        pos = comma + 1;
    }
    return cells;
}

bool is_iso_date(std::string_view s)
{
    if (s.size() < 10) return false;
    for (std::size_t i = 0; i < 10; ++i) {
        if (i == 4 || i == 7) {
            if (s[i] != '-') return false;
        } else if (s[i] < '0' || s[i] > '9') {
            return false;
        }
    }
    return true;
}

double parse_price(std::string_view cell, const std::string& file, std::size_t line)
{
    if (cell.empty()) {
        throw ParseError(file, line, "missing price");
    }
    double value = 0.0;
    const auto [ptr, ec] = std::from_chars(cell.data(), cell.data() + cell.size(), value);
    if (ec != std::errc() || ptr != cell.data() + cell.size() || !std::isfinite(value)) {
        throw ParseError(file, line, "malformed price '" + std::string(cell) + "'");
    }
    if (!(value > 0.0)) {
        throw ParseError(file, line, "non-positive price '" + std::string(cell) + "'");
    }
    return value;
}

using Series = std::map<std::string, std::vector<std::pair<std::string, double>>>;

void read_file(const std::filesystem::path& path, Series& series)
{
    std::ifstream in(path);
    if (!in) {
        throw std::runtime_error("cannot open '" + path.string() + "'");
    }
    const std::string file = path.string();
    std::string line;
    if (!std::getline(in, line)) {
        throw ParseError(file, 1, "missing header row");
    }
    if (line.rfind("\xEF\xBB\xBF", 0) == 0) {
        line.erase(0, 3);
    }
    const auto header_cells = split_row(line);
    const std::vector<std::string> header(header_cells.begin(), header_cells.end());
    std::vector<std::string> columns = header;
    for (auto& c : columns) {
        std::transform(c.begin(), c.end(), c.begin(), [](unsigned char ch) { return static_cast<char>(std::tolower(ch)); });
    }
    const bool long_layout = columns.size() == 3 && columns[0] == "symbol" && columns[1] == "date" && columns[2] == "close";
    const bool wide_layout = columns.size() >= 2 && columns[0] == "date";
    if (!long_layout && !wide_layout) {
        throw ParseError(file, 1, "header must be 'symbol,date,close' or 'date,<symbol>...'");
    }
    std::size_t lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (trim(line).empty()) continue;
        const auto cells = split_row(line);
        if (cells.size() != header.size()) {
            throw ParseError(file, lineno, "expected " + std::to_string(header.size()) + " fields, got " + std::to_string(cells.size()));
        }
        if (long_layout) {
            if (cells[0].empty()) throw ParseError(file, lineno, "missing symbol");
            if (!is_iso_date(cells[1])) throw ParseError(file, lineno, "malformed date '" + std::string(cells[1]) + "'");
            series[std::string(cells[0])].emplace_back(std::string(cells[1]), parse_price(cells[2], file, lineno));
        } else {
            if (!is_iso_date(cells[0])) throw ParseError(file, lineno, "malformed date '" + std::string(cells[0]) + "'");
            for (std::size_t c = 1; c < cells.size(); ++c) {
                series[header[c]].emplace_back(std::string(cells[0]), parse_price(cells[c], file, lineno));
            }
        }
    }
}

void warn_or_log(const LoadOptions& opts, const std::string& msg)
{
    if (opts.warn) {
        opts.warn(msg);
    } else {
        std::cerr << "warning: " << msg << '\n';
    }
}

}  // namespace

Dataset load_csv(const std::vector<std::filesystem::path>& paths, const LoadOptions& opts)
{
    Series series;
    for (const auto& p : paths) {
        read_file(p, series);
    }
    Dataset ds;
    for (auto& [symbol, rows] : series) {
        std::stable_sort(rows.begin(), rows.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
        for (std::size_t i = 1; i < rows.size(); ++i) {
            if (rows[i].first == rows[i - 1].first) {
                throw std::runtime_error("symbol '" + symbol + "' has duplicate date " + rows[i].first);
            }
        }
        if (rows.size() < opts.min_length) {
            warn_or_log(opts, "symbol '" + symbol + "' has " + std::to_string(rows.size()) + " rows, fewer than " +
                                  std::to_string(opts.min_length) + "; excluded");
            continue;
        }
        Trajectory traj;
        traj.id = symbol;
        for (auto& [date, price] : rows) {
            traj.dates.push_back(date);
            traj.prices.push_back(price);
        }
        ds.trajectories.push_back(std::move(traj));
    }
    return ds;
}

Dataset load_csv(const std::filesystem::path& path, const LoadOptions& opts)
{
    return load_csv(std::vector<std::filesystem::path>{path}, opts);
}

std::string synthetic_date(std::size_t day)
{
    using namespace std::chrono;
    const year_month_day ymd{sys_days{year{2000} / January / 1} + days{static_cast<int>(day)}};
    std::ostringstream os;
    os << std::setfill('0') << std::setw(4) << static_cast<int>(ymd.year()) << '-' << std::setw(2)
       << static_cast<unsigned>(ymd.month()) << '-' << std::setw(2) << static_cast<unsigned>(ymd.day());
    return os.str();
}

void write_csv(const Dataset& ds, const std::filesystem::path& path)
{
    std::ofstream out(path);
    if (!out) {
        throw std::runtime_error("cannot write '" + path.string() + "'");
    }
    out << "symbol,date,close\n";
    out << std::setprecision(17);
    for (const auto& traj : ds.trajectories) {
        for (std::size_t i = 0; i < traj.prices.size(); ++i) {
            out << traj.id << ',' << (traj.dates.empty() ? synthetic_date(i) : traj.dates[i]) << ',' << traj.prices[i]
                << '\n';
        }
    }
}

Dataset select(const Dataset& ds, const SplitRule& rule, Split split, const LoadOptions& opts)
{
    Dataset out;
    out.split = split;
    for (const auto& traj : ds.trajectories) {
        if (!rule.symbols.empty() && std::find(rule.symbols.begin(), rule.symbols.end(), traj.id) == rule.symbols.end()) {
            continue;
        }
        Trajectory part;
        part.id = traj.id;
        for (std::size_t i = 0; i < traj.prices.size(); ++i) {
            const std::string date = traj.dates.empty() ? synthetic_date(i) : traj.dates[i];
            if (!rule.date_from.empty() && date < rule.date_from) continue;
            if (!rule.date_to.empty() && date > rule.date_to) continue;
            part.dates.push_back(date);
            part.prices.push_back(traj.prices[i]);
        }
        if (part.prices.size() < std::max<std::size_t>(opts.min_length, 1)) {
            warn_or_log(opts, "symbol '" + traj.id + "' has " + std::to_string(part.prices.size()) + " rows in split " +
                                  std::string(to_string(split)) + "; excluded");
            continue;
        }
        out.trajectories.push_back(std::move(part));
    }
    return out;
}

std::string_view to_string(StrikeAnchor a)
{
    return a == StrikeAnchor::DecisionStart ? "decision_start" : "warmup_start";
}

StrikeAnchor parse_strike_anchor(std::string_view s)
{
    if (s == "decision_start") return StrikeAnchor::DecisionStart;
    if (s == "warmup_start") return StrikeAnchor::WarmupStart;
    throw std::invalid_argument("unknown strike anchor '" + std::string(s) + "'");
}

std::size_t min_trajectory_length(const PayoutSpec& spec)
{
    return spec.warmup + spec.window + spec.horizon;
}

std::pair<std::size_t, std::size_t> admissible_starts(const Trajectory& traj, const PayoutSpec& spec)
{
    const std::size_t first = spec.warmup + spec.window - 1;
    if (traj.size() < min_trajectory_length(spec)) {
        return {1, 0};  // empty range
    }
    return {first, traj.size() - 1 - spec.horizon};
}

std::size_t count_admissible(const Dataset& ds, const PayoutSpec& spec)
{
    std::size_t n = 0;
    for (const auto& traj : ds.trajectories) {
        const auto [lo, hi] = admissible_starts(traj, spec);
        if (lo <= hi) n += hi - lo + 1;
    }
    return n;
}

Episode make_episode(const Trajectory& traj, std::size_t start, const PayoutSpec& spec, const EpisodeOptions& opts)
{
    spec.validate();
    const std::size_t lead = spec.warmup + spec.window - 1;
    if (start < lead || start + spec.horizon >= traj.size()) {
        throw std::out_of_range("make_episode: start " + std::to_string(start) + " not admissible for trajectory '" +
                                traj.id + "' of length " + std::to_string(traj.size()));
    }
    const std::size_t anchor_index = opts.strike_at == StrikeAnchor::DecisionStart ? start : start - spec.warmup;
    const double scale = opts.rescale ? traj.prices[anchor_index] : 1.0;

    Episode ep;
    ep.spec = spec;
    ep.source_id = traj.id;
    ep.start = start;
    ep.anchor = traj.prices[anchor_index] / scale;
    ep.spec.strike = ep.anchor;
    ep.history.reserve(lead + spec.horizon + 1);
    for (std::size_t i = start - lead; i <= start + spec.horizon; ++i) {
        ep.history.push_back(traj.prices[i] / scale);
    }
    ep.states.reserve(spec.horizon + 1);
    for (std::size_t t = 0; t <= spec.horizon; ++t) {
        StateVector s;
        s.t = t;
        s.features.reserve(spec.feature_width());
        const std::size_t last = lead + t;  // index of S_t in history
        for (std::size_t i = last + 1 - spec.window; i <= last; ++i) {
            s.features.push_back(ep.history[i]);
        }
        s.features.push_back(static_cast<double>(spec.horizon - t));
        s.features.push_back(moneyness(ep.spec, t, ep.history[last]));
        ep.states.push_back(std::move(s));
    }
    return ep;
}

namespace {

std::vector<std::pair<std::size_t, std::size_t>> admissible_pairs(const Dataset& ds, const PayoutSpec& spec)
{
    std::vector<std::pair<std::size_t, std::size_t>> pairs;
    for (std::size_t i = 0; i < ds.trajectories.size(); ++i) {
        const auto [lo, hi] = admissible_starts(ds.trajectories[i], spec);
        for (std::size_t s = lo; s <= hi && lo <= hi; ++s) {
            pairs.emplace_back(i, s);
        }
    }
    return pairs;
}

// Maps the k-th admissible pair without materializing the list.
std::pair<std::size_t, std::size_t> nth_pair(const Dataset& ds, const PayoutSpec& spec, std::size_t k)
{
    for (std::size_t i = 0; i < ds.trajectories.size(); ++i) {
        const auto [lo, hi] = admissible_starts(ds.trajectories[i], spec);
        if (lo > hi) continue;
        const std::size_t n = hi - lo + 1;
        if (k < n) return {i, lo + k};
        k -= n;
    }
    throw std::logic_error("nth_pair: index out of range");
}

}  // namespace

Episode sample_episode(const Dataset& ds, const PayoutSpec& spec, Rng& rng, const EpisodeOptions& opts)
{
    const std::size_t total = count_admissible(ds, spec);
    if (total == 0) {
        throw std::invalid_argument("sample_episode: no admissible start in any trajectory");
    }
    const auto [traj, start] = nth_pair(ds, spec, rng.index(total));
    return make_episode(ds.trajectories[traj], start, spec, opts);
}

std::vector<Episode> enumerate_episodes(const Dataset& ds, const PayoutSpec& spec, std::size_t stride,
                                        const EpisodeOptions& opts)
{
    if (stride == 0) {
        throw std::invalid_argument("enumerate_episodes: stride must be positive");
    }
    std::vector<Episode> out;
    for (const auto& traj : ds.trajectories) {
        const auto [lo, hi] = admissible_starts(traj, spec);
        for (std::size_t s = lo; s <= hi && lo <= hi; s += stride) {
            out.push_back(make_episode(traj, s, spec, opts));
        }
    }
    return out;
}

std::vector<Episode> draw_episodes(const Dataset& ds, const PayoutSpec& spec, std::size_t count, Rng& rng,
                                   const EpisodeOptions& opts)
{
    const std::size_t total = count_admissible(ds, spec);
    if (total == 0) {
        throw std::invalid_argument("draw_episodes: no admissible start in any trajectory");
    }
    std::vector<Episode> out;
    out.reserve(count);
    for (std::size_t i = 0; i < count; ++i) {
        const auto [traj, start] = nth_pair(ds, spec, rng.index(total));
        out.push_back(make_episode(ds.trajectories[traj], start, spec, opts));
    }
    return out;
}

EpisodeSampler::EpisodeSampler(const Dataset& ds, PayoutSpec spec, EpisodeOptions opts, bool shuffle)
    : ds_(&ds), spec_(spec), opts_(opts), shuffle_(shuffle), pairs_(admissible_pairs(ds, spec))
{
    spec_.validate();
    if (pairs_.empty()) {
        throw std::invalid_argument("EpisodeSampler: no admissible start in any trajectory");
    }
    if (!shuffle_) {
        auto day = [&ds](const std::pair<std::size_t, std::size_t>& p) {
            const auto& traj = ds.trajectories[p.first];
            return traj.dates.empty() ? synthetic_date(p.second) : traj.dates[p.second];
        };
        std::vector<std::string> keys;
        keys.reserve(pairs_.size());
        for (const auto& p : pairs_) keys.push_back(day(p));
        std::vector<std::size_t> order(pairs_.size());
        for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
        std::stable_sort(order.begin(), order.end(), [&keys](std::size_t a, std::size_t b) { return keys[a] < keys[b]; });
        std::vector<std::pair<std::size_t, std::size_t>> sorted;
        sorted.reserve(pairs_.size());
        for (std::size_t i : order) sorted.push_back(pairs_[i]);
        pairs_ = std::move(sorted);
    }
}

Episode EpisodeSampler::next(Rng& rng)
{
    std::pair<std::size_t, std::size_t> p;
    if (shuffle_) {
        p = pairs_[rng.index(pairs_.size())];
    } else {
        p = pairs_[cursor_];
        cursor_ = (cursor_ + 1) % pairs_.size();
    }
    return make_episode(ds_->trajectories[p.first], p.second, spec_, opts_);
}

}  // namespace osrl::market
