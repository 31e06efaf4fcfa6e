#include "osrl/baselines.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>

namespace osrl::baselines {

std::string BaselinePolicy::label() const
{
    switch (kind_) {
    case BaselineKind::Rand: return "Rand";
    case BaselineKind::First: return "First";
    case BaselineKind::Last: return "Last";
    }
    return "Rand";
}

void BaselinePolicy::begin_episode(const Episode& ep, Rng& rng)
{
    horizon_ = ep.horizon();
    if (kind_ == BaselineKind::Rand) {
        drawn_ = rng.index(horizon_ + 1);
    }
}

Action BaselinePolicy::decide(const StateVector& s) const
{
    switch (kind_) {
    case BaselineKind::First: return Action::Stop;
    case BaselineKind::Last: return Action::Continue;
    case BaselineKind::Rand: return s.t >= drawn_ ? Action::Stop : Action::Continue;
    }
    return Action::Stop;
}

namespace {

struct Lattice {
    double up;
    double down;
    double prob;
    double disc;
};

Lattice make_lattice(const TreeSpec& spec)
{
    if (spec.steps < 1) {
        throw std::invalid_argument("crr: steps must be at least 1");
    }
    if (!(spec.s0 > 0.0) || !(spec.strike > 0.0) || !(spec.sigma > 0.0) || !(spec.dt > 0.0)) {
        throw std::domain_error("crr: s0, strike, sigma and dt must be positive");
    }
    Lattice l;
    l.up = std::exp(spec.sigma * std::sqrt(spec.dt));
    l.down = 1.0 / l.up;
    l.prob = (std::exp(spec.rate * spec.dt) - l.down) / (l.up - l.down);
    l.disc = std::exp(-spec.rate * spec.dt);
    if (!(l.prob > 0.0 && l.prob < 1.0)) {
        throw std::domain_error("crr: risk-neutral probability outside (0, 1)");
    }
    return l;
}

double intrinsic(const TreeSpec& spec, double s)
{
    return spec.type == OptionType::Put ? std::max(spec.strike - s, 0.0) : std::max(s - spec.strike, 0.0);
}

// Rolls terminal values back to `stop_step` (inclusive); returns node values there.
std::vector<double> roll_back(const TreeSpec& spec, const Lattice& l, std::size_t stop_step,
                              std::vector<std::vector<bool>>* table)
{
    const std::size_t n = spec.steps;
    // node (i, j) sits at s0 * u^(2j - i)
    std::vector<double> level(2 * n + 1);
    for (std::size_t k = 0; k <= 2 * n; ++k) {
        level[k] = spec.s0 * std::pow(l.up, static_cast<double>(k) - static_cast<double>(n));
    }
    const auto node_price = [&](std::size_t i, std::size_t j) { return level[n + 2 * j - i]; };

    std::vector<double> value(n + 1);
    for (std::size_t j = 0; j <= n; ++j) {
        value[j] = intrinsic(spec, node_price(n, j));
    }
    if (table != nullptr) {
        table->assign(n + 1, {});
        (*table)[n].assign(n + 1, false);
    }
    const bool bermudan = spec.style == ExerciseStyle::Bermudan;
    for (std::size_t i = n; i-- > stop_step;) {
        if (table != nullptr) (*table)[i].assign(i + 1, false);
        for (std::size_t j = 0; j <= i; ++j) {
            double hold = l.disc * (l.prob * value[j + 1] + (1.0 - l.prob) * value[j]);
            if (bermudan) {
                const double ex = intrinsic(spec, node_price(i, j));
                if (ex > 0.0 && ex >= hold) {
                    hold = ex;
                    if (table != nullptr) (*table)[i][j] = true;
                }
            }
            value[j] = hold;
        }
        value.resize(i + 1);
    }
    return value;
}

double normal_cdf(double x)
{
    return 0.5 * std::erfc(-x / std::numbers::sqrt2);
}

}  // namespace

TreeResult crr_price(const TreeSpec& spec)
{
    const Lattice l = make_lattice(spec);
    TreeResult out;
    out.price = roll_back(spec, l, 0, &out.exercise)[0];
    return out;
}

RootValues crr_root(const TreeSpec& spec)
{
    const Lattice l = make_lattice(spec);
    const auto next = roll_back(spec, l, 1, nullptr);
    return {intrinsic(spec, spec.s0), l.disc * (l.prob * next[1] + (1.0 - l.prob) * next[0])};
}

double bs_european_put(double s0, double strike, double rate, double sigma, double t_years)
{
    if (!(s0 > 0.0) || !(strike > 0.0) || sigma < 0.0 || t_years < 0.0) {
        throw std::invalid_argument("bs_european_put: invalid inputs");
    }
    const double df = std::exp(-rate * t_years);
    if (sigma == 0.0 || t_years == 0.0) {
        return std::max(strike * df - s0, 0.0);
    }
    const double sd = sigma * std::sqrt(t_years);
    const double d1 = (std::log(s0 / strike) + (rate + 0.5 * sigma * sigma) * t_years) / sd;
    const double d2 = d1 - sd;
    return strike * df * normal_cdf(-d2) - s0 * normal_cdf(-d1);
}

double bs_european_call(double s0, double strike, double rate, double sigma, double t_years)
{
    if (!(s0 > 0.0) || !(strike > 0.0) || sigma < 0.0 || t_years < 0.0) {
        throw std::invalid_argument("bs_european_call: invalid inputs");
    }
    const double df = std::exp(-rate * t_years);
    if (sigma == 0.0 || t_years == 0.0) {
        return std::max(s0 - strike * df, 0.0);
    }
    const double sd = sigma * std::sqrt(t_years);
    const double d1 = (std::log(s0 / strike) + (rate + 0.5 * sigma * sigma) * t_years) / sd;
    const double d2 = d1 - sd;
    return s0 * normal_cdf(d1) - strike * df * normal_cdf(d2);
}

double calibrate_sigma(std::span<const double> prices, double dt)
{
    if (prices.size() < 2) {
        throw std::invalid_argument("calibrate_sigma: need at least 2 prices");
    }
    if (!(dt > 0.0)) {
        throw std::invalid_argument("calibrate_sigma: dt must be positive");
    }
    std::vector<double> r;
    r.reserve(prices.size() - 1);
    for (std::size_t i = 1; i < prices.size(); ++i) {
        if (!(prices[i] > 0.0) || !(prices[i - 1] > 0.0)) {
            throw std::invalid_argument("calibrate_sigma: prices must be positive");
        }
        r.push_back(std::log(prices[i] / prices[i - 1]));
    }
    if (r.size() < 2) {
        return 0.0;
    }
    double mean = 0.0;
    for (double x : r) mean += x;
    mean /= static_cast<double>(r.size());
    double ss = 0.0;
    for (double x : r) ss += (x - mean) * (x - mean);
    const double sd = std::sqrt(ss / static_cast<double>(r.size() - 1));
    // Constant log-returns leave rounding noise only.
    if (sd <= 1e-12 * std::max(1.0, std::abs(mean))) {
        return 0.0;
    }
    return sd / std::sqrt(dt);
}

void BinomialTreePolicy::begin_episode(const Episode& ep, Rng&)
{
    spec_ = ep.spec;
    anchor_ = ep.anchor;
}

Action BinomialTreePolicy::decide(const StateVector& s) const
{
    return decide(s, spec_, anchor_);
}

Action BinomialTreePolicy::decide(const StateVector& s, const PayoutSpec& spec, double anchor) const
{
    if (stop_forced(s, spec.horizon)) {
        return Action::Stop;
    }
    const double price = s.price();
    const double strike = spec.kind == PayoutKind::RelativePut ? anchor : spec.strike;
    const OptionType type = spec.kind == PayoutKind::Call ? OptionType::Call : OptionType::Put;
    const double exercise_now = type == OptionType::Put ? std::max(strike - price, 0.0) : std::max(price - strike, 0.0);
    if (exercise_now <= 0.0) {
        return Action::Continue;
    }
    const double sigma = params_.known_sigma ? *params_.known_sigma : calibrate_sigma(s.price_window(), params_.dt);

    TreeSpec tree;
    tree.steps = (spec.horizon - s.t) * params_.substeps;
    tree.s0 = price;
    tree.strike = strike;
    tree.rate = params_.rate;
    tree.sigma = sigma;
    tree.dt = params_.dt / static_cast<double>(params_.substeps);
    tree.style = ExerciseStyle::Bermudan;
    tree.type = type;
    try {
        const RootValues root = crr_root(tree);
        return root.intrinsic >= root.continuation ? Action::Stop : Action::Continue;
    } catch (const std::domain_error&) {
        return Action::Stop;  // degenerate volatility: in the money, stop
    }
}

std::unique_ptr<StoppingPolicy> make_baseline(const std::string& name, const BinomialTreePolicy::Params& tree)
{
    if (name == "rand") return std::make_unique<BaselinePolicy>(BaselineKind::Rand);
    if (name == "first") return std::make_unique<BaselinePolicy>(BaselineKind::First);
    if (name == "last") return std::make_unique<BaselinePolicy>(BaselineKind::Last);
    if (name == "bt") return std::make_unique<BinomialTreePolicy>(tree);
    throw std::invalid_argument("unknown baseline '" + name + "'");
}

}  // namespace osrl::baselines
