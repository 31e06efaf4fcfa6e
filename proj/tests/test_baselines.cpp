#include <catch_amalgamated.hpp>

#include "osrl/baselines.hpp"
#include "osrl/market.hpp"

#include <boost/math/distributions/chi_squared.hpp>

#include <cmath>

using Catch::Approx;
using namespace osrl;
using namespace osrl::baselines;

namespace {

TreeSpec table1_tree(ExerciseStyle style, std::size_t steps = 38)
{
    TreeSpec spec;
    spec.steps = steps;
    spec.dt = (38.0 / 252.0) / static_cast<double>(steps);
    spec.style = style;
    return spec;
}

StateVector state_at(std::size_t t, double price, std::vector<double> window = {})
{
    StateVector s;
    s.t = t;
    if (window.empty()) window.assign(15, price);
    s.features = window;
    s.features.back() = price;
    s.features.push_back(0.0);
    s.features.push_back(0.0);
    return s;
}

PayoutSpec table1_spec()
{
    PayoutSpec spec;
    spec.discount = std::exp(-0.05 / 252);
    return spec;
}

}  // namespace

TEST_CASE("black-scholes closed form", "[baselines][bs]")
{
    // 40-digit evaluation of the closed form
    CHECK(bs_european_put(1.0, 1.0, 0.05, 0.2, 38.0 / 252.0) == Approx(0.02724902551320346).epsilon(1e-12));
    CHECK(bs_european_put(1.0, 1.0, 0.05, 0.0, 0.5) == 0.0);
    CHECK(bs_european_put(0.8, 1.0, 0.05, 0.0, 0.5) == Approx(std::exp(-0.025) - 0.8));
    CHECK(bs_european_put(1.0, 1.0, 0.05, 0.2, 0.0) == 0.0);

    Rng rng(21);
    for (int i = 0; i < 50; ++i) {
        const double s = 0.5 + rng.uniform();
        const double k = 0.5 + rng.uniform();
        const double r = 0.1 * rng.uniform();
        const double sig = 0.05 + 0.5 * rng.uniform();
        const double t = 0.05 + 2.0 * rng.uniform();
        const double parity = bs_european_call(s, k, r, sig, t) - bs_european_put(s, k, r, sig, t) - (s - k * std::exp(-r * t));
        CHECK(std::abs(parity) < 1e-12);
    }
}

TEST_CASE("crr converges to black-scholes", "[baselines][crr]")
{
    const double tree = crr_price(table1_tree(ExerciseStyle::European, 2000)).price;
    CHECK(std::abs(tree - bs_european_put(1.0, 1.0, 0.05, 0.2, 38.0 / 252.0)) < 2e-4);
}

TEST_CASE("bermudan dominates european", "[baselines][crr]")
{
    const double eu = crr_price(table1_tree(ExerciseStyle::European)).price;
    const auto berm = crr_price(table1_tree(ExerciseStyle::Bermudan));
    CHECK(berm.price >= eu);
    // independent python evaluation of the same 38-step lattice
    CHECK(berm.price == Approx(0.02772969436926739).epsilon(1e-10));
    CHECK(berm.price >= 0.0273);
    CHECK(berm.price <= 0.0290);
}

TEST_CASE("deep out-of-the-money put is worthless at low volatility", "[baselines][crr]")
{
    TreeSpec spec = table1_tree(ExerciseStyle::Bermudan);
    spec.s0 = 2.0;
    spec.sigma = 0.02;
    CHECK(crr_price(spec).price < 1e-12);
}

TEST_CASE("crr rejects degenerate branch probabilities", "[baselines][crr]")
{
    TreeSpec spec = table1_tree(ExerciseStyle::Bermudan);
    spec.sigma = 0.001;
    CHECK_THROWS_AS(crr_price(spec), std::domain_error);
}

TEST_CASE("crr is monotone in volatility and stabilizes under refinement", "[baselines][crr]")
{
    double previous = 0.0;
    for (double sigma : {0.05, 0.1, 0.2, 0.3, 0.5}) {
        TreeSpec spec = table1_tree(ExerciseStyle::Bermudan);
        spec.sigma = sigma;
        const double p = crr_price(spec).price;
        CHECK(p >= previous);
        previous = p;
    }
    double last_gap = 1.0;
    for (std::size_t n : {50, 100, 200, 400}) {
        const double a = crr_price(table1_tree(ExerciseStyle::Bermudan, n)).price;
        const double b = crr_price(table1_tree(ExerciseStyle::Bermudan, 2 * n)).price;
        CHECK(std::abs(b - a) <= last_gap);
        last_gap = std::abs(b - a);
    }
}

TEST_CASE("put exercise region is down-closed at every step", "[baselines][crr]")
{
    const auto berm = crr_price(table1_tree(ExerciseStyle::Bermudan, 120));
    for (const auto& row : berm.exercise) {
        // j counts up-moves, so exercise nodes must form a prefix
        bool seen_hold = false;
        for (bool ex : row) {
            if (!ex) seen_hold = true;
            CHECK_FALSE((ex && seen_hold));
        }
    }
}

TEST_CASE("calibrate_sigma", "[baselines][calibration]")
{
    CHECK(calibrate_sigma(std::vector<double>(10, 3.0), 1.0 / 252) == 0.0);
    std::vector<double> growth;
    for (int i = 0; i < 15; ++i) growth.push_back(std::exp(0.01 * i));
    CHECK(calibrate_sigma(growth, 1.0 / 252) == 0.0);
    CHECK_THROWS(calibrate_sigma(std::vector<double>{1.0}, 1.0 / 252));

    market::GbmParams p;
    p.n_steps = 9999;
    const auto traj = market::simulate_gbm(p, 77);
    const double sigma = calibrate_sigma(traj.prices, p.dt);
    CHECK(sigma > 0.19);
    CHECK(sigma < 0.21);
}

TEST_CASE("trivial baselines", "[baselines]")
{
    BaselinePolicy first(BaselineKind::First), last(BaselineKind::Last);
    CHECK(first.decide(state_at(0, 1.0)) == Action::Stop);
    CHECK(last.decide(state_at(5, 1.0)) == Action::Continue);
}

TEST_CASE("rand stops uniformly over the horizon", "[baselines][statistical]")
{
    const PayoutSpec spec = table1_spec();
    market::GbmParams p;
    p.n_steps = market::min_trajectory_length(spec) - 1;
    const auto traj = market::simulate_gbm(p, 5);
    const Episode ep = market::make_episode(traj, spec.warmup + spec.window - 1, spec);
    BaselinePolicy rand(BaselineKind::Rand);
    Rng rng(31);
    std::vector<std::size_t> counts(spec.horizon + 1, 0);
    const std::size_t n = 10000;
    for (std::size_t i = 0; i < n; ++i) ++counts[stopping_time(rand, ep, rng)];
    double stat = 0.0;
    const double expected = static_cast<double>(n) / static_cast<double>(counts.size());
    for (std::size_t c : counts) stat += (c - expected) * (c - expected) / expected;
    const boost::math::chi_squared dist(static_cast<double>(counts.size() - 1));
    CHECK(boost::math::cdf(boost::math::complement(dist, stat)) > 0.01);
}

TEST_CASE("binomial tree policy decisions", "[baselines][bt]")
{
    PayoutSpec spec = table1_spec();
    spec.strike = 1.0;

    BinomialTreePolicy known({0.2, 0.05, 1.0 / 252, 1});
    CHECK(known.decide(state_at(spec.horizon, 1.3), spec, 1.0) == Action::Stop);
    // at the money with a large volatility: waiting is worth more
    BinomialTreePolicy volatile_tree({0.8, 0.05, 1.0 / 252, 1});
    CHECK(volatile_tree.decide(state_at(0, 1.0), spec, 1.0) == Action::Continue);

    // deep in the money with an almost flat calibrated window: stop now
    std::vector<double> window;
    for (int i = 0; i < 15; ++i) window.push_back(0.5 * std::exp(1e-5 * (i % 2)));
    BinomialTreePolicy calibrated({std::nullopt, 0.05, 1.0 / 252, 1});
    CHECK(calibrated.decide(state_at(3, 0.5, window), spec, 1.0) == Action::Stop);

    // exactly flat window: degenerate calibration falls back to stopping in the money
    CHECK(calibrated.decide(state_at(3, 0.9, std::vector<double>(15, 0.9)), spec, 1.0) == Action::Stop);
    CHECK(calibrated.decide(state_at(3, 1.1, std::vector<double>(15, 1.1)), spec, 1.0) == Action::Continue);
}

TEST_CASE("make_baseline names", "[baselines]")
{
    CHECK(make_baseline("first")->label() == "First");
    CHECK(make_baseline("bt")->label() == "B.M.");
    CHECK_THROWS_AS(make_baseline("nope"), std::invalid_argument);
}
