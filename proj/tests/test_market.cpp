#include <catch_amalgamated.hpp>

#include "osrl/market.hpp"

#include <boost/math/distributions/chi_squared.hpp>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>

using Catch::Approx;
using namespace osrl;
using namespace osrl::market;

namespace {

const std::filesystem::path kData{OSRL_TEST_DATA};

double chi2_pvalue(const std::vector<std::size_t>& counts, double expected)
{
    double stat = 0.0;
    for (std::size_t c : counts) {
        const double d = static_cast<double>(c) - expected;
        stat += d * d / expected;
    }
    boost::math::chi_squared dist(static_cast<double>(counts.size() - 1));
    return boost::math::cdf(boost::math::complement(dist, stat));
}

PayoutSpec table1_spec()
{
    PayoutSpec spec;
    spec.discount = std::exp(-0.05 / 252);
    return spec;
}

}  // namespace

TEST_CASE("gbm_step formula", "[market]")
{
    GbmParams p;
    // exp(0.03/252), evaluated at 40 digits
    CHECK(gbm_step(1.0, p, 0.0) == Approx(1.000119054705496625).epsilon(1e-15));

    GbmParams flat = p;
    flat.sigma = 0.0;
    for (double eps : {-2.0, 0.3, 5.0}) {
        CHECK(gbm_step(1.7, flat, eps) == Approx(1.7 * std::exp(p.rate * p.dt)).epsilon(1e-15));
    }
    for (double eps : {-1.3, 0.0, 2.2}) {
        CHECK(gbm_step(2.0, p, eps) == Approx(2.0 * gbm_step(1.0, p, eps)).epsilon(1e-15));
    }
}

TEST_CASE("simulate_gbm shape and determinism", "[market]")
{
    GbmParams p;
    p.n_steps = 0;
    CHECK(simulate_gbm(p, 7).prices == std::vector<double>{1.0});

    p.n_steps = 50;
    const auto a = simulate_gbm(p, 99);
    const auto b = simulate_gbm(p, 99);
    const auto c = simulate_gbm(p, 100);
    CHECK(a.prices.size() == 51);
    CHECK(a.prices.front() == 1.0);
    CHECK(a.prices == b.prices);
    CHECK(a.prices != c.prices);
    for (double s : a.prices) CHECK(s > 0.0);
}

TEST_CASE("simulated terminal mean obeys the risk-neutral drift", "[market][statistical]")
{
    GbmParams p;
    p.n_steps = 38;
    const std::size_t n = 100000;
    double sum = 0.0, sum2 = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double s = simulate_gbm(p, derive_seed(2024, i)).prices.back();
        sum += s;
        sum2 += s * s;
    }
    const double mean = sum / n;
    const double se = std::sqrt((sum2 / n - mean * mean) / n);
    const double expected = std::exp(p.rate * 38 * p.dt);
    CHECK(expected == Approx(1.0075681775154208).epsilon(1e-14));
    CHECK(std::abs(mean - expected) < 3.0 * se);
}

TEST_CASE("log increments are iid normal", "[market][statistical]")
{
    GbmParams p;
    p.n_steps = 100000;
    const auto traj = simulate_gbm(p, 5150);
    std::vector<double> x;
    for (std::size_t i = 1; i < traj.prices.size(); ++i) x.push_back(std::log(traj.prices[i] / traj.prices[i - 1]));
    const double n = static_cast<double>(x.size());
    double mean = 0.0;
    for (double v : x) mean += v;
    mean /= n;
    double m2 = 0.0, m3 = 0.0, m4 = 0.0;
    for (double v : x) {
        const double d = v - mean;
        m2 += d * d;
        m3 += d * d * d;
        m4 += d * d * d * d;
    }
    m2 /= n;
    m3 /= n;
    m4 /= n;
    const double var = p.sigma * p.sigma * p.dt;
    CHECK(std::abs(mean - (p.rate - 0.5 * p.sigma * p.sigma) * p.dt) < 4.0 * std::sqrt(var / n));
    // Var of the sample variance of a normal is 2 sigma^4 / n.
    CHECK(std::abs(m2 - var) < 4.0 * var * std::sqrt(2.0 / n));
    const double skew = m3 / std::pow(m2, 1.5);
    const double kurt = m4 / (m2 * m2);
    const double jb = n / 6.0 * (skew * skew + 0.25 * (kurt - 3.0) * (kurt - 3.0));
    const boost::math::chi_squared dist(2.0);
    CHECK(boost::math::cdf(boost::math::complement(dist, jb)) > 0.01);
}

TEST_CASE("load_csv long layout, interleaved symbols", "[market][csv]")
{
    const Dataset ds = load_csv(kData / "interleaved.csv");
    REQUIRE(ds.trajectories.size() == 2);
    const Trajectory& a = ds.trajectories[0];
    const Trajectory& b = ds.trajectories[1];
    CHECK(a.id == "AAA");
    CHECK(a.dates == std::vector<std::string>{"2020-01-02", "2020-01-03", "2020-01-06"});
    CHECK(a.prices == std::vector<double>{10.0, 10.2, 10.4});
    CHECK(b.id == "BBB");
    CHECK(b.dates == std::vector<std::string>{"2020-01-02", "2020-01-03", "2020-01-06"});
    CHECK(b.prices == std::vector<double>{20.0, 20.5, 21.0});
}

TEST_CASE("load_csv wide layout, one symbol", "[market][csv]")
{
    const Dataset ds = load_csv(kData / "wide_one_symbol.csv");
    REQUIRE(ds.trajectories.size() == 1);
    CHECK(ds.trajectories[0].id == "ZULU");
    CHECK(ds.trajectories[0].size() == 100);
    CHECK(ds.trajectories[0].prices.front() == 50.0);
}

TEST_CASE("load_csv rejects bad rows and drops short series", "[market][csv]")
{
    try {
        load_csv(kData / "negative_price.csv");
        FAIL("expected a parse error");
    } catch (const ParseError& e) {
        CHECK(e.line() == 3);
        CHECK(std::string(e.what()).find("-3.5") != std::string::npos);
    }

    const auto tmp = std::filesystem::temp_directory_path() / "osrl_missing_price.csv";
    {
        std::ofstream out(tmp);
        out << "date,AAA\n2020-01-02,1.0\n2020-01-03,\n";
    }
    CHECK_THROWS_AS(load_csv(tmp), ParseError);

    std::vector<std::string> warnings;
    LoadOptions opts;
    opts.min_length = 4;
    opts.warn = [&warnings](const std::string& w) { warnings.push_back(w); };
    const Dataset ds = load_csv(kData / "interleaved.csv", opts);
    CHECK(ds.trajectories.empty());
    CHECK(warnings.size() == 2);
}

TEST_CASE("write_csv and load_csv agree", "[market][csv]")
{
    GbmParams p;
    p.n_steps = 30;
    const Dataset sim = simulate_dataset(p, 3, Split::Test, 11);
    const auto tmp = std::filesystem::temp_directory_path() / "osrl_roundtrip.csv";
    write_csv(sim, tmp);
    const Dataset back = load_csv(tmp);
    REQUIRE(back.trajectories.size() == 3);
    for (const auto& t : back.trajectories) {
        const auto it = std::find_if(sim.trajectories.begin(), sim.trajectories.end(), [&t](const Trajectory& s) { return s.id == t.id; });
        REQUIRE(it != sim.trajectories.end());
        CHECK(t.prices == it->prices);
    }
}

TEST_CASE("make_episode features", "[market]")
{
    PayoutSpec spec = table1_spec();
    const std::size_t lead = spec.warmup + spec.window - 1;
    Trajectory flat{"flat", std::vector<double>(lead + spec.horizon + 5, 1.0), {}};
    const Episode ep = make_episode(flat, lead, spec, {StrikeAnchor::DecisionStart, false});
    REQUIRE(ep.states.size() == spec.horizon + 1);
    for (const auto& s : ep.states) {
        CHECK(s.features.size() == spec.window + 2);
        CHECK(s.moneyness() == 0.0);
        for (double x : s.price_window()) CHECK(x == 1.0);
        CHECK(s.remaining() == static_cast<double>(spec.horizon - s.t));
    }
    CHECK(ep.states.back().remaining() == 0.0);

    PayoutSpec k1 = spec;
    k1.strike = 1.0;
    CHECK(moneyness(k1, 10, 0.9) == Approx(0.09980178400946245).epsilon(1e-14));
    CHECK(moneyness(k1, 10, 1.2) == Approx(-0.2));
}

TEST_CASE("make_episode strike conventions and rescaling", "[market]")
{
    PayoutSpec spec = table1_spec();
    GbmParams p;
    p.n_steps = 200;
    const Trajectory traj = simulate_gbm(p, 3);
    const std::size_t start = 60;

    const Episode raw = make_episode(traj, start, spec, {StrikeAnchor::DecisionStart, false});
    CHECK(raw.spec.strike == traj.prices[start]);
    CHECK(raw.states[0].moneyness() == 0.0);
    CHECK(raw.price_at(7) == traj.prices[start + 7]);

    const Episode scaled = make_episode(traj, start, spec, {StrikeAnchor::DecisionStart, true});
    CHECK(scaled.spec.strike == 1.0);
    CHECK(scaled.anchor == 1.0);
    CHECK(scaled.price_at(7) == Approx(traj.prices[start + 7] / traj.prices[start]));

    const Episode warm = make_episode(traj, start, spec, {StrikeAnchor::WarmupStart, false});
    CHECK(warm.spec.strike == traj.prices[start - spec.warmup]);

    CHECK_THROWS_AS(make_episode(traj, spec.warmup + spec.window - 2, spec), std::out_of_range);
    CHECK_THROWS_AS(make_episode(traj, traj.size() - spec.horizon, spec), std::out_of_range);
    CHECK_NOTHROW(make_episode(traj, traj.size() - spec.horizon - 1, spec));
}

TEST_CASE("make_episode is pure and never looks past the horizon", "[market]")
{
    PayoutSpec spec = table1_spec();
    GbmParams p;
    p.n_steps = 150;
    Trajectory traj = simulate_gbm(p, 8);
    const std::size_t start = 40;
    const Episode a = make_episode(traj, start, spec);
    const Episode b = make_episode(traj, start, spec);
    CHECK(a.states == b.states);
    for (std::size_t i = start + spec.horizon + 1; i < traj.size(); ++i) traj.prices[i] *= 7.0;
    const Episode c = make_episode(traj, start, spec);
    CHECK(a.states == c.states);
    CHECK(a.history == c.history);
}

TEST_CASE("sample_episode over a singleton support", "[market]")
{
    PayoutSpec spec = table1_spec();
    GbmParams p;
    p.n_steps = min_trajectory_length(spec) - 1;
    Dataset ds;
    ds.trajectories.push_back(simulate_gbm(p, 1, "only"));
    REQUIRE(count_admissible(ds, spec) == 1);
    Rng rng(3);
    const Episode first = sample_episode(ds, spec, rng);
    for (int i = 0; i < 5; ++i) {
        const Episode e = sample_episode(ds, spec, rng);
        CHECK(e.start == first.start);
        CHECK(e.source_id == "only");
    }

    Dataset too_short;
    p.n_steps -= 1;
    too_short.trajectories.push_back(simulate_gbm(p, 1));
    CHECK_THROWS_AS(sample_episode(too_short, spec, rng), std::invalid_argument);
}

TEST_CASE("sample_episode is uniform over admissible starts", "[market][statistical]")
{
    PayoutSpec spec = table1_spec();
    GbmParams p;
    p.n_steps = min_trajectory_length(spec) + 8;  // 10 starts per path
    const Dataset ds = simulate_dataset(p, 2, Split::Training, 4);
    const std::size_t cells = count_admissible(ds, spec);
    REQUIRE(cells == 20);
    std::map<std::pair<std::string, std::size_t>, std::size_t> index;
    std::vector<std::size_t> counts(cells, 0);
    Rng rng(12);
    const std::size_t draws = 10000;
    for (std::size_t i = 0; i < draws; ++i) {
        const Episode e = sample_episode(ds, spec, rng);
        const auto key = std::make_pair(e.source_id, e.start);
        const auto it = index.try_emplace(key, index.size()).first;
        REQUIRE(it->second < cells);
        ++counts[it->second];
    }
    CHECK(chi2_pvalue(counts, static_cast<double>(draws) / cells) > 0.01);
}

TEST_CASE("ordered sampler walks starts chronologically", "[market]")
{
    PayoutSpec spec = table1_spec();
    const Dataset ds = load_csv(kData / "five_symbols.csv");
    EpisodeSampler sampler(ds, spec, {}, false);
    Rng rng(0);
    std::string previous;
    for (std::size_t i = 0; i < sampler.admissible(); ++i) {
        const Episode e = sampler.next(rng);
        const auto& traj = *std::find_if(ds.trajectories.begin(), ds.trajectories.end(), [&e](const Trajectory& t) { return t.id == e.source_id; });
        const std::string day = traj.dates[e.start];
        CHECK(day >= previous);
        previous = day;
    }
    // next pass starts over
    const Episode wrap = sampler.next(rng);
    CHECK(wrap.start == spec.warmup + spec.window - 1);
}

TEST_CASE("select splits by symbol and date", "[market]")
{
    const Dataset ds = load_csv(kData / "five_symbols.csv");
    const Dataset part = select(ds, {{"ALFA", "ECHO"}, "2015-03-01", "2015-06-30"}, Split::ValidHP);
    REQUIRE(part.trajectories.size() == 2);
    CHECK(part.split == Split::ValidHP);
    for (const auto& t : part.trajectories) {
        CHECK(t.dates.front() >= "2015-03-01");
        CHECK(t.dates.back() <= "2015-06-30");
    }
}
