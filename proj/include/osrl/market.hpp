#pragma once

#include "osrl/core.hpp"

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace osrl::market {

struct GbmParams {
    double s0 = 1.0;
    double rate = 0.05;   // continuously compounded, per year
    double sigma = 0.20;  // per sqrt(year)
    double dt = 1.0 / 252.0;
    std::size_t n_steps = 38;

    void validate() const;
    bool operator==(const GbmParams&) const = default;
};

// S_t = S_{t-1} exp((r - sigma^2/2) dt + sigma sqrt(dt) eps)
double gbm_step(double s_prev, const GbmParams& p, double eps);

// Path of n_steps + 1 prices starting at s0. Draw k uses counter k of `seed`.
Trajectory simulate_gbm(const GbmParams& p, std::uint64_t seed, std::string id = "gbm");

enum class Split : std::uint8_t { Training, ValidHP, ValidModel, Test };

std::string_view to_string(Split s);
Split parse_split(std::string_view s);

struct Dataset {
    std::vector<Trajectory> trajectories;
    Split split = Split::Training;

    bool empty() const { return trajectories.empty(); }
};

// n_paths independent GBM paths; path i uses a seed derived from (seed, split, i).
Dataset simulate_dataset(const GbmParams& p, std::size_t n_paths, Split split, std::uint64_t seed);

class ParseError : public std::runtime_error {
public:
    ParseError(const std::string& file, std::size_t line, const std::string& what);
    std::size_t line() const { return line_; }

private:
    std::size_t line_;
};

struct LoadOptions {
    // Trajectories shorter than this are dropped with a warning.
    std::size_t min_length = 0;
    std::function<void(const std::string&)> warn;
};

// Reads either `date,<symbol>[,<symbol>...]` (wide) or `symbol,date,close` (long).
// One trajectory per symbol, rows sorted by date.
Dataset load_csv(const std::filesystem::path& path, const LoadOptions& opts = {});
Dataset load_csv(const std::vector<std::filesystem::path>& paths, const LoadOptions& opts = {});

// Long layout. Trajectories without dates get consecutive calendar days from 2000-01-01.
void write_csv(const Dataset& ds, const std::filesystem::path& path);
std::string synthetic_date(std::size_t day);

/// Selects a split out of a dataset by symbol and inclusive ISO date range.
struct SplitRule {
    std::vector<std::string> symbols;  // empty: all
    std::string date_from;             // empty: open
    std::string date_to;

    bool operator==(const SplitRule&) const = default;
};

Dataset select(const Dataset& ds, const SplitRule& rule, Split split, const LoadOptions& opts = {});

enum class StrikeAnchor : std::uint8_t { DecisionStart, WarmupStart };

std::string_view to_string(StrikeAnchor a);
StrikeAnchor parse_strike_anchor(std::string_view s);

struct EpisodeOptions {
    StrikeAnchor strike_at = StrikeAnchor::DecisionStart;
    // Divide every price by the strike anchor price, making K = S_0 = 1.
    bool rescale = true;

    bool operator==(const EpisodeOptions&) const = default;
};

// Shortest trajectory that admits one episode: W + L + T prices.
std::size_t min_trajectory_length(const PayoutSpec& spec);

// Admissible decision-start indices of one trajectory, as [first, last].
std::pair<std::size_t, std::size_t> admissible_starts(const Trajectory& traj, const PayoutSpec& spec);
std::size_t count_admissible(const Dataset& ds, const PayoutSpec& spec);

/// Builds the episode whose decision day t = 0 is trajectory index `start`.
/// Reads prices in [start - W - L + 1, start + T] only.
Episode make_episode(const Trajectory& traj, std::size_t start, const PayoutSpec& spec,
                     const EpisodeOptions& opts = {});

// Uniform draw over all admissible (trajectory, start) pairs.
Episode sample_episode(const Dataset& ds, const PayoutSpec& spec, Rng& rng, const EpisodeOptions& opts = {});

// All episodes with the given stride over starts.
std::vector<Episode> enumerate_episodes(const Dataset& ds, const PayoutSpec& spec, std::size_t stride = 1,
                                        const EpisodeOptions& opts = {});

// `count` uniform draws (with replacement) over admissible pairs.
std::vector<Episode> draw_episodes(const Dataset& ds, const PayoutSpec& spec, std::size_t count, Rng& rng,
                                   const EpisodeOptions& opts = {});

/// Stream of training episodes over a dataset.
///
/// Shuffled mode draws uniformly with replacement. Ordered mode walks every
/// admissible pair in chronological order of the decision day, wrapping
/// around at the end of a pass.
class EpisodeSampler {
public:
    EpisodeSampler(const Dataset& ds, PayoutSpec spec, EpisodeOptions opts, bool shuffle);

    Episode next(Rng& rng);
    std::size_t admissible() const { return pairs_.size(); }
    const PayoutSpec& spec() const { return spec_; }

private:
    const Dataset* ds_;
    PayoutSpec spec_;
    EpisodeOptions opts_;
    bool shuffle_;
    std::vector<std::pair<std::size_t, std::size_t>> pairs_;  // (trajectory, start)
    std::size_t cursor_ = 0;
};

}  // namespace osrl::market
