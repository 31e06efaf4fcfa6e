#pragma once

#include "osrl/core.hpp"

#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace osrl::baselines {

enum class BaselineKind : std::uint8_t { Rand, First, Last };

/// Trivial benchmark rules. Rand pre-draws a uniform stopping day in {0..T}
/// at the start of every episode.
class BaselinePolicy final : public StoppingPolicy {
public:
    explicit BaselinePolicy(BaselineKind kind) : kind_(kind) {}

    std::string label() const override;
    void begin_episode(const Episode& ep, Rng& rng) override;
    Action decide(const StateVector& s) const override;

private:
    BaselineKind kind_;
    std::size_t horizon_ = 0;
    std::size_t drawn_ = 0;
};

enum class OptionType : std::uint8_t { Put, Call };
enum class ExerciseStyle : std::uint8_t { European, Bermudan };

struct TreeSpec {
    std::size_t steps = 38;
    double s0 = 1.0;
    double strike = 1.0;
    double rate = 0.05;
    double sigma = 0.2;
    double dt = 1.0 / 252.0;  // years per tree step
    ExerciseStyle style = ExerciseStyle::Bermudan;
    OptionType type = OptionType::Put;
};

struct TreeResult {
    double price = 0.0;
    // exercise[i][j]: early exercise is optimal at step i, node j (j up-moves).
    // Always false for European style.
    std::vector<std::vector<bool>> exercise;
};

// Cox-Ross-Rubinstein lattice: u = e^{sigma sqrt(dt)}, d = 1/u, p = (e^{r dt} - d)/(u - d).
// Throws std::domain_error if p falls outside (0, 1).
TreeResult crr_price(const TreeSpec& spec);

struct RootValues {
    double intrinsic = 0.0;
    double continuation = 0.0;
};
// Value of exercising now versus holding one more step, at the tree root.
RootValues crr_root(const TreeSpec& spec);

double bs_european_put(double s0, double strike, double rate, double sigma, double t_years);
double bs_european_call(double s0, double strike, double rate, double sigma, double t_years);

// Annualized sample standard deviation of log-returns.
double calibrate_sigma(std::span<const double> prices, double dt);

/// Binomial-tree exercise rule (B.M.): re-prices a Bermudan tree with the
/// remaining days at every decision and stops when exercising is worth at
/// least holding. Volatility is either known or calibrated on the state's
/// price window. A degenerate calibration (zero variance, or a branch
/// probability outside (0, 1)) falls back to stopping whenever in the money.
class BinomialTreePolicy final : public StoppingPolicy {
public:
    struct Params {
        std::optional<double> known_sigma;  // empty: calibrate on the window
        double rate = 0.05;
        double dt = 1.0 / 252.0;
        std::size_t substeps = 1;  // tree steps per trading day
    };

    explicit BinomialTreePolicy(Params p) : params_(p) {}

    std::string label() const override { return "B.M."; }
    void begin_episode(const Episode& ep, Rng& rng) override;
    Action decide(const StateVector& s) const override;

    // Decision for an explicit spec, without episode state.
    Action decide(const StateVector& s, const PayoutSpec& spec, double anchor) const;

private:
    Params params_;
    PayoutSpec spec_;
    double anchor_ = 1.0;
};

std::unique_ptr<StoppingPolicy> make_baseline(const std::string& name, const BinomialTreePolicy::Params& tree = {});

}  // namespace osrl::baselines
