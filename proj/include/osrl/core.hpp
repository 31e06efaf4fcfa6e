#pragma once

#include "osrl/random.hpp"

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <type_traits>
#include <vector>

namespace osrl {

enum class Action : std::uint8_t { Continue = 0, Stop = 1 };

std::string_view to_string(Action a);

enum class PayoutKind : std::uint8_t { Put, Call, RelativePut };

std::string_view to_string(PayoutKind k);
PayoutKind parse_payout_kind(std::string_view s);

/// Terms of the stopping problem.
///
/// `strike` is the resolved strike of a concrete episode; templates handed to
/// the episode builder carry a placeholder that gets overwritten.
struct PayoutSpec {
    PayoutKind kind = PayoutKind::Put;
    double strike = 1.0;
    double discount = 1.0;     // per-step factor beta
    std::size_t horizon = 38;  // T
    std::size_t window = 15;   // L
    std::size_t warmup = 12;   // W

    // Throws std::invalid_argument on a violated invariant.
    void validate() const;

    std::size_t feature_width() const { return window + 2; }

    bool operator==(const PayoutSpec&) const = default;
};

struct Trajectory {
    std::string id;
    std::vector<double> prices;
    std::vector<std::string> dates;  // empty, or one ISO-8601 label per price

    void validate() const;
    std::size_t size() const { return prices.size(); }
};

/// Decision-time observation: the last L prices, remaining steps, moneyness.
struct StateVector {
    std::vector<double> features;
    std::size_t t = 0;

    std::size_t window() const { return features.size() - 2; }
    double price() const { return features[features.size() - 3]; }
    double remaining() const { return features[features.size() - 2]; }
    double moneyness() const { return features.back(); }
    std::span<const double> price_window() const { return {features.data(), window()}; }

    bool operator==(const StateVector&) const = default;
};

struct Episode {
    std::vector<StateVector> states;  // t = 0..T
    PayoutSpec spec;
    double anchor = 1.0;  // S_0, the reference price of relative payouts
    // Contiguous price slice ending at the horizon: warm-up days, the window
    // history of the first decision day, then the T+1 decision days.
    std::vector<double> history;
    std::string source_id;
    std::size_t start = 0;  // trajectory index of decision day t = 0

    std::size_t horizon() const { return spec.horizon; }
    double price_at(std::size_t t) const { return states[t].price(); }
};

struct Transition {
    StateVector s;
    Action a = Action::Continue;
    double r = 0.0;
    std::optional<StateVector> next;  // empty when terminal

    bool terminal() const { return !next.has_value(); }
};

// Non-negative payout on stopping at step t with price s_t.
double payout(const PayoutSpec& spec, std::size_t t, double s_t, double s_0);

// beta^tau * g_tau for an episode stopped at tau.
double discounted_return(const Episode& ep, std::size_t tau);

// Per-state moneyness feature: beta^t max(K - S, 0) - max(S - K, 0).
double moneyness(const PayoutSpec& spec, std::size_t t, double s_t);

// Only Stop is admissible at the horizon.
inline bool stop_forced(const StateVector& s, std::size_t horizon) { return s.t >= horizon; }

/// A rule mapping observations to exercise decisions.
class StoppingPolicy {
public:
    virtual ~StoppingPolicy() = default;

    virtual std::string label() const = 0;
    // Hook for policies with per-episode state (pre-drawn stopping days, cached strikes).
    virtual void begin_episode(const Episode&, Rng&) {}
    virtual Action decide(const StateVector& s) const = 0;

    // Stopping time of every episode. Overridden by policies that batch their work.
    virtual std::vector<std::size_t> stopping_times(std::span<const Episode> episodes, Rng& rng);
};

// tau = min{t : policy(s_t) = Stop}, with Stop forced at T.
std::size_t stopping_time(StoppingPolicy& policy, const Episode& ep, Rng& rng);

template <typename Decide>
    requires std::is_invocable_r_v<Action, Decide, const StateVector&>
std::size_t stopping_time(Decide&& decide, const Episode& ep)
{
    const std::size_t horizon = ep.horizon();
    for (std::size_t t = 0; t < horizon; ++t) {
        if (decide(ep.states[t]) == Action::Stop) {
            return t;
        }
    }
    return horizon;
}

}  // namespace osrl
