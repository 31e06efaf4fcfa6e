#include "osrl/core.hpp"

#include <algorithm>
#include <cmath>

namespace osrl {

std::string_view to_string(Action a)
{
    return a == Action::Stop ? "stop" : "continue";
}

std::string_view to_string(PayoutKind k)
{
    switch (k) {
    case PayoutKind::Put: return "put";
    case PayoutKind::Call: return "call";
    case PayoutKind::RelativePut: return "relative_put";
    }
    return "put";
}

PayoutKind parse_payout_kind(std::string_view s)
{
    if (s == "put") return PayoutKind::Put;
    if (s == "call") return PayoutKind::Call;
    if (s == "relative_put") return PayoutKind::RelativePut;
    throw std::invalid_argument("unknown payout kind '" + std::string(s) + "'");
}

void PayoutSpec::validate() const
{
    if (!(discount >= 0.0 && discount <= 1.0)) {
        throw std::invalid_argument("payout: discount must lie in [0, 1]");
    }
    if (!(strike > 0.0)) {
        throw std::invalid_argument("payout: strike must be positive");
    }
    if (horizon < 1) {
        throw std::invalid_argument("payout: horizon must be at least 1");
    }
    if (window < 1) {
        throw std::invalid_argument("payout: window must be at least 1");
    }
}

void Trajectory::validate() const
{
    if (prices.empty()) {
        throw std::invalid_argument("trajectory '" + id + "' has no prices");
    }
    for (std::size_t i = 0; i < prices.size(); ++i) {
        if (!(prices[i] > 0.0) || !std::isfinite(prices[i])) {
            throw std::invalid_argument("trajectory '" + id + "': non-positive price at index " + std::to_string(i));
        }
    }
    if (!dates.empty() && dates.size() != prices.size()) {
        throw std::invalid_argument("trajectory '" + id + "': dates and prices differ in length");
    }
}

double payout(const PayoutSpec& spec, std::size_t t, double s_t, double s_0)
{
    if (!(s_t > 0.0) || !(s_0 > 0.0)) {
        throw std::invalid_argument("payout: prices must be positive");
    }
    if (t > spec.horizon) {
        throw std::invalid_argument("payout: step beyond horizon");
    }
    switch (spec.kind) {
    case PayoutKind::Put: return std::max(0.0, spec.strike - s_t);
    case PayoutKind::Call: return std::max(0.0, s_t - spec.strike);
    case PayoutKind::RelativePut: return std::max(0.0, s_0 - s_t) / s_0;
    }
    return 0.0;
}

double discounted_return(const Episode& ep, std::size_t tau)
{
    return std::pow(ep.spec.discount, static_cast<double>(tau)) * payout(ep.spec, tau, ep.price_at(tau), ep.anchor);
}

double moneyness(const PayoutSpec& spec, std::size_t t, double s_t)
{
    return std::pow(spec.discount, static_cast<double>(t)) * std::max(spec.strike - s_t, 0.0)
         - std::max(s_t - spec.strike, 0.0);
}

std::vector<std::size_t> StoppingPolicy::stopping_times(std::span<const Episode> episodes, Rng& rng)
{
    std::vector<std::size_t> taus;
    taus.reserve(episodes.size());
    for (const Episode& ep : episodes) {
        taus.push_back(stopping_time(*this, ep, rng));
    }
    return taus;
}

std::size_t stopping_time(StoppingPolicy& policy, const Episode& ep, Rng& rng)
{
    policy.begin_episode(ep, rng);
    const StoppingPolicy& frozen = policy;
    return stopping_time([&frozen](const StateVector& s) { return frozen.decide(s); }, ep);
}

}  // namespace osrl
