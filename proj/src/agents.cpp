#include "osrl/agents.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <numbers>
#include <ostream>
#include <stdexcept>

namespace osrl::agents {

std::string_view to_string(Algorithm a)
{
    switch (a) {
    case Algorithm::Ddqn: return "ddqn";
    case Algorithm::C51: return "c51";
    case Algorithm::Iqn: return "iqn";
    }
    return "ddqn";
}

Algorithm parse_algorithm(std::string_view s)
{
    if (s == "ddqn") return Algorithm::Ddqn;
    if (s == "c51") return Algorithm::C51;
    if (s == "iqn") return Algorithm::Iqn;
    throw std::invalid_argument("unknown algorithm '" + std::string(s) + "' (ddqn, c51, iqn)");
}

std::string_view to_string(Task t)
{
    return t == Task::Gbm ? "gbm" : "stock";
}

Task parse_task(std::string_view s)
{
    if (s == "gbm") return Task::Gbm;
    if (s == "stock" || s == "csv") return Task::Stock;
    throw std::invalid_argument("unknown task '" + std::string(s) + "' (gbm, stock)");
}

std::string_view to_string(SyncMode m)
{
    return m == SyncMode::Hard ? "hard" : "soft";
}

SyncMode parse_sync_mode(std::string_view s)
{
    if (s == "hard") return SyncMode::Hard;
    if (s == "soft") return SyncMode::Soft;
    throw std::invalid_argument("unknown sync mode '" + std::string(s) + "' (hard, soft)");
}

std::string_view to_string(RewardMode m)
{
    return m == RewardMode::Raw ? "raw" : "pre_discounted";
}

RewardMode parse_reward_mode(std::string_view s)
{
    if (s == "raw") return RewardMode::Raw;
    if (s == "pre_discounted") return RewardMode::PreDiscounted;
    throw std::invalid_argument("unknown reward mode '" + std::string(s) + "' (raw, pre_discounted)");
}

void CategoricalSupport::validate() const
{
    if (atoms < 2) {
        throw std::invalid_argument("support: need at least 2 atoms");
    }
    if (!std::isfinite(v_min) || !std::isfinite(v_max) || !(v_min < v_max)) {
        throw std::invalid_argument("support: need finite v_min < v_max");
    }
}

AgentConfig AgentConfig::defaults(Algorithm a, Task task)
{
    AgentConfig cfg;
    cfg.algorithm = a;
    const bool gbm = task == Task::Gbm;
    switch (a) {
    case Algorithm::Ddqn:
        cfg.learning_rate = gbm ? 0.0001 : 0.005;
        cfg.batch_size = gbm ? 128 : 64;
        cfg.capacity = 10000;
        cfg.sync_every = 300;
        cfg.n_step = 7;
        cfg.dueling = true;
        break;
    case Algorithm::C51:
        cfg.learning_rate = 0.0025;
        cfg.batch_size = 64;
        cfg.capacity = 3000;
        cfg.sync_every = 30;
        cfg.sync = gbm ? SyncMode::Hard : SyncMode::Soft;
        break;
    case Algorithm::Iqn:
        cfg.learning_rate = gbm ? 0.00005 : 0.0025;
        cfg.batch_size = gbm ? 128 : 64;
        cfg.capacity = 3000;
        cfg.sync_every = gbm ? 1000 : 100;
        cfg.sync = gbm ? SyncMode::Hard : SyncMode::Soft;
        break;
    }
    return cfg;
}

void AgentConfig::validate() const
{
    const auto fail = [](const std::string& field, const std::string& rule) {
        throw std::invalid_argument("agent config: " + field + " " + rule);
    };
    if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) fail("learning_rate", "must be positive");
    if (batch_size < 1) fail("batch_size", "must be at least 1");
    if (capacity < 1) fail("capacity", "must be at least 1");
    if (sync_every < 1) fail("sync_every", "must be at least 1");
    if (!(tau > 0.0 && tau <= 1.0)) fail("tau", "must lie in (0, 1]");
    if (n_step < 1) fail("n_step", "must be at least 1");
    if (!(dropout >= 0.0 && dropout < 1.0)) fail("dropout", "must lie in [0, 1)");
    if (hidden.empty()) fail("hidden", "needs at least one layer");
    for (std::size_t w : hidden) {
        if (w < 1) fail("hidden", "widths must be positive");
    }
    if (!(kappa > 0.0)) fail("kappa", "must be positive");
    if (!(output_gain > 0.0) || !std::isfinite(output_gain)) fail("output_gain", "must be positive");
    support.validate();
    if (iqn_online_samples < 1 || iqn_target_samples < 1 || iqn_policy_samples < 1 || iqn_embedding < 1) {
        fail("iqn", "sample counts and embedding size must be at least 1");
    }
}

nlohmann::json to_json(const AgentConfig& cfg)
{
    return {
        {"algorithm", to_string(cfg.algorithm)},
        {"learning_rate", cfg.learning_rate},
        {"batch_size", cfg.batch_size},
        {"capacity", cfg.capacity},
        {"sync_every", cfg.sync_every},
        {"sync", to_string(cfg.sync)},
        {"tau", cfg.tau},
        {"n_step", cfg.n_step},
        {"dueling", cfg.dueling},
        {"double_q", cfg.double_q},
        {"dropout", cfg.dropout},
        {"hidden", cfg.hidden},
        {"kappa", cfg.kappa},
        {"reward", to_string(cfg.reward)},
        {"output_gain", cfg.output_gain},
        {"support", {{"v_min", cfg.support.v_min}, {"v_max", cfg.support.v_max}, {"atoms", cfg.support.atoms}}},
        {"iqn",
         {{"online_samples", cfg.iqn_online_samples},
          {"target_samples", cfg.iqn_target_samples},
          {"policy_samples", cfg.iqn_policy_samples},
          {"embedding", cfg.iqn_embedding}}},
    };
}

namespace {

template <typename T>
void read_field(const nlohmann::json& j, const char* key, T& out, const std::string& where)
{
    const auto it = j.find(key);
    if (it == j.end()) return;
    try {
        out = it->get<T>();
    } catch (const nlohmann::json::exception&) {
        throw std::invalid_argument(where + key + ": wrong type");
    }
}

void reject_unknown(const nlohmann::json& j, std::initializer_list<std::string_view> keys, const std::string& where)
{
    for (const auto& [k, v] : j.items()) {
        if (std::find(keys.begin(), keys.end(), k) == keys.end()) {
            throw std::invalid_argument(where + k + ": unknown field");
        }
    }
}

}  // namespace

AgentConfig agent_config_from_json(const nlohmann::json& j, Task task)
{
    if (!j.is_object()) {
        throw std::invalid_argument("agent config: expected an object");
    }
    reject_unknown(j,
                   {"algorithm", "learning_rate", "batch_size", "capacity", "sync_every", "sync", "tau", "n_step",
                    "dueling", "double_q", "dropout", "hidden", "kappa", "reward", "output_gain", "support", "iqn"},
                   "agent config: ");
    std::string name = "ddqn";
    read_field(j, "algorithm", name, "agent config: ");
    AgentConfig cfg = AgentConfig::defaults(parse_algorithm(name), task);
    read_field(j, "learning_rate", cfg.learning_rate, "agent config: ");
    read_field(j, "batch_size", cfg.batch_size, "agent config: ");
    read_field(j, "capacity", cfg.capacity, "agent config: ");
    read_field(j, "sync_every", cfg.sync_every, "agent config: ");
    if (j.contains("sync")) cfg.sync = parse_sync_mode(j.at("sync").get<std::string>());
    read_field(j, "tau", cfg.tau, "agent config: ");
    read_field(j, "n_step", cfg.n_step, "agent config: ");
    read_field(j, "dueling", cfg.dueling, "agent config: ");
    read_field(j, "double_q", cfg.double_q, "agent config: ");
    read_field(j, "dropout", cfg.dropout, "agent config: ");
    read_field(j, "hidden", cfg.hidden, "agent config: ");
    read_field(j, "kappa", cfg.kappa, "agent config: ");
    if (j.contains("reward")) cfg.reward = parse_reward_mode(j.at("reward").get<std::string>());
    read_field(j, "output_gain", cfg.output_gain, "agent config: ");
    if (const auto it = j.find("support"); it != j.end()) {
        reject_unknown(*it, {"v_min", "v_max", "atoms"}, "agent config: support.");
        read_field(*it, "v_min", cfg.support.v_min, "agent config: support.");
        read_field(*it, "v_max", cfg.support.v_max, "agent config: support.");
        read_field(*it, "atoms", cfg.support.atoms, "agent config: support.");
    }
    if (const auto it = j.find("iqn"); it != j.end()) {
        reject_unknown(*it, {"online_samples", "target_samples", "policy_samples", "embedding"}, "agent config: iqn.");
        read_field(*it, "online_samples", cfg.iqn_online_samples, "agent config: iqn.");
        read_field(*it, "target_samples", cfg.iqn_target_samples, "agent config: iqn.");
        read_field(*it, "policy_samples", cfg.iqn_policy_samples, "agent config: iqn.");
        read_field(*it, "embedding", cfg.iqn_embedding, "agent config: iqn.");
    }
    cfg.validate();
    return cfg;
}

double ExplorationSchedule::epsilon(std::size_t episode) const
{
    if (total_episodes <= 1) {
        return episode == 0 ? eps0 : eps_final;
    }
    const double p = std::min(1.0, static_cast<double>(episode) / static_cast<double>(total_episodes - 1));
    if (p <= phase1) {
        return eps0 * std::pow(eps_mid / eps0, p / phase1);
    }
    return eps_mid * std::pow(eps_final / eps_mid, (p - phase1) / (1.0 - phase1));
}

ReplayMemory::ReplayMemory(std::size_t capacity) : capacity_(capacity)
{
    if (capacity == 0) {
        throw std::invalid_argument("ReplayMemory: capacity must be positive");
    }
}

void ReplayMemory::push(EpisodeBuffer buffer)
{
    if (store_.size() == capacity_) {
        store_.pop_front();
    }
    store_.push_back(std::move(buffer));
}

std::vector<const EpisodeBuffer*> ReplayMemory::sample(std::size_t count, Rng& rng) const
{
    const std::size_t n = store_.size();
    const std::size_t k = std::min(count, n);
    std::vector<std::size_t> idx(n);
    for (std::size_t i = 0; i < n; ++i) idx[i] = i;
    std::vector<const EpisodeBuffer*> out;
    out.reserve(k);
    for (std::size_t i = 0; i < k; ++i) {
        std::swap(idx[i], idx[i + rng.index(n - i)]);
        out.push_back(&store_[idx[i]]);
    }
    return out;
}

Action select_action(double q_continue, double q_stop, std::size_t t, std::size_t horizon)
{
    if (t >= horizon) return Action::Stop;
    return q_stop > q_continue ? Action::Stop : Action::Continue;
}

std::vector<double> dueling_combine(double value, std::span<const double> advantage)
{
    const double top = *std::max_element(advantage.begin(), advantage.end());
    std::vector<double> q;
    q.reserve(advantage.size());
    for (double a : advantage) q.push_back(value + (a - top));
    return q;
}

std::vector<double> c51_project(double reward, double gamma, std::span<const double> next_probs,
                                const CategoricalSupport& support, bool terminal)
{
    support.validate();
    const std::size_t n = support.atoms;
    if (!terminal && next_probs.size() != n) {
        throw std::invalid_argument("c51_project: next_probs has " + std::to_string(next_probs.size()) +
                                    " entries for " + std::to_string(n) + " atoms");
    }
    const double dz = support.delta();
    std::vector<double> m(n, 0.0);
    const auto place = [&](double v, double mass) {
        v = std::clamp(v, support.v_min, support.v_max);
        double b = std::clamp((v - support.v_min) / dz, 0.0, static_cast<double>(n - 1));
        const double nearest = std::round(b);
        if (std::abs(b - nearest) < 1e-12) b = nearest;
        const auto l = static_cast<std::size_t>(std::floor(b));
        const auto u = static_cast<std::size_t>(std::ceil(b));
        if (l == u) {
            m[l] += mass;
        } else {
            m[l] += mass * (static_cast<double>(u) - b);
            m[u] += mass * (b - static_cast<double>(l));
        }
    };
    if (terminal) {
        place(reward, 1.0);
        return m;
    }
    for (std::size_t k = 0; k < n; ++k) {
        if (next_probs[k] != 0.0) place(reward + gamma * support.atom(k), next_probs[k]);
    }
    return m;
}

std::vector<double> cosine_features(double tau, std::size_t n)
{
    if (!(tau > 0.0 && tau < 1.0)) {
        throw std::invalid_argument("cosine_features: tau must lie in (0, 1)");
    }
    std::vector<double> f(n);
    for (std::size_t i = 0; i < n; ++i) f[i] = std::cos(std::numbers::pi * static_cast<double>(i) * tau);
    return f;
}

QuantileLoss quantile_huber_loss(const nn::Matrix& delta, std::span<const double> taus, double kappa)
{
    if (!(kappa > 0.0)) {
        throw std::invalid_argument("quantile_huber_loss: kappa must be positive");
    }
    if (static_cast<std::size_t>(delta.rows()) != taus.size()) {
        throw std::invalid_argument("quantile_huber_loss: one quantile level per row expected");
    }
    QuantileLoss out;
    out.grad.resize(delta.rows(), delta.cols());
    const double per_target = 1.0 / static_cast<double>(delta.cols());
    for (Eigen::Index i = 0; i < delta.rows(); ++i) {
        for (Eigen::Index j = 0; j < delta.cols(); ++j) {
            const double d = delta(i, j);
            const double w = std::abs(taus[static_cast<std::size_t>(i)] - (d < 0.0 ? 1.0 : 0.0));
            const nn::LossGrad h = nn::huber_loss(d, 0.0, kappa);
            out.loss += w * h.loss / kappa * per_target;
            out.grad(i, j) = w * h.grad / kappa * per_target;
        }
    }
    return out;
}

std::vector<NStepReturn> n_step_returns(const EpisodeBuffer& b, double gamma, std::size_t n)
{
    if (n < 1) {
        throw std::invalid_argument("n_step_returns: n must be at least 1");
    }
    std::vector<NStepReturn> out(b.size());
    for (std::size_t j = 0; j < b.size(); ++j) {
        NStepReturn& ret = out[j];
        double g = 1.0;
        for (std::size_t k = 0;; ++k) {
            const Transition& tr = b.transitions[j + k];
            ret.partial += g * tr.r;
            if (tr.terminal()) break;
            g *= gamma;
            if (k + 1 == n || j + k + 1 == b.size()) {
                ret.next = &*tr.next;
                ret.discount = g;
                break;
            }
        }
    }
    return out;
}

std::vector<double> ddqn_targets(const EpisodeBuffer& b, double gamma, std::size_t n,
                                 const std::function<double(const StateVector&)>& bootstrap)
{
    std::vector<double> y;
    for (const NStepReturn& ret : n_step_returns(b, gamma, n)) {
        y.push_back(ret.next != nullptr ? ret.partial + ret.discount * bootstrap(*ret.next) : ret.partial);
    }
    return y;
}

QuantileEmbedding::QuantileEmbedding(std::size_t n_cos, std::size_t width, Rng& init)
    : n_cos_(n_cos), net_({n_cos, width}, nn::Activation::Relu, nn::Activation::Relu, 0.0, init)
{
}

nn::Matrix QuantileEmbedding::features(std::span<const double> taus) const
{
    nn::Matrix f(static_cast<Eigen::Index>(taus.size()), static_cast<Eigen::Index>(n_cos_));
    for (std::size_t r = 0; r < taus.size(); ++r) {
        const auto row = cosine_features(taus[r], n_cos_);
        for (std::size_t i = 0; i < n_cos_; ++i) f(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(i)) = row[i];
    }
    return f;
}

nn::Matrix QuantileEmbedding::forward(std::span<const double> taus) const
{
    return net_.forward(features(taus));
}

nn::ParamRefs AgentNet::params()
{
    nn::ParamRefs out;
    body.params(out);
    embed.net().params(out);
    head.params(out);
    return out;
}

nn::ConstParamRefs AgentNet::params() const
{
    nn::ConstParamRefs out;
    body.params(out);
    embed.net().params(out);
    head.params(out);
    return out;
}

std::vector<nn::NamedTensor> AgentNet::named()
{
    std::vector<nn::NamedTensor> out;
    body.named("body", out);
    embed.net().named("embed", out);
    head.named("head", out);
    return out;
}

namespace {

AgentNet zeros_like(const AgentNet& net)
{
    AgentNet z = net;
    z.body = net.body.zeros_like();
    z.embed.net() = net.embed.net().zeros_like();
    z.head = net.head.zeros_like();
    return z;
}

Eigen::Index idx(std::size_t i)
{
    return static_cast<Eigen::Index>(i);
}

}  // namespace

Agent::Agent(AgentConfig cfg, PayoutSpec spec) : cfg_(std::move(cfg)), spec_(spec)
{
    cfg_.validate();
    spec_.validate();
    input_ = nn::Standardizer::identity(spec_.feature_width());
    adam_.learning_rate = cfg_.learning_rate;
}

void Agent::initialize(std::uint64_t seed)
{
    Rng init(seed);
    online_ = make_net(init);
    target_ = std::make_unique<Net>(*online_);
    grads_ = std::make_unique<Net>(zeros_like(*online_));
}

std::string Agent::label() const
{
    switch (cfg_.algorithm) {
    case Algorithm::Ddqn: return "DDQN";
    case Algorithm::C51: return "C51";
    case Algorithm::Iqn: return "IQN";
    }
    return "DDQN";
}

nn::Matrix Agent::standardize(std::span<const StateVector> states) const
{
    const std::size_t width = spec_.feature_width();
    nn::Matrix x(idx(states.size()), idx(width));
    for (std::size_t r = 0; r < states.size(); ++r) {
        if (states[r].features.size() != width) {
            throw std::invalid_argument("agent: state has " + std::to_string(states[r].features.size()) +
                                        " features, expected " + std::to_string(width));
        }
        for (std::size_t c = 0; c < width; ++c) x(idx(r), idx(c)) = states[r].features[c];
    }
    return input_.apply(x);
}

nn::Matrix Agent::standardize(const std::vector<const StateVector*>& states) const
{
    const std::size_t width = spec_.feature_width();
    nn::Matrix x(idx(states.size()), idx(width));
    for (std::size_t r = 0; r < states.size(); ++r) {
        for (std::size_t c = 0; c < width; ++c) x(idx(r), idx(c)) = states[r]->features.at(c);
    }
    return input_.apply(x);
}

nn::Matrix Agent::action_values(std::span<const StateVector> states) const
{
    return values(*online_, standardize(states));
}

nn::Matrix Agent::target_action_values(std::span<const StateVector> states) const
{
    return values(*target_, standardize(states));
}

Action Agent::decide(const StateVector& s) const
{
    if (stop_forced(s, spec_.horizon)) return Action::Stop;
    const nn::Matrix q = action_values(std::span<const StateVector>(&s, 1));
    return select_action(q(0, 0), q(0, 1), s.t, spec_.horizon);
}

std::size_t Agent::greedy_stop(const Episode& ep) const
{
    const nn::Matrix q = action_values(std::span<const StateVector>(ep.states.data(), ep.horizon()));
    for (std::size_t t = 0; t < ep.horizon(); ++t) {
        if (select_action(q(idx(t), 0), q(idx(t), 1), t, ep.horizon()) == Action::Stop) return t;
    }
    return ep.horizon();
}

std::vector<std::size_t> Agent::stopping_times(std::span<const Episode> episodes, Rng&)
{
    constexpr std::size_t chunk = 128;
    std::vector<std::size_t> out;
    out.reserve(episodes.size());
    std::vector<StateVector> states;
    for (std::size_t lo = 0; lo < episodes.size(); lo += chunk) {
        const std::size_t hi = std::min(episodes.size(), lo + chunk);
        states.clear();
        for (std::size_t e = lo; e < hi; ++e) {
            states.insert(states.end(), episodes[e].states.begin(), episodes[e].states.begin() + idx(episodes[e].horizon()));
        }
        const nn::Matrix q = action_values(states);
        std::size_t row = 0;
        for (std::size_t e = lo; e < hi; ++e) {
            const std::size_t horizon = episodes[e].horizon();
            std::size_t tau = horizon;
            for (std::size_t t = 0; t < horizon; ++t) {
                if (select_action(q(idx(row + t), 0), q(idx(row + t), 1), t, horizon) == Action::Stop) {
                    tau = t;
                    break;
                }
            }
            row += horizon;
            out.push_back(tau);
        }
    }
    return out;
}

void Agent::fit_inputs(std::span<const Episode> episodes)
{
    std::vector<StateVector> states;
    for (const Episode& ep : episodes) states.insert(states.end(), ep.states.begin(), ep.states.end());
    if (states.empty()) return;
    nn::Matrix x(idx(states.size()), idx(spec_.feature_width()));
    for (std::size_t r = 0; r < states.size(); ++r) {
        for (std::size_t c = 0; c < spec_.feature_width(); ++c) x(idx(r), idx(c)) = states[r].features.at(c);
    }
    input_ = nn::Standardizer::fit(x);
    inputs_fitted_ = true;
}

double Agent::reward(const Episode& ep, std::size_t t) const
{
    return cfg_.reward == RewardMode::Raw ? payout(ep.spec, t, ep.price_at(t), ep.anchor) : discounted_return(ep, t);
}

double Agent::gamma() const
{
    return cfg_.reward == RewardMode::Raw ? spec_.discount : 1.0;
}

std::vector<Action> Agent::bootstrap_actions(const nn::Matrix& x_next, const std::vector<std::size_t>& t_next) const
{
    return argmax_actions(values(cfg_.double_q ? *online_ : *target_, x_next), t_next);
}

std::vector<Action> Agent::argmax_actions(const nn::Matrix& q, const std::vector<std::size_t>& t) const
{
    std::vector<Action> out(t.size());
    for (std::size_t i = 0; i < t.size(); ++i) {
        out[i] = select_action(q(idx(i), 0), q(idx(i), 1), t[i], spec_.horizon);
    }
    return out;
}

double Agent::train_step(const ReplayMemory& mem, Rng& rng)
{
    if (mem.empty()) return 0.0;
    const auto buffers = mem.sample(cfg_.batch_size, rng);
    std::vector<const Transition*> batch;
    std::vector<NStepReturn> returns;
    for (const EpisodeBuffer* b : buffers) {
        const auto r = n_step_returns(*b, gamma(), cfg_.n_step);
        for (std::size_t i = 0; i < b->size(); ++i) {
            batch.push_back(&b->transitions[i]);
            returns.push_back(r[i]);
        }
    }
    nn::ParamRefs grads = grads_->params();
    nn::zero(grads);
    const double loss = learn(batch, returns, rng);

    nn::ParamRefs online = online_->params();
    nn::adam_step(online, nn::as_const(grads), adam_);
    ++updates_;
    if (cfg_.sync == SyncMode::Hard) {
        if (updates_ % cfg_.sync_every == 0) sync_target();
    } else {
        nn::soft_update(std::as_const(*online_).params(), target_->params(), cfg_.tau);
    }
    return loss;
}

nn::ParamRefs Agent::online_params()
{
    return online_->params();
}

nn::ParamRefs Agent::target_params()
{
    return target_->params();
}

void Agent::sync_target()
{
    nn::copy_params(std::as_const(*online_).params(), target_->params());
}

namespace {

nlohmann::json spec_json(const PayoutSpec& spec)
{
    return {{"kind", to_string(spec.kind)},
            {"discount", spec.discount},
            {"horizon", spec.horizon},
            {"window", spec.window},
            {"warmup", spec.warmup}};
}

}  // namespace

nlohmann::json Agent::checkpoint() const
{
    Net online = *online_;
    Net target = *target_;
    nn::Standardizer input = input_;
    std::vector<nn::NamedTensor> tensors;
    input.named("input", tensors);
    for (auto& t : online.named()) {
        t.name = "online." + t.name;
        tensors.push_back(t);
    }
    for (auto& t : target.named()) {
        t.name = "target." + t.name;
        tensors.push_back(t);
    }
    const nlohmann::json meta = {{"algorithm", to_string(cfg_.algorithm)},
                                 {"config", to_json(cfg_)},
                                 {"spec", spec_json(spec_)},
                                 {"updates", updates_},
                                 {"inputs_fitted", inputs_fitted_}};
    return nn::tensors_to_json(tensors, meta);
}

void Agent::load(const nlohmann::json& doc)
{
    const auto& meta = doc.at("meta");
    if (meta.at("algorithm").get<std::string>() != to_string(cfg_.algorithm)) {
        throw std::invalid_argument("checkpoint holds a " + meta.at("algorithm").get<std::string>() +
                                    " agent, expected " + std::string(to_string(cfg_.algorithm)));
    }
    const auto& s = meta.at("spec");
    if (s.at("horizon").get<std::size_t>() != spec_.horizon || s.at("window").get<std::size_t>() != spec_.window) {
        throw std::invalid_argument("checkpoint horizon/window do not match the payout spec");
    }
    std::vector<nn::NamedTensor> tensors;
    input_.named("input", tensors);
    for (auto& t : online_->named()) {
        t.name = "online." + t.name;
        tensors.push_back(t);
    }
    for (auto& t : target_->named()) {
        t.name = "target." + t.name;
        tensors.push_back(t);
    }
    nn::tensors_from_json(doc, tensors);
    updates_ = meta.value("updates", std::size_t{0});
    inputs_fitted_ = meta.value("inputs_fitted", true);
}

namespace {

class DdqnAgent final : public Agent {
public:
    using Agent::Agent;

protected:
    std::unique_ptr<Net> make_net(Rng& init) const override
    {
        auto net = std::make_unique<Net>();
        std::vector<std::size_t> widths{spec_.feature_width()};
        widths.insert(widths.end(), cfg_.hidden.begin(), cfg_.hidden.end());
        widths.push_back(cfg_.dueling ? 3 : 2);
        net->body = nn::Mlp(widths, nn::Activation::Relu, nn::Activation::Identity, cfg_.dropout, init,
                            cfg_.output_gain);
        return net;
    }

    nn::Matrix combine(const nn::Matrix& out) const
    {
        if (!cfg_.dueling) return out;
        nn::Matrix q(out.rows(), 2);
        for (Eigen::Index i = 0; i < out.rows(); ++i) {
            const double top = std::max(out(i, 1), out(i, 2));
            q(i, 0) = out(i, 0) + (out(i, 1) - top);
            q(i, 1) = out(i, 0) + (out(i, 2) - top);
        }
        return q;
    }

    nn::Matrix values(const Net& net, const nn::Matrix& x) const override
    {
        return combine(net.body.forward(x));
    }

    double learn(const std::vector<const Transition*>& batch, const std::vector<NStepReturn>& returns,
                 Rng& rng) override
    {
        const std::size_t n = batch.size();
        std::vector<const StateVector*> states(n);
        std::vector<const StateVector*> next;
        std::vector<std::size_t> t_next;
        std::vector<std::size_t> next_row(n, 0);
        for (std::size_t i = 0; i < n; ++i) {
            states[i] = &batch[i]->s;
            if (returns[i].next != nullptr) {
                next_row[i] = next.size();
                next.push_back(returns[i].next);
                t_next.push_back(returns[i].next->t);
            }
        }
        std::vector<double> y(n);
        if (!next.empty()) {
            const nn::Matrix x_next = standardize(next);
            const auto a_star = bootstrap_actions(x_next, t_next);
            const nn::Matrix q_next = values(*target_, x_next);
            for (std::size_t i = 0; i < n; ++i) {
                if (returns[i].next != nullptr) {
                    const std::size_t r = next_row[i];
                    y[i] = returns[i].partial +
                           returns[i].discount * q_next(idx(r), a_star[r] == Action::Stop ? 1 : 0);
                }
            }
        }
        for (std::size_t i = 0; i < n; ++i) {
            if (returns[i].next == nullptr) y[i] = returns[i].partial;
        }

        nn::Mlp::Trace trace;
        const nn::Matrix out = online_->body.forward(standardize(states), nn::Mode::Train, &rng, &trace);
        const nn::Matrix q = combine(out);
        nn::Matrix grad = nn::Matrix::Zero(out.rows(), out.cols());
        const double scale = 1.0 / static_cast<double>(n);
        double loss = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            const int a = batch[i]->a == Action::Stop ? 1 : 0;
            const nn::LossGrad h = nn::huber_loss(q(idx(i), a), y[i], cfg_.kappa);
            loss += h.loss * scale;
            const double g = h.grad * scale;
            if (cfg_.dueling) {
                const int best = out(idx(i), 2) > out(idx(i), 1) ? 1 : 0;
                grad(idx(i), 0) += g;
                grad(idx(i), 1 + a) += g;
                grad(idx(i), 1 + best) -= g;
            } else {
                grad(idx(i), a) += g;
            }
        }
        online_->body.backward(trace, grad, grads_->body);
        return loss;
    }
};

class C51Agent final : public Agent {
public:
    using Agent::Agent;

protected:
    std::size_t atoms() const { return cfg_.support.atoms; }

    std::unique_ptr<Net> make_net(Rng& init) const override
    {
        auto net = std::make_unique<Net>();
        std::vector<std::size_t> widths{spec_.feature_width()};
        widths.insert(widths.end(), cfg_.hidden.begin(), cfg_.hidden.end());
        widths.push_back(2 * atoms());
        net->body = nn::Mlp(widths, nn::Activation::Relu, nn::Activation::Identity, cfg_.dropout, init,
                            cfg_.output_gain);
        return net;
    }

    std::vector<double> probs(const nn::Matrix& logits, Eigen::Index row, int action) const
    {
        return nn::softmax(std::span<const double>(logits.row(row).data() + action * idx(atoms()), atoms()));
    }

    nn::Matrix values(const Net& net, const nn::Matrix& x) const override
    {
        const nn::Matrix logits = net.body.forward(x);
        nn::Matrix q(logits.rows(), 2);
        for (Eigen::Index i = 0; i < logits.rows(); ++i) {
            for (int a = 0; a < 2; ++a) {
                const auto p = probs(logits, i, a);
                double mean = 0.0;
                for (std::size_t k = 0; k < atoms(); ++k) mean += cfg_.support.atom(k) * p[k];
                q(i, a) = mean;
            }
        }
        return q;
    }

    double learn(const std::vector<const Transition*>& batch, const std::vector<NStepReturn>& returns,
                 Rng& rng) override
    {
        const std::size_t n = batch.size();
        std::vector<const StateVector*> states(n);
        std::vector<const StateVector*> next;
        std::vector<std::size_t> t_next;
        std::vector<std::size_t> next_row(n, 0);
        for (std::size_t i = 0; i < n; ++i) {
            states[i] = &batch[i]->s;
            if (returns[i].next != nullptr) {
                next_row[i] = next.size();
                next.push_back(returns[i].next);
                t_next.push_back(returns[i].next->t);
            }
        }
        std::vector<std::vector<double>> m(n);
        if (!next.empty()) {
            const nn::Matrix x_next = standardize(next);
            const auto a_star = bootstrap_actions(x_next, t_next);
            const nn::Matrix logits_next = target_->body.forward(x_next);
            for (std::size_t i = 0; i < n; ++i) {
                if (returns[i].next == nullptr) continue;
                const std::size_t r = next_row[i];
                const auto p = probs(logits_next, idx(r), a_star[r] == Action::Stop ? 1 : 0);
                m[i] = c51_project(returns[i].partial, returns[i].discount, p, cfg_.support, false);
            }
        }
        for (std::size_t i = 0; i < n; ++i) {
            if (returns[i].next == nullptr) m[i] = c51_project(returns[i].partial, 0.0, {}, cfg_.support, true);
        }

        nn::Mlp::Trace trace;
        const nn::Matrix logits = online_->body.forward(standardize(states), nn::Mode::Train, &rng, &trace);
        nn::Matrix grad = nn::Matrix::Zero(logits.rows(), logits.cols());
        const double scale = 1.0 / static_cast<double>(n);
        double loss = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            const int a = batch[i]->a == Action::Stop ? 1 : 0;
            const Eigen::Index off = a * idx(atoms());
            const auto ce = nn::softmax_cross_entropy(
                std::span<const double>(logits.row(idx(i)).data() + off, atoms()), m[i]);
            loss += ce.loss * scale;
            for (std::size_t k = 0; k < atoms(); ++k) grad(idx(i), off + idx(k)) = ce.grad[k] * scale;
        }
        online_->body.backward(trace, grad, grads_->body);
        return loss;
    }
};

class IqnAgent final : public Agent {
public:
    using Agent::Agent;

protected:
    std::size_t width() const { return cfg_.hidden.back(); }

    std::unique_ptr<Net> make_net(Rng& init) const override
    {
        auto net = std::make_unique<Net>();
        std::vector<std::size_t> widths{spec_.feature_width()};
        widths.insert(widths.end(), cfg_.hidden.begin(), cfg_.hidden.end());
        net->body = nn::Mlp(widths, nn::Activation::Relu, nn::Activation::Relu, cfg_.dropout, init);
        net->embed = QuantileEmbedding(cfg_.iqn_embedding, width(), init);
        net->head = nn::Mlp({width(), 2}, nn::Activation::Identity, nn::Activation::Identity, 0.0, init,
                            cfg_.output_gain);
        return net;
    }

    // Rows i * m + j hold h_i * e_j.
    static nn::Matrix merge(const nn::Matrix& h, const nn::Matrix& e)
    {
        const Eigen::Index m = e.rows();
        nn::Matrix out(h.rows() * m, h.cols());
        for (Eigen::Index i = 0; i < h.rows(); ++i) {
            for (Eigen::Index j = 0; j < m; ++j) out.row(i * m + j) = h.row(i).cwiseProduct(e.row(j));
        }
        return out;
    }

    std::vector<double> policy_levels() const
    {
        const std::size_t k = cfg_.iqn_policy_samples;
        std::vector<double> taus(k);
        for (std::size_t i = 0; i < k; ++i) taus[i] = (static_cast<double>(i) + 0.5) / static_cast<double>(k);
        return taus;
    }

    static std::vector<double> sample_levels(std::size_t k, Rng& rng)
    {
        std::vector<double> taus(k);
        for (double& t : taus) t = rng.uniform_open();
        return taus;
    }

    // (states * levels) x 2 quantile values.
    static nn::Matrix quantiles(const Net& net, const nn::Matrix& x, std::span<const double> taus)
    {
        return net.head.forward(merge(net.body.forward(x), net.embed.forward(taus)));
    }

    nn::Matrix values(const Net& net, const nn::Matrix& x) const override
    {
        const auto taus = policy_levels();
        const nn::Matrix z = quantiles(net, x, taus);
        const auto m = idx(taus.size());
        nn::Matrix q(x.rows(), 2);
        for (Eigen::Index i = 0; i < x.rows(); ++i) {
            q.row(i) = z.middleRows(i * m, m).colwise().mean();
        }
        return q;
    }

    double learn(const std::vector<const Transition*>& batch, const std::vector<NStepReturn>& returns,
                 Rng& rng) override
    {
        const std::size_t n = batch.size();
        const std::size_t n_online = cfg_.iqn_online_samples;
        const std::size_t n_target = cfg_.iqn_target_samples;
        std::vector<const StateVector*> states(n);
        std::vector<const StateVector*> next;
        std::vector<std::size_t> t_next;
        std::vector<std::size_t> next_row(n, 0);
        for (std::size_t i = 0; i < n; ++i) {
            states[i] = &batch[i]->s;
            if (returns[i].next != nullptr) {
                next_row[i] = next.size();
                next.push_back(returns[i].next);
                t_next.push_back(returns[i].next->t);
            }
        }
        const auto target_taus = sample_levels(n_target, rng);
        nn::Matrix y(idx(n), idx(n_target));
        if (!next.empty()) {
            const nn::Matrix x_next = standardize(next);
            const nn::Matrix z_next = quantiles(*target_, x_next, target_taus);
            // greedy bootstrap action from the mean over the same sampled levels
            const nn::Matrix z_pick = cfg_.double_q ? quantiles(*online_, x_next, target_taus) : z_next;
            nn::Matrix q_pick(x_next.rows(), 2);
            for (Eigen::Index r = 0; r < x_next.rows(); ++r) {
                q_pick.row(r) = z_pick.middleRows(r * idx(n_target), idx(n_target)).colwise().mean();
            }
            const auto a_star = argmax_actions(q_pick, t_next);
            for (std::size_t i = 0; i < n; ++i) {
                if (returns[i].next == nullptr) continue;
                const std::size_t r = next_row[i];
                const int a = a_star[r] == Action::Stop ? 1 : 0;
                for (std::size_t j = 0; j < n_target; ++j) {
                    y(idx(i), idx(j)) = returns[i].partial + returns[i].discount * z_next(idx(r * n_target + j), a);
                }
            }
        }
        for (std::size_t i = 0; i < n; ++i) {
            if (returns[i].next == nullptr) y.row(idx(i)).setConstant(returns[i].partial);
        }

        const auto taus = sample_levels(n_online, rng);
        nn::Mlp::Trace body_trace, embed_trace, head_trace;
        const nn::Matrix h = online_->body.forward(standardize(states), nn::Mode::Train, &rng, &body_trace);
        const nn::Matrix e =
            online_->embed.net().forward(online_->embed.features(taus), nn::Mode::Eval, nullptr, &embed_trace);
        const nn::Matrix merged = merge(h, e);
        const nn::Matrix z = online_->head.forward(merged, nn::Mode::Eval, nullptr, &head_trace);

        nn::Matrix grad_z = nn::Matrix::Zero(z.rows(), 2);
        const double scale = 1.0 / static_cast<double>(n);
        double loss = 0.0;
        nn::Matrix delta(idx(n_online), idx(n_target));
        for (std::size_t i = 0; i < n; ++i) {
            const int a = batch[i]->a == Action::Stop ? 1 : 0;
            for (std::size_t q = 0; q < n_online; ++q) {
                const double pred = z(idx(i * n_online + q), a);
                for (std::size_t j = 0; j < n_target; ++j) delta(idx(q), idx(j)) = y(idx(i), idx(j)) - pred;
            }
            const QuantileLoss ql = quantile_huber_loss(delta, taus, cfg_.kappa);
            loss += ql.loss * scale;
            for (std::size_t q = 0; q < n_online; ++q) {
                grad_z(idx(i * n_online + q), a) = -ql.grad.row(idx(q)).sum() * scale;
            }
        }
        const nn::Matrix grad_merged = online_->head.backward(head_trace, grad_z, grads_->head);
        const auto m = idx(n_online);
        nn::Matrix grad_h = nn::Matrix::Zero(h.rows(), h.cols());
        nn::Matrix grad_e = nn::Matrix::Zero(e.rows(), e.cols());
        for (Eigen::Index i = 0; i < h.rows(); ++i) {
            for (Eigen::Index j = 0; j < m; ++j) {
                grad_h.row(i) += grad_merged.row(i * m + j).cwiseProduct(e.row(j));
                grad_e.row(j) += grad_merged.row(i * m + j).cwiseProduct(h.row(i));
            }
        }
        online_->body.backward(body_trace, grad_h, grads_->body);
        online_->embed.net().backward(embed_trace, grad_e, grads_->embed.net());
        return loss;
    }
};

}  // namespace

std::unique_ptr<Agent> make_agent(const AgentConfig& cfg, const PayoutSpec& spec, std::uint64_t seed)
{
    std::unique_ptr<Agent> agent;
    switch (cfg.algorithm) {
    case Algorithm::Ddqn: agent = std::make_unique<DdqnAgent>(cfg, spec); break;
    case Algorithm::C51: agent = std::make_unique<C51Agent>(cfg, spec); break;
    case Algorithm::Iqn: agent = std::make_unique<IqnAgent>(cfg, spec); break;
    }
    agent->initialize(seed);
    return agent;
}

EpisodeBuffer run_episode(const Agent& agent, const Episode& ep, double epsilon, Rng& rng)
{
    const std::size_t horizon = ep.horizon();
    const std::size_t t_stop = rng.uniform() < epsilon ? rng.index(horizon + 1) : agent.greedy_stop(ep);
    EpisodeBuffer b;
    b.transitions.reserve(t_stop + 1);
    for (std::size_t t = 0; t <= t_stop; ++t) {
        Transition tr;
        tr.s = ep.states[t];
        if (t == t_stop) {
            tr.a = Action::Stop;
            tr.r = agent.reward(ep, t);
        } else {
            tr.next = ep.states[t + 1];
        }
        b.transitions.push_back(std::move(tr));
    }
    return b;
}

namespace {

double greedy_er(Agent& agent, std::span<const Episode> episodes, Rng& rng)
{
    const auto taus = agent.stopping_times(episodes, rng);
    double sum = 0.0;
    for (std::size_t i = 0; i < episodes.size(); ++i) sum += discounted_return(episodes[i], taus[i]);
    return sum / static_cast<double>(episodes.size());
}

}  // namespace

TrainResult train(Agent& agent, const market::Dataset& data, const TrainOptions& opts, std::uint64_t seed,
                  std::span<const Episode> eval_set)
{
    TrainResult result;
    if (opts.episodes == 0) return result;
    market::EpisodeSampler sampler(data, agent.spec(), opts.episode, opts.shuffle);
    if (sampler.admissible() == 0) {
        throw std::invalid_argument("train: the training data admits no episode");
    }
    std::size_t m = opts.episodes;
    if (opts.max_epochs > 0) m = std::min(m, opts.max_epochs * sampler.admissible());
    result.episodes = m;

    if (!agent.inputs_fitted()) {
        Rng fit_rng(derive_seed(seed, 1));
        const auto sample = market::draw_episodes(data, agent.spec(), std::min<std::size_t>(1000, sampler.admissible()),
                                                  fit_rng, opts.episode);
        agent.fit_inputs(sample);
    }

    Rng rng(derive_seed(seed, 2));
    Rng eval_rng(derive_seed(seed, 3));
    ReplayMemory memory(agent.config().capacity);
    ExplorationSchedule schedule;
    schedule.total_episodes = m;
    nlohmann::json best;
    for (std::size_t e = 0; e < m; ++e) {
        const Episode ep = sampler.next(rng);
        TrainLogRow row;
        row.episode = e + 1;
        row.epsilon = schedule.epsilon(e);
        memory.push(run_episode(agent, ep, row.epsilon, rng));
        row.loss = agent.train_step(memory, rng);
        if (!std::isfinite(row.loss)) {
            throw std::runtime_error("train: non-finite loss at episode " + std::to_string(row.episode));
        }
        if (opts.eval_every > 0 && row.episode % opts.eval_every == 0 && !eval_set.empty()) {
            row.eval_er = greedy_er(agent, eval_set, eval_rng);
            if (!result.best_episode || *row.eval_er > result.best_eval_er) {
                result.best_episode = row.episode;
                result.best_eval_er = *row.eval_er;
                if (opts.keep_best) best = agent.checkpoint();
            }
        }
        if (opts.checkpoint_every > 0 && row.episode % opts.checkpoint_every == 0 && opts.on_checkpoint) {
            opts.on_checkpoint(row.episode, agent);
        }
        result.log.push_back(row);
    }
    if (opts.keep_best && !best.is_null()) agent.load(best);
    return result;
}

void write_train_log(const std::vector<TrainLogRow>& log, std::ostream& out)
{
    out << "episode,epsilon,loss,eval_er\n";
    out << std::setprecision(12);
    for (const auto& row : log) {
        out << row.episode << ',' << row.epsilon << ',' << row.loss << ',';
        if (row.eval_er) out << *row.eval_er;
        out << '\n';
    }
}

}  // namespace osrl::agents
