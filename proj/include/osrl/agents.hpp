#pragma once

#include "osrl/core.hpp"
#include "osrl/market.hpp"
#include "osrl/nn.hpp"

#include <nlohmann/json.hpp>

#include <array>
#include <cstdint>
#include <deque>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace osrl::agents {

enum class Algorithm : std::uint8_t { Ddqn, C51, Iqn };
enum class Task : std::uint8_t { Gbm, Stock };
enum class SyncMode : std::uint8_t { Hard, Soft };
// Raw: r = g_t on Stop and gamma = beta. PreDiscounted: r = beta^t g_t and gamma = 1.
enum class RewardMode : std::uint8_t { Raw, PreDiscounted };

std::string_view to_string(Algorithm a);
Algorithm parse_algorithm(std::string_view s);
std::string_view to_string(Task t);
Task parse_task(std::string_view s);
std::string_view to_string(SyncMode m);
SyncMode parse_sync_mode(std::string_view s);
std::string_view to_string(RewardMode m);
RewardMode parse_reward_mode(std::string_view s);

/// Evenly spaced atoms z_k = v_min + k dz on [v_min, v_max].
struct CategoricalSupport {
    double v_min = 0.0;
    double v_max = 1.0;
    std::size_t atoms = 51;

    void validate() const;
    double delta() const { return (v_max - v_min) / static_cast<double>(atoms - 1); }
    double atom(std::size_t k) const { return v_min + static_cast<double>(k) * delta(); }

    bool operator==(const CategoricalSupport&) const = default;
};

struct AgentConfig {
    Algorithm algorithm = Algorithm::Ddqn;
    double learning_rate = 1e-4;
    std::size_t batch_size = 128;  // buffers per update
    std::size_t capacity = 10000;  // C, episodes
    std::size_t sync_every = 300;  // U, episodes (hard sync)
    SyncMode sync = SyncMode::Hard;
    double tau = 0.001;  // soft sync rate
    std::size_t n_step = 1;
    bool dueling = false;
    bool double_q = true;
    double dropout = 0.2;
    std::vector<std::size_t> hidden = {64, 64};
    double kappa = 1.0;
    RewardMode reward = RewardMode::Raw;
    // Scale of the initial output weights, so that initial values sit near payout scale.
    double output_gain = 0.1;

    CategoricalSupport support;

    std::size_t iqn_online_samples = 8;  // N
    std::size_t iqn_target_samples = 8;  // N'
    std::size_t iqn_policy_samples = 32;
    std::size_t iqn_embedding = 64;

    // Per-task defaults; n-step 7 and dueling for DDQN only.
    static AgentConfig defaults(Algorithm a, Task task = Task::Gbm);
    void validate() const;

    bool operator==(const AgentConfig&) const = default;
};

nlohmann::json to_json(const AgentConfig& cfg);
// Missing keys keep the defaults of the named algorithm and task.
AgentConfig agent_config_from_json(const nlohmann::json& j, Task task = Task::Gbm);

/// Two-phase exponential annealing: eps0 -> eps_mid over the first `phase1`
/// fraction of episodes, then eps_mid -> eps_final by the last episode.
struct ExplorationSchedule {
    std::size_t total_episodes = 1;
    double eps0 = 1.0;
    double eps_mid = 0.1;
    double eps_final = 0.01;
    double phase1 = 0.2;

    double epsilon(std::size_t episode) const;
};

struct EpisodeBuffer {
    std::vector<Transition> transitions;  // up to and including the stopping step

    std::size_t size() const { return transitions.size(); }
};

/// FIFO store of whole episodes.
class ReplayMemory {
public:
    explicit ReplayMemory(std::size_t capacity);

    void push(EpisodeBuffer buffer);
    std::size_t size() const { return store_.size(); }
    std::size_t capacity() const { return capacity_; }
    bool empty() const { return store_.empty(); }
    const EpisodeBuffer& at(std::size_t i) const { return store_[i]; }  // 0 is the oldest
    // min(count, size) distinct buffers, uniformly.
    std::vector<const EpisodeBuffer*> sample(std::size_t count, Rng& rng) const;

private:
    std::size_t capacity_;
    std::deque<EpisodeBuffer> store_;
};

// Argmax with ties going to Continue; Stop is forced at the horizon.
Action select_action(double q_continue, double q_stop, std::size_t t, std::size_t horizon);

// Q(s, a) = V(s) + A(s, a) - max_a' A(s, a').
std::vector<double> dueling_combine(double value, std::span<const double> advantage);

// Distributional Bellman update of `next_probs`, projected onto the support.
std::vector<double> c51_project(double reward, double gamma, std::span<const double> next_probs,
                                const CategoricalSupport& support, bool terminal);

// cos(pi i tau), i = 0..n-1. Throws unless 0 < tau < 1.
std::vector<double> cosine_features(double tau, std::size_t n);

struct QuantileLoss {
    double loss = 0.0;
    nn::Matrix grad;  // d loss / d delta
};

// delta(i, j) = target_j - prediction_i for quantile levels taus[i].
// loss = mean_j sum_i |tau_i - 1{delta_ij < 0}| L_kappa(delta_ij) / kappa.
QuantileLoss quantile_huber_loss(const nn::Matrix& delta, std::span<const double> taus, double kappa);

/// Discounted sum of up to n rewards and what to bootstrap from afterwards.
struct NStepReturn {
    double partial = 0.0;
    double discount = 0.0;             // gamma^n, applied to the bootstrap value
    const StateVector* next = nullptr;  // null when the window reaches a terminal step
};

// One entry per transition of the buffer. Throws if n < 1.
std::vector<NStepReturn> n_step_returns(const EpisodeBuffer& b, double gamma, std::size_t n);

// y_t for every transition, with `bootstrap(s)` the target-network value of s.
std::vector<double> ddqn_targets(const EpisodeBuffer& b, double gamma, std::size_t n,
                                 const std::function<double(const StateVector&)>& bootstrap);

/// IQN quantile embedding: relu(cos features x W + b).
class QuantileEmbedding {
public:
    QuantileEmbedding() = default;
    QuantileEmbedding(std::size_t n_cos, std::size_t width, Rng& init);

    std::size_t n_cos() const { return n_cos_; }
    nn::Matrix features(std::span<const double> taus) const;  // rows: cosine features
    nn::Matrix forward(std::span<const double> taus) const;
    nn::Mlp& net() { return net_; }
    const nn::Mlp& net() const { return net_; }

private:
    std::size_t n_cos_ = 0;
    nn::Mlp net_;
};

/// Parameter container shared by the three agents. Unused members stay empty.
struct AgentNet {
    nn::Mlp body;  // DDQN/C51: the whole network; IQN: the state trunk
    QuantileEmbedding embed;
    nn::Mlp head;  // IQN only

    nn::ParamRefs params();
    nn::ConstParamRefs params() const;
    std::vector<nn::NamedTensor> named();
};

/// Value-based stopping agent with a primary and a target network.
class Agent : public StoppingPolicy {
public:
    Agent(AgentConfig cfg, PayoutSpec spec);
    ~Agent() override = default;

    const AgentConfig& config() const { return cfg_; }
    const PayoutSpec& spec() const { return spec_; }
    std::string label() const override;

    Action decide(const StateVector& s) const override;
    std::vector<std::size_t> stopping_times(std::span<const Episode> episodes, Rng& rng) override;

    // Deterministic Eval-mode action values, one row per state: (Continue, Stop).
    nn::Matrix action_values(std::span<const StateVector> states) const;
    nn::Matrix target_action_values(std::span<const StateVector> states) const;

    // Greedy stopping step of one episode.
    std::size_t greedy_stop(const Episode& ep) const;

    // Fits the input standardizer on the states of `episodes`.
    void fit_inputs(std::span<const Episode> episodes);
    const nn::Standardizer& inputs() const { return input_; }
    bool inputs_fitted() const { return inputs_fitted_; }

    // Per-step reward and bootstrap factor of the configured reward mode.
    double reward(const Episode& ep, std::size_t t) const;
    double gamma() const;

    // One gradient step on a minibatch of buffers, then target sync. Returns the mean loss.
    double train_step(const ReplayMemory& mem, Rng& rng);
    std::size_t updates() const { return updates_; }

    nn::ParamRefs online_params();
    nn::ParamRefs target_params();
    void sync_target();

    nlohmann::json checkpoint() const;
    // Throws on an algorithm, spec or shape mismatch.
    void load(const nlohmann::json& doc);

protected:
    using Net = AgentNet;

    virtual std::unique_ptr<Net> make_net(Rng& init) const = 0;
    // n x 2 values of a feature batch (already standardized).
    virtual nn::Matrix values(const Net& net, const nn::Matrix& x) const = 0;
    // Loss and gradient accumulation for one minibatch.
    virtual double learn(const std::vector<const Transition*>& batch, const std::vector<NStepReturn>& returns,
                         Rng& rng) = 0;

    nn::Matrix standardize(std::span<const StateVector> states) const;
    nn::Matrix standardize(const std::vector<const StateVector*>& states) const;
    // Bootstrap action per next state: argmax of the primary (double) or target net, Stop at the horizon.
    std::vector<Action> bootstrap_actions(const nn::Matrix& x_next, const std::vector<std::size_t>& t_next) const;
    std::vector<Action> argmax_actions(const nn::Matrix& q, const std::vector<std::size_t>& t) const;

    AgentConfig cfg_;
    PayoutSpec spec_;
    nn::Standardizer input_;
    bool inputs_fitted_ = false;
    std::unique_ptr<Net> online_;
    std::unique_ptr<Net> target_;
    std::unique_ptr<Net> grads_;
    nn::AdamState adam_;
    std::size_t updates_ = 0;

    // Builds both networks; called once by make_agent after construction.
    void initialize(std::uint64_t seed);

    friend std::unique_ptr<Agent> make_agent(const AgentConfig&, const PayoutSpec&, std::uint64_t);
};

std::unique_ptr<Agent> make_agent(const AgentConfig& cfg, const PayoutSpec& spec, std::uint64_t seed);

// Rollout with probability eps of a random episode stopped uniformly on {0..T}.
EpisodeBuffer run_episode(const Agent& agent, const Episode& ep, double epsilon, Rng& rng);

struct TrainOptions {
    std::size_t episodes = 1000;  // M
    std::size_t max_epochs = 5;   // caps M at max_epochs passes over the admissible episodes
    std::size_t eval_every = 0;   // 0: no periodic evaluation
    std::size_t checkpoint_every = 0;
    bool shuffle = true;
    // Restore the parameters of the periodic evaluation with the best ER at the end.
    bool keep_best = false;
    market::EpisodeOptions episode;
    std::function<void(std::size_t episode, const Agent&)> on_checkpoint;
};

struct TrainLogRow {
    std::size_t episode = 0;
    double epsilon = 0.0;
    double loss = 0.0;
    std::optional<double> eval_er;
};

struct TrainResult {
    std::vector<TrainLogRow> log;
    std::size_t episodes = 0;  // after the epoch cap
    std::optional<std::size_t> best_episode;
    double best_eval_er = 0.0;
};

// Full training loop. `eval_set` is used for the periodic greedy ER column.
TrainResult train(Agent& agent, const market::Dataset& data, const TrainOptions& opts, std::uint64_t seed,
                  std::span<const Episode> eval_set = {});

void write_train_log(const std::vector<TrainLogRow>& log, std::ostream& out);

}  // namespace osrl::agents
