#pragma once

#include "osrl/random.hpp"

#include <Eigen/Core>
#include <nlohmann/json.hpp>

#include <cstddef>
#include <functional>
#include <span>
#include <string>
#include <vector>

namespace osrl::nn {

// Rows are samples.
using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using RowVector = Eigen::RowVectorXd;

enum class Activation : std::uint8_t { Identity, Relu };
enum class Mode : std::uint8_t { Train, Eval };

using ParamRefs = std::vector<std::span<double>>;
using ConstParamRefs = std::vector<std::span<const double>>;

struct NamedTensor {
    std::string name;
    std::vector<std::size_t> shape;
    std::span<double> data;
};

/// Fully connected layer, y = act(x W + b).
struct Dense {
    Matrix weight;  // in x out
    RowVector bias;
    Activation activation = Activation::Identity;

    std::size_t in() const { return static_cast<std::size_t>(weight.rows()); }
    std::size_t out() const { return static_cast<std::size_t>(weight.cols()); }
};

/// Stack of dense layers. Dropout (inverted scaling) follows every ReLU layer
/// in Train mode; Eval mode is deterministic.
class Mlp {
public:
    struct Trace {
        std::vector<Matrix> inputs;  // input of each layer
        std::vector<Matrix> pre;     // pre-activation of each layer
        std::vector<Matrix> masks;   // dropout keep-masks already divided by (1 - rate); empty if unused
    };

    Mlp() = default;
    // widths = {in, h_1, ..., out}. Weights are He-uniform scaled by fan-in;
    // the last layer's weights are additionally multiplied by `output_gain`.
    Mlp(const std::vector<std::size_t>& widths, Activation hidden, Activation output, double dropout, Rng& init,
        double output_gain = 1.0);

    std::size_t in() const { return layers_.front().in(); }
    std::size_t out() const { return layers_.back().out(); }
    double dropout() const { return dropout_; }
    std::vector<Dense>& layers() { return layers_; }
    const std::vector<Dense>& layers() const { return layers_; }

    Matrix forward(const Matrix& x) const;
    // `rng` is required in Train mode when dropout > 0; `trace` may be null.
    Matrix forward(const Matrix& x, Mode mode, Rng* rng, Trace* trace) const;
    // Accumulates parameter gradients into `grads` (same shape) and returns dL/dx.
    Matrix backward(const Trace& trace, const Matrix& grad_out, Mlp& grads) const;

    Mlp zeros_like() const;
    void params(ParamRefs& out);
    void params(ConstParamRefs& out) const;
    void named(const std::string& prefix, std::vector<NamedTensor>& out);

private:
    std::vector<Dense> layers_;
    double dropout_ = 0.0;
};

/// Fixed affine input transform (x - shift) / scale, fitted once on sample data.
struct Standardizer {
    RowVector shift;
    RowVector scale;

    static Standardizer identity(std::size_t width);
    // Per-column mean and standard deviation; near-constant columns keep scale 1.
    static Standardizer fit(const Matrix& samples);
    Matrix apply(const Matrix& x) const;
    void named(const std::string& prefix, std::vector<NamedTensor>& out);
};

struct LossGrad {
    double loss = 0.0;
    double grad = 0.0;  // d loss / d prediction
};

// Huber loss of e = pred - target: e^2/2 for |e| <= kappa, kappa(|e| - kappa/2) beyond.
LossGrad huber_loss(double pred, double target, double kappa = 1.0);

struct CrossEntropy {
    double loss = 0.0;
    std::vector<double> grad;  // d loss / d logits = softmax(logits) - target
};

std::vector<double> softmax(std::span<const double> logits);
// -sum_k m_k log softmax(logits)_k. Throws if the target is not a probability vector.
CrossEntropy softmax_cross_entropy(std::span<const double> logits, std::span<const double> target);

struct AdamState {
    double learning_rate = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
    std::size_t step = 0;
    std::vector<std::vector<double>> m;
    std::vector<std::vector<double>> v;
};

// Bias-corrected Adam. Moments are allocated on the first call.
void adam_step(const ParamRefs& params, const ConstParamRefs& grads, AdamState& st);

void zero(const ParamRefs& p);
void copy_params(const ConstParamRefs& from, const ParamRefs& to);
// to <- tau * from + (1 - tau) * to
void soft_update(const ConstParamRefs& from, const ParamRefs& to, double tau);
ConstParamRefs as_const(const ParamRefs& p);

// Central differences of a scalar function of the parameters; restores them afterwards.
std::vector<std::vector<double>> numeric_gradient(const ParamRefs& params, const std::function<double()>& loss,
                                                  double h = 1e-5);

// Checkpoint container: {"format", "version", "meta", "tensors": [{name, shape, data}]}.
inline constexpr int kCheckpointVersion = 1;
nlohmann::json tensors_to_json(const std::vector<NamedTensor>& tensors, const nlohmann::json& meta);
// Fills tensors in place; throws on a missing name or shape mismatch.
void tensors_from_json(const nlohmann::json& doc, const std::vector<NamedTensor>& tensors);

}  // namespace osrl::nn
