#include "osrl/nn.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace osrl::nn {

Mlp::Mlp(const std::vector<std::size_t>& widths, Activation hidden, Activation output, double dropout, Rng& init,
         double output_gain)
    : dropout_(dropout)
{
    if (widths.size() < 2) {
        throw std::invalid_argument("Mlp: need at least input and output widths");
    }
    if (!(dropout >= 0.0 && dropout < 1.0)) {
        throw std::invalid_argument("Mlp: dropout must lie in [0, 1)");
    }
    for (std::size_t i = 0; i + 1 < widths.size(); ++i) {
        Dense layer;
        const bool last = i + 2 == widths.size();
        layer.activation = last ? output : hidden;
        layer.weight.resize(static_cast<Eigen::Index>(widths[i]), static_cast<Eigen::Index>(widths[i + 1]));
        layer.bias = RowVector::Zero(static_cast<Eigen::Index>(widths[i + 1]));
        const double bound = std::sqrt(6.0 / static_cast<double>(widths[i])) * (last ? output_gain : 1.0);
        for (Eigen::Index k = 0; k < layer.weight.size(); ++k) {
            layer.weight.data()[k] = (2.0 * init.uniform() - 1.0) * bound;
        }
        layers_.push_back(std::move(layer));
    }
}

Matrix Mlp::forward(const Matrix& x) const
{
    return forward(x, Mode::Eval, nullptr, nullptr);
}

Matrix Mlp::forward(const Matrix& x, Mode mode, Rng* rng, Trace* trace) const
{
    if (static_cast<std::size_t>(x.cols()) != in()) {
        throw std::invalid_argument("Mlp::forward: expected " + std::to_string(in()) + " inputs, got " +
                                    std::to_string(x.cols()));
    }
    const bool drop = mode == Mode::Train && dropout_ > 0.0;
    if (drop && rng == nullptr) {
        throw std::invalid_argument("Mlp::forward: dropout in Train mode needs an rng");
    }
    if (trace != nullptr) {
        trace->inputs.clear();
        trace->pre.clear();
        trace->masks.clear();
    }
    Matrix h = x;
    for (const Dense& layer : layers_) {
        Matrix z = h * layer.weight;
        z.rowwise() += layer.bias;
        if (trace != nullptr) {
            trace->inputs.push_back(std::move(h));
            trace->pre.push_back(z);
        }
        if (layer.activation == Activation::Relu) {
            h = z.cwiseMax(0.0);
            if (drop) {
                Matrix mask(h.rows(), h.cols());
                const double keep_scale = 1.0 / (1.0 - dropout_);
                for (Eigen::Index k = 0; k < mask.size(); ++k) {
                    mask.data()[k] = rng->uniform() < dropout_ ? 0.0 : keep_scale;
                }
                h = h.cwiseProduct(mask);
                if (trace != nullptr) trace->masks.push_back(std::move(mask));
            } else if (trace != nullptr) {
                trace->masks.emplace_back();
            }
        } else {
            h = std::move(z);
            if (trace != nullptr) trace->masks.emplace_back();
        }
    }
    return h;
}

Matrix Mlp::backward(const Trace& trace, const Matrix& grad_out, Mlp& grads) const
{
    if (trace.inputs.size() != layers_.size()) {
        throw std::logic_error("Mlp::backward: no recorded forward pass");
    }
    Matrix g = grad_out;
    for (std::size_t i = layers_.size(); i-- > 0;) {
        const Dense& layer = layers_[i];
        if (layer.activation == Activation::Relu) {
            if (trace.masks[i].size() != 0) {
                g = g.cwiseProduct(trace.masks[i]);
            }
            g = (trace.pre[i].array() > 0.0).select(g, 0.0);
        }
        grads.layers_[i].weight.noalias() += trace.inputs[i].transpose() * g;
        grads.layers_[i].bias += g.colwise().sum();
        g = g * layer.weight.transpose();
    }
    return g;
}

Mlp Mlp::zeros_like() const
{
    Mlp z = *this;
    for (Dense& layer : z.layers_) {
        layer.weight.setZero();
        layer.bias.setZero();
    }
    return z;
}

void Mlp::params(ParamRefs& out)
{
    for (Dense& layer : layers_) {
        out.emplace_back(layer.weight.data(), static_cast<std::size_t>(layer.weight.size()));
        out.emplace_back(layer.bias.data(), static_cast<std::size_t>(layer.bias.size()));
    }
}

void Mlp::params(ConstParamRefs& out) const
{
    for (const Dense& layer : layers_) {
        out.emplace_back(layer.weight.data(), static_cast<std::size_t>(layer.weight.size()));
        out.emplace_back(layer.bias.data(), static_cast<std::size_t>(layer.bias.size()));
    }
}

void Mlp::named(const std::string& prefix, std::vector<NamedTensor>& out)
{
    for (std::size_t i = 0; i < layers_.size(); ++i) {
        Dense& layer = layers_[i];
        const std::string base = prefix + "." + std::to_string(i);
        out.push_back({base + ".weight", {layer.in(), layer.out()},
                       {layer.weight.data(), static_cast<std::size_t>(layer.weight.size())}});
        out.push_back({base + ".bias", {layer.out()}, {layer.bias.data(), static_cast<std::size_t>(layer.bias.size())}});
    }
}

Standardizer Standardizer::identity(std::size_t width)
{
    const auto w = static_cast<Eigen::Index>(width);
    return {RowVector::Zero(w), RowVector::Ones(w)};
}

Standardizer Standardizer::fit(const Matrix& samples)
{
    if (samples.rows() == 0) {
        throw std::invalid_argument("Standardizer::fit: no samples");
    }
    Standardizer s;
    s.shift = samples.colwise().mean();
    s.scale.resize(samples.cols());
    for (Eigen::Index c = 0; c < samples.cols(); ++c) {
        const double var = (samples.col(c).array() - s.shift(c)).square().mean();
        const double sd = std::sqrt(var);
        s.scale(c) = sd > 1e-8 ? sd : 1.0;
    }
    return s;
}

Matrix Standardizer::apply(const Matrix& x) const
{
    return (x.rowwise() - shift).array().rowwise() / scale.array();
}

void Standardizer::named(const std::string& prefix, std::vector<NamedTensor>& out)
{
    out.push_back({prefix + ".shift", {static_cast<std::size_t>(shift.size())},
                   {shift.data(), static_cast<std::size_t>(shift.size())}});
    out.push_back({prefix + ".scale", {static_cast<std::size_t>(scale.size())},
                   {scale.data(), static_cast<std::size_t>(scale.size())}});
}

LossGrad huber_loss(double pred, double target, double kappa)
{
    const double e = pred - target;
    const double a = std::abs(e);
    if (a <= kappa) {
        return {0.5 * e * e, e};
    }
    return {kappa * (a - 0.5 * kappa), e > 0.0 ? kappa : -kappa};
}

std::vector<double> softmax(std::span<const double> logits)
{
    std::vector<double> p(logits.begin(), logits.end());
    const double top = *std::max_element(p.begin(), p.end());
    double total = 0.0;
    for (double& x : p) {
        x = std::exp(x - top);
        total += x;
    }
    for (double& x : p) x /= total;
    return p;
}

CrossEntropy softmax_cross_entropy(std::span<const double> logits, std::span<const double> target)
{
    if (logits.size() != target.size() || logits.empty()) {
        throw std::invalid_argument("softmax_cross_entropy: size mismatch");
    }
    double total = 0.0;
    for (double m : target) {
        if (m < 0.0) throw std::invalid_argument("softmax_cross_entropy: negative target mass");
        total += m;
    }
    if (std::abs(total - 1.0) > 1e-9) {
        throw std::invalid_argument("softmax_cross_entropy: target does not sum to 1");
    }
    const double top = *std::max_element(logits.begin(), logits.end());
    double norm = 0.0;
    for (double z : logits) norm += std::exp(z - top);
    const double log_norm = top + std::log(norm);

    CrossEntropy out;
    out.grad.resize(logits.size());
    for (std::size_t k = 0; k < logits.size(); ++k) {
        const double log_p = logits[k] - log_norm;
        if (target[k] > 0.0) out.loss -= target[k] * log_p;
        out.grad[k] = std::exp(log_p) - target[k];
    }
    return out;
}

void adam_step(const ParamRefs& params, const ConstParamRefs& grads, AdamState& st)
{
    if (params.size() != grads.size()) {
        throw std::invalid_argument("adam_step: parameter/gradient count mismatch");
    }
    if (st.m.empty()) {
        for (const auto& p : params) {
            st.m.emplace_back(p.size(), 0.0);
            st.v.emplace_back(p.size(), 0.0);
        }
    }
    if (st.m.size() != params.size()) {
        throw std::invalid_argument("adam_step: state shaped for a different network");
    }
    for (std::size_t i = 0; i < params.size(); ++i) {
        if (params[i].size() != grads[i].size() || params[i].size() != st.m[i].size()) {
            throw std::invalid_argument("adam_step: shape mismatch in tensor " + std::to_string(i));
        }
    }
    ++st.step;
    const double t = static_cast<double>(st.step);
    const double c1 = 1.0 - std::pow(st.beta1, t);
    const double c2 = 1.0 - std::pow(st.beta2, t);
    for (std::size_t i = 0; i < params.size(); ++i) {
        auto& m = st.m[i];
        auto& v = st.v[i];
        const auto& g = grads[i];
        auto& p = params[i];
        for (std::size_t k = 0; k < p.size(); ++k) {
            m[k] = st.beta1 * m[k] + (1.0 - st.beta1) * g[k];
            v[k] = st.beta2 * v[k] + (1.0 - st.beta2) * g[k] * g[k];
            p[k] -= st.learning_rate * (m[k] / c1) / (std::sqrt(v[k] / c2) + st.epsilon);
        }
    }
}

void zero(const ParamRefs& p)
{
    for (const auto& t : p) std::fill(t.begin(), t.end(), 0.0);
}

void copy_params(const ConstParamRefs& from, const ParamRefs& to)
{
    if (from.size() != to.size()) throw std::invalid_argument("copy_params: tensor count mismatch");
    for (std::size_t i = 0; i < from.size(); ++i) {
        if (from[i].size() != to[i].size()) throw std::invalid_argument("copy_params: shape mismatch");
        std::copy(from[i].begin(), from[i].end(), to[i].begin());
    }
}

void soft_update(const ConstParamRefs& from, const ParamRefs& to, double tau)
{
    if (from.size() != to.size()) throw std::invalid_argument("soft_update: tensor count mismatch");
    for (std::size_t i = 0; i < from.size(); ++i) {
        if (from[i].size() != to[i].size()) throw std::invalid_argument("soft_update: shape mismatch");
        for (std::size_t k = 0; k < from[i].size(); ++k) {
            to[i][k] = tau * from[i][k] + (1.0 - tau) * to[i][k];
        }
    }
}

ConstParamRefs as_const(const ParamRefs& p)
{
    return {p.begin(), p.end()};
}

std::vector<std::vector<double>> numeric_gradient(const ParamRefs& params, const std::function<double()>& loss, double h)
{
    std::vector<std::vector<double>> out;
    for (const auto& t : params) {
        std::vector<double> g(t.size());
        for (std::size_t k = 0; k < t.size(); ++k) {
            const double saved = t[k];
            t[k] = saved + h;
            const double up = loss();
            t[k] = saved - h;
            const double down = loss();
            t[k] = saved;
            g[k] = (up - down) / (2.0 * h);
        }
        out.push_back(std::move(g));
    }
    return out;
}

nlohmann::json tensors_to_json(const std::vector<NamedTensor>& tensors, const nlohmann::json& meta)
{
    nlohmann::json doc;
    doc["format"] = "osrl-checkpoint";
    doc["version"] = kCheckpointVersion;
    doc["meta"] = meta;
    doc["tensors"] = nlohmann::json::array();
    for (const auto& t : tensors) {
        doc["tensors"].push_back({{"name", t.name}, {"shape", t.shape}, {"data", std::vector<double>(t.data.begin(), t.data.end())}});
    }
    return doc;
}

void tensors_from_json(const nlohmann::json& doc, const std::vector<NamedTensor>& tensors)
{
    if (doc.value("format", "") != "osrl-checkpoint") {
        throw std::runtime_error("checkpoint: unrecognized format");
    }
    if (doc.value("version", 0) != kCheckpointVersion) {
        throw std::runtime_error("checkpoint: unsupported version " + std::to_string(doc.value("version", 0)));
    }
    const auto& stored = doc.at("tensors");
    for (const auto& t : tensors) {
        const auto it = std::find_if(stored.begin(), stored.end(), [&t](const nlohmann::json& j) { return j.at("name") == t.name; });
        if (it == stored.end()) {
            throw std::runtime_error("checkpoint: missing tensor '" + t.name + "'");
        }
        const auto shape = it->at("shape").get<std::vector<std::size_t>>();
        if (shape != t.shape) {
            throw std::runtime_error("checkpoint: shape mismatch for tensor '" + t.name + "'");
        }
        const auto data = it->at("data").get<std::vector<double>>();
        if (data.size() != t.data.size()) {
            throw std::runtime_error("checkpoint: size mismatch for tensor '" + t.name + "'");
        }
        std::copy(data.begin(), data.end(), t.data.begin());
    }
    if (stored.size() != tensors.size()) {
        throw std::runtime_error("checkpoint: tensor count mismatch (network shape differs)");
    }
}

}  // namespace osrl::nn
