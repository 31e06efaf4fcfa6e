#include <catch_amalgamated.hpp>

#include "grad_check.hpp"
#include "osrl/nn.hpp"

#include <cmath>

using Catch::Approx;
using namespace osrl;
using namespace osrl::nn;
using osrl::testing::max_relative_error;
using osrl::testing::random_matrix;

namespace {

ParamRefs refs(Mlp& net)
{
    ParamRefs p;
    net.params(p);
    return p;
}

ConstParamRefs crefs(const Mlp& net)
{
    ConstParamRefs p;
    net.params(p);
    return p;
}

}  // namespace

TEST_CASE("identity layer passes input through", "[nn]")
{
    Rng init(1);
    Mlp net({3, 3}, Activation::Identity, Activation::Identity, 0.0, init);
    net.layers()[0].weight.setIdentity();
    net.layers()[0].bias.setZero();
    const Matrix x = random_matrix(init, 4, 3);
    CHECK(net.forward(x).isApprox(x));
}

TEST_CASE("dropout only acts in train mode", "[nn]")
{
    Rng init(2);
    const Matrix x = random_matrix(init, 5, 4);
    Mlp plain({4, 8, 2}, Activation::Relu, Activation::Identity, 0.0, init);
    Rng r(9);
    CHECK(plain.forward(x, Mode::Train, &r, nullptr) == plain.forward(x));

    Mlp dropped({4, 8, 2}, Activation::Relu, Activation::Identity, 0.2, init);
    CHECK(dropped.forward(x) == dropped.forward(x));
    CHECK_THROWS_AS(dropped.forward(x, Mode::Train, nullptr, nullptr), std::invalid_argument);
    Rng a(5), b(5);
    CHECK(dropped.forward(x, Mode::Train, &a, nullptr) == dropped.forward(x, Mode::Train, &b, nullptr));
}

TEST_CASE("forward rejects a dimension mismatch", "[nn]")
{
    Rng init(3);
    Mlp net({4, 2}, Activation::Identity, Activation::Identity, 0.0, init);
    CHECK_THROWS_AS(net.forward(Matrix::Zero(2, 5)), std::invalid_argument);
}

TEST_CASE("backward needs a recorded forward", "[nn]")
{
    Rng init(3);
    Mlp net({4, 2}, Activation::Identity, Activation::Identity, 0.0, init);
    Mlp g = net.zeros_like();
    CHECK_THROWS_AS(net.backward(Mlp::Trace{}, Matrix::Zero(1, 2), g), std::logic_error);
}

TEST_CASE("zero upstream gradient gives zero parameter gradients", "[nn]")
{
    Rng init(4);
    Mlp net({3, 6, 6, 2}, Activation::Relu, Activation::Identity, 0.0, init);
    Mlp::Trace trace;
    const Matrix x = random_matrix(init, 7, 3);
    const Matrix y = net.forward(x, Mode::Eval, nullptr, &trace);
    Mlp grads = net.zeros_like();
    net.backward(trace, Matrix::Zero(y.rows(), y.cols()), grads);
    for (const auto& t : crefs(grads)) {
        for (double v : t) CHECK(v == 0.0);
    }
}

TEST_CASE("dense and relu backward match finite differences", "[nn][gradcheck]")
{
    Rng init(10);
    for (int trial = 0; trial < 20; ++trial) {
        Mlp net({4, 5, 3, 2}, Activation::Relu, Activation::Identity, 0.0, init);
        osrl::testing::randomize_biases(net, init);
        const Matrix x = random_matrix(init, 6, 4);
        const Matrix w = random_matrix(init, 6, 2);
        const auto loss = [&] { return net.forward(x).cwiseProduct(w).sum(); };
        Mlp::Trace trace;
        net.forward(x, Mode::Eval, nullptr, &trace);
        Mlp grads = net.zeros_like();
        const Matrix dx = net.backward(trace, w, grads);
        CHECK(max_relative_error(refs(net), crefs(grads), loss) < 1e-4);

        // input gradient
        Matrix xp = x;
        std::vector<double> analytic(dx.data(), dx.data() + dx.size()), numeric;
        for (Eigen::Index k = 0; k < xp.size(); ++k) {
            const double saved = xp.data()[k];
            xp.data()[k] = saved + 1e-5;
            const double up = net.forward(xp).cwiseProduct(w).sum();
            xp.data()[k] = saved - 1e-5;
            const double down = net.forward(xp).cwiseProduct(w).sum();
            xp.data()[k] = saved;
            numeric.push_back((up - down) / 2e-5);
        }
        CHECK(max_relative_error(analytic, numeric) < 1e-4);
    }
}

TEST_CASE("train-mode dropout backward matches finite differences under a fixed mask", "[nn][gradcheck]")
{
    Rng init(11);
    Mlp net({3, 8, 2}, Activation::Relu, Activation::Identity, 0.3, init);
    osrl::testing::randomize_biases(net, init);
    const Matrix x = random_matrix(init, 5, 3);
    const auto loss = [&] {
        Rng r(77);
        return net.forward(x, Mode::Train, &r, nullptr).sum();
    };
    Rng r(77);
    Mlp::Trace trace;
    const Matrix y = net.forward(x, Mode::Train, &r, &trace);
    Mlp grads = net.zeros_like();
    net.backward(trace, Matrix::Ones(y.rows(), y.cols()), grads);
    CHECK(max_relative_error(refs(net), crefs(grads), loss) < 1e-4);
}

TEST_CASE("linear least squares gradient has the closed form", "[nn]")
{
    Rng init(12);
    Mlp net({3, 1}, Activation::Identity, Activation::Identity, 0.0, init);
    const Matrix x = random_matrix(init, 10, 3);
    const Matrix y = random_matrix(init, 10, 1);
    Mlp::Trace trace;
    const Matrix pred = net.forward(x, Mode::Eval, nullptr, &trace);
    Mlp grads = net.zeros_like();
    // L = 1/2 ||X w + b - y||^2
    net.backward(trace, pred - y, grads);
    const Matrix w = net.layers()[0].weight;
    const double b = net.layers()[0].bias(0);
    const Matrix residual = (x * w).array() + b - y.array();
    const Matrix expected_w = x.transpose() * residual;
    CHECK(grads.layers()[0].weight.isApprox(expected_w, 1e-12));
    CHECK(grads.layers()[0].bias(0) == Approx(residual.sum()).epsilon(1e-12));
}

TEST_CASE("interleaved networks do not share state", "[nn]")
{
    Rng init(13);
    Mlp a({3, 4, 1}, Activation::Relu, Activation::Identity, 0.0, init);
    Mlp b({3, 4, 1}, Activation::Relu, Activation::Identity, 0.0, init);
    const Matrix x = random_matrix(init, 2, 3);
    const Matrix ya = a.forward(x);
    Mlp::Trace ta, tb;
    a.forward(x, Mode::Eval, nullptr, &ta);
    b.forward(x * 2.0, Mode::Eval, nullptr, &tb);
    Mlp ga = a.zeros_like(), ga2 = a.zeros_like(), gb = b.zeros_like();
    a.backward(ta, Matrix::Ones(2, 1), ga);
    b.backward(tb, Matrix::Ones(2, 1), gb);
    Mlp::Trace ta2;
    a.forward(x, Mode::Eval, nullptr, &ta2);
    a.backward(ta2, Matrix::Ones(2, 1), ga2);
    CHECK(a.forward(x) == ya);
    CHECK(ga.layers()[0].weight == ga2.layers()[0].weight);
}

TEST_CASE("huber loss", "[nn][loss]")
{
    CHECK(huber_loss(0.0, 0.0).loss == 0.0);
    CHECK(huber_loss(0.0, 0.0).grad == 0.0);
    CHECK(huber_loss(0.5, 0.0, 1.0).loss == Approx(0.125));
    const auto big = huber_loss(3.0, 0.0, 1.0);
    CHECK(big.loss == Approx(2.5));
    CHECK(big.grad == 1.0);
    CHECK(huber_loss(-3.0, 0.0, 1.0).grad == -1.0);

    Rng rng(14);
    for (int i = 0; i < 20; ++i) {
        const double pred = 3.0 * rng.normal();
        const double target = rng.normal();
        const double kappa = 0.5 + rng.uniform();
        const double h = 1e-5;
        const double numeric = (huber_loss(pred + h, target, kappa).loss - huber_loss(pred - h, target, kappa).loss) / (2 * h);
        const double analytic = huber_loss(pred, target, kappa).grad;
        CHECK(std::abs(analytic - numeric) <= 1e-4 * std::max(std::abs(analytic), 1e-7));
    }
}

TEST_CASE("softmax cross entropy", "[nn][loss]")
{
    const std::vector<double> logits{0.3, -1.2, 2.0, 0.1};
    const auto p = softmax(logits);
    const auto at_min = softmax_cross_entropy(logits, p);
    for (double g : at_min.grad) CHECK(std::abs(g) < 1e-15);

    const std::vector<double> uniform{0.7, 0.7, 0.7};
    const std::vector<double> onehot{0.0, 1.0, 0.0};
    CHECK(softmax_cross_entropy(uniform, onehot).loss == Approx(std::log(3.0)).epsilon(1e-14));

    CHECK_THROWS_AS(softmax_cross_entropy(uniform, std::vector<double>{0.5, 0.5, 0.5}), std::invalid_argument);

    Rng rng(15);
    for (int trial = 0; trial < 20; ++trial) {
        std::vector<double> z(5), m(5);
        double total = 0.0;
        for (std::size_t k = 0; k < 5; ++k) {
            z[k] = 2.0 * rng.normal();
            m[k] = rng.uniform();
            total += m[k];
        }
        for (double& v : m) v /= total;
        const auto analytic = softmax_cross_entropy(z, m).grad;
        std::vector<double> numeric;
        for (std::size_t k = 0; k < 5; ++k) {
            auto up = z, down = z;
            up[k] += 1e-5;
            down[k] -= 1e-5;
            numeric.push_back((softmax_cross_entropy(up, m).loss - softmax_cross_entropy(down, m).loss) / 2e-5);
        }
        CHECK(max_relative_error(analytic, numeric) < 1e-4);
    }
}

TEST_CASE("adam step", "[nn][adam]")
{
    SECTION("zero gradient at zero moments leaves parameters unchanged")
    {
        std::vector<double> w{1.0, -2.0};
        std::vector<double> g{0.0, 0.0};
        AdamState st;
        adam_step({std::span<double>(w)}, {std::span<const double>(g)}, st);
        CHECK(w == std::vector<double>{1.0, -2.0});
        CHECK(st.step == 1);
    }
    SECTION("first step moves by the learning rate whatever the gradient scale")
    {
        for (double g0 : {1e-3, 1.0, 250.0}) {
            std::vector<double> w{0.0};
            std::vector<double> g{g0};
            AdamState st;
            st.learning_rate = 0.01;
            adam_step({std::span<double>(w)}, {std::span<const double>(g)}, st);
            CHECK(std::abs(w[0]) == Approx(0.01).epsilon(1e-4));
        }
    }
    SECTION("minimizes a scalar quadratic")
    {
        std::vector<double> w{0.0};
        AdamState st;
        st.learning_rate = 0.1;
        for (int i = 0; i < 200; ++i) {
            std::vector<double> g{2.0 * (w[0] - 3.0)};
            adam_step({std::span<double>(w)}, {std::span<const double>(g)}, st);
        }
        CHECK(std::abs(w[0] - 3.0) < 0.1);
    }
    SECTION("shape mismatch")
    {
        std::vector<double> w{0.0, 1.0};
        std::vector<double> g{1.0};
        AdamState st;
        CHECK_THROWS_AS(adam_step({std::span<double>(w)}, {std::span<const double>(g)}, st), std::invalid_argument);
    }
}

TEST_CASE("parameter sync helpers", "[nn]")
{
    std::vector<double> theta{1.0, 2.0};
    std::vector<double> phi{0.0, 0.0};
    soft_update({std::span<const double>(theta)}, {std::span<double>(phi)}, 0.001);
    CHECK(phi[0] == Approx(0.001).epsilon(1e-14));
    copy_params({std::span<const double>(theta)}, {std::span<double>(phi)});
    CHECK(phi == theta);
}

TEST_CASE("checkpoint tensors round trip exactly", "[nn][checkpoint]")
{
    Rng init(16);
    Mlp net({3, 4, 2}, Activation::Relu, Activation::Identity, 0.0, init);
    std::vector<NamedTensor> named;
    net.named("body", named);
    const auto doc = tensors_to_json(named, {{"note", "x"}});
    const auto text = doc.dump();

    Rng other(17);
    Mlp copy({3, 4, 2}, Activation::Relu, Activation::Identity, 0.0, other);
    std::vector<NamedTensor> target;
    copy.named("body", target);
    tensors_from_json(nlohmann::json::parse(text), target);
    CHECK(copy.layers()[0].weight == net.layers()[0].weight);
    CHECK(copy.layers()[1].bias == net.layers()[1].bias);

    Mlp wrong({3, 5, 2}, Activation::Relu, Activation::Identity, 0.0, other);
    std::vector<NamedTensor> mismatched;
    wrong.named("body", mismatched);
    CHECK_THROWS_AS(tensors_from_json(doc, mismatched), std::runtime_error);
}

TEST_CASE("standardizer", "[nn]")
{
    Matrix x(4, 2);
    x << 1, 5, 2, 5, 3, 5, 4, 5;
    const auto s = Standardizer::fit(x);
    const Matrix z = s.apply(x);
    CHECK(std::abs(z.col(0).mean()) < 1e-15);
    CHECK(s.scale(1) == 1.0);
    CHECK(z.col(1).isZero());
}
