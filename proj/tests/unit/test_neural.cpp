#include <doctest.h>

#include <cmath>

#include "secsched/neural.hpp"
#include "secsched/rng.hpp"

using namespace secsched;
using namespace secsched::nn;

namespace {

// Loss = sum(output_grad .* forward(net, x)); its parameter gradient is what backward returns.
template <typename S>
double probe_loss(const Mlp<S>& net, const Matrix<S>& x, const Matrix<S>& g)
{
    return (forward(net, x).template cast<double>().array() * g.template cast<double>().array()).sum();
}

template <typename S>
double max_relative_error(Mlp<S> net, const Matrix<S>& x, const Matrix<S>& g, S h, double scale_floor = 0.0)
{
    MlpCache<S> cache;
    forward(net, x, &cache);
    const auto grads = backward(net, cache, g);
    double largest = 0.0;
    for (int l = 0; l < net.num_layers(); ++l) {
        largest = std::max({largest, static_cast<double>(grads.weights[l].cwiseAbs().maxCoeff()),
                            static_cast<double>(grads.biases[l].cwiseAbs().maxCoeff())});
    }
    const double floor = std::max(1e-3, scale_floor * largest);
    double worst = 0.0;
    auto check = [&](S& param, S analytic) {
        const S keep = param;
        param = keep + h;
        const double step_up = static_cast<double>(param) - static_cast<double>(keep);
        const double up = probe_loss(net, x, g);
        param = keep - h;
        const double step_down = static_cast<double>(keep) - static_cast<double>(param);
        const double down = probe_loss(net, x, g);
        param = keep;
        const double numeric = (up - down) / (step_up + step_down);
        const double denom = std::max({std::abs(numeric), std::abs(static_cast<double>(analytic)), floor});
        worst = std::max(worst, std::abs(numeric - static_cast<double>(analytic)) / denom);
    };
    for (int l = 0; l < net.num_layers(); ++l) {
        for (Eigen::Index i = 0; i < net.weights[l].size(); ++i) {
            check(net.weights[l].data()[i], grads.weights[l].data()[i]);
        }
        for (Eigen::Index i = 0; i < net.biases[l].size(); ++i) {
            check(net.biases[l](i), grads.biases[l](i));
        }
    }
    return worst;
}

}  // namespace

TEST_CASE("forward basics")
{
    const auto zero = zero_mlp<float>({3, 5, 2});
    CHECK(forward(zero, Vector<float>(Vector<float>::Ones(3))).isZero());

    auto unit = zero_mlp<double>({1, 1});
    unit.weights[0](0, 0) = 2.0;
    unit.biases[0](0) = 1.0;
    CHECK(forward(unit, Vector<double>(Vector<double>::Constant(1, 3.0)))(0) == 7.0);

    Rng rng(1);
    const auto net = make_mlp<float>({6, 16, 4}, rng);
    const Vector<float> x = Vector<float>::Random(6);
    CHECK(forward(net, x) == forward(net, x));
    CHECK_THROWS_AS(forward(net, Vector<float>(Vector<float>::Zero(5))), ShapeError);
}

TEST_CASE("batch columns are independent of their batch")
{
    Rng rng(3);
    const auto net = make_mlp<float>({48, 128, 128}, rng, 1.0, 1.0, Activation::Tanh);
    Matrix<float> x(48, 37);
    for (Eigen::Index i = 0; i < x.size(); ++i) {
        x.data()[i] = static_cast<float>(rng.uniform());
    }
    const Matrix<float> batch = forward(net, x);
    for (Eigen::Index j = 0; j < x.cols(); ++j) {
        const Vector<float> single = forward(net, Vector<float>(x.col(j)));
        CHECK(single == Vector<float>(batch.col(j)));
    }
}

TEST_CASE("gradients match central differences")
{
    Rng rng(17);
    for (int trial = 0; trial < 20; ++trial) {
        const auto net = make_mlp<double>({8, 16, 4}, rng, 1.0, 1.0);
        const Matrix<double> x = Matrix<double>::Random(8, 3);
        const Matrix<double> g = Matrix<double>::Random(4, 3);
        CHECK(max_relative_error(net, x, g, 1e-5) < 1e-5);

        const auto f32 = net.cast<float>();
        CHECK(max_relative_error(f32, x.cast<float>().eval(), g.cast<float>().eval(), 1e-3f, 1e-2) < 1e-2);
    }
    auto tanh_out = make_mlp<double>({5, 7, 3}, rng, 1.0, 1.0, Activation::Tanh);
    CHECK(max_relative_error(tanh_out, Matrix<double>::Random(5, 2).eval(), Matrix<double>::Random(3, 2).eval(),
                             1e-5) < 1e-5);
}

TEST_CASE("backward linearity and zeros")
{
    Rng rng(5);
    const auto net = make_mlp<double>({4, 6, 2}, rng, 1.0, 1.0);
    const Matrix<double> x = Matrix<double>::Random(4, 3);
    const Matrix<double> g = Matrix<double>::Random(2, 3);
    MlpCache<double> cache;
    forward(net, x, &cache);
    const auto zero = backward(net, cache, Matrix<double>::Zero(2, 3).eval());
    CHECK(zero.squared_norm() == 0.0);
    const auto one = backward(net, cache, g);
    const auto three = backward(net, cache, (3.0 * g).eval());
    for (int l = 0; l < net.num_layers(); ++l) {
        CHECK((three.weights[l] - 3.0 * one.weights[l]).norm() < 1e-12);
    }
}

TEST_CASE("masked categorical")
{
    Rng rng(2);
    Vector<float> logits = Vector<float>::Zero(2);
    for (int i = 0; i < 100; ++i) {
        const auto s = masked_sample(CategoricalHead<float>{logits, {1, 0}}, rng);
        CHECK(s.index == 0);
        CHECK(s.log_prob == 0.0);
    }
    int zeros = 0;
    const int draws = 100000;
    for (int i = 0; i < draws; ++i) {
        zeros += masked_sample(CategoricalHead<float>{logits, {}}, rng).index == 0 ? 1 : 0;
    }
    CHECK(zeros / static_cast<double>(draws) >= 0.49);
    CHECK(zeros / static_cast<double>(draws) <= 0.51);

    CHECK_THROWS(masked_sample(CategoricalHead<float>{logits, {0, 0}}, rng));

    Vector<double> l5(5);
    l5 << 0.3, -1.0, 2.0, 0.0, 0.7;
    const Mask m5{1, 0, 1, 1, 0};
    const auto p = masked_softmax(l5, m5);
    CHECK(p(1) == 0.0);
    CHECK(p(4) == 0.0);
    CHECK(p.sum() == doctest::Approx(1.0).epsilon(1e-6));
    CHECK(masked_argmax(l5, m5) == 2);
    CHECK(masked_argmax(l5, Mask{1, 1, 0, 1, 1}) == 4);

    const auto uniform = masked_softmax(Vector<double>(Vector<double>::Zero(4)), Mask{});
    CHECK(entropy(uniform) == doctest::Approx(std::log(4.0)));
}

TEST_CASE("adam")
{
    Rng rng(8);
    auto net = make_mlp<float>({3, 4, 2}, rng);
    const auto before = net;
    auto opt = AdamState<float>::for_net(net, 0.01);
    adam_step(opt, net, MlpGradients<float>::zeros_like(net));
    for (int l = 0; l < net.num_layers(); ++l) {
        CHECK(net.weights[l] == before.weights[l]);
    }

    auto g = MlpGradients<float>::zeros_like(net);
    g.weights[0].setConstant(0.5f);
    auto fresh = AdamState<float>::for_net(before, 0.01);
    auto stepped = before;
    adam_step(fresh, stepped, g);
    const Matrix<float> delta = stepped.weights[0] - before.weights[0];
    CHECK(delta.maxCoeff() < 0.0f);
    CHECK(delta.cwiseAbs().maxCoeff() <= 0.01f * 1.0001f);

    auto again_opt = AdamState<float>::for_net(before, 0.01);
    auto again = before;
    adam_step(again_opt, again, g);
    CHECK(again.weights[0] == stepped.weights[0]);

    g.biases[1](0) = std::nanf("");
    try {
        adam_step(fresh, stepped, g);
        FAIL("expected NumericError");
    } catch (const NumericError& e) {
        CHECK(std::string(e.what()).find("layer 1") != std::string::npos);
    }
}

TEST_CASE("long random training stays finite")
{
    Rng rng(11);
    auto net = make_mlp<float>({6, 16, 3}, rng);
    auto opt = AdamState<float>::for_net(net, 1e-2);
    for (int step = 0; step < 10000; ++step) {
        Matrix<float> x(6, 4), g(3, 4);
        for (Eigen::Index i = 0; i < x.size(); ++i) {
            x.data()[i] = static_cast<float>(rng.normal() * 5.0);
        }
        for (Eigen::Index i = 0; i < g.size(); ++i) {
            g.data()[i] = static_cast<float>(rng.normal() * 100.0);
        }
        MlpCache<float> cache;
        forward(net, x, &cache);
        auto grads = backward(net, cache, g);
        clip_global_norm<float>({&grads}, 10.0f);
        CHECK(std::sqrt(grads.squared_norm()) <= 10.0f * 1.0001f);
        adam_step(opt, net, grads);
    }
    CHECK(net.all_finite());
}

TEST_CASE("flatten round trip")
{
    Rng rng(4);
    const auto net = make_mlp<float>({5, 7, 2}, rng);
    const auto flat = flatten(net);
    CHECK(flat.size() == net.num_parameters());
    CHECK(flat[0] == net.weights[0](0, 0));
    CHECK(flat[1] == net.weights[0](0, 1));
    auto copy = zero_mlp<float>({5, 7, 2});
    unflatten(copy, flat.data(), flat.size());
    CHECK(flatten(copy) == flat);
    CHECK_THROWS_AS(unflatten(copy, flat.data(), flat.size() - 1), ShapeError);
}
