#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "dmic/autograd.hpp"
#include "dmic/nn.hpp"

using namespace dmic;
using ag::Var;

namespace {

// central finite differences on every entry of every parameter
double max_rel_grad_error(const std::vector<Var>& params,
                          const std::function<double()>& scalar_fn,
                          const std::function<Var()>& graph_fn,
                          float h = 1e-3f) {
    Var loss = graph_fn();
    for (auto& p : params) p->grad.resize(0, 0);
    ag::backward(loss);
    double num = 0, den = 0;  // vector-norm relative error over all entries
    for (auto& p : params) {
        for (Eigen::Index r = 0; r < p->val.rows(); ++r)
            for (Eigen::Index c = 0; c < p->val.cols(); ++c) {
                float orig = p->val(r, c);
                p->val(r, c) = orig + h;
                double up = scalar_fn();
                p->val(r, c) = orig - h;
                double dn = scalar_fn();
                p->val(r, c) = orig;
                double fd = (up - dn) / (2 * h);
                double an = p->grad.size() ? p->grad(r, c) : 0.0;
                num += (fd - an) * (fd - an);
                den += an * an;
            }
    }
    return std::sqrt(num / std::max(den, 1e-12));
}

}  // namespace

TEST_CASE("matmul/add/softplus gradient check") {
    Rng rng(3);
    Var W = ag::param(randn_mat(rng, 4, 3));
    Var b = ag::param(randn_mat(rng, 1, 3));
    MatrixXf x = randn_mat(rng, 5, 4);
    auto graph = [&] {
        Var h = ag::softplus(ag::add_rowvec(ag::matmul(ag::constant(x), W), b));
        return ag::sum_all(ag::square(h), 0.1f);
    };
    auto scalar = [&] { return static_cast<double>(graph()->val(0, 0)); };
    CHECK(max_rel_grad_error({W, b}, scalar, graph) < 1e-2);
}

TEST_CASE("elementwise ops gradient check") {
    Rng rng(5);
    Var a = ag::param(randn_mat(rng, 3, 4));
    Var b = ag::param(randn_mat(rng, 3, 4));
    auto graph = [&] {
        Var m = ag::mul(ag::tanh_op(a), ag::sigmoid_op(b));
        m = ag::sub(m, ag::scale(a, 0.3f));
        return ag::sum_all(ag::square(m));
    };
    auto scalar = [&] { return static_cast<double>(graph()->val(0, 0)); };
    CHECK(max_rel_grad_error({a, b}, scalar, graph) < 1e-2);
}

TEST_CASE("softmax_ce gradient check and values") {
    Rng rng(9);
    Var z = ag::param(randn_mat(rng, 6, 4));
    std::vector<int> labels{0, 1, 2, 3, 1, 0};
    auto graph = [&] { return ag::softmax_ce(z, labels); };
    auto scalar = [&] { return static_cast<double>(graph()->val(0, 0)); };
    CHECK(max_rel_grad_error({z}, scalar, graph) < 1e-2);

    Var uni = ag::constant(MatrixXf::Zero(2, 4));
    CHECK(ag::softmax_ce(uni, {0, 3})->val(0, 0) ==
          doctest::Approx(std::log(4.0)).epsilon(1e-5));
}

TEST_CASE("group softmax is a simplex and matches plain softmax") {
    Rng rng(13);
    Var s = ag::param(randn_mat(rng, 12, 1));
    Var a = ag::group_softmax(s, 4);
    for (int g = 0; g < 3; ++g) {
        float sum = a->val.block(g * 4, 0, 4, 1).sum();
        CHECK(sum == doctest::Approx(1.f).epsilon(1e-5));
        CHECK(a->val.block(g * 4, 0, 4, 1).minCoeff() >= 0);
    }
    auto graph = [&] {
        return ag::sum_all(ag::square(ag::group_softmax(s, 4)));
    };
    auto scalar = [&] { return static_cast<double>(graph()->val(0, 0)); };
    CHECK(max_rel_grad_error({s}, scalar, graph) < 1e-2);
}

TEST_CASE("group weighted sum gradient check") {
    Rng rng(17);
    Var w = ag::param(randn_mat(rng, 6, 1));
    Var f = ag::param(randn_mat(rng, 6, 3));
    auto graph = [&] {
        return ag::sum_all(ag::square(ag::group_weighted_sum(w, f, 3)));
    };
    auto scalar = [&] { return static_cast<double>(graph()->val(0, 0)); };
    CHECK(max_rel_grad_error({w, f}, scalar, graph) < 1e-2);
}

TEST_CASE("channel_mean and concat gradient check") {
    Rng rng(21);
    Var x = ag::param(randn_mat(rng, 2, 12));  // 3 channels x 4 cells
    Var y = ag::param(randn_mat(rng, 2, 3));
    auto graph = [&] {
        Var m = ag::channel_mean(x, 3, 4);
        return ag::sum_all(ag::square(ag::concat_cols({m, y})));
    };
    auto scalar = [&] { return static_cast<double>(graph()->val(0, 0)); };
    CHECK(max_rel_grad_error({x, y}, scalar, graph) < 1e-2);
}

TEST_CASE("conv2d matches direct convolution and gradient check") {
    Rng rng(25);
    nn::Conv2d conv(2, 3, 3, 2, 1, rng);
    const int H = 5, W = 6;
    MatrixXf x = randn_mat(rng, 2, 2 * H * W);
    Var xin = ag::param(x);

    Var out = conv.forward(xin, H, W);
    const int Ho = conv.out_dim(H), Wo = conv.out_dim(W);
    REQUIRE(out->val.cols() == 3 * Ho * Wo);
    // direct convolution on one output cell
    for (int n = 0; n < 2; ++n)
        for (int oc = 0; oc < 3; ++oc)
            for (int oy = 0; oy < Ho; ++oy)
                for (int ox = 0; ox < Wo; ++ox) {
                    float acc = conv.b->val(0, oc);
                    for (int c = 0; c < 2; ++c)
                        for (int ky = 0; ky < 3; ++ky)
                            for (int kx = 0; kx < 3; ++kx) {
                                int iy = oy * 2 + ky - 1, ix = ox * 2 + kx - 1;
                                if (iy < 0 || iy >= H || ix < 0 || ix >= W)
                                    continue;
                                acc += conv.W->val(oc, (c * 3 + ky) * 3 + kx) *
                                       x(n, c * H * W + iy * W + ix);
                            }
                    CHECK(out->val(n, oc * Ho * Wo + oy * Wo + ox) ==
                          doctest::Approx(acc).epsilon(1e-4));
                }

    auto graph = [&] {
        return ag::sum_all(ag::square(conv.forward(xin, H, W)), 0.5f);
    };
    auto scalar = [&] { return static_cast<double>(graph()->val(0, 0)); };
    CHECK(max_rel_grad_error({conv.W, conv.b, xin}, scalar, graph) < 1e-2);
}

TEST_CASE("batchnorm train/eval gradient check") {
    Rng rng(31);
    nn::BatchNorm1d bn(4);
    Var x = ag::param(randn_mat(rng, 8, 4));

    SUBCASE("training mode") {
        auto graph = [&] {
            // running stats are mutated; snapshot and restore around calls
            auto rm = bn.running_mean;
            auto rv = bn.running_var;
            Var out = ag::sum_all(ag::square(bn.forward(x, true)));
            bn.running_mean = rm;
            bn.running_var = rv;
            return out;
        };
        auto scalar = [&] { return static_cast<double>(graph()->val(0, 0)); };
        CHECK(max_rel_grad_error({x, bn.gamma, bn.beta}, scalar, graph) < 1e-2);
    }
    SUBCASE("eval mode") {
        bn.running_mean = randn_mat(rng, 1, 4).row(0);
        bn.running_var = randn_mat(rng, 1, 4).row(0).array().abs() + 0.5f;
        auto graph = [&] {
            return ag::sum_all(ag::square(bn.forward(x, false)));
        };
        auto scalar = [&] { return static_cast<double>(graph()->val(0, 0)); };
        CHECK(max_rel_grad_error({x, bn.gamma, bn.beta}, scalar, graph) < 1e-2);
    }
}

TEST_CASE("scale_rows gradient check") {
    Rng rng(37);
    Var x = ag::param(randn_mat(rng, 4, 3));
    VectorXf s = randn_vec(rng, 4);
    auto graph = [&] { return ag::sum_all(ag::square(ag::scale_rows(x, s))); };
    auto scalar = [&] { return static_cast<double>(graph()->val(0, 0)); };
    CHECK(max_rel_grad_error({x}, scalar, graph) < 1e-2);
}

TEST_CASE("adam decreases a quadratic") {
    Rng rng(41);
    Var w = ag::param(randn_mat(rng, 1, 8));
    nn::Adam opt;
    auto loss_val = [&] { return w->val.squaredNorm(); };
    double before = loss_val();
    for (int i = 0; i < 200; ++i) {
        nn::zero_grads({w});
        Var loss = ag::sum_all(ag::square(w));
        ag::backward(loss);
        opt.update({w}, 0.05f);
        opt.tick();
    }
    CHECK(loss_val() < before * 0.01);
}
