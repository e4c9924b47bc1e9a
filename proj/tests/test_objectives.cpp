#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "dmic/objectives.hpp"

using namespace dmic;
using ag::Var;

namespace {

// independent O(B^2) double-loop oracle
double mmd_brute(const MatrixXf& n, const MatrixXf& m,
                 const std::vector<double>& bw, bool unbiased = false) {
    const int B = static_cast<int>(n.rows());
    auto kern = [&](const Eigen::RowVectorXf& a, const Eigen::RowVectorXf& b) {
        double d2 = (a - b).squaredNorm();
        double k = 0;
        for (double s : bw) k += std::exp(-d2 / (2 * s));
        return k / bw.size();
    };
    double knn = 0, kmn = 0, kmm = 0;
    for (int i = 0; i < B; ++i)
        for (int j = 0; j < B; ++j) {
            kmn += kern(m.row(i), n.row(j));
            if (unbiased && i == j) continue;
            knn += kern(n.row(i), n.row(j));
            kmm += kern(m.row(i), m.row(j));
        }
    double dn = unbiased ? double(B) * (B - 1) : double(B) * B;
    return knn / dn - 2 * kmn / (double(B) * B) + kmm / dn;
}

}  // namespace

TEST_CASE("noise loss basics") {
    MatrixXf e(1, 2);
    e << 1, 0;
    CHECK(noise_loss(ag::constant(e), ag::constant(e))->val(0, 0) ==
          doctest::Approx(0));
    MatrixXf z = MatrixXf::Zero(1, 2);
    CHECK(noise_loss(ag::constant(e), ag::constant(z))->val(0, 0) ==
          doctest::Approx(1.0));

    // random batch against naive summation
    Rng rng(5);
    MatrixXf a = randn_mat(rng, 7, 3), b = randn_mat(rng, 7, 3);
    double expect = 0;
    for (int i = 0; i < 7; ++i)
        for (int j = 0; j < 3; ++j)
            expect += (a(i, j) - b(i, j)) * (a(i, j) - b(i, j));
    expect /= 7;
    CHECK(noise_loss(ag::constant(a), ag::constant(b))->val(0, 0) ==
          doctest::Approx(expect).epsilon(1e-6));
}

TEST_CASE("mmd: identical batches give exactly zero") {
    Rng rng(11);
    MatrixXf a = randn_mat(rng, 8, 4);
    CHECK(mmd_loss(ag::constant(a), ag::constant(a))->val(0, 0) ==
          doctest::Approx(0).epsilon(1e-9));
}

TEST_CASE("mmd singleton closed form (kernel algebra)") {
    // 2 - 2 exp(-|x-y|^2 / (2 s^2)) for B=1 singletons, single bandwidth;
    // exercised through the kernel sums with a duplicated row pair
    MMDConfig cfg;
    cfg.bandwidth_sq = {1.0};
    MatrixXf x(2, 1), y(2, 1);
    x << 1, 1;
    y << 2, 2;
    double expect = 2 - 2 * std::exp(-0.5 * 1.0);
    // duplicated rows keep the V-statistic equal to the singleton value
    CHECK(mmd_loss(ag::constant(x), ag::constant(y), cfg)->val(0, 0) ==
          doctest::Approx(expect).epsilon(1e-6));
    CHECK_THROWS_AS(
        mmd_loss(ag::constant(MatrixXf::Zero(1, 1)), ag::constant(MatrixXf::Ones(1, 1)), cfg),
        ShapeError);
}

TEST_CASE("mmd matches the brute-force double loop") {
    Rng rng(17);
    for (int B : {2, 8, 32}) {
        for (int K : {2, 7}) {
            MatrixXf n = randn_mat(rng, B, K);
            MatrixXf m = randn_mat(rng, B, K) * 1.5f;
            MMDConfig cfg;
            double got = mmd_loss(ag::constant(n), ag::constant(m), cfg)->val(0, 0);
            CHECK(got == doctest::Approx(mmd_brute(n, m, cfg.bandwidth_sq))
                             .epsilon(1e-6));
            cfg.unbiased = true;
            got = mmd_loss(ag::constant(n), ag::constant(m), cfg)->val(0, 0);
            CHECK(got ==
                  doctest::Approx(mmd_brute(n, m, cfg.bandwidth_sq, true))
                      .epsilon(1e-6));
        }
    }
}

TEST_CASE("mmd non-negativity and row-permutation symmetry") {
    Rng rng(23);
    for (int trial = 0; trial < 20; ++trial) {
        MatrixXf n = randn_mat(rng, 6, 3), m = randn_mat(rng, 6, 3);
        double v = mmd_loss(ag::constant(n), ag::constant(m))->val(0, 0);
        CHECK(v > -1e-9);
        MatrixXf np = n;
        np.row(0).swap(np.row(5));
        np.row(1).swap(np.row(3));
        double vp = mmd_loss(ag::constant(np), ag::constant(m))->val(0, 0);
        CHECK(vp == doctest::Approx(v).epsilon(1e-6));
    }
}

TEST_CASE("mmd gradient matches finite differences") {
    Rng rng(29);
    Var m = ag::param(randn_mat(rng, 5, 3));
    MatrixXf n = randn_mat(rng, 5, 3);
    MMDConfig cfg;
    auto graph = [&] { return mmd_loss(ag::constant(n), m, cfg); };
    Var loss = graph();
    ag::backward(loss);
    double num = 0, den = 0;
    const float h = 1e-3f;
    for (int r = 0; r < 5; ++r)
        for (int c = 0; c < 3; ++c) {
            float orig = m->val(r, c);
            m->val(r, c) = orig + h;
            double up = graph()->val(0, 0);
            m->val(r, c) = orig - h;
            double dn = graph()->val(0, 0);
            m->val(r, c) = orig;
            double fd = (up - dn) / (2 * h);
            num += std::pow(fd - m->grad(r, c), 2);
            den += std::pow(m->grad(r, c), 2);
        }
    CHECK(std::sqrt(num / den) < 1e-2);
}

TEST_CASE("mmd gradient also flows to the first argument") {
    Rng rng(31);
    Var n = ag::param(randn_mat(rng, 4, 2));
    MatrixXf m = randn_mat(rng, 4, 2);
    auto graph = [&] { return mmd_loss(n, ag::constant(m)); };
    Var loss = graph();
    ag::backward(loss);
    double num = 0, den = 0;
    const float h = 1e-3f;
    for (int r = 0; r < 4; ++r)
        for (int c = 0; c < 2; ++c) {
            float orig = n->val(r, c);
            n->val(r, c) = orig + h;
            double up = graph()->val(0, 0);
            n->val(r, c) = orig - h;
            double dn = graph()->val(0, 0);
            n->val(r, c) = orig;
            double fd = (up - dn) / (2 * h);
            num += std::pow(fd - n->grad(r, c), 2);
            den += std::pow(n->grad(r, c), 2);
        }
    CHECK(std::sqrt(num / den) < 1e-2);
}

TEST_CASE("branch noisy sample delegates to forward_sample") {
    auto s = make_linear_schedule(50, 1e-3, 0.1);
    Rng rng(37);
    for (int trial = 0; trial < 50; ++trial) {
        int t = 1 + trial % 50;
        VectorXf y0 = randn_vec(rng, 4), prior = randn_vec(rng, 4),
                 eps = randn_vec(rng, 4);
        CHECK((branch_noisy_sample(y0, prior, t, eps, s) -
               forward_sample(y0, prior, t, eps, s))
                  .norm() == doctest::Approx(0));
    }
    VectorXf y0(2), zero = VectorXf::Zero(2);
    y0 << 1, 0;
    // prior = 0 reduces to vanilla DDPM forward
    VectorXf eps(2);
    eps << 0.3f, -0.2f;
    VectorXf got = branch_noisy_sample(y0, zero, 10, eps, s);
    float sa = static_cast<float>(std::sqrt(s.alpha_bar(10)));
    float sn = static_cast<float>(std::sqrt(1 - s.alpha_bar(10)));
    CHECK((got - (sa * y0 + sn * eps)).norm() < 1e-6);
    // prior = y0, eps = 0 is the fixed point
    CHECK((branch_noisy_sample(y0, y0, 10, zero, s) - y0).norm() < 1e-6);
}

TEST_CASE("total loss") {
    auto c = [](double v) {
        MatrixXf m(1, 1);
        m(0, 0) = static_cast<float>(v);
        return ag::constant(m);
    };
    CHECK(total_loss(c(1.7), c(0.4), c(0.9), 0.f)->val(0, 0) ==
          doctest::Approx(1.7));
    CHECK(total_loss(c(1.0), c(0.2), c(0.4), 0.5f)->val(0, 0) ==
          doctest::Approx(1.3));
    // linear in lambda: two-point check
    double l1 = total_loss(c(1.0), c(0.2), c(0.4), 1.f)->val(0, 0);
    double l2 = total_loss(c(1.0), c(0.2), c(0.4), 2.f)->val(0, 0);
    double l3 = total_loss(c(1.0), c(0.2), c(0.4), 3.f)->val(0, 0);
    CHECK(l3 - l2 == doctest::Approx(l2 - l1).epsilon(1e-6));
    CHECK_THROWS_AS(total_loss(c(1), c(1), c(1), -0.5f), ConfigError);
}

TEST_CASE("dcg cross-entropy") {
    MatrixXf uniform = MatrixXf::Zero(1, 5);
    Var ce = dcg_ce_loss(ag::constant(uniform), ag::constant(uniform), {2});
    CHECK(ce->val(0, 0) == doctest::Approx(2 * std::log(5.0)).epsilon(1e-5));

    MatrixXf sat = MatrixXf::Zero(1, 5);
    sat(0, 3) = 1e6f;
    CHECK(dcg_ce_loss(ag::constant(sat), ag::constant(sat), {3})->val(0, 0) <
          1e-5);

    // random case against the direct softmax-CE formula
    Rng rng(41);
    MatrixXf g = randn_mat(rng, 1, 4), l = randn_mat(rng, 1, 4);
    int label = 2;
    auto ce_direct = [&](const MatrixXf& z) {
        double mx = z.row(0).maxCoeff();
        double denom = 0;
        for (int k = 0; k < 4; ++k) denom += std::exp(z(0, k) - mx);
        return -(z(0, label) - mx - std::log(denom));
    };
    CHECK(dcg_ce_loss(ag::constant(g), ag::constant(l), {label})->val(0, 0) ==
          doctest::Approx(ce_direct(g) + ce_direct(l)).epsilon(1e-6));

    CHECK_THROWS_AS(dcg_ce_loss(ag::constant(g), ag::constant(l), {7}),
                    ShapeError);
}

TEST_CASE("mmd config validation") {
    MMDConfig bad;
    bad.bandwidth_sq = {};
    CHECK_THROWS_AS(bad.validate(), ConfigError);
    bad.bandwidth_sq = {1.0, -1.0};
    CHECK_THROWS_AS(bad.validate(), ConfigError);
}
