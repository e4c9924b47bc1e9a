#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "dmic/denoiser.hpp"

using namespace dmic;

namespace {

DenoiserConfig small_cfg() {
    DenoiserConfig c;
    c.K = 3;
    c.d_lat = 16;
    c.image_h = c.image_w = 16;
    c.encoder_channels = {4, 8};
    return c;
}

}  // namespace

TEST_CASE("sinusoid embedding properties") {
    auto e = sinusoid_embedding(0, 8);
    for (int i = 0; i < 4; ++i) {
        CHECK(e[2 * i] == doctest::Approx(0));      // sin(0)
        CHECK(e[2 * i + 1] == doctest::Approx(1));  // cos(0)
    }
    // every entry bounded, pairs lie on the unit circle
    auto f = sinusoid_embedding(57, 32);
    for (int i = 0; i < 16; ++i) {
        double s = f[2 * i], c = f[2 * i + 1];
        CHECK(s * s + c * c == doctest::Approx(1.0).epsilon(1e-5));
    }
    // first pair is plain sin/cos of t
    CHECK(f[0] == doctest::Approx(std::sin(57.0)).epsilon(1e-5));
    CHECK(f[1] == doctest::Approx(std::cos(57.0)).epsilon(1e-5));
    // distinct timesteps map to distinct embeddings
    CHECK((sinusoid_embedding(3, 16) - sinusoid_embedding(4, 16)).norm() >
          1e-3);
    CHECK(sinusoid_embedding(5, 7).size() == 7);
}

TEST_CASE("predict_noise shapes and validation") {
    Rng rng(1);
    auto cfg = small_cfg();
    Denoiser den(cfg, rng);
    const int B = 4;
    MatrixXf images = randn_mat(rng, B, 16 * 16);
    ag::Var rho = den.embed_image(ag::constant(images));
    CHECK(rho->val.rows() == B);
    CHECK(rho->val.cols() == cfg.d_lat);
    ag::Var y = ag::constant(randn_mat(rng, B, cfg.K));
    std::vector<int> ts{1, 5, 9, 2};
    ag::Var out = den.predict_noise(rho, y, y, y, ts);
    CHECK(out->val.rows() == B);
    CHECK(out->val.cols() == cfg.K);
    CHECK(out->val.allFinite());

    ag::Var bad = ag::constant(randn_mat(rng, B, cfg.K + 1));
    CHECK_THROWS_AS(den.predict_noise(rho, bad, y, y, ts), ShapeError);
    CHECK_THROWS_AS(den.embed_timestep({0}, 0), RuntimeError);
}

TEST_CASE("parameter count matches the instantiated model") {
    for (auto cfg : {small_cfg(), DenoiserConfig{}}) {
        Rng rng(2);
        Denoiser den(cfg, rng);
        long total = 0;
        for (auto& p : den.named_params()) total += p.var->val.size();
        CHECK(total == Denoiser::param_count(cfg));
    }
}

TEST_CASE("timestep conditioning changes the output") {
    Rng rng(3);
    auto cfg = small_cfg();
    Denoiser den(cfg, rng);
    MatrixXf images = randn_mat(rng, 2, 16 * 16);
    ag::Var rho = den.embed_image(ag::constant(images));
    ag::Var y = ag::constant(randn_mat(rng, 2, cfg.K));
    MatrixXf a = den.predict_noise(rho, y, y, y, {1, 1})->val;
    MatrixXf b = den.predict_noise(rho, y, y, y, {50, 50})->val;
    CHECK((a - b).cwiseAbs().maxCoeff() > 1e-4f);
    // the three conditioning sites use independent learned embeddings
    MatrixXf e0 = den.embed_timestep({7}, 0)->val;
    MatrixXf e1 = den.embed_timestep({7}, 1)->val;
    CHECK((e0 - e1).cwiseAbs().maxCoeff() > 1e-4f);
}

TEST_CASE("eval mode is deterministic and batch-independent") {
    Rng rng(4);
    auto cfg = small_cfg();
    Denoiser den(cfg, rng);
    den.training_mode = false;
    MatrixXf images = randn_mat(rng, 3, 16 * 16);
    ag::Var rho = den.embed_image(ag::constant(images));
    MatrixXf ys = randn_mat(rng, 3, cfg.K);
    ag::Var y = ag::constant(ys);
    std::vector<int> ts{2, 4, 8};
    MatrixXf full = den.predict_noise(rho, y, y, y, ts)->val;
    MatrixXf again = den.predict_noise(rho, y, y, y, ts)->val;
    CHECK((full - again).cwiseAbs().maxCoeff() == doctest::Approx(0));
    // each row computed alone matches its row in the batch
    for (int i = 0; i < 3; ++i) {
        ag::Var rho_i =
            den.embed_image(ag::constant(MatrixXf(images.row(i))));
        ag::Var y_i = ag::constant(MatrixXf(ys.row(i)));
        MatrixXf row =
            den.predict_noise(rho_i, y_i, y_i, y_i, {ts[i]})->val;
        CHECK((row - full.row(i)).cwiseAbs().maxCoeff() < 1e-4f);
    }
}

TEST_CASE("zeroed output layer reduces the model to its bias") {
    Rng rng(5);
    auto cfg = small_cfg();
    Denoiser den(cfg, rng);
    den.output_layer.W->val.setZero();
    den.output_layer.b->val.setConstant(0.25f);
    MatrixXf images = randn_mat(rng, 2, 16 * 16);
    ag::Var rho = den.embed_image(ag::constant(images));
    ag::Var y = ag::constant(randn_mat(rng, 2, cfg.K));
    MatrixXf out = den.predict_noise(rho, y, y, y, {3, 7})->val;
    CHECK((out.array() - 0.25f).abs().maxCoeff() < 1e-6f);
}

TEST_CASE("gradients flow to every parameter") {
    Rng rng(6);
    auto cfg = small_cfg();
    Denoiser den(cfg, rng);
    den.training_mode = true;
    MatrixXf images = randn_mat(rng, 2, 16 * 16);
    ag::Var rho = den.embed_image(ag::constant(images));
    ag::Var y = ag::constant(randn_mat(rng, 2, cfg.K));
    ag::Var loss = ag::sum_all(ag::square(den.predict_noise(rho, y, y, y, {1, 2})), 1.f);
    ag::backward(loss);
    for (auto& p : den.named_params()) {
        INFO(p.name);
        REQUIRE(p.var->grad.size() > 0);
        CHECK(p.var->grad.allFinite());
    }
}

TEST_CASE("finite differences validate a parameter slice") {
    Rng rng(7);
    auto cfg = small_cfg();
    cfg.encoder_channels = {4};
    Denoiser den(cfg, rng);
    den.training_mode = false;  // frozen batchnorm keeps FD well-defined
    MatrixXf images = randn_mat(rng, 2, 16 * 16);
    MatrixXf ys = randn_mat(rng, 2, cfg.K);
    std::vector<int> ts{2, 5};
    auto graph = [&] {
        ag::Var rho = den.embed_image(ag::constant(images));
        ag::Var y = ag::constant(ys);
        return ag::sum_all(ag::square(den.predict_noise(rho, y, y, y, ts)), 1.f);
    };
    ag::Var loss = graph();
    ag::backward(loss);

    // a handful of entries from structurally different parameters
    std::vector<std::pair<ag::Var, std::pair<int, int>>> picks = {
        {den.input_layer.W, {0, 0}},    {den.input_layer.b, {0, 3}},
        {den.time_embeds[0].W, {1, 2}}, {den.mid_layers[0].W, {2, 1}},
        {den.mid_norms[0].gamma, {0, 4}}, {den.output_layer.W, {5, 1}},
        {den.output_layer.b, {0, 0}},   {den.proj.W, {0, 1}},
        {den.encoder.blocks[0].W, {1, 3}}, {den.encoder.blocks[0].b, {0, 2}},
    };
    const float h = 1e-2f;
    double num = 0, den_acc = 0;
    for (auto& [v, rc] : picks) {
        auto [r, c] = rc;
        float an = v->grad(r, c);
        float orig = v->val(r, c);
        v->val(r, c) = orig + h;
        double up = graph()->val(0, 0);
        v->val(r, c) = orig - h;
        double dn = graph()->val(0, 0);
        v->val(r, c) = orig;
        double fd = (up - dn) / (2 * h);
        num += std::pow(fd - an, 2);
        den_acc += std::pow(an, 2);
    }
    CHECK(std::sqrt(num / std::max(den_acc, 1e-12)) < 5e-2);
}

TEST_CASE("config validation") {
    DenoiserConfig c;
    c.K = 1;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c.K = 4;
    c.d_lat = 0;
    CHECK_THROWS_AS(c.validate(), ConfigError);
}
