#pragma once

// End-to-end training: DCG warm-up, joint diffusion + DCG optimization
// with two Adam parameter groups, periodic evaluation, checkpointing.

#include <filesystem>

#include "dmic/checkpoint.hpp"
#include "dmic/data.hpp"
#include "dmic/metrics.hpp"
#include "dmic/sampler.hpp"

namespace dmic {

struct StepLosses {
    double total = 0, eps = 0, mmd_g = 0, mmd_l = 0, ce = 0;
};

inline std::vector<ag::Var> dcg_param_vars(ModelBundle& b) {
    return nn::vars_of(b.dcg.named_params());
}

inline std::vector<ag::Var> denoiser_param_vars(ModelBundle& b) {
    std::vector<nn::NamedParam> named;
    b.denoiser.collect(named);
    if (b.variant == Variant::Basic) b.basic_head.collect("basic.head", named);
    if (b.freeze_encoder && b.uses_diffusion()) {
        std::erase_if(named, [](const nn::NamedParam& p) {
            return p.name.rfind("den.enc", 0) == 0 || p.name.rfind("den.proj", 0) == 0;
        });
    }
    return nn::vars_of(named);
}

// One optimization step on a mini-batch. Timesteps are sampled per batch
// element; each MMD branch draws its own noise.
inline StepLosses train_step(ModelBundle& b, nn::Adam& opt,
                             const MatrixXf& images,
                             const std::vector<int>& labels,
                             const RunConfig& cfg, Rng& rng,
                             int batch_index = -1) {
    const int B = static_cast<int>(images.rows());
    const int K = cfg.K;
    StepLosses out;
    auto den_params = denoiser_param_vars(b);
    auto dcg_params = b.uses_dcg() ? dcg_param_vars(b) : std::vector<ag::Var>{};
    nn::zero_grads(den_params);
    nn::zero_grads(dcg_params);

    ag::Var loss;
    b.denoiser.training_mode = true;
    ag::Var img_node = ag::constant(images);

    if (b.variant == Variant::Basic) {
        // plain CE classifier on the image embedding; no diffusion
        ag::Var rho = b.denoiser.embed_image(img_node);
        loss = ag::softmax_ce(b.basic_head.forward(rho), labels);
        out.ce = loss->val(0, 0);
    } else {
        std::uniform_int_distribution<int> tdist(1, b.sched.T);
        std::vector<int> ts(B);
        for (int i = 0; i < B; ++i) ts[i] = tdist(rng);
        const float s = b.y_scale;
        MatrixXf y0 = MatrixXf::Zero(B, K);
        for (int i = 0; i < B; ++i) y0(i, labels[i]) = s;
        MatrixXf eps = randn_mat(rng, B, K);

        ag::Var y_g, y_l;
        DCGModel::PriorNodes priors;
        if (b.uses_dcg()) {
            priors = b.dcg.priors_node(img_node);
            y_g = ag::scale(priors.y_g, s);
            y_l = ag::scale(priors.y_l, s);
        } else {
            y_g = ag::constant(MatrixXf::Constant(B, K, s / K));
            y_l = y_g;
        }
        ag::Var mu = b.prior_combine == PriorCombine::Sum
                         ? ag::add(y_g, y_l)
                         : ag::scale(ag::add(y_g, y_l), 0.5f);
        ag::Var rho = b.denoiser.embed_image(img_node);
        ag::Var y_t = forward_sample_node(y0, mu, ts, eps, b.sched);
        ag::Var eps_hat = b.denoiser.predict_noise(rho, y_t, y_g, y_l, ts);
        ag::Var l_eps = noise_loss(ag::constant(eps), eps_hat);
        out.eps = l_eps->val(0, 0);
        loss = l_eps;

        const bool use_mmd = b.variant == Variant::Full && cfg.lambda > 0;
        if (use_mmd) {
            MMDConfig mcfg = cfg.mmd_config();
            MatrixXf eps_g = randn_mat(rng, B, K);
            MatrixXf eps_l = randn_mat(rng, B, K);
            ag::Var yt_g = forward_sample_node(y0, y_g, ts, eps_g, b.sched);
            ag::Var yt_l = forward_sample_node(y0, y_l, ts, eps_l, b.sched);
            ag::Var m_g = b.denoiser.predict_noise(rho, yt_g, y_g, y_l, ts);
            ag::Var m_l = b.denoiser.predict_noise(rho, yt_l, y_g, y_l, ts);
            ag::Var l_g = mmd_loss(ag::constant(eps_g), m_g, mcfg);
            ag::Var l_l = mmd_loss(ag::constant(eps_l), m_l, mcfg);
            out.mmd_g = l_g->val(0, 0);
            out.mmd_l = l_l->val(0, 0);
            loss = total_loss(l_eps, l_g, l_l, static_cast<float>(cfg.lambda));
        }
        if (b.uses_dcg() && cfg.ce_weight > 0) {
            ag::Var ce = dcg_ce_loss(priors.y_g_logits, priors.y_l_logits, labels);
            out.ce = ce->val(0, 0);
            loss = ag::add_scalar(loss, ag::scale(ce, static_cast<float>(cfg.ce_weight)));
        }
    }

    out.total = loss->val(0, 0);
    if (!std::isfinite(out.total)) {
        std::ostringstream os;
        os << "non-finite loss at batch " << batch_index << " (variant "
           << cfg.variant << ", seed " << cfg.seed << ", lambda " << cfg.lambda
           << ", lr_denoiser " << cfg.lr_denoiser << ")";
        throw RuntimeError(os.str());
    }
    ag::backward(loss);
    opt.update(den_params, static_cast<float>(cfg.lr_denoiser));
    if (!dcg_params.empty())
        opt.update(dcg_params, static_cast<float>(cfg.lr_dcg));
    opt.tick();
    return out;
}

// Cross-entropy warm-up of the DCG model alone.
inline double pretrain_dcg(ModelBundle& b, nn::Adam& opt, const Dataset& train,
                           const RunConfig& cfg, Rng& rng, int epochs,
                           double lr) {
    if (!b.uses_dcg() || epochs <= 0) return 0.0;
    if (train.size() == 0) throw DataError("pretrain: empty dataset");
    auto params = dcg_param_vars(b);
    std::vector<int> order(train.size());
    std::iota(order.begin(), order.end(), 0);
    double last_epoch_ce = 0;
    for (int e = 0; e < epochs; ++e) {
        std::shuffle(order.begin(), order.end(), rng);
        double ce_sum = 0;
        int nb = 0;
        for (int s = 0; s + cfg.batch_size <= train.size(); s += cfg.batch_size) {
            MatrixXf batch(cfg.batch_size, train.images.cols());
            std::vector<int> labels(cfg.batch_size);
            for (int i = 0; i < cfg.batch_size; ++i) {
                batch.row(i) = augment_image(train.images.row(order[s + i]),
                                             train.c, train.h, train.w, rng);
                labels[i] = train.labels[order[s + i]];
            }
            nn::zero_grads(params);
            auto priors = b.dcg.priors_node(ag::constant(batch));
            ag::Var ce = dcg_ce_loss(priors.y_g_logits, priors.y_l_logits, labels);
            ce_sum += ce->val(0, 0);
            ++nb;
            ag::backward(ce);
            opt.update(params, static_cast<float>(lr));
            opt.tick();
        }
        last_epoch_ce = nb ? ce_sum / nb : 0;
    }
    return last_epoch_ce;
}

// Cross-entropy warm-up of the denoiser's image encoder through a throwaway
// linear head; the desk-scale stand-in for the pretrained backbone every
// variant of the reference model starts from.
inline double pretrain_encoder(ModelBundle& b, nn::Adam& opt,
                               const Dataset& train, const RunConfig& cfg,
                               Rng& rng, int epochs) {
    if (!b.uses_diffusion() || epochs <= 0) return 0.0;
    if (train.size() == 0) throw DataError("pretrain: empty dataset");
    nn::Linear head(b.den_cfg.d_lat, cfg.K, rng);
    std::vector<nn::NamedParam> named;
    b.denoiser.encoder.collect("warm.enc", named);
    b.denoiser.proj.collect("warm.proj", named);
    head.collect("warm.head", named);
    auto params = nn::vars_of(named);
    std::vector<int> order(train.size());
    std::iota(order.begin(), order.end(), 0);
    double last_epoch_ce = 0;
    for (int e = 0; e < epochs; ++e) {
        std::shuffle(order.begin(), order.end(), rng);
        double ce_sum = 0;
        int nb = 0;
        for (int s = 0; s + cfg.batch_size <= train.size(); s += cfg.batch_size) {
            MatrixXf batch(cfg.batch_size, train.images.cols());
            std::vector<int> labels(cfg.batch_size);
            for (int i = 0; i < cfg.batch_size; ++i) {
                batch.row(i) = augment_image(train.images.row(order[s + i]),
                                             train.c, train.h, train.w, rng);
                labels[i] = train.labels[order[s + i]];
            }
            nn::zero_grads(params);
            ag::Var ce = ag::softmax_ce(
                head.forward(b.denoiser.embed_image(ag::constant(batch))),
                labels);
            ce_sum += ce->val(0, 0);
            ++nb;
            ag::backward(ce);
            opt.update(params, static_cast<float>(cfg.lr_denoiser));
            opt.tick();
        }
        last_epoch_ce = nb ? ce_sum / nb : 0;
    }
    return last_epoch_ce;
}

// Warm-up of the denoiser trunk on class-free label states: y_t is drawn
// around the prior with no ground-truth leak, and the noise target is the
// one that reconstructs the true label, so the image pathway is the only
// route to a loss reduction. Upper half of the timestep range only; low
// timesteps invert a near-identity map and are left to the main objective.
inline double pretrain_routing(ModelBundle& b, nn::Adam& opt,
                               const Dataset& train, const RunConfig& cfg,
                               Rng& rng, int epochs) {
    if (!b.uses_diffusion() || epochs <= 0) return 0.0;
    if (train.size() == 0) throw DataError("pretrain: empty dataset");
    const int K = cfg.K;
    const float s = b.y_scale;
    auto params = denoiser_param_vars(b);
    std::vector<int> order(train.size());
    std::iota(order.begin(), order.end(), 0);
    std::uniform_int_distribution<int> tdist((b.sched.T + 1) / 2, b.sched.T);
    b.denoiser.training_mode = true;
    double last_epoch_loss = 0;
    for (int e = 0; e < epochs; ++e) {
        std::shuffle(order.begin(), order.end(), rng);
        double loss_sum = 0;
        int nb = 0;
        for (int bs = 0; bs + cfg.batch_size <= train.size();
             bs += cfg.batch_size) {
            const int B = cfg.batch_size;
            MatrixXf batch(B, train.images.cols());
            std::vector<int> labels(B);
            for (int i = 0; i < B; ++i) {
                batch.row(i) = augment_image(train.images.row(order[bs + i]),
                                             train.c, train.h, train.w, rng);
                labels[i] = train.labels[order[bs + i]];
            }
            std::vector<int> ts(B);
            for (int i = 0; i < B; ++i) ts[i] = tdist(rng);
            nn::zero_grads(params);
            ag::Var img_node = ag::constant(batch);
            ag::Var y_g, y_l;
            if (b.uses_dcg()) {
                auto priors = b.dcg.priors_node(img_node);
                y_g = ag::scale(priors.y_g, s);
                y_l = ag::scale(priors.y_l, s);
            } else {
                y_g = ag::constant(MatrixXf::Constant(B, K, s / K));
                y_l = y_g;
            }
            MatrixXf mu = b.prior_combine == PriorCombine::Sum
                              ? MatrixXf(y_g->val + y_l->val)
                              : MatrixXf(0.5f * (y_g->val + y_l->val));
            MatrixXf eps = randn_mat(rng, B, K);
            MatrixXf y_t(B, K), eps_star(B, K);
            for (int i = 0; i < B; ++i) {
                const float sa = std::sqrt(static_cast<float>(
                    b.sched.alpha_bar(ts[i])));
                const float sn = std::sqrt(1.f - static_cast<float>(
                    b.sched.alpha_bar(ts[i])));
                Eigen::RowVectorXf y0 = Eigen::RowVectorXf::Zero(K);
                y0(labels[i]) = s;
                y_t.row(i) = mu.row(i) + sn * eps.row(i);
                eps_star.row(i) =
                    eps.row(i) + (sa / sn) * (mu.row(i) - y0);
            }
            ag::Var rho = b.denoiser.embed_image(img_node);
            ag::Var eps_hat = b.denoiser.predict_noise(
                rho, ag::constant(y_t), y_g, y_l, ts);
            ag::Var l = noise_loss(ag::constant(eps_star), eps_hat);
            loss_sum += l->val(0, 0);
            ++nb;
            ag::backward(l);
            opt.update(params, static_cast<float>(cfg.lr_denoiser));
            opt.tick();
        }
        last_epoch_loss = nb ? loss_sum / nb : 0;
    }
    return last_epoch_loss;
}

struct EvalResult {
    double acc = 0, f1 = 0;
    std::vector<int> preds;
};

inline EvalResult evaluate(ModelBundle& b, const Dataset& test, int T_infer,
                           uint64_t seed, int chunk = 256) {
    EvalResult r;
    Rng rng(seed);
    for (int s = 0; s < test.size(); s += chunk) {
        int n = std::min(chunk, test.size() - s);
        MatrixXf imgs = test.images.middleRows(s, n);
        auto res = classify_batch(b, imgs, T_infer, rng);
        r.preds.insert(r.preds.end(), res.classes.begin(), res.classes.end());
    }
    r.acc = accuracy(r.preds, test.labels);
    r.f1 = macro_f1(r.preds, test.labels, test.K);
    return r;
}

struct ExperimentResult {
    Checkpoint best;       // best-accuracy checkpoint
    json metrics;          // final metrics report
    double best_acc = 0, final_acc = 0, final_f1 = 0;
};

inline std::string format_fixed(double v, int digits = 6) {
    char buf[64];
    snprintf(buf, sizeof(buf), "%.*f", digits, v);
    return buf;
}

// Full pipeline: seed, split, warm-up, joint training, periodic eval,
// best-checkpoint retention, metrics.json + curves.csv emission.
inline ExperimentResult run_experiment(const RunConfig& cfg,
                                       const std::string& out_dir,
                                       const Dataset* preloaded = nullptr) {
    cfg.validate();
    namespace fs = std::filesystem;
    if (!out_dir.empty()) fs::create_directories(out_dir);

    Dataset full;
    if (preloaded) {
        full = *preloaded;
    } else if (cfg.data_source == "synthetic") {
        std::vector<double> weights = cfg.synth_imbalance;
        if (weights.empty()) weights.assign(cfg.K, 1.0);
        full = synth_generate(cfg.K, cfg.synth_n, cfg.synth_noise,
                              cfg.synth_blur, weights, cfg.seed * 7919 + 17,
                              cfg.image_size, cfg.image_size);
    } else if (cfg.data_source == "image_folder") {
        full = load_image_folder(cfg.data_root, cfg.image_size, cfg.channels);
    } else {
        full = load_csv_index(cfg.data_root, cfg.image_size, cfg.channels);
    }
    if (full.K != cfg.K)
        throw ConfigError("dataset class count does not match config");
    auto [train, test] = stratified_split(full, cfg.split_ratio, cfg.seed + 101);

    Rng rng(cfg.seed);
    ModelBundle b = make_bundle(cfg, rng);
    nn::Adam opt;

    ExperimentResult result;
    std::ostringstream curves;
    curves << "epoch,loss,loss_eps,loss_mmd_g,loss_mmd_l,loss_ce,test_acc,test_f1\n";

    // from-scratch pretraining of the DCG backbones (stand-in for the
    // pretrained ResNet streams), then the short aligned warm-up
    double warm_ce = pretrain_dcg(b, opt, train, cfg, rng,
                                  b.uses_dcg() ? cfg.epochs : 0,
                                  cfg.lr_denoiser);
    warm_ce = pretrain_dcg(b, opt, train, cfg, rng,
                           b.uses_dcg() ? cfg.warmup_epochs : 0, cfg.lr_dcg);
    pretrain_encoder(b, opt, train, cfg, rng, cfg.epochs);
    pretrain_routing(b, opt, train, cfg, rng, cfg.routing_warmup_epochs);

    // cheap strided eval while training; full-length eval at the end
    const int T_eval = b.uses_diffusion() ? std::min(10, cfg.T_infer) : 1;
    std::vector<int> order(train.size());
    std::iota(order.begin(), order.end(), 0);
    json history = json::array();
    int best_epoch = -1;

    for (int e = 1; e <= cfg.epochs; ++e) {
        std::shuffle(order.begin(), order.end(), rng);
        StepLosses acc_losses;
        int nb = 0, bi = 0;
        for (int s = 0; s + cfg.batch_size <= train.size();
             s += cfg.batch_size, ++bi) {
            MatrixXf batch(cfg.batch_size, train.images.cols());
            std::vector<int> labels(cfg.batch_size);
            for (int i = 0; i < cfg.batch_size; ++i) {
                batch.row(i) = augment_image(train.images.row(order[s + i]),
                                             train.c, train.h, train.w, rng);
                labels[i] = train.labels[order[s + i]];
            }
            StepLosses l = train_step(b, opt, batch, labels, cfg, rng, bi);
            acc_losses.total += l.total;
            acc_losses.eps += l.eps;
            acc_losses.mmd_g += l.mmd_g;
            acc_losses.mmd_l += l.mmd_l;
            acc_losses.ce += l.ce;
            ++nb;
        }
        double acc = -1, f1 = -1;
        if (e % cfg.eval_every == 0 || e == cfg.epochs) {
            EvalResult ev = evaluate(b, test, T_eval, cfg.seed + 907 + e);
            acc = ev.acc;
            f1 = ev.f1;
            if (acc > result.best_acc || best_epoch < 0) {
                result.best_acc = acc;
                best_epoch = e;
                result.best = make_checkpoint(b, cfg, e, history);
            }
        }
        curves << e << "," << format_fixed(nb ? acc_losses.total / nb : 0) << ","
               << format_fixed(nb ? acc_losses.eps / nb : 0) << ","
               << format_fixed(nb ? acc_losses.mmd_g / nb : 0) << ","
               << format_fixed(nb ? acc_losses.mmd_l / nb : 0) << ","
               << format_fixed(nb ? acc_losses.ce / nb : 0) << ","
               << (acc < 0 ? "" : format_fixed(acc)) << ","
               << (f1 < 0 ? "" : format_fixed(f1)) << "\n";
        json h;
        h["epoch"] = e;
        h["loss"] = nb ? acc_losses.total / nb : 0;
        if (acc >= 0) {
            h["test_acc"] = acc;
            h["test_f1"] = f1;
        }
        history.push_back(h);
    }

    // final full-length evaluation of the last model state
    EvalResult fin = evaluate(b, test, b.uses_diffusion() ? cfg.T_infer : 1,
                              cfg.seed + 50021);
    result.final_acc = fin.acc;
    result.final_f1 = fin.f1;
    if (fin.acc >= result.best_acc || best_epoch < 0) {
        result.best_acc = fin.acc;
        best_epoch = cfg.epochs;
        result.best = make_checkpoint(b, cfg, cfg.epochs, history);
    }

    result.metrics["variant"] = cfg.variant;
    result.metrics["seed"] = cfg.seed;
    result.metrics["epochs"] = cfg.epochs;
    result.metrics["warmup_ce"] = format_fixed(warm_ce);
    result.metrics["best_epoch"] = best_epoch;
    result.metrics["best_acc"] = format_fixed(result.best_acc);
    result.metrics["final_acc"] = format_fixed(fin.acc);
    result.metrics["final_f1"] = format_fixed(fin.f1);
    result.metrics["train_size"] = train.size();
    result.metrics["test_size"] = test.size();

    if (!out_dir.empty()) {
        std::ofstream mj(fs::path(out_dir) / "metrics.json");
        mj << result.metrics.dump(2) << "\n";
        std::ofstream cv(fs::path(out_dir) / "curves.csv");
        cv << curves.str();
        result.best.save((fs::path(out_dir) / "checkpoint.dmic").string());
    }
    return result;
}

}  // namespace dmic
