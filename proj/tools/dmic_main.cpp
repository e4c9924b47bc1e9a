// Unified command-line entry point: dataset generation, training,
// inference, evaluation, the ablation sweep, and trajectory plots.

#include <CLI11.hpp>
#include <zlib.h>

#include <iostream>

#include "dmic/dmic.hpp"

namespace {

using namespace dmic;

int g_log_level = 1;  // 0 quiet, 1 info, 2 debug

void log_info(const std::string& msg) {
    if (g_log_level >= 1) std::cerr << "[dmic] " << msg << std::endl;
}

uint32_t file_crc32(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot read " + path.string());
    uLong crc = crc32(0L, Z_NULL, 0);
    char buf[1 << 16];
    while (in.read(buf, sizeof(buf)) || in.gcount() > 0)
        crc = crc32(crc, reinterpret_cast<Bytef*>(buf),
                    static_cast<uInt>(in.gcount()));
    return static_cast<uint32_t>(crc);
}

std::vector<double> parse_weights(const std::string& s) {
    std::vector<double> out;
    std::stringstream ss(s);
    std::string tok;
    while (std::getline(ss, tok, ','))
        if (!tok.empty()) out.push_back(std::stod(tok));
    return out;
}

std::vector<uint64_t> parse_seeds(const std::string& s) {
    std::vector<uint64_t> out;
    std::stringstream ss(s);
    std::string tok;
    while (std::getline(ss, tok, ','))
        if (!tok.empty()) out.push_back(std::stoull(tok));
    return out;
}

RunConfig load_config(const std::string& path) {
    return path.empty() ? RunConfig{} : RunConfig::load(path);
}

int cmd_gen_data(int classes, int count, double noise, double blur,
                 const std::string& imbalance, uint64_t seed,
                 const std::string& out, int image_size) {
    std::vector<double> weights =
        imbalance.empty() ? std::vector<double>(classes, 1.0)
                          : parse_weights(imbalance);
    Dataset ds = synth_generate(classes, count, noise, blur, weights, seed,
                                image_size, image_size);
    fs::create_directories(out);
    json manifest;
    manifest["classes"] = classes;
    manifest["count"] = count;
    manifest["noise"] = noise;
    manifest["blur"] = blur;
    manifest["imbalance"] = weights;
    manifest["seed"] = seed;
    manifest["image_size"] = image_size;
    json files = json::array();
    std::ofstream index(fs::path(out) / "index.csv");
    index << "path,label\n";
    std::vector<int> counter(classes, 0);
    for (int i = 0; i < ds.size(); ++i) {
        int k = ds.labels[i];
        fs::path cls_dir = fs::path(out) / ds.class_names[k];
        fs::create_directories(cls_dir);
        char name[32];
        snprintf(name, sizeof(name), "img_%05d.png", counter[k]++);
        fs::path img_path = cls_dir / name;
        write_png(img_path.string(), ds.images.row(i), ds.h, ds.w);
        std::string rel = ds.class_names[k] + "/" + name;
        index << rel << "," << ds.class_names[k] << "\n";
        json f;
        f["path"] = rel;
        f["label"] = ds.class_names[k];
        f["crc32"] = file_crc32(img_path);
        files.push_back(f);
    }
    manifest["files"] = files;
    std::ofstream mf(fs::path(out) / "manifest.json");
    mf << manifest.dump(2) << "\n";
    log_info("wrote " + std::to_string(ds.size()) + " images to " + out);
    return 0;
}

int cmd_train(const std::string& config_path, const std::string& variant,
              long long seed, const std::string& out_dir) {
    RunConfig cfg = load_config(config_path);
    if (!variant.empty()) cfg.variant = variant;
    if (seed >= 0) cfg.seed = static_cast<uint64_t>(seed);
    cfg.validate();
    log_info("training variant " + cfg.variant + " seed " +
             std::to_string(cfg.seed));
    ExperimentResult r = run_experiment(cfg, out_dir);
    std::cout << r.metrics.dump(2) << std::endl;
    return 0;
}

Dataset dataset_from_config(const RunConfig& cfg) {
    if (cfg.data_source == "synthetic") {
        std::vector<double> weights = cfg.synth_imbalance;
        if (weights.empty()) weights.assign(cfg.K, 1.0);
        return synth_generate(cfg.K, cfg.synth_n, cfg.synth_noise,
                              cfg.synth_blur, weights, cfg.seed * 7919 + 17,
                              cfg.image_size, cfg.image_size);
    }
    if (cfg.data_source == "image_folder")
        return load_image_folder(cfg.data_root, cfg.image_size, cfg.channels);
    return load_csv_index(cfg.data_root, cfg.image_size, cfg.channels);
}

int cmd_infer(const std::string& ckpt_path, const std::string& input,
              int steps, int votes, const std::string& trajectory_out,
              long long seed) {
    auto [bundle, cfg] = load_bundle(Checkpoint::load(ckpt_path));
    const int T_infer = steps > 0 ? steps : cfg.T_infer;
    std::vector<std::string> paths;
    if (fs::is_directory(input)) {
        for (auto& e : fs::recursive_directory_iterator(input))
            if (e.is_regular_file()) paths.push_back(e.path().string());
        std::sort(paths.begin(), paths.end());
    } else {
        paths.push_back(input);
    }
    if (paths.empty()) throw DataError("no input images under " + input);

    std::vector<int> record;
    if (!trajectory_out.empty()) {
        auto ts = inference_timesteps(cfg.T, T_infer);
        record = {ts.front(), ts[ts.size() / 2], ts.back()};
    }
    Rng rng(seed >= 0 ? static_cast<uint64_t>(seed) : cfg.seed);
    std::cout << "index,path,class,class_name\n";
    for (size_t i = 0; i < paths.size(); ++i) {
        cv::Mat img = cv::imread(paths[i], cv::IMREAD_UNCHANGED);
        if (img.empty()) throw DataError("unreadable image: " + paths[i]);
        Eigen::RowVectorXf row =
            mat_to_row(center_crop_resize(img, cfg.image_size), cfg.channels);
        auto res = classify(bundle, row, bundle.uses_diffusion() ? T_infer : 1,
                            rng, record, votes);
        int cls = res.classes[0];
        std::cout << i << "," << paths[i] << "," << cls << ","
                  << (cls < cfg.K ? "class_" + std::to_string(cls) : "?")
                  << "\n";
        if (!trajectory_out.empty() && i == 0) {
            fs::create_directories(trajectory_out);
            for (auto& tp : res.trajectory) {
                std::ofstream csv(fs::path(trajectory_out) /
                                  ("trajectory_t" + std::to_string(tp.t) + ".csv"));
                csv << "t,index,label,";
                for (int k = 0; k < cfg.K; ++k)
                    csv << "y0_" << k << (k + 1 < cfg.K ? "," : "\n");
                csv << tp.t << ",0,-1,";
                for (int k = 0; k < cfg.K; ++k)
                    csv << format_fixed(tp.y0_hat(0, k))
                        << (k + 1 < cfg.K ? "," : "\n");
            }
        }
    }
    return 0;
}

int cmd_eval(const std::string& ckpt_path, const std::string& data_root,
             const std::string& data_source, int steps, long long seed,
             const std::string& out_dir) {
    auto [bundle, cfg] = load_bundle(Checkpoint::load(ckpt_path));
    if (!data_source.empty()) cfg.data_source = data_source;
    if (!data_root.empty()) cfg.data_root = data_root;
    cfg.validate();
    Dataset full = dataset_from_config(cfg);
    if (full.K != cfg.K)
        throw ConfigError("dataset class count does not match checkpoint");
    // same held-out test split the training run used
    auto [train, test] = stratified_split(full, cfg.split_ratio, cfg.seed + 101);
    const int T_infer = steps > 0 ? steps : cfg.T_infer;
    uint64_t s = seed >= 0 ? static_cast<uint64_t>(seed) : cfg.seed + 50021;
    EvalResult r =
        evaluate(bundle, test, bundle.uses_diffusion() ? T_infer : 1, s);
    json metrics;
    metrics["checkpoint"] = ckpt_path;
    metrics["variant"] = cfg.variant;
    metrics["test_size"] = test.size();
    metrics["t_infer"] = T_infer;
    metrics["accuracy"] = format_fixed(r.acc);
    metrics["macro_f1"] = format_fixed(r.f1);
    std::cout << metrics.dump(2) << std::endl;
    if (!out_dir.empty()) {
        fs::create_directories(out_dir);
        std::ofstream mj(fs::path(out_dir) / "metrics.json");
        mj << metrics.dump(2) << "\n";
    }
    return 0;
}

int cmd_ablate(const std::string& config_path, const std::string& seeds_str,
               const std::string& out_dir) {
    RunConfig cfg = load_config(config_path);
    std::vector<uint64_t> seeds = parse_seeds(seeds_str);
    AblationReport rep = run_ablation(cfg, seeds, out_dir, g_log_level >= 1);
    std::cout << rep.to_text();
    return 0;
}

int cmd_viz(const std::string& ckpt_path, const std::string& steps_str,
            int T_infer_arg, long long seed, const std::string& out_dir,
            int max_points) {
    auto [bundle, cfg] = load_bundle(Checkpoint::load(ckpt_path));
    Dataset full = dataset_from_config(cfg);
    auto [train, test] = stratified_split(full, cfg.split_ratio, cfg.seed + 101);
    if (max_points > 0 && test.size() > max_points) {
        Dataset cut;
        cut.K = test.K;
        cut.c = test.c;
        cut.h = test.h;
        cut.w = test.w;
        cut.class_names = test.class_names;
        cut.images = test.images.topRows(max_points);
        cut.labels.assign(test.labels.begin(), test.labels.begin() + max_points);
        test = cut;
    }
    const int T_infer = T_infer_arg > 0 ? T_infer_arg : cfg.T_infer;
    auto ts = inference_timesteps(cfg.T, T_infer);
    std::vector<int> record;
    if (steps_str.empty())
        record = {ts.front(), ts[ts.size() / 2], ts.back()};
    else
        for (uint64_t v : parse_seeds(steps_str)) record.push_back(static_cast<int>(v));
    uint64_t s = seed >= 0 ? static_cast<uint64_t>(seed) : cfg.seed;
    auto res = trajectory_viz(bundle, test, record, out_dir, T_infer, s);
    std::cout << "t,silhouette\n";
    for (size_t i = 0; i < res.steps.size(); ++i)
        std::cout << res.steps[i] << "," << format_fixed(res.silhouettes[i])
                  << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"label-space diffusion classifier"};
    app.require_subcommand(1);
    app.add_option("--log-level", g_log_level, "0 quiet, 1 info, 2 debug");

    auto* gen = app.add_subcommand("gen-data", "generate a synthetic dataset");
    int classes = 4, count = 2000, image_size = 64;
    double noise = 0.15, blur = 1.0;
    std::string imbalance, gen_out = "data";
    uint64_t gen_seed = 1;
    gen->add_option("--classes", classes);
    gen->add_option("--count", count);
    gen->add_option("--noise", noise);
    gen->add_option("--blur", blur);
    gen->add_option("--imbalance", imbalance, "comma-separated class weights");
    gen->add_option("--seed", gen_seed);
    gen->add_option("--image-size", image_size);
    gen->add_option("--out", gen_out)->required();

    auto* train = app.add_subcommand("train", "train a model");
    std::string t_config, t_variant, t_out = "runs/exp";
    long long t_seed = -1;
    train->add_option("--config", t_config, "TOML run configuration");
    train->add_option("--variant", t_variant, "basic | C1 | C2 | full");
    train->add_option("--seed", t_seed);
    train->add_option("--out-dir", t_out);

    auto* infer = app.add_subcommand("infer", "classify images");
    std::string i_ckpt, i_input, i_traj;
    int i_steps = 0, i_votes = 1;
    long long i_seed = -1;
    infer->add_option("--checkpoint", i_ckpt)->required();
    infer->add_option("--input", i_input, "image file or directory")->required();
    infer->add_option("--steps", i_steps, "inference timesteps");
    infer->add_option("--votes", i_votes, "majority-vote chain count");
    infer->add_option("--trajectory-out", i_traj);
    infer->add_option("--seed", i_seed);

    auto* ev = app.add_subcommand("eval", "evaluate a checkpoint");
    std::string e_ckpt, e_root, e_source, e_out;
    int e_steps = 0;
    long long e_seed = -1;
    ev->add_option("--checkpoint", e_ckpt)->required();
    ev->add_option("--data-root", e_root, "override dataset root/index");
    ev->add_option("--data-source", e_source, "synthetic | image_folder | csv_index");
    ev->add_option("--steps", e_steps);
    ev->add_option("--seed", e_seed);
    ev->add_option("--out-dir", e_out);

    auto* ab = app.add_subcommand("ablate", "run the four-variant sweep");
    std::string a_config, a_seeds = "1", a_out = "runs/ablation";
    ab->add_option("--config", a_config);
    ab->add_option("--seeds", a_seeds, "comma-separated seeds");
    ab->add_option("--out-dir", a_out);

    auto* vz = app.add_subcommand("viz", "trajectory visualization");
    std::string v_ckpt, v_steps, v_out = "runs/viz";
    int v_tinfer = 0, v_max = 0;
    long long v_seed = -1;
    vz->add_option("--checkpoint", v_ckpt)->required();
    vz->add_option("--record-steps", v_steps,
                   "comma-separated timesteps to record");
    vz->add_option("--steps", v_tinfer, "inference timesteps");
    vz->add_option("--seed", v_seed);
    vz->add_option("--max-points", v_max, "cap on test points plotted");
    vz->add_option("--out-dir", v_out);

    CLI11_PARSE(app, argc, argv);

    try {
        if (gen->parsed())
            return cmd_gen_data(classes, count, noise, blur, imbalance,
                                gen_seed, gen_out, image_size);
        if (train->parsed()) return cmd_train(t_config, t_variant, t_seed, t_out);
        if (infer->parsed())
            return cmd_infer(i_ckpt, i_input, i_steps, i_votes, i_traj, i_seed);
        if (ev->parsed())
            return cmd_eval(e_ckpt, e_root, e_source, e_steps, e_seed, e_out);
        if (ab->parsed()) return cmd_ablate(a_config, a_seeds, a_out);
        if (vz->parsed())
            return cmd_viz(v_ckpt, v_steps, v_tinfer, v_seed, v_out, v_max);
    } catch (const dmic::ConfigError& e) {
        std::cerr << "error[config]: " << e.what() << std::endl;
        return 2;
    } catch (const dmic::DataError& e) {
        std::cerr << "error[data]: " << e.what() << std::endl;
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "error[runtime]: " << e.what() << std::endl;
        return 4;
    }
    return 0;
}
