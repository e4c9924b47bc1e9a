#pragma once

// Trajectory visualization: record intermediate reconstructions along the
// reverse chain, project to 2-D with a PCA basis fit on the final-step
// cloud, emit per-step CSVs, an SVG scatter, and silhouette scores.

#include <filesystem>
#include <fstream>

#include "dmic/metrics.hpp"
#include "dmic/sampler.hpp"
#include "dmic/training.hpp"

namespace dmic {

struct Pca2 {
    Eigen::RowVectorXf mean;
    MatrixXf basis;  // (dim, 2)

    static Pca2 fit(const MatrixXf& points) {
        Pca2 p;
        p.mean = points.colwise().mean();
        MatrixXf centered = points.rowwise() - p.mean;
        Eigen::MatrixXd cov =
            (centered.transpose() * centered).cast<double>() /
            std::max<double>(1.0, points.rows() - 1);
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(cov);
        const Eigen::Index d = cov.rows();
        p.basis.resize(d, 2);
        for (int c = 0; c < 2; ++c) {
            Eigen::VectorXd v = es.eigenvectors().col(d - 1 - std::min<Eigen::Index>(c, d - 1));
            // sign convention: largest-magnitude entry positive
            Eigen::Index imax;
            v.cwiseAbs().maxCoeff(&imax);
            if (v[imax] < 0) v = -v;
            p.basis.col(c) = v.cast<float>();
        }
        return p;
    }
    MatrixXf project(const MatrixXf& points) const {
        return (points.rowwise() - mean) * basis;
    }
};

inline std::string svg_scatter(const MatrixXf& xy, const std::vector<int>& labels,
                               int K) {
    static const char* palette[] = {"#1f77b4", "#ff7f0e", "#2ca02c", "#d62728",
                                    "#9467bd", "#8c564b", "#e377c2", "#7f7f7f"};
    const int W = 640, H = 640, margin = 40;
    float xmin = xy.col(0).minCoeff(), xmax = xy.col(0).maxCoeff();
    float ymin = xy.col(1).minCoeff(), ymax = xy.col(1).maxCoeff();
    float xr = std::max(xmax - xmin, 1e-6f), yr = std::max(ymax - ymin, 1e-6f);
    std::ostringstream os;
    os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W
       << "\" height=\"" << H << "\">\n"
       << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    char buf[160];
    for (Eigen::Index i = 0; i < xy.rows(); ++i) {
        float px = margin + (xy(i, 0) - xmin) / xr * (W - 2 * margin);
        float py = H - margin - (xy(i, 1) - ymin) / yr * (H - 2 * margin);
        snprintf(buf, sizeof(buf),
                 "<circle cx=\"%.2f\" cy=\"%.2f\" r=\"3\" fill=\"%s\" "
                 "fill-opacity=\"0.7\"/>\n",
                 px, py, palette[labels[i] % 8]);
        os << buf;
    }
    os << "</svg>\n";
    return os.str();
}

struct TrajectoryVizResult {
    std::vector<int> steps;
    std::vector<double> silhouettes;  // per recorded step, same order
};

inline TrajectoryVizResult trajectory_viz(ModelBundle& bundle,
                                          const Dataset& data,
                                          std::vector<int> steps_to_record,
                                          const std::string& out_dir,
                                          int T_infer, uint64_t seed,
                                          int chunk = 256) {
    namespace fs = std::filesystem;
    if (data.size() == 0) throw DataError("trajectory_viz: empty dataset");
    std::vector<int> ts = inference_timesteps(bundle.sched.T, T_infer);
    for (int s : steps_to_record)
        if (std::find(ts.begin(), ts.end(), s) == ts.end())
            throw ConfigError("requested step " + std::to_string(s) +
                              " is not in the inference schedule");
    std::sort(steps_to_record.begin(), steps_to_record.end(),
              std::greater<int>());

    // collect y0_hat clouds per recorded step
    std::map<int, MatrixXf> clouds;
    for (int s : steps_to_record)
        clouds[s].resize(data.size(), bundle.den_cfg.K);
    Rng rng(seed);
    for (int s = 0; s < data.size(); s += chunk) {
        int n = std::min(chunk, data.size() - s);
        auto res = classify_batch(bundle, data.images.middleRows(s, n), T_infer,
                                  rng, steps_to_record);
        for (auto& tp : res.trajectory)
            clouds[tp.t].middleRows(s, n) = tp.y0_hat;
    }

    Pca2 pca = Pca2::fit(clouds[steps_to_record.back()]);  // final step cloud
    fs::create_directories(out_dir);
    TrajectoryVizResult out;
    std::ofstream sil(fs::path(out_dir) / "silhouette.csv");
    sil << "t,silhouette\n";
    for (int s : steps_to_record) {
        MatrixXf xy = pca.project(clouds[s]);
        std::ofstream csv(fs::path(out_dir) /
                          ("trajectory_t" + std::to_string(s) + ".csv"));
        csv << "t,index,label,x,y\n";
        for (int i = 0; i < data.size(); ++i)
            csv << s << "," << i << "," << data.labels[i] << ","
                << format_fixed(xy(i, 0)) << "," << format_fixed(xy(i, 1))
                << "\n";
        double sc = silhouette_score(xy, data.labels, data.K);
        out.steps.push_back(s);
        out.silhouettes.push_back(sc);
        sil << s << "," << format_fixed(sc) << "\n";
    }
    MatrixXf final_xy = pca.project(clouds[steps_to_record.back()]);
    std::ofstream svg(fs::path(out_dir) / "scatter.svg");
    svg << svg_scatter(final_xy, data.labels, data.K);
    return out;
}

}  // namespace dmic
