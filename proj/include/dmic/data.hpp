#pragma once

// Dataset ingestion, deterministic synthetic corpus generation, and
// stratified splitting. Images are float rows in [0,1], channel-major.

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <map>
#include <numeric>
#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>
#include <sstream>
#include <vector>

#include "dmic/common.hpp"

namespace dmic {

namespace fs = std::filesystem;

struct Dataset {
    int K = 0, c = 1, h = 0, w = 0;
    MatrixXf images;  // (n, c*h*w)
    std::vector<int> labels;
    std::vector<std::string> class_names;

    int size() const { return static_cast<int>(labels.size()); }
    std::vector<int> class_counts() const {
        std::vector<int> cnt(K, 0);
        for (int l : labels) cnt[l]++;
        return cnt;
    }
};

// Separable Gaussian blur, sigma = radius, zero radius is a no-op.
inline void gaussian_blur_inplace(
    Eigen::Ref<Eigen::RowVectorXf, 0, Eigen::InnerStride<>> img, int h, int w,
    double radius) {
    if (radius <= 0) return;
    const int half = std::max(1, static_cast<int>(std::ceil(3 * radius)));
    std::vector<float> kern(2 * half + 1);
    double s = 0;
    for (int i = -half; i <= half; ++i) {
        kern[i + half] =
            static_cast<float>(std::exp(-0.5 * i * i / (radius * radius)));
        s += kern[i + half];
    }
    for (auto& k : kern) k = static_cast<float>(k / s);
    std::vector<float> tmp(static_cast<size_t>(h) * w);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            float acc = 0;
            for (int i = -half; i <= half; ++i) {
                int xx = std::clamp(x + i, 0, w - 1);
                acc += kern[i + half] * img[y * w + xx];
            }
            tmp[static_cast<size_t>(y) * w + x] = acc;
        }
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            float acc = 0;
            for (int i = -half; i <= half; ++i) {
                int yy = std::clamp(y + i, 0, h - 1);
                acc += kern[i + half] * tmp[static_cast<size_t>(yy) * w + x];
            }
            img[y * w + x] = acc;
        }
}

// Class k is a localized oriented grating (class-specific frequency and
// angle) at a random offset over a speckled background.
inline Dataset synth_generate(int K, int n, double noise_sigma,
                              double blur_radius,
                              const std::vector<double>& imbalance,
                              uint64_t seed, int h = 64, int w = 64) {
    if (K < 2) throw ConfigError("synth: K >= 2 required");
    if (n < K) throw ConfigError("synth: n >= K required");
    if (static_cast<int>(imbalance.size()) != K)
        throw ConfigError("synth: imbalance weights must have K entries");
    double wsum = std::accumulate(imbalance.begin(), imbalance.end(), 0.0);
    if (wsum <= 0) throw DataError("synth: degenerate imbalance weights");

    Dataset ds;
    ds.K = K;
    ds.c = 1;
    ds.h = h;
    ds.w = w;
    ds.images.resize(n, h * w);
    ds.labels.resize(n);
    for (int k = 0; k < K; ++k) ds.class_names.push_back("class_" + std::to_string(k));

    Rng rng(seed);
    std::discrete_distribution<int> label_dist(imbalance.begin(), imbalance.end());
    const int patch = std::min({32, h, w});
    for (int i = 0; i < n; ++i) {
        int k = label_dist(rng);
        ds.labels[i] = k;
        auto row = ds.images.row(i);
        // speckled background
        for (int p = 0; p < h * w; ++p)
            row[p] = 0.5f + 0.08f * randn(rng);
        // class motif: grating frequency indexed by class; orientation is
        // shared so flips/rotations keep the label
        const double freq = 0.10 + 0.06 * k;
        const double theta = M_PI / 7;
        const double ct = std::cos(theta), st = std::sin(theta);
        const double phase = 0.0;
        int oy = static_cast<int>(uniform01(rng) * (h - patch));
        int ox = static_cast<int>(uniform01(rng) * (w - patch));
        for (int y = 0; y < patch; ++y)
            for (int x = 0; x < patch; ++x) {
                double v = std::sin(2 * M_PI * freq * (x * ct + y * st) + phase);
                // soft window keeps motif edges from dominating
                double wy = std::sin(M_PI * (y + 0.5) / patch);
                double wx = std::sin(M_PI * (x + 0.5) / patch);
                row[(oy + y) * w + (ox + x)] +=
                    static_cast<float>(0.30 * v * wy * wx);
            }
        gaussian_blur_inplace(row, h, w, blur_radius);
        if (noise_sigma > 0)
            for (int p = 0; p < h * w; ++p)
                row[p] += static_cast<float>(noise_sigma) * randn(rng);
        for (int p = 0; p < h * w; ++p) row[p] = std::clamp(row[p], 0.f, 1.f);
    }
    return ds;
}

inline std::pair<Dataset, Dataset> stratified_split(const Dataset& ds,
                                                    double ratio,
                                                    uint64_t seed) {
    if (!(ratio > 0 && ratio < 1))
        throw ConfigError("split: ratio must be in (0,1)");
    std::vector<std::vector<int>> by_class(ds.K);
    for (int i = 0; i < ds.size(); ++i) by_class[ds.labels[i]].push_back(i);
    for (auto& v : by_class)
        if (v.size() < 2) throw DataError("split: class with < 2 samples");
    Rng rng(seed);
    std::vector<int> train_idx, test_idx;
    for (auto& v : by_class) {
        std::shuffle(v.begin(), v.end(), rng);
        int ntr = static_cast<int>(std::llround(ratio * v.size()));
        ntr = std::clamp(ntr, 1, static_cast<int>(v.size()) - 1);
        train_idx.insert(train_idx.end(), v.begin(), v.begin() + ntr);
        test_idx.insert(test_idx.end(), v.begin() + ntr, v.end());
    }
    std::sort(train_idx.begin(), train_idx.end());
    std::sort(test_idx.begin(), test_idx.end());
    auto take = [&](const std::vector<int>& idx) {
        Dataset out;
        out.K = ds.K;
        out.c = ds.c;
        out.h = ds.h;
        out.w = ds.w;
        out.class_names = ds.class_names;
        out.images.resize(idx.size(), ds.images.cols());
        out.labels.resize(idx.size());
        for (size_t i = 0; i < idx.size(); ++i) {
            out.images.row(i) = ds.images.row(idx[i]);
            out.labels[i] = ds.labels[idx[i]];
        }
        return out;
    };
    return {take(train_idx), take(test_idx)};
}

// Center-crop to the largest square, then resize.
inline cv::Mat center_crop_resize(const cv::Mat& img, int target) {
    int side = std::min(img.rows, img.cols);
    int y0 = (img.rows - side) / 2, x0 = (img.cols - side) / 2;
    cv::Mat crop = img(cv::Rect(x0, y0, side, side));
    cv::Mat out;
    cv::resize(crop, out, cv::Size(target, target), 0, 0, cv::INTER_LINEAR);
    return out;
}

inline Eigen::RowVectorXf mat_to_row(const cv::Mat& m, int channels) {
    cv::Mat conv;
    if (channels == 1 && m.channels() != 1)
        cv::cvtColor(m, conv, cv::COLOR_BGR2GRAY);
    else if (channels == 3 && m.channels() == 1)
        cv::cvtColor(m, conv, cv::COLOR_GRAY2BGR);
    else
        conv = m;
    Eigen::RowVectorXf row(channels * conv.rows * conv.cols);
    for (int c = 0; c < channels; ++c)
        for (int y = 0; y < conv.rows; ++y)
            for (int x = 0; x < conv.cols; ++x) {
                uchar v = channels == 1 ? conv.at<uchar>(y, x)
                                        : conv.at<cv::Vec3b>(y, x)[c];
                row[(static_cast<Eigen::Index>(c) * conv.rows + y) * conv.cols + x] =
                    v / 255.f;
            }
    return row;
}

inline Dataset load_image_folder(const std::string& root, int target_size,
                                 int channels = 1) {
    if (!fs::is_directory(root))
        throw DataError("image folder not found: " + root);
    std::vector<std::string> classes;
    for (auto& e : fs::directory_iterator(root))
        if (e.is_directory()) classes.push_back(e.path().filename().string());
    std::sort(classes.begin(), classes.end());
    if (classes.empty()) throw DataError("no class subdirectories in " + root);

    std::vector<Eigen::RowVectorXf> rows;
    std::vector<int> labels;
    for (size_t k = 0; k < classes.size(); ++k) {
        std::vector<std::string> files;
        for (auto& e : fs::directory_iterator(fs::path(root) / classes[k]))
            if (e.is_regular_file()) files.push_back(e.path().string());
        std::sort(files.begin(), files.end());
        if (files.empty()) throw DataError("empty class: " + classes[k]);
        for (auto& f : files) {
            cv::Mat img = cv::imread(f, cv::IMREAD_UNCHANGED);
            if (img.empty()) throw DataError("unreadable image: " + f);
            rows.push_back(mat_to_row(center_crop_resize(img, target_size), channels));
            labels.push_back(static_cast<int>(k));
        }
    }
    Dataset ds;
    ds.K = static_cast<int>(classes.size());
    ds.c = channels;
    ds.h = ds.w = target_size;
    ds.class_names = classes;
    ds.images.resize(rows.size(), rows[0].size());
    for (size_t i = 0; i < rows.size(); ++i) ds.images.row(i) = rows[i];
    ds.labels = labels;
    return ds;
}

inline Dataset load_csv_index(const std::string& csv_path, int target_size,
                              int channels = 1) {
    std::ifstream in(csv_path);
    if (!in) throw DataError("cannot open index: " + csv_path);
    fs::path base = fs::path(csv_path).parent_path();
    std::vector<std::pair<std::string, std::string>> entries;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        auto comma = line.find(',');
        if (comma == std::string::npos)
            throw DataError("malformed index line: " + line);
        std::string path = line.substr(0, comma);
        std::string label = line.substr(comma + 1);
        if (!label.empty() && label.back() == '\r') label.pop_back();
        if (path == "path" && label == "label") continue;  // header
        entries.emplace_back(path, label);
    }
    if (entries.empty()) throw DataError("empty index: " + csv_path);

    std::vector<std::string> names;
    for (auto& [p, l] : entries) names.push_back(l);
    std::sort(names.begin(), names.end());
    names.erase(std::unique(names.begin(), names.end()), names.end());
    std::map<std::string, int> name_to_idx;
    for (size_t i = 0; i < names.size(); ++i) name_to_idx[names[i]] = static_cast<int>(i);

    Dataset ds;
    ds.K = static_cast<int>(names.size());
    ds.c = channels;
    ds.h = ds.w = target_size;
    ds.class_names = names;
    ds.images.resize(entries.size(), static_cast<Eigen::Index>(channels) * target_size * target_size);
    ds.labels.resize(entries.size());
    for (size_t i = 0; i < entries.size(); ++i) {
        fs::path p = entries[i].first;
        if (p.is_relative()) p = base / p;
        cv::Mat img = cv::imread(p.string(), cv::IMREAD_UNCHANGED);
        if (img.empty()) throw DataError("unreadable image: " + p.string());
        ds.images.row(i) =
            mat_to_row(center_crop_resize(img, target_size), channels);
        ds.labels[i] = name_to_idx[entries[i].second];
    }
    return ds;
}

// Horizontal/vertical flip (p = 0.5 each) and a rotation from
// {0, 90, 180, 270} degrees; square single-channel images.
inline Eigen::RowVectorXf augment_image(const Eigen::RowVectorXf& img, int c,
                                        int h, int w, Rng& rng) {
    bool hflip = uniform01(rng) < 0.5f;
    bool vflip = uniform01(rng) < 0.5f;
    int rot = static_cast<int>(uniform01(rng) * 4) % 4;
    Eigen::RowVectorXf out(img.size());
    for (int ch = 0; ch < c; ++ch)
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) {
                int sy = y, sx = x;
                for (int r = 0; r < rot; ++r) {  // rotate 90 cw per turn
                    int ny = sx, nx = h - 1 - sy;
                    sy = ny;
                    sx = nx;
                }
                if (hflip) sx = w - 1 - sx;
                if (vflip) sy = h - 1 - sy;
                out[(static_cast<Eigen::Index>(ch) * h + y) * w + x] =
                    img[(static_cast<Eigen::Index>(ch) * h + sy) * w + sx];
            }
    return out;
}

inline void write_png(const std::string& path, const Eigen::RowVectorXf& img,
                      int h, int w) {
    cv::Mat m(h, w, CV_8UC1);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            m.at<uchar>(y, x) = static_cast<uchar>(
                std::clamp(img[y * w + x] * 255.f + 0.5f, 0.f, 255.f));
    if (!cv::imwrite(path, m)) throw DataError("cannot write " + path);
}

}  // namespace dmic
