#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <set>

#include "dmic/data.hpp"

using namespace dmic;

namespace {

struct TmpDir {
    fs::path p;
    TmpDir(const std::string& name) : p(fs::temp_directory_path() / name) {
        fs::remove_all(p);
        fs::create_directories(p);
    }
    ~TmpDir() { fs::remove_all(p); }
};

}  // namespace

TEST_CASE("synthetic corpus is deterministic in the seed") {
    auto a = synth_generate(3, 30, 0.05, 0.8, {1, 1, 1}, 42);
    auto b = synth_generate(3, 30, 0.05, 0.8, {1, 1, 1}, 42);
    CHECK(a.labels == b.labels);
    CHECK((a.images - b.images).cwiseAbs().maxCoeff() == doctest::Approx(0));
    auto c = synth_generate(3, 30, 0.05, 0.8, {1, 1, 1}, 43);
    CHECK((a.images - c.images).cwiseAbs().maxCoeff() > 1e-3f);
    CHECK(a.images.minCoeff() >= 0.f);
    CHECK(a.images.maxCoeff() <= 1.f);
    CHECK(a.K == 3);
    CHECK(a.images.cols() == 64 * 64);
}

TEST_CASE("clean synthetic classes are separable by nearest neighbor") {
    auto ds = synth_generate(4, 160, 0.0, 0.0, {1, 1, 1, 1}, 7);
    // leave-one-out 3-NN on raw pixels
    int hits = 0;
    for (int i = 0; i < ds.size(); ++i) {
        std::vector<std::pair<float, int>> d;
        for (int j = 0; j < ds.size(); ++j) {
            if (j == i) continue;
            d.emplace_back((ds.images.row(i) - ds.images.row(j)).squaredNorm(),
                           ds.labels[j]);
        }
        std::partial_sort(d.begin(), d.begin() + 3, d.end());
        std::vector<int> votes(4, 0);
        for (int k = 0; k < 3; ++k) votes[d[k].second]++;
        int cls = static_cast<int>(
            std::max_element(votes.begin(), votes.end()) - votes.begin());
        hits += cls == ds.labels[i];
    }
    CHECK(static_cast<double>(hits) / ds.size() >= 0.95);
}

TEST_CASE("imbalance weights shape the label distribution") {
    const int n = 3000;
    auto ds = synth_generate(3, n, 0.0, 0.0, {6, 3, 1}, 11);
    auto cnt = ds.class_counts();
    // 3-sigma binomial bands around the expected proportions
    for (int k = 0; k < 3; ++k) {
        double p = (k == 0 ? 6 : k == 1 ? 3 : 1) / 10.0;
        double sd = std::sqrt(n * p * (1 - p));
        CHECK(std::abs(cnt[k] - n * p) < 3 * sd);
    }
    CHECK_THROWS_AS(synth_generate(1, 10, 0, 0, {1.0}, 0), ConfigError);
    CHECK_THROWS_AS(synth_generate(3, 2, 0, 0, {1, 1, 1}, 0), ConfigError);
    CHECK_THROWS_AS(synth_generate(2, 10, 0, 0, {1.0}, 0), ConfigError);
    CHECK_THROWS_AS(synth_generate(2, 10, 0, 0, {0.0, 0.0}, 0), DataError);
}

TEST_CASE("stratified split preserves classes and partitions the data") {
    auto ds = synth_generate(4, 200, 0.05, 0.0, {4, 3, 2, 1}, 5);
    auto [tr, te] = stratified_split(ds, 0.8, 9);
    CHECK(tr.size() + te.size() == ds.size());
    auto ctr = tr.class_counts(), cte = te.class_counts(), call = ds.class_counts();
    for (int k = 0; k < 4; ++k) {
        CHECK(ctr[k] + cte[k] == call[k]);
        CHECK(ctr[k] >= 1);
        CHECK(cte[k] >= 1);
        // split ratio respected within rounding
        CHECK(std::abs(ctr[k] - 0.8 * call[k]) <= 1.0);
    }
    // no image appears on both sides
    std::set<std::vector<float>> seen;
    for (int i = 0; i < tr.size(); ++i)
        seen.insert(std::vector<float>(tr.images.row(i).begin(),
                                       tr.images.row(i).end()));
    for (int i = 0; i < te.size(); ++i)
        CHECK(seen.count(std::vector<float>(te.images.row(i).begin(),
                                            te.images.row(i).end())) == 0);
    // deterministic in the seed
    auto [tr2, te2] = stratified_split(ds, 0.8, 9);
    CHECK(tr2.labels == tr.labels);
    CHECK_THROWS_AS(stratified_split(ds, 1.5, 0), ConfigError);
    Dataset tiny = synth_generate(2, 4, 0, 0, {1, 1}, 3);
    tiny.labels = {0, 0, 0, 1};  // class 1 has a single sample
    CHECK_THROWS_AS(stratified_split(tiny, 0.5, 0), DataError);
}

TEST_CASE("center crop box and resize") {
    // 100x80 (w x h): square side 80, crop box x in [10, 90), y in [0, 80)
    cv::Mat img(80, 100, CV_8UC1, cv::Scalar(0));
    img.at<uchar>(40, 10) = 200;  // left edge of the box survives
    img.at<uchar>(40, 9) = 250;   // one pixel outside is discarded
    cv::Mat out = center_crop_resize(img, 80);
    REQUIRE(out.rows == 80);
    REQUIRE(out.cols == 80);
    CHECK(out.at<uchar>(40, 0) > 100);
    double mx;
    cv::minMaxLoc(out, nullptr, &mx);
    CHECK(mx < 250);  // the discarded pixel's value never appears

    // upscale path keeps the value range
    cv::Mat small(10, 10, CV_8UC1, cv::Scalar(128));
    cv::Mat up = center_crop_resize(small, 32);
    CHECK(up.rows == 32);
    CHECK(up.at<uchar>(16, 16) == 128);
}

TEST_CASE("png round trip is pinned to 8-bit quantization") {
    TmpDir tmp("dmic_png_test");
    Rng rng(21);
    Eigen::RowVectorXf img(16 * 16);
    for (int i = 0; i < 256; ++i) img[i] = static_cast<float>(uniform01(rng));
    std::string path = (tmp.p / "t.png").string();
    write_png(path, img, 16, 16);
    cv::Mat back = cv::imread(path, cv::IMREAD_GRAYSCALE);
    REQUIRE(!back.empty());
    Eigen::RowVectorXf row = mat_to_row(back, 1);
    // lossless up to the 1/255 quantization step
    CHECK((row - img).cwiseAbs().maxCoeff() < 0.5f / 255.f + 1e-6f);
}

TEST_CASE("image folder loader") {
    TmpDir tmp("dmic_folder_test");
    Rng rng(31);
    for (std::string cls : {"aa", "bb"}) {
        fs::create_directories(tmp.p / cls);
        for (int i = 0; i < 3; ++i) {
            Eigen::RowVectorXf img(12 * 12);
            for (int p = 0; p < 144; ++p) img[p] = static_cast<float>(uniform01(rng));
            write_png((tmp.p / cls / ("img" + std::to_string(i) + ".png")).string(),
                      img, 12, 12);
        }
    }
    Dataset ds = load_image_folder(tmp.p.string(), 16);
    CHECK(ds.K == 2);
    CHECK(ds.size() == 6);
    CHECK(ds.class_names == std::vector<std::string>{"aa", "bb"});
    CHECK(ds.labels == std::vector<int>{0, 0, 0, 1, 1, 1});
    CHECK(ds.images.cols() == 16 * 16);
    CHECK(ds.images.minCoeff() >= 0.f);
    CHECK(ds.images.maxCoeff() <= 1.f);

    CHECK_THROWS_AS(load_image_folder("/nonexistent/dir", 16), DataError);
    TmpDir empty("dmic_empty_test");
    CHECK_THROWS_AS(load_image_folder(empty.p.string(), 16), DataError);
}

TEST_CASE("csv index loader") {
    TmpDir tmp("dmic_csv_test");
    Rng rng(41);
    for (int i = 0; i < 4; ++i) {
        Eigen::RowVectorXf img(8 * 8);
        for (int p = 0; p < 64; ++p) img[p] = static_cast<float>(uniform01(rng));
        write_png((tmp.p / ("f" + std::to_string(i) + ".png")).string(), img, 8, 8);
    }
    std::ofstream csv(tmp.p / "index.csv");
    csv << "path,label\n";
    csv << "f0.png,zebra\n"
        << "f1.png,apple\n"
        << "f2.png,zebra\n"
        << "f3.png,apple\n";
    csv.close();
    Dataset ds = load_csv_index((tmp.p / "index.csv").string(), 8);
    CHECK(ds.K == 2);
    CHECK(ds.size() == 4);
    // class names are assigned by lexicographic order
    CHECK(ds.class_names == std::vector<std::string>{"apple", "zebra"});
    CHECK(ds.labels == std::vector<int>{1, 0, 1, 0});

    CHECK_THROWS_AS(load_csv_index((tmp.p / "nope.csv").string(), 8), DataError);
    std::ofstream bad(tmp.p / "bad.csv");
    bad << "no-comma-line\n";
    bad.close();
    CHECK_THROWS_AS(load_csv_index((tmp.p / "bad.csv").string(), 8), DataError);
    std::ofstream missing(tmp.p / "missing.csv");
    missing << "ghost.png,apple\n";
    missing.close();
    CHECK_THROWS_AS(load_csv_index((tmp.p / "missing.csv").string(), 8),
                    DataError);
}

TEST_CASE("augmentation permutes pixels without changing their values") {
    Rng rng(51);
    Eigen::RowVectorXf img(10 * 10);
    for (int i = 0; i < 100; ++i) img[i] = static_cast<float>(i);
    for (int trial = 0; trial < 20; ++trial) {
        Eigen::RowVectorXf out = augment_image(img, 1, 10, 10, rng);
        std::vector<float> a(img.begin(), img.end()), b(out.begin(), out.end());
        std::sort(a.begin(), a.end());
        std::sort(b.begin(), b.end());
        CHECK(a == b);
    }
}

TEST_CASE("gaussian blur preserves constants and total mass") {
    Eigen::RowVectorXf flat = Eigen::RowVectorXf::Constant(16 * 16, 0.3f);
    Eigen::RowVectorXf copy = flat;
    gaussian_blur_inplace(copy, 16, 16, 1.5);
    CHECK((copy - flat).cwiseAbs().maxCoeff() < 1e-5f);
    // a delta spreads out but keeps its sum (reflective edges far away)
    Eigen::RowVectorXf delta = Eigen::RowVectorXf::Zero(32 * 32);
    delta[16 * 32 + 16] = 1.f;
    float before = delta.sum();
    gaussian_blur_inplace(delta, 32, 32, 1.0);
    CHECK(delta.sum() == doctest::Approx(before).epsilon(1e-3));
    CHECK(delta[16 * 32 + 16] < 0.5f);
    // zero radius is a no-op
    Eigen::RowVectorXf same = Eigen::RowVectorXf::Random(8 * 8);
    Eigen::RowVectorXf ref = same;
    gaussian_blur_inplace(same, 8, 8, 0.0);
    CHECK((same - ref).cwiseAbs().maxCoeff() == doctest::Approx(0));
}
