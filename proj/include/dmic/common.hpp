#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>

namespace dmic {

using Eigen::MatrixXf;
using Eigen::VectorXf;
using Eigen::VectorXd;

// Exit-code mapping: config 2, data 3, runtime 4.
struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct DataError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct ShapeError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct RuntimeError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// All randomness flows through explicitly seeded generators.
using Rng = std::mt19937_64;

inline float randn(Rng& rng) {
    std::normal_distribution<float> d(0.f, 1.f);
    return d(rng);
}

inline VectorXf randn_vec(Rng& rng, int n) {
    VectorXf v(n);
    for (int i = 0; i < n; ++i) v[i] = randn(rng);
    return v;
}

inline MatrixXf randn_mat(Rng& rng, int r, int c) {
    MatrixXf m(r, c);
    for (int i = 0; i < r; ++i)
        for (int j = 0; j < c; ++j) m(i, j) = randn(rng);
    return m;
}

inline float uniform01(Rng& rng) {
    std::uniform_real_distribution<float> d(0.f, 1.f);
    return d(rng);
}

}  // namespace dmic
