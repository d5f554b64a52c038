#pragma once

#include <algorithm>
#include <cstdint>
#include <random>
#include <vector>

#include "attrsim/tensor.hpp"

namespace attrsim {

// Seeded RNG wrapper; every stochastic component takes one of these so runs
// are reproducible from a single integer.
class Rng {
public:
    explicit Rng(uint64_t seed) : gen_(seed) {}

    double normal(double mean = 0.0, double sd = 1.0) {
        std::normal_distribution<double> d(mean, sd);
        return d(gen_);
    }

    double uniform() {
        std::uniform_real_distribution<double> d(0.0, 1.0);
        return d(gen_);
    }

    // inclusive bounds
    int uniform_int(int lo, int hi) {
        std::uniform_int_distribution<int> d(lo, hi);
        return d(gen_);
    }

    bool coin(double p = 0.5) { return uniform() < p; }

    template <class T>
    const T& pick(const std::vector<T>& v) {
        return v[static_cast<size_t>(uniform_int(0, static_cast<int>(v.size()) - 1))];
    }

    template <class T>
    void shuffle(std::vector<T>& v) {
        std::shuffle(v.begin(), v.end(), gen_);
    }

    Tensor normal_tensor(std::vector<int> shape, double sd) {
        Tensor t(std::move(shape));
        for (int64_t i = 0; i < t.size(); ++i) t[i] = normal(0.0, sd);
        return t;
    }

    std::mt19937_64& raw() { return gen_; }

private:
    std::mt19937_64 gen_;
};

}  // namespace attrsim
