// Deterministic per-trajectory random streams.
//
// Every trajectory draws from its own engine derived from (global seed,
// trajectory index) by a SplitMix64 mix, so results do not depend on how
// trajectories are distributed over workers.
#pragma once

#include <cstdint>
#include <random>

#include "qfilter/common.hpp"

namespace qfilter {

inline std::uint64_t splitmix64(std::uint64_t& state) {
    std::uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

class TrajectoryStream {
  public:
    TrajectoryStream(std::uint64_t seed, std::uint64_t trajectory) {
        // Counter-based derivation: mix the pair down to one engine seed.
        std::uint64_t s = seed;
        std::uint64_t a = splitmix64(s);
        s ^= trajectory * 0xda942042e4dd58b5ULL;
        std::uint64_t b = splitmix64(s);
        engine_.seed(a ^ (b + 0x9e3779b97f4a7c15ULL + (a << 6) + (a >> 2)));
    }

    double gaussian() { return normal_(engine_); }
    double uniform() { return uniform_(engine_); }

    // Independent N(0, dt) increments.
    RealVector gaussian_vector(int n, double scale = 1.0) {
        RealVector v(n);
        for (int i = 0; i < n; ++i) v[i] = scale * gaussian();
        return v;
    }

    std::mt19937_64& engine() { return engine_; }

  private:
    std::mt19937_64 engine_;
    std::normal_distribution<double> normal_{0.0, 1.0};
    std::uniform_real_distribution<double> uniform_{0.0, 1.0};
};

} // namespace qfilter
