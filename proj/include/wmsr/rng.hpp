#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <sstream>
#include <string>

#include "wmsr/grid.hpp"

namespace wmsr {

// Deterministic RNG. mt19937_64 has a standard-mandated sequence, and the
// uniform/normal maps below are spelled out here instead of using
// std::*_distribution (whose output is implementation-defined).
class Rng {
public:
    explicit Rng(std::uint64_t seed) : eng_(seed) {}

    // Uniform in [0, 1) with 53 random bits.
    double uniform() {
        return double(eng_() >> 11) * 0x1.0p-53;
    }
    double uniform(double lo, double hi) {
        return lo + (hi - lo) * uniform();
    }

    // Box-Muller; the spare is cached, so results depend only on call order.
    double normal() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        double u1 = 0.0;
        do {
            u1 = uniform();
        } while (u1 <= 0.0);
        const double u2 = uniform();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double th = 2.0 * M_PI * u2;
        spare_ = r * std::sin(th);
        has_spare_ = true;
        return r * std::cos(th);
    }

    void fill_normal(Grid& g, double mean, double stddev) {
        for (double& x : g.v) x = mean + stddev * normal();
    }
    void fill_uniform(Grid& g, double lo, double hi) {
        for (double& x : g.v) x = uniform(lo, hi);
    }

    // Kaiming normal, fan-in mode. gain = sqrt(2) suits the SiLU/sigmoid
    // family used throughout the model.
    void kaiming_normal(Grid& g, int fan_in, double gain = std::sqrt(2.0)) {
        fill_normal(g, 0.0, gain / std::sqrt(double(fan_in)));
    }

    void xavier_uniform(Grid& g, int fan_in, int fan_out) {
        const double lim = std::sqrt(6.0 / double(fan_in + fan_out));
        fill_uniform(g, -lim, lim);
    }

    std::uint64_t next_u64() { return eng_(); }

    // Textual state, for checkpointing. mt19937_64's stream format is
    // standard-defined, so round trips are byte-stable.
    std::string serialize() const {
        std::ostringstream os;
        os << eng_ << " " << (has_spare_ ? 1 : 0) << " ";
        os.precision(17);
        os << spare_;
        return os.str();
    }
    void deserialize(const std::string& s) {
        std::istringstream is(s);
        int hs = 0;
        is >> eng_ >> hs >> spare_;
        has_spare_ = (hs != 0);
        require(!is.fail(), "Rng: malformed serialized state");
    }

private:
    std::mt19937_64 eng_;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

}  // namespace wmsr
