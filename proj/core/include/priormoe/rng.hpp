#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

namespace priormoe {

// xoshiro256++ with splitmix64 seeding. Hand-rolled so that streams are
// bitwise identical across compilers and the full state serializes into
// checkpoints as four u64 words (std:: distributions are implementation
// defined, which would break resume-exactly semantics).
class Rng {
public:
    explicit Rng(uint64_t seed = 0);

    uint64_t next_u64();
    // Uniform in [0,1) with 53 random bits.
    double uniform();
    double uniform(double lo, double hi);
    // Box-Muller, no cached spare so the state stays four words.
    double normal(double mean = 0.0, double stddev = 1.0);
    // Uniform integer in [0, n).
    int64_t uniform_int(int64_t n);

    std::array<uint64_t, 4> state() const { return s_; }
    void set_state(const std::array<uint64_t, 4>& s) { s_ = s; }

    // Stable per-name stream: parameter initialization is independent of
    // construction order and of which sibling modules exist (ablations).
    static Rng derive(uint64_t seed, const std::string& name);

private:
    std::array<uint64_t, 4> s_{};
};

uint64_t splitmix64(uint64_t& state);

}  // namespace priormoe
