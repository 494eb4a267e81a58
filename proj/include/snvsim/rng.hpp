// rng.hpp - counter-based random number generation
//
// Philox4x32-10 keyed by (seed, repetition, stream).  Being counter-based,
// every repetition owns an independent stream addressed by its index, so an
// ensemble can be partitioned across threads in any way and still produce
// bit-identical results.
#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <random>

namespace snvsim {

namespace detail {

inline void philox_mulhilo(uint32_t a, uint32_t b, uint32_t& hi, uint32_t& lo) {
    uint64_t p = static_cast<uint64_t>(a) * b;
    hi = static_cast<uint32_t>(p >> 32);
    lo = static_cast<uint32_t>(p);
}

inline void philox_round(std::array<uint32_t, 4>& ctr, const std::array<uint32_t, 2>& key) {
    uint32_t hi0, lo0, hi1, lo1;
    philox_mulhilo(0xD2511F53u, ctr[0], hi0, lo0);
    philox_mulhilo(0xCD9E8D57u, ctr[2], hi1, lo1);
    ctr = {hi1 ^ ctr[1] ^ key[0], lo1, hi0 ^ ctr[3] ^ key[1], lo0};
}

}  // namespace detail

// One 4-word block of Philox4x32 with 10 rounds.
inline std::array<uint32_t, 4> philox4x32_10(std::array<uint32_t, 4> ctr,
                                             std::array<uint32_t, 2> key) {
    detail::philox_round(ctr, key);
    for (int r = 1; r < 10; ++r) {
        key[0] += 0x9E3779B9u;  // golden ratio
        key[1] += 0xBB67AE85u;  // sqrt(3)-1
        detail::philox_round(ctr, key);
    }
    return ctr;
}

// UniformRandomBitGenerator over one (seed, repetition, stream) tuple.
// Counter layout: words 0..1 hold the running 64-bit block index, word 2 the
// repetition, word 3 the stream id.  The key carries the user seed.
class CounterRng {
  public:
    using result_type = uint32_t;

    CounterRng(uint64_t seed, uint64_t rep_index, uint32_t stream_id = 0)
        : key_{static_cast<uint32_t>(seed), static_cast<uint32_t>(seed >> 32)},
          rep_(static_cast<uint32_t>(rep_index)),
          stream_(stream_id) {}

    static constexpr result_type min() { return 0; }
    static constexpr result_type max() { return std::numeric_limits<uint32_t>::max(); }

    result_type operator()() {
        if (idx_ == 4) {
            out_ = philox4x32_10({static_cast<uint32_t>(block_),
                                  static_cast<uint32_t>(block_ >> 32), rep_, stream_},
                                 key_);
            ++block_;
            idx_ = 0;
        }
        return out_[idx_++];
    }

    uint64_t next_u64() {
        uint64_t lo = (*this)();
        uint64_t hi = (*this)();
        return (hi << 32) | lo;
    }

  private:
    std::array<uint32_t, 2> key_;
    uint32_t rep_;
    uint32_t stream_;
    uint64_t block_ = 0;
    std::array<uint32_t, 4> out_{};
    int idx_ = 4;
};

// Uniform on the open interval (0,1); 53-bit resolution, never exactly 0 or 1.
inline double uniform01(CounterRng& rng) {
    return (static_cast<double>(rng.next_u64() >> 11) + 0.5) * 0x1p-53;
}

inline double exponential(CounterRng& rng, double rate) {
    return -std::log(uniform01(rng)) / rate;
}

inline double normal(CounterRng& rng, double mean, double sigma) {
    std::normal_distribution<double> d(mean, sigma);
    return d(rng);
}

inline uint64_t poisson(CounterRng& rng, double mean) {
    if (mean <= 0.0) return 0;
    std::poisson_distribution<long long> d(mean);
    return static_cast<uint64_t>(d(rng));
}

}  // namespace snvsim
