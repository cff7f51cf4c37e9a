#pragma once
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>

namespace ri {

// Philox4x32-10 counter-based generator. A stream is fixed by (seed, task);
// the counter walks through the stream, so streams never overlap.
class Philox {
public:
    using result_type = std::uint64_t;

    Philox(std::uint64_t seed, std::uint64_t task) noexcept
        : key_{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32)},
          task_(task) {}

    static constexpr result_type min() { return 0; }
    static constexpr result_type max() { return std::numeric_limits<result_type>::max(); }

    result_type operator()() noexcept {
        if (pos_ == 2) refill();
        return buf_[pos_++];
    }

    // uniform on [0, 1)
    double uniform() noexcept { return static_cast<double>((*this)() >> 11) * 0x1.0p-53; }
    // uniform on (0, 1]
    double uniform_pos() noexcept { return 1.0 - uniform(); }
    double exponential(double rate) noexcept { return -std::log(uniform_pos()) / rate; }

    std::uint64_t below(std::uint64_t n) noexcept {
        // Lemire's multiply-shift with rejection
        unsigned __int128 m = static_cast<unsigned __int128>((*this)()) * n;
        auto lo = static_cast<std::uint64_t>(m);
        if (lo < n) {
            std::uint64_t t = (0 - n) % n;
            while (lo < t) {
                m = static_cast<unsigned __int128>((*this)()) * n;
                lo = static_cast<std::uint64_t>(m);
            }
        }
        return static_cast<std::uint64_t>(m >> 64);
    }

private:
    static void mulhilo(std::uint32_t a, std::uint32_t b, std::uint32_t& hi, std::uint32_t& lo) {
        std::uint64_t p = static_cast<std::uint64_t>(a) * b;
        hi = static_cast<std::uint32_t>(p >> 32);
        lo = static_cast<std::uint32_t>(p);
    }

    void refill() noexcept {
        std::array<std::uint32_t, 4> c{static_cast<std::uint32_t>(ctr_), static_cast<std::uint32_t>(ctr_ >> 32),
                                       static_cast<std::uint32_t>(task_), static_cast<std::uint32_t>(task_ >> 32)};
        std::array<std::uint32_t, 2> k = key_;
        for (int r = 0; r < 10; ++r) {
            std::uint32_t hi0, lo0, hi1, lo1;
            mulhilo(0xD2511F53u, c[0], hi0, lo0);
            mulhilo(0xCD9E8D57u, c[2], hi1, lo1);
            c = {hi1 ^ c[1] ^ k[0], lo1, hi0 ^ c[3] ^ k[1], lo0};
            k[0] += 0x9E3779B9u;
            k[1] += 0xBB67AE85u;
        }
        ++ctr_;
        buf_[0] = (static_cast<std::uint64_t>(c[0]) << 32) | c[1];
        buf_[1] = (static_cast<std::uint64_t>(c[2]) << 32) | c[3];
        pos_ = 0;
    }

    std::array<std::uint32_t, 2> key_;
    std::uint64_t task_;
    std::uint64_t ctr_ = 0;
    std::array<std::uint64_t, 2> buf_{};
    int pos_ = 2;
};

// derive a child task id from a parent task and a salt, for nested streams
inline std::uint64_t mix_task(std::uint64_t a, std::uint64_t b) noexcept {
    std::uint64_t z = a * 0x9E3779B97F4A7C15ull + b + 0x632BE59BD9B4E019ull;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
}

}  // namespace ri
