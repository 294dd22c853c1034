#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <thread>
#include <vector>

#include "gfflab/common.hpp"

namespace gfflab {

// ---------------------------------------------------------------------------
// Philox4x64-10 counter-based generator (Salmon et al., SC'11), the same
// variant NumPy ships.  A block is a pure function of (counter, key), which
// is what makes every Monte Carlo draw in this library replayable: draw
// values depend only on (master seed, stream id, draw index, element), never
// on execution order or worker count.
// ---------------------------------------------------------------------------

namespace philox {

inline constexpr std::uint64_t M0 = 0xD2E7470EE14C6C93ull;
inline constexpr std::uint64_t M1 = 0xCA5A826395121157ull;
inline constexpr std::uint64_t W0 = 0x9E3779B97F4A7C15ull;
inline constexpr std::uint64_t W1 = 0xBB67AE8584CAA73Bull;

inline void mulhilo(std::uint64_t a, std::uint64_t b, std::uint64_t& hi, std::uint64_t& lo) {
    const unsigned __int128 prod = static_cast<unsigned __int128>(a) * b;
    hi = static_cast<std::uint64_t>(prod >> 64);
    lo = static_cast<std::uint64_t>(prod);
}

inline void round_once(std::array<std::uint64_t, 4>& ctr, const std::array<std::uint64_t, 2>& key) {
    std::uint64_t hi0, lo0, hi1, lo1;
    mulhilo(M0, ctr[0], hi0, lo0);
    mulhilo(M1, ctr[2], hi1, lo1);
    ctr[0] = hi1 ^ ctr[1] ^ key[0];
    ctr[1] = lo1;
    ctr[2] = hi0 ^ ctr[3] ^ key[1];
    ctr[3] = lo0;
}

inline std::array<std::uint64_t, 4> block(std::array<std::uint64_t, 4> ctr,
                                          std::array<std::uint64_t, 2> key) {
    round_once(ctr, key);
    for (int i = 1; i < 10; ++i) {
        key[0] += W0;
        key[1] += W1;
        round_once(ctr, key);
    }
    return ctr;
}

} // namespace philox

/// Maps 64 random bits to a double in the open interval (0,1).
inline double u64_to_open01(std::uint64_t w) {
    return (static_cast<double>(w >> 11) + 0.5) * 0x1.0p-53;
}

// ---------------------------------------------------------------------------
// AS 241 PPND16 (Wichura 1988): rational approximation of the standard
// normal quantile function, accurate to ~1e-16 relative.  Chosen over
// rejection samplers so that normal draws are a fixed deterministic
// function of the uniform bits on every platform.
// ---------------------------------------------------------------------------

inline double normal_quantile(double p) {
    const double q = p - 0.5;
    if (std::abs(q) <= 0.425) {
        const double r = 0.180625 - q * q;
        return q *
               (((((((2.5090809287301226727e+3 * r + 3.3430575583588128105e+4) * r +
                     6.7265770927008700853e+4) * r + 4.5921953931549871457e+4) * r +
                   1.3731693765509461125e+4) * r + 1.9715909503065514427e+3) * r +
                 1.3314166789178437745e+2) * r + 3.3871328727963666080e+0) /
               (((((((5.2264952788528545610e+3 * r + 2.8729085735721942674e+4) * r +
                     3.9307895800092710610e+4) * r + 2.1213794301586595867e+4) * r +
                   5.3941960214247511077e+3) * r + 6.8718700749205790830e+2) * r +
                 4.2313330701600911252e+1) * r + 1.0);
    }
    double r = (q < 0.0) ? p : 1.0 - p;
    if (!(r > 0.0)) throw numeric_error("normal_quantile: p out of (0,1)");
    r = std::sqrt(-std::log(r));
    double x;
    if (r <= 5.0) {
        r -= 1.6;
        x = (((((((7.74545014278341407640e-4 * r + 2.27238449892691845833e-2) * r +
                  2.41780725177450611770e-1) * r + 1.27045825245236838258e+0) * r +
                3.64784832476320460504e+0) * r + 5.76949722146069140550e+0) * r +
              4.63033784615654529590e+0) * r + 1.42343711074968357734e+0) /
            (((((((1.05075007164441684324e-9 * r + 5.47593808499534494600e-4) * r +
                  1.51986665636164571966e-2) * r + 1.48103976427480074590e-1) * r +
                6.89767334985100004550e-1) * r + 1.67638483018380384940e+0) * r +
              2.05319162663775882187e+0) * r + 1.0);
    } else {
        r -= 5.0;
        x = (((((((2.01033439929228813265e-7 * r + 2.71155556874348757815e-5) * r +
                  1.24266094738807843860e-3) * r + 2.65321895265761230930e-2) * r +
                2.96560571828504891230e-1) * r + 1.78482653991729133580e+0) * r +
              5.46378491116411436990e+0) * r + 6.65790464350110377720e+0) /
            (((((((2.04426310338993978564e-15 * r + 1.42151175831644588870e-7) * r +
                  1.84631831751005468180e-5) * r + 7.86869131145613259100e-4) * r +
                1.48753612908506148525e-2) * r + 1.36929880922735805310e-1) * r +
              5.99832206555887937690e-1) * r + 1.0);
    }
    return (q < 0.0) ? -x : x;
}

/// Upper tail of the standard normal, Phi-bar(x) = P[N(0,1) >= x].
inline double normal_upper_tail(double x) { return 0.5 * std::erfc(x / std::sqrt(2.0)); }

// ---------------------------------------------------------------------------
// Seeded stream: (master seed, stream id) select a keyed Philox instance;
// (draw, element) address individual variates within the stream.
// ---------------------------------------------------------------------------

struct SeedProvenance {
    std::uint64_t master_seed = 0;
    std::uint64_t stream_id = 0;
    std::uint64_t draw_index = 0;
};

class GaussianStream {
public:
    GaussianStream(std::uint64_t master_seed, std::uint64_t stream_id)
        : key_{master_seed, stream_id} {}

    std::uint64_t master_seed() const { return key_[0]; }
    std::uint64_t stream_id() const { return key_[1]; }

    /// 64 uniform bits for (draw, element).  Four elements share one Philox
    /// block; the block index and lane are derived from the element index.
    std::uint64_t bits(std::uint64_t draw, std::uint64_t element) const {
        const std::array<std::uint64_t, 4> out = philox::block({draw, element >> 2, 0, 0}, key_);
        return out[element & 3];
    }

    double uniform(std::uint64_t draw, std::uint64_t element) const {
        return u64_to_open01(bits(draw, element));
    }

    double normal(std::uint64_t draw, std::uint64_t element) const {
        return normal_quantile(uniform(draw, element));
    }

    /// Fills `n` consecutive normals for one draw, starting at element 0.
    void fill_normals(std::uint64_t draw, double* dst, std::size_t n) const {
        std::size_t i = 0;
        while (i < n) {
            const std::array<std::uint64_t, 4> out =
                philox::block({draw, static_cast<std::uint64_t>(i >> 2), 0, 0}, key_);
            for (int lane = 0; lane < 4 && i < n; ++lane, ++i)
                dst[i] = normal_quantile(u64_to_open01(out[static_cast<std::size_t>(lane)]));
        }
    }

private:
    std::array<std::uint64_t, 2> key_;
};

// ---------------------------------------------------------------------------
// Deterministic parallel accumulation.  Work is cut into fixed-size blocks
// of draw indices; each block's partial sums are computed by whichever
// worker picks it up and the partials are combined in block order, so the
// result is bit-identical for any worker count.
// ---------------------------------------------------------------------------

struct MomentAccumulator {
    double sum = 0.0;
    double sum_sq = 0.0;
    std::uint64_t n = 0;

    void add(double v) {
        sum += v;
        sum_sq += v * v;
        ++n;
    }
    double mean() const { return n ? sum / static_cast<double>(n) : 0.0; }
    double variance() const {
        if (n < 2) return 0.0;
        const double m = mean();
        return std::max(0.0, (sum_sq - static_cast<double>(n) * m * m) / static_cast<double>(n - 1));
    }
    double std_error() const { return n ? std::sqrt(variance() / static_cast<double>(n)) : 0.0; }
};

/// fn(draw_index) -> double, evaluated for draw_index in [0, n).
template <typename Fn>
MomentAccumulator parallel_moments(std::uint64_t n, int workers, Fn&& fn,
                                   std::uint64_t block_size = 8192) {
    const std::uint64_t n_blocks = (n + block_size - 1) / block_size;
    std::vector<MomentAccumulator> partial(static_cast<std::size_t>(n_blocks));
    if (workers <= 1 || n_blocks <= 1) {
        for (std::uint64_t b = 0; b < n_blocks; ++b) {
            auto& acc = partial[static_cast<std::size_t>(b)];
            const std::uint64_t end = std::min(n, (b + 1) * block_size);
            for (std::uint64_t i = b * block_size; i < end; ++i) acc.add(fn(i));
        }
    } else {
        std::atomic<std::uint64_t> next{0};
        auto work = [&]() {
            for (;;) {
                const std::uint64_t b = next.fetch_add(1);
                if (b >= n_blocks) return;
                auto& acc = partial[static_cast<std::size_t>(b)];
                const std::uint64_t end = std::min(n, (b + 1) * block_size);
                for (std::uint64_t i = b * block_size; i < end; ++i) acc.add(fn(i));
            }
        };
        std::vector<std::thread> pool;
        pool.reserve(static_cast<std::size_t>(workers));
        for (int w = 0; w < workers; ++w) pool.emplace_back(work);
        for (auto& t : pool) t.join();
    }
    MomentAccumulator total;
    for (const auto& acc : partial) {  // fixed combination order
        total.sum += acc.sum;
        total.sum_sq += acc.sum_sq;
        total.n += acc.n;
    }
    return total;
}

} // namespace gfflab
