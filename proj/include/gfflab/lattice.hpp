#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <optional>
#include <unordered_map>
#include <utility>
#include <vector>

#include "gfflab/common.hpp"

namespace gfflab {

/// A site of Z^d, d >= 3. Coordinates are exact integers; all distance
/// comparisons in this module are done on integer squared distances so
/// that half-open bands like [s, s+1) have no floating-point ties.
struct LatticePoint {
    std::vector<int> c;

    LatticePoint() = default;
    explicit LatticePoint(std::vector<int> coords) : c(std::move(coords)) {}
    LatticePoint(std::initializer_list<int> coords) : c(coords) {}

    int dim() const { return static_cast<int>(c.size()); }
    int operator[](int i) const { return c[static_cast<std::size_t>(i)]; }

    friend bool operator==(const LatticePoint& a, const LatticePoint& b) { return a.c == b.c; }
    friend bool operator<(const LatticePoint& a, const LatticePoint& b) { return a.c < b.c; }

    friend LatticePoint operator+(const LatticePoint& a, const LatticePoint& b) {
        LatticePoint r = a;
        for (std::size_t i = 0; i < r.c.size(); ++i) r.c[i] += b.c[i];
        return r;
    }
    friend LatticePoint operator-(const LatticePoint& a, const LatticePoint& b) {
        LatticePoint r = a;
        for (std::size_t i = 0; i < r.c.size(); ++i) r.c[i] -= b.c[i];
        return r;
    }
};

struct LatticePointHash {
    std::size_t operator()(const LatticePoint& p) const {
        std::uint64_t h = 1469598103934665603ull;
        for (int v : p.c) {
            h ^= static_cast<std::uint64_t>(static_cast<std::uint32_t>(v));
            h *= 1099511628211ull;
        }
        return static_cast<std::size_t>(h);
    }
};

inline std::int64_t sq_norm(const LatticePoint& p) {
    std::int64_t s = 0;
    for (int v : p.c) s += static_cast<std::int64_t>(v) * v;
    return s;
}

inline std::int64_t sq_dist(const LatticePoint& a, const LatticePoint& b) {
    std::int64_t s = 0;
    for (std::size_t i = 0; i < a.c.size(); ++i) {
        const std::int64_t d = static_cast<std::int64_t>(a.c[i]) - b.c[i];
        s += d * d;
    }
    return s;
}

/// Finite ordered set of distinct lattice sites. Ordering is the insertion
/// order and is preserved by serialization, so matrix row/column indices
/// are reproducible across runs.
class PointSet {
public:
    PointSet() = default;

    explicit PointSet(std::vector<LatticePoint> pts) : points_(std::move(pts)) {
        if (!points_.empty()) {
            const int d = points_.front().dim();
            if (d < 3) throw domain_error("PointSet: dimension must be >= 3");
            for (std::size_t i = 0; i < points_.size(); ++i) {
                if (points_[i].dim() != d)
                    throw domain_error("PointSet: inconsistent point dimensions");
                auto [it, inserted] = index_.emplace(points_[i], i);
                (void)it;
                if (!inserted) throw domain_error("PointSet: duplicate point");
            }
        }
    }

    static PointSet singleton(LatticePoint p) {
        return PointSet(std::vector<LatticePoint>{std::move(p)});
    }
    static PointSet origin(int d) { return singleton(LatticePoint(std::vector<int>(d, 0))); }

    const std::vector<LatticePoint>& points() const { return points_; }
    const LatticePoint& operator[](std::size_t i) const { return points_[i]; }
    std::size_t size() const { return points_.size(); }
    bool empty() const { return points_.empty(); }
    int dim() const { return points_.empty() ? 0 : points_.front().dim(); }

    std::optional<std::size_t> index_of(const LatticePoint& p) const {
        auto it = index_.find(p);
        if (it == index_.end()) return std::nullopt;
        return it->second;
    }
    bool contains(const LatticePoint& p) const { return index_.count(p) > 0; }

    bool disjoint_from(const PointSet& other) const {
        for (const auto& p : other.points())
            if (contains(p)) return false;
        return true;
    }

    PointSet translated(const LatticePoint& v) const {
        std::vector<LatticePoint> pts;
        pts.reserve(points_.size());
        for (const auto& p : points_) pts.push_back(p + v);
        return PointSet(std::move(pts));
    }

private:
    std::vector<LatticePoint> points_;
    std::unordered_map<LatticePoint, std::size_t, LatticePointHash> index_;
};

// ---------------------------------------------------------------------------
// Exact comparisons against band thresholds.  All lattice distances are
// sqrt(m) with m a nonnegative integer; the band [s, s+1) with s = sqrt(n)
// is decided purely in integer arithmetic:
//   sqrt(m) >= sqrt(n)   <=>  m >= n
//   sqrt(m) <  sqrt(n)+1 <=>  m - n - 1 < 2*sqrt(n)  <=>  (m <= n) or (m-n-1)^2 < 4n
// ---------------------------------------------------------------------------

inline bool sq_ge(std::int64_t m, std::int64_t n) { return m >= n; }

inline bool sq_lt_succ(std::int64_t m, std::int64_t n) {
    const std::int64_t t = m - n - 1;
    if (t < 0) return true;
    return t * t < 4 * n;
}

inline bool sq_in_band(std::int64_t m, std::int64_t n) { return sq_ge(m, n) && sq_lt_succ(m, n); }

inline std::int64_t sq_dist_to_set(const LatticePoint& q, const PointSet& K) {
    std::int64_t best = -1;
    for (const auto& p : K.points()) {
        const std::int64_t m = sq_dist(q, p);
        if (best < 0 || m < best) best = m;
    }
    return best;
}

// ---------------------------------------------------------------------------
// dist / diam
// ---------------------------------------------------------------------------

inline std::int64_t dist_sq(const PointSet& K1, const PointSet& K2) {
    if (K1.empty() || K2.empty()) throw domain_error("dist: empty point set");
    std::int64_t best = -1;
    for (const auto& a : K1.points())
        for (const auto& b : K2.points()) {
            const std::int64_t m = sq_dist(a, b);
            if (best < 0 || m < best) best = m;
        }
    return best;
}

inline double dist(const PointSet& K1, const PointSet& K2) {
    return std::sqrt(static_cast<double>(dist_sq(K1, K2)));
}

inline std::int64_t diam_sq(const PointSet& K) {
    if (K.empty()) throw domain_error("diam: empty point set");
    std::int64_t best = 0;
    for (std::size_t i = 0; i < K.size(); ++i)
        for (std::size_t j = i + 1; j < K.size(); ++j)
            best = std::max(best, sq_dist(K[i], K[j]));
    return best;
}

inline double diam(const PointSet& K) {
    return std::sqrt(static_cast<double>(diam_sq(K)));
}

// ---------------------------------------------------------------------------
// Box enumeration helper
// ---------------------------------------------------------------------------

/// Calls fn for every lattice point of the axis-aligned bounding box of K
/// inflated by `radius` in every direction.
template <typename Fn>
void for_each_in_inflated_box(const PointSet& K, int radius, Fn&& fn) {
    const int d = K.dim();
    std::vector<int> lo(static_cast<std::size_t>(d)), hi(static_cast<std::size_t>(d));
    for (int i = 0; i < d; ++i) {
        int mn = K[0][i], mx = K[0][i];
        for (const auto& p : K.points()) {
            mn = std::min(mn, p[i]);
            mx = std::max(mx, p[i]);
        }
        lo[static_cast<std::size_t>(i)] = mn - radius;
        hi[static_cast<std::size_t>(i)] = mx + radius;
    }
    LatticePoint q(lo);
    while (true) {
        fn(q);
        int axis = d - 1;
        while (axis >= 0) {
            if (++q.c[static_cast<std::size_t>(axis)] <= hi[static_cast<std::size_t>(axis)]) break;
            q.c[static_cast<std::size_t>(axis)] = lo[static_cast<std::size_t>(axis)];
            --axis;
        }
        if (axis < 0) break;
    }
}

// ---------------------------------------------------------------------------
// shell: K^{(=s)} = { y : s <= dist(y,K) < s+1 }
// ---------------------------------------------------------------------------

/// Enumerates the unit-width shell at distance s from K.  `search_radius`
/// must cover the shell (>= s + 1 + diam(K) per the calling convention);
/// the enumeration itself only needs the bounding box inflated by s+1, so
/// completeness is guaranteed whenever the precondition holds.
///
/// When s*s is (within 1e-9) an integer, band membership is decided in
/// exact integer arithmetic; otherwise in long-double arithmetic.  s is
/// allowed to be any positive real, read literally.
inline PointSet shell(const PointSet& K, double s, double search_radius) {
    if (K.empty()) throw domain_error("shell: empty point set");
    if (!(s > 0)) throw domain_error("shell: s must be > 0");
    if (search_radius < s + 1 + diam(K))
        throw config_error("shell: search_radius must be >= s + 1 + diam(K)");

    const double n_real = s * s;
    const std::int64_t n_int = static_cast<std::int64_t>(std::llround(n_real));
    const bool exact = std::abs(n_real - static_cast<double>(n_int)) < 1e-9;

    const int infl = static_cast<int>(std::ceil(s)) + 1;
    std::vector<LatticePoint> out;
    for_each_in_inflated_box(K, infl, [&](const LatticePoint& q) {
        const std::int64_t m = sq_dist_to_set(q, K);
        bool in_band;
        if (exact) {
            in_band = sq_in_band(m, n_int);
        } else {
            const long double md = static_cast<long double>(m);
            in_band = md >= static_cast<long double>(s) * s &&
                      md < (static_cast<long double>(s) + 1) * (static_cast<long double>(s) + 1);
        }
        if (in_band) out.push_back(q);
    });
    return PointSet(std::move(out));
}

// ---------------------------------------------------------------------------
// Auxiliary sets H_1, H_2 at separation s = dist(K_1, K_2)
// ---------------------------------------------------------------------------

/// The two auxiliary sets are built from the set of smaller diameter
/// ("small" below; ties go to K_1):
///     outer = small^{(>= s)}          (infinite; membership by distance),
///     blob  = outer^{(>= s)}          (finite neighborhood of small).
/// When diam(K1) <= diam(K2): (H1, H2) = (blob, outer), otherwise
/// (H1, H2) = (outer, blob).  Membership tests are bounded enumerations:
/// q is in outer^{(>= s)} iff no witness z with dist(z, small) >= s lies
/// within ||q - z|| < s, and any such witness lies in the l-inf box of
/// radius ceil(s) around q.
struct AuxiliaryGeometry {
    double s = 0;
    std::int64_t s_sq = 0;
    int case_tag = 1;      // 1: diam(K1) <= diam(K2), 2: diam(K1) > diam(K2)
    PointSet h1_shell;     // H_1^{(=s)}
    std::size_t h1_shell_size = 0;
    std::function<bool(const LatticePoint&)> in_h1;
    std::function<bool(const LatticePoint&)> in_h2;
};

namespace detail {

/// q in (small^{(>=s)})^{(>=s)}: no z with ||q-z|| < s and dist(z,small) >= s.
inline bool in_blob(const LatticePoint& q, const PointSet& small, std::int64_t s_sq) {
    const int d = q.dim();
    const int r = static_cast<int>(std::ceil(std::sqrt(static_cast<double>(s_sq)))) ;
    std::vector<int> lo(static_cast<std::size_t>(d)), cur(static_cast<std::size_t>(d));
    for (int i = 0; i < d; ++i) lo[static_cast<std::size_t>(i)] = q[i] - r;
    cur = lo;
    LatticePoint z(cur);
    while (true) {
        if (sq_dist(q, z) < s_sq && sq_dist_to_set(z, small) >= s_sq) return false;
        int axis = d - 1;
        while (axis >= 0) {
            if (++z.c[static_cast<std::size_t>(axis)] <= q[axis] + r) break;
            z.c[static_cast<std::size_t>(axis)] = lo[static_cast<std::size_t>(axis)];
            --axis;
        }
        if (axis < 0) break;
    }
    return true;
}

} // namespace detail

inline AuxiliaryGeometry auxiliary_sets(const PointSet& K1, const PointSet& K2) {
    if (K1.empty() || K2.empty()) throw domain_error("auxiliary_sets: empty point set");
    if (K1.dim() != K2.dim()) throw domain_error("auxiliary_sets: dimension mismatch");
    if (!K1.disjoint_from(K2)) throw domain_error("auxiliary_sets: sets must be disjoint");

    AuxiliaryGeometry g;
    g.s_sq = dist_sq(K1, K2);
    g.s = std::sqrt(static_cast<double>(g.s_sq));
    g.case_tag = (diam_sq(K1) <= diam_sq(K2)) ? 1 : 2;

    // Copy the small set into the closures so the geometry owns its data.
    const PointSet small = (g.case_tag == 1) ? K1 : K2;
    const std::int64_t n = g.s_sq;

    auto in_outer = [small, n](const LatticePoint& q) { return sq_dist_to_set(q, small) >= n; };
    auto in_blob = [small, n](const LatticePoint& q) { return detail::in_blob(q, small, n); };
    if (g.case_tag == 1) {
        g.in_h1 = in_blob;
        g.in_h2 = in_outer;
    } else {
        g.in_h1 = in_outer;
        g.in_h2 = in_blob;
    }

    // Enumerate H_1^{(=s)}.  Candidates in both cases lie in the open ball
    // of radius s (blob points) or s+1 (shell around the blob) of `small`;
    // a distance grid over the inflated box makes the witness scans cheap.
    const int d = K1.dim();
    const int r = static_cast<int>(std::ceil(g.s));
    std::vector<int> glo(static_cast<std::size_t>(d)), ghi(static_cast<std::size_t>(d));
    for (int i = 0; i < d; ++i) {
        int mn = small[0][i], mx = small[0][i];
        for (const auto& p : small.points()) {
            mn = std::min(mn, p[i]);
            mx = std::max(mx, p[i]);
        }
        glo[static_cast<std::size_t>(i)] = mn - (2 * r + 3);
        ghi[static_cast<std::size_t>(i)] = mx + (2 * r + 3);
    }
    std::vector<std::int64_t> strides(static_cast<std::size_t>(d), 1);
    for (int i = d - 2; i >= 0; --i)
        strides[static_cast<std::size_t>(i)] =
            strides[static_cast<std::size_t>(i + 1)] *
            (ghi[static_cast<std::size_t>(i + 1)] - glo[static_cast<std::size_t>(i + 1)] + 1);
    std::int64_t total = strides[0] * (ghi[0] - glo[0] + 1);
    std::vector<std::int64_t> dist_grid(static_cast<std::size_t>(total));
    {
        LatticePoint z(glo);
        std::int64_t idx = 0;
        while (true) {
            dist_grid[static_cast<std::size_t>(idx)] = sq_dist_to_set(z, small);
            ++idx;
            int axis = d - 1;
            while (axis >= 0) {
                if (++z.c[static_cast<std::size_t>(axis)] <= ghi[static_cast<std::size_t>(axis)]) break;
                z.c[static_cast<std::size_t>(axis)] = glo[static_cast<std::size_t>(axis)];
                --axis;
            }
            if (axis < 0) break;
        }
    }
    auto grid_at = [&](const LatticePoint& z) -> std::int64_t {
        std::int64_t idx = 0;
        for (int i = 0; i < d; ++i) {
            const int v = z[i];
            if (v < glo[static_cast<std::size_t>(i)] || v > ghi[static_cast<std::size_t>(i)]) return -1;
            idx += strides[static_cast<std::size_t>(i)] * (v - glo[static_cast<std::size_t>(i)]);
        }
        return dist_grid[static_cast<std::size_t>(idx)];
    };
    // blob membership via the grid (all witnesses lie inside the grid box)
    auto blob_fast = [&](const LatticePoint& q) {
        bool ok = true;
        for_each_in_inflated_box(PointSet::singleton(q), r, [&](const LatticePoint& z) {
            if (!ok) return;
            if (sq_dist(q, z) < n) {
                const std::int64_t dz = grid_at(z);
                if (dz >= n || dz < 0) ok = false;
            }
        });
        return ok;
    };

    std::vector<LatticePoint> shell_pts;
    if (g.case_tag == 1) {
        // H_1 is the finite blob around small = K_1; list it, then its shell.
        std::vector<LatticePoint> blob_pts;
        for_each_in_inflated_box(small, r, [&](const LatticePoint& q) {
            if (grid_at(q) < n && blob_fast(q)) blob_pts.push_back(q);
        });
        PointSet blob(std::move(blob_pts));
        for_each_in_inflated_box(blob, r + 1, [&](const LatticePoint& y) {
            if (sq_in_band(sq_dist_to_set(y, blob), n)) shell_pts.push_back(y);
        });
    } else {
        // H_1 is the infinite outer set small^{(>=s)}; its shell hugs K_2.
        // Candidates y have dist(y, small) < s; the nearest outer witness of
        // such a y lies within the l-inf box of radius ceil(s)+1.
        for_each_in_inflated_box(small, r, [&](const LatticePoint& y) {
            if (grid_at(y) >= n) return;  // y itself in H_1, dist 0
            std::int64_t best = -1;
            for_each_in_inflated_box(PointSet::singleton(y), r + 2, [&](const LatticePoint& z) {
                const std::int64_t dz = grid_at(z);
                const bool outer = (dz < 0) || (dz >= n);
                if (!outer) return;
                const std::int64_t m = sq_dist(y, z);
                if (best < 0 || m < best) best = m;
            });
            if (best >= 0 && sq_in_band(best, n)) shell_pts.push_back(y);
        });
    }
    std::sort(shell_pts.begin(), shell_pts.end());
    g.h1_shell = PointSet(std::move(shell_pts));
    g.h1_shell_size = g.h1_shell.size();
    return g;
}

} // namespace gfflab
