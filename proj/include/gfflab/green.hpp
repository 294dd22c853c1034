#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <mutex>
#include <shared_mutex>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include <Eigen/Cholesky>
#include <Eigen/Dense>
#include <gsl/gsl_errno.h>
#include <gsl/gsl_sf_bessel.h>
#include <nlohmann/json.hpp>

#include "gfflab/common.hpp"
#include "gfflab/lattice.hpp"

namespace gfflab {

namespace detail {

struct GlNode {
    double x, w;
};

// 8- and 16-point Gauss-Legendre rules on [-1, 1].
inline constexpr GlNode gl8[8] = {
    {-0.9602898564975362, 0.10122853629037669}, {-0.7966664774136267, 0.22238103445337434},
    {-0.525532409916329, 0.31370664587788705},  {-0.18343464249564978, 0.36268378337836177},
    {0.18343464249564978, 0.36268378337836177}, {0.525532409916329, 0.31370664587788705},
    {0.7966664774136267, 0.22238103445337434},  {0.9602898564975362, 0.10122853629037669}};

inline constexpr GlNode gl16[16] = {
    {-0.9894009349916499, 0.027152459411754037}, {-0.9445750230732326, 0.062253523938647706},
    {-0.8656312023878318, 0.09515851168249259},  {-0.755404408355003, 0.12462897125553403},
    {-0.6178762444026438, 0.14959598881657676},  {-0.45801677765722737, 0.16915651939500262},
    {-0.2816035507792589, 0.1826034150449236},   {-0.09501250983763745, 0.18945061045506859},
    {0.09501250983763745, 0.18945061045506859},  {0.2816035507792589, 0.1826034150449236},
    {0.45801677765722737, 0.16915651939500262},  {0.6178762444026438, 0.14959598881657676},
    {0.755404408355003, 0.12462897125553403},    {0.8656312023878318, 0.09515851168249259},
    {0.9445750230732326, 0.062253523938647706},  {0.9894009349916499, 0.027152459411754037}};

inline void disable_gsl_aborts() {
    static bool done = [] {
        gsl_set_error_handler_off();
        return true;
    }();
    (void)done;
}

/// exp(-x) I_n(x).  GSL's In_scaled is machine-accurate for n <= 1 but
/// only good to ~1e-6 relative in an intermediate band (x ~ 1e5..1e7) for
/// n >= 2, which is far too coarse for the quadrature tolerance.  Above
/// x = max(1e4, 10 n^2) the classical large-argument expansion
///   I_n(x) e^{-x} ~ (2 pi x)^{-1/2} sum_k prod_{j<=k} (mu - (2j-1)^2) / (k! (8x)^k),
/// mu = 4 n^2, reaches ~1e-13 relative (validated against 30-digit
/// references), so it takes over there.
inline double in_scaled(int n, double x) {
    if (n >= 2 && x >= std::max(1e4, 10.0 * n * n)) {
        const double mu = 4.0 * static_cast<double>(n) * n;
        double term = 1.0, sum = 1.0;
        for (int k = 1; k <= 12; ++k) {
            const double f = mu - (2.0 * k - 1.0) * (2.0 * k - 1.0);
            term *= -f / (k * 8.0 * x);
            sum += term;
            if (std::abs(term) < 1e-18 * std::abs(sum)) break;
        }
        return sum / std::sqrt(2.0 * M_PI * x);
    }
    gsl_sf_result res;
    const int status = gsl_sf_bessel_In_scaled_e(n, x, &res);
    if (status == GSL_EUNDRFLW) return 0.0;
    if (status != GSL_SUCCESS)
        throw numeric_error("Bessel In_scaled failed, status " + std::to_string(status));
    return res.val;
}

struct VecIntHash {
    std::size_t operator()(const std::vector<int>& v) const {
        std::uint64_t h = 1469598103934665603ull;
        for (int x : v) {
            h ^= static_cast<std::uint64_t>(static_cast<std::uint32_t>(x));
            h *= 1099511628211ull;
        }
        return static_cast<std::size_t>(h);
    }
};

} // namespace detail

/// Evaluator for the Green function g(x, y) of simple random walk on Z^d,
/// d >= 3, via the continuous-time representation
///     g(0, x) = int_0^infty prod_j [ e^{-t/d} I_{x_j}(t/d) ] dt,
/// where I_n is the modified Bessel function of the first kind.  The
/// coordinate processes of the continuized walk are independent rate-1/d
/// walks, and unit-mean holding times make the time integral equal to the
/// discrete expected visit count.  The integrand is a product of scaled
/// Bessel factors (GSL's In_scaled), each bounded by
/// min(1, (1 + d/(4t)) * sqrt(d / (2 pi t))), which yields the analytic
/// tail bound used to terminate the quadrature.
///
/// Values are cached under the sorted absolute coordinate offsets, which
/// bakes in the permutation/sign symmetries of the walk.  The cache
/// supports concurrent readers with serialized inserts.
class GreenKernel {
public:
    explicit GreenKernel(int d, double tolerance = 1e-10, int workspace_radius = 128,
                         int dense_limit = 4096)
        : d_(d), tol_(tolerance), workspace_radius_(workspace_radius), dense_limit_(dense_limit) {
        if (d < 3) throw domain_error("GreenKernel: d must be >= 3 (transient walk)");
        if (!(tolerance > 0)) throw config_error("GreenKernel: tolerance must be positive");
        detail::disable_gsl_aborts();
    }

    int dim() const { return d_; }
    double tolerance() const { return tol_; }
    int workspace_radius() const { return workspace_radius_; }
    int dense_limit() const { return dense_limit_; }

    /// g(0, x)
    double at(const LatticePoint& x) const {
        if (x.dim() != d_) throw domain_error("GreenKernel::at: dimension mismatch");
        std::vector<int> key(x.c.size());
        for (std::size_t i = 0; i < x.c.size(); ++i) {
            key[i] = std::abs(x.c[i]);
            if (key[i] > 2 * workspace_radius_)
                throw config_error("GreenKernel: offset exceeds workspace radius");
        }
        std::sort(key.begin(), key.end());
        {
            std::shared_lock lock(mutex_);
            auto it = cache_.find(key);
            if (it != cache_.end()) return it->second;
        }
        const double v = evaluate(key);
        std::unique_lock lock(mutex_);
        auto [it, inserted] = cache_.emplace(std::move(key), v);
        (void)inserted;
        return it->second;
    }

    double at(const LatticePoint& x, const LatticePoint& y) const { return at(x - y); }

    double g_zero() const { return at(LatticePoint(std::vector<int>(static_cast<std::size_t>(d_), 0))); }

    /// Residual of the defining relation of g:
    ///   (1/2d) sum_{z ~ x} g(0,z) - g(0,x) + 1[x = 0],
    /// which vanishes identically for the true Green function.
    double harmonicity_residual(const LatticePoint& x) const {
        double acc = 0.0;
        for (int i = 0; i < d_; ++i) {
            for (int sgn : {-1, +1}) {
                LatticePoint z = x;
                z.c[static_cast<std::size_t>(i)] += sgn;
                acc += at(z);
            }
        }
        double res = acc / (2.0 * d_) - at(x);
        if (sq_norm(x) == 0) res += 1.0;
        return res;
    }

    /// Certified upper envelope constant: max of g(0,y) * ||y||^{d-2} over
    /// the shell 10 <= ||y|| <= 30, inflated by 1.25.  Used to bound g
    /// beyond enumerated regions; reported as an upper estimate only.
    double tail_envelope_constant() const {
        {
            std::shared_lock lock(mutex_);
            if (envelope_ > 0) return envelope_;
        }
        double best = 0.0;
        for_each_sorted_tuple(30, [&](const std::vector<int>& y, std::int64_t nsq) {
            if (nsq < 100 || nsq > 900) return;
            const double r = std::sqrt(static_cast<double>(nsq));
            best = std::max(best, at(LatticePoint(y)) * std::pow(r, d_ - 2));
        });
        std::unique_lock lock(mutex_);
        envelope_ = 1.25 * best;
        return envelope_;
    }

    /// Upper bound for g_s = sup_{||y|| >= s} g(0, y): the exact lattice
    /// maximum over s <= ||y|| <= max(2s, 2) combined with the analytic
    /// envelope C-hat * (2s)^{2-d} for the region beyond.
    double g_sup(double s) const {
        if (!(s > 0)) throw domain_error("g_sup: s must be > 0");
        const double rmax = std::max(2.0 * s, 2.0);
        const std::int64_t lo = static_cast<std::int64_t>(std::ceil(s * s - 1e-12));
        const std::int64_t hi = static_cast<std::int64_t>(std::floor(rmax * rmax + 1e-12));
        double shell_max = 0.0;
        for_each_sorted_tuple(static_cast<int>(std::ceil(rmax)), [&](const std::vector<int>& y, std::int64_t nsq) {
            if (nsq < lo || nsq > hi || nsq == 0) return;
            if (static_cast<double>(nsq) < s * s) return;
            shell_max = std::max(shell_max, at(LatticePoint(y)));
        });
        const double env = tail_envelope_constant() * std::pow(2.0 * s, 2 - d_);
        return std::max(shell_max, env);
    }

    std::size_t cache_size() const {
        std::shared_lock lock(mutex_);
        return cache_.size();
    }

    std::string cache_id() const {
        std::ostringstream os;
        os << "green-d" << d_ << "-tol" << tol_;
        return os.str();
    }

    void save_cache(const std::string& path) const {
        nlohmann::json j;
        j["schema_version"] = 1;
        j["kind"] = "green-cache";
        j["d"] = d_;
        j["tolerance"] = tol_;
        nlohmann::json entries = nlohmann::json::array();
        {
            std::shared_lock lock(mutex_);
            for (const auto& [key, value] : cache_) entries.push_back({key, value});
        }
        j["entries"] = std::move(entries);
        std::ofstream os(path);
        if (!os) throw config_error("save_cache: cannot open " + path);
        os << j.dump();
    }

    /// Merges a previously saved cache; (d, tolerance) must match exactly.
    void load_cache(const std::string& path) {
        std::ifstream is(path);
        if (!is) throw config_error("load_cache: cannot open " + path);
        nlohmann::json j = nlohmann::json::parse(is);
        if (j.value("kind", "") != "green-cache")
            throw config_error("load_cache: not a green cache file");
        if (j.at("d").get<int>() != d_ || j.at("tolerance").get<double>() != tol_)
            throw config_error("load_cache: cache keyed by different (d, tolerance)");
        std::unique_lock lock(mutex_);
        for (const auto& e : j.at("entries"))
            cache_.emplace(e[0].get<std::vector<int>>(), e[1].get<double>());
    }

private:
    template <typename Fn>
    void for_each_sorted_tuple(int rmax, Fn&& fn) const {
        // Non-decreasing nonnegative tuples: one representative per
        // permutation/sign orbit of the walk's symmetry group.
        std::vector<int> y(static_cast<std::size_t>(d_), 0);
        while (true) {
            std::int64_t nsq = 0;
            for (int v : y) nsq += static_cast<std::int64_t>(v) * v;
            fn(y, nsq);
            int axis = d_ - 1;
            while (axis >= 0) {
                ++y[static_cast<std::size_t>(axis)];
                bool ok = y[static_cast<std::size_t>(axis)] <= rmax;
                if (ok) {
                    for (int i = axis + 1; i < d_; ++i)
                        y[static_cast<std::size_t>(i)] = y[static_cast<std::size_t>(axis)];
                    break;
                }
                --axis;
            }
            if (axis < 0) break;
        }
    }

    double integrand(const std::vector<int>& key, double t) const {
        double prod = 1.0;
        const double x = t / static_cast<double>(d_);
        for (int n : key) {
            prod *= detail::in_scaled(n, x);
            if (prod == 0.0) return 0.0;
        }
        return prod;
    }

    double gl_panel(const std::vector<int>& key, double a, double b, const detail::GlNode* nodes,
                    int n) const {
        const double mid = 0.5 * (a + b), half = 0.5 * (b - a);
        double acc = 0.0;
        for (int i = 0; i < n; ++i) acc += nodes[i].w * integrand(key, mid + half * nodes[i].x);
        return acc * half;
    }

    // Adaptive bisection with an explicit error ledger.  The acceptance
    // test carries a relative noise floor: Bessel factors are only good to
    // ~1e-13 relative, so demanding more than that of |GL16 - GL8| just
    // triggers splitting storms on tail panels whose mass shrinks in
    // lockstep with the local tolerance.  Panels that still disagree at
    // the depth limit are accepted with their discrepancy charged to the
    // ledger, which evaluate() audits against the requested tolerance.
    double adaptive_panel(const std::vector<int>& key, double a, double b, double tol, int depth,
                          double& err_acc) const {
        const double coarse = gl_panel(key, a, b, detail::gl8, 8);
        const double fine = gl_panel(key, a, b, detail::gl16, 16);
        const double diff = std::abs(fine - coarse);
        if (diff <= tol || diff <= 2e-13 * std::abs(fine)) {
            err_acc += diff;
            return fine;
        }
        if (depth >= 24) {
            err_acc += diff;
            return fine;
        }
        const double mid = 0.5 * (a + b);
        return adaptive_panel(key, a, mid, 0.6 * tol, depth + 1, err_acc) +
               adaptive_panel(key, mid, b, 0.6 * tol, depth + 1, err_acc);
    }

    // Integral of the analytic envelope over [T, infinity), valid for T >= d.
    double envelope_tail(double T) const {
        const double d = static_cast<double>(d_);
        const double factor = std::pow((1.0 + d / (4.0 * T)) * std::sqrt(d / (2.0 * M_PI)), d);
        return factor * (2.0 / (d - 2.0)) * std::pow(T, 1.0 - 0.5 * d);
    }

    double evaluate(const std::vector<int>& key) const {
        std::int64_t nsq = 0;
        for (int n : key) nsq += static_cast<std::int64_t>(n) * n;
        const double t_peak = std::max(64.0, 4.0 * static_cast<double>(nsq));

        const double panel_tol = tol_ / 512.0;
        double total = 0.0;
        double err_acc = 0.0;
        double a = 0.0, b = 1.0;
        int guard = 0;
        while (true) {
            if (a < t_peak) {
                total += adaptive_panel(key, a, b, panel_tol, 0, err_acc);
            } else {
                // Beyond the peak the integrand is a smooth near-power-law;
                // GL16 with a single refinement check is plenty.
                const double coarse = gl_panel(key, a, b, detail::gl8, 8);
                double fine = gl_panel(key, a, b, detail::gl16, 16);
                if (std::abs(fine - coarse) > std::max(panel_tol, 1e-12 * std::abs(fine))) {
                    const double mid = 0.5 * (a + b);
                    const double left = gl_panel(key, a, mid, detail::gl16, 16);
                    const double right = gl_panel(key, mid, b, detail::gl16, 16);
                    err_acc += std::abs(left + right - fine);
                    fine = left + right;
                }
                total += fine;
            }
            a = b;
            b = 2.0 * a;
            if (a >= t_peak && a >= static_cast<double>(d_) && envelope_tail(a) < 0.45 * tol_) break;
            if (++guard > 300)
                throw numeric_error("GreenKernel: tail did not converge for key of norm^2 " +
                                    std::to_string(nsq));
        }
        if (err_acc > 0.5 * tol_)
            throw numeric_error("GreenKernel: quadrature error " + std::to_string(err_acc) +
                                " exceeds tolerance for key of norm^2 " + std::to_string(nsq));
        return total;
    }

    int d_;
    double tol_;
    int workspace_radius_;
    int dense_limit_;
    mutable std::shared_mutex mutex_;
    mutable std::unordered_map<std::vector<int>, double, detail::VecIntHash> cache_;
    mutable double envelope_ = 0.0;
};

/// Symmetric positive-definite covariance matrix of the GFF on a finite
/// labeled set: entry (i, j) = g(p_i, p_j).
struct GreenMatrix {
    PointSet base;
    Eigen::MatrixXd g;
    bool jittered = false;
};

/// Cholesky with the jitter policy: on failure add jitter_abs to the
/// diagonal once and retry; a second failure is a hard numeric error.
inline Eigen::LLT<Eigen::MatrixXd> cholesky_spd(const Eigen::MatrixXd& m, double jitter_abs,
                                                bool* jittered = nullptr) {
    Eigen::LLT<Eigen::MatrixXd> llt(m);
    if (llt.info() == Eigen::Success) {
        if (jittered) *jittered = false;
        return llt;
    }
    Eigen::MatrixXd m2 = m;
    m2.diagonal().array() += jitter_abs;
    llt.compute(m2);
    if (llt.info() != Eigen::Success)
        throw numeric_error("cholesky_spd: matrix not positive definite after jitter");
    if (jittered) *jittered = true;
    return llt;
}

inline GreenMatrix green_matrix(const GreenKernel& kernel, const PointSet& K) {
    if (K.empty()) throw domain_error("green_matrix: empty point set");
    if (K.dim() != kernel.dim()) throw domain_error("green_matrix: dimension mismatch");
    if (K.size() > static_cast<std::size_t>(kernel.dense_limit()))
        throw config_error("green_matrix: set size " + std::to_string(K.size()) +
                           " exceeds dense limit " + std::to_string(kernel.dense_limit()));
    for (const auto& p : K.points())
        for (int v : p.c)
            if (std::abs(v) > kernel.workspace_radius())
                throw config_error("green_matrix: point outside workspace radius");

    const auto n = static_cast<Eigen::Index>(K.size());
    GreenMatrix out{K, Eigen::MatrixXd(n, n), false};
    for (Eigen::Index i = 0; i < n; ++i)
        for (Eigen::Index j = i; j < n; ++j) {
            const double v = kernel.at(K[static_cast<std::size_t>(i)], K[static_cast<std::size_t>(j)]);
            out.g(i, j) = v;
            out.g(j, i) = v;
        }
    // SPD verification up front, per the jitter policy.
    bool jit = false;
    (void)cholesky_spd(out.g, 1e-12 * kernel.g_zero(), &jit);
    if (jit) {
        out.g.diagonal().array() += 1e-12 * kernel.g_zero();
        out.jittered = true;
    }
    return out;
}

/// CSV export: header row of point labels "(c1 c2 ... cd)", then the matrix
/// with 17 significant digits.
inline void write_matrix_csv(std::ostream& os, const GreenMatrix& m) {
    auto label = [](const LatticePoint& p) {
        std::string s = "(";
        for (std::size_t i = 0; i < p.c.size(); ++i) {
            if (i) s += ' ';
            s += std::to_string(p.c[i]);
        }
        return s + ")";
    };
    for (std::size_t j = 0; j < m.base.size(); ++j) {
        if (j) os << ',';
        os << label(m.base[j]);
    }
    os << '\n';
    char buf[64];
    for (Eigen::Index i = 0; i < m.g.rows(); ++i) {
        for (Eigen::Index j = 0; j < m.g.cols(); ++j) {
            if (j) os << ',';
            std::snprintf(buf, sizeof buf, "%.17g", m.g(i, j));
            os << buf;
        }
        os << '\n';
    }
}

} // namespace gfflab
