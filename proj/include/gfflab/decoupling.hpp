#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <map>
#include <queue>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "gfflab/common.hpp"
#include "gfflab/green.hpp"
#include "gfflab/lattice.hpp"
#include "gfflab/rng.hpp"
#include "gfflab/sampler.hpp"

namespace gfflab {

// ---------------------------------------------------------------------------
// Monotone test functions on K2.  The inequalities hold for every
// increasing [0,1]-valued function; the fixed family below spans the
// extremes (hard indicators) and smooth interpolants, each self-tested for
// monotonicity and support by random probes before use.
// ---------------------------------------------------------------------------

class MonotoneTestFunction {
public:
    enum class Kind { HardThreshold, SoftRamp, CrossingIndicator };

    /// 1[min_{i in A} phi_i >= a]
    static MonotoneTestFunction hard_threshold(std::vector<int> support, double a) {
        MonotoneTestFunction f;
        f.kind_ = Kind::HardThreshold;
        f.support_ = std::move(support);
        f.a_ = a;
        return f;
    }

    /// clamp((min_{i in A} phi_i - a) / w, 0, 1)
    static MonotoneTestFunction soft_ramp(std::vector<int> support, double a, double w) {
        if (!(w > 0)) throw config_error("soft_ramp: width must be positive");
        MonotoneTestFunction f;
        f.kind_ = Kind::SoftRamp;
        f.support_ = std::move(support);
        f.a_ = a;
        f.w_ = w;
        return f;
    }

    /// Indicator of an axis-0 crossing of the excursion set {phi >= a}
    /// within the sites of K2 (nearest-neighbor adjacency restricted to K2).
    static MonotoneTestFunction crossing_indicator(const PointSet& K2, double a) {
        MonotoneTestFunction f;
        f.kind_ = Kind::CrossingIndicator;
        f.a_ = a;
        const int n = static_cast<int>(K2.size());
        f.support_.resize(static_cast<std::size_t>(n));
        for (int i = 0; i < n; ++i) f.support_[static_cast<std::size_t>(i)] = i;
        int lo = K2[0][0], hi = K2[0][0];
        for (const auto& p : K2.points()) {
            lo = std::min(lo, p[0]);
            hi = std::max(hi, p[0]);
        }
        f.adj_.assign(static_cast<std::size_t>(n), {});
        f.is_source_.assign(static_cast<std::size_t>(n), false);
        f.is_target_.assign(static_cast<std::size_t>(n), false);
        for (int i = 0; i < n; ++i) {
            const auto& p = K2[static_cast<std::size_t>(i)];
            if (p[0] == lo) f.is_source_[static_cast<std::size_t>(i)] = true;
            if (p[0] == hi) f.is_target_[static_cast<std::size_t>(i)] = true;
            for (int ax = 0; ax < p.dim(); ++ax)
                for (int sgn : {-1, +1}) {
                    LatticePoint q = p;
                    q.c[static_cast<std::size_t>(ax)] += sgn;
                    if (auto j = K2.index_of(q))
                        f.adj_[static_cast<std::size_t>(i)].push_back(static_cast<int>(*j));
                }
        }
        return f;
    }

    Kind kind() const { return kind_; }
    double threshold() const { return a_; }
    std::string name() const {
        switch (kind_) {
            case Kind::HardThreshold: return "threshold(a=" + std::to_string(a_) + ")";
            case Kind::SoftRamp:
                return "ramp(a=" + std::to_string(a_) + ",w=" + std::to_string(w_) + ")";
            default: return "crossing(a=" + std::to_string(a_) + ")";
        }
    }

    double operator()(const Eigen::VectorXd& phi) const {
        switch (kind_) {
            case Kind::HardThreshold:
                return support_min(phi) >= a_ ? 1.0 : 0.0;
            case Kind::SoftRamp:
                return std::clamp((support_min(phi) - a_) / w_, 0.0, 1.0);
            default:
                return crossing_open(phi) ? 1.0 : 0.0;
        }
    }

    double shifted(const Eigen::VectorXd& phi, double delta) const {
        if (delta == 0.0) return (*this)(phi);
        return (*this)(phi.array() + delta);
    }
    double operator()(const Eigen::ArrayXd& arr) const { return (*this)(Eigen::VectorXd(arr)); }

    /// Random-probe validation: n_probes random configurations, each paired
    /// with a nonnegative perturbation (monotonicity) and an off-support
    /// perturbation (support).  Violations are domain errors.
    void self_test(int n_coords, std::uint64_t seed, int n_probes = 1000) const {
        GaussianStream stream(seed, 0xf2f2ull);
        for (int t = 0; t < n_probes; ++t) {
            Eigen::VectorXd phi(n_coords);
            stream.fill_normals(static_cast<std::uint64_t>(t), phi.data(),
                                static_cast<std::size_t>(n_coords));
            const double base = (*this)(phi);
            if (base < -1e-12 || base > 1.0 + 1e-12)
                throw domain_error("test function violates [0,1] range");
            Eigen::VectorXd up = phi;
            for (int i = 0; i < n_coords; ++i) {
                const double u = stream.uniform(static_cast<std::uint64_t>(t),
                                                static_cast<std::uint64_t>(1000 + i));
                if (u < 0.5) up(i) += 2.0 * u;
            }
            if ((*this)(up) < base - 1e-12)
                throw domain_error("test function failed the monotonicity self-test");
            // off-support probe
            Eigen::VectorXd off = phi;
            bool any_off = false;
            for (int i = 0; i < n_coords; ++i)
                if (std::find(support_.begin(), support_.end(), i) == support_.end()) {
                    off(i) += 7.5;
                    any_off = true;
                }
            if (any_off && std::abs((*this)(off) - base) > 1e-12)
                throw domain_error("test function depends on coordinates outside its support");
        }
    }

    const std::vector<int>& support() const { return support_; }

private:
    double support_min(const Eigen::VectorXd& phi) const {
        double m = std::numeric_limits<double>::infinity();
        for (int i : support_) m = std::min(m, phi(i));
        return m;
    }

    bool crossing_open(const Eigen::VectorXd& phi) const {
        const int n = static_cast<int>(adj_.size());
        std::vector<char> seen(static_cast<std::size_t>(n), 0);
        std::queue<int> q;
        for (int i = 0; i < n; ++i)
            if (is_source_[static_cast<std::size_t>(i)] && phi(i) >= a_) {
                seen[static_cast<std::size_t>(i)] = 1;
                q.push(i);
            }
        while (!q.empty()) {
            const int i = q.front();
            q.pop();
            if (is_target_[static_cast<std::size_t>(i)]) return true;
            for (int j : adj_[static_cast<std::size_t>(i)])
                if (!seen[static_cast<std::size_t>(j)] && phi(j) >= a_) {
                    seen[static_cast<std::size_t>(j)] = 1;
                    q.push(j);
                }
        }
        return false;
    }

    Kind kind_ = Kind::HardThreshold;
    std::vector<int> support_;
    double a_ = 0.0, w_ = 1.0;
    std::vector<std::vector<int>> adj_;
    std::vector<char> is_source_, is_target_;
};

// ---------------------------------------------------------------------------
// Tail bound and sprinkling amount
// ---------------------------------------------------------------------------

/// 2 |H_1^{(=s)}| exp(-delta^2 / (8 g_s)), evaluated with the enumerated
/// shell size and the certified g_s upper bound.
inline double tail_bound_rhs(const AuxiliaryGeometry& geom, const GreenKernel& kernel,
                             double delta) {
    if (!(delta >= 0)) throw domain_error("tail_bound_rhs: delta must be >= 0");
    const double gs = kernel.g_sup(geom.s);
    return 2.0 * static_cast<double>(geom.h1_shell_size) *
           std::exp(-delta * delta / (8.0 * gs));
}

/// Smallest delta with tail_bound_rhs <= target:
///   delta = sqrt(8 g_s ln(2 |H_1^{(=s)}| / target)).
inline double choose_delta(const AuxiliaryGeometry& geom, const GreenKernel& kernel,
                           double target) {
    if (!(target > 0)) throw domain_error("choose_delta: target must be positive");
    const double cap = 2.0 * static_cast<double>(geom.h1_shell_size);
    if (target >= cap) return 0.0;
    const double gs = kernel.g_sup(geom.s);
    return std::sqrt(8.0 * gs * std::log(cap / target));
}

// ---------------------------------------------------------------------------
// P[G_delta^c] estimation
// ---------------------------------------------------------------------------

struct GDeltaEstimate {
    double mc = 0.0;           // MC estimate of P[sup_{x in K2} |h_x| > delta/2]
    double se = 0.0;
    double union_bound = 0.0;  // sum_x 2 Phi-bar(delta / (2 sigma_x)), exact variances
    Eigen::VectorXd site_sigmas;
    std::uint64_t n = 0;
};

/// The conditional mean h on K2 is Gaussian with covariance M G11 M^T; we
/// sample it directly from that Cholesky factor (same law as M phi_{K1},
/// cheaper when |K1| is large).
inline GDeltaEstimate g_delta_prob(const ConditionalModel& model, double delta, std::uint64_t n,
                                   std::uint64_t seed, std::uint64_t stream_id = 11,
                                   int workers = 1) {
    if (n < 10000) throw config_error("g_delta_prob: need n >= 1e4");
    if (!(delta > 0)) throw domain_error("g_delta_prob: delta must be positive");
    Eigen::MatrixXd cov_h = model.hitting_rows() * model.g11() * model.hitting_rows().transpose();
    cov_h = 0.5 * (cov_h + cov_h.transpose()).eval();

    GDeltaEstimate out;
    out.n = n;
    out.site_sigmas = cov_h.diagonal().cwiseMax(0.0).cwiseSqrt();
    out.union_bound = 0.0;
    for (Eigen::Index i = 0; i < out.site_sigmas.size(); ++i) {
        const double s = out.site_sigmas(i);
        if (s > 0) out.union_bound += 2.0 * normal_upper_tail(delta / (2.0 * s));
    }

    // h can be very degenerate (strongly correlated sites); a diagonal
    // ridge of relative size 1e-12 is statistically invisible here.
    const double ridge = 1e-12 * std::max(1.0, cov_h.diagonal().maxCoeff());
    Eigen::MatrixXd lh = cholesky_spd(cov_h, ridge).matrixL();

    GaussianStream stream(seed, stream_id);
    const auto dim = static_cast<std::size_t>(lh.rows());
    const double half = delta / 2.0;
    const auto acc = parallel_moments(n, workers, [&](std::uint64_t draw) {
        Eigen::VectorXd xi(static_cast<Eigen::Index>(dim));
        stream.fill_normals(draw, xi.data(), dim);
        const Eigen::VectorXd h = lh.triangularView<Eigen::Lower>() * xi;
        return (h.cwiseAbs().maxCoeff() > half) ? 1.0 : 0.0;
    });
    out.mc = acc.mean();
    out.se = acc.std_error();
    return out;
}

// ---------------------------------------------------------------------------
// Reports
// ---------------------------------------------------------------------------

struct EstimateWithSe {
    double value = 0.0;
    double se = 0.0;
};

/// Exact upper tail of Bin(n, p): P[X >= k].
inline double binomial_upper_p(std::uint64_t n, std::uint64_t k, double p) {
    if (k == 0) return 1.0;
    if (k > n) return 0.0;
    double total = 0.0;
    const double lp = std::log(p), lq = std::log1p(-p);
    for (std::uint64_t j = k; j <= n; ++j) {
        const double lc = std::lgamma(static_cast<double>(n) + 1) -
                          std::lgamma(static_cast<double>(j) + 1) -
                          std::lgamma(static_cast<double>(n - j) + 1);
        total += std::exp(lc + static_cast<double>(j) * lp + static_cast<double>(n - j) * lq);
    }
    return std::min(1.0, total);
}

struct DrawMargin {
    std::uint64_t draw = 0;
    bool g_delta_holds = true;
    double ce = 0.0, ce_se = 0.0;
    double margin_upper = 0.0;  // (E f2(phi+delta) + P) - CE, must be >= 0
    double margin_lower = 0.0;  // CE - (E f2(phi-delta) - P), must be >= 0
    double se_combined = 0.0;
};

/// Per-draw margins and the suite-level statistical verdict.  A violation
/// is a margin below -3 combined standard errors; the acceptance policy is
/// an exact binomial test of the violation count against the nominal
/// one-sided 3-sigma false-positive rate.
struct DecouplingReport {
    std::string what;
    double delta = 0.0;
    std::uint64_t n_outer = 0, n_inner = 0, master_seed = 0;
    std::string f1_name, f2_name;
    std::map<std::string, EstimateWithSe> estimates;
    std::vector<DrawMargin> draws;
    std::uint64_t comparisons = 0;
    std::uint64_t violations = 0;
    double violation_p_value = 1.0;
    std::uint64_t skipped_g_delta = 0;
    std::uint64_t coupling_violations = 0;

    // exact auxiliary quantities, when geometry is supplied
    bool has_aux = false;
    double g_s = 0.0;
    std::uint64_t h1_shell_size = 0;
    double tail_bound = 0.0;
    double max_site_variance = 0.0;

    static constexpr double nominal_fp_rate = 0.0013498980316300946;  // Phi-bar(3)

    bool passed(double p_threshold = 0.01) const {
        return violation_p_value >= p_threshold && coupling_violations == 0;
    }
};

inline void attach_aux_quantities(DecouplingReport& rep, const AuxiliaryGeometry& geom,
                                  const GreenKernel& kernel, const ConditionalModel& model,
                                  double delta) {
    rep.has_aux = true;
    rep.g_s = kernel.g_sup(geom.s);
    rep.h1_shell_size = geom.h1_shell_size;
    rep.tail_bound = tail_bound_rhs(geom, kernel, delta);
    Eigen::MatrixXd cov_h =
        model.hitting_rows() * model.g11() * model.hitting_rows().transpose();
    rep.max_site_variance = cov_h.diagonal().maxCoeff();
}

// ---------------------------------------------------------------------------
// Conditional decoupling verification
// ---------------------------------------------------------------------------

/// For each conditioning draw of phi_{K1} on which G_delta holds, the
/// inner Monte Carlo estimate of E(f2(phi) | phi_{K1}) must sit between
/// E f2(phi - delta) - P[G_delta^c] and E f2(phi + delta) + P[G_delta^c]
/// up to 3 combined standard errors.  Both reference expectations are
/// estimated on a much larger budget than the inner loops so that the
/// per-draw comparisons are effectively independent.
inline DecouplingReport verify_conditional(const ConditionalModel& model,
                                           const MonotoneTestFunction& f2, double delta,
                                           std::uint64_t n_outer, std::uint64_t n_inner,
                                           std::uint64_t seed, int workers = 1,
                                           std::uint64_t n_reference = 0) {
    if (!(delta > 0)) throw domain_error("verify_conditional: delta must be positive");
    const int n2 = static_cast<int>(model.k2().size());
    f2.self_test(n2, seed);

    DecouplingReport rep;
    rep.what = "conditional (cond_incr)";
    rep.delta = delta;
    rep.n_outer = n_outer;
    rep.n_inner = n_inner;
    rep.master_seed = seed;
    rep.f2_name = f2.name();

    if (n_reference == 0) n_reference = std::max<std::uint64_t>(200000, 8 * n_inner);

    // Marginal references on K2 (unconditional field law).
    const double jitter = 1e-12 * model.g22()(0, 0);
    ExactSampler marg(model.g22(), model.k2(), seed, 2, jitter);
    MomentAccumulator acc_plus, acc_minus;
    std::uint64_t coupling_bad = 0;
    for (std::uint64_t i = 0; i < n_reference; ++i) {
        const FieldSample s = marg.draw(i);
        const double f0 = f2(s.values);
        const double fp = f2.shifted(s.values, delta);
        const double fm = f2.shifted(s.values, -delta);
        if (fp < f0 - 1e-12 || f0 < fm - 1e-12) ++coupling_bad;
        acc_plus.add(fp);
        acc_minus.add(fm);
    }
    rep.coupling_violations += coupling_bad;
    rep.estimates["Ef2_plus_delta"] = {acc_plus.mean(), acc_plus.std_error()};
    rep.estimates["Ef2_minus_delta"] = {acc_minus.mean(), acc_minus.std_error()};

    const GDeltaEstimate pg = g_delta_prob(model, delta, std::max<std::uint64_t>(n_reference, 10000),
                                           seed, 11, workers);
    rep.estimates["P_G_delta_c"] = {pg.mc, pg.se};
    rep.estimates["P_G_delta_c_union_bound"] = {pg.union_bound, 0.0};

    // Outer conditioning draws.
    const double jitter1 = 1e-12 * model.g11()(0, 0);
    ExactSampler outer(model.g11(), model.k1(), seed, 3, jitter1);
    const Eigen::MatrixXd& lsch = model.l_schur();
    MomentAccumulator acc_ce;
    for (std::uint64_t i = 0; i < n_outer; ++i) {
        const FieldSample phi1 = outer.draw(i);
        const Eigen::VectorXd h = model.conditional_mean(phi1.values);
        DrawMargin dm;
        dm.draw = i;
        if (h.cwiseAbs().maxCoeff() > delta / 2.0) {
            dm.g_delta_holds = false;
            ++rep.skipped_g_delta;
            rep.draws.push_back(dm);
            continue;
        }
        GaussianStream inner_stream(seed, 1000 + i);
        MomentAccumulator acc;
        std::uint64_t bad = 0;
        Eigen::VectorXd xi(static_cast<Eigen::Index>(n2));
        for (std::uint64_t j = 0; j < n_inner; ++j) {
            inner_stream.fill_normals(j, xi.data(), static_cast<std::size_t>(n2));
            const Eigen::VectorXd phi2 = h + lsch.triangularView<Eigen::Lower>() * xi;
            const double f0 = f2(phi2);
            if (f2.shifted(phi2, delta) < f0 - 1e-12 || f0 < f2.shifted(phi2, -delta) - 1e-12)
                ++bad;
            acc.add(f0);
        }
        rep.coupling_violations += bad;
        dm.ce = acc.mean();
        dm.ce_se = acc.std_error();
        dm.se_combined = std::sqrt(dm.ce_se * dm.ce_se + pg.se * pg.se +
                                   std::max(acc_plus.std_error(), acc_minus.std_error()) *
                                       std::max(acc_plus.std_error(), acc_minus.std_error()));
        dm.margin_upper = (acc_plus.mean() + pg.mc) - dm.ce;
        dm.margin_lower = dm.ce - (acc_minus.mean() - pg.mc);
        rep.draws.push_back(dm);
        acc_ce.add(dm.ce);
        rep.comparisons += 2;
        if (dm.margin_upper < -3.0 * dm.se_combined) ++rep.violations;
        if (dm.margin_lower < -3.0 * dm.se_combined) ++rep.violations;
    }
    rep.estimates["CE_mean_over_draws"] = {acc_ce.mean(), acc_ce.std_error()};
    rep.violation_p_value =
        binomial_upper_p(rep.comparisons, rep.violations, DecouplingReport::nominal_fp_rate);
    return rep;
}

// ---------------------------------------------------------------------------
// Corollary (unconditional sprinkled decoupling) verification
// ---------------------------------------------------------------------------

/// Any [0,1]-valued function of the field on K1.
struct SupportedFunction {
    std::function<double(const Eigen::VectorXd&)> fn;
    std::string name;
    double operator()(const Eigen::VectorXd& v) const { return fn(v); }
};

/// Checks
///   E f1 E f2(phi-delta) - 2P <= E f1(phi) f2(phi) <= E f1 E f2(phi+delta) + 2P
/// by joint exact sampling on K1 u K2, and the mirrored inequalities for
/// the decreasing function f2(-.) via field negation.  Standard errors of
/// the plug-in margins come from batch means over 50 batches.
inline DecouplingReport verify_corollary(const ConditionalModel& model,
                                         const SupportedFunction& f1,
                                         const MonotoneTestFunction& f2, double delta,
                                         std::uint64_t n, std::uint64_t seed, int workers = 1) {
    if (!(delta > 0)) throw domain_error("verify_corollary: delta must be positive");
    const int n1 = static_cast<int>(model.k1().size());
    const int n2 = static_cast<int>(model.k2().size());
    f2.self_test(n2, seed);

    DecouplingReport rep;
    rep.what = "corollary (uncond_incr)";
    rep.delta = delta;
    rep.n_outer = n;
    rep.master_seed = seed;
    rep.f1_name = f1.name;
    rep.f2_name = f2.name();

    // joint exact sampler on K1 u K2
    std::vector<LatticePoint> joint_pts;
    for (const auto& p : model.k1().points()) joint_pts.push_back(p);
    for (const auto& p : model.k2().points()) joint_pts.push_back(p);
    const double jitter = 1e-12 * model.g11()(0, 0);
    ExactSampler joint(model.joint_covariance(), PointSet(joint_pts), seed, 4, jitter);

    const GDeltaEstimate pg =
        g_delta_prob(model, delta, std::max<std::uint64_t>(4 * n, 10000), seed, 11, workers);
    rep.estimates["P_G_delta_c"] = {pg.mc, pg.se};

    constexpr int n_batches = 50;
    struct Batch {
        double a = 0, b = 0, cp = 0, cm = 0, da = 0, dp = 0, dm = 0;
        std::uint64_t n = 0;
    };
    std::vector<Batch> batches(n_batches);
    for (std::uint64_t i = 0; i < n; ++i) {
        const FieldSample s = joint.draw(i);
        const Eigen::VectorXd phi1 = s.values.head(n1);
        const Eigen::VectorXd phi2 = s.values.tail(n2);
        const double v1 = f1(phi1);
        if (v1 < -1e-12 || v1 > 1.0 + 1e-12)
            throw domain_error("verify_corollary: f1 must take values in [0,1]");
        Batch& bt = batches[static_cast<std::size_t>(i % n_batches)];
        bt.a += v1 * f2(phi2);
        bt.b += v1;
        bt.cp += f2.shifted(phi2, delta);
        bt.cm += f2.shifted(phi2, -delta);
        // decreasing mirror: f2_dec(eta) = f2(-eta)
        const Eigen::VectorXd neg = -phi2;
        bt.da += v1 * f2(neg);
        bt.dp += f2.shifted(neg, delta);   // = f2_dec(phi - delta)
        bt.dm += f2.shifted(neg, -delta);  // = f2_dec(phi + delta)
        bt.n += 1;
    }

    auto margins_from_batches = [&](auto joint_of, auto marg_hi_of, auto marg_lo_of) {
        // margin_hi = Ef1 * E f2(phi+delta) + 2P - E f1 f2   (>= 0)
        // margin_lo = E f1 f2 - Ef1 * E f2(phi-delta) + 2P   (>= 0)
        double hi_sum = 0, hi_sq = 0, lo_sum = 0, lo_sq = 0;
        int used = 0;
        for (const auto& bt : batches) {
            if (bt.n == 0) continue;
            const double inv = 1.0 / static_cast<double>(bt.n);
            const double ma = joint_of(bt) * inv, mb = bt.b * inv;
            const double hi = mb * (marg_hi_of(bt) * inv) + 2.0 * pg.mc - ma;
            const double lo = ma - mb * (marg_lo_of(bt) * inv) + 2.0 * pg.mc;
            hi_sum += hi;
            hi_sq += hi * hi;
            lo_sum += lo;
            lo_sq += lo * lo;
            ++used;
        }
        const double mh = hi_sum / used, ml = lo_sum / used;
        const double seh = std::sqrt(std::max(0.0, (hi_sq / used - mh * mh) / (used - 1)));
        const double sel = std::sqrt(std::max(0.0, (lo_sq / used - ml * ml) / (used - 1)));
        return std::array<double, 4>{mh, seh, ml, sel};
    };

    double total_n = 0, ta = 0, tb = 0, tcp = 0, tcm = 0;
    for (const auto& bt : batches) {
        total_n += static_cast<double>(bt.n);
        ta += bt.a;
        tb += bt.b;
        tcp += bt.cp;
        tcm += bt.cm;
    }
    rep.estimates["E_f1_f2"] = {ta / total_n, 0.0};
    rep.estimates["E_f1"] = {tb / total_n, 0.0};
    rep.estimates["Ef2_plus_delta"] = {tcp / total_n, 0.0};
    rep.estimates["Ef2_minus_delta"] = {tcm / total_n, 0.0};

    const auto inc = margins_from_batches([](const Batch& b) { return b.a; },
                                          [](const Batch& b) { return b.cp; },
                                          [](const Batch& b) { return b.cm; });
    // decreasing f2(-.): shifting the field up shrinks it, so the upper
    // bound uses the level phi - delta and the lower bound phi + delta
    const auto dec = margins_from_batches([](const Batch& b) { return b.da; },
                                          [](const Batch& b) { return b.dp; },
                                          [](const Batch& b) { return b.dm; });

    auto record = [&](const char* tag, double margin, double se) {
        DrawMargin dm;
        dm.g_delta_holds = true;
        dm.margin_upper = margin;
        dm.margin_lower = margin;
        dm.se_combined = std::sqrt(se * se + 4.0 * pg.se * pg.se);
        rep.draws.push_back(dm);
        rep.comparisons += 1;
        if (margin < -3.0 * dm.se_combined) ++rep.violations;
        rep.estimates[std::string("margin_") + tag] = {margin, se};
    };
    record("upper_increasing", inc[0], inc[1]);
    record("lower_increasing", inc[2], inc[3]);
    record("upper_decreasing", dec[0], dec[1]);
    record("lower_decreasing", dec[2], dec[3]);

    rep.violation_p_value =
        binomial_upper_p(rep.comparisons, rep.violations, DecouplingReport::nominal_fp_rate);
    return rep;
}

} // namespace gfflab
