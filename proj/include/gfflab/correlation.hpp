#pragma once

#include <cmath>
#include <numbers>
#include <utility>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/SVD>

#include "gfflab/common.hpp"
#include "gfflab/green.hpp"
#include "gfflab/lattice.hpp"
#include "gfflab/potential.hpp"

namespace gfflab {

/// Maximal correlation rho between the GFF restricted to K1 and to K2,
/// together with the capacity sandwich data.  rho is the operator norm of
/// the cross projection between the two Gaussian subspaces; in coordinates,
/// rho^2 is the top eigenvalue of the pencil
///     (G12 G22^{-1} G21) a = lambda G11 a.
/// We whiten with G11 = L1 L1^T, G22 = L2 L2^T and take the largest
/// singular value of C = L1^{-1} G12 L2^{-T}, which avoids forming
/// explicit inverses and is stable for near-singular blocks on clustered
/// sets.
struct CorrelationReport {
    double rho = 0.0;
    double alpha_lower = 0.0;     // rho / (2 pi), strong-mixing lower bound
    double sandwich_term = 0.0;   // sqrt(cap(K1) cap(K2)) / dist^{d-2}
    double ratio = 0.0;           // rho / sandwich_term
    double cap1 = 0.0, cap2 = 0.0;
    double dist = 0.0;
    int dim = 0;
    bool separation_ok = false;   // dist >= max(diam) (exact integer check)
    int clamped_entries = 0;      // Perron entries in [-1e-10, 0) zeroed

    // Maximizing pair (X*, Y*): X* = sum alpha_x phi_x with ||X*|| = 1,
    // Y* = sum beta_y phi_y its projection, ||Y*|| = rho.
    Eigen::VectorXd perron_alpha;
    Eigen::VectorXd perron_beta;
    // Same directions renormalized to sum 1 (the simplex normalization).
    Eigen::VectorXd perron_alpha_simplex;
    Eigen::VectorXd perron_beta_simplex;
};

inline CorrelationReport max_correlation(const GreenKernel& kernel, const PointSet& K1,
                                         const PointSet& K2) {
    if (K1.empty() || K2.empty()) throw domain_error("max_correlation: empty set");
    if (!K1.disjoint_from(K2)) throw domain_error("max_correlation: sets must be disjoint");

    const GreenMatrix G11 = green_matrix(kernel, K1);
    const GreenMatrix G22 = green_matrix(kernel, K2);
    Eigen::MatrixXd G12(static_cast<Eigen::Index>(K1.size()), static_cast<Eigen::Index>(K2.size()));
    for (std::size_t i = 0; i < K1.size(); ++i)
        for (std::size_t j = 0; j < K2.size(); ++j)
            G12(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = kernel.at(K1[i], K2[j]);

    const double jitter = 1e-12 * kernel.g_zero();
    auto llt1 = cholesky_spd(G11.g, jitter);
    auto llt2 = cholesky_spd(G22.g, jitter);
    const Eigen::MatrixXd L1 = llt1.matrixL();
    const Eigen::MatrixXd L2 = llt2.matrixL();

    // C = L1^{-1} G12 L2^{-T}
    Eigen::MatrixXd C = L1.triangularView<Eigen::Lower>().solve(G12);
    C = L2.triangularView<Eigen::Lower>().solve(C.transpose()).transpose();

    Eigen::JacobiSVD<Eigen::MatrixXd> svd(C, Eigen::ComputeThinU | Eigen::ComputeThinV);
    CorrelationReport rep;
    rep.rho = svd.singularValues()(0);
    if (rep.rho >= 1.0 + 1e-9)
        throw numeric_error("max_correlation: rho >= 1 for disjoint sets");
    rep.rho = std::min(rep.rho, 1.0);
    rep.alpha_lower = rep.rho / (2.0 * std::numbers::pi);
    rep.dim = kernel.dim();

    Eigen::VectorXd u = svd.matrixU().col(0);
    Eigen::VectorXd v = svd.matrixV().col(0);
    Eigen::VectorXd alpha = L1.transpose().triangularView<Eigen::Upper>().solve(u);
    Eigen::VectorXd beta = rep.rho * L2.transpose().triangularView<Eigen::Upper>().solve(v);

    // Perron-Frobenius canonicalization: the leading eigenvector has a
    // nonnegative representative; flip so the largest-magnitude entry is
    // positive, zero out entries in [-1e-10, 0), reject anything below.
    Eigen::Index imax = 0;
    alpha.cwiseAbs().maxCoeff(&imax);
    if (alpha(imax) < 0) {
        alpha = -alpha;
        beta = -beta;
    }
    for (Eigen::VectorXd* vec : {&alpha, &beta}) {
        for (Eigen::Index i = 0; i < vec->size(); ++i) {
            double& e = (*vec)(i);
            if (e < 0) {
                if (e < -1e-10)
                    throw numeric_error("max_correlation: Perron entry below -1e-10");
                e = 0.0;
                ++rep.clamped_entries;
            }
        }
    }
    rep.perron_alpha = alpha;
    rep.perron_beta = beta;
    rep.perron_alpha_simplex = alpha / alpha.sum();
    rep.perron_beta_simplex = beta.sum() > 0 ? Eigen::VectorXd(beta / beta.sum()) : beta;

    rep.cap1 = capacity(G11).capacity;
    rep.cap2 = capacity(G22).capacity;
    rep.dist = dist(K1, K2);
    rep.sandwich_term =
        std::sqrt(rep.cap1 * rep.cap2) / std::pow(rep.dist, kernel.dim() - 2);
    rep.ratio = rep.rho / rep.sandwich_term;
    rep.separation_ok = dist_sq(K1, K2) >= std::max(diam_sq(K1), diam_sq(K2));
    return rep;
}

/// Ratio rho * dist^{d-2} / sqrt(cap(K1) cap(K2)).  When the separation
/// condition dist >= max(diam) fails the lower bound of the sandwich is
/// not claimed; the report flag records this rather than erroring.
struct SandwichCheck {
    double ratio = 0.0;
    bool lower_bound_applicable = false;
};

inline SandwichCheck sandwich_check(const CorrelationReport& rep) {
    SandwichCheck out;
    out.ratio = rep.ratio;
    out.lower_bound_applicable = rep.separation_ok;
    return out;
}

/// Bracket for the sup of covariances of [0,1]-valued functions supported
/// on the two sets: [rho/(2 pi), rho].
inline std::pair<double, double> mixing_bounds(const CorrelationReport& rep) {
    return {rep.alpha_lower, rep.rho};
}

/// One row of a scaling sweep: the configuration (K1, K2) dilated by an
/// integer factor.
struct SandwichSweepRow {
    double r = 0.0;            // dist(K1, K2) after scaling
    double rho = 0.0;
    double sandwich_term = 0.0;
    double ratio = 0.0;
    double alpha_lower = 0.0;
};

inline std::vector<SandwichSweepRow> sandwich_sweep(const GreenKernel& kernel, const PointSet& K1,
                                                    const PointSet& K2,
                                                    const std::vector<int>& scales) {
    std::vector<SandwichSweepRow> rows;
    for (int s : scales) {
        if (s < 1) throw domain_error("sandwich_sweep: scales must be >= 1");
        auto scale_set = [s](const PointSet& K) {
            std::vector<LatticePoint> pts;
            pts.reserve(K.size());
            for (const auto& p : K.points()) {
                LatticePoint q = p;
                for (auto& c : q.c) c *= s;
                pts.push_back(q);
            }
            return PointSet(pts);
        };
        const CorrelationReport rep = max_correlation(kernel, scale_set(K1), scale_set(K2));
        rows.push_back({rep.dist, rep.rho, rep.sandwich_term, rep.ratio, rep.alpha_lower});
    }
    return rows;
}

} // namespace gfflab
