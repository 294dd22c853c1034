#pragma once

#include <cmath>
#include <string>
#include <vector>

#include <Eigen/Cholesky>
#include <Eigen/Dense>

#include "gfflab/common.hpp"
#include "gfflab/green.hpp"
#include "gfflab/lattice.hpp"

namespace gfflab {

/// Equilibrium measure and capacity of a finite set K:
///   cap(K) = 1^T G_K^{-1} 1,  weights = G_K^{-1} 1  (summing to cap(K)).
/// By Lagrange duality this equals the variational optimum
///   1 / min { a^T G a : sum(a) = 1 },
/// which the test suite checks against a direct simplex minimization.
struct EquilibriumReport {
    PointSet base;
    double capacity = 0.0;
    Eigen::VectorXd weights;
};

inline EquilibriumReport capacity(const GreenMatrix& G) {
    if (G.base.empty()) throw domain_error("capacity: empty set");
    auto llt = cholesky_spd(G.g, 1e-12 * G.g(0, 0));
    EquilibriumReport rep;
    rep.base = G.base;
    rep.weights = llt.solve(Eigen::VectorXd::Ones(G.g.rows()));
    rep.capacity = rep.weights.sum();
    if (rep.weights.minCoeff() < -1e-12)
        throw numeric_error("capacity: equilibrium weight below -1e-12 (solve unstable?)");
    if (!(rep.capacity > 0)) throw numeric_error("capacity: nonpositive capacity");
    return rep;
}

/// Hitting kernel of K1 evaluated from the sites of X:
///   M[x][y] = P_x[ H_{K1} < infty, X_{H_{K1}} = y ].
/// Computed exactly from the last-exit linear system G_{K1} m = g(x,.)|_{K1}
/// (the strong Markov identity g(x,y) = sum_z M[x][z] g(z,y)), not by
/// simulation; rows for x in K1 are exact unit rows.
struct HarmonicKernel {
    PointSet source;   // K1
    PointSet targets;  // X
    Eigen::MatrixXd M; // |X| x |K1|
    Eigen::VectorXd hit_prob; // row sums
};

inline HarmonicKernel harmonic_kernel(const GreenKernel& kernel, const PointSet& K1,
                                      const PointSet& X) {
    if (K1.empty()) throw domain_error("harmonic_kernel: empty K1");
    const GreenMatrix G1 = green_matrix(kernel, K1);
    auto llt = cholesky_spd(G1.g, 1e-12 * kernel.g_zero());

    HarmonicKernel hk;
    hk.source = K1;
    hk.targets = X;
    hk.M.resize(static_cast<Eigen::Index>(X.size()), static_cast<Eigen::Index>(K1.size()));
    for (std::size_t r = 0; r < X.size(); ++r) {
        if (auto idx = K1.index_of(X[r])) {
            hk.M.row(static_cast<Eigen::Index>(r)).setZero();
            hk.M(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(*idx)) = 1.0;
            continue;
        }
        Eigen::VectorXd rhs(static_cast<Eigen::Index>(K1.size()));
        for (std::size_t j = 0; j < K1.size(); ++j)
            rhs(static_cast<Eigen::Index>(j)) = kernel.at(X[r], K1[j]);
        hk.M.row(static_cast<Eigen::Index>(r)) = llt.solve(rhs).transpose();
    }
    if (hk.M.minCoeff() < -1e-10)
        throw numeric_error("harmonic_kernel: row entry below -1e-10 (hitting probabilities "
                            "must be nonnegative)");
    hk.hit_prob = hk.M.rowwise().sum();
    return hk;
}

/// Var h_x for x outside K1, evaluated along both routes:
///   quadratic form  m^T G_{11} m   and the last-exit simplification
///   sum_y m_y g(x, y).  The two must agree to 1e-10; disagreement flags a
/// violated last-exit identity and is a hard error.
struct HVariance {
    double value = 0.0;           // the simplified form
    double quadratic_form = 0.0;  // m^T G11 m
};

inline HVariance h_variance(const GreenKernel& kernel, const PointSet& K1,
                            const LatticePoint& x) {
    if (K1.contains(x)) throw domain_error("h_variance: x must lie outside K1");
    const HarmonicKernel hk = harmonic_kernel(kernel, K1, PointSet::singleton(x));
    const GreenMatrix G1 = green_matrix(kernel, K1);
    const Eigen::VectorXd m = hk.M.row(0).transpose();
    HVariance out;
    out.quadratic_form = m.dot(G1.g * m);
    double simplified = 0.0;
    for (std::size_t j = 0; j < K1.size(); ++j)
        simplified += m(static_cast<Eigen::Index>(j)) * kernel.at(x, K1[j]);
    out.value = simplified;
    if (std::abs(out.value - out.quadratic_form) > 1e-10)
        throw numeric_error("h_variance: last-exit identity violated, |" +
                            std::to_string(out.value) + " - " + std::to_string(out.quadratic_form) +
                            "| > 1e-10");
    return out;
}

} // namespace gfflab
