#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>

#include "switchlab/errors.hpp"

namespace switchlab {

using Eigen::MatrixXd;
using Eigen::VectorXd;

// Factorizes G + ridge*I; tau/region are 1-based and only used for the error.
inline Eigen::LDLT<MatrixXd> ridge_factor(const MatrixXd& G, double ridge, int tau, int region = -1) {
    MatrixXd A = G;
    A.diagonal().array() += ridge;
    Eigen::LDLT<MatrixXd> f(A);
    if (f.info() != Eigen::Success || !(f.rcond() > 1e-14) || !f.isPositive()) throw DegenerateDesign(tau, region);
    // LDLT accepts exact zero pivots; treat them as singular.
    const VectorXd D = f.vectorD();
    if (!(D.minCoeff() > 1e-13 * std::max(1.0, D.cwiseAbs().maxCoeff()))) throw DegenerateDesign(tau, region);
    return f;
}

// F with F F^T = S for a symmetric PSD S (small negative eigenvalues clipped).
inline MatrixXd psd_factor(const MatrixXd& S) {
    Eigen::SelfAdjointEigenSolver<MatrixXd> es(S);
    VectorXd ev = es.eigenvalues().cwiseMax(0.0).cwiseSqrt();
    return es.eigenvectors() * ev.asDiagonal();
}

inline double min_eigenvalue(const MatrixXd& S) {
    Eigen::SelfAdjointEigenSolver<MatrixXd> es(S, Eigen::EigenvaluesOnly);
    return es.eigenvalues().minCoeff();
}

}  // namespace switchlab
