#pragma once

// Independent reference implementations used to freeze expected values.
// These stay deliberately separate from the library's computation paths.

#include <Eigen/Dense>

#include "gridest/estimator.hpp"
#include "gridest/netmodel.hpp"

namespace gridest::oracles {

/// Brute-force dense admittance assembly for line-only models: inverts every
/// series impedance and adds the four blocks into a dense matrix with its own
/// index arithmetic.
Eigen::MatrixXcd dense_line_admittance(const net::NetworkModel& per_unit_model);

/// Closed-form 2-bus single-phase voltage: solves the quadratic in |V2|^2 for
/// reference voltage v1, series impedance z (pu) and constant-power load s
/// (pu). Returns the high-voltage branch.
Complex two_bus_voltage(Complex v1, Complex z, Complex s_load);

/// Central finite-difference Jacobian of the per-unit measurement functions.
Eigen::MatrixXd fd_jacobian(const est::EstimationProblem& problem, const est::StateVector& state,
                            double step = 1e-6);

/// Rank via column-pivoted dense QR (independent of the eigenvalue route the
/// library uses).
int qr_rank(const Eigen::MatrixXd& H, double rel_threshold = 1e-10);

/// Connected components over energized elements; returns a component id per
/// bus, in model bus order.
std::vector<int> connected_components(const net::NetworkModel& model);

} // namespace gridest::oracles
