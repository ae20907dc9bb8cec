#pragma once

// Nonlinear AC power flow for radial feeders with constant-power (P-Q) nodes,
// solved by backward-forward sweep with current summation.

#include <cmath>
#include <complex>
#include <string>

#include <Eigen/Dense>

#include "vvc/error.hpp"
#include "vvc/network.hpp"

namespace vvc {

/// Injections above this magnitude (p.u.) are rejected as implausible.
inline constexpr double kMaxPlausibleInjection = 10.0;

struct PfConfig {
  double tolerance = 1e-10;  ///< max complex power mismatch, p.u.
  int max_iter = 100;
};

/// Net (generation minus demand) injections at the n non-head nodes, p.u.
struct Injection {
  Eigen::VectorXd p;
  Eigen::VectorXd q;
};

struct VoltageProfile {
  Eigen::VectorXd v;
  bool converged = false;
  int iterations = 0;
  double max_mismatch = 0.0;
};

struct PhasorSolution {
  Eigen::VectorXcd voltage;
  bool converged = false;
  int iterations = 0;
  double max_mismatch = 0.0;
};

inline void check_injection(const NetworkModel& net, const Injection& inj) {
  if (inj.p.size() != net.n() || inj.q.size() != net.n()) {
    throw DimensionError("injection length " + std::to_string(inj.p.size()) + "/" +
                         std::to_string(inj.q.size()) + " does not match n = " +
                         std::to_string(net.n()));
  }
  for (int i = 0; i < net.n(); ++i) {
    if (!std::isfinite(inj.p[i]) || !std::isfinite(inj.q[i]) ||
        std::abs(inj.p[i]) > kMaxPlausibleInjection ||
        std::abs(inj.q[i]) > kMaxPlausibleInjection) {
      throw InjectionError("implausible injection at node " + net.node_id(i) + ": p=" +
                           std::to_string(inj.p[i]) + ", q=" + std::to_string(inj.q[i]));
    }
  }
}

inline bool injection_plausible(const Injection& inj) {
  return inj.p.allFinite() && inj.q.allFinite() &&
         inj.p.cwiseAbs().maxCoeff() <= kMaxPlausibleInjection &&
         inj.q.cwiseAbs().maxCoeff() <= kMaxPlausibleInjection;
}

/// Largest |V_i conj(I_i) + s_i| over all nodes, with branch currents taken
/// from the voltage drops across each branch.
inline double power_mismatch(const NetworkModel& net, const Eigen::VectorXcd& voltage,
                             const Eigen::VectorXcd& injection) {
  const int n = net.n();
  const std::complex<double> head(net.head_voltage(), 0.0);
  Eigen::VectorXcd branch_current(n);
  for (int pos = 0; pos < n; ++pos) {
    const int par = net.parent(pos);
    const std::complex<double> upstream = par < 0 ? head : voltage[par];
    branch_current[pos] = (upstream - voltage[pos]) / net.impedance(pos);
  }
  double worst = 0.0;
  for (int pos = 0; pos < n; ++pos) {
    std::complex<double> into = branch_current[pos];
    for (int c : net.children(pos)) into -= branch_current[c];
    const std::complex<double> residual = voltage[pos] * std::conj(into) + injection[pos];
    const double mag = std::abs(residual);
    if (!std::isfinite(mag)) return mag;
    worst = std::max(worst, mag);
  }
  return worst;
}

inline PhasorSolution solve_pf_phasors(const NetworkModel& net, const Injection& inj,
                                       const PfConfig& cfg = {}) {
  check_injection(net, inj);
  const int n = net.n();
  const std::complex<double> head(net.head_voltage(), 0.0);
  const auto& order = net.sweep_order();

  Eigen::VectorXcd s(n);
  for (int i = 0; i < n; ++i) s[i] = {inj.p[i], inj.q[i]};

  PhasorSolution sol;
  sol.voltage = Eigen::VectorXcd::Constant(n, head);
  Eigen::VectorXcd current(n);

  for (int iter = 1; iter <= cfg.max_iter; ++iter) {
    // Backward: branch current = own load current + downstream branch currents.
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
      const int pos = *it;
      std::complex<double> j = -std::conj(s[pos] / sol.voltage[pos]);
      for (int c : net.children(pos)) j += current[c];
      current[pos] = j;
    }
    // Forward: voltage drop along each branch.
    for (int pos : order) {
      const int par = net.parent(pos);
      const std::complex<double> upstream = par < 0 ? head : sol.voltage[par];
      sol.voltage[pos] = upstream - net.impedance(pos) * current[pos];
    }
    sol.iterations = iter;
    sol.max_mismatch = power_mismatch(net, sol.voltage, s);
    if (!std::isfinite(sol.max_mismatch)) break;
    if (sol.max_mismatch <= cfg.tolerance) {
      sol.converged = true;
      break;
    }
  }
  if (sol.converged) {
    for (int i = 0; i < n; ++i) {
      if (!(std::abs(sol.voltage[i]) > 0.0)) sol.converged = false;
    }
  }
  return sol;
}

/// v = f_pf(p, q). Non-convergence is reported in the profile, not thrown.
inline VoltageProfile solve_pf(const NetworkModel& net, const Injection& inj,
                               const PfConfig& cfg = {}) {
  const PhasorSolution sol = solve_pf_phasors(net, inj, cfg);
  VoltageProfile out;
  out.v = sol.voltage.cwiseAbs();
  out.converged = sol.converged;
  out.iterations = sol.iterations;
  out.max_mismatch = sol.max_mismatch;
  return out;
}

}  // namespace vvc
