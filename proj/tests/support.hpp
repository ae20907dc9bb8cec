#pragma once

#include <complex>
#include <fstream>
#include <string>

#include <Eigen/Dense>

#include "vvc/design.hpp"
#include "vvc/linmodels.hpp"
#include "vvc/network.hpp"
#include "vvc/powerflow.hpp"
#include "vvc/scenario.hpp"

namespace vvc::testing {

inline std::string data_path(const std::string& rel) { return std::string(VVC_DATA_DIR) + "/" + rel; }

inline NetworkModel feeder(const std::string& name) { return load_feeder(data_path("feeders/" + name)); }

inline const std::vector<std::string>& bundled_feeders() {
  static const std::vector<std::string> names{"two_bus.json", "star3.json", "lateral6.json",
                                              "ieee33.json"};
  return names;
}

/// Polar Newton-Raphson on the bus admittance matrix. Independent of the
/// sweep solver; used only as an oracle.
inline Eigen::VectorXd newton_pf(const NetworkModel& net, const Injection& inj, double tol = 1e-13,
                                 int max_iter = 50) {
  using cd = std::complex<double>;
  const int n = net.n();
  const int N = n + 1;
  Eigen::MatrixXcd Y = Eigen::MatrixXcd::Zero(N, N);
  for (int pos = 0; pos < n; ++pos) {
    const int a = net.parent(pos) + 1;
    const int b = pos + 1;
    const cd y = 1.0 / net.impedance(pos);
    Y(a, a) += y;
    Y(b, b) += y;
    Y(a, b) -= y;
    Y(b, a) -= y;
  }
  Eigen::VectorXd theta = Eigen::VectorXd::Zero(N);
  Eigen::VectorXd mag = Eigen::VectorXd::Constant(N, net.head_voltage());
  Eigen::VectorXcd s(N);
  s[0] = 0.0;
  for (int i = 0; i < n; ++i) s[i + 1] = cd(inj.p[i], inj.q[i]);

  for (int it = 0; it < max_iter; ++it) {
    Eigen::VectorXcd V(N);
    for (int i = 0; i < N; ++i) V[i] = std::polar(mag[i], theta[i]);
    const Eigen::VectorXcd I = Y * V;
    Eigen::VectorXcd S(N);
    for (int i = 0; i < N; ++i) S[i] = V[i] * std::conj(I[i]);
    Eigen::VectorXd F(2 * n);
    for (int i = 0; i < n; ++i) {
      F[i] = S[i + 1].real() - s[i + 1].real();
      F[n + i] = S[i + 1].imag() - s[i + 1].imag();
    }
    if (F.cwiseAbs().maxCoeff() < tol) break;
    // dS/dtheta = j diag(V) conj(diag(I) - Y diag(V)); dS/d|V| = diag(V) conj(Y diag(Vn)) + conj(diag(I)) diag(Vn)
    Eigen::MatrixXcd dth(N, N), dvm(N, N);
    for (int r = 0; r < N; ++r) {
      for (int c = 0; c < N; ++c) {
        const cd vn = V[c] / std::abs(V[c]);
        cd a = -Y(r, c) * V[c];
        if (r == c) a += I[r];
        dth(r, c) = cd(0, 1) * V[r] * std::conj(a);
        dvm(r, c) = V[r] * std::conj(Y(r, c) * vn);
        if (r == c) dvm(r, c) += std::conj(I[r]) * vn;
      }
    }
    Eigen::MatrixXd J(2 * n, 2 * n);
    for (int r = 0; r < n; ++r) {
      for (int c = 0; c < n; ++c) {
        J(r, c) = dth(r + 1, c + 1).real();
        J(r, n + c) = dvm(r + 1, c + 1).real();
        J(n + r, c) = dth(r + 1, c + 1).imag();
        J(n + r, n + c) = dvm(r + 1, c + 1).imag();
      }
    }
    const Eigen::VectorXd dx = J.partialPivLu().solve(-F);
    theta.tail(n) += dx.head(n);
    mag.tail(n) += dx.tail(n);
  }
  return mag.tail(n);
}

/// Synthetic year -> 90/10 split -> average operating point -> LPF at the
/// operating point -> worst-case training scenario, on the bundled 33-node feeder.
struct Workflow33 {
  NetworkModel net;
  ScenarioSet year;
  SplitResult split;
  OperatingPoint op;
  LpfModel lpf;
  LdfModel ldf;
  Scenario worst;
  double worst_open_dev2 = 0.0;
  ScenarioOffset offset;
  Eigen::VectorXd v_ref;

  explicit Workflow33(std::uint64_t seed = 42) : net(feeder("ieee33.json")) {
    std::ifstream f(data_path("scenarios/ieee33_synth.json"));
    const SynthConfig cfg = parse_synth_config(nlohmann::json::parse(f), net);
    year = synthesize_year(net, cfg, seed);
    split = split_train_test(year, 0.9, seed);
    op = average_operating_point(split.train);
    lpf = build_jacobians(net, op);
    ldf = build_ldf(net);
    const std::size_t wi = select_worst_case_index(split.train, net);
    worst = split.train[wi];
    worst_open_dev2 = (solve_pf(net, open_loop_injection(worst)).v.array() - 1.0).matrix().norm();
    offset = lpf_offset(lpf, worst);
    v_ref = Eigen::VectorXd::Ones(net.n());
  }

  DesignProblem problem(Criterion c) const {
    DesignProblem p = make_problem(lpf, offset, v_ref);
    p.criterion = c;
    return p;
  }
};

inline const Workflow33& workflow33() {
  static const Workflow33 wf;
  return wf;
}

/// Two-generator sensitivity fixture.
inline Eigen::MatrixXd fixture_jq() {
  Eigen::MatrixXd S(2, 2);
  S << 1.5504, 1.5504, 1.5505, 1.6144;
  return S;
}

}  // namespace vvc::testing
