#include "support/oracles.hpp"

#include <algorithm>
#include <functional>
#include <map>

namespace gridest::oracles {

Eigen::MatrixXcd dense_line_admittance(const net::NetworkModel& model) {
    // independent node numbering: walk buses and phases
    std::map<std::pair<std::string, int>, int> node;
    int count = 0;
    for (const auto& b : model.buses) {
        auto phases = b.phases;
        std::sort(phases.begin(), phases.end());
        for (auto p : phases) node[{b.id, static_cast<int>(p)}] = count++;
    }
    Eigen::MatrixXcd Y = Eigen::MatrixXcd::Zero(count, count);
    for (const auto& l : model.lines) {
        if (!l.status) continue;
        int np = static_cast<int>(l.phases.size());
        Eigen::MatrixXcd z = l.series_impedance;
        if (l.is_switch) z = Eigen::MatrixXcd::Identity(np, np) * Complex(1e-4, 0.0);
        Eigen::MatrixXcd ys = z.inverse();
        Eigen::MatrixXcd ysh = Eigen::MatrixXcd::Zero(np, np);
        if (!l.is_switch && l.shunt_admittance.size() != 0) ysh = l.shunt_admittance;
        for (int i = 0; i < np; ++i) {
            int fi = node.at({l.from_bus, static_cast<int>(l.phases[i])});
            int ti = node.at({l.to_bus, static_cast<int>(l.phases[i])});
            for (int j = 0; j < np; ++j) {
                int fj = node.at({l.from_bus, static_cast<int>(l.phases[j])});
                int tj = node.at({l.to_bus, static_cast<int>(l.phases[j])});
                Y(fi, fj) += ys(i, j) + 0.5 * ysh(i, j);
                Y(ti, tj) += ys(i, j) + 0.5 * ysh(i, j);
                Y(fi, tj) -= ys(i, j);
                Y(ti, fj) -= ys(i, j);
            }
        }
    }
    return Y;
}

Complex two_bus_voltage(Complex v1, Complex z, Complex s_load) {
    // injection balance at bus 2: V2 conj((V2 - V1)/z) = -s
    // with u = |V2|^2 and w = s * conj(z): V2 = (u + w)/conj(V1),
    // giving |V1|^2 u = |u + w|^2, a quadratic in u.
    Complex w = s_load * std::conj(z);
    double v1sq = std::norm(v1);
    double a = 1.0;
    double b = 2.0 * w.real() - v1sq;
    double c = std::norm(w);
    double disc = b * b - 4.0 * a * c;
    if (disc < 0) throw std::runtime_error("two_bus_voltage: no real solution (over loadability)");
    double u = (-b + std::sqrt(disc)) / (2.0 * a);
    return (u + w) / std::conj(v1);
}

Eigen::MatrixXd fd_jacobian(const est::EstimationProblem& problem, const est::StateVector& state,
                            double step) {
    const int n = problem.state_dim();
    const auto m = static_cast<int>(problem.measurements().records.size());
    Eigen::MatrixXd J(m, n);
    est::StateVector xp = state, xm = state;
    for (int c = 0; c < n; ++c) {
        xp.x = state.x;
        xm.x = state.x;
        xp.x[c] += step;
        xm.x[c] -= step;
        Eigen::VectorXd hp = problem.values_pu(xp);
        Eigen::VectorXd hm = problem.values_pu(xm);
        J.col(c) = (hp - hm) / (2.0 * step);
    }
    return J;
}

int qr_rank(const Eigen::MatrixXd& H, double rel_threshold) {
    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(H);
    qr.setThreshold(rel_threshold);
    return static_cast<int>(qr.rank());
}

std::vector<int> connected_components(const net::NetworkModel& model) {
    std::map<std::string, int> idx;
    for (size_t i = 0; i < model.buses.size(); ++i) idx[model.buses[i].id] = static_cast<int>(i);
    std::vector<int> comp(model.buses.size());
    for (size_t i = 0; i < comp.size(); ++i) comp[i] = static_cast<int>(i);
    std::function<int(int)> find = [&](int a) { return comp[a] == a ? a : comp[a] = find(comp[a]); };
    auto unite = [&](const std::string& a, const std::string& b) {
        auto ia = idx.find(a), ib = idx.find(b);
        if (ia == idx.end() || ib == idx.end()) return;
        comp[find(ia->second)] = find(ib->second);
    };
    for (const auto& l : model.lines)
        if (l.status) unite(l.from_bus, l.to_bus);
    for (const auto& t : model.transformers) unite(t.from_bus, t.to_bus);
    std::vector<int> out(comp.size());
    for (size_t i = 0; i < comp.size(); ++i) out[i] = find(static_cast<int>(i));
    return out;
}

} // namespace gridest::oracles
