#pragma once

// Internal measurement-function machinery. Every measurement kind compiles
// to one of three closed forms over the complex node states z (rotated
// frame, U = E z):
//   MOD        h = |sum_m d_m z_m|            (V_MAG, I_MAG)
//   ANG        h = arg(z_n)                   (V_ANGLE_REL)
//   BILIN_*    h = Re/Im(sum c z_n conj(z_m)) (P/Q injections and flows)
// which gives uniform analytic gradients, Hessians and parameter
// sensitivities (through the admittance stamps).

#include <map>
#include <vector>

#include "gridest/estimator.hpp"

namespace gridest::est::detail {

struct LinTerm {
    int node;
    Complex coef;
};

struct BilTerm {
    int n;
    int m;
    Complex coef;
};

enum class Form { MOD, ANG, BILIN_RE, BILIN_IM };

/// Derivative of the term coefficients w.r.t. one parameter variable.
struct ParamTerms {
    int param;
    std::vector<LinTerm> dlin;
    std::vector<BilTerm> dbil;
};

struct CompiledMeas {
    Form form = Form::MOD;
    double si_scale = 1.0;  ///< canonical unit per pu
    std::vector<LinTerm> lin;
    std::vector<BilTerm> bil;
    std::vector<ParamTerms> sens;
};

struct NodeGrad {
    int node;
    double da;
    double db;
};

struct HessEntry {
    int node_i;
    int comp_i;  ///< 0 = re, 1 = im
    int node_j;
    int comp_j;
    double v;
};

double eval_value(const CompiledMeas& cm, const Eigen::VectorXcd& z);
void eval_gradient(const CompiledMeas& cm, const Eigen::VectorXcd& z, std::vector<NodeGrad>& out);
/// Appends factor * d2h entries; both triangles are emitted.
void eval_hessian(const CompiledMeas& cm, const Eigen::VectorXcd& z, double factor,
                  std::vector<HessEntry>& out);
double eval_param_deriv(const CompiledMeas& cm, const ParamTerms& pt, const Eigen::VectorXcd& z);

/// Compiles measurement records against a model with the current parameter
/// values substituted.
class Compiler {
public:
    Compiler(const NetworkModel& model_current, const NodeMap& nodes,
             const std::array<Complex, 3>& ref_voltage,
             const std::vector<ParameterVariable>& params, const std::vector<double>& values);

    CompiledMeas compile(const Measurement& rec) const;
    const Eigen::VectorXcd& rotation() const { return rot_; }

private:
    const NetworkModel& model_;
    const NodeMap& nodes_;
    std::vector<net::ElementStamp> stamps_;
    std::map<std::string, const net::ElementStamp*> stamp_of_;
    std::vector<std::vector<std::pair<const net::ElementStamp*, int>>> incident_;
    std::map<std::string, std::pair<int, double>> scale_param_of_;  // line id -> (param, value)
    std::map<std::string, int> tap_param_of_;                      // transformer id -> param
    Eigen::VectorXcd rot_;
    double p_base_kw_;

    void add_injection_terms(CompiledMeas& cm, int node) const;
    void add_flow_terms(CompiledMeas& cm, const net::ElementStamp& st, int local_row) const;
};

} // namespace gridest::est::detail
