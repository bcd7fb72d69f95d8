#pragma once

#include <Eigen/Dense>
#include <map>
#include <string>
#include <vector>

#include "redkit/util.hpp"

namespace redkit {

/// A named trainable array with its gradient accumulator.
struct Parameter {
    Eigen::MatrixXd value;
    Eigen::MatrixXd grad;

    Parameter() = default;
    explicit Parameter(Eigen::MatrixXd v) : value(std::move(v)), grad(Eigen::MatrixXd::Zero(value.rows(), value.cols())) {}
    void zero_grad() { grad.setZero(value.rows(), value.cols()); }
};

using ParameterRefs = std::vector<std::pair<std::string, Parameter*>>;

json matrix_to_json(const Eigen::MatrixXd& m);
Eigen::MatrixXd matrix_from_json(const json& j);

/// Adam with bias correction; state is keyed by parameter name.
class Adam {
public:
    explicit Adam(double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
        : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {}
    void step(const ParameterRefs& params);
    long steps() const { return t_; }

private:
    double lr_, beta1_, beta2_, eps_;
    long t_ = 0;
    std::map<std::string, std::pair<Eigen::MatrixXd, Eigen::MatrixXd>> moments_;
};

} // namespace redkit
