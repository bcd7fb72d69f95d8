#include "redkit/optim.hpp"

#include <cmath>

namespace redkit {

json matrix_to_json(const Eigen::MatrixXd& m) {
    std::vector<double> data;
    data.reserve(static_cast<std::size_t>(m.size()));
    for (Eigen::Index r = 0; r < m.rows(); ++r)
        for (Eigen::Index c = 0; c < m.cols(); ++c) data.push_back(m(r, c));
    return {{"rows", m.rows()}, {"cols", m.cols()}, {"data", data}};
}

Eigen::MatrixXd matrix_from_json(const json& j) {
    const auto rows = j.at("rows").get<Eigen::Index>();
    const auto cols = j.at("cols").get<Eigen::Index>();
    const auto data = j.at("data").get<std::vector<double>>();
    if (static_cast<Eigen::Index>(data.size()) != rows * cols) throw ParseError("matrix data does not match its shape");
    Eigen::MatrixXd m(rows, cols);
    for (Eigen::Index r = 0; r < rows; ++r)
        for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = data[static_cast<std::size_t>(r * cols + c)];
    return m;
}

void Adam::step(const ParameterRefs& params) {
    ++t_;
    const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    for (const auto& [name, p] : params) {
        auto [it, fresh] = moments_.try_emplace(name);
        auto& [m, v] = it->second;
        if (fresh) {
            m = Eigen::MatrixXd::Zero(p->value.rows(), p->value.cols());
            v = Eigen::MatrixXd::Zero(p->value.rows(), p->value.cols());
        }
        m = beta1_ * m + (1.0 - beta1_) * p->grad;
        v = beta2_ * v + (1.0 - beta2_) * p->grad.cwiseProduct(p->grad);
        p->value.array() -= lr_ * (m.array() / c1) / ((v.array() / c2).sqrt() + eps_);
    }
}

} // namespace redkit
