#pragma once

// Dense damped-Newton minimizer of the penalized logistic objective, written
// against plain matrices so it shares nothing with the library solver.

#include <Eigen/Dense>
#include <cmath>
#include <vector>

namespace oracle {

struct LogRegSolution {
  Eigen::VectorXd w;
  double b = 0.0;
  double objective = 0.0;
};

inline double Log1pExp(double z) { return z > 0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z)); }

inline double Objective(const Eigen::MatrixXd& x, const std::vector<int>& y, const Eigen::VectorXd& theta, double c) {
  const Eigen::Index d = x.cols();
  double loss = 0.0;
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    double m = x.row(i).dot(theta.head(d)) + theta(d);
    loss += Log1pExp(y[i] ? -m : m);
  }
  return 0.5 * theta.head(d).squaredNorm() + c * loss;
}

inline LogRegSolution NewtonLogReg(const Eigen::MatrixXd& x, const std::vector<int>& y, double c) {
  const Eigen::Index n = x.rows(), d = x.cols();
  Eigen::MatrixXd xa(n, d + 1);
  xa << x, Eigen::VectorXd::Ones(n);
  Eigen::VectorXd theta = Eigen::VectorXd::Zero(d + 1);
  Eigen::VectorXd reg = Eigen::VectorXd::Ones(d + 1);
  reg(d) = 0.0;
  for (int it = 0; it < 200; ++it) {
    Eigen::VectorXd m = xa * theta;
    Eigen::VectorXd g = reg.cwiseProduct(theta);
    Eigen::VectorXd h_diag(n);
    Eigen::VectorXd r(n);
    for (Eigen::Index i = 0; i < n; ++i) {
      double p = 1.0 / (1.0 + std::exp(-m(i)));
      r(i) = p - y[i];
      h_diag(i) = p * (1.0 - p);
    }
    g += c * xa.transpose() * r;
    if (g.norm() < 1e-13) break;
    Eigen::MatrixXd h = c * xa.transpose() * h_diag.asDiagonal() * xa;
    h.diagonal() += reg;
    h.diagonal().array() += 1e-14;
    Eigen::VectorXd step = h.ldlt().solve(g);
    double f0 = Objective(x, y, theta, c), t = 1.0;
    while (t > 1e-12 && Objective(x, y, theta - t * step, c) > f0 - 1e-4 * t * g.dot(step)) t *= 0.5;
    theta -= t * step;
  }
  return {theta.head(d), theta(d), Objective(x, y, theta, c)};
}

}  // namespace oracle
