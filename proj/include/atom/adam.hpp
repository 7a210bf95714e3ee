#pragma once

#include <cmath>

#include <Eigen/Dense>

namespace atom {

struct AdamSettings {
  double learning_rate = 0.01;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double weight_decay = 0.0;  // L2 coefficient folded into the gradient
};

/// Adam on a flat parameter vector. Moment buffers are sized on the first step.
class Adam {
 public:
  explicit Adam(AdamSettings settings = {}) : settings_(settings) {}

  void step(Eigen::VectorXd& params, const Eigen::VectorXd& grad) {
    if (first_.size() != params.size()) {
      first_ = Eigen::VectorXd::Zero(params.size());
      second_ = Eigen::VectorXd::Zero(params.size());
      t_ = 0;
    }
    ++t_;
    Eigen::VectorXd g = grad;
    if (settings_.weight_decay != 0.0) g += settings_.weight_decay * params;
    first_ = settings_.beta1 * first_ + (1.0 - settings_.beta1) * g;
    second_ = settings_.beta2 * second_ + (1.0 - settings_.beta2) * g.cwiseProduct(g);
    const double bias1 = 1.0 - std::pow(settings_.beta1, static_cast<double>(t_));
    const double bias2 = 1.0 - std::pow(settings_.beta2, static_cast<double>(t_));
    params.array() -= settings_.learning_rate * (first_.array() / bias1) /
                      ((second_.array() / bias2).sqrt() + settings_.epsilon);
  }

  long steps() const noexcept { return t_; }

 private:
  AdamSettings settings_;
  Eigen::VectorXd first_;
  Eigen::VectorXd second_;
  long t_ = 0;
};

}  // namespace atom
