#pragma once

#include <cmath>
#include <cstddef>
#include <vector>

#include <Eigen/Dense>

namespace pgd {

// Correctly rounded floating-point summation (Shewchuk's non-overlapping
// partials, with the final round-half-even correction used by Python's
// math.fsum). The result is independent of the order in which terms are
// added, so gradient reductions give identical bits no matter how a batch is
// partitioned. Inputs must be finite.
class ExactSum {
 public:
  void add(double x) {
    std::size_t i = 0;
    for (double y : partials_) {
      if (std::fabs(x) < std::fabs(y)) std::swap(x, y);
      const double hi = x + y;
      const double lo = y - (hi - x);
      if (lo != 0.0) partials_[i++] = lo;
      x = hi;
    }
    partials_.resize(i);
    partials_.push_back(x);
  }

  double value() const {
    std::size_t n = partials_.size();
    if (n == 0) return 0.0;
    double hi = partials_[--n];
    double lo = 0.0;
    while (n > 0) {
      const double x = hi;
      const double y = partials_[--n];
      hi = x + y;
      const double yr = hi - x;
      lo = y - yr;
      if (lo != 0.0) break;
    }
    if (n > 0 && ((lo < 0.0 && partials_[n - 1] < 0.0) ||
                  (lo > 0.0 && partials_[n - 1] > 0.0))) {
      const double y = lo * 2.0;
      const double x = hi + y;
      const double yr = x - hi;
      if (y == yr) hi = x;
    }
    return hi;
  }

  void clear() { partials_.clear(); }

 private:
  std::vector<double> partials_;
};

// Coordinate-wise ExactSum over vectors of a fixed dimension.
class ExactVecSum {
 public:
  explicit ExactVecSum(Eigen::Index dim) : sums_(static_cast<std::size_t>(dim)) {}

  Eigen::Index dim() const { return static_cast<Eigen::Index>(sums_.size()); }

  // Adds weight * v. The product is rounded once per coordinate before
  // entering the exact accumulator.
  void add(const Eigen::VectorXd& v, double weight = 1.0) {
    for (std::size_t j = 0; j < sums_.size(); ++j)
      sums_[j].add(weight * v[static_cast<Eigen::Index>(j)]);
  }

  Eigen::VectorXd value() const {
    Eigen::VectorXd out(dim());
    for (std::size_t j = 0; j < sums_.size(); ++j)
      out[static_cast<Eigen::Index>(j)] = sums_[j].value();
    return out;
  }

 private:
  std::vector<ExactSum> sums_;
};

}  // namespace pgd
