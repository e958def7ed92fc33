#pragma once

#include <gtest/gtest.h>

#include <random>

#include "pgd/pgd.hpp"

namespace pgd::test {

inline Vec random_vec(Eigen::Index n, Engine& rng, double sd = 1.0) {
  std::normal_distribution<double> normal(0.0, sd);
  Vec v(n);
  for (Eigen::Index i = 0; i < n; ++i) v[i] = normal(rng);
  return v;
}

inline Matrix random_matrix(Eigen::Index r, Eigen::Index c, Engine& rng, double sd = 1.0) {
  std::normal_distribution<double> normal(0.0, sd);
  Matrix m(r, c);
  for (Eigen::Index i = 0; i < r; ++i)
    for (Eigen::Index j = 0; j < c; ++j) m(i, j) = normal(rng);
  return m;
}

// Runs `fn` and checks that it throws pgd::Error of the given kind.
template <class Fn>
void expect_error(ErrorKind kind, Fn&& fn) {
  try {
    fn();
    ADD_FAILURE() << "expected " << kind_name(kind) << ", nothing thrown";
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), kind) << "got " << kind_name(e.kind()) << ": " << e.message();
  }
}

inline bool bit_equal(const Vec& a, const Vec& b) {
  if (a.size() != b.size()) return false;
  for (Eigen::Index i = 0; i < a.size(); ++i)
    if (std::memcmp(&a[i], &b[i], sizeof(double)) != 0) return false;
  return true;
}

inline double cos_sim(const Vec& a, const Vec& b) { return a.dot(b) / (a.norm() * b.norm()); }

}  // namespace pgd::test
