#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <vector>

namespace maskmatch {

/// Row-major dynamic matrix; rows are tokens, columns are features.
template <class T>
using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <class T>
using ColVec = Eigen::Matrix<T, Eigen::Dynamic, 1>;

/// Class probabilities; nonnegative and summing to one.
using ProbVector = std::vector<double>;

/// Row-wise numerically stable softmax, in place.
template <class T>
void softmax_rows(Mat<T>& m) {
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    const T top = m.row(r).maxCoeff();
    m.row(r) = (m.row(r).array() - top).exp();
    m.row(r) /= m.row(r).sum();
  }
}

template <class T>
bool all_finite(const Mat<T>& m) {
  return m.allFinite();
}

/// Index of the largest entry; ties go to the lowest index.
template <class Range>
std::size_t argmax(const Range& values) {
  std::size_t best = 0;
  std::size_t i = 0;
  for (auto v : values) {
    if (v > values[best]) best = i;
    ++i;
  }
  return best;
}

inline std::vector<double> one_hot(std::size_t index, std::size_t num_classes) {
  std::vector<double> v(num_classes, 0.0);
  v.at(index) = 1.0;
  return v;
}

}  // namespace maskmatch
