#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace tkgr {

struct ShapeMismatch : std::runtime_error {
  explicit ShapeMismatch(const std::string& what) : std::runtime_error(what) {}
};

/// Dense row-major matrix of doubles. Vectors are 1xN rows, scalars 1x1.
class Tensor {
 public:
  Tensor() = default;
  Tensor(int rows, int cols)
      : rows_(rows), cols_(cols), data_(static_cast<size_t>(rows) * cols, 0.0) {
    if (rows < 0 || cols < 0) throw ShapeMismatch("negative tensor dimension");
  }
  Tensor(int rows, int cols, std::vector<double> data)
      : rows_(rows), cols_(cols), data_(std::move(data)) {
    if (data_.size() != static_cast<size_t>(rows) * cols)
      throw ShapeMismatch("tensor data size does not match shape");
  }

  static Tensor scalar(double v) { return Tensor(1, 1, {v}); }

  static Tensor randn(int rows, int cols, std::mt19937& rng, double stddev) {
    Tensor t(rows, cols);
    std::normal_distribution<double> dist(0.0, stddev);
    for (auto& v : t.data_) v = dist(rng);
    return t;
  }

  int rows() const { return rows_; }
  int cols() const { return cols_; }
  size_t size() const { return data_.size(); }

  double& at(int r, int c) { return data_[static_cast<size_t>(r) * cols_ + c]; }
  double at(int r, int c) const { return data_[static_cast<size_t>(r) * cols_ + c]; }
  double& operator[](size_t i) { return data_[i]; }
  double operator[](size_t i) const { return data_[i]; }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }

  bool same_shape(const Tensor& o) const { return rows_ == o.rows_ && cols_ == o.cols_; }

  void fill(double v) { std::fill(data_.begin(), data_.end(), v); }
  void zero() { fill(0.0); }

  bool all_finite() const {
    for (double v : data_)
      if (!std::isfinite(v)) return false;
    return true;
  }

  double item() const {
    if (size() != 1) throw ShapeMismatch("item() on non-scalar tensor");
    return data_[0];
  }

 private:
  int rows_ = 0;
  int cols_ = 0;
  std::vector<double> data_;
};

inline void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (!a.same_shape(b))
    throw ShapeMismatch(std::string(op) + ": shapes " + std::to_string(a.rows()) + "x" +
                        std::to_string(a.cols()) + " vs " + std::to_string(b.rows()) + "x" +
                        std::to_string(b.cols()));
}

// C += A * B, row-major, i-k-j order.
inline void matmul_accum(const Tensor& a, const Tensor& b, Tensor& c) {
  const int n = a.rows(), k = a.cols(), m = b.cols();
  const double* pa = a.data();
  const double* pb = b.data();
  double* pc = c.data();
  for (int i = 0; i < n; ++i) {
    for (int l = 0; l < k; ++l) {
      const double av = pa[static_cast<size_t>(i) * k + l];
      const double* brow = pb + static_cast<size_t>(l) * m;
      double* crow = pc + static_cast<size_t>(i) * m;
      for (int j = 0; j < m; ++j) crow[j] += av * brow[j];
    }
  }
}

// C += A * B^T.
inline void matmul_nt_accum(const Tensor& a, const Tensor& b, Tensor& c) {
  const int n = a.rows(), k = a.cols(), m = b.rows();
  for (int i = 0; i < n; ++i) {
    const double* arow = a.data() + static_cast<size_t>(i) * k;
    double* crow = c.data() + static_cast<size_t>(i) * m;
    for (int j = 0; j < m; ++j) {
      const double* brow = b.data() + static_cast<size_t>(j) * k;
      double acc = 0.0;
      for (int l = 0; l < k; ++l) acc += arow[l] * brow[l];
      crow[j] += acc;
    }
  }
}

// C += A^T * B.
inline void matmul_tn_accum(const Tensor& a, const Tensor& b, Tensor& c) {
  const int n = a.cols(), k = a.rows(), m = b.cols();
  for (int l = 0; l < k; ++l) {
    const double* arow = a.data() + static_cast<size_t>(l) * n;
    const double* brow = b.data() + static_cast<size_t>(l) * m;
    for (int i = 0; i < n; ++i) {
      const double av = arow[i];
      double* crow = c.data() + static_cast<size_t>(i) * m;
      for (int j = 0; j < m; ++j) crow[j] += av * brow[j];
    }
  }
}

}  // namespace tkgr
