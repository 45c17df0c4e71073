#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <vector>

#include "permsyn/errors.hpp"

namespace permsyn {

// Dense real-valued table over a cartesian product of small discrete domains.
// Cells are addressed in row-major mixed-radix order: the LAST axis varies
// fastest. All marginal/NPM/MRF machinery is built on this one container.
class Table {
 public:
  Table() = default;
  explicit Table(std::vector<int> dims, double fill = 0.0) : dims_(std::move(dims)) {
    std::int64_t n = 1;
    for (int d : dims_) {
      if (d <= 0) throw DomainError("Table axis with non-positive domain");
      n *= d;
    }
    v_.assign(static_cast<std::size_t>(n), fill);
  }

  const std::vector<int>& dims() const { return dims_; }
  int rank() const { return static_cast<int>(dims_.size()); }
  std::size_t size() const { return v_.size(); }
  double* data() { return v_.data(); }
  const double* data() const { return v_.data(); }
  double& operator[](std::size_t i) { return v_[i]; }
  double operator[](std::size_t i) const { return v_[i]; }

  std::size_t flat_index(const std::vector<int>& idx) const {
    std::size_t f = 0;
    for (std::size_t a = 0; a < dims_.size(); ++a) f = f * dims_[a] + idx[a];
    return f;
  }
  double& at(const std::vector<int>& idx) { return v_[flat_index(idx)]; }
  double at(const std::vector<int>& idx) const { return v_[flat_index(idx)]; }

  void unflatten(std::size_t f, std::vector<int>& idx) const {
    idx.resize(dims_.size());
    for (std::size_t a = dims_.size(); a-- > 0;) {
      idx[a] = static_cast<int>(f % dims_[a]);
      f /= dims_[a];
    }
  }

  double total() const { return std::accumulate(v_.begin(), v_.end(), 0.0); }

  // Sums out every axis not listed in `keep`; result axes follow `keep` order.
  // keep may reorder axes, so this doubles as a transpose.
  Table rollup(const std::vector<int>& keep) const {
    for (int a : keep)
      if (a < 0 || a >= rank()) throw SubsetError("rollup: axis out of range");
    std::vector<int> out_dims;
    out_dims.reserve(keep.size());
    for (int a : keep) out_dims.push_back(dims_[a]);
    Table out(out_dims);
    std::vector<int> idx;
    std::vector<int> oidx(keep.size());
    for (std::size_t f = 0; f < v_.size(); ++f) {
      unflatten(f, idx);
      for (std::size_t j = 0; j < keep.size(); ++j) oidx[j] = idx[keep[j]];
      out.at(oidx) += v_[f];
    }
    return out;
  }

  Table permute_axes(const std::vector<int>& perm) const { return rollup(perm); }

  Table& operator+=(const Table& o) {
    if (o.dims_ != dims_) throw DomainError("Table += shape mismatch");
    for (std::size_t i = 0; i < v_.size(); ++i) v_[i] += o.v_[i];
    return *this;
  }
  Table& scale(double c) {
    for (double& x : v_) x *= c;
    return *this;
  }

  double l1_diff(const Table& o) const {
    if (o.dims_ != dims_) throw DomainError("Table l1_diff shape mismatch");
    double d = 0;
    for (std::size_t i = 0; i < v_.size(); ++i) d += std::fabs(v_[i] - o.v_[i]);
    return d;
  }
  double l2_diff_sq(const Table& o) const {
    if (o.dims_ != dims_) throw DomainError("Table l2_diff shape mismatch");
    double d = 0;
    for (std::size_t i = 0; i < v_.size(); ++i) {
      double t = v_[i] - o.v_[i];
      d += t * t;
    }
    return d;
  }

  void clip_negative() {
    for (double& x : v_)
      if (x < 0) x = 0;
  }

  // Rescales so the total equals `target`; an all-zero table becomes uniform.
  void rescale_total(double target) {
    double t = total();
    if (t > 0) {
      scale(target / t);
    } else {
      double u = target / static_cast<double>(v_.size());
      std::fill(v_.begin(), v_.end(), u);
    }
  }

  static Table outer(const Table& a, const Table& b) {
    std::vector<int> dims = a.dims_;
    dims.insert(dims.end(), b.dims_.begin(), b.dims_.end());
    Table out(dims);
    std::size_t nb = b.size();
    for (std::size_t i = 0; i < a.size(); ++i)
      for (std::size_t j = 0; j < nb; ++j) out.v_[i * nb + j] = a.v_[i] * b.v_[j];
    return out;
  }

 private:
  std::vector<int> dims_;
  std::vector<double> v_;
};

inline std::int64_t cell_count(const std::vector<int>& dims) {
  std::int64_t n = 1;
  for (int d : dims) n *= d;
  return n;
}

}  // namespace permsyn
