#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "hmt/counters.hpp"

namespace hmt {

using Shape = std::vector<std::size_t>;

inline std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ", ";
    os << shape[i];
  }
  os << "]";
  return os.str();
}

inline std::size_t shape_volume(const Shape& shape) {
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  return n;
}

inline void validate_shape(const Shape& shape) {
  if (shape.empty()) throw std::invalid_argument("tensor shape must have rank >= 1");
  for (std::size_t d : shape) {
    if (d == 0) throw std::invalid_argument("tensor dimensions must be >= 1, got " + shape_string(shape));
  }
}

/// Dense row-major tensor of 64-bit floats. Shapes are validated eagerly and
/// the buffer is always contiguous; product(shape) == data().size().
class NDTensor {
 public:
  NDTensor() = default;

  explicit NDTensor(Shape shape) : shape_(std::move(shape)) {
    validate_shape(shape_);
    data_.assign(shape_volume(shape_), 0.0);
  }

  NDTensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
    validate_shape(shape_);
    if (shape_volume(shape_) != data_.size()) {
      throw std::invalid_argument("tensor data size " + std::to_string(data_.size()) +
                                  " does not match shape " + shape_string(shape_));
    }
  }

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  std::size_t dim(std::size_t axis) const {
    if (axis >= shape_.size()) {
      throw std::invalid_argument("axis " + std::to_string(axis) + " out of range for shape " + shape_string(shape_));
    }
    return shape_[axis];
  }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }
  std::vector<double>& buffer() { return data_; }
  const std::vector<double>& buffer() const { return data_; }

  double& operator[](std::size_t flat) { return data_[flat]; }
  double operator[](std::size_t flat) const { return data_[flat]; }

  template <typename... Ix>
  double& operator()(Ix... ix) {
    return data_[flat_index({static_cast<std::size_t>(ix)...})];
  }
  template <typename... Ix>
  double operator()(Ix... ix) const {
    return data_[flat_index({static_cast<std::size_t>(ix)...})];
  }

  std::size_t flat_index(std::initializer_list<std::size_t> idx) const {
    if (idx.size() != shape_.size()) {
      throw std::invalid_argument("expected " + std::to_string(shape_.size()) + " indices, got " +
                                  std::to_string(idx.size()));
    }
    std::size_t flat = 0;
    std::size_t axis = 0;
    for (std::size_t i : idx) {
      if (i >= shape_[axis]) {
        throw std::out_of_range("index " + std::to_string(i) + " out of range for axis " + std::to_string(axis) +
                                " of shape " + shape_string(shape_));
      }
      flat = flat * shape_[axis] + i;
      ++axis;
    }
    return flat;
  }

 private:
  Shape shape_;
  std::vector<double> data_;
};

/// Tensor of non-negative integer indices; range checks happen where the
/// indices are consumed (gather, sparse reads).
class IndexTensor {
 public:
  IndexTensor() = default;

  explicit IndexTensor(Shape shape) : shape_(std::move(shape)) {
    validate_shape(shape_);
    data_.assign(shape_volume(shape_), 0);
  }

  IndexTensor(Shape shape, std::vector<std::int64_t> data) : shape_(std::move(shape)), data_(std::move(data)) {
    validate_shape(shape_);
    if (shape_volume(shape_) != data_.size()) {
      throw std::invalid_argument("index data size " + std::to_string(data_.size()) +
                                  " does not match shape " + shape_string(shape_));
    }
  }

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t size() const { return data_.size(); }

  std::size_t dim(std::size_t axis) const {
    if (axis >= shape_.size()) {
      throw std::invalid_argument("axis " + std::to_string(axis) + " out of range for shape " + shape_string(shape_));
    }
    return shape_[axis];
  }

  std::int64_t* data() { return data_.data(); }
  const std::int64_t* data() const { return data_.data(); }
  std::vector<std::int64_t>& buffer() { return data_; }
  const std::vector<std::int64_t>& buffer() const { return data_; }

  std::int64_t& operator[](std::size_t flat) { return data_[flat]; }
  std::int64_t operator[](std::size_t flat) const { return data_[flat]; }

 private:
  Shape shape_;
  std::vector<std::int64_t> data_;
};

/// Reinterprets the buffer under a new shape of equal volume. Takes the
/// tensor by value so rvalues move through without copying.
inline NDTensor reshape(NDTensor t, Shape new_shape) {
  validate_shape(new_shape);
  if (shape_volume(new_shape) != t.size()) {
    throw std::invalid_argument("cannot reshape " + shape_string(t.shape()) + " to " + shape_string(new_shape));
  }
  std::vector<double> data = std::move(t.buffer());
  return NDTensor(std::move(new_shape), std::move(data));
}

inline NDTensor transpose2d(const NDTensor& t) {
  if (t.rank() != 2) throw std::invalid_argument("transpose2d expects rank 2, got " + shape_string(t.shape()));
  const std::size_t m = t.dim(0), n = t.dim(1);
  NDTensor out({n, m});
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[j * m + i] = t[i * n + j];
  return out;
}

/// c[i,j] = sum_l a[i,l] * b[l,j]; counts m*p*n multiply-adds.
inline NDTensor matmul(const NDTensor& a, const NDTensor& b) {
  if (a.rank() != 2 || b.rank() != 2) {
    throw std::invalid_argument("matmul expects rank-2 operands, got " + shape_string(a.shape()) + " x " +
                                shape_string(b.shape()));
  }
  if (a.dim(1) != b.dim(0)) {
    throw std::invalid_argument("matmul: inner dimensions disagree: " + shape_string(a.shape()) + " x " +
                                shape_string(b.shape()));
  }
  const std::size_t m = a.dim(0), p = a.dim(1), n = b.dim(1);
  NDTensor c({m, n});
  const double* pa = a.data();
  const double* pb = b.data();
  double* pc = c.data();
  // Both orders accumulate over l ascending, so they are bit-identical; the
  // l-outer order streams a large b exactly once when c stays cache-resident.
  if (m <= 64 && m * n * sizeof(double) <= (std::size_t{8} << 20)) {
    for (std::size_t l = 0; l < p; ++l) {
      const double* brow = pb + l * n;
      for (std::size_t i = 0; i < m; ++i) {
        const double ail = pa[i * p + l];
        double* crow = pc + i * n;
        for (std::size_t j = 0; j < n; ++j) crow[j] += ail * brow[j];
      }
    }
  } else {
    for (std::size_t i = 0; i < m; ++i) {
      for (std::size_t l = 0; l < p; ++l) {
        const double ail = pa[i * p + l];
        const double* brow = pb + l * n;
        double* crow = pc + i * n;
        for (std::size_t j = 0; j < n; ++j) crow[j] += ail * brow[j];
      }
    }
  }
  count_mul_adds(static_cast<std::uint64_t>(m) * p * n);
  return c;
}

namespace detail {

struct AxisSplit {
  std::size_t outer;  // product of dims before axis
  std::size_t n;      // dim at axis
  std::size_t inner;  // product of dims after axis
};

inline AxisSplit split_axis(const Shape& shape, std::size_t axis) {
  if (axis >= shape.size()) {
    throw std::invalid_argument("axis " + std::to_string(axis) + " out of range for shape " + shape_string(shape));
  }
  AxisSplit s{1, shape[axis], 1};
  for (std::size_t i = 0; i < axis; ++i) s.outer *= shape[i];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) s.inner *= shape[i];
  return s;
}

}  // namespace detail

/// Numerically stabilized softmax along one axis; every output slice along
/// that axis sums to 1.
inline NDTensor softmax_axis(const NDTensor& t, std::size_t axis) {
  const auto s = detail::split_axis(t.shape(), axis);
  NDTensor out(t.shape());
  const double* in = t.data();
  double* o = out.data();
  if (s.inner == 1) {
    for (std::size_t a = 0; a < s.outer; ++a) {
      const std::size_t base = a * s.n;
      double mx = in[base];
      for (std::size_t j = 1; j < s.n; ++j) mx = std::max(mx, in[base + j]);
      double sum = 0.0;
      for (std::size_t j = 0; j < s.n; ++j) {
        const double e = std::exp(in[base + j] - mx);
        o[base + j] = e;
        sum += e;
      }
      for (std::size_t j = 0; j < s.n; ++j) o[base + j] /= sum;
    }
    return out;
  }
  // Strided axis: row-major passes with per-slice accumulators. The
  // per-element reduction order matches the contiguous path exactly.
  std::vector<double> mx(s.inner), sum(s.inner);
  for (std::size_t a = 0; a < s.outer; ++a) {
    const std::size_t base = a * s.n * s.inner;
    std::copy(in + base, in + base + s.inner, mx.begin());
    for (std::size_t j = 1; j < s.n; ++j) {
      const double* row = in + base + j * s.inner;
      for (std::size_t b = 0; b < s.inner; ++b) mx[b] = std::max(mx[b], row[b]);
    }
    std::fill(sum.begin(), sum.end(), 0.0);
    for (std::size_t j = 0; j < s.n; ++j) {
      const double* row = in + base + j * s.inner;
      double* orow = o + base + j * s.inner;
      for (std::size_t b = 0; b < s.inner; ++b) {
        orow[b] = std::exp(row[b] - mx[b]);
        sum[b] += orow[b];
      }
    }
    for (std::size_t j = 0; j < s.n; ++j) {
      double* orow = o + base + j * s.inner;
      for (std::size_t b = 0; b < s.inner; ++b) orow[b] /= sum[b];
    }
  }
  return out;
}

/// Divides each slice along the axis by its sum. Entries must be
/// non-negative; an all-zero slice maps to the uniform distribution so the
/// result stays stochastic even when upstream kernels zero out a whole slice.
inline NDTensor l1_normalize_axis(const NDTensor& t, std::size_t axis) {
  const auto s = detail::split_axis(t.shape(), axis);
  const double* in = t.data();
  for (std::size_t i = 0; i < t.size(); ++i) {
    if (in[i] < 0.0) {
      throw std::invalid_argument("l1_normalize_axis: negative entry " + std::to_string(in[i]) + " at position " +
                                  std::to_string(i));
    }
  }
  NDTensor out(t.shape());
  double* o = out.data();
  const double uniform = 1.0 / static_cast<double>(s.n);
  std::vector<double> sum(s.inner);
  for (std::size_t a = 0; a < s.outer; ++a) {
    const std::size_t base = a * s.n * s.inner;
    std::fill(sum.begin(), sum.end(), 0.0);
    for (std::size_t j = 0; j < s.n; ++j) {
      const double* row = in + base + j * s.inner;
      for (std::size_t b = 0; b < s.inner; ++b) sum[b] += row[b];
    }
    for (std::size_t j = 0; j < s.n; ++j) {
      const double* row = in + base + j * s.inner;
      double* orow = o + base + j * s.inner;
      for (std::size_t b = 0; b < s.inner; ++b) orow[b] = sum[b] == 0.0 ? uniform : row[b] / sum[b];
    }
  }
  return out;
}

/// k largest entries along the axis, in descending value order; ties resolve
/// to the smaller index so results are deterministic.
inline std::pair<NDTensor, IndexTensor> topk_axis(const NDTensor& t, std::size_t axis, std::size_t k) {
  const auto s = detail::split_axis(t.shape(), axis);
  if (k < 1 || k > s.n) {
    throw std::invalid_argument("topk_axis: k=" + std::to_string(k) + " out of range for axis size " +
                                std::to_string(s.n));
  }
  Shape out_shape = t.shape();
  out_shape[axis] = k;
  NDTensor values(out_shape);
  IndexTensor indices(out_shape);

  const double* in = t.data();
  std::vector<std::size_t> order(s.n);
  for (std::size_t a = 0; a < s.outer; ++a) {
    for (std::size_t b = 0; b < s.inner; ++b) {
      const std::size_t base = a * s.n * s.inner + b;
      std::iota(order.begin(), order.end(), std::size_t{0});
      std::partial_sort(order.begin(), order.begin() + k, order.end(), [&](std::size_t x, std::size_t y) {
        const double vx = in[base + x * s.inner], vy = in[base + y * s.inner];
        if (vx != vy) return vx > vy;
        return x < y;
      });
      const std::size_t obase = a * k * s.inner + b;
      for (std::size_t j = 0; j < k; ++j) {
        values[obase + j * s.inner] = in[base + order[j] * s.inner];
        indices[obase + j * s.inner] = static_cast<std::int64_t>(order[j]);
      }
    }
  }
  return {std::move(values), std::move(indices)};
}

/// output[..., j, ...] = t[..., idx[j], ...] along the axis; idx is a flat
/// rank-1 index list. Counts one gather per copied element.
inline NDTensor gather_axis(const NDTensor& t, std::size_t axis, const IndexTensor& idx) {
  if (idx.rank() != 1) {
    throw std::invalid_argument("gather_axis expects a rank-1 index tensor, got " + shape_string(idx.shape()));
  }
  const auto s = detail::split_axis(t.shape(), axis);
  for (std::size_t j = 0; j < idx.size(); ++j) {
    if (idx[j] < 0 || static_cast<std::size_t>(idx[j]) >= s.n) {
      throw std::out_of_range("gather_axis: index " + std::to_string(idx[j]) + " at position " + std::to_string(j) +
                              " out of range for axis " + std::to_string(axis) + " of size " + std::to_string(s.n));
    }
  }
  Shape out_shape = t.shape();
  out_shape[axis] = idx.size();
  NDTensor out(out_shape);
  const std::size_t m = idx.size();
  const double* in = t.data();
  double* o = out.data();
  for (std::size_t a = 0; a < s.outer; ++a) {
    for (std::size_t j = 0; j < m; ++j) {
      const std::size_t src = (a * s.n + static_cast<std::size_t>(idx[j])) * s.inner;
      const std::size_t dst = (a * m + j) * s.inner;
      for (std::size_t b = 0; b < s.inner; ++b) o[dst + b] = in[src + b];
    }
  }
  count_gathers(static_cast<std::uint64_t>(s.outer) * m * s.inner);
  return out;
}

/// Per-pixel affine map over the channel (last) axis:
/// out[..., o] = sum_i t[..., i] * w[i, o] + b[o].
inline NDTensor linear_project(const NDTensor& t, const NDTensor& w, const NDTensor& b) {
  if (w.rank() != 2) throw std::invalid_argument("linear_project: weights must be rank 2, got " + shape_string(w.shape()));
  const std::size_t c_in = w.dim(0), c_out = w.dim(1);
  if (t.dim(t.rank() - 1) != c_in) {
    throw std::invalid_argument("linear_project: channel dims disagree: input " + shape_string(t.shape()) +
                                " vs weights " + shape_string(w.shape()));
  }
  if (b.rank() != 1 || b.dim(0) != c_out) {
    throw std::invalid_argument("linear_project: bias shape " + shape_string(b.shape()) + " does not match " +
                                std::to_string(c_out) + " output channels");
  }
  const std::size_t pixels = t.size() / c_in;
  NDTensor flat = matmul(reshape(t, {pixels, c_in}), w);
  for (std::size_t p = 0; p < pixels; ++p)
    for (std::size_t o = 0; o < c_out; ++o) flat[p * c_out + o] += b[o];
  Shape out_shape = t.shape();
  out_shape.back() = c_out;
  return reshape(std::move(flat), std::move(out_shape));
}

inline NDTensor elementwise_mul(const NDTensor& a, const NDTensor& b) {
  if (a.shape() != b.shape()) {
    throw std::invalid_argument("elementwise_mul: shape mismatch: " + shape_string(a.shape()) + " vs " +
                                shape_string(b.shape()));
  }
  NDTensor out(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] * b[i];
  return out;
}

/// Concatenates along the channel (last) axis; all leading dims must agree.
inline NDTensor concat_channels(const NDTensor& a, const NDTensor& b) {
  if (a.rank() != b.rank()) {
    throw std::invalid_argument("concat_channels: rank mismatch: " + shape_string(a.shape()) + " vs " +
                                shape_string(b.shape()));
  }
  for (std::size_t i = 0; i + 1 < a.rank(); ++i) {
    if (a.shape()[i] != b.shape()[i]) {
      throw std::invalid_argument("concat_channels: leading dims disagree: " + shape_string(a.shape()) + " vs " +
                                  shape_string(b.shape()));
    }
  }
  const std::size_t ca = a.shape().back(), cb = b.shape().back();
  const std::size_t pixels = a.size() / ca;
  Shape out_shape = a.shape();
  out_shape.back() = ca + cb;
  NDTensor out(out_shape);
  for (std::size_t p = 0; p < pixels; ++p) {
    for (std::size_t i = 0; i < ca; ++i) out[p * (ca + cb) + i] = a[p * ca + i];
    for (std::size_t i = 0; i < cb; ++i) out[p * (ca + cb) + ca + i] = b[p * cb + i];
  }
  return out;
}

}  // namespace hmt
