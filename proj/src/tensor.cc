#include "seqgen/tensor.h"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <functional>
#include <numeric>
#include <sstream>

#include "seqgen/errors.h"

namespace seqgen {

namespace {

constexpr float kFlushBelow = -80.0f;

[[noreturn]] void throw_dims(const char* op, const Shape& a, const Shape& b) {
  throw DimensionError(std::string(op) + ": incompatible shapes " + shape_str(a) + " and " + shape_str(b));
}

void require_rank(const char* op, const Tensor& x, size_t rank) {
  if (x.rank() != rank) {
    throw DimensionError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " +
                         shape_str(x.shape()));
  }
}

}  // namespace

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ", ";
    os << shape[i];
  }
  os << ']';
  return os.str();
}

size_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), size_t{1}, std::multiplies<>());
}

Tensor::Tensor(Shape shape) : shape_(std::move(shape)), data_(shape_numel(shape_), 0.0f) {}

Tensor::Tensor(Shape shape, std::vector<float> data) : shape_(std::move(shape)), data_(std::move(data)) {
  if (data_.size() != shape_numel(shape_)) {
    throw DimensionError("Tensor: shape " + shape_str(shape_) + " needs " + std::to_string(shape_numel(shape_)) +
                         " elements, got " + std::to_string(data_.size()));
  }
}

size_t Tensor::dim(size_t axis) const {
  if (axis >= shape_.size()) {
    throw IndexError("Tensor::dim: axis " + std::to_string(axis) + " out of range for " + shape_str(shape_));
  }
  return shape_[axis];
}

std::span<float> Tensor::row(size_t i) {
  const size_t rows = dim(0);
  if (i >= rows) throw IndexError("Tensor::row: row " + std::to_string(i) + " of " + std::to_string(rows));
  const size_t stride = rows == 0 ? 0 : data_.size() / rows;
  return std::span<float>(data_).subspan(i * stride, stride);
}

std::span<const float> Tensor::row(size_t i) const {
  const size_t rows = dim(0);
  if (i >= rows) throw IndexError("Tensor::row: row " + std::to_string(i) + " of " + std::to_string(rows));
  const size_t stride = rows == 0 ? 0 : data_.size() / rows;
  return std::span<const float>(data_).subspan(i * stride, stride);
}

size_t Tensor::offset(std::initializer_list<size_t> index) const {
  if (index.size() != shape_.size()) {
    throw IndexError("Tensor::at: index rank " + std::to_string(index.size()) + " for shape " + shape_str(shape_));
  }
  size_t off = 0;
  size_t axis = 0;
  for (size_t i : index) {
    if (i >= shape_[axis]) throw IndexError("Tensor::at: index out of range for " + shape_str(shape_));
    off = off * shape_[axis] + i;
    ++axis;
  }
  return off;
}

float& Tensor::at(std::initializer_list<size_t> index) { return data_[offset(index)]; }
float Tensor::at(std::initializer_list<size_t> index) const { return data_[offset(index)]; }

Tensor Tensor::reshaped(Shape shape) const& {
  return Tensor(std::move(shape), data_);
}

Tensor Tensor::reshaped(Shape shape) && {
  return Tensor(std::move(shape), std::move(data_));
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() < 2 || b.rank() != 2 || a.shape().back() != b.dim(0)) throw_dims("matmul", a.shape(), b.shape());
  const size_t inner = b.dim(0);
  const size_t cols = b.dim(1);
  const size_t rows = inner == 0 ? shape_numel(Shape(a.shape().begin(), a.shape().end() - 1)) : a.numel() / inner;

  Shape out_shape = a.shape();
  out_shape.back() = cols;
  Tensor out(out_shape);

  const float* pa = a.data().data();
  const float* pb = b.data().data();
  float* po = out.data().data();
  for (size_t i = 0; i < rows; ++i) {
    float* orow = po + i * cols;
    const float* arow = pa + i * inner;
    for (size_t k = 0; k < inner; ++k) {
      const float av = arow[k];
      const float* brow = pb + k * cols;
      for (size_t j = 0; j < cols; ++j) orow[j] += av * brow[j];
    }
  }
  return out;
}

Tensor matmul_transposed(const Tensor& a, const Tensor& b) {
  require_rank("matmul_transposed", a, 3);
  require_rank("matmul_transposed", b, 3);
  if (a.dim(0) != b.dim(0) || a.dim(2) != b.dim(2)) throw_dims("matmul_transposed", a.shape(), b.shape());
  const size_t rows = a.dim(0), p = a.dim(1), l = b.dim(1), d = a.dim(2);
  Tensor out({rows, p, l});
  const float* pa = a.data().data();
  const float* pb = b.data().data();
  float* po = out.data().data();
  for (size_t r = 0; r < rows; ++r) {
    for (size_t i = 0; i < p; ++i) {
      const float* q = pa + (r * p + i) * d;
      for (size_t j = 0; j < l; ++j) {
        const float* k = pb + (r * l + j) * d;
        float acc = 0.0f;
        for (size_t x = 0; x < d; ++x) acc += q[x] * k[x];
        po[(r * p + i) * l + j] = acc;
      }
    }
  }
  return out;
}

Tensor batched_matmul(const Tensor& a, const Tensor& b) {
  require_rank("batched_matmul", a, 3);
  require_rank("batched_matmul", b, 3);
  if (a.dim(0) != b.dim(0) || a.dim(2) != b.dim(1)) throw_dims("batched_matmul", a.shape(), b.shape());
  const size_t rows = a.dim(0), p = a.dim(1), l = a.dim(2), d = b.dim(2);
  Tensor out({rows, p, d});
  const float* pa = a.data().data();
  const float* pb = b.data().data();
  float* po = out.data().data();
  for (size_t r = 0; r < rows; ++r) {
    for (size_t i = 0; i < p; ++i) {
      float* orow = po + (r * p + i) * d;
      const float* arow = pa + (r * p + i) * l;
      for (size_t j = 0; j < l; ++j) {
        const float w = arow[j];
        const float* brow = pb + (r * l + j) * d;
        for (size_t x = 0; x < d; ++x) orow[x] += w * brow[x];
      }
    }
  }
  return out;
}

Tensor softmax_rows(const Tensor& x) {
  if (x.rank() == 0 || x.shape().back() == 0) {
    throw DimensionError("softmax_rows: empty last axis in " + shape_str(x.shape()));
  }
  const size_t width = x.shape().back();
  const size_t rows = x.numel() / width;
  Tensor out(x.shape());
  const float* px = x.data().data();
  float* po = out.data().data();
  for (size_t r = 0; r < rows; ++r) {
    const float* in = px + r * width;
    float* o = po + r * width;
    const float mx = *std::max_element(in, in + width);
    float sum = 0.0f;
    for (size_t j = 0; j < width; ++j) {
      const float diff = in[j] - mx;
      o[j] = diff <= kFlushBelow ? 0.0f : std::exp(diff);
      sum += o[j];
    }
    for (size_t j = 0; j < width; ++j) o[j] /= sum;
  }
  return out;
}

Tensor log_softmax_rows(const Tensor& x) {
  if (x.rank() == 0 || x.shape().back() == 0) {
    throw DimensionError("log_softmax_rows: empty last axis in " + shape_str(x.shape()));
  }
  const size_t width = x.shape().back();
  const size_t rows = x.numel() / width;
  Tensor out(x.shape());
  const float* px = x.data().data();
  float* po = out.data().data();
  for (size_t r = 0; r < rows; ++r) {
    const float* in = px + r * width;
    float* o = po + r * width;
    const float mx = *std::max_element(in, in + width);
    float sum = 0.0f;
    for (size_t j = 0; j < width; ++j) {
      const float diff = in[j] - mx;
      if (diff > kFlushBelow) sum += std::exp(diff);
    }
    const float log_sum = std::log(sum);
    for (size_t j = 0; j < width; ++j) {
      o[j] = in[j] == kBannedScore ? kBannedScore : in[j] - mx - log_sum;
    }
  }
  return out;
}

Tensor concat_time(const Tensor& a, const Tensor& b) {
  require_rank("concat_time", a, 3);
  require_rank("concat_time", b, 3);
  if (a.dim(0) != b.dim(0) || a.dim(2) != b.dim(2)) throw_dims("concat_time", a.shape(), b.shape());
  const size_t rows = a.dim(0), t1 = a.dim(1), t2 = b.dim(1), d = a.dim(2);
  Tensor out({rows, t1 + t2, d});
  auto src_a = a.data();
  auto src_b = b.data();
  auto dst = out.data();
  for (size_t r = 0; r < rows; ++r) {
    std::copy_n(src_a.begin() + r * t1 * d, t1 * d, dst.begin() + r * (t1 + t2) * d);
    std::copy_n(src_b.begin() + r * t2 * d, t2 * d, dst.begin() + (r * (t1 + t2) + t1) * d);
  }
  return out;
}

Tensor concat_last(const Tensor& a, const Tensor& b) {
  if (a.rank() == 0 || a.rank() != b.rank() ||
      !std::equal(a.shape().begin(), a.shape().end() - 1, b.shape().begin())) {
    throw_dims("concat_last", a.shape(), b.shape());
  }
  const size_t wa = a.shape().back(), wb = b.shape().back();
  const size_t rows = shape_numel(Shape(a.shape().begin(), a.shape().end() - 1));
  Shape out_shape = a.shape();
  out_shape.back() = wa + wb;
  Tensor out(out_shape);
  auto dst = out.data();
  for (size_t r = 0; r < rows; ++r) {
    std::copy_n(a.data().begin() + r * wa, wa, dst.begin() + r * (wa + wb));
    std::copy_n(b.data().begin() + r * wb, wb, dst.begin() + r * (wa + wb) + wa);
  }
  return out;
}

std::pair<Tensor, Tensor> split_last(const Tensor& x, size_t at) {
  if (x.rank() == 0 || at > x.shape().back()) {
    throw DimensionError("split_last: split point " + std::to_string(at) + " outside " + shape_str(x.shape()));
  }
  const size_t width = x.shape().back();
  const size_t rows = shape_numel(Shape(x.shape().begin(), x.shape().end() - 1));
  Shape left_shape = x.shape(), right_shape = x.shape();
  left_shape.back() = at;
  right_shape.back() = width - at;
  Tensor left(left_shape), right(right_shape);
  for (size_t r = 0; r < rows; ++r) {
    auto src = x.data().begin() + r * width;
    std::copy_n(src, at, left.data().begin() + r * at);
    std::copy_n(src + at, width - at, right.data().begin() + r * (width - at));
  }
  return {std::move(left), std::move(right)};
}

Tensor gather_rows(const Tensor& x, std::span<const size_t> idx) {
  if (x.rank() == 0) throw DimensionError("gather_rows: scalar input");
  const size_t rows = x.dim(0);
  const size_t stride = rows == 0 ? 0 : x.numel() / rows;
  Shape out_shape = x.shape();
  out_shape[0] = idx.size();
  Tensor out(out_shape);
  for (size_t i = 0; i < idx.size(); ++i) {
    if (idx[i] >= rows) {
      throw IndexError("gather_rows: index " + std::to_string(idx[i]) + " out of range for " +
                       std::to_string(rows) + " rows");
    }
    std::copy_n(x.data().begin() + idx[i] * stride, stride, out.data().begin() + i * stride);
  }
  return out;
}

Tensor beam_broadcast_qk(const Tensor& q, const Tensor& k_shared) {
  require_rank("beam_broadcast_qk", q, 4);
  require_rank("beam_broadcast_qk", k_shared, 4);
  if (q.dim(0) != k_shared.dim(0) || q.dim(2) != 1 || k_shared.dim(1) != 1 || q.dim(3) != k_shared.dim(3)) {
    throw_dims("beam_broadcast_qk", q.shape(), k_shared.shape());
  }
  const size_t batch = q.dim(0), beams = q.dim(1), n = k_shared.dim(2), d = q.dim(3);
  Tensor out({batch, beams, 1, n});
  const float* pq = q.data().data();
  const float* pk = k_shared.data().data();
  float* po = out.data().data();
  for (size_t b = 0; b < batch; ++b) {
    const float* keys = pk + b * n * d;
    for (size_t m = 0; m < beams; ++m) {
      const float* query = pq + (b * beams + m) * d;
      float* o = po + (b * beams + m) * n;
      for (size_t j = 0; j < n; ++j) {
        const float* key = keys + j * d;
        float acc = 0.0f;
        for (size_t x = 0; x < d; ++x) acc += query[x] * key[x];
        o[j] = acc;
      }
    }
  }
  return out;
}

Tensor beam_broadcast_pv(const Tensor& p, const Tensor& v_shared) {
  require_rank("beam_broadcast_pv", p, 4);
  require_rank("beam_broadcast_pv", v_shared, 4);
  if (p.dim(0) != v_shared.dim(0) || p.dim(2) != 1 || v_shared.dim(1) != 1 || p.dim(3) != v_shared.dim(2)) {
    throw_dims("beam_broadcast_pv", p.shape(), v_shared.shape());
  }
  const size_t batch = p.dim(0), beams = p.dim(1), n = p.dim(3), d = v_shared.dim(3);
  Tensor out({batch, beams, 1, d});
  const float* pp = p.data().data();
  const float* pv = v_shared.data().data();
  float* po = out.data().data();
  for (size_t b = 0; b < batch; ++b) {
    const float* values = pv + b * n * d;
    for (size_t m = 0; m < beams; ++m) {
      const float* w = pp + (b * beams + m) * n;
      float* o = po + (b * beams + m) * d;
      for (size_t j = 0; j < n; ++j) {
        const float* value = values + j * d;
        for (size_t x = 0; x < d; ++x) o[x] += w[j] * value[x];
      }
    }
  }
  return out;
}

Tensor add(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) throw_dims("add", a.shape(), b.shape());
  Tensor out(a.shape());
  std::transform(a.data().begin(), a.data().end(), b.data().begin(), out.data().begin(), std::plus<>());
  return out;
}

Tensor scale(const Tensor& x, float factor) {
  Tensor out(x.shape());
  std::transform(x.data().begin(), x.data().end(), out.data().begin(), [factor](float v) { return v * factor; });
  return out;
}

Tensor relu(const Tensor& x) {
  Tensor out(x.shape());
  std::transform(x.data().begin(), x.data().end(), out.data().begin(), [](float v) { return v > 0.0f ? v : 0.0f; });
  return out;
}

uint64_t content_hash(const Tensor& x) {
  uint64_t h = 1469598103934665603ull;
  auto mix = [&h](const void* bytes, size_t n) {
    const auto* p = static_cast<const unsigned char*>(bytes);
    for (size_t i = 0; i < n; ++i) {
      h ^= p[i];
      h *= 1099511628211ull;
    }
  };
  for (size_t e : x.shape()) mix(&e, sizeof(e));
  mix(x.data().data(), x.numel() * sizeof(float));
  return h;
}

}  // namespace seqgen
