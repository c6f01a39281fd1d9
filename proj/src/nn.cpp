// Copyright 2026 The hdisen Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "hdisen/nn.hpp"

#include <cmath>

namespace hdisen {

using Eigen::Index;
using Strided = Eigen::OuterStride<>;

template <typename T>
Conv1d<T>::Conv1d(int in, int out, int kernel, int stride, double init_gain, Rng& rng)
    : in_(in), out_(out), kernel_(kernel), stride_(stride), pad_((kernel - 1) / 2) {
  if (in < 1 || out < 1 || kernel < 1 || stride < 1) {
    throw ConfigError("conv layer dimensions must be positive");
  }
  const double fan_in = static_cast<double>(kernel) * in;
  const double bound = init_gain * std::sqrt(3.0 / fan_in);
  std::uniform_real_distribution<double> dist(-bound, bound);
  weight.value.resize(static_cast<Index>(kernel) * in, out);
  for (Index i = 0; i < weight.value.size(); ++i) weight.value.data()[i] = static_cast<T>(dist(rng));
  bias.value = Matrix<T>::Zero(1, out);
  weight.zero_grad();
  bias.zero_grad();
}

template <typename T>
Index Conv1d<T>::output_length(Index n) const {
  const Index span = n + 2 * pad_ - kernel_;
  return span < 0 ? 0 : span / stride_ + 1;
}

template <typename T>
Matrix<T> Conv1d<T>::forward(const Matrix<T>& x, Cache* cache) const {
  if (x.cols() != in_) {
    throw ConfigError("conv input has " + std::to_string(x.cols()) + " channels, expected " +
                      std::to_string(in_));
  }
  const Index t_out = output_length(x.rows());
  if (t_out < 1) throw ParameterError("sequence too short for convolution");

  Cache local;
  Cache& c = cache ? *cache : local;
  c.in_rows = x.rows();
  c.padded.setZero(x.rows() + 2 * pad_, in_);
  c.padded.middleRows(pad_, x.rows()) = x;

  // Row t of the im2col matrix is the contiguous block of `kernel` padded
  // frames starting at frame t * stride.
  Eigen::Map<const Matrix<T>, 0, Strided> cols(c.padded.data(), t_out,
                                               static_cast<Index>(kernel_) * in_,
                                               Strided(static_cast<Index>(stride_) * in_));
  Matrix<T> y(t_out, out_);
  y.noalias() = cols * weight.value;
  y.rowwise() += bias.value.row(0);
  return y;
}

template <typename T>
Matrix<T> Conv1d<T>::backward(const Matrix<T>& dy, const Cache& c, bool need_input_grad) {
  const Index t_out = dy.rows();
  const Index width = static_cast<Index>(kernel_) * in_;
  const Index step = static_cast<Index>(stride_) * in_;
  Eigen::Map<const Matrix<T>, 0, Strided> cols(c.padded.data(), t_out, width, Strided(step));
  weight.grad.noalias() += cols.transpose() * dy;
  bias.grad.row(0) += dy.colwise().sum();
  if (!need_input_grad) return {};

  const Matrix<T> dcols = dy * weight.value.transpose();
  Matrix<T> dpad = Matrix<T>::Zero(c.padded.rows(), in_);
  for (int j = 0; j < kernel_; ++j) {
    Eigen::Map<Matrix<T>, 0, Strided> dst(dpad.data() + static_cast<Index>(j) * in_, t_out, in_,
                                          Strided(step));
    dst += dcols.middleCols(static_cast<Index>(j) * in_, in_);
  }
  return dpad.middleRows(pad_, c.in_rows);
}

template <typename T>
Sequential<T>::Sequential(const std::vector<LayerSpec>& specs, double leaky_slope, Rng& rng)
    : specs_(specs), slope_(static_cast<T>(leaky_slope)) {
  if (specs.empty()) throw ConfigError("empty layer stack");
  for (std::size_t i = 0; i < specs.size(); ++i) {
    const LayerSpec& s = specs[i];
    if (i > 0 && specs[i - 1].out != s.in) throw ConfigError("layer stack channel mismatch");
    // He-style gain for leaky rectifiers; linear gain for output layers.
    const double gain = s.activation ? std::sqrt(2.0 / (1.0 + leaky_slope * leaky_slope)) : 1.0;
    if (s.upsample) {
      layers_.emplace_back(s.in, s.out * s.stride, 1, 1, gain, rng);
    } else {
      layers_.emplace_back(s.in, s.out, s.kernel, s.stride, gain, rng);
    }
  }
}

template <typename T>
Matrix<T> Sequential<T>::forward(const Matrix<T>& x, Cache* cache) const {
  if (cache) {
    cache->conv.resize(layers_.size());
    cache->outputs.resize(layers_.size());
  }
  Matrix<T> h = x;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    const LayerSpec& s = specs_[i];
    Matrix<T> y = layers_[i].forward(h, cache ? &cache->conv[i] : nullptr);
    if (s.upsample) {
      // (N x stride*out) and (N*stride x out) share the row-major layout.
      Matrix<T> r = Eigen::Map<const Matrix<T>>(y.data(), y.rows() * s.stride, s.out);
      y = std::move(r);
    }
    if (s.activation) {
      y = y.unaryExpr([sl = slope_](T v) { return v > T(0) ? v : sl * v; });
    }
    if (cache) cache->outputs[i] = y;
    h = std::move(y);
  }
  return h;
}

template <typename T>
Matrix<T> Sequential<T>::backward(const Matrix<T>& dy, const Cache& cache, bool need_input_grad) {
  Matrix<T> g = dy;
  for (std::size_t i = layers_.size(); i-- > 0;) {
    const LayerSpec& s = specs_[i];
    if (s.activation) {
      const Matrix<T>& out = cache.outputs[i];
      g = (out.array() > T(0)).select(g.array(), slope_ * g.array()).matrix();
    }
    if (s.upsample) {
      Matrix<T> r = Eigen::Map<const Matrix<T>>(g.data(), g.rows() / s.stride, s.out * s.stride);
      g = std::move(r);
    }
    g = layers_[i].backward(g, cache.conv[i], need_input_grad || i > 0);
  }
  return g;
}

template <typename T>
Index Sequential<T>::output_length(Index n) const {
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    n = specs_[i].upsample ? n * specs_[i].stride : layers_[i].output_length(n);
  }
  return n;
}

template <typename T>
std::size_t Sequential<T>::parameter_count() const {
  std::size_t n = 0;
  for (const auto& l : layers_) n += static_cast<std::size_t>(l.weight.value.size() + l.bias.value.size());
  return n;
}

template <typename T>
void adam_update(Param<T>& p, AdamMoments<T>& mom, const AdamOptions& o, std::int64_t step) {
  if (mom.m.size() != p.value.size()) {
    mom.m.setZero(p.value.rows(), p.value.cols());
    mom.v.setZero(p.value.rows(), p.value.cols());
  }
  const T b1 = static_cast<T>(o.beta1), b2 = static_cast<T>(o.beta2);
  mom.m = b1 * mom.m + (T(1) - b1) * p.grad;
  mom.v = b2 * mom.v + (T(1) - b2) * p.grad.cwiseAbs2();
  const double c1 = 1.0 - std::pow(o.beta1, static_cast<double>(step));
  const double c2 = 1.0 - std::pow(o.beta2, static_cast<double>(step));
  const T step_size = static_cast<T>(o.lr / c1);
  const T inv_c2 = static_cast<T>(1.0 / c2);
  const T eps = static_cast<T>(o.eps);
  p.value.array() -= step_size * mom.m.array() / ((mom.v.array() * inv_c2).sqrt() + eps);
}

template <typename T>
RowVector<T> global_average_pool(const Matrix<T>& frames) {
  if (frames.rows() < 1) throw EmptyInputError("global average pooling over zero frames");
  return frames.colwise().mean();
}

template <typename T>
Matrix<T> tile_rows(const RowVector<T>& row, Index n) {
  return row.replicate(n, 1);
}

template <typename T>
Matrix<T> replicate_pad(const Matrix<T>& x, Index n) {
  if (x.rows() < 1) throw EmptyInputError("cannot pad an empty sequence");
  if (n <= x.rows()) return x;
  Matrix<T> out(n, x.cols());
  out.topRows(x.rows()) = x;
  out.bottomRows(n - x.rows()) = x.row(x.rows() - 1).replicate(n - x.rows(), 1);
  return out;
}

#define HDISEN_INSTANTIATE(T)                                                            \
  template class Conv1d<T>;                                                              \
  template class Sequential<T>;                                                          \
  template void adam_update<T>(Param<T>&, AdamMoments<T>&, const AdamOptions&, std::int64_t); \
  template RowVector<T> global_average_pool<T>(const Matrix<T>&);                        \
  template Matrix<T> tile_rows<T>(const RowVector<T>&, Index);                           \
  template Matrix<T> replicate_pad<T>(const Matrix<T>&, Index);

HDISEN_INSTANTIATE(float)
HDISEN_INSTANTIATE(double)

#undef HDISEN_INSTANTIATE

}  // namespace hdisen
