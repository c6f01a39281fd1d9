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

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "hdisen/common.hpp"

namespace hdisen {

template <typename T>
struct Param {
  Matrix<T> value;
  Matrix<T> grad;

  void zero_grad() { grad.setZero(value.rows(), value.cols()); }
};

/// One layer of a Sequential stack. A conv layer maps in -> out channels with
/// the given kernel and stride and zero padding (kernel - 1) / 2 on both ends.
/// An upsampling layer is a transposed convolution whose kernel equals its
/// stride: every input frame emits `stride` output frames.
struct LayerSpec {
  int in = 0;
  int out = 0;
  int kernel = 1;
  int stride = 1;
  bool upsample = false;
  bool activation = true;
};

template <typename T>
class Conv1d {
 public:
  struct Cache {
    Matrix<T> padded;
    Eigen::Index in_rows = 0;
  };

  Conv1d() = default;
  Conv1d(int in, int out, int kernel, int stride, double init_gain, Rng& rng);

  Eigen::Index output_length(Eigen::Index n) const;
  Matrix<T> forward(const Matrix<T>& x, Cache* cache) const;
  /// Accumulates into the parameter gradients. Returns dL/dx when
  /// `need_input_grad`, otherwise an empty matrix.
  Matrix<T> backward(const Matrix<T>& dy, const Cache& cache, bool need_input_grad);

  int in_channels() const { return in_; }
  int out_channels() const { return out_; }
  int kernel() const { return kernel_; }
  int stride() const { return stride_; }

  Param<T> weight;  // (kernel * in) x out
  Param<T> bias;    // 1 x out

 private:
  int in_ = 0, out_ = 0, kernel_ = 1, stride_ = 1, pad_ = 0;
};

template <typename T>
class Sequential {
 public:
  struct Cache {
    std::vector<typename Conv1d<T>::Cache> conv;
    std::vector<Matrix<T>> outputs;
  };

  Sequential() = default;
  Sequential(const std::vector<LayerSpec>& specs, double leaky_slope, Rng& rng);

  Matrix<T> forward(const Matrix<T>& x, Cache* cache = nullptr) const;
  Matrix<T> backward(const Matrix<T>& dy, const Cache& cache, bool need_input_grad);

  /// Output length for an input of n frames.
  Eigen::Index output_length(Eigen::Index n) const;
  int in_channels() const { return specs_.front().in; }
  int out_channels() const { return specs_.back().out; }
  std::size_t parameter_count() const;
  const std::vector<LayerSpec>& specs() const { return specs_; }

  template <typename F>
  void for_each_param(F&& f) {
    for (std::size_t i = 0; i < layers_.size(); ++i) {
      const std::string p = "layer" + std::to_string(i) + ".";
      f(p + "weight", layers_[i].weight);
      f(p + "bias", layers_[i].bias);
    }
  }
  template <typename F>
  void for_each_param(F&& f) const {
    for (std::size_t i = 0; i < layers_.size(); ++i) {
      const std::string p = "layer" + std::to_string(i) + ".";
      f(p + "weight", layers_[i].weight);
      f(p + "bias", layers_[i].bias);
    }
  }

 private:
  std::vector<LayerSpec> specs_;
  std::vector<Conv1d<T>> layers_;
  T slope_ = T(0.2);
};

struct AdamOptions {
  double lr = 5e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

template <typename T>
struct AdamMoments {
  Matrix<T> m;
  Matrix<T> v;
};

/// One Adam update of `p` from `p.grad`; `step` is the 1-based update count
/// of this parameter, used for bias correction.
template <typename T>
void adam_update(Param<T>& p, AdamMoments<T>& moments, const AdamOptions& opts, std::int64_t step);

/// Mean over the time axis.
template <typename T>
RowVector<T> global_average_pool(const Matrix<T>& frames);

/// Repeats `row` n times along the time axis.
template <typename T>
Matrix<T> tile_rows(const RowVector<T>& row, Eigen::Index n);

/// Extends the time axis to `n` rows by repeating the last frame.
template <typename T>
Matrix<T> replicate_pad(const Matrix<T>& x, Eigen::Index n);

}  // namespace hdisen
