#pragma once

#include "pcst/autograd.hpp"
#include "pcst/sparse_tensor.hpp"

#include <cmath>
#include <map>
#include <memory>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace pcst::nn {

using ag::Matrix;
using ag::Parameter;
using ag::Tape;
using ag::Var;

/// Owns every trainable tensor of a model under a unique name. Addresses
/// are stable for the lifetime of the store; iteration is in name order.
template <typename T>
class ParameterStore {
 public:
  ParameterStore() = default;
  ParameterStore(const ParameterStore&) = delete;
  ParameterStore& operator=(const ParameterStore&) = delete;

  Parameter<T>& create(const std::string& name, Eigen::Index rows, Eigen::Index cols) {
    if (index_.count(name)) throw std::invalid_argument("duplicate parameter name: " + name);
    auto p = std::make_unique<Parameter<T>>();
    p->name = name;
    p->value = Matrix<T>::Zero(rows, cols);
    p->grad = Matrix<T>::Zero(rows, cols);
    auto& ref = *p;
    index_.emplace(name, p.get());
    owned_.push_back(std::move(p));
    return ref;
  }

  Parameter<T>* find(const std::string& name) {
    auto it = index_.find(name);
    return it == index_.end() ? nullptr : it->second;
  }
  const Parameter<T>* find(const std::string& name) const {
    auto it = index_.find(name);
    return it == index_.end() ? nullptr : it->second;
  }

  Parameter<T>& at(const std::string& name) {
    auto* p = find(name);
    if (!p) throw std::out_of_range("unknown parameter: " + name);
    return *p;
  }

  void zero_grad() {
    for (auto& p : owned_) p->zero_grad();
  }

  std::size_t scalar_count() const {
    std::size_t n = 0;
    for (const auto& p : owned_) n += static_cast<std::size_t>(p->value.size());
    return n;
  }

  /// Name-ordered view.
  const std::map<std::string, Parameter<T>*>& by_name() const { return index_; }

 private:
  std::vector<std::unique_ptr<Parameter<T>>> owned_;
  std::map<std::string, Parameter<T>*> index_;
};

template <typename T>
void init_uniform(Parameter<T>& p, T bound, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> dist(-static_cast<double>(bound), static_cast<double>(bound));
  for (Eigen::Index i = 0; i < p.value.size(); ++i) p.value.data()[i] = static_cast<T>(dist(rng));
}

/// He-uniform bound for a layer followed by a rectifier.
inline double he_bound(double fan_in) { return std::sqrt(6.0 / fan_in); }
/// Variance-preserving bound for a linear read-out.
inline double lecun_bound(double fan_in) { return std::sqrt(3.0 / fan_in); }

template <typename T>
class SparseConvLayer {
 public:
  SparseConvLayer() = default;
  SparseConvLayer(ParameterStore<T>& store, const std::string& name, int in, int out, int kernel_size, int stride,
                  std::mt19937_64& rng, double bound_scale = 1.0)
      : kernel_size_(kernel_size), stride_(stride) {
    const int slots = kernel_size * kernel_size * kernel_size;
    weight_ = &store.create(name + ".weight", static_cast<Eigen::Index>(slots) * in, out);
    bias_ = &store.create(name + ".bias", 1, out);
    if (in > 0 && out > 0) init_uniform(*weight_, static_cast<T>(bound_scale * he_bound(double(slots) * in)), rng);
  }

  ConvVars<T> vars(Tape<T>& tape) const {
    return {tape.parameter(*weight_), tape.parameter(*bias_), kernel_size_, stride_};
  }

  SparseVar<T> operator()(Tape<T>& tape, const SparseVar<T>& x) const { return conv(x, vars(tape)); }

  int out_channels() const { return static_cast<int>(weight_->value.cols()); }

 private:
  Parameter<T>* weight_ = nullptr;
  Parameter<T>* bias_ = nullptr;
  int kernel_size_ = 3;
  int stride_ = 1;
};

/// Stride-2 transposed convolution over the 2x2x2 child window.
template <typename T>
class TransposedConvLayer {
 public:
  TransposedConvLayer() = default;
  TransposedConvLayer(ParameterStore<T>& store, const std::string& name, int in, int out, std::mt19937_64& rng) {
    weight_ = &store.create(name + ".weight", 8 * static_cast<Eigen::Index>(in), out);
    bias_ = &store.create(name + ".bias", 1, out);
    init_uniform(*weight_, static_cast<T>(he_bound(in)), rng);
  }

  SparseVar<T> operator()(Tape<T>& tape, const SparseVar<T>& x) const {
    return conv_transpose(x, ConvVars<T>{tape.parameter(*weight_), tape.parameter(*bias_), 2, 2}, x.stride() / 2);
  }

 private:
  Parameter<T>* weight_ = nullptr;
  Parameter<T>* bias_ = nullptr;
};

template <typename T>
class IrnLayer {
 public:
  IrnLayer() = default;
  IrnLayer(ParameterStore<T>& store, const std::string& name, int channels, int kernel_size, std::mt19937_64& rng) {
    const auto s = IrnSplit::for_channels(channels);
    // Branch outputs feed a residual sum; keep their initial magnitude small.
    constexpr double residual_scale = 0.5;
    b1_ = SparseConvLayer<T>(store, name + ".b1", channels, s.one_by_one, 1, 1, rng, residual_scale);
    b2_ = SparseConvLayer<T>(store, name + ".b2", channels, s.three, kernel_size, 1, rng, residual_scale);
    b3a_ = SparseConvLayer<T>(store, name + ".b3a", channels, s.stacked, kernel_size, 1, rng);
    b3b_ = SparseConvLayer<T>(store, name + ".b3b", s.stacked, s.stacked, kernel_size, 1, rng, residual_scale);
  }

  SparseVar<T> operator()(Tape<T>& tape, const SparseVar<T>& x) const {
    return irn(x, IrnVars<T>{b1_.vars(tape), b2_.vars(tape), b3a_.vars(tape), b3b_.vars(tape)});
  }

 private:
  SparseConvLayer<T> b1_, b2_, b3a_, b3b_;
};

/// Dense affine map applied row-wise.
template <typename T>
class Linear {
 public:
  Linear() = default;
  Linear(ParameterStore<T>& store, const std::string& name, int in, int out, std::mt19937_64& rng) {
    weight_ = &store.create(name + ".weight", in, out);
    bias_ = &store.create(name + ".bias", 1, out);
    init_uniform(*weight_, static_cast<T>(lecun_bound(in)), rng);
  }

  Var<T> operator()(Tape<T>& tape, const Var<T>& x) const {
    return ag::linear(x, tape.parameter(*weight_), tape.parameter(*bias_));
  }

  Eigen::Index in_width() const { return weight_->value.rows(); }
  Eigen::Index out_width() const { return weight_->value.cols(); }

 private:
  Parameter<T>* weight_ = nullptr;
  Parameter<T>* bias_ = nullptr;
};

}  // namespace pcst::nn
