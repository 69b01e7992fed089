#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include "adt/tensor.hpp"

namespace adt {

/// A trainable tensor together with its gradient and Adam moments.
template <class Real>
struct Parameter {
  std::string name;
  Tensor<Real> value;
  Tensor<Real> grad;
  Tensor<Real> m;  // first moment
  Tensor<Real> v;  // second moment

  Parameter(std::string n, Tensor<Real> init)
      : name(std::move(n)),
        value(std::move(init)),
        grad(value.shape()),
        m(value.shape()),
        v(value.shape()) {}
};

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double clip = 5.0;  // global-norm threshold; <= 0 disables clipping
};

/// Named parameters plus optimizer state. Parameter addresses are stable for
/// the lifetime of the store, so graphs may hold raw pointers into it.
template <class Real>
class ParamStore {
 public:
  ParamStore() = default;
  ParamStore(const ParamStore&) = delete;
  ParamStore& operator=(const ParamStore&) = delete;
  ParamStore(ParamStore&&) noexcept = default;
  ParamStore& operator=(ParamStore&&) noexcept = default;

  Parameter<Real>& add(const std::string& name, Tensor<Real> init);
  Parameter<Real>& get(const std::string& name);
  const Parameter<Real>& get(const std::string& name) const;
  bool contains(const std::string& name) const { return index_.count(name) != 0; }

  std::size_t size() const { return params_.size(); }
  std::size_t num_scalars() const;
  Parameter<Real>& operator[](std::size_t i) { return *params_[i]; }
  const Parameter<Real>& operator[](std::size_t i) const { return *params_[i]; }

  void zero_grad();
  double grad_norm() const;
  std::int64_t step_count() const { return step_; }

  /// Global-norm clip followed by one bias-corrected Adam update. Returns the
  /// pre-clip gradient norm. Throws on a non-finite gradient.
  double adam_step(const AdamConfig& cfg);

  bool values_equal(const ParamStore& other) const;

 private:
  std::vector<std::unique_ptr<Parameter<Real>>> params_;
  std::map<std::string, std::size_t> index_;
  std::int64_t step_ = 0;
};

/// Uniform(-limit, limit) initializer with limit = sqrt(6 / (fan_in + fan_out)).
template <class Real>
Tensor<Real> xavier_uniform(std::size_t rows, std::size_t cols, std::mt19937_64& rng);

template <class Real>
Tensor<Real> uniform_init(std::size_t rows, std::size_t cols, double limit, std::mt19937_64& rng);

// Checkpoint container: version byte, scalar width byte, tensor count, then
// per tensor (name, rows, cols, little-endian payload).
inline constexpr std::uint8_t kCheckpointVersion = 1;

template <class Real>
void save_checkpoint(const ParamStore<Real>& store, const std::string& path);

/// Loads values into an existing store by name. Every stored tensor must match
/// a parameter of identical shape and every parameter must be present.
/// Payloads written at a different precision are converted.
template <class Real>
void load_checkpoint(ParamStore<Real>& store, const std::string& path);

}  // namespace adt
