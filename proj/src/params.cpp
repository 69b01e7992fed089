#include "adt/params.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <stdexcept>

namespace adt {

static_assert(std::endian::native == std::endian::little,
              "checkpoint payloads are written in native byte order");

template <class Real>
Parameter<Real>& ParamStore<Real>::add(const std::string& name, Tensor<Real> init) {
  if (contains(name)) throw std::invalid_argument("duplicate parameter: " + name);
  index_[name] = params_.size();
  params_.push_back(std::make_unique<Parameter<Real>>(name, std::move(init)));
  return *params_.back();
}

template <class Real>
Parameter<Real>& ParamStore<Real>::get(const std::string& name) {
  auto it = index_.find(name);
  if (it == index_.end()) throw std::out_of_range("unknown parameter: " + name);
  return *params_[it->second];
}

template <class Real>
const Parameter<Real>& ParamStore<Real>::get(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw std::out_of_range("unknown parameter: " + name);
  return *params_[it->second];
}

template <class Real>
std::size_t ParamStore<Real>::num_scalars() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p->value.size();
  return n;
}

template <class Real>
void ParamStore<Real>::zero_grad() {
  for (auto& p : params_) p->grad.fill(Real(0));
}

template <class Real>
double ParamStore<Real>::grad_norm() const {
  double sq = 0.0;
  for (const auto& p : params_)
    for (Real g : p->grad.data()) sq += double(g) * double(g);
  return std::sqrt(sq);
}

template <class Real>
double ParamStore<Real>::adam_step(const AdamConfig& cfg) {
  const double norm = grad_norm();
  if (!std::isfinite(norm)) throw std::runtime_error("adam_step: non-finite gradient");
  const double scale = (cfg.clip > 0.0 && norm > cfg.clip) ? cfg.clip / norm : 1.0;

  ++step_;
  const double bc1 = 1.0 - std::pow(cfg.beta1, double(step_));
  const double bc2 = 1.0 - std::pow(cfg.beta2, double(step_));
  for (auto& p : params_) {
    auto val = p->value.data();
    auto g = p->grad.data();
    auto m = p->m.data();
    auto v = p->v.data();
    for (std::size_t i = 0; i < val.size(); ++i) {
      const double gi = double(g[i]) * scale;
      const double mi = cfg.beta1 * double(m[i]) + (1.0 - cfg.beta1) * gi;
      const double vi = cfg.beta2 * double(v[i]) + (1.0 - cfg.beta2) * gi * gi;
      m[i] = Real(mi);
      v[i] = Real(vi);
      const double mhat = mi / bc1;
      const double vhat = vi / bc2;
      val[i] = Real(double(val[i]) - cfg.lr * mhat / (std::sqrt(vhat) + cfg.eps));
    }
  }
  return norm;
}

template <class Real>
bool ParamStore<Real>::values_equal(const ParamStore& other) const {
  if (other.size() != size()) return false;
  for (std::size_t i = 0; i < size(); ++i) {
    if (params_[i]->name != other[i].name) return false;
    if (!(params_[i]->value == other[i].value)) return false;
  }
  return true;
}

template <class Real>
Tensor<Real> uniform_init(std::size_t rows, std::size_t cols, double limit,
                          std::mt19937_64& rng) {
  std::uniform_real_distribution<double> dist(-limit, limit);
  Tensor<Real> t(rows, cols);
  for (auto& x : t.data()) x = Real(dist(rng));
  return t;
}

template <class Real>
Tensor<Real> xavier_uniform(std::size_t rows, std::size_t cols, std::mt19937_64& rng) {
  return uniform_init<Real>(rows, cols, std::sqrt(6.0 / double(rows + cols)), rng);
}

namespace {

template <class T>
void write_pod(std::ostream& os, const T& v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <class T>
T read_pod(std::istream& is, const std::string& path) {
  T v{};
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!is) throw std::runtime_error("truncated checkpoint: " + path);
  return v;
}

}  // namespace

template <class Real>
void save_checkpoint(const ParamStore<Real>& store, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot open for writing: " + path);
  write_pod(os, kCheckpointVersion);
  write_pod(os, static_cast<std::uint8_t>(sizeof(Real)));
  write_pod(os, static_cast<std::uint32_t>(store.size()));
  for (std::size_t i = 0; i < store.size(); ++i) {
    const auto& p = store[i];
    write_pod(os, static_cast<std::uint32_t>(p.name.size()));
    os.write(p.name.data(), std::streamsize(p.name.size()));
    write_pod(os, static_cast<std::uint64_t>(p.value.rows()));
    write_pod(os, static_cast<std::uint64_t>(p.value.cols()));
    os.write(reinterpret_cast<const char*>(p.value.ptr()),
             std::streamsize(p.value.size() * sizeof(Real)));
  }
  if (!os) throw std::runtime_error("write failed: " + path);
}

template <class Real>
void load_checkpoint(ParamStore<Real>& store, const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open checkpoint: " + path);
  const auto version = read_pod<std::uint8_t>(is, path);
  if (version != kCheckpointVersion)
    throw std::runtime_error("unsupported checkpoint version " + std::to_string(version));
  const auto width = read_pod<std::uint8_t>(is, path);
  if (width != 4 && width != 8)
    throw std::runtime_error("bad scalar width in checkpoint: " + std::to_string(width));
  const auto count = read_pod<std::uint32_t>(is, path);
  if (count != store.size())
    throw std::runtime_error("checkpoint has " + std::to_string(count) + " tensors, model has " +
                             std::to_string(store.size()));
  for (std::uint32_t k = 0; k < count; ++k) {
    const auto len = read_pod<std::uint32_t>(is, path);
    std::string name(len, '\0');
    is.read(name.data(), len);
    const auto rows = read_pod<std::uint64_t>(is, path);
    const auto cols = read_pod<std::uint64_t>(is, path);
    auto& p = store.get(name);
    if (p.value.rows() != rows || p.value.cols() != cols)
      throw ShapeError("load_checkpoint(" + name + ")", p.value.shape(),
                       Shape{std::size_t(rows), std::size_t(cols)});
    const std::size_t n = rows * cols;
    if (width == sizeof(Real)) {
      is.read(reinterpret_cast<char*>(p.value.ptr()), std::streamsize(n * sizeof(Real)));
    } else if (width == 4) {
      std::vector<float> buf(n);
      is.read(reinterpret_cast<char*>(buf.data()), std::streamsize(n * 4));
      for (std::size_t i = 0; i < n; ++i) p.value[i] = Real(buf[i]);
    } else {
      std::vector<double> buf(n);
      is.read(reinterpret_cast<char*>(buf.data()), std::streamsize(n * 8));
      for (std::size_t i = 0; i < n; ++i) p.value[i] = Real(buf[i]);
    }
    if (!is) throw std::runtime_error("truncated checkpoint payload: " + path);
  }
}

template class ParamStore<float>;
template class ParamStore<double>;
template Tensor<float> xavier_uniform<float>(std::size_t, std::size_t, std::mt19937_64&);
template Tensor<double> xavier_uniform<double>(std::size_t, std::size_t, std::mt19937_64&);
template Tensor<float> uniform_init<float>(std::size_t, std::size_t, double, std::mt19937_64&);
template Tensor<double> uniform_init<double>(std::size_t, std::size_t, double, std::mt19937_64&);
template void save_checkpoint<float>(const ParamStore<float>&, const std::string&);
template void save_checkpoint<double>(const ParamStore<double>&, const std::string&);
template void load_checkpoint<float>(ParamStore<float>&, const std::string&);
template void load_checkpoint<double>(ParamStore<double>&, const std::string&);

}  // namespace adt
