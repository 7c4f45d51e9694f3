#pragma once

#include <cmath>
#include <cstring>
#include <filesystem>
#include <functional>
#include <random>
#include <vector>

#include <unistd.h>

#include "tempoflow/flow.hpp"
#include "tempoflow/tensor.hpp"

namespace tftest {

using namespace tempoflow;

inline Tensor random_tensor(std::mt19937_64& rng, Shape shape, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  Eigen::ArrayXd d(shape_numel(shape));
  for (Index i = 0; i < d.size(); ++i) d[i] = u(rng);
  return Tensor::from_data(std::move(shape), std::move(d));
}

inline Tensor random_normal(std::mt19937_64& rng, Shape shape) {
  std::normal_distribution<double> n(0.0, 1.0);
  Eigen::ArrayXd d(shape_numel(shape));
  for (Index i = 0; i < d.size(); ++i) d[i] = n(rng);
  return Tensor::from_data(std::move(shape), std::move(d));
}

// Integer-valued flow in [-range, range] with occasional half-pixel values
// to exercise the rounding rule.
inline FlowField random_flow(std::mt19937_64& rng, Index w, Index h, int range) {
  std::uniform_int_distribution<int> d(-2 * range, 2 * range);
  FlowField f(w, h);
  for (Index y = 0; y < h; ++y) {
    for (Index x = 0; x < w; ++x) {
      f.dx(y, x) = d(rng) / 2.0;
      f.dy(y, x) = d(rng) / 2.0;
    }
  }
  return f;
}

inline OcclusionMask random_occlusion(std::mt19937_64& rng, Index w, Index h, double p) {
  std::bernoulli_distribution b(p);
  OcclusionMask m(w, h);
  for (auto& v : m.occluded) v = b(rng);
  return m;
}

// Central finite differences of a scalar function of one tensor.
inline Eigen::ArrayXd numeric_gradient(const std::function<double(const Tensor&)>& f, const Tensor& x,
                                       double step = 1e-6) {
  Eigen::ArrayXd g(x.numel());
  for (Index i = 0; i < x.numel(); ++i) {
    Eigen::ArrayXd plus = x.data(), minus = x.data();
    plus[i] += step;
    minus[i] -= step;
    g[i] = (f(Tensor::from_data(x.shape(), plus)) - f(Tensor::from_data(x.shape(), minus))) / (2.0 * step);
  }
  return g;
}

inline double relative_error(const Eigen::ArrayXd& a, const Eigen::ArrayXd& b) {
  const double scale = std::max({a.abs().maxCoeff(), b.abs().maxCoeff(), 1e-12});
  return (a - b).abs().maxCoeff() / scale;
}

inline bool bit_equal(const Eigen::ArrayXd& a, const Eigen::ArrayXd& b) {
  if (a.size() != b.size()) return false;
  for (Index i = 0; i < a.size(); ++i) {
    if (std::memcmp(&a[i], &b[i], sizeof(double)) != 0) return false;
  }
  return true;
}

// Nearest-neighbour target rounding half away from zero, re-derived here.
inline bool brute_target(const FlowField& f, Index x, Index y, Index& tx, Index& ty) {
  const double fx = static_cast<double>(x) + f.dx(y, x), fy = static_cast<double>(y) + f.dy(y, x);
  auto round_away = [](double v) { return v >= 0 ? std::floor(v + 0.5) : -std::floor(-v + 0.5); };
  const double rx = round_away(fx), ry = round_away(fy);
  tx = static_cast<Index>(rx);
  ty = static_cast<Index>(ry);
  return rx >= 0 && ry >= 0 && rx < static_cast<double>(f.width()) && ry < static_cast<double>(f.height());
}

// Scratch directory removed on scope exit.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    static int counter = 0;
    path_ = std::filesystem::temp_directory_path() /
            ("tempoflow_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

}  // namespace tftest
