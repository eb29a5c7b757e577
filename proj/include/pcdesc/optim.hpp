#pragma once

#include "pcdesc/tensor.hpp"

#include <cmath>
#include <functional>
#include <map>
#include <string>
#include <vector>

namespace pcdesc::optim {

using nn::Mat;

struct AdamConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

template <class T>
struct AdamState {
  AdamConfig cfg;
  long step = 0;
  std::map<std::string, std::pair<Mat<T>, Mat<T>>> moments;  // name -> (m, v)
};

/// One bias-corrected Adam update at learning rate `lr` over every parameter
/// accepted by `trainable` (all when empty). Throws numeric-error naming the
/// parameter when a gradient is not finite; nothing is modified in that case.
template <class T, class Params>
void adam_step(Params& params, Params& grads, AdamState<T>& state, double lr,
               const std::function<bool(const std::string&)>& trainable = {}) {
  std::vector<std::pair<std::string, Mat<T>*>> p, g;
  nn::for_each_param(params, [&](const std::string& name, Mat<T>& m) { p.emplace_back(name, &m); });
  nn::for_each_param(grads, [&](const std::string& name, Mat<T>& m) { g.emplace_back(name, &m); });
  require(p.size() == g.size(), ErrorCode::InvalidArgument, "adam_step: parameter/gradient layout differs");
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (trainable && !trainable(p[i].first)) continue;
    require(p[i].second->rows() == g[i].second->rows() && p[i].second->cols() == g[i].second->cols(),
            ErrorCode::InvalidArgument, "adam_step: shape mismatch for " + p[i].first);
    nn::check_finite(*g[i].second, "gradient of " + p[i].first);
  }
  ++state.step;
  const auto& c = state.cfg;
  const double bc1 = 1.0 - std::pow(c.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(c.beta2, static_cast<double>(state.step));
  for (std::size_t i = 0; i < p.size(); ++i) {
    const std::string& name = p[i].first;
    if (trainable && !trainable(name)) continue;
    Mat<T>& w = *p[i].second;
    const Mat<T>& grad = *g[i].second;
    auto it = state.moments.find(name);
    if (it == state.moments.end())
      it = state.moments.emplace(name, std::make_pair(Mat<T>::Zero(w.rows(), w.cols()),
                                                      Mat<T>::Zero(w.rows(), w.cols()))).first;
    Mat<T>& m = it->second.first;
    Mat<T>& v = it->second.second;
    m = static_cast<T>(c.beta1) * m + static_cast<T>(1.0 - c.beta1) * grad;
    v = static_cast<T>(c.beta2) * v + static_cast<T>(1.0 - c.beta2) * grad.cwiseAbs2();
    const T step = static_cast<T>(lr / bc1);
    const T inv_bc2 = static_cast<T>(1.0 / bc2);
    w.array() -= step * m.array() / ((v.array() * inv_bc2).sqrt() + static_cast<T>(c.eps));
  }
}

/// base · 0.5^⌊epoch / every⌋; defaults give 1e-4 halved every 5 epochs.
double lr_schedule_local(int epoch, double base = 1e-4, int every = 5);

/// base · decay^⌊epoch / every⌋ clamped below at floor; defaults give 5e-4
/// decayed by half every 10 epochs until 1e-5.
double lr_schedule_global(int epoch, double base = 5e-4, double decay = 0.5, int every = 10,
                          double floor = 1e-5);

}  // namespace pcdesc::optim
