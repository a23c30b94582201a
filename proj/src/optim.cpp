#include "rspnet/optim.hpp"

#include "rspnet/error.hpp"

namespace rspnet {

template <typename T>
Sgd<T>::Sgd(std::span<const Weight<T>> weights, SgdConfig cfg) : weights_(weights.begin(), weights.end()), cfg_(cfg) {
  if (!(cfg.lr > 0.0)) throw ValidationError("sgd: learning rate must be > 0");
  if (cfg.momentum < 0.0 || cfg.weight_decay < 0.0) throw ValidationError("sgd: momentum and weight decay must be >= 0");
  for (const auto& w : weights_) velocity_.emplace_back(static_cast<std::size_t>(w.tensor.numel()), T(0));
}

template <typename T>
std::vector<std::string> Sgd<T>::step() {
  std::vector<std::string> skipped;
  for (std::size_t i = 0; i < weights_.size(); ++i) {
    const Tensor<T>& t = weights_[i].tensor;
    if (!t.has_grad()) {
      skipped.push_back(weights_[i].id);
      continue;
    }
    auto w = t.data();
    auto g = t.grad();
    auto& v = velocity_[i];
    for (std::size_t j = 0; j < w.size(); ++j) {
      const double vj = cfg_.momentum * static_cast<double>(v[j]) + static_cast<double>(g[j]) +
                        cfg_.weight_decay * static_cast<double>(w[j]);
      v[j] = static_cast<T>(vj);
      w[j] = static_cast<T>(static_cast<double>(w[j]) - cfg_.lr * vj);
    }
    t.clear_grad();
  }
  return skipped;
}

template <typename T>
void Sgd<T>::set_lr(double lr) {
  if (!(lr > 0.0)) throw ValidationError("sgd: learning rate must be > 0");
  cfg_.lr = lr;
}

template class Sgd<float>;
template class Sgd<double>;

}  // namespace rspnet
