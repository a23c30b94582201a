#include "rspnet/metrics.hpp"

#include <cmath>
#include <string>

#include "rspnet/error.hpp"

namespace rspnet {

ConfusionMatrix::ConfusionMatrix(int num_classes) : k_(num_classes) {
  if (num_classes < 1) throw ValidationError("confusion matrix needs at least one class");
  m_.assign(static_cast<std::size_t>(k_ * k_), 0);
}

void ConfusionMatrix::add(std::span<const std::uint8_t> predictions, std::span<const std::uint8_t> labels,
                          std::uint8_t ignore) {
  if (predictions.size() != labels.size()) throw ValidationError("confusion matrix: prediction/label size mismatch");
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] == ignore) continue;
    if (labels[i] >= k_ || predictions[i] >= k_) {
      throw ValidationError("confusion matrix: class id " + std::to_string(std::max(labels[i], predictions[i])) +
                            " outside [0, " + std::to_string(k_) + ")");
    }
    ++m_[static_cast<std::size_t>(labels[i] * k_ + predictions[i])];
  }
}

std::int64_t ConfusionMatrix::total() const {
  std::int64_t t = 0;
  for (auto v : m_) t += v;
  return t;
}

MiouResult miou(const ConfusionMatrix& cm) {
  if (cm.total() == 0) throw ValidationError("mIOU: no valid (non-ignored) pixels");
  const int k = cm.num_classes();
  MiouResult r;
  r.iou.assign(static_cast<std::size_t>(k), std::nan(""));
  r.present.assign(static_cast<std::size_t>(k), false);
  double sum = 0.0;
  int count = 0;
  for (int c = 0; c < k; ++c) {
    std::int64_t tp = cm.at(c, c), fp = 0, fn = 0;
    for (int o = 0; o < k; ++o) {
      if (o == c) continue;
      fp += cm.at(o, c);
      fn += cm.at(c, o);
    }
    const std::int64_t denom = tp + fp + fn;
    if (denom == 0) continue;
    r.present[static_cast<std::size_t>(c)] = true;
    r.iou[static_cast<std::size_t>(c)] = static_cast<double>(tp) / static_cast<double>(denom);
    sum += r.iou[static_cast<std::size_t>(c)];
    ++count;
  }
  r.mean = sum / count;
  return r;
}

}  // namespace rspnet
