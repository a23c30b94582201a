#pragma once

#include <cstdint>
#include <span>
#include <vector>

namespace rspnet {

/// Rows are ground truth, columns are predictions; ignored pixels are skipped.
class ConfusionMatrix {
 public:
  explicit ConfusionMatrix(int num_classes);

  void add(std::span<const std::uint8_t> predictions, std::span<const std::uint8_t> labels,
           std::uint8_t ignore = 255);

  int num_classes() const { return k_; }
  std::int64_t at(int truth, int pred) const { return m_[static_cast<std::size_t>(truth * k_ + pred)]; }
  std::int64_t total() const;

 private:
  int k_;
  std::vector<std::int64_t> m_;
};

struct MiouResult {
  std::vector<double> iou;      // per class; NaN when the class is absent from truth and prediction
  std::vector<bool> present;
  double mean = 0.0;
};

/// IOU_c = TP / (TP + FP + FN), averaged over classes that occur in either
/// truth or prediction. Throws when no pixel is valid.
MiouResult miou(const ConfusionMatrix& cm);

}  // namespace rspnet
