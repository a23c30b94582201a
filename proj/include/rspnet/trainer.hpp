#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "rspnet/data.hpp"
#include "rspnet/metrics.hpp"
#include "rspnet/optim.hpp"
#include "rspnet/supernet.hpp"

namespace rspnet {

struct EpochRecord {
  int epoch = 0;
  std::string phase;  // cell_search | path_search | train
  double loss = 0.0;  // mean training loss of the epoch (NaN for the epoch-0 row)
  double miou = 0.0;  // validation mIOU after the epoch
};

struct MetricsLog {
  std::vector<EpochRecord> rows;

  std::string csv() const;  // header `epoch,phase,loss,miou`
  void write_csv(const std::string& path) const;
};

/// Independent stream for one purpose (init, shuffling, ...) of a run.
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream);

/// Seeded 50/50 split: (weight half, architecture half).
std::pair<Dataset, Dataset> split_train_val(const Dataset& data, std::uint64_t seed);

/// Argmax predictions (N * H * W), batches taken in dataset order.
std::vector<std::uint8_t> predict(const SegNet<float>& net, const Dataset& data, int batch_size);

MiouResult evaluate_miou(const SegNet<float>& net, const Dataset& data, int batch_size);

/// Requires-grad on/off for every tensor of a store.
template <typename T>
void set_trainable(const ParamStore<T>& store, bool on) {
  for (const auto& w : store.weights()) w.tensor.set_requires_grad(on);
}

/// One SGD step on cross-entropy over `batch`; returns the loss. Throws
/// RuntimeFailure when the loss is not finite.
double train_step(const SegNet<float>& net, Sgd<float>& opt, const Batch<float>& batch);

struct CellSearchResult {
  Genotype genotype;
  std::vector<double> alpha;  // final logits, edges x kinds
};

/// Alternates a weight step on the weight half of `train` with an
/// architecture step on the other half.
CellSearchResult stage1_cell_search(const Dataset& train, const SearchConfig& cfg, MetricsLog* log = nullptr);

struct PathSearchResult {
  MacroGenotype macro;
  std::vector<std::vector<double>> scores;  // running mean per layer over candidates
  int scoring_passes = 0;
};

/// Trains a supernet of discrete cells with attention-gated inputs, averaging
/// path scores over the last quarter of epochs (one pass when there are none).
PathSearchResult stage2_path_search(const Dataset& train, const Genotype& genotype, const SearchConfig& cfg,
                                    MetricsLog* log = nullptr);

struct TrainResult {
  std::unique_ptr<SegNet<float>> model;
  MiouResult final_miou;
  std::int64_t params = 0;
};

TrainResult train_final(const Dataset& train, const Dataset& val, const Genotype& genotype,
                        const MacroGenotype& macro, const SearchConfig& cfg, MetricsLog* log = nullptr);

}  // namespace rspnet
