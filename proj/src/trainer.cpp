#include "rspnet/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <numeric>

#include "rspnet/error.hpp"
#include "rspnet/ops.hpp"

namespace rspnet {

namespace {

enum Stream : std::uint64_t { kSplit = 1, kInit = 2, kOrder = 3, kCrop = 4 };

std::vector<std::vector<std::size_t>> make_batches(std::size_t count, int batch_size, Rng* shuffle) {
  std::vector<std::size_t> order(count);
  std::iota(order.begin(), order.end(), std::size_t{0});
  if (shuffle) std::shuffle(order.begin(), order.end(), *shuffle);
  std::vector<std::vector<std::size_t>> out;
  for (std::size_t i = 0; i < count; i += static_cast<std::size_t>(batch_size)) {
    const std::size_t end = std::min(count, i + static_cast<std::size_t>(batch_size));
    out.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(i), order.begin() + static_cast<std::ptrdiff_t>(end));
  }
  return out;
}

double cosine_lr(double base, int epoch, int epochs) {
  return base * 0.5 * (1.0 + std::cos(std::numbers::pi * static_cast<double>(epoch) / static_cast<double>(epochs)));
}

void require_data(const Dataset& d, const char* what, const SearchConfig& cfg) {
  if (d.empty()) throw ValidationError(std::string(what) + ": dataset is empty");
  validate_labels(d, cfg.num_classes);
}

void guard(double loss, const char* phase, int epoch) {
  if (!std::isfinite(loss)) {
    throw RuntimeFailure(std::string(phase) + ": loss diverged (" + std::to_string(loss) + ") at epoch " +
                         std::to_string(epoch));
  }
}

double train_epoch(const SegNet<float>& net, Sgd<float>& opt, const Dataset& data, const SearchConfig& cfg,
                   Rng& order, Rng& crop, const char* phase, int epoch) {
  double total = 0.0;
  std::size_t n = 0;
  for (const auto& idx : make_batches(data.size(), cfg.batch_size, &order)) {
    const auto batch = make_batch<float>(data, idx, cfg.crop_h, cfg.crop_w, &crop);
    double loss = 0.0;
    try {
      loss = train_step(net, opt, batch);
    } catch (const RuntimeFailure&) {
      guard(std::nan(""), phase, epoch);
    }
    total += loss * static_cast<double>(idx.size());
    n += idx.size();
  }
  return total / static_cast<double>(n);
}

}  // namespace

std::string MetricsLog::csv() const {
  std::string out = "epoch,phase,loss,miou\n";
  char buf[128];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%d,%s,%.6f,%.6f\n", r.epoch, r.phase.c_str(), r.loss, r.miou);
    out += buf;
  }
  return out;
}

void MetricsLog::write_csv(const std::string& path) const {
  std::ofstream out(path, std::ios::binary);
  out << csv();
  if (!out) throw RuntimeFailure("failed writing metrics log '" + path + "'");
}

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(stream)};
  std::array<std::uint32_t, 2> out{};
  seq.generate(out.begin(), out.end());
  return (static_cast<std::uint64_t>(out[0]) << 32) | out[1];
}

std::pair<Dataset, Dataset> split_train_val(const Dataset& data, std::uint64_t seed) {
  if (data.size() < 2) throw ValidationError("split_train_val: need at least 2 samples");
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(derive_seed(seed, kSplit));
  std::shuffle(order.begin(), order.end(), rng);
  const std::size_t half = data.size() / 2;
  std::sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(half));
  std::sort(order.begin() + static_cast<std::ptrdiff_t>(half), order.end());
  std::pair<Dataset, Dataset> out;
  for (std::size_t i = 0; i < order.size(); ++i) (i < half ? out.first : out.second).push_back(data[order[i]]);
  return out;
}

std::vector<std::uint8_t> predict(const SegNet<float>& net, const Dataset& data, int batch_size) {
  NoGradScope<float> no_grad;
  std::vector<std::uint8_t> preds;
  for (const auto& idx : make_batches(data.size(), batch_size, nullptr)) {
    const SegSample& s = data[idx[0]];
    const auto batch = make_batch<float>(data, idx, s.height, s.width);
    const Tensor<float> logits = net.forward(batch.images);
    const std::int64_t n = logits.dim(0), k = logits.dim(1), hw = logits.dim(2) * logits.dim(3);
    auto d = logits.data();
    for (std::int64_t b = 0; b < n; ++b) {
      for (std::int64_t p = 0; p < hw; ++p) {
        std::int64_t best = 0;
        for (std::int64_t c = 1; c < k; ++c) {
          if (d[static_cast<std::size_t>((b * k + c) * hw + p)] > d[static_cast<std::size_t>((b * k + best) * hw + p)]) {
            best = c;
          }
        }
        preds.push_back(static_cast<std::uint8_t>(best));
      }
    }
  }
  return preds;
}

MiouResult evaluate_miou(const SegNet<float>& net, const Dataset& data, int batch_size) {
  const auto preds = predict(net, data, batch_size);
  ConfusionMatrix cm(net.config().num_classes);
  std::size_t off = 0;
  for (const auto& s : data) {
    cm.add(std::span(preds).subspan(off, s.labels.size()), s.labels);
    off += s.labels.size();
  }
  return miou(cm);
}

double train_step(const SegNet<float>& net, Sgd<float>& opt, const Batch<float>& batch) {
  Tape<float> tape;
  TapeScope<float> scope(tape);
  const Tensor<float> loss = cross_entropy(net.forward(batch.images), batch.labels);
  const double value = static_cast<double>(loss.item());
  if (!std::isfinite(value)) throw RuntimeFailure("non-finite loss");
  tape.backward(loss);
  opt.step();
  return value;
}

CellSearchResult stage1_cell_search(const Dataset& train, const SearchConfig& cfg, MetricsLog* log) {
  cfg.validate();
  require_data(train, "cell search", cfg);
  const auto [wdata, adata] = split_train_val(train, cfg.seed);
  Rng init(derive_seed(cfg.seed, kInit)), order(derive_seed(cfg.seed, kOrder)), crop(derive_seed(cfg.seed, kCrop));
  SegNet<float> net = SegNet<float>::cell_search(cfg, init);
  Sgd<float> wopt(net.weights().weights(), {cfg.lr_w, cfg.momentum_w, cfg.wd_w});
  Sgd<float> aopt(net.arch().weights(), {cfg.lr_arch, cfg.momentum_arch, cfg.wd_arch});

  if (log) log->rows.push_back({0, "cell_search", std::nan(""), evaluate_miou(net, adata, cfg.batch_size).mean});
  for (int epoch = 1; epoch <= cfg.epochs_cell; ++epoch) {
    wopt.set_lr(cosine_lr(cfg.lr_w, epoch - 1, cfg.epochs_cell));
    auto wb = make_batches(wdata.size(), cfg.batch_size, &order);
    auto ab = make_batches(adata.size(), cfg.batch_size, &order);
    double total = 0.0;
    std::size_t count = 0;
    for (std::size_t b = 0; b < wb.size(); ++b) {
      set_trainable(net.weights(), true);
      set_trainable(net.arch(), false);
      double loss = std::nan("");
      try {
        loss = train_step(net, wopt, make_batch<float>(wdata, wb[b], cfg.crop_h, cfg.crop_w, &crop));
        set_trainable(net.weights(), false);
        set_trainable(net.arch(), true);
        train_step(net, aopt, make_batch<float>(adata, ab[b % ab.size()], cfg.crop_h, cfg.crop_w, &crop));
      } catch (const RuntimeFailure&) {
        loss = std::nan("");
      }
      guard(loss, "cell search", epoch);
      total += loss * static_cast<double>(wb[b].size());
      count += wb[b].size();
    }
    set_trainable(net.weights(), true);
    set_trainable(net.arch(), true);
    if (log) {
      log->rows.push_back({epoch, "cell_search", total / static_cast<double>(count),
                           evaluate_miou(net, adata, cfg.batch_size).mean});
    }
  }
  CellSearchResult r;
  r.genotype = discretize(net.alpha(), cfg.channels, cfg.rsp);
  for (float v : net.alpha().data()) r.alpha.push_back(static_cast<double>(v));
  return r;
}

PathSearchResult stage2_path_search(const Dataset& train, const Genotype& genotype, const SearchConfig& cfg,
                                    MetricsLog* log) {
  cfg.validate();
  require_data(train, "path search", cfg);
  const auto [wdata, sdata] = split_train_val(train, cfg.seed);
  Rng init(derive_seed(cfg.seed, kInit + 16)), order(derive_seed(cfg.seed, kOrder + 16)),
      crop(derive_seed(cfg.seed, kCrop + 16));
  SegNet<float> net = SegNet<float>::path_search(cfg, genotype, init);
  Sgd<float> wopt(net.weights().weights(), {cfg.lr_w, cfg.momentum_w, cfg.wd_w});

  PathSearchResult r;
  for (int l = 0; l < cfg.layers; ++l) r.scores.emplace_back(static_cast<std::size_t>(l + 1), 0.0);
  auto score_pass = [&]() {
    NoGradScope<float> no_grad;
    for (const auto& idx : make_batches(sdata.size(), cfg.batch_size, nullptr)) {
      const SegSample& s = sdata[idx[0]];
      typename SegNet<float>::Trace trace;
      net.forward(make_batch<float>(sdata, idx, s.height, s.width).images, &trace);
      for (std::size_t l = 0; l < r.scores.size(); ++l) {
        for (std::size_t i = 0; i < r.scores[l].size(); ++i) r.scores[l][i] += trace.scores[l][i];
      }
      ++r.scoring_passes;
    }
  };

  const int scoring_epochs = (cfg.epochs_path + 3) / 4;
  for (int epoch = 1; epoch <= cfg.epochs_path; ++epoch) {
    wopt.set_lr(cosine_lr(cfg.lr_w, epoch - 1, cfg.epochs_path));
    const double loss = train_epoch(net, wopt, wdata, cfg, order, crop, "path search", epoch);
    if (epoch > cfg.epochs_path - scoring_epochs) score_pass();
    if (log) log->rows.push_back({epoch, "path_search", loss, evaluate_miou(net, sdata, cfg.batch_size).mean});
  }
  if (cfg.epochs_path == 0) score_pass();

  r.macro.k = cfg.k_paths;
  r.macro.mode = cfg.attention_mode;
  for (auto& layer : r.scores) {
    for (double& v : layer) v /= static_cast<double>(r.scoring_passes);
    r.macro.inputs.push_back(select_top_k(layer, std::min<int>(cfg.k_paths, static_cast<int>(layer.size()))));
  }
  return r;
}

TrainResult train_final(const Dataset& train, const Dataset& val, const Genotype& genotype,
                        const MacroGenotype& macro, const SearchConfig& cfg, MetricsLog* log) {
  cfg.validate();
  require_data(train, "train", cfg);
  require_data(val, "train (validation set)", cfg);
  Rng init(derive_seed(cfg.seed, kInit + 32)), order(derive_seed(cfg.seed, kOrder + 32)),
      crop(derive_seed(cfg.seed, kCrop + 32));
  TrainResult r;
  r.model = std::make_unique<SegNet<float>>(SegNet<float>::final_net(cfg, genotype, macro, init));
  r.params = r.model->weights().total();
  Sgd<float> wopt(r.model->weights().weights(), {cfg.lr_w, cfg.momentum_w, cfg.wd_w});
  for (int epoch = 1; epoch <= cfg.epochs_train; ++epoch) {
    wopt.set_lr(cosine_lr(cfg.lr_w, epoch - 1, cfg.epochs_train));
    const double loss = train_epoch(*r.model, wopt, train, cfg, order, crop, "train", epoch);
    if (log && epoch < cfg.epochs_train) {
      log->rows.push_back({epoch, "train", loss, evaluate_miou(*r.model, val, cfg.batch_size).mean});
    }
    if (epoch == cfg.epochs_train) {
      r.final_miou = evaluate_miou(*r.model, val, cfg.batch_size);
      if (log) log->rows.push_back({epoch, "train", loss, r.final_miou.mean});
    }
  }
  if (cfg.epochs_train == 0) r.final_miou = evaluate_miou(*r.model, val, cfg.batch_size);
  return r;
}

}  // namespace rspnet
