#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "rspnet/cell.hpp"
#include "rspnet/params.hpp"
#include "rspnet/path_attention.hpp"
#include "rspnet/rng.hpp"

namespace rspnet {

struct SearchConfig {
  int layers = 4;
  std::int64_t channels = 16;
  int cells_per_layer_search = 1;
  int stack_n = 4;
  int k_paths = 2;
  bool rsp = true;
  AttentionMode attention_mode = AttentionMode::PathNormalized;
  int epochs_cell = 20;
  int epochs_path = 10;
  int epochs_train = 40;
  int batch_size = 8;
  double lr_w = 0.05;
  double momentum_w = 0.95;
  double wd_w = 0.0005;
  double lr_arch = 0.005;
  double momentum_arch = 0.0;
  double wd_arch = 0.0001;
  std::uint64_t seed = 0;
  std::int64_t crop_h = 64;
  std::int64_t crop_w = 64;
  int num_classes = 3;
  int image_channels = 1;

  void validate() const;
};

/// `key=value` lines; blank lines and `#` comments are skipped. Keys not
/// present keep their value from `base`.
SearchConfig parse_config(std::string_view text, SearchConfig base = {});
SearchConfig load_config(const std::string& path, SearchConfig base = {});
/// Sets one field by name; throws ValidationError on an unknown key or bad value.
void set_config_value(SearchConfig& cfg, std::string_view key, std::string_view value);
/// Every field, one `key=value` per line, in a fixed order.
std::string serialize_config(const SearchConfig& cfg);

enum class NetKind : std::uint8_t {
  CellSearch,  // one mixed cell per layer, chain macro, shared architecture logits
  PathSearch,  // one discrete cell per layer, hard top-k path attention per forward
  Final,       // stack_n discrete cells per layer, fixed macro genotype
};

/// Stem (two stride-2 conv3x3 + norm, x4 downsampling), L layers of cells fed
/// through 1x1 projections, and a 1x1 classifier upsampled to input size.
template <typename T>
class SegNet {
 public:
  struct Trace {
    std::vector<std::vector<double>> scores;  // per layer, over candidates 0..l
    std::vector<std::vector<int>> selected;
  };

  static SegNet cell_search(const SearchConfig& cfg, Rng& rng);
  static SegNet path_search(const SearchConfig& cfg, const Genotype& genotype, Rng& rng);
  static SegNet final_net(const SearchConfig& cfg, const Genotype& genotype, const MacroGenotype& macro, Rng& rng);

  /// Logits (N, num_classes, H, W). In path-search mode `trace` receives the
  /// per-layer path scores and selections of this forward pass.
  Tensor<T> forward(const Tensor<T>& images, Trace* trace = nullptr) const;

  NetKind kind() const { return kind_; }
  const SearchConfig& config() const { return cfg_; }
  const Genotype& genotype() const { return genotype_; }
  const MacroGenotype& macro() const { return macro_; }

  ParamStore<T>& weights() { return *weights_; }
  const ParamStore<T>& weights() const { return *weights_; }
  ParamStore<T>& arch() { return *arch_; }
  const ParamStore<T>& arch() const { return *arch_; }
  Tensor<T> alpha() const { return alpha_; }

 private:
  struct Layer {
    std::vector<Projection<T>> proj;
    std::vector<int> sources;  // candidate index feeding each projection
    std::vector<MixedCell<T>> mixed;
    std::optional<CellStack<T>> cells;
  };

  SegNet(NetKind kind, const SearchConfig& cfg, Genotype genotype, MacroGenotype macro, Rng& rng);

  NetKind kind_;
  SearchConfig cfg_;
  Genotype genotype_;
  MacroGenotype macro_;
  // Heap-held so moving the net keeps weight handles registered in one place.
  std::unique_ptr<ParamStore<T>> weights_ = std::make_unique<ParamStore<T>>();
  std::unique_ptr<ParamStore<T>> arch_ = std::make_unique<ParamStore<T>>();
  Tensor<T> alpha_;
  Tensor<T> stem_w1, stem_g1, stem_b1, stem_w2, stem_g2, stem_b2;
  std::vector<Layer> layers_;
  Tensor<T> head_w, head_b;
};

/// Learnable scalars of the final network computed from the architecture
/// alone (the weight enumeration must agree).
std::int64_t final_param_count(const SearchConfig& cfg, const Genotype& genotype, const MacroGenotype& macro);

/// Writes config, genotypes and every weight (hex floats) to a text file.
void save_model(const SegNet<float>& net, const std::string& path);
SegNet<float> load_model(const std::string& path);

}  // namespace rspnet
