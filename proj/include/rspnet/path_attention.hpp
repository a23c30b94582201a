#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "rspnet/params.hpp"
#include "rspnet/rng.hpp"
#include "rspnet/tensor.hpp"

namespace rspnet {

enum class AttentionMode : std::uint8_t {
  Literal,         // softmax over channels c for each path pair; S_i == N
  PathNormalized,  // softmax over source paths i for each (j, c)
};

std::string_view attention_mode_name(AttentionMode mode);  // "literal" | "pathnorm"
AttentionMode parse_attention_mode(std::string_view name);

/// 1x1 convolution with bias used to bring a candidate to C channels.
template <typename T>
struct Projection {
  Tensor<T> weight;
  Tensor<T> bias;
};

template <typename T>
Projection<T> make_projection(std::int64_t in_channels, std::int64_t out_channels, const std::string& prefix,
                              ParamStore<T>& store, Rng& rng);

/// Projects each candidate with its 1x1 conv and resizes it bilinearly to out_h x out_w.
template <typename T>
std::vector<Tensor<T>> normalize_inputs(std::span<const Tensor<T>> features, std::span<const Projection<T>> proj,
                                        std::int64_t out_h, std::int64_t out_w);

/// Batch-averaged, detached feature map with each channel flattened.
struct ChannelFeatures {
  std::int64_t channels = 0;
  std::int64_t length = 0;  // H * W
  std::vector<double> values;  // channels x length
};

template <typename T>
ChannelFeatures channel_features(const Tensor<T>& x);

/// Per-channel inner products F_i^c . F_j^c divided by H * W.
std::vector<double> channel_products(const ChannelFeatures& fi, const ChannelFeatures& fj);

/// Max-shifted softmax of per-channel products over the channel axis.
std::vector<double> channel_softmax(std::span<const double> products);

/// S^c_{i,j}, normalized over channels (the literal form).
std::vector<double> channel_attention(const ChannelFeatures& fi, const ChannelFeatures& fj);

struct PathScores {
  std::vector<double> scores;
  std::vector<int> selected;
};

/// products[(i * N + j) * C + c]; S_i accumulates j outer, c inner.
std::vector<double> scores_from_products(std::span<const double> products, std::size_t n, std::size_t c,
                                         AttentionMode mode);

std::vector<double> path_scores(std::span<const ChannelFeatures> features, AttentionMode mode);

template <typename T>
std::vector<double> path_scores(std::span<const Tensor<T>> features, AttentionMode mode);

/// Indices of the k largest scores in descending order; ties go to the lower index.
std::vector<int> select_top_k(std::span<const double> scores, int k);

/// Element-wise sum of the selected features, in the given order.
template <typename T>
Tensor<T> fuse_selected(std::span<const Tensor<T>> features, std::span<const int> indices);

/// Per-layer selected candidate indices. Layer i chooses from candidates 0..i.
struct MacroGenotype {
  int k = 2;
  AttentionMode mode = AttentionMode::PathNormalized;
  std::vector<std::vector<int>> inputs;

  friend bool operator==(const MacroGenotype&, const MacroGenotype&) = default;
};

/// Header `k <k>`, `mode <literal|pathnorm>`, then `layer <i> inputs <a>,<b>`.
std::string serialize_macro(const MacroGenotype& m);
MacroGenotype parse_macro(std::string_view text);
void save_macro(const MacroGenotype& m, const std::string& path);
MacroGenotype load_macro(const std::string& path);

/// Layer l feeds from candidate l (the previous layer's output) only.
MacroGenotype chain_macro(int layers, AttentionMode mode = AttentionMode::PathNormalized);

}  // namespace rspnet
