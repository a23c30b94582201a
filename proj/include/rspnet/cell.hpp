#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "rspnet/params.hpp"
#include "rspnet/primitives.hpp"
#include "rspnet/rng.hpp"
#include "rspnet/tensor.hpp"

namespace rspnet {

// Node 0 is the cell input; nodes 1 and 2 are intermediate.
//   node1  = e0(x)
//   node2  = mean(e1(x), e2(node1))
//   output = mean(node1, node2)
inline constexpr int kCellNodes = 2;
inline constexpr std::size_t kCellEdges = 3;
inline constexpr std::array<std::pair<int, int>, kCellEdges> kEdgeEndpoints = {{{0, 1}, {0, 2}, {1, 2}}};

struct Genotype {
  std::int64_t channels = 16;
  bool rsp = true;
  std::array<PrimitiveKind, kCellEdges> kinds{};

  friend bool operator==(const Genotype&, const Genotype&) = default;
};

/// Text form: header lines `channels C`, `rsp 0|1`, `nodes 2`, then one
/// `edge <src> <dst> <kind>` line per edge.
std::string serialize_genotype(const Genotype& g);
Genotype parse_genotype(std::string_view text);
void save_genotype(const Genotype& g, const std::string& path);
Genotype load_genotype(const std::string& path);

Genotype uniform_genotype(PrimitiveKind kind, std::int64_t channels, bool rsp);
Genotype random_genotype(Rng& rng, std::int64_t channels, bool rsp);

/// Architecture parameters, one row of 5 logits per edge.
template <typename T>
Tensor<T> make_arch_params(ParamStore<T>& store, Rng& rng, double noise = 1e-3);

/// Per edge, the kind with the largest softmax weight; ties go to the lowest
/// kind index. Softmax is monotone, so the argmax is taken on the logits.
template <typename T>
Genotype discretize(const Tensor<T>& alpha, std::int64_t channels, bool rsp);

/// sum_o softmax(edge_alphas)_o * apply(ops[o], x).
template <typename T>
Tensor<T> mixed_op_forward(const Tensor<T>& x, const Tensor<T>& edge_alphas,
                           std::span<const PrimitiveOp<T>> ops);

/// Row `edge` of an (edges, 5) logit matrix as a length-5 tensor.
template <typename T>
Tensor<T> alpha_row(const Tensor<T>& alpha, std::size_t edge);

/// Search-time cell: every edge is a mixed op over all five primitives.
template <typename T>
class MixedCell {
 public:
  MixedCell(std::int64_t channels, bool rsp, const std::string& prefix, ParamStore<T>& store, Rng& rng);

  Tensor<T> forward(const Tensor<T>& x, const Tensor<T>& alpha) const;

  std::int64_t channels() const { return channels_; }
  bool rsp() const { return rsp_; }
  std::span<const PrimitiveOp<T>> edge_ops(std::size_t edge) const { return ops_[edge]; }

 private:
  std::int64_t channels_;
  bool rsp_;
  std::array<std::array<PrimitiveOp<T>, kNumPrimitives>, kCellEdges> ops_;
};

/// Cell with one fixed primitive per edge.
template <typename T>
class DiscreteCell {
 public:
  DiscreteCell(const Genotype& genotype, const std::string& prefix, ParamStore<T>& store, Rng& rng);

  Tensor<T> forward(const Tensor<T>& x) const;
  const Genotype& genotype() const { return genotype_; }

 private:
  Genotype genotype_;
  std::array<PrimitiveOp<T>, kCellEdges> ops_;
};

/// n sequential cells sharing one genotype, each with its own weights.
template <typename T>
class CellStack {
 public:
  CellStack(const Genotype& genotype, int n, const std::string& prefix, ParamStore<T>& store, Rng& rng);

  Tensor<T> forward(const Tensor<T>& x) const;
  std::size_t size() const { return cells_.size(); }

 private:
  std::vector<DiscreteCell<T>> cells_;
};

/// Learnable scalars of one discrete cell: conv weights plus norm affine.
std::int64_t cell_param_count(const Genotype& g);
/// Conv weights only (what the RSP ratio is stated over).
std::int64_t cell_conv_param_count(const Genotype& g);

}  // namespace rspnet
