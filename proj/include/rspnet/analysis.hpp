#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "rspnet/cell.hpp"
#include "rspnet/supernet.hpp"

namespace rspnet {

enum class FlowActivation : std::uint8_t { Sigmoid, Relu };
enum class FlowArch : std::uint8_t { Plain, Residual, Csp };

FlowActivation parse_flow_activation(std::string_view name);
FlowArch parse_flow_arch(std::string_view name);
std::string_view flow_activation_name(FlowActivation a);
std::string_view flow_arch_name(FlowArch a);

struct GradFlowReport {
  int depth = 0;
  FlowActivation activation = FlowActivation::Sigmoid;
  FlowArch arch = FlowArch::Plain;
  std::vector<double> weight_grad_norms;  // layer 0 (closest to the input) first
  double first_last_ratio = 0.0;
  // Csp only: the input gradient of the bypassed half equals the upstream
  // gradient of the matching output slice bit for bit.
  bool bypass_exact = false;

  std::string table() const;
};

/// Chain of `depth` depthwise 1x1 convs with unit weights on a fixed random
/// input; loss = sum(out * r) for a fixed random r.
///   plain:    x <- act(w * x)
///   residual: x <- x + act(w * x)
///   csp:      x <- concat(act(w * x1) + x1, x2)
GradFlowReport grad_flow_report(int depth, FlowActivation activation, FlowArch arch, std::uint64_t seed = 0);

struct ParamCountRow {
  std::string variant;  // plain | rsp
  std::array<std::int64_t, kNumPrimitives> per_primitive{};  // edge params (conv + norm) by kind
  std::int64_t edge_conv = 0;  // conv kernels inside cells only
  std::int64_t non_edge = 0;   // stem, projections, head
  std::int64_t total = 0;
  std::int64_t analytic_total = 0;
};

struct ParamCountReport {
  ParamCountRow plain, rsp;
  double ratio = 0.0;       // rsp.total / plain.total
  double edge_ratio = 0.0;  // rsp.edge_conv / plain.edge_conv (NaN if plain has none)

  std::string table() const;
};

/// Layer l takes its min(k, l+1) most recent candidates.
MacroGenotype recent_macro(int layers, int k, AttentionMode mode);

/// Builds the final network with rsp off and on (same genotype kinds and
/// macro) and counts weights by enumerating their buffers.
ParamCountReport count_params_report(const Genotype& genotype, const SearchConfig& cfg, const MacroGenotype& macro);
ParamCountReport count_params_report(const Genotype& genotype, const SearchConfig& cfg);

}  // namespace rspnet
