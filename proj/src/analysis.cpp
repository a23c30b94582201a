#include "rspnet/analysis.hpp"

#include <cmath>
#include <cstdio>
#include <cstring>
#include <limits>

#include "rspnet/error.hpp"
#include "rspnet/ops.hpp"

namespace rspnet {

FlowActivation parse_flow_activation(std::string_view name) {
  if (name == "sigmoid") return FlowActivation::Sigmoid;
  if (name == "relu") return FlowActivation::Relu;
  throw ValidationError("unknown activation '" + std::string(name) + "' (expected sigmoid or relu)");
}

FlowArch parse_flow_arch(std::string_view name) {
  if (name == "plain") return FlowArch::Plain;
  if (name == "residual") return FlowArch::Residual;
  if (name == "csp") return FlowArch::Csp;
  throw ValidationError("unknown architecture '" + std::string(name) + "' (expected plain, residual or csp)");
}

std::string_view flow_activation_name(FlowActivation a) { return a == FlowActivation::Sigmoid ? "sigmoid" : "relu"; }

std::string_view flow_arch_name(FlowArch a) {
  return a == FlowArch::Plain ? "plain" : a == FlowArch::Residual ? "residual" : "csp";
}

std::string GradFlowReport::table() const {
  std::string out = "arch=" + std::string(flow_arch_name(arch)) + " activation=" +
                    std::string(flow_activation_name(activation)) + " depth=" + std::to_string(depth) + "\nlayer,grad_norm\n";
  char buf[96];
  for (std::size_t l = 0; l < weight_grad_norms.size(); ++l) {
    std::snprintf(buf, sizeof buf, "%zu,%.6e\n", l, weight_grad_norms[l]);
    out += buf;
  }
  std::snprintf(buf, sizeof buf, "first_last_ratio=%.6e\n", first_last_ratio);
  out += buf;
  if (arch == FlowArch::Csp) out += std::string("bypass_exact=") + (bypass_exact ? "1" : "0") + "\n";
  return out;
}

GradFlowReport grad_flow_report(int depth, FlowActivation activation, FlowArch arch, std::uint64_t seed) {
  if (depth < 2) throw ValidationError("grad_flow: depth must be >= 2");
  constexpr std::int64_t kC = 4, kH = 4, kW = 4;
  Rng rng(seed);
  Tensor<double> x = uniform_tensor<double>(Shape{1, kC, kH, kW}, -1.0, 1.0, rng, true);
  const Tensor<double> r = uniform_tensor<double>(Shape{1, kC, kH, kW}, 0.5, 1.5, rng);
  const std::int64_t width = arch == FlowArch::Csp ? kC / 2 : kC;
  std::vector<Tensor<double>> w;
  for (int l = 0; l < depth; ++l) w.push_back(Tensor<double>::full(Shape{width, 1, 1, 1}, 1.0, true));

  auto act = [&](const Tensor<double>& v) { return activation == FlowActivation::Sigmoid ? sigmoid(v) : relu(v); };
  const Conv2dOptions dw{.groups = width};

  Tape<double> tape;
  TapeScope<double> scope(tape);
  Tensor<double> h = x;
  for (int l = 0; l < depth; ++l) {
    const Tensor<double>& wl = w[static_cast<std::size_t>(l)];
    if (arch == FlowArch::Plain) {
      h = act(conv2d(h, wl, Tensor<double>(), dw));
    } else if (arch == FlowArch::Residual) {
      h = add(h, act(conv2d(h, wl, Tensor<double>(), dw)));
    } else {
      const Tensor<double> x1 = narrow(h, 1, 0, width), x2 = narrow(h, 1, width, kC - width);
      const std::array<Tensor<double>, 2> parts{add(act(conv2d(x1, wl, Tensor<double>(), dw)), x1), x2};
      h = concat<double>(parts, 1);
    }
  }
  tape.backward(sum(mul(h, r)));

  GradFlowReport rep;
  rep.depth = depth;
  rep.activation = activation;
  rep.arch = arch;
  for (const auto& wl : w) {
    double s = 0.0;
    if (wl.has_grad()) {
      for (double g : wl.grad()) s += g * g;
    }
    rep.weight_grad_norms.push_back(std::sqrt(s));
  }
  const double last = rep.weight_grad_norms.back();
  rep.first_last_ratio = last > 0 ? rep.weight_grad_norms.front() / last : std::numeric_limits<double>::infinity();
  if (arch == FlowArch::Csp) {
    const std::int64_t hw = kH * kW;
    auto gx = x.grad();
    auto rd = r.data();
    rep.bypass_exact = std::memcmp(gx.data() + width * hw, rd.data() + width * hw,
                                   static_cast<std::size_t>((kC - width) * hw) * sizeof(double)) == 0;
  }
  return rep;
}

MacroGenotype recent_macro(int layers, int k, AttentionMode mode) {
  MacroGenotype m;
  m.k = k;
  m.mode = mode;
  for (int l = 0; l < layers; ++l) {
    std::vector<int> in;
    for (int i = l; i >= 0 && static_cast<int>(in.size()) < k; --i) in.push_back(i);
    m.inputs.push_back(in);
  }
  return m;
}

namespace {

// Parses "layerL.cellI.edgeE." ids; returns the edge or -1 for non-cell weights.
int edge_of(std::string_view id) {
  const auto cell = id.find(".cell");
  if (cell == std::string_view::npos) return -1;
  const auto edge = id.find(".edge", cell);
  if (edge == std::string_view::npos) return -1;
  return id[edge + 5] - '0';
}

ParamCountRow enumerate(const Genotype& g, SearchConfig cfg, const MacroGenotype& macro, const char* variant) {
  cfg.rsp = g.rsp;
  Rng rng(0);
  const SegNet<float> net = SegNet<float>::final_net(cfg, g, macro, rng);
  ParamCountRow row;
  row.variant = variant;
  for (const auto& w : net.weights().weights()) {
    const std::int64_t n = w.tensor.numel();
    row.total += n;
    const int e = edge_of(w.id);
    if (e < 0) {
      row.non_edge += n;
      continue;
    }
    const auto kind = g.kinds[static_cast<std::size_t>(e)];
    row.per_primitive[static_cast<std::size_t>(kind)] += n;
    if (w.id.ends_with(".weight")) row.edge_conv += n;
  }
  row.analytic_total = final_param_count(cfg, g, macro);
  return row;
}

}  // namespace

ParamCountReport count_params_report(const Genotype& genotype, const SearchConfig& cfg, const MacroGenotype& macro) {
  Genotype plain = genotype, rsp = genotype;
  plain.rsp = false;
  rsp.rsp = true;
  SearchConfig c = cfg;
  c.channels = genotype.channels;
  ParamCountReport rep;
  rep.plain = enumerate(plain, c, macro, "plain");
  rep.rsp = enumerate(rsp, c, macro, "rsp");
  rep.ratio = static_cast<double>(rep.rsp.total) / static_cast<double>(rep.plain.total);
  rep.edge_ratio = rep.plain.edge_conv > 0
                       ? static_cast<double>(rep.rsp.edge_conv) / static_cast<double>(rep.plain.edge_conv)
                       : std::numeric_limits<double>::quiet_NaN();
  return rep;
}

ParamCountReport count_params_report(const Genotype& genotype, const SearchConfig& cfg) {
  return count_params_report(genotype, cfg, recent_macro(cfg.layers, cfg.k_paths, cfg.attention_mode));
}

std::string ParamCountReport::table() const {
  std::string out = "variant";
  for (auto k : kAllPrimitives) out += "," + std::string(primitive_name(k));
  out += ",edge_conv,non_edge,total\n";
  for (const ParamCountRow* row : {&plain, &rsp}) {
    out += row->variant;
    for (auto n : row->per_primitive) out += "," + std::to_string(n);
    out += "," + std::to_string(row->edge_conv) + "," + std::to_string(row->non_edge) + "," +
           std::to_string(row->total) + "\n";
  }
  char buf[96];
  std::snprintf(buf, sizeof buf, "ratio=%.6f edge_ratio=%.6f\n", ratio, edge_ratio);
  return out + buf;
}

}  // namespace rspnet
