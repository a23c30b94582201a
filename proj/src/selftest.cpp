#include "rspnet/selftest.hpp"

#include <cmath>
#include <cstdio>
#include <memory>

#include "rspnet/analysis.hpp"
#include "rspnet/cell.hpp"
#include "rspnet/metrics.hpp"
#include "rspnet/ops.hpp"
#include "rspnet/path_attention.hpp"
#include "rspnet/primitives.hpp"
#include "rspnet/supernet.hpp"

namespace rspnet {

namespace {

template <typename T>
Tensor<T> probe(const Tensor<T>& y, Rng& rng) {
  return sum(mul(y, uniform_tensor<T>(y.shape(), 0.5, 1.5, rng)));
}

template <typename T>
LossProblem<T> primitive_case(PrimitiveKind k, std::uint64_t seed) {
  Rng rng(seed);
  auto store = std::make_shared<ParamStore<T>>();
  auto op = make_primitive<T>(k, 8, "p", *store, rng);
  auto x = uniform_tensor<T>(Shape{2, 8, 8, 8}, -1, 1, rng);
  auto r = uniform_tensor<T>(x.shape(), 0.5, 1.5, rng);
  auto params = store->tensors();
  params.push_back(x);
  return {[op, x, r, store] { return sum(mul(apply(op, x), r)); }, params};
}

template <typename T>
LossProblem<T> mixed_case(std::uint64_t seed) {
  Rng rng(seed);
  auto store = std::make_shared<ParamStore<T>>();
  std::vector<PrimitiveOp<T>> ops;
  for (auto k : kAllPrimitives) ops.push_back(make_primitive<T>(k, 8, "m." + std::string(primitive_name(k)), *store, rng));
  auto alpha = store->create("alpha", normal_tensor<T>(Shape{5}, 0.0, 1.0, rng));
  auto x = uniform_tensor<T>(Shape{2, 8, 8, 8}, -1, 1, rng);
  auto r = uniform_tensor<T>(x.shape(), 0.5, 1.5, rng);
  auto params = store->tensors();
  params.push_back(x);
  return {[ops, alpha, x, r, store] { return sum(mul(mixed_op_forward<T>(x, alpha, ops), r)); }, params};
}

template <typename T>
LossProblem<T> cell_case(std::uint64_t seed) {
  Rng rng(seed);
  auto store = std::make_shared<ParamStore<T>>();
  auto cell = std::make_shared<MixedCell<T>>(8, true, "c", *store, rng);
  auto alpha = store->create("alpha", normal_tensor<T>(Shape{3, 5}, 0.0, 1.0, rng));
  auto x = uniform_tensor<T>(Shape{2, 8, 8, 8}, -1, 1, rng);
  auto r = uniform_tensor<T>(x.shape(), 0.5, 1.5, rng);
  auto params = store->tensors();
  params.push_back(x);
  return {[cell, alpha, x, r, store] { return sum(mul(cell->forward(x, alpha), r)); }, params};
}

// Three candidates of different channel counts and sizes, projected to 8
// channels at 16x16, scored, top-2 fused.
template <typename T>
LossProblem<T> pam_case(AttentionMode mode, std::uint64_t seed) {
  Rng rng(seed);
  auto store = std::make_shared<ParamStore<T>>();
  const std::array<std::int64_t, 3> chans{4, 8, 6}, sides{16, 8, 12};
  auto feats = std::make_shared<std::vector<Tensor<T>>>();
  auto proj = std::make_shared<std::vector<Projection<T>>>();
  for (std::size_t i = 0; i < 3; ++i) {
    feats->push_back(uniform_tensor<T>(Shape{2, chans[i], sides[i], sides[i]}, -1, 1, rng));
    proj->push_back(make_projection<T>(chans[i], 8, "proj" + std::to_string(i), *store, rng));
  }
  auto r = uniform_tensor<T>(Shape{2, 8, 16, 16}, 0.5, 1.5, rng);
  auto params = store->tensors();
  for (const auto& f : *feats) params.push_back(f);
  return {[feats, proj, r, mode, store] {
            const auto normed = normalize_inputs<T>(*feats, *proj, 16, 16);
            const auto sel = select_top_k(path_scores<T>(normed, mode), 2);
            return sum(mul(fuse_selected<T>(normed, sel), r));
          },
          params};
}

template <typename T>
LossProblem<T> supernet_case(std::uint64_t seed) {
  Rng rng(seed);
  SearchConfig cfg;
  cfg.layers = 2;
  cfg.channels = 4;
  cfg.num_classes = 3;
  auto net = std::make_shared<SegNet<T>>(SegNet<T>::cell_search(cfg, rng));
  // Unit-scale noise so the softmax over kinds is far from uniform.
  for (T& a : net->alpha().data()) a = static_cast<T>(static_cast<float>(std::normal_distribution<double>(0, 1)(rng)));
  auto x = uniform_tensor<T>(Shape{2, 1, 16, 16}, -2, 2, rng);
  auto labels = std::make_shared<std::vector<std::uint8_t>>(2 * 16 * 16);
  std::uniform_int_distribution<int> cls(0, 2);
  for (auto& l : *labels) l = static_cast<std::uint8_t>(cls(rng));
  auto params = net->weights().tensors();
  params.push_back(net->alpha());
  params.push_back(x);
  return {[net, x, labels] { return cross_entropy(net->forward(x), *labels); }, params};
}

CheckResult check(std::string name, bool ok, std::string detail) { return {std::move(name), ok, std::move(detail)}; }

std::string fmt(const char* f, double v) {
  char buf[96];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

}  // namespace

std::vector<std::string> grad_components() {
  std::vector<std::string> out;
  for (auto k : kAllPrimitives) out.push_back("primitive:" + std::string(primitive_name(k)));
  out.insert(out.end(), {"mixed_op", "cell", "pam:literal", "pam:pathnorm", "supernet"});
  return out;
}

template <typename T>
LossProblem<T> grad_problem(const std::string& component, std::uint64_t seed) {
  if (component.starts_with("primitive:")) return primitive_case<T>(parse_primitive(component.substr(10)), seed);
  if (component == "mixed_op") return mixed_case<T>(seed);
  if (component == "cell") return cell_case<T>(seed);
  if (component.starts_with("pam:")) return pam_case<T>(parse_attention_mode(component.substr(4)), seed);
  if (component == "supernet") return supernet_case<T>(seed);
  throw ValidationError("unknown gradient component '" + component + "'");
}

template LossProblem<float> grad_problem<float>(const std::string&, std::uint64_t);
template LossProblem<double> grad_problem<double>(const std::string&, std::uint64_t);
template LossProblem<long double> grad_problem<long double>(const std::string&, std::uint64_t);

GradCase run_grad_case(const std::string& component, std::uint64_t seed, std::optional<std::int64_t> max_entries) {
  GradCheckOptions opts{.step = 1e-6, .max_entries_per_tensor = max_entries, .sample_seed = seed};
  GradCase c{component, seed, {}, {}};
  auto p64 = grad_problem<double>(component, seed);
  auto p80 = grad_problem<long double>(component, seed);
  c.f64 = grad_check_mixed(p64, p80, opts);
  auto p32 = grad_problem<float>(component, seed);
  c.f32 = grad_check_mixed(p32, p80, opts);
  return c;
}

std::vector<CheckResult> run_selftest(std::uint64_t seed) {
  std::vector<CheckResult> out;
  for (const auto& comp : grad_components()) {
    double rel = 0, scaled = 0;
    for (std::uint64_t s = seed; s < seed + 2; ++s) {
      const auto c = run_grad_case(comp, s, 8);
      rel = std::max(rel, c.f64.max_rel_error);
      scaled = std::max(scaled, c.f32.max_scaled_error);
    }
    out.push_back(check("grad " + comp, rel <= 1e-3 && scaled <= 1e-4,
                        fmt("rel64=%.2e", rel) + fmt(" scaled32=%.2e", scaled)));
  }

  {
    Rng rng(seed);
    std::vector<ChannelFeatures> f;
    for (int i = 0; i < 3; ++i) f.push_back(channel_features(uniform_tensor<double>(Shape{2, 4, 6, 6}, -1, 1, rng)));
    double worst = 0;
    for (const auto& a : f) {
      for (const auto& b : f) {
        double s = 0;
        for (double v : channel_attention(a, b)) s += v;
        worst = std::max(worst, std::abs(s - 1.0));
      }
    }
    out.push_back(check("attention sums to one", worst <= 1e-6, fmt("max |sum-1|=%.2e", worst)));
    double dev = 0;
    for (double s : path_scores(std::span<const ChannelFeatures>(f), AttentionMode::Literal)) {
      dev = std::max(dev, std::abs(s - 3.0));
    }
    out.push_back(check("literal scores equal N", dev <= 1e-4, fmt("max |S-N|=%.2e", dev)));
  }

  {
    Rng rng(seed);
    auto alpha = normal_tensor<double>(Shape{3, 5}, 0, 1, rng);
    auto shifted = alpha.clone();
    for (std::int64_t e = 0; e < 3; ++e) {
      for (std::int64_t o = 0; o < 5; ++o) shifted.at(e * 5 + o) += 3.0 * static_cast<double>(e + 1);
    }
    out.push_back(check("discretize shift invariance", discretize(alpha, 16, true) == discretize(shifted, 16, true), ""));
  }

  {
    ConfusionMatrix cm(2);
    const std::vector<std::uint8_t> pred(4, 0), truth{0, 0, 1, 1};
    cm.add(pred, truth);
    const auto m = miou(cm);
    out.push_back(check("miou half/half example", m.iou[0] == 0.5 && m.iou[1] == 0.0 && m.mean == 0.25,
                        fmt("mean=%.4f", m.mean)));
  }

  {
    const auto plain = grad_flow_report(20, FlowActivation::Sigmoid, FlowArch::Plain, seed);
    const auto res = grad_flow_report(20, FlowActivation::Sigmoid, FlowArch::Residual, seed);
    const auto csp = grad_flow_report(20, FlowActivation::Sigmoid, FlowArch::Csp, seed);
    out.push_back(check("vanishing gradient ordering",
                        plain.first_last_ratio <= 1e-8 && res.first_last_ratio >= 1e-3 && csp.bypass_exact,
                        fmt("plain=%.2e", plain.first_last_ratio) + fmt(" residual=%.2e", res.first_last_ratio)));
  }

  {
    const auto rep = count_params_report(uniform_genotype(PrimitiveKind::Conv3x3, 16, true), SearchConfig{});
    const bool ok = rep.rsp.edge_conv * 4 == rep.plain.edge_conv && rep.ratio <= 0.30 &&
                    rep.plain.total == rep.plain.analytic_total && rep.rsp.total == rep.rsp.analytic_total;
    out.push_back(check("rsp parameter ratio", ok, fmt("edge=%.6f", rep.edge_ratio) + fmt(" full=%.6f", rep.ratio)));
  }
  return out;
}

}  // namespace rspnet
