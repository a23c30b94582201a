#include "rspnet/cell.hpp"

#include <charconv>
#include <fstream>
#include <sstream>

#include "rspnet/error.hpp"
#include "rspnet/ops.hpp"

namespace rspnet {

namespace {

std::vector<std::string_view> tokens(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t pos = 0;
  while (pos <= line.size()) {
    const std::size_t next = line.find(' ', pos);
    const std::size_t end = next == std::string_view::npos ? line.size() : next;
    out.push_back(line.substr(pos, end - pos));
    if (next == std::string_view::npos) break;
    pos = next + 1;
  }
  return out;
}

std::int64_t parse_int(std::string_view s, std::string_view what) {
  std::int64_t v = 0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size()) {
    throw ValidationError("genotype: bad " + std::string(what) + " '" + std::string(s) + "'");
  }
  return v;
}

template <typename T, typename EdgeFn>
Tensor<T> combine_nodes(const Tensor<T>& x, EdgeFn&& edge) {
  Tensor<T> node1 = edge(0, x);
  Tensor<T> node2 = scale(add(edge(1, x), edge(2, node1)), 0.5);
  return scale(add(node1, node2), 0.5);
}

std::int64_t op_channels(std::int64_t channels, bool rsp) {
  if (channels < 1) throw ValidationError("cell: channels must be >= 1");
  if (rsp && channels % 2 != 0) {
    throw ValidationError("cell: RSP needs an even channel width, got " + std::to_string(channels));
  }
  return rsp ? channels / 2 : channels;
}

template <typename T>
void require_channels(const Tensor<T>& x, std::int64_t channels) {
  if (x.shape().rank() != 4 || x.dim(1) != channels) {
    throw ValidationError("cell expects " + std::to_string(channels) + " channels, got input " + x.shape().str());
  }
}

}  // namespace

std::string serialize_genotype(const Genotype& g) {
  std::ostringstream os;
  os << "channels " << g.channels << '\n' << "rsp " << (g.rsp ? 1 : 0) << '\n' << "nodes " << kCellNodes << '\n';
  for (std::size_t e = 0; e < kCellEdges; ++e) {
    os << "edge " << kEdgeEndpoints[e].first << ' ' << kEdgeEndpoints[e].second << ' '
       << primitive_name(g.kinds[e]) << '\n';
  }
  return os.str();
}

Genotype parse_genotype(std::string_view text) {
  Genotype g;
  bool have_channels = false, have_rsp = false, have_nodes = false;
  std::array<bool, kCellEdges> seen{};
  std::size_t pos = 0;
  int lineno = 0;
  while (pos < text.size()) {
    std::size_t nl = text.find('\n', pos);
    if (nl == std::string_view::npos) nl = text.size();
    std::string_view line = text.substr(pos, nl - pos);
    pos = nl + 1;
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (line.empty()) continue;
    const auto t = tokens(line);
    const std::string where = " (line " + std::to_string(lineno) + ")";
    if (t[0] == "channels" && t.size() == 2) {
      g.channels = parse_int(t[1], "channels");
      if (g.channels < 1) throw ValidationError("genotype: channels must be >= 1" + where);
      have_channels = true;
    } else if (t[0] == "rsp" && t.size() == 2) {
      if (t[1] != "0" && t[1] != "1") throw ValidationError("genotype: rsp must be 0 or 1" + where);
      g.rsp = t[1] == "1";
      have_rsp = true;
    } else if (t[0] == "nodes" && t.size() == 2) {
      if (parse_int(t[1], "nodes") != kCellNodes) throw ValidationError("genotype: only nodes 2 is supported" + where);
      have_nodes = true;
    } else if (t[0] == "edge" && t.size() == 4) {
      const auto src = parse_int(t[1], "edge source");
      const auto dst = parse_int(t[2], "edge destination");
      std::size_t e = 0;
      while (e < kCellEdges && !(kEdgeEndpoints[e].first == src && kEdgeEndpoints[e].second == dst)) ++e;
      if (e == kCellEdges) throw ValidationError("genotype: edge " + std::to_string(src) + "->" + std::to_string(dst) + " is not in the cell topology" + where);
      if (seen[e]) throw ValidationError("genotype: duplicate edge" + where);
      g.kinds[e] = parse_primitive(t[3]);
      seen[e] = true;
    } else {
      throw ValidationError("genotype: unrecognized line '" + std::string(line) + "'" + where);
    }
  }
  if (!have_channels || !have_rsp || !have_nodes) throw ValidationError("genotype: missing channels/rsp/nodes header");
  for (bool s : seen) {
    if (!s) throw ValidationError("genotype: every edge (0 1, 0 2, 1 2) must be listed");
  }
  op_channels(g.channels, g.rsp);
  return g;
}

void save_genotype(const Genotype& g, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw RuntimeFailure("cannot write genotype file '" + path + "'");
  out << serialize_genotype(g);
  if (!out) throw RuntimeFailure("failed writing genotype file '" + path + "'");
}

Genotype load_genotype(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot read genotype file '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_genotype(ss.str());
}

Genotype uniform_genotype(PrimitiveKind kind, std::int64_t channels, bool rsp) {
  Genotype g{channels, rsp, {}};
  g.kinds.fill(kind);
  return g;
}

Genotype random_genotype(Rng& rng, std::int64_t channels, bool rsp) {
  std::uniform_int_distribution<int> pick(0, static_cast<int>(kNumPrimitives) - 1);
  Genotype g{channels, rsp, {}};
  for (auto& k : g.kinds) k = kAllPrimitives[static_cast<std::size_t>(pick(rng))];
  return g;
}

template <typename T>
Tensor<T> make_arch_params(ParamStore<T>& store, Rng& rng, double noise) {
  return store.create("arch.alpha", normal_tensor<T>(Shape{static_cast<std::int64_t>(kCellEdges),
                                                           static_cast<std::int64_t>(kNumPrimitives)},
                                                     0.0, noise, rng));
}

template <typename T>
Genotype discretize(const Tensor<T>& alpha, std::int64_t channels, bool rsp) {
  const Shape expected{static_cast<std::int64_t>(kCellEdges), static_cast<std::int64_t>(kNumPrimitives)};
  if (!(alpha.shape() == expected)) {
    throw ValidationError("discretize: alpha must be " + expected.str() + ", got " + alpha.shape().str());
  }
  Genotype g{channels, rsp, {}};
  for (std::size_t e = 0; e < kCellEdges; ++e) {
    std::size_t best = 0;
    for (std::size_t o = 1; o < kNumPrimitives; ++o) {
      if (alpha.at(static_cast<std::int64_t>(e * kNumPrimitives + o)) >
          alpha.at(static_cast<std::int64_t>(e * kNumPrimitives + best))) {
        best = o;
      }
    }
    g.kinds[e] = kAllPrimitives[best];
  }
  return g;
}

template <typename T>
Tensor<T> alpha_row(const Tensor<T>& alpha, std::size_t edge) {
  return reshape(narrow(alpha, 0, static_cast<std::int64_t>(edge), 1),
                 Shape{static_cast<std::int64_t>(kNumPrimitives)});
}

template <typename T>
Tensor<T> mixed_op_forward(const Tensor<T>& x, const Tensor<T>& edge_alphas, std::span<const PrimitiveOp<T>> ops) {
  if (edge_alphas.numel() != static_cast<std::int64_t>(kNumPrimitives) || ops.size() != kNumPrimitives) {
    throw ValidationError("mixed op: need 5 alphas and 5 ops, got " + std::to_string(edge_alphas.numel()) +
                          " alphas and " + std::to_string(ops.size()) + " ops");
  }
  std::vector<Tensor<T>> outs;
  outs.reserve(kNumPrimitives);
  for (const auto& op : ops) outs.push_back(apply(op, x));
  Tensor<T> weights = softmax(reshape(edge_alphas, Shape{static_cast<std::int64_t>(kNumPrimitives)}), 0);
  return weighted_sum<T>(outs, weights);
}

template <typename T>
MixedCell<T>::MixedCell(std::int64_t channels, bool rsp, const std::string& prefix, ParamStore<T>& store, Rng& rng)
    : channels_(channels), rsp_(rsp) {
  const std::int64_t c = op_channels(channels, rsp);
  for (std::size_t e = 0; e < kCellEdges; ++e) {
    for (std::size_t o = 0; o < kNumPrimitives; ++o) {
      ops_[e][o] = make_primitive<T>(kAllPrimitives[o], c,
                                     prefix + ".edge" + std::to_string(e) + "." + std::string(primitive_name(kAllPrimitives[o])),
                                     store, rng);
    }
  }
}

template <typename T>
Tensor<T> MixedCell<T>::forward(const Tensor<T>& x, const Tensor<T>& alpha) const {
  require_channels(x, channels_);
  return combine_nodes<T>(x, [&](std::size_t e, const Tensor<T>& in) {
    Tensor<T> row = alpha_row(alpha, e);
    auto mixed = [&](const Tensor<T>& h) { return mixed_op_forward<T>(h, row, ops_[e]); };
    return rsp_ ? rsp_apply<T>(in, mixed) : mixed(in);
  });
}

template <typename T>
DiscreteCell<T>::DiscreteCell(const Genotype& genotype, const std::string& prefix, ParamStore<T>& store, Rng& rng)
    : genotype_(genotype) {
  const std::int64_t c = op_channels(genotype.channels, genotype.rsp);
  for (std::size_t e = 0; e < kCellEdges; ++e) {
    ops_[e] = make_primitive<T>(genotype.kinds[e], c, prefix + ".edge" + std::to_string(e), store, rng);
  }
}

template <typename T>
Tensor<T> DiscreteCell<T>::forward(const Tensor<T>& x) const {
  require_channels(x, genotype_.channels);
  return combine_nodes<T>(x, [&](std::size_t e, const Tensor<T>& in) {
    return genotype_.rsp ? rsp_wrap(ops_[e], in) : apply(ops_[e], in);
  });
}

template <typename T>
CellStack<T>::CellStack(const Genotype& genotype, int n, const std::string& prefix, ParamStore<T>& store, Rng& rng) {
  if (n < 1) throw ValidationError("stack_cells: n must be >= 1");
  cells_.reserve(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) cells_.emplace_back(genotype, prefix + ".cell" + std::to_string(i), store, rng);
}

template <typename T>
Tensor<T> CellStack<T>::forward(const Tensor<T>& x) const {
  Tensor<T> h = x;
  for (const auto& cell : cells_) h = cell.forward(h);
  return h;
}

std::int64_t cell_conv_param_count(const Genotype& g) {
  const std::int64_t c = op_channels(g.channels, g.rsp);
  std::int64_t n = 0;
  for (PrimitiveKind k : g.kinds) n += param_count(k, c);
  return n;
}

std::int64_t cell_param_count(const Genotype& g) {
  const std::int64_t c = op_channels(g.channels, g.rsp);
  std::int64_t n = cell_conv_param_count(g);
  for (PrimitiveKind k : g.kinds) n += norm_param_count(k, c);
  return n;
}

#define RSPNET_INSTANTIATE(T)                                                                         \
  template Tensor<T> make_arch_params<T>(ParamStore<T>&, Rng&, double);                               \
  template Genotype discretize<T>(const Tensor<T>&, std::int64_t, bool);                              \
  template Tensor<T> alpha_row<T>(const Tensor<T>&, std::size_t);                                     \
  template Tensor<T> mixed_op_forward<T>(const Tensor<T>&, const Tensor<T>&, std::span<const PrimitiveOp<T>>); \
  template class MixedCell<T>;                                                                        \
  template class DiscreteCell<T>;                                                                     \
  template class CellStack<T>;

RSPNET_INSTANTIATE(float)
RSPNET_INSTANTIATE(double)
RSPNET_INSTANTIATE(long double)

#undef RSPNET_INSTANTIATE

}  // namespace rspnet
