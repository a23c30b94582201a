#include "rspnet/path_attention.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include "rspnet/error.hpp"
#include "rspnet/ops.hpp"

namespace rspnet {

std::string_view attention_mode_name(AttentionMode mode) {
  return mode == AttentionMode::Literal ? "literal" : "pathnorm";
}

AttentionMode parse_attention_mode(std::string_view name) {
  if (name == "literal") return AttentionMode::Literal;
  if (name == "pathnorm") return AttentionMode::PathNormalized;
  throw ValidationError("unknown attention mode '" + std::string(name) + "' (expected literal or pathnorm)");
}

template <typename T>
Projection<T> make_projection(std::int64_t in_channels, std::int64_t out_channels, const std::string& prefix,
                              ParamStore<T>& store, Rng& rng) {
  Projection<T> p;
  p.weight = store.create(prefix + ".weight", normal_tensor<T>(Shape{out_channels, in_channels, 1, 1}, 0.0,
                                                               std::sqrt(1.0 / static_cast<double>(in_channels)), rng));
  p.bias = store.create(prefix + ".bias", Tensor<T>::zeros(Shape{out_channels}));
  return p;
}

template <typename T>
std::vector<Tensor<T>> normalize_inputs(std::span<const Tensor<T>> features, std::span<const Projection<T>> proj,
                                        std::int64_t out_h, std::int64_t out_w) {
  if (features.empty()) throw ValidationError("normalize_inputs: empty candidate list");
  if (proj.size() != features.size()) {
    throw ValidationError("normalize_inputs: " + std::to_string(features.size()) + " candidates but " +
                          std::to_string(proj.size()) + " projections");
  }
  std::vector<Tensor<T>> out;
  out.reserve(features.size());
  for (std::size_t i = 0; i < features.size(); ++i) {
    out.push_back(interpolate_bilinear(conv2d(features[i], proj[i].weight, proj[i].bias), out_h, out_w));
  }
  return out;
}

template <typename T>
ChannelFeatures channel_features(const Tensor<T>& x) {
  const Shape& s = x.shape();
  if (s.rank() != 3 && s.rank() != 4) throw ValidationError("channel_features: expected CHW or NCHW, got " + s.str());
  const std::int64_t n = s.rank() == 4 ? s[0] : 1;
  const int off = s.rank() == 4 ? 1 : 0;
  ChannelFeatures f;
  f.channels = s[off];
  f.length = s[off + 1] * s[off + 2];
  const std::int64_t per = f.channels * f.length;
  f.values.assign(static_cast<std::size_t>(per), 0.0);
  auto d = x.data();
  for (std::int64_t b = 0; b < n; ++b) {
    for (std::int64_t i = 0; i < per; ++i) f.values[static_cast<std::size_t>(i)] += static_cast<double>(d[static_cast<std::size_t>(b * per + i)]);
  }
  for (double& v : f.values) v /= static_cast<double>(n);
  return f;
}

std::vector<double> channel_products(const ChannelFeatures& fi, const ChannelFeatures& fj) {
  if (fi.channels != fj.channels || fi.length != fj.length) {
    throw ValidationError("channel_attention: feature shapes differ (" + std::to_string(fi.channels) + "x" +
                          std::to_string(fi.length) + " vs " + std::to_string(fj.channels) + "x" +
                          std::to_string(fj.length) + ")");
  }
  std::vector<double> p(static_cast<std::size_t>(fi.channels));
  for (std::int64_t c = 0; c < fi.channels; ++c) {
    double acc = 0.0;
    const std::size_t base = static_cast<std::size_t>(c * fi.length);
    for (std::int64_t t = 0; t < fi.length; ++t) acc += fi.values[base + static_cast<std::size_t>(t)] * fj.values[base + static_cast<std::size_t>(t)];
    p[static_cast<std::size_t>(c)] = acc / static_cast<double>(fi.length);
  }
  return p;
}

std::vector<double> channel_softmax(std::span<const double> products) {
  const double mx = *std::max_element(products.begin(), products.end());
  std::vector<double> s(products.size());
  double z = 0.0;
  for (std::size_t c = 0; c < products.size(); ++c) z += (s[c] = std::exp(products[c] - mx));
  for (double& v : s) v /= z;
  return s;
}

std::vector<double> channel_attention(const ChannelFeatures& fi, const ChannelFeatures& fj) {
  return channel_softmax(channel_products(fi, fj));
}

std::vector<double> scores_from_products(std::span<const double> products, std::size_t n, std::size_t c,
                                         AttentionMode mode) {
  if (n == 0) throw ValidationError("path_scores: no paths");
  if (products.size() != n * n * c) throw ValidationError("path_scores: product table has the wrong size");
  auto at = [&](std::size_t i, std::size_t j, std::size_t ch) { return products[(i * n + j) * c + ch]; };
  std::vector<double> scores(n, 0.0);
  if (mode == AttentionMode::Literal) {
    // Numerators are summed in the same order as the normalizer, so each
    // pair contributes exactly 1.
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < n; ++j) {
        const auto p = products.subspan((i * n + j) * c, c);
        const double mx = *std::max_element(p.begin(), p.end());
        double z = 0.0, num = 0.0;
        for (double v : p) z += std::exp(v - mx);
        for (double v : p) num += std::exp(v - mx);
        scores[i] += num / z;
      }
    }
    return scores;
  }
  // Path-normalized: for each target path j and channel c, softmax over the
  // source paths i; then S_i sums over j (outer) and c (inner).
  for (std::size_t j = 0; j < n; ++j) {
    for (std::size_t ch = 0; ch < c; ++ch) {
      double mx = -INFINITY, z = 0.0;
      for (std::size_t i = 0; i < n; ++i) mx = std::max(mx, at(i, j, ch));
      for (std::size_t i = 0; i < n; ++i) z += std::exp(at(i, j, ch) - mx);
      for (std::size_t i = 0; i < n; ++i) scores[i] += std::exp(at(i, j, ch) - mx) / z;
    }
  }
  return scores;
}

std::vector<double> path_scores(std::span<const ChannelFeatures> features, AttentionMode mode) {
  if (features.empty()) throw ValidationError("path_scores: no paths");
  const std::size_t n = features.size();
  const std::size_t c = static_cast<std::size_t>(features[0].channels);
  std::vector<double> products(n * n * c);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      const auto p = channel_products(features[i], features[j]);
      std::copy(p.begin(), p.end(), products.begin() + static_cast<std::ptrdiff_t>((i * n + j) * c));
    }
  }
  return scores_from_products(products, n, c, mode);
}

template <typename T>
std::vector<double> path_scores(std::span<const Tensor<T>> features, AttentionMode mode) {
  std::vector<ChannelFeatures> f;
  f.reserve(features.size());
  for (const auto& t : features) f.push_back(channel_features(t));
  return path_scores(std::span<const ChannelFeatures>(f), mode);
}

std::vector<int> select_top_k(std::span<const double> scores, int k) {
  const int n = static_cast<int>(scores.size());
  if (k < 1 || k > n) {
    throw ValidationError("select_top_k: k=" + std::to_string(k) + " must lie in [1, " + std::to_string(n) + "]");
  }
  std::vector<int> idx(static_cast<std::size_t>(n));
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](int a, int b) {
    return scores[static_cast<std::size_t>(a)] > scores[static_cast<std::size_t>(b)];
  });
  idx.resize(static_cast<std::size_t>(k));
  return idx;
}

template <typename T>
Tensor<T> fuse_selected(std::span<const Tensor<T>> features, std::span<const int> indices) {
  if (indices.empty()) throw ValidationError("fuse_selected: no indices");
  for (int i : indices) {
    if (i < 0 || static_cast<std::size_t>(i) >= features.size()) {
      throw ValidationError("fuse_selected: index " + std::to_string(i) + " out of range for " +
                            std::to_string(features.size()) + " features");
    }
  }
  Tensor<T> out = features[static_cast<std::size_t>(indices[0])];
  for (std::size_t s = 1; s < indices.size(); ++s) out = add(out, features[static_cast<std::size_t>(indices[s])]);
  return out;
}

namespace {

int parse_index(std::string_view s, std::string_view what) {
  int v = 0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size() || s.empty()) {
    throw ValidationError("macro genotype: bad " + std::string(what) + " '" + std::string(s) + "'");
  }
  return v;
}

}  // namespace

std::string serialize_macro(const MacroGenotype& m) {
  std::ostringstream os;
  os << "k " << m.k << '\n' << "mode " << attention_mode_name(m.mode) << '\n';
  for (std::size_t l = 0; l < m.inputs.size(); ++l) {
    os << "layer " << l << " inputs ";
    for (std::size_t s = 0; s < m.inputs[l].size(); ++s) os << (s ? "," : "") << m.inputs[l][s];
    os << '\n';
  }
  return os.str();
}

MacroGenotype parse_macro(std::string_view text) {
  MacroGenotype m;
  m.inputs.clear();
  bool have_k = false, have_mode = false;
  std::istringstream in{std::string(text)};
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string key;
    ls >> key;
    if (key == "k") {
      std::string v;
      ls >> v;
      m.k = parse_index(v, "k");
      if (m.k < 1) throw ValidationError("macro genotype: k must be >= 1");
      have_k = true;
    } else if (key == "mode") {
      std::string v;
      ls >> v;
      m.mode = parse_attention_mode(v);
      have_mode = true;
    } else if (key == "layer") {
      std::string idx, word, list;
      ls >> idx >> word >> list;
      if (word != "inputs" || list.empty()) throw ValidationError("macro genotype: malformed line '" + line + "'");
      const int l = parse_index(idx, "layer index");
      if (l != static_cast<int>(m.inputs.size())) throw ValidationError("macro genotype: layers must be listed in order 0,1,...");
      std::vector<int> sel;
      std::size_t pos = 0;
      while (pos <= list.size()) {
        const std::size_t comma = std::min(list.find(',', pos), list.size());
        sel.push_back(parse_index(std::string_view(list).substr(pos, comma - pos), "input index"));
        pos = comma + 1;
      }
      m.inputs.push_back(std::move(sel));
    } else {
      throw ValidationError("macro genotype: unrecognized line '" + line + "'");
    }
    std::string extra;
    if (ls >> extra) throw ValidationError("macro genotype: trailing tokens in '" + line + "'");
  }
  if (!have_k || !have_mode) throw ValidationError("macro genotype: missing k/mode header");
  if (m.inputs.empty()) throw ValidationError("macro genotype: no layers");
  for (std::size_t l = 0; l < m.inputs.size(); ++l) {
    const auto& sel = m.inputs[l];
    if (sel.size() > static_cast<std::size_t>(m.k)) throw ValidationError("macro genotype: layer " + std::to_string(l) + " selects more than k inputs");
    for (std::size_t s = 0; s < sel.size(); ++s) {
      if (sel[s] < 0 || sel[s] > static_cast<int>(l)) {
        throw ValidationError("macro genotype: layer " + std::to_string(l) + " input " + std::to_string(sel[s]) +
                              " is not one of its candidates 0.." + std::to_string(l));
      }
      if (std::find(sel.begin(), sel.begin() + static_cast<std::ptrdiff_t>(s), sel[s]) != sel.begin() + static_cast<std::ptrdiff_t>(s)) {
        throw ValidationError("macro genotype: layer " + std::to_string(l) + " repeats an input");
      }
    }
  }
  return m;
}

void save_macro(const MacroGenotype& m, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw RuntimeFailure("cannot write macro genotype file '" + path + "'");
  out << serialize_macro(m);
  if (!out) throw RuntimeFailure("failed writing macro genotype file '" + path + "'");
}

MacroGenotype load_macro(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot read macro genotype file '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_macro(ss.str());
}

MacroGenotype chain_macro(int layers, AttentionMode mode) {
  if (layers < 1) throw ValidationError("chain_macro: layers must be >= 1");
  MacroGenotype m{1, mode, {}};
  for (int l = 0; l < layers; ++l) m.inputs.push_back({l});
  return m;
}

#define RSPNET_INSTANTIATE(T)                                                                                 \
  template Projection<T> make_projection<T>(std::int64_t, std::int64_t, const std::string&, ParamStore<T>&, Rng&); \
  template std::vector<Tensor<T>> normalize_inputs<T>(std::span<const Tensor<T>>, std::span<const Projection<T>>, \
                                                      std::int64_t, std::int64_t);                            \
  template ChannelFeatures channel_features<T>(const Tensor<T>&);                                             \
  template std::vector<double> path_scores<T>(std::span<const Tensor<T>>, AttentionMode);                     \
  template Tensor<T> fuse_selected<T>(std::span<const Tensor<T>>, std::span<const int>);

RSPNET_INSTANTIATE(float)
RSPNET_INSTANTIATE(double)
RSPNET_INSTANTIATE(long double)

#undef RSPNET_INSTANTIATE

}  // namespace rspnet
