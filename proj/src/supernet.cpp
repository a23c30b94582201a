#include "rspnet/supernet.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

#include "rspnet/error.hpp"
#include "rspnet/ops.hpp"

namespace rspnet {

namespace {

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

template <typename N>
N parse_number(std::string_view key, std::string_view value) {
  N out{};
  const auto* end = value.data() + value.size();
  auto [ptr, ec] = std::from_chars(value.data(), end, out);
  if (ec != std::errc() || ptr != end) {
    throw ValidationError("config: bad value '" + std::string(value) + "' for " + std::string(key));
  }
  return out;
}

bool parse_bool(std::string_view key, std::string_view value) {
  if (value == "1" || value == "true") return true;
  if (value == "0" || value == "false") return false;
  throw ValidationError("config: bad boolean '" + std::string(value) + "' for " + std::string(key));
}

}  // namespace

void SearchConfig::validate() const {
  auto need = [](bool ok, const std::string& what) {
    if (!ok) throw ValidationError("config: " + what);
  };
  need(layers >= 1, "layers must be >= 1");
  need(channels >= 2 && (!rsp || channels % 2 == 0), "channels must be >= 2 and even when rsp=1");
  need(cells_per_layer_search >= 1, "cells_per_layer_search must be >= 1");
  need(stack_n >= 1, "stack_n must be >= 1");
  need(k_paths >= 1, "k_paths must be >= 1");
  need(epochs_cell >= 0 && epochs_path >= 0 && epochs_train >= 0, "epoch counts must be >= 0");
  need(batch_size >= 1, "batch_size must be >= 1");
  need(lr_w > 0 && lr_arch > 0, "learning rates must be > 0");
  need(momentum_w >= 0 && momentum_w < 1 && momentum_arch >= 0 && momentum_arch < 1, "momentum must be in [0, 1)");
  need(wd_w >= 0 && wd_arch >= 0, "weight decay must be >= 0");
  need(crop_h >= 8 && crop_w >= 8 && crop_h % 4 == 0 && crop_w % 4 == 0, "crop sizes must be multiples of 4, >= 8");
  need(num_classes >= 2 && num_classes <= 255, "num_classes must be in [2, 255]");
  need(image_channels == 1, "image_channels must be 1 (grayscale)");
}

void set_config_value(SearchConfig& c, std::string_view key, std::string_view v) {
  if (key == "layers") c.layers = parse_number<int>(key, v);
  else if (key == "channels") c.channels = parse_number<std::int64_t>(key, v);
  else if (key == "cells_per_layer_search") c.cells_per_layer_search = parse_number<int>(key, v);
  else if (key == "stack_n") c.stack_n = parse_number<int>(key, v);
  else if (key == "k_paths") c.k_paths = parse_number<int>(key, v);
  else if (key == "rsp") c.rsp = parse_bool(key, v);
  else if (key == "attention_mode") c.attention_mode = parse_attention_mode(v);
  else if (key == "epochs_cell") c.epochs_cell = parse_number<int>(key, v);
  else if (key == "epochs_path") c.epochs_path = parse_number<int>(key, v);
  else if (key == "epochs_train") c.epochs_train = parse_number<int>(key, v);
  else if (key == "batch_size") c.batch_size = parse_number<int>(key, v);
  else if (key == "lr_w") c.lr_w = parse_number<double>(key, v);
  else if (key == "momentum_w") c.momentum_w = parse_number<double>(key, v);
  else if (key == "wd_w") c.wd_w = parse_number<double>(key, v);
  else if (key == "lr_arch") c.lr_arch = parse_number<double>(key, v);
  else if (key == "momentum_arch") c.momentum_arch = parse_number<double>(key, v);
  else if (key == "wd_arch") c.wd_arch = parse_number<double>(key, v);
  else if (key == "seed") c.seed = parse_number<std::uint64_t>(key, v);
  else if (key == "crop_h") c.crop_h = parse_number<std::int64_t>(key, v);
  else if (key == "crop_w") c.crop_w = parse_number<std::int64_t>(key, v);
  else if (key == "num_classes") c.num_classes = parse_number<int>(key, v);
  else if (key == "image_channels") c.image_channels = parse_number<int>(key, v);
  else throw ValidationError("config: unknown key '" + std::string(key) + "'");
}

SearchConfig parse_config(std::string_view text, SearchConfig base) {
  std::size_t pos = 0;
  int lineno = 0;
  while (pos < text.size()) {
    std::size_t nl = text.find('\n', pos);
    if (nl == std::string_view::npos) nl = text.size();
    std::string_view line = text.substr(pos, nl - pos);
    pos = nl + 1;
    ++lineno;
    if (auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) {
      throw ValidationError("config line " + std::to_string(lineno) + ": expected key=value");
    }
    set_config_value(base, trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
  return base;
}

SearchConfig load_config(const std::string& path, SearchConfig base) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot read config file '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str(), base);
}

std::string serialize_config(const SearchConfig& c) {
  std::ostringstream os;
  os.precision(17);
  os << "layers=" << c.layers << "\nchannels=" << c.channels << "\ncells_per_layer_search=" << c.cells_per_layer_search
     << "\nstack_n=" << c.stack_n << "\nk_paths=" << c.k_paths << "\nrsp=" << (c.rsp ? 1 : 0)
     << "\nattention_mode=" << attention_mode_name(c.attention_mode) << "\nepochs_cell=" << c.epochs_cell
     << "\nepochs_path=" << c.epochs_path << "\nepochs_train=" << c.epochs_train << "\nbatch_size=" << c.batch_size
     << "\nlr_w=" << c.lr_w << "\nmomentum_w=" << c.momentum_w << "\nwd_w=" << c.wd_w << "\nlr_arch=" << c.lr_arch
     << "\nmomentum_arch=" << c.momentum_arch << "\nwd_arch=" << c.wd_arch << "\nseed=" << c.seed
     << "\ncrop_h=" << c.crop_h << "\ncrop_w=" << c.crop_w << "\nnum_classes=" << c.num_classes
     << "\nimage_channels=" << c.image_channels << '\n';
  return os.str();
}

template <typename T>
SegNet<T>::SegNet(NetKind kind, const SearchConfig& cfg, Genotype genotype, MacroGenotype macro, Rng& rng)
    : kind_(kind), cfg_(cfg), genotype_(std::move(genotype)), macro_(std::move(macro)) {
  cfg_.validate();
  const std::int64_t c = cfg_.channels;
  auto he = [&](const std::string& id, Shape shape, std::int64_t fan_in) {
    return weights_->create(id, normal_tensor<T>(shape, 0.0, std::sqrt(2.0 / static_cast<double>(fan_in)), rng));
  };
  stem_w1 = he("stem.conv1.weight", Shape{c, cfg_.image_channels, 3, 3}, 9 * cfg_.image_channels);
  stem_g1 = weights_->create("stem.norm1.gamma", Tensor<T>::full(Shape{c}, T(1)));
  stem_b1 = weights_->create("stem.norm1.beta", Tensor<T>::zeros(Shape{c}));
  stem_w2 = he("stem.conv2.weight", Shape{c, c, 3, 3}, 9 * c);
  stem_g2 = weights_->create("stem.norm2.gamma", Tensor<T>::full(Shape{c}, T(1)));
  stem_b2 = weights_->create("stem.norm2.beta", Tensor<T>::zeros(Shape{c}));

  if (kind_ == NetKind::CellSearch) alpha_ = make_arch_params(*arch_, rng);

  layers_.resize(static_cast<std::size_t>(cfg_.layers));
  for (int l = 0; l < cfg_.layers; ++l) {
    Layer& layer = layers_[static_cast<std::size_t>(l)];
    const std::string base = "layer" + std::to_string(l);
    switch (kind_) {
      case NetKind::CellSearch:
        layer.sources = {l};
        break;
      case NetKind::PathSearch:
        for (int i = 0; i <= l; ++i) layer.sources.push_back(i);
        break;
      case NetKind::Final:
        layer.sources = macro_.inputs[static_cast<std::size_t>(l)];
        break;
    }
    for (int src : layer.sources) {
      layer.proj.push_back(make_projection<T>(c, c, base + ".proj" + std::to_string(src), *weights_, rng));
    }
    if (kind_ == NetKind::CellSearch) {
      for (int i = 0; i < cfg_.cells_per_layer_search; ++i) {
        layer.mixed.emplace_back(c, cfg_.rsp, base + ".cell" + std::to_string(i), *weights_, rng);
      }
    } else {
      const int n = kind_ == NetKind::Final ? cfg_.stack_n : 1;
      layer.cells.emplace(genotype_, n, base, *weights_, rng);
    }
  }
  head_w = weights_->create("head.weight", normal_tensor<T>(Shape{cfg_.num_classes, c, 1, 1}, 0.0,
                                                            std::sqrt(1.0 / static_cast<double>(c)), rng));
  head_b = weights_->create("head.bias", Tensor<T>::zeros(Shape{cfg_.num_classes}));
}

template <typename T>
SegNet<T> SegNet<T>::cell_search(const SearchConfig& cfg, Rng& rng) {
  Genotype g = uniform_genotype(PrimitiveKind::Conv3x3, cfg.channels, cfg.rsp);
  return SegNet(NetKind::CellSearch, cfg, g, chain_macro(cfg.layers, cfg.attention_mode), rng);
}

template <typename T>
SegNet<T> SegNet<T>::path_search(const SearchConfig& cfg, const Genotype& genotype, Rng& rng) {
  if (genotype.channels != cfg.channels) throw ValidationError("genotype channels differ from config channels");
  MacroGenotype m;
  m.k = cfg.k_paths;
  m.mode = cfg.attention_mode;
  return SegNet(NetKind::PathSearch, cfg, genotype, m, rng);
}

template <typename T>
SegNet<T> SegNet<T>::final_net(const SearchConfig& cfg, const Genotype& genotype, const MacroGenotype& macro,
                               Rng& rng) {
  if (genotype.channels != cfg.channels) throw ValidationError("genotype channels differ from config channels");
  if (static_cast<int>(macro.inputs.size()) != cfg.layers) {
    throw ValidationError("macro genotype has " + std::to_string(macro.inputs.size()) + " layers, config has " +
                          std::to_string(cfg.layers));
  }
  // Round-trip through the parser for its range and duplicate checks.
  parse_macro(serialize_macro(macro));
  return SegNet(NetKind::Final, cfg, genotype, macro, rng);
}

template <typename T>
Tensor<T> SegNet<T>::forward(const Tensor<T>& images, Trace* trace) const {
  if (images.shape().rank() != 4 || images.dim(1) != cfg_.image_channels) {
    throw ValidationError("SegNet: expected (N, " + std::to_string(cfg_.image_channels) + ", H, W) input, got " +
                          images.shape().str());
  }
  const std::int64_t in_h = images.dim(2), in_w = images.dim(3);
  const Conv2dOptions s2{.stride = 2, .padding = 1};
  Tensor<T> x = channel_norm(conv2d(images, stem_w1, Tensor<T>(), s2), stem_g1, stem_b1);
  x = channel_norm(conv2d(relu(x), stem_w2, Tensor<T>(), s2), stem_g2, stem_b2);
  const std::int64_t h = x.dim(2), w = x.dim(3);

  if (trace) {
    trace->scores.clear();
    trace->selected.clear();
  }
  std::vector<Tensor<T>> cands{x};
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    const Layer& layer = layers_[l];
    std::vector<Tensor<T>> feats;
    for (int src : layer.sources) feats.push_back(cands[static_cast<std::size_t>(src)]);
    const auto normed = normalize_inputs<T>(feats, layer.proj, h, w);
    Tensor<T> in;
    if (kind_ == NetKind::PathSearch) {
      auto scores = path_scores<T>(normed, cfg_.attention_mode);
      const int k = std::min<int>(cfg_.k_paths, static_cast<int>(normed.size()));
      auto sel = select_top_k(scores, k);
      in = fuse_selected<T>(normed, sel);
      if (trace) {
        trace->scores.push_back(std::move(scores));
        trace->selected.push_back(std::move(sel));
      }
    } else {
      std::vector<int> order(normed.size());
      for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
      in = fuse_selected<T>(normed, order);
    }
    Tensor<T> out = in;
    if (kind_ == NetKind::CellSearch) {
      for (const auto& cell : layer.mixed) out = cell.forward(out, alpha_);
    } else {
      out = layer.cells->forward(out);
    }
    cands.push_back(out);
  }
  Tensor<T> logits = conv2d(cands.back(), head_w, head_b);
  return interpolate_bilinear(logits, in_h, in_w);
}

std::int64_t final_param_count(const SearchConfig& cfg, const Genotype& genotype, const MacroGenotype& macro) {
  const std::int64_t c = cfg.channels;
  std::int64_t n = 9 * cfg.image_channels * c + 2 * c + 9 * c * c + 2 * c;
  for (const auto& inputs : macro.inputs) {
    n += static_cast<std::int64_t>(inputs.size()) * (c * c + c);
    n += cfg.stack_n * cell_param_count(genotype);
  }
  return n + cfg.num_classes * c + cfg.num_classes;
}

void save_model(const SegNet<float>& net, const std::string& path) {
  if (net.kind() != NetKind::Final) throw ValidationError("save_model: only final networks are saved");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw RuntimeFailure("cannot write model file '" + path + "'");
  out << "rspnet-model 1\n[config]\n" << serialize_config(net.config()) << "[genotype]\n"
      << serialize_genotype(net.genotype()) << "[macro]\n" << serialize_macro(net.macro()) << "[weights] "
      << net.weights().size() << '\n';
  char buf[64];
  for (const auto& w : net.weights().weights()) {
    out << w.id << ' ' << w.tensor.numel();
    for (float v : w.tensor.data()) {
      auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v, std::chars_format::hex);
      out << ' ';
      out.write(buf, ptr - buf);
    }
    out << '\n';
  }
  if (!out) throw RuntimeFailure("failed writing model file '" + path + "'");
}

SegNet<float> load_model(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot read model file '" + path + "'");
  std::string line;
  if (!std::getline(in, line) || line != "rspnet-model 1") throw ValidationError("'" + path + "' is not a model file");
  std::string section, config, genotype, macro;
  std::size_t count = 0;
  while (std::getline(in, line)) {
    if (line.starts_with("[weights] ")) {
      count = parse_number<std::size_t>("weights", std::string_view(line).substr(10));
      break;
    }
    if (line.starts_with("[")) {
      section = line;
      continue;
    }
    std::string& dst = section == "[config]" ? config : section == "[genotype]" ? genotype : macro;
    if (section != "[config]" && section != "[genotype]" && section != "[macro]") {
      throw ValidationError("model file: content outside a section");
    }
    dst += line + '\n';
  }
  const SearchConfig cfg = parse_config(config);
  Rng rng(0);
  SegNet<float> net = SegNet<float>::final_net(cfg, parse_genotype(genotype), parse_macro(macro), rng);
  const auto weights = net.weights().weights();
  if (count != weights.size()) {
    throw ValidationError("model file lists " + std::to_string(count) + " weights, architecture has " +
                          std::to_string(weights.size()));
  }
  for (const auto& w : weights) {
    std::string id;
    std::int64_t n = 0;
    if (!(in >> id >> n) || id != w.id || n != w.tensor.numel()) {
      throw ValidationError("model file: weight '" + w.id + "' missing or mis-sized");
    }
    for (float& v : w.tensor.data()) {
      std::string tok;
      in >> tok;
      auto [ptr, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v, std::chars_format::hex);
      if (ec != std::errc() || ptr != tok.data() + tok.size()) {
        throw ValidationError("model file: bad value '" + tok + "' in " + w.id);
      }
    }
  }
  return net;
}

template class SegNet<float>;
template class SegNet<double>;
template class SegNet<long double>;

}  // namespace rspnet
