#include "rspnet/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numbers>

#include "rspnet/error.hpp"

namespace rspnet {

namespace fs = std::filesystem;

namespace {

std::uint8_t clamp_byte(double v) { return static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L)); }

std::string pair_name(std::size_t i, const char* kind) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%04zu.%s.pgm", i, kind);
  return buf;
}

}  // namespace

Dataset synth_dataset(std::uint64_t seed, std::int64_t count, std::int64_t size, int num_classes) {
  if (num_classes < 2 || num_classes > 255) throw ValidationError("synth_dataset: num_classes must be in [2, 255]");
  if (size < 16) throw ValidationError("synth_dataset: size must be >= 16");
  if (count < 0) throw ValidationError("synth_dataset: count must be >= 0");
  Rng rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> noise(0.0, 8.0);
  const double s = static_cast<double>(size);
  Dataset out;
  out.reserve(static_cast<std::size_t>(count));
  for (std::int64_t n = 0; n < count; ++n) {
    SegSample smp{size, size, std::vector<std::uint8_t>(static_cast<std::size_t>(size * size)),
                  std::vector<std::uint8_t>(static_cast<std::size_t>(size * size), 0)};
    // Background texture: two random plane waves.
    std::vector<double> intensity(static_cast<std::size_t>(size * size));
    double fx[2], fy[2], ph[2];
    for (int w = 0; w < 2; ++w) {
      fx[w] = (unit(rng) - 0.5) * 0.8;
      fy[w] = (unit(rng) - 0.5) * 0.8;
      ph[w] = unit(rng) * 2.0 * std::numbers::pi;
    }
    for (std::int64_t y = 0; y < size; ++y) {
      for (std::int64_t x = 0; x < size; ++x) {
        double v = 50.0;
        for (int w = 0; w < 2; ++w) v += 10.0 * std::sin(fx[w] * x + fy[w] * y + ph[w]);
        intensity[static_cast<std::size_t>(y * size + x)] = v;
      }
    }
    const int shapes = 2 + static_cast<int>(unit(rng) * 3.0);
    for (int k = 0; k < shapes; ++k) {
      const int cls = 1 + static_cast<int>(unit(rng) * (num_classes - 1));
      const double level = 50.0 + 170.0 * cls / (num_classes - 1) + (unit(rng) - 0.5) * 20.0;
      const bool disc = unit(rng) < 0.5;
      const double cx = unit(rng) * s, cy = unit(rng) * s;
      const double a = s * (0.1 + 0.15 * unit(rng)), b = s * (0.1 + 0.15 * unit(rng));
      for (std::int64_t y = 0; y < size; ++y) {
        for (std::int64_t x = 0; x < size; ++x) {
          const double dx = x + 0.5 - cx, dy = y + 0.5 - cy;
          const bool inside = disc ? dx * dx + dy * dy <= a * a : std::abs(dx) <= a && std::abs(dy) <= b;
          if (!inside) continue;
          const std::size_t i = static_cast<std::size_t>(y * size + x);
          intensity[i] = level;
          smp.labels[i] = static_cast<std::uint8_t>(cls);
        }
      }
    }
    for (std::size_t i = 0; i < intensity.size(); ++i) smp.image[i] = clamp_byte(intensity[i] + noise(rng));
    out.push_back(std::move(smp));
  }
  return out;
}

void write_pgm(const std::string& path, std::int64_t height, std::int64_t width, std::span<const std::uint8_t> pixels) {
  if (static_cast<std::int64_t>(pixels.size()) != height * width) throw ValidationError("write_pgm: size mismatch");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw RuntimeFailure("cannot write '" + path + "'");
  out << "P5\n" << width << ' ' << height << "\n255\n";
  out.write(reinterpret_cast<const char*>(pixels.data()), static_cast<std::streamsize>(pixels.size()));
  if (!out) throw RuntimeFailure("failed writing '" + path + "'");
}

std::vector<std::uint8_t> read_pgm(const std::string& path, std::int64_t& height, std::int64_t& width) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot read '" + path + "'");
  auto next_token = [&]() {
    std::string tok;
    char c;
    while (in.get(c)) {
      if (c == '#') {
        std::string skip;
        std::getline(in, skip);
        continue;
      }
      if (std::isspace(static_cast<unsigned char>(c))) {
        if (!tok.empty()) break;
        continue;
      }
      tok.push_back(c);
    }
    return tok;
  };
  if (next_token() != "P5") throw ValidationError("'" + path + "' is not a binary PGM (P5)");
  try {
    width = std::stoll(next_token());
    height = std::stoll(next_token());
    if (std::stoi(next_token()) != 255) throw ValidationError("'" + path + "': only maxval 255 is supported");
  } catch (const std::logic_error&) {
    throw ValidationError("'" + path + "': malformed PGM header");
  }
  if (width < 1 || height < 1) throw ValidationError("'" + path + "': empty image");
  std::vector<std::uint8_t> px(static_cast<std::size_t>(width * height));
  in.read(reinterpret_cast<char*>(px.data()), static_cast<std::streamsize>(px.size()));
  if (in.gcount() != static_cast<std::streamsize>(px.size())) throw ValidationError("'" + path + "': truncated pixel data");
  return px;
}

void save_dataset(const Dataset& data, const std::string& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw RuntimeFailure("cannot create '" + dir + "': " + ec.message());
  for (std::size_t i = 0; i < data.size(); ++i) {
    write_pgm((fs::path(dir) / pair_name(i, "img")).string(), data[i].height, data[i].width, data[i].image);
    write_pgm((fs::path(dir) / pair_name(i, "lab")).string(), data[i].height, data[i].width, data[i].labels);
  }
}

Dataset load_dataset(const std::string& dir) {
  if (!fs::is_directory(dir)) throw ValidationError("dataset directory '" + dir + "' does not exist");
  Dataset out;
  for (std::size_t i = 0;; ++i) {
    const fs::path img = fs::path(dir) / pair_name(i, "img");
    const fs::path lab = fs::path(dir) / pair_name(i, "lab");
    if (!fs::exists(img)) break;
    SegSample s;
    s.image = read_pgm(img.string(), s.height, s.width);
    std::int64_t lh = 0, lw = 0;
    s.labels = read_pgm(lab.string(), lh, lw);
    if (lh != s.height || lw != s.width) throw ValidationError("label map " + lab.string() + " does not match its image size");
    out.push_back(std::move(s));
  }
  if (out.empty()) throw ValidationError("no NNNN.img.pgm files in '" + dir + "'");
  return out;
}

void validate_labels(const Dataset& data, int num_classes) {
  for (std::size_t i = 0; i < data.size(); ++i) {
    for (std::uint8_t v : data[i].labels) {
      if (v != 255 && v >= num_classes) {
        throw ValidationError("sample " + std::to_string(i) + " has label " + std::to_string(v) + " but num_classes is " +
                              std::to_string(num_classes));
      }
    }
  }
}

template <typename T>
Batch<T> make_batch(const Dataset& data, std::span<const std::size_t> indices, std::int64_t crop_h, std::int64_t crop_w,
                    Rng* rng) {
  if (indices.empty()) throw ValidationError("make_batch: no samples");
  const SegSample& first = data.at(indices[0]);
  const std::int64_t h = std::min(crop_h, first.height), w = std::min(crop_w, first.width);
  const std::int64_t n = static_cast<std::int64_t>(indices.size());
  Batch<T> b{Tensor<T>::zeros(Shape{n, 1, h, w}), std::vector<std::uint8_t>(static_cast<std::size_t>(n * h * w))};
  auto img = b.images.data();
  for (std::int64_t k = 0; k < n; ++k) {
    const SegSample& s = data.at(indices[static_cast<std::size_t>(k)]);
    if (s.height < h || s.width < w) throw ValidationError("make_batch: samples in one batch must share a size");
    std::int64_t oy = (s.height - h) / 2, ox = (s.width - w) / 2;
    if (rng != nullptr) {
      oy = std::uniform_int_distribution<std::int64_t>(0, s.height - h)(*rng);
      ox = std::uniform_int_distribution<std::int64_t>(0, s.width - w)(*rng);
    }
    for (std::int64_t y = 0; y < h; ++y) {
      for (std::int64_t x = 0; x < w; ++x) {
        const std::size_t src = static_cast<std::size_t>((y + oy) * s.width + x + ox);
        const std::size_t dst = static_cast<std::size_t>((k * h + y) * w + x);
        img[dst] = static_cast<T>(normalize_intensity(s.image[src]));
        b.labels[dst] = s.labels[src];
      }
    }
  }
  return b;
}

template Batch<float> make_batch<float>(const Dataset&, std::span<const std::size_t>, std::int64_t, std::int64_t, Rng*);
template Batch<double> make_batch<double>(const Dataset&, std::span<const std::size_t>, std::int64_t, std::int64_t, Rng*);

}  // namespace rspnet
