#pragma once

// Images, the pixel <-> token codec, augmentation, resampling and dataset
// storage (netpbm files + manifest, and the packed PXS1 stream format).

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "pixscale/binio.hpp"
#include "pixscale/common.hpp"

namespace pixscale {

/// Square image, channel-interleaved, row-major.
struct ImageGrid {
  int size = 0;
  int channels = 1;
  std::vector<std::uint8_t> pixels;
  std::optional<int> label;

  ImageGrid() = default;
  ImageGrid(int s, int ch, std::uint8_t fill = 0)
      : size(s), channels(ch), pixels(static_cast<std::size_t>(s) * s * ch, fill) {}

  std::uint8_t& at(int row, int col, int ch = 0) {
    return pixels[(static_cast<std::size_t>(row) * size + col) * channels + ch];
  }
  std::uint8_t at(int row, int col, int ch = 0) const {
    return pixels[(static_cast<std::size_t>(row) * size + col) * channels + ch];
  }

  void validate(int num_classes = std::numeric_limits<int>::max()) const {
    require(size >= 1, "image size must be positive");
    require(channels == 1 || channels == 3, "image channels must be 1 or 3");
    require(pixels.size() == static_cast<std::size_t>(size) * size * channels,
            "image pixel buffer does not match size");
    require(!label || (*label >= 0 && *label < num_classes), "image label out of range");
  }

  friend bool operator==(const ImageGrid&, const ImageGrid&) = default;
};

/// Raster-ordered token sequence over a vocabulary of size `vocab`.
struct PixelSequence {
  std::vector<int> tokens;
  int vocab = 256;
  int resolution = 0;

  void validate() const {
    require(tokens.size() == static_cast<std::size_t>(resolution) * resolution,
            "sequence length must equal resolution squared");
    for (int t : tokens) require(t >= 0 && t < vocab, "token out of vocabulary range");
  }
};

enum class CodecMode { grayscale, kmeans };

struct PaletteCodec {
  CodecMode mode = CodecMode::grayscale;
  int vocab = 256;
  int channels = 1;
  /// vocab x channels, kmeans mode only.
  std::vector<double> centroids;

  static PaletteCodec grayscale() { return {}; }

  const double* centroid(int k) const { return centroids.data() + static_cast<std::size_t>(k) * channels; }

  void validate() const {
    require(vocab >= 2, "codec vocabulary must be at least 2");
    if (mode == CodecMode::grayscale) {
      require(vocab == 256 && channels == 1, "grayscale codec requires K=256 and one channel");
    } else {
      require(centroids.size() == static_cast<std::size_t>(vocab) * channels,
              "kmeans codec centroid table has wrong size");
    }
  }

  nlohmann::json to_json() const {
    nlohmann::json j;
    j["mode"] = mode == CodecMode::grayscale ? "grayscale" : "kmeans";
    j["K"] = vocab;
    j["channels"] = channels;
    if (mode == CodecMode::kmeans) j["centroids"] = centroids;
    return j;
  }

  static PaletteCodec from_json(const nlohmann::json& j) {
    PaletteCodec c;
    const std::string mode = j.at("mode").get<std::string>();
    require(mode == "grayscale" || mode == "kmeans", "unknown codec mode " + mode);
    c.mode = mode == "grayscale" ? CodecMode::grayscale : CodecMode::kmeans;
    c.vocab = j.at("K").get<int>();
    c.channels = j.at("channels").get<int>();
    if (c.mode == CodecMode::kmeans) c.centroids = j.at("centroids").get<std::vector<double>>();
    c.validate();
    return c;
  }
};

// ---------------------------------------------------------------------------
// Palette fitting

namespace detail {

using Color = std::array<int, 3>;

inline Color pixel_color(const ImageGrid& img, std::size_t p) {
  Color c{0, 0, 0};
  for (int ch = 0; ch < img.channels; ++ch) c[ch] = img.pixels[p * img.channels + ch];
  return c;
}

}  // namespace detail

/// Lloyd's k-means over per-pixel color vectors. Initial centroids are the
/// first K entries of the lexicographically sorted distinct colors after a
/// seeded Fisher-Yates shuffle; iteration runs until assignments stop changing.
/// Clusters that empty out are re-seeded with the point farthest from its
/// centroid.
inline PaletteCodec fit_palette(const std::vector<ImageGrid>& images, int K, std::uint64_t seed,
                                int max_iterations = 500) {
  require(K >= 2, "palette size K must be at least 2");
  require(!images.empty(), "palette fitting needs at least one image");
  const int channels = images.front().channels;

  // Work on distinct colors weighted by multiplicity.
  std::map<detail::Color, std::int64_t> counts;
  for (const auto& img : images) {
    require(img.channels == channels, "palette fitting needs a uniform channel count");
    const std::size_t n = static_cast<std::size_t>(img.size) * img.size;
    for (std::size_t p = 0; p < n; ++p) ++counts[detail::pixel_color(img, p)];
  }
  const auto distinct = static_cast<int>(counts.size());
  if (distinct < K) {
    throw Error("insufficient distinct colors: found " + std::to_string(distinct) + ", need " +
                std::to_string(K) + " (deficit " + std::to_string(K - distinct) + ")");
  }

  std::vector<detail::Color> colors;
  std::vector<double> weight;
  colors.reserve(counts.size());
  for (const auto& [c, n] : counts) {
    colors.push_back(c);
    weight.push_back(static_cast<double>(n));
  }

  std::vector<int> order(colors.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
  Rng rng(seed);
  rng.shuffle(order.begin(), order.end());

  PaletteCodec codec;
  codec.mode = CodecMode::kmeans;
  codec.vocab = K;
  codec.channels = channels;
  codec.centroids.assign(static_cast<std::size_t>(K) * channels, 0.0);
  for (int k = 0; k < K; ++k)
    for (int ch = 0; ch < channels; ++ch) codec.centroids[k * channels + ch] = colors[order[k]][ch];

  auto dist2 = [&](const detail::Color& c, int k) {
    double d = 0.0;
    for (int ch = 0; ch < channels; ++ch) {
      const double diff = c[ch] - codec.centroids[k * channels + ch];
      d += diff * diff;
    }
    return d;
  };

  std::vector<int> assign(colors.size(), -1);
  for (int iter = 0; iter < max_iterations; ++iter) {
    bool changed = false;
    for (std::size_t i = 0; i < colors.size(); ++i) {
      int best = 0;
      double best_d = dist2(colors[i], 0);
      for (int k = 1; k < K; ++k) {
        const double d = dist2(colors[i], k);
        if (d < best_d) {
          best_d = d;
          best = k;
        }
      }
      if (assign[i] != best) {
        assign[i] = best;
        changed = true;
      }
    }
    if (!changed) break;

    std::vector<double> sums(codec.centroids.size(), 0.0);
    std::vector<double> mass(K, 0.0);
    for (std::size_t i = 0; i < colors.size(); ++i) {
      mass[assign[i]] += weight[i];
      for (int ch = 0; ch < channels; ++ch) sums[assign[i] * channels + ch] += weight[i] * colors[i][ch];
    }
    for (int k = 0; k < K; ++k) {
      if (mass[k] > 0.0) {
        for (int ch = 0; ch < channels; ++ch) codec.centroids[k * channels + ch] = sums[k * channels + ch] / mass[k];
        continue;
      }
      std::size_t far = 0;
      double far_d = -1.0;
      for (std::size_t i = 0; i < colors.size(); ++i) {
        const double d = dist2(colors[i], assign[i]);
        if (d > far_d) {
          far_d = d;
          far = i;
        }
      }
      for (int ch = 0; ch < channels; ++ch) codec.centroids[k * channels + ch] = colors[far][ch];
      assign[far] = k;
    }
  }
  return codec;
}

// ---------------------------------------------------------------------------
// Codec

/// Nearest centroid by squared distance; ties go to the lower index.
inline int nearest_centroid(const PaletteCodec& codec, const std::uint8_t* px) {
  int best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (int k = 0; k < codec.vocab; ++k) {
    const double* c = codec.centroid(k);
    double d = 0.0;
    for (int ch = 0; ch < codec.channels; ++ch) {
      const double diff = px[ch] - c[ch];
      d += diff * diff;
    }
    if (d < best_d) {
      best_d = d;
      best = k;
    }
  }
  return best;
}

inline PixelSequence encode(const ImageGrid& image, const PaletteCodec& codec) {
  require(image.channels == codec.channels,
          "channel mismatch: image has " + std::to_string(image.channels) + ", codec expects " +
              std::to_string(codec.channels));
  PixelSequence seq;
  seq.vocab = codec.vocab;
  seq.resolution = image.size;
  const std::size_t n = static_cast<std::size_t>(image.size) * image.size;
  seq.tokens.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const std::uint8_t* px = image.pixels.data() + i * image.channels;
    seq.tokens[i] = codec.mode == CodecMode::grayscale ? px[0] : nearest_centroid(codec, px);
  }
  return seq;
}

inline ImageGrid decode(const PixelSequence& seq, const PaletteCodec& codec) {
  require(seq.vocab == codec.vocab, "sequence vocabulary does not match codec");
  const auto n = seq.tokens.size();
  const auto s = static_cast<int>(std::llround(std::sqrt(static_cast<double>(n))));
  require(n > 0 && static_cast<std::size_t>(s) * s == n, "non-square length " + std::to_string(n));
  ImageGrid img(s, codec.channels);
  for (std::size_t i = 0; i < n; ++i) {
    const int t = seq.tokens[i];
    require(t >= 0 && t < codec.vocab, "token out of vocabulary range");
    if (codec.mode == CodecMode::grayscale) {
      img.pixels[i] = static_cast<std::uint8_t>(t);
    } else {
      const double* c = codec.centroid(t);
      for (int ch = 0; ch < codec.channels; ++ch)
        img.pixels[i * codec.channels + ch] =
            static_cast<std::uint8_t>(std::clamp(std::nearbyint(c[ch]), 0.0, 255.0));
    }
  }
  return img;
}

// ---------------------------------------------------------------------------
// Resampling

namespace detail {

struct Tap {
  int index;
  double weight;
};

/// Per-axis taps mapping `src_len` source pixels (starting at `offset`) onto
/// `dst_len` outputs. Area-weighted when shrinking, nearest when enlarging.
inline std::vector<std::vector<Tap>> axis_taps(int offset, int src_len, int dst_len) {
  std::vector<std::vector<Tap>> taps(dst_len);
  if (dst_len >= src_len) {
    for (int i = 0; i < dst_len; ++i) {
      const int j = static_cast<int>((static_cast<long long>(2 * i + 1) * src_len) / (2LL * dst_len));
      taps[i].push_back({offset + std::min(j, src_len - 1), 1.0});
    }
    return taps;
  }
  const double scale = static_cast<double>(src_len) / dst_len;
  for (int i = 0; i < dst_len; ++i) {
    const double lo = i * scale;
    const double hi = (i + 1) * scale;
    for (int j = static_cast<int>(std::floor(lo)); j < static_cast<int>(std::ceil(hi)) && j < src_len; ++j) {
      const double w = std::min(hi, j + 1.0) - std::max(lo, static_cast<double>(j));
      if (w > 0.0) taps[i].push_back({offset + j, w / scale});
    }
  }
  return taps;
}

inline std::uint8_t round_half_even(double v) {
  return static_cast<std::uint8_t>(std::clamp(std::nearbyint(v), 0.0, 255.0));
}

/// Resizes the crop (x0, y0, w, h) of `src` to a target x target image.
inline ImageGrid resize_crop(const ImageGrid& src, int x0, int y0, int w, int h, int target) {
  ImageGrid out(target, src.channels);
  out.label = src.label;
  const bool exact = w == h && w > target && w % target == 0;
  if (exact) {
    // Integer box average; halves round to even.
    const int f = w / target;
    for (int r = 0; r < target; ++r)
      for (int c = 0; c < target; ++c)
        for (int ch = 0; ch < src.channels; ++ch) {
          long sum = 0;
          for (int dy = 0; dy < f; ++dy)
            for (int dx = 0; dx < f; ++dx) sum += src.at(y0 + r * f + dy, x0 + c * f + dx, ch);
          out.at(r, c, ch) = round_half_even(static_cast<double>(sum) / (f * f));
        }
    return out;
  }
  const auto rows = axis_taps(y0, h, target);
  const auto cols = axis_taps(x0, w, target);
  for (int r = 0; r < target; ++r)
    for (int c = 0; c < target; ++c)
      for (int ch = 0; ch < src.channels; ++ch) {
        double acc = 0.0;
        for (const Tap& ty : rows[r])
          for (const Tap& tx : cols[c]) acc += ty.weight * tx.weight * src.at(ty.index, tx.index, ch);
        out.at(r, c, ch) = round_half_even(acc);
      }
  return out;
}

}  // namespace detail

/// Box-filter downsampling (exact integer averaging when the factor divides),
/// nearest-neighbour upsampling. Halves round to even.
inline ImageGrid resample(const ImageGrid& image, int target_s) {
  require(target_s >= 1, "target resolution must be at least 1");
  if (target_s == image.size) return image;
  return detail::resize_crop(image, 0, 0, image.size, image.size, target_s);
}

// ---------------------------------------------------------------------------
// Augmentation

struct AugmentConfig {
  double min_area = 0.08;
  double max_area = 1.0;
  double min_aspect = 3.0 / 4.0;
  double max_aspect = 4.0 / 3.0;
  double flip_probability = 0.5;
  int max_attempts = 10;
  bool random_crop = true;  // false: flip only
};

struct AugmentParams {
  bool flip = false;
  int x0 = 0;
  int y0 = 0;
  int width = 0;
  int height = 0;

  static AugmentParams identity(int s) { return {false, 0, 0, s, s}; }
};

/// Inception-style crop parameters plus a horizontal flip coin.
inline AugmentParams sample_augment(int s, std::uint64_t seed, const AugmentConfig& cfg = {}) {
  Rng rng(seed);
  AugmentParams p;
  p.flip = rng.uniform() < cfg.flip_probability;
  const double area = static_cast<double>(s) * s;
  const double log_lo = std::log(cfg.min_aspect);
  const double log_hi = std::log(cfg.max_aspect);
  for (int attempt = 0; cfg.random_crop && attempt < cfg.max_attempts; ++attempt) {
    const double target_area = area * rng.uniform(cfg.min_area, cfg.max_area);
    const double aspect = std::exp(rng.uniform(log_lo, log_hi));
    const int w = static_cast<int>(std::lround(std::sqrt(target_area * aspect)));
    const int h = static_cast<int>(std::lround(std::sqrt(target_area / aspect)));
    if (w >= 1 && h >= 1 && w <= s && h <= s) {
      p.width = w;
      p.height = h;
      p.x0 = static_cast<int>(rng.below(static_cast<std::uint64_t>(s - w + 1)));
      p.y0 = static_cast<int>(rng.below(static_cast<std::uint64_t>(s - h + 1)));
      return p;
    }
  }
  // Center-crop fallback; for square images this is the full frame.
  p.width = s;
  p.height = s;
  p.x0 = 0;
  p.y0 = 0;
  return p;
}

inline ImageGrid apply_augment(const ImageGrid& image, const AugmentParams& p) {
  ImageGrid out = (p.x0 == 0 && p.y0 == 0 && p.width == image.size && p.height == image.size)
                      ? image
                      : detail::resize_crop(image, p.x0, p.y0, p.width, p.height, image.size);
  if (p.flip) {
    for (int r = 0; r < out.size; ++r)
      for (int c = 0; c < out.size / 2; ++c)
        for (int ch = 0; ch < out.channels; ++ch) std::swap(out.at(r, c, ch), out.at(r, out.size - 1 - c, ch));
  }
  return out;
}

inline ImageGrid augment(const ImageGrid& image, std::uint64_t rng_seed, const AugmentConfig& cfg = {}) {
  return apply_augment(image, sample_augment(image.size, rng_seed, cfg));
}

// ---------------------------------------------------------------------------
// Storage

/// In-memory dataset at a single resolution.
struct Dataset {
  int resolution = 0;
  int channels = 1;
  std::vector<ImageGrid> images;

  std::size_t size() const { return images.size(); }

  int num_classes() const {
    int n = 0;
    for (const auto& img : images)
      if (img.label) n = std::max(n, *img.label + 1);
    return n;
  }

  std::vector<int> labels() const {
    std::vector<int> out;
    out.reserve(images.size());
    for (const auto& img : images) out.push_back(img.label.value_or(-1));
    return out;
  }
};

inline constexpr std::uint16_t kNoLabel = 0xFFFF;

/// PXS1: magic, u32 count, u32 s, u32 channels, count*s*s*channels bytes,
/// then count u16 labels (0xFFFF = unlabeled).
inline std::string pack_dataset(const Dataset& ds) {
  std::string out;
  binio::put_magic(out, "PXS1");
  binio::put<std::uint32_t>(out, static_cast<std::uint32_t>(ds.images.size()));
  binio::put<std::uint32_t>(out, static_cast<std::uint32_t>(ds.resolution));
  binio::put<std::uint32_t>(out, static_cast<std::uint32_t>(ds.channels));
  for (const auto& img : ds.images) {
    require(img.size == ds.resolution && img.channels == ds.channels, "dataset image shape mismatch");
    out.append(reinterpret_cast<const char*>(img.pixels.data()), img.pixels.size());
  }
  for (const auto& img : ds.images) {
    require(!img.label || *img.label < kNoLabel, "label too large for packed format");
    binio::put<std::uint16_t>(out, img.label ? static_cast<std::uint16_t>(*img.label) : kNoLabel);
  }
  return out;
}

inline Dataset unpack_dataset(std::string_view data) {
  binio::Reader in(data, "packed dataset");
  in.expect_magic("PXS1");
  Dataset ds;
  const auto count = in.get<std::uint32_t>();
  ds.resolution = static_cast<int>(in.get<std::uint32_t>());
  ds.channels = static_cast<int>(in.get<std::uint32_t>());
  require(ds.resolution >= 1 && (ds.channels == 1 || ds.channels == 3), "packed dataset: bad header");
  const std::size_t per = static_cast<std::size_t>(ds.resolution) * ds.resolution * ds.channels;
  ds.images.reserve(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    ImageGrid img(ds.resolution, ds.channels);
    const char* p = in.take(per);
    std::copy(p, p + per, reinterpret_cast<char*>(img.pixels.data()));
    ds.images.push_back(std::move(img));
  }
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto label = in.get<std::uint16_t>();
    if (label != kNoLabel) ds.images[i].label = label;
  }
  require(in.remaining() == 0, "packed dataset: trailing bytes");
  return ds;
}

inline void save_dataset(const std::string& path, const Dataset& ds) { binio::write_file(path, pack_dataset(ds)); }

inline Dataset load_dataset(const std::string& path) { return unpack_dataset(binio::read_file(path)); }

namespace netpbm {

namespace detail {

inline std::string next_token(std::string_view data, std::size_t& pos) {
  for (;;) {
    while (pos < data.size() && std::isspace(static_cast<unsigned char>(data[pos]))) ++pos;
    if (pos < data.size() && data[pos] == '#') {
      while (pos < data.size() && data[pos] != '\n') ++pos;
      continue;
    }
    break;
  }
  std::size_t start = pos;
  while (pos < data.size() && !std::isspace(static_cast<unsigned char>(data[pos]))) ++pos;
  return std::string(data.substr(start, pos - start));
}

inline int parse_int(const std::string& tok, const std::string& path) {
  require(!tok.empty() && std::all_of(tok.begin(), tok.end(), [](char c) { return std::isdigit(static_cast<unsigned char>(c)); }),
          "corrupt image " + path + ": bad header field");
  return std::stoi(tok);
}

}  // namespace detail

/// Reads P2/P3/P5/P6 (maxval <= 255). Images must be square.
inline ImageGrid read(const std::string& path) {
  std::string data;
  try {
    data = binio::read_file(path);
  } catch (const Error&) {
    throw Error("unreadable image " + path);
  }
  std::size_t pos = 0;
  const std::string magic = detail::next_token(data, pos);
  require(magic == "P2" || magic == "P3" || magic == "P5" || magic == "P6", "corrupt image " + path + ": not a netpbm file");
  const int channels = (magic == "P3" || magic == "P6") ? 3 : 1;
  const int w = detail::parse_int(detail::next_token(data, pos), path);
  const int h = detail::parse_int(detail::next_token(data, pos), path);
  const int maxval = detail::parse_int(detail::next_token(data, pos), path);
  require(w >= 1 && w == h, "corrupt image " + path + ": image must be square");
  require(maxval >= 1 && maxval <= 255, "corrupt image " + path + ": unsupported maxval");
  ImageGrid img(w, channels);
  const std::size_t n = img.pixels.size();
  auto scale = [&](int v) {
    require(v >= 0 && v <= maxval, "corrupt image " + path + ": sample out of range");
    return static_cast<std::uint8_t>(maxval == 255 ? v : (v * 255 + maxval / 2) / maxval);
  };
  if (magic == "P5" || magic == "P6") {
    ++pos;  // single whitespace after maxval
    require(pos + n <= data.size(), "corrupt image " + path + ": truncated pixel data");
    for (std::size_t i = 0; i < n; ++i) img.pixels[i] = scale(static_cast<unsigned char>(data[pos + i]));
  } else {
    for (std::size_t i = 0; i < n; ++i) {
      const std::string tok = detail::next_token(data, pos);
      require(!tok.empty(), "corrupt image " + path + ": truncated pixel data");
      img.pixels[i] = scale(detail::parse_int(tok, path));
    }
  }
  return img;
}

inline void write(const std::string& path, const ImageGrid& img) {
  std::string out = (img.channels == 3 ? "P6\n" : "P5\n") + std::to_string(img.size) + " " +
                    std::to_string(img.size) + "\n255\n";
  out.append(reinterpret_cast<const char*>(img.pixels.data()), img.pixels.size());
  binio::write_file(path, out);
}

}  // namespace netpbm

/// Manifest: one `relative_path label` record per line (label -1 = none).
inline Dataset read_image_directory(const std::string& dir, int target_s) {
  namespace fs = std::filesystem;
  const fs::path manifest = fs::path(dir) / "manifest.txt";
  std::ifstream in(manifest);
  require(static_cast<bool>(in), "cannot open manifest " + manifest.string());
  Dataset ds;
  ds.resolution = target_s;
  std::string line;
  bool first = true;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    std::istringstream fields(line);
    std::string rel;
    int label = -1;
    require(static_cast<bool>(fields >> rel), "malformed manifest line: " + line);
    fields >> label;
    ImageGrid img = netpbm::read((fs::path(dir) / rel).string());
    if (label >= 0) img.label = label;
    if (first) {
      ds.channels = img.channels;
      first = false;
    }
    require(img.channels == ds.channels, "mixed channel counts at " + rel);
    ds.images.push_back(resample(img, target_s));
  }
  require(!ds.images.empty(), "empty dataset in " + dir);
  return ds;
}

inline void write_image_directory(const std::string& dir, const Dataset& ds) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  std::ostringstream manifest;
  for (std::size_t i = 0; i < ds.images.size(); ++i) {
    char name[32];
    std::snprintf(name, sizeof(name), "img%06zu.%s", i, ds.channels == 3 ? "ppm" : "pgm");
    netpbm::write((fs::path(dir) / name).string(), ds.images[i]);
    manifest << name << ' ' << ds.images[i].label.value_or(-1) << '\n';
  }
  binio::write_file((fs::path(dir) / "manifest.txt").string(), manifest.str());
}

// ---------------------------------------------------------------------------
// Synthetic corpus

/// Ten procedurally generated grayscale pattern classes (stripes at several
/// orientations and periods, discs, rings, gradients, checkers, crosses) with
/// random phase, contrast and sensor noise.
inline ImageGrid synthetic_image(int size, int label, Rng& rng) {
  ImageGrid img(size, 1);
  img.label = label;
  const double lo = rng.uniform(10.0, 90.0);
  const double hi = rng.uniform(160.0, 245.0);
  const double phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
  const double cx = rng.uniform(0.35, 0.65);
  const double cy = rng.uniform(0.35, 0.65);
  const double radius = rng.uniform(0.18, 0.3);
  const double noise = rng.uniform(2.0, 10.0);
  const double pi = std::numbers::pi;
  for (int r = 0; r < size; ++r) {
    for (int c = 0; c < size; ++c) {
      const double y = (r + 0.5) / size;
      const double x = (c + 0.5) / size;
      double t = 0.0;  // pattern intensity in [0, 1]
      switch (label) {
        case 0: t = 0.5 + 0.5 * std::sin(2 * pi * 2 * y + phase); break;            // wide horizontal stripes
        case 1: t = 0.5 + 0.5 * std::sin(2 * pi * 4 * y + phase); break;            // narrow horizontal stripes
        case 2: t = 0.5 + 0.5 * std::sin(2 * pi * 2 * x + phase); break;            // vertical stripes
        case 3: t = 0.5 + 0.5 * std::sin(2 * pi * 2.5 * (x + y) + phase); break;    // diagonal stripes
        case 4: t = std::hypot(x - cx, y - cy) < radius ? 1.0 : 0.0; break;         // bright disc
        case 5: t = std::hypot(x - cx, y - cy) < radius ? 0.0 : 1.0; break;         // dark disc
        case 6: t = std::abs(std::hypot(x - cx, y - cy) - radius) < 0.09 ? 1.0 : 0.0; break;  // ring
        case 7: t = y; break;                                                       // vertical gradient
        case 8: t = ((static_cast<int>(std::floor(x * 4 + cx)) + static_cast<int>(std::floor(y * 4 + cy))) % 2) ? 1.0 : 0.0; break;
        default: t = (std::abs(x - cx) < 0.1 || std::abs(y - cy) < 0.1) ? 1.0 : 0.0; break;  // cross
      }
      const double v = lo + (hi - lo) * t + noise * rng.normal();
      img.at(r, c) = static_cast<std::uint8_t>(std::clamp(std::nearbyint(v), 0.0, 255.0));
    }
  }
  return img;
}

inline Dataset synthetic_dataset(std::size_t count, int size, std::uint64_t seed, int num_classes = 10) {
  Dataset ds;
  ds.resolution = size;
  ds.channels = 1;
  ds.images.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    Rng rng(derive_seed(seed, i));
    ds.images.push_back(synthetic_image(size, static_cast<int>(i % static_cast<std::size_t>(num_classes)), rng));
  }
  return ds;
}

}  // namespace pixscale
