#pragma once

#include "pmshape/types.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <string>
#include <vector>

namespace pmshape {

// IDX (MNIST) files: big-endian 32-bit magic, 32-bit dimension sizes, then
// unsigned bytes. 0x00000803 is a rank-3 ubyte tensor (images), 0x00000801
// rank-1 (labels).

inline constexpr std::uint32_t kIdxImagesMagic = 0x00000803;
inline constexpr std::uint32_t kIdxLabelsMagic = 0x00000801;

namespace detail {

inline std::vector<std::uint8_t> read_all_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open '" + path.string() + "'");
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline std::uint32_t read_be32(const std::vector<std::uint8_t>& b, std::size_t off, const std::string& what) {
  if (off + 4 > b.size()) throw FormatError(what + ": truncated header");
  return (std::uint32_t(b[off]) << 24) | (std::uint32_t(b[off + 1]) << 16) | (std::uint32_t(b[off + 2]) << 8) |
         std::uint32_t(b[off + 3]);
}

inline void write_be32(std::ostream& out, std::uint32_t v) {
  const char bytes[4] = {char(v >> 24), char(v >> 16), char(v >> 8), char(v)};
  out.write(bytes, 4);
}

inline std::string hex32(std::uint32_t v) {
  std::ostringstream os;
  os << "0x" << std::hex << std::setw(8) << std::setfill('0') << v;
  return os.str();
}

}  // namespace detail

/// Raw IDX image tensor: count x rows x cols bytes.
struct IdxImages {
  std::uint32_t count = 0, rows = 0, cols = 0;
  std::vector<std::uint8_t> pixels;
};

inline IdxImages read_idx_image_bytes(const std::filesystem::path& path) {
  const auto b = detail::read_all_bytes(path);
  const std::string what = path.string();
  const std::uint32_t magic = detail::read_be32(b, 0, what);
  if (magic != kIdxImagesMagic)
    throw FormatError(what + ": bad IDX image magic " + detail::hex32(magic) + " (expected 0x00000803)");
  IdxImages img;
  img.count = detail::read_be32(b, 4, what);
  img.rows = detail::read_be32(b, 8, what);
  img.cols = detail::read_be32(b, 12, what);
  const std::size_t need = std::size_t(img.count) * img.rows * img.cols;
  if (b.size() - 16 < need)
    throw FormatError(what + ": truncated IDX image data (" + std::to_string(b.size() - 16) + " of " +
                      std::to_string(need) + " bytes)");
  img.pixels.assign(b.begin() + 16, b.begin() + 16 + std::ptrdiff_t(need));
  return img;
}

/// Images scaled to [0,1] by /255.
inline std::vector<GrayImage> load_idx_images(const std::filesystem::path& path) {
  const IdxImages raw = read_idx_image_bytes(path);
  if (raw.count > 0 && (raw.rows == 0 || raw.cols == 0)) throw FormatError(path.string() + ": zero image size");
  std::vector<GrayImage> out;
  out.reserve(raw.count);
  const std::size_t n = std::size_t(raw.rows) * raw.cols;
  for (std::size_t k = 0; k < raw.count; ++k) {
    GrayImage g(int(raw.cols), int(raw.rows));
    for (std::size_t i = 0; i < n; ++i) g.data[Eigen::Index(i)] = raw.pixels[k * n + i] / 255.0;
    out.push_back(std::move(g));
  }
  return out;
}

inline std::vector<int> load_idx_labels(const std::filesystem::path& path) {
  const auto b = detail::read_all_bytes(path);
  const std::string what = path.string();
  const std::uint32_t magic = detail::read_be32(b, 0, what);
  if (magic != kIdxLabelsMagic)
    throw FormatError(what + ": bad IDX label magic " + detail::hex32(magic) + " (expected 0x00000801)");
  const std::uint32_t count = detail::read_be32(b, 4, what);
  if (b.size() - 8 < count)
    throw FormatError(what + ": truncated IDX label data (" + std::to_string(b.size() - 8) + " of " +
                      std::to_string(count) + " bytes)");
  return {b.begin() + 8, b.begin() + 8 + count};
}

/// Loads a paired image/label set; the counts must agree.
inline std::pair<std::vector<GrayImage>, std::vector<int>> load_idx_pair(const std::filesystem::path& images,
                                                                        const std::filesystem::path& labels) {
  auto imgs = load_idx_images(images);
  auto labs = load_idx_labels(labels);
  if (imgs.size() != labs.size())
    throw FormatError("IDX pairing error: " + std::to_string(imgs.size()) + " images but " +
                      std::to_string(labs.size()) + " labels");
  return {std::move(imgs), std::move(labs)};
}

inline void write_idx_images(const std::filesystem::path& path, const IdxImages& img) {
  if (img.pixels.size() != std::size_t(img.count) * img.rows * img.cols)
    throw DimensionError("write_idx_images: pixel count mismatch");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot write '" + path.string() + "'");
  detail::write_be32(out, kIdxImagesMagic);
  detail::write_be32(out, img.count);
  detail::write_be32(out, img.rows);
  detail::write_be32(out, img.cols);
  out.write(reinterpret_cast<const char*>(img.pixels.data()), std::streamsize(img.pixels.size()));
}

/// Quantizes [0,1] images to bytes (round(255 v)); all images must share dimensions.
inline void write_idx_images(const std::filesystem::path& path, const std::vector<GrayImage>& images) {
  IdxImages raw;
  raw.count = std::uint32_t(images.size());
  if (!images.empty()) {
    raw.rows = std::uint32_t(images.front().height);
    raw.cols = std::uint32_t(images.front().width);
  }
  for (const auto& g : images) {
    require_same_shape(g, images.front(), "write_idx_images");
    for (Eigen::Index i = 0; i < g.data.size(); ++i)
      raw.pixels.push_back(std::uint8_t(std::lround(std::clamp(g.data[i], 0.0, 1.0) * 255.0)));
  }
  write_idx_images(path, raw);
}

inline void write_idx_labels(const std::filesystem::path& path, const std::vector<int>& labels) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot write '" + path.string() + "'");
  detail::write_be32(out, kIdxLabelsMagic);
  detail::write_be32(out, std::uint32_t(labels.size()));
  for (int l : labels) {
    if (l < 0 || l > 255) throw DimensionError("write_idx_labels: label out of byte range");
    out.put(char(l));
  }
}

// ---------------------------------------------------------------------------
// PGM (binary P5, maxval 255).

inline void write_pgm(const std::filesystem::path& path, int width, int height, const std::vector<std::uint8_t>& px) {
  if (px.size() != std::size_t(width) * height) throw DimensionError("write_pgm: size mismatch");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot write '" + path.string() + "'");
  out << "P5\n" << width << ' ' << height << "\n255\n";
  out.write(reinterpret_cast<const char*>(px.data()), std::streamsize(px.size()));
}

/// Values in [0,1] mapped to round(255 v).
inline void write_pgm(const std::filesystem::path& path, int width, int height, const Vector& values) {
  std::vector<std::uint8_t> px(std::size_t(values.size()));
  for (Eigen::Index i = 0; i < values.size(); ++i)
    px[std::size_t(i)] = std::uint8_t(std::lround(std::clamp(values[i], 0.0, 1.0) * 255.0));
  write_pgm(path, width, height, px);
}

inline void write_pgm(const std::filesystem::path& path, const BinaryMask& m) {
  std::vector<std::uint8_t> px(m.size());
  for (std::size_t i = 0; i < m.size(); ++i) px[i] = m.data[i] ? 255 : 0;
  write_pgm(path, m.width, m.height, px);
}

inline GrayImage read_pgm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open '" + path.string() + "'");
  std::string magic;
  int w = 0, h = 0, maxval = 0;
  in >> magic >> w >> h >> maxval;
  if (magic != "P5" || w < 1 || h < 1 || maxval != 255) throw FormatError(path.string() + ": unsupported PGM");
  in.get();
  std::vector<std::uint8_t> px(std::size_t(w) * h);
  in.read(reinterpret_cast<char*>(px.data()), std::streamsize(px.size()));
  if (in.gcount() != std::streamsize(px.size())) throw FormatError(path.string() + ": truncated PGM");
  GrayImage g(w, h);
  for (std::size_t i = 0; i < px.size(); ++i) g.data[Eigen::Index(i)] = px[i] / 255.0;
  return g;
}

// ---------------------------------------------------------------------------
// CSV: header row, comma separated, LF line endings.

class CsvWriter {
 public:
  CsvWriter(const std::filesystem::path& path, const std::vector<std::string>& header)
      : out_(path, std::ios::binary), columns_(header.size()) {
    if (!out_) throw FormatError("cannot write '" + path.string() + "'");
    row(header);
  }

  template <class... Ts>
  void write(const Ts&... cells) {
    static_assert(sizeof...(Ts) > 0);
    std::vector<std::string> v{cell(cells)...};
    row(v);
  }

  void row(const std::vector<std::string>& cells) {
    if (cells.size() != columns_) throw DimensionError("CsvWriter: wrong number of columns");
    for (std::size_t i = 0; i < cells.size(); ++i) {
      if (i) out_ << ',';
      out_ << cells[i];
    }
    out_ << '\n';
  }

  /// 17 significant digits, enough to round-trip a double.
  static std::string cell(double v) {
    std::ostringstream os;
    os << std::setprecision(17) << v;
    return os.str();
  }
  static std::string cell(const std::string& v) { return v; }
  static std::string cell(const char* v) { return v; }
  static std::string cell(bool v) { return v ? "1" : "0"; }
  template <class T>
    requires std::is_integral_v<T>
  static std::string cell(T v) {
    return std::to_string(v);
  }

 private:
  std::ofstream out_;
  std::size_t columns_;
};

}  // namespace pmshape
