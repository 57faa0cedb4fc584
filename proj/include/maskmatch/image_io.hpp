#pragma once

// Lossless image readers (binary PGM/PPM, uncompressed BMP) and the MMRT raw
// tensor container.
//
// MMRT layout, all integers little-endian:
//   "MMRT" | version u32 | count u32 | H u32 | W u32 | Ch u32 | C u32
//   count * H * W * Ch float32 pixels (HWC per image)
//   count u16 labels (0xFFFF = unlabeled)

#include <algorithm>
#include <bit>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>
#include <vector>

#include "maskmatch/errors.hpp"
#include "maskmatch/image.hpp"

namespace maskmatch {

static_assert(std::endian::native == std::endian::little,
              "binary formats assume a little-endian host");

inline constexpr std::uint32_t kRawTensorVersion = 1;
inline constexpr std::uint16_t kUnlabeled = 0xFFFF;

namespace detail {

inline std::vector<unsigned char> read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IngestionError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

class ByteReader {
 public:
  ByteReader(const std::vector<unsigned char>& bytes, std::string what)
      : bytes_(bytes), what_(std::move(what)) {}

  template <class T>
  T get() {
    need(sizeof(T));
    T v;
    std::memcpy(&v, bytes_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }

  void read(void* dst, std::size_t n) {
    need(n);
    std::memcpy(dst, bytes_.data() + pos_, n);
    pos_ += n;
  }

  void need(std::size_t n) const {
    if (bytes_.size() - pos_ < n) throw IngestionError(what_ + ": truncated");
  }

  std::size_t pos() const { return pos_; }
  void seek(std::size_t p) {
    if (p > bytes_.size()) throw IngestionError(what_ + ": bad offset");
    pos_ = p;
  }
  std::size_t size() const { return bytes_.size(); }

 private:
  const std::vector<unsigned char>& bytes_;
  std::string what_;
  std::size_t pos_ = 0;
};

// Reads the next whitespace-delimited header token of a PNM file, skipping comments.
inline std::string pnm_token(const std::vector<unsigned char>& b, std::size_t& pos) {
  while (pos < b.size()) {
    if (b[pos] == '#') {
      while (pos < b.size() && b[pos] != '\n') ++pos;
    } else if (std::isspace(b[pos])) {
      ++pos;
    } else {
      break;
    }
  }
  std::string tok;
  while (pos < b.size() && !std::isspace(b[pos]) && b[pos] != '#') tok += static_cast<char>(b[pos++]);
  return tok;
}

inline Image read_pnm(const std::vector<unsigned char>& b, const std::string& name) {
  std::size_t pos = 0;
  const std::string magic = pnm_token(b, pos);
  int channels = 0;
  if (magic == "P5") channels = 1;
  else if (magic == "P6") channels = 3;
  else throw IngestionError(name + ": unsupported PNM variant '" + magic + "'");
  int w = 0, h = 0, maxval = 0;
  try {
    w = std::stoi(pnm_token(b, pos));
    h = std::stoi(pnm_token(b, pos));
    maxval = std::stoi(pnm_token(b, pos));
  } catch (const std::exception&) {
    throw IngestionError(name + ": malformed PNM header");
  }
  if (w <= 0 || h <= 0 || maxval <= 0 || maxval > 65535)
    throw IngestionError(name + ": invalid PNM dimensions");
  ++pos;  // single whitespace byte after maxval
  const std::size_t sample_bytes = maxval < 256 ? 1 : 2;
  const std::size_t need = static_cast<std::size_t>(w) * h * channels * sample_bytes;
  if (pos > b.size() || b.size() - pos < need) throw IngestionError(name + ": truncated pixel data");
  Image img(h, w, channels);
  for (std::size_t i = 0; i < img.pixels.size(); ++i) {
    unsigned v = sample_bytes == 1 ? b[pos + i] : (unsigned(b[pos + 2 * i]) << 8) | b[pos + 2 * i + 1];
    img.pixels[i] = static_cast<float>(v) / static_cast<float>(maxval);
  }
  return img;
}

inline Image read_bmp(const std::vector<unsigned char>& b, const std::string& name) {
  ByteReader r(b, name);
  r.seek(10);
  const auto data_offset = r.get<std::uint32_t>();
  const auto header_size = r.get<std::uint32_t>();
  if (header_size < 40) throw IngestionError(name + ": unsupported BMP header");
  const auto w = r.get<std::int32_t>();
  const auto h_signed = r.get<std::int32_t>();
  r.get<std::uint16_t>();  // planes
  const auto bpp = r.get<std::uint16_t>();
  const auto compression = r.get<std::uint32_t>();
  if (bpp != 24 && bpp != 32) throw IngestionError(name + ": only 24/32-bit BMP supported");
  if (compression != 0 && !(compression == 3 && bpp == 32))
    throw IngestionError(name + ": compressed BMP not supported");
  if (w <= 0 || h_signed == 0) throw IngestionError(name + ": invalid BMP dimensions");
  const bool bottom_up = h_signed > 0;
  const int h = bottom_up ? h_signed : -h_signed;
  const std::size_t bytes_pp = bpp / 8;
  const std::size_t stride = (static_cast<std::size_t>(w) * bytes_pp + 3) & ~std::size_t{3};
  if (data_offset > b.size() || b.size() - data_offset < stride * h)
    throw IngestionError(name + ": truncated pixel data");
  Image img(h, w, 3);
  for (int y = 0; y < h; ++y) {
    const int row = bottom_up ? h - 1 - y : y;
    const unsigned char* p = b.data() + data_offset + stride * row;
    for (int x = 0; x < w; ++x) {
      const unsigned char* px = p + x * bytes_pp;
      img.at(y, x, 0) = px[2] / 255.0f;
      img.at(y, x, 1) = px[1] / 255.0f;
      img.at(y, x, 2) = px[0] / 255.0f;
    }
  }
  return img;
}

}  // namespace detail

/// Reads a PGM (P5), PPM (P6) or uncompressed BMP file into [0,1] floats.
inline Image read_image(const std::filesystem::path& path) {
  const auto bytes = detail::read_file_bytes(path);
  const std::string name = path.string();
  if (bytes.size() >= 2 && bytes[0] == 'P') return detail::read_pnm(bytes, name);
  if (bytes.size() >= 2 && bytes[0] == 'B' && bytes[1] == 'M') return detail::read_bmp(bytes, name);
  throw IngestionError(name + ": unrecognized image format");
}

inline bool is_image_file(const std::filesystem::path& p) {
  auto ext = p.extension().string();
  for (auto& ch : ext) ch = static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
  return ext == ".ppm" || ext == ".pgm" || ext == ".pnm" || ext == ".bmp";
}

/// Writes an 8-bit binary PPM (3 channels) or PGM (1 channel).
inline void write_pnm(const std::filesystem::path& path, const Image& img) {
  if (img.channels != 1 && img.channels != 3) throw ShapeError("PNM supports 1 or 3 channels");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IngestionError("cannot write " + path.string());
  out << (img.channels == 1 ? "P5" : "P6") << "\n" << img.width << " " << img.height << "\n255\n";
  for (float v : img.pixels) {
    const auto q = static_cast<unsigned char>(std::lround(std::clamp(v, 0.0f, 1.0f) * 255.0f));
    out.put(static_cast<char>(q));
  }
}

/// Contents of an MMRT file.
struct RawTensorFile {
  int height = 0;
  int width = 0;
  int channels = 0;
  int num_classes = 0;
  std::vector<Image> images;
  std::vector<std::uint16_t> labels;
};

inline void write_raw_tensor_file(const std::filesystem::path& path, const RawTensorFile& f) {
  if (f.images.size() != f.labels.size()) throw ShapeError("image/label count mismatch");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IngestionError("cannot write " + path.string());
  auto put = [&](std::uint32_t v) { out.write(reinterpret_cast<const char*>(&v), sizeof v); };
  out.write("MMRT", 4);
  put(kRawTensorVersion);
  put(static_cast<std::uint32_t>(f.images.size()));
  put(static_cast<std::uint32_t>(f.height));
  put(static_cast<std::uint32_t>(f.width));
  put(static_cast<std::uint32_t>(f.channels));
  put(static_cast<std::uint32_t>(f.num_classes));
  for (const auto& img : f.images) {
    if (img.height != f.height || img.width != f.width || img.channels != f.channels)
      throw ShapeError("image shape differs from file header");
    out.write(reinterpret_cast<const char*>(img.pixels.data()),
              static_cast<std::streamsize>(img.pixels.size() * sizeof(float)));
  }
  out.write(reinterpret_cast<const char*>(f.labels.data()),
            static_cast<std::streamsize>(f.labels.size() * sizeof(std::uint16_t)));
  if (!out) throw IngestionError("short write to " + path.string());
}

inline RawTensorFile read_raw_tensor_file(const std::filesystem::path& path) {
  const auto bytes = detail::read_file_bytes(path);
  const std::string name = path.string();
  detail::ByteReader r(bytes, name);
  char magic[4];
  r.read(magic, 4);
  if (std::memcmp(magic, "MMRT", 4) != 0) throw IngestionError(name + ": bad magic");
  if (r.get<std::uint32_t>() != kRawTensorVersion) throw IngestionError(name + ": unsupported version");
  const auto count = r.get<std::uint32_t>();
  RawTensorFile f;
  f.height = static_cast<int>(r.get<std::uint32_t>());
  f.width = static_cast<int>(r.get<std::uint32_t>());
  f.channels = static_cast<int>(r.get<std::uint32_t>());
  f.num_classes = static_cast<int>(r.get<std::uint32_t>());
  if (f.height <= 0 || f.width <= 0 || f.channels <= 0 || f.num_classes < 2)
    throw IngestionError(name + ": invalid header values");
  const std::size_t per_image = static_cast<std::size_t>(f.height) * f.width * f.channels;
  const std::size_t expected = r.pos() + count * (per_image * sizeof(float) + sizeof(std::uint16_t));
  if (bytes.size() != expected) throw IngestionError(name + ": payload size does not match header");
  f.images.reserve(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    Image img(f.height, f.width, f.channels);
    r.read(img.pixels.data(), per_image * sizeof(float));
    for (float v : img.pixels)
      if (!(v >= 0.0f && v <= 1.0f)) throw IngestionError(name + ": pixel outside [0,1]");
    f.images.push_back(std::move(img));
  }
  f.labels.resize(count);
  if (count > 0) r.read(f.labels.data(), count * sizeof(std::uint16_t));
  for (auto l : f.labels)
    if (l != kUnlabeled && l >= f.num_classes) throw IngestionError(name + ": label out of range");
  return f;
}

}  // namespace maskmatch
