#include "gcnn/image.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <csetjmp>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "gcnn/checkpoint.hpp"
#include "gcnn/error.hpp"

namespace gcnn {
namespace {

bool is_space(std::uint8_t c) { return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\v' || c == '\f'; }

// Reads one whitespace-delimited header token of a PNM file, skipping comments.
std::size_t pnm_token(const std::vector<std::uint8_t>& b, std::size_t& pos, const std::string& name) {
  for (;;) {
    while (pos < b.size() && is_space(b[pos])) ++pos;
    if (pos < b.size() && b[pos] == '#') {
      while (pos < b.size() && b[pos] != '\n') ++pos;
      continue;
    }
    break;
  }
  std::size_t v = 0, digits = 0;
  while (pos < b.size() && b[pos] >= '0' && b[pos] <= '9') {
    v = v * 10 + (b[pos++] - '0');
    if (++digits > 9) throw FormatError(name + ": PGM header value too large");
  }
  if (digits == 0) throw FormatError(name + ": malformed PGM header");
  return v;
}

GrayImage decode_pgm(const std::vector<std::uint8_t>& b, const std::string& name) {
  std::size_t pos = 2;
  const std::size_t w = pnm_token(b, pos, name);
  const std::size_t h = pnm_token(b, pos, name);
  const std::size_t maxval = pnm_token(b, pos, name);
  if (maxval != 255)
    throw FormatError(name + ": unsupported PGM maxval " + std::to_string(maxval) + " (only 8-bit, maxval 255)");
  if (w == 0 || h == 0) throw FormatError(name + ": empty image");
  if (pos >= b.size() || !is_space(b[pos])) throw FormatError(name + ": malformed PGM header");
  ++pos;
  if (b.size() - pos < w * h) throw FormatError(name + ": truncated PGM payload");
  GrayImage img(h, w);
  for (std::size_t i = 0; i < w * h; ++i) img.pixels[i] = static_cast<float>(b[pos + i]) / 255.0f;
  return img;
}

struct PngReadCursor {
  const std::vector<std::uint8_t>* bytes;
  std::size_t pos;
};

void png_read_mem(png_structp png, png_bytep out, png_size_t n) {
  auto* cur = static_cast<PngReadCursor*>(png_get_io_ptr(png));
  if (cur->bytes->size() - cur->pos < n) png_error(png, "truncated PNG stream");
  std::memcpy(out, cur->bytes->data() + cur->pos, n);
  cur->pos += n;
}

void png_write_mem(png_structp png, png_bytep data, png_size_t n) {
  auto* out = static_cast<std::vector<std::uint8_t>*>(png_get_io_ptr(png));
  out->insert(out->end(), data, data + n);
}

void png_flush_noop(png_structp) {}

// libpng reports through these instead of printing to stderr.
void png_error_to_string(png_structp png, png_const_charp msg) {
  auto* sink = static_cast<std::string*>(png_get_error_ptr(png));
  if (sink && sink->empty()) *sink = msg;
  png_longjmp(png, 1);
}
void png_warning_ignore(png_structp, png_const_charp) {}

GrayImage decode_png(const std::vector<std::uint8_t>& b, const std::string& name) {
  std::string failure;
  png_structp png =
      png_create_read_struct(PNG_LIBPNG_VER_STRING, &failure, png_error_to_string, png_warning_ignore);
  if (!png) throw FormatError(name + ": cannot initialise PNG decoder");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_read_struct(&png, nullptr, nullptr);
    throw FormatError(name + ": cannot initialise PNG decoder");
  }
  PngReadCursor cur{&b, 0};
  GrayImage img;
  std::vector<png_bytep> rows;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw FormatError(name + ": " + (failure.empty() ? "corrupt PNG data" : failure));
  }
  png_set_read_fn(png, &cur, png_read_mem);
  png_read_info(png, info);
  png_uint_32 w = 0, h = 0;
  int depth = 0, color = 0;
  png_get_IHDR(png, info, &w, &h, &depth, &color, nullptr, nullptr, nullptr);
  if (color != PNG_COLOR_TYPE_GRAY || depth != 8) {
    char why[96];
    std::snprintf(why, sizeof why, "unsupported PNG (need 8-bit grayscale, got color type %d, bit depth %d)",
                  color, depth);
    png_error(png, why);
  }
  img = GrayImage(h, w);
  std::vector<std::uint8_t> raw(static_cast<std::size_t>(w) * h);
  rows.resize(h);
  for (png_uint_32 r = 0; r < h; ++r) rows[r] = raw.data() + static_cast<std::size_t>(r) * w;
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  for (std::size_t i = 0; i < raw.size(); ++i) img.pixels[i] = static_cast<float>(raw[i]) / 255.0f;
  return img;
}

std::string lower_ext(const std::string& path) {
  std::string ext = std::filesystem::path(path).extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
  return ext;
}

}  // namespace

GrayImage decode_image(const std::vector<std::uint8_t>& bytes, const std::string& name) {
  static const std::uint8_t kPngSig[8] = {0x89, 'P', 'N', 'G', 0x0d, 0x0a, 0x1a, 0x0a};
  if (bytes.size() >= 8 && std::memcmp(bytes.data(), kPngSig, 8) == 0) return decode_png(bytes, name);
  if (bytes.size() >= 2 && bytes[0] == 'P' && bytes[1] == '5') return decode_pgm(bytes, name);
  if (bytes.size() >= 2 && bytes[0] == 'P' && bytes[1] >= '1' && bytes[1] <= '7')
    throw FormatError(name + ": unsupported PNM variant P" + std::string(1, static_cast<char>(bytes[1])) +
                      " (only binary P5)");
  throw FormatError(name + ": unrecognised image format (expected binary PGM or 8-bit grayscale PNG)");
}

GrayImage load_image(const std::string& path) { return decode_image(read_file_bytes(path), path); }

std::vector<std::uint8_t> quantize(const GrayImage& img) {
  std::vector<std::uint8_t> out(img.pixels.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    double v = static_cast<double>(img.pixels[i]);
    if (std::isnan(v)) v = 0.0;
    v = std::clamp(v, 0.0, 1.0) * 255.0;
    out[i] = static_cast<std::uint8_t>(std::round(v));
  }
  return out;
}

GrayImage clamped(const GrayImage& img) {
  GrayImage out = img;
  for (auto& p : out.pixels) p = std::clamp(p, 0.0f, 1.0f);
  return out;
}

std::vector<std::uint8_t> encode_pgm(const GrayImage& img) {
  const std::string header = "P5\n" + std::to_string(img.width) + " " + std::to_string(img.height) + "\n255\n";
  std::vector<std::uint8_t> out(header.begin(), header.end());
  const auto q = quantize(img);
  out.insert(out.end(), q.begin(), q.end());
  return out;
}

std::vector<std::uint8_t> encode_png(const GrayImage& img) {
  std::vector<std::uint8_t> out;
  auto q = quantize(img);
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) throw IoError("cannot initialise PNG encoder");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_write_struct(&png, nullptr);
    throw IoError("cannot initialise PNG encoder");
  }
  std::vector<png_bytep> rows(img.height);
  for (std::size_t r = 0; r < img.height; ++r) rows[r] = q.data() + r * img.width;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw IoError("PNG encoding failed");
  }
  png_set_write_fn(png, &out, png_write_mem, png_flush_noop);
  png_set_IHDR(png, info, static_cast<png_uint_32>(img.width), static_cast<png_uint_32>(img.height), 8,
               PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  png_write_image(png, rows.data());
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
  return out;
}

void save_image(const GrayImage& img, const std::string& path) {
  if (img.height == 0 || img.width == 0 || img.pixels.size() != img.height * img.width)
    throw ShapeError("save_image: malformed image for '" + path + "'");
  const auto bytes = lower_ext(path) == ".png" ? encode_png(img) : encode_pgm(img);
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open '" + path + "' for writing");
  f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw IoError("write failed for '" + path + "'");
}

GrayImage crop(const GrayImage& img, std::size_t row, std::size_t col, std::size_t h, std::size_t w) {
  if (row + h > img.height || col + w > img.width)
    throw SizingError("crop: region exceeds image bounds");
  GrayImage out(h, w);
  for (std::size_t r = 0; r < h; ++r)
    std::copy_n(img.pixels.begin() + static_cast<std::ptrdiff_t>((row + r) * img.width + col), w,
                out.pixels.begin() + static_cast<std::ptrdiff_t>(r * w));
  return out;
}

template <class T>
Tensor<T> to_tensor(std::span<const GrayImage> images) {
  if (images.empty()) throw ShapeError("to_tensor: no images");
  const std::size_t h = images[0].height, w = images[0].width;
  Tensor<T> t(Shape{images.size(), 1, h, w});
  for (std::size_t n = 0; n < images.size(); ++n) {
    if (images[n].height != h || images[n].width != w) throw ShapeError("to_tensor: images differ in size");
    for (std::size_t i = 0; i < h * w; ++i) t[n * h * w + i] = static_cast<T>(images[n].pixels[i]);
  }
  return t;
}

template <class T>
GrayImage from_tensor(const Tensor<T>& t, std::size_t index) {
  if (t.rank() != 4 || t.dim(1) != 1 || index >= t.dim(0))
    throw ShapeError("from_tensor: expected [N,1,H,W] with image " + std::to_string(index) + ", got " +
                     shape_str(t.shape()));
  const std::size_t h = t.dim(2), w = t.dim(3);
  GrayImage img(h, w);
  for (std::size_t i = 0; i < h * w; ++i) img.pixels[i] = static_cast<float>(t[index * h * w + i]);
  return img;
}

GrayImage add_awgn(const GrayImage& img, const NoiseConfig& cfg) {
  if (!(cfg.sigma >= 0.0)) throw ConfigError("add_awgn: sigma must be >= 0");
  GrayImage out = img;
  if (cfg.sigma == 0.0) return out;
  const double s = cfg.sigma / 255.0;
  CounterRng rng(cfg.seed);
  for (auto& p : out.pixels) p = static_cast<float>(static_cast<double>(p) + s * rng.gaussian());
  return out;
}

PatchSet extract_patches(std::span<const GrayImage> images, std::size_t size, std::size_t stride) {
  if (size == 0 || stride == 0) throw ConfigError("extract_patches: size and stride must be positive");
  PatchSet set;
  set.size = size;
  set.stride = stride;
  for (std::size_t id = 0; id < images.size(); ++id) {
    const GrayImage& img = images[id];
    if (size > img.height || size > img.width)
      throw SizingError("extract_patches: patch size " + std::to_string(size) + " exceeds image " +
                        std::to_string(id) + " (" + std::to_string(img.height) + "x" +
                        std::to_string(img.width) + ")");
    for (std::size_t r = 0; r + size <= img.height; r += stride)
      for (std::size_t c = 0; c + size <= img.width; c += stride) set.patches.push_back({id, r, c});
  }
  return set;
}

std::vector<PatchRef> iterate(const PatchSet& set, std::uint64_t shuffle_seed) {
  std::vector<PatchRef> order = set.patches;
  CounterRng rng(shuffle_seed);
  for (std::size_t i = order.size(); i-- > 1;) std::swap(order[i], order[rng.index(i + 1)]);
  return order;
}

std::vector<std::string> read_manifest(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot open manifest '" + path + "'");
  const std::filesystem::path base = std::filesystem::path(path).parent_path();
  std::vector<std::string> out;
  std::string line;
  while (std::getline(f, line)) {
    const auto b = line.find_first_not_of(" \t\r");
    if (b == std::string::npos || line[b] == '#') continue;
    const auto e = line.find_last_not_of(" \t\r");
    std::filesystem::path p(line.substr(b, e - b + 1));
    out.push_back((p.is_absolute() ? p : base / p).string());
  }
  if (out.empty()) throw FormatError("manifest '" + path + "' lists no images");
  return out;
}

GrayImage make_synthetic_image(std::uint64_t seed, std::size_t height, std::size_t width) {
  CounterRng rng(seed);
  GrayImage img(height, width);
  const double gx = rng.uniform(-0.3, 0.3), gy = rng.uniform(-0.3, 0.3), base = rng.uniform(0.3, 0.7);
  for (std::size_t r = 0; r < height; ++r)
    for (std::size_t c = 0; c < width; ++c)
      img.at(r, c) = static_cast<float>(base + gx * (static_cast<double>(c) / width - 0.5) +
                                        gy * (static_cast<double>(r) / height - 0.5));
  const std::size_t shapes = 4 + rng.index(5);
  for (std::size_t s = 0; s < shapes; ++s) {
    const double cy = rng.uniform(0.0, static_cast<double>(height));
    const double cx = rng.uniform(0.0, static_cast<double>(width));
    const double ry = rng.uniform(3.0, static_cast<double>(height) / 3.0);
    const double rx = rng.uniform(3.0, static_cast<double>(width) / 3.0);
    const double val = rng.uniform(0.05, 0.95);
    const bool ellipse = rng.uniform() < 0.5;
    const bool striped = rng.uniform() < 0.3;
    const double period = rng.uniform(3.0, 8.0);
    for (std::size_t r = 0; r < height; ++r)
      for (std::size_t c = 0; c < width; ++c) {
        const double dy = (static_cast<double>(r) - cy) / ry, dx = (static_cast<double>(c) - cx) / rx;
        const bool inside = ellipse ? dx * dx + dy * dy <= 1.0 : std::abs(dx) <= 1.0 && std::abs(dy) <= 1.0;
        if (!inside) continue;
        double v = val;
        if (striped) v += 0.15 * std::sin(2.0 * M_PI * static_cast<double>(c + r) / period);
        img.at(r, c) = static_cast<float>(v);
      }
  }
  for (auto& p : img.pixels) p = std::round(std::clamp(p, 0.0f, 1.0f) * 255.0f) / 255.0f;
  return img;
}

template Tensor<float> to_tensor<float>(std::span<const GrayImage>);
template Tensor<double> to_tensor<double>(std::span<const GrayImage>);
template GrayImage from_tensor<float>(const Tensor<float>&, std::size_t);
template GrayImage from_tensor<double>(const Tensor<double>&, std::size_t);

}  // namespace gcnn
