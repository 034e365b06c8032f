#include "rmf/dataset.hpp"

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>

#include <fmt/format.h>
#include <png.h>

#include "rmf/error.hpp"
#include "rmf/rng.hpp"

namespace rmf {

ImageShape LabeledDataset::image_shape() const {
  if (images.rank() != 4) return {};
  return {images.dim(1), images.dim(2), images.dim(3)};
}

void LabeledDataset::validate() const {
  if (class_count == 0) throw DataError("dataset class_count must be positive");
  if (images.rank() != 4) throw DataError("dataset images must be (N,H,W,C)");
  if (images.dim(0) != labels.size() || poisoned.size() != labels.size()) {
    throw DataError(fmt::format("dataset lengths disagree: {} images, {} labels, {} flags",
                                images.dim(0), labels.size(), poisoned.size()));
  }
  for (int y : labels) {
    if (y < 0 || static_cast<std::size_t>(y) >= class_count) {
      throw DataError(fmt::format("label {} out of range [0,{})", y, class_count));
    }
  }
  for (double v : images.values()) {
    if (!(v >= 0.0 && v <= 1.0)) throw DataError("image values must lie in [0,1]");
  }
}

LabeledDataset LabeledDataset::subset(std::span<const std::size_t> indices) const {
  LabeledDataset out;
  out.images = gather_rows(images, indices);
  out.class_count = class_count;
  out.labels.reserve(indices.size());
  out.poisoned.reserve(indices.size());
  for (auto i : indices) {
    out.labels.push_back(labels.at(i));
    out.poisoned.push_back(poisoned.at(i));
  }
  return out;
}

std::size_t LabeledDataset::poisoned_count() const {
  return static_cast<std::size_t>(std::count(poisoned.begin(), poisoned.end(), true));
}

std::size_t fraction_count(double fraction, std::size_t population) {
  if (!(fraction >= 0.0 && fraction <= 1.0)) {
    throw std::invalid_argument(fmt::format("fraction {} outside [0,1]", fraction));
  }
  // 0.29 * 100 evaluates to 28.999999999999996; the slack keeps such products whole.
  const auto n = static_cast<std::size_t>(std::floor(fraction * static_cast<double>(population) + 1e-9));
  return std::min(n, population);
}

// ---------------------------------------------------------------------------
// Synthetic signs

void SyntheticSpec::validate() const {
  if (class_count < 2) throw ConfigError("synthetic class_count must be at least 2");
  if (per_class_train == 0 || per_class_test == 0) {
    throw ConfigError("synthetic per-class counts must be positive");
  }
  if (image_size.height < 8 || image_size.width < 8 || image_size.channels == 0) {
    throw ConfigError("synthetic image_size must be at least 8x8 with one channel");
  }
  if (!(noise_std >= 0.0) || !std::isfinite(noise_std)) throw ConfigError("noise_std must be >= 0");
}

namespace {

// 5x7 numerals, one row per byte, bit 4 is the leftmost column.
constexpr std::array<std::array<std::uint8_t, 7>, 10> kDigits = {{
    {0x0E, 0x11, 0x13, 0x15, 0x19, 0x11, 0x0E},
    {0x04, 0x0C, 0x04, 0x04, 0x04, 0x04, 0x0E},
    {0x0E, 0x11, 0x01, 0x02, 0x04, 0x08, 0x1F},
    {0x1F, 0x02, 0x04, 0x02, 0x01, 0x11, 0x0E},
    {0x02, 0x06, 0x0A, 0x12, 0x1F, 0x02, 0x02},
    {0x1F, 0x10, 0x1E, 0x01, 0x01, 0x11, 0x0E},
    {0x06, 0x08, 0x10, 0x1E, 0x11, 0x11, 0x0E},
    {0x1F, 0x01, 0x02, 0x04, 0x08, 0x08, 0x08},
    {0x0E, 0x11, 0x11, 0x0E, 0x11, 0x11, 0x0E},
    {0x0E, 0x11, 0x11, 0x0F, 0x01, 0x02, 0x0C},
}};

using Rgb = std::array<double, 3>;

Rgb hsv(double hue_deg, double s, double v) {
  const double h = std::fmod(hue_deg, 360.0) / 60.0;
  const double c = v * s;
  const double x = c * (1.0 - std::fabs(std::fmod(h, 2.0) - 1.0));
  const double m = v - c;
  Rgb rgb{};
  switch (static_cast<int>(h)) {
    case 0: rgb = {c, x, 0}; break;
    case 1: rgb = {x, c, 0}; break;
    case 2: rgb = {0, c, x}; break;
    case 3: rgb = {0, x, c}; break;
    case 4: rgb = {x, 0, c}; break;
    default: rgb = {c, 0, x}; break;
  }
  for (auto& ch : rgb) ch += m;
  return rgb;
}

bool inside_shape(std::size_t kind, double x, double y, double r) {
  switch (kind) {
    case 0:  // circle
      return x * x + y * y <= r * r;
    case 1:  // upward triangle, apex at -r, base at r/2
      return y <= 0.5 * r && std::fabs(x) <= (y + r) / std::sqrt(3.0);
    default: {  // regular octagon with apothem r
      const double ax = std::fabs(x), ay = std::fabs(y);
      return ax <= r && ay <= r && ax + ay <= r * std::sqrt(2.0);
    }
  }
}

void write_pixel(Tensor& img, ImageShape shape, std::size_t y, std::size_t x, const Rgb& rgb) {
  double* px = img.data() + (y * shape.width + x) * shape.channels;
  if (shape.channels == 1) {
    px[0] = 0.299 * rgb[0] + 0.587 * rgb[1] + 0.114 * rgb[2];
    return;
  }
  for (std::size_t c = 0; c < shape.channels; ++c) px[c] = rgb[c % 3];
}

LabeledDataset render_split(const SyntheticSpec& spec, std::size_t per_class, std::uint64_t stream) {
  const auto shape = spec.image_size;
  const std::size_t n = per_class * spec.class_count;
  LabeledDataset out;
  out.class_count = spec.class_count;
  out.images = Tensor({n, shape.height, shape.width, shape.channels});
  out.labels.resize(n);
  out.poisoned.assign(n, false);

  Engine rng(derive_seed(spec.seed, stream));
  std::normal_distribution<double> noise(0.0, spec.noise_std > 0.0 ? spec.noise_std : 1.0);
  const std::size_t stride = shape.size();
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t label = i % spec.class_count;
    const int dx = static_cast<int>(rng() % 5) - 2;
    const int dy = static_cast<int>(rng() % 5) - 2;
    const Tensor img = render_glyph(label, spec.class_count, shape, dx, dy);
    double* dst = out.images.data() + i * stride;
    for (std::size_t k = 0; k < stride; ++k) {
      double v = img[k];
      if (spec.noise_std > 0.0) v = std::clamp(v + noise(rng), 0.0, 1.0);
      dst[k] = v;
    }
    out.labels[i] = static_cast<int>(label);
  }
  return out;
}

}  // namespace

Tensor render_glyph(std::size_t label, std::size_t class_count, ImageShape shape, int dx, int dy) {
  Tensor img({shape.height, shape.width, shape.channels});
  const double c = static_cast<double>(label);
  const double hue = 360.0 * c / static_cast<double>(class_count);
  // Backgrounds stay at or below 0.6 brightness so a white corner patch is never natural.
  const Rgb background = hsv(hue + 180.0 + 37.0 * c, 0.45, 0.25 + 0.35 * static_cast<double>((label * 7) % 5) / 4.0);
  const Rgb fill = hsv(hue, 0.85, 0.9);
  const Rgb ink{0.05, 0.05, 0.05};

  const double cx = static_cast<double>(shape.width) / 2.0 - 0.5 + dx;
  const double cy = static_cast<double>(shape.height) / 2.0 - 0.5 + dy;
  const double radius = 0.36 * static_cast<double>(std::min(shape.height, shape.width));
  const std::size_t kind = label % 3;
  const auto& digit = kDigits[label % 10];
  const std::size_t scale = std::max<std::size_t>(1, std::min(shape.height, shape.width) / 15);
  const double glyph_w = 5.0 * static_cast<double>(scale), glyph_h = 7.0 * static_cast<double>(scale);

  for (std::size_t y = 0; y < shape.height; ++y) {
    for (std::size_t x = 0; x < shape.width; ++x) {
      const double px = static_cast<double>(x) - cx, py = static_cast<double>(y) - cy;
      Rgb rgb = background;
      if (inside_shape(kind, px, py, radius)) {
        rgb = fill;
        const double gx = px + glyph_w / 2.0, gy = py + glyph_h / 2.0;
        if (gx >= 0 && gy >= 0 && gx < glyph_w && gy < glyph_h) {
          const auto col = static_cast<std::size_t>(gx) / scale;
          const auto row = static_cast<std::size_t>(gy) / scale;
          if (digit[row] & (0x10 >> col)) rgb = ink;
        }
      }
      write_pixel(img, shape, y, x, rgb);
    }
  }
  return img;
}

TrainTestSplit generate_synthetic(const SyntheticSpec& spec) {
  spec.validate();
  return {render_split(spec, spec.per_class_train, 1), render_split(spec, spec.per_class_test, 2)};
}

// ---------------------------------------------------------------------------
// Manifest loading

Tensor resize_bilinear(const Tensor& image, std::size_t height, std::size_t width) {
  if (image.rank() != 3 || height == 0 || width == 0) {
    throw std::invalid_argument("resize_bilinear needs an (H,W,C) image and a positive target");
  }
  const std::size_t ih = image.dim(0), iw = image.dim(1), ch = image.dim(2);
  Tensor out({height, width, ch});
  const double sy = static_cast<double>(ih) / static_cast<double>(height);
  const double sx = static_cast<double>(iw) / static_cast<double>(width);
  for (std::size_t y = 0; y < height; ++y) {
    const double fy = std::clamp((static_cast<double>(y) + 0.5) * sy - 0.5, 0.0, static_cast<double>(ih - 1));
    const auto y0 = static_cast<std::size_t>(fy);
    const std::size_t y1 = std::min(y0 + 1, ih - 1);
    const double wy = fy - static_cast<double>(y0);
    for (std::size_t x = 0; x < width; ++x) {
      const double fx = std::clamp((static_cast<double>(x) + 0.5) * sx - 0.5, 0.0, static_cast<double>(iw - 1));
      const auto x0 = static_cast<std::size_t>(fx);
      const std::size_t x1 = std::min(x0 + 1, iw - 1);
      const double wx = fx - static_cast<double>(x0);
      for (std::size_t c = 0; c < ch; ++c) {
        auto at = [&](std::size_t yy, std::size_t xx) { return image[(yy * iw + xx) * ch + c]; };
        const double top = at(y0, x0) * (1 - wx) + at(y0, x1) * wx;
        const double bottom = at(y1, x0) * (1 - wx) + at(y1, x1) * wx;
        out[(y * width + x) * ch + c] = top * (1 - wy) + bottom * wy;
      }
    }
  }
  return out;
}

namespace {

Tensor read_png(const std::filesystem::path& path, std::size_t channels) {
  if (!std::filesystem::exists(path)) throw DataError(fmt::format("missing file: {}", path.string()));
  png_image img{};
  img.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&img, path.c_str())) {
    throw DataError(fmt::format("unreadable PNG {}: {}", path.string(), img.message));
  }
  switch (channels) {
    case 1: img.format = PNG_FORMAT_GRAY; break;
    case 3: img.format = PNG_FORMAT_RGB; break;
    case 4: img.format = PNG_FORMAT_RGBA; break;
    default:
      png_image_free(&img);
      throw DataError(fmt::format("unsupported channel count {}", channels));
  }
  std::vector<png_byte> buffer(PNG_IMAGE_SIZE(img));
  if (!png_image_finish_read(&img, nullptr, buffer.data(), 0, nullptr)) {
    throw DataError(fmt::format("unreadable PNG {}: {}", path.string(), img.message));
  }
  Tensor out({img.height, img.width, channels});
  for (std::size_t i = 0; i < buffer.size(); ++i) out[i] = buffer[i] / 255.0;
  return out;
}

int parse_label(std::string_view text, std::size_t class_count, std::size_t line) {
  long long value = 0;
  const auto* end = text.data() + text.size();
  auto [ptr, ec] = std::from_chars(text.data(), end, value);
  if (ec != std::errc{} || ptr != end) {
    throw DataError(fmt::format("manifest line {}: label '{}' is not an integer", line, text));
  }
  if (value < 0 || static_cast<unsigned long long>(value) >= class_count) {
    throw DataError(fmt::format("manifest line {}: label out of range ({} not in [0,{}))", line, value,
                                class_count));
  }
  return static_cast<int>(value);
}

}  // namespace

LabeledDataset load_directory(const std::filesystem::path& manifest, const ManifestOptions& opts) {
  std::ifstream in(manifest);
  if (!in) throw DataError(fmt::format("missing file: {}", manifest.string()));
  const auto root = manifest.parent_path();

  std::string line;
  if (!std::getline(in, line)) throw DataError("manifest is empty");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != "path,label") throw DataError("manifest header must be 'path,label'");

  std::vector<Tensor> images;
  LabeledDataset out;
  out.class_count = opts.class_count;
  for (std::size_t number = 2; std::getline(in, line); ++number) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto comma = line.rfind(',');
    if (comma == std::string::npos) throw DataError(fmt::format("manifest line {} has no label", number));
    const std::filesystem::path rel = line.substr(0, comma);
    const int label = parse_label(std::string_view(line).substr(comma + 1), opts.class_count, number);
    const Tensor raw = read_png(rel.is_absolute() ? rel : root / rel, opts.shape.channels);
    images.push_back(resize_bilinear(raw, opts.shape.height, opts.shape.width));
    out.labels.push_back(label);
  }

  out.images = Tensor({images.size(), opts.shape.height, opts.shape.width, opts.shape.channels});
  const std::size_t stride = opts.shape.size();
  for (std::size_t i = 0; i < images.size(); ++i) {
    std::copy(images[i].values().begin(), images[i].values().end(), out.images.data() + i * stride);
  }
  out.poisoned.assign(out.labels.size(), false);
  return out;
}

// ---------------------------------------------------------------------------
// Sampling

namespace {

std::vector<std::vector<std::size_t>> shuffled_by_class(const LabeledDataset& data, Engine& rng) {
  std::vector<std::vector<std::size_t>> by_class(data.class_count);
  for (std::size_t i = 0; i < data.size(); ++i) by_class.at(static_cast<std::size_t>(data.labels[i])).push_back(i);
  for (auto& members : by_class) std::shuffle(members.begin(), members.end(), rng);
  return by_class;
}

}  // namespace

LabeledDataset subsample(const LabeledDataset& data, double fraction, std::uint64_t seed) {
  if (!(fraction > 0.0 && fraction <= 1.0)) {
    throw std::invalid_argument(fmt::format("subsample fraction {} outside (0,1]", fraction));
  }
  const std::size_t target = fraction_count(fraction, data.size());
  if (target == 0) throw DataError("subsample would be empty");

  Engine rng(derive_seed(seed, 0x5355425341ULL));
  auto by_class = shuffled_by_class(data, rng);

  // Proportional quota per class, remainder to the largest fractional parts.
  std::vector<std::size_t> quota(by_class.size());
  std::vector<std::pair<double, std::size_t>> remainder;
  std::size_t assigned = 0;
  for (std::size_t c = 0; c < by_class.size(); ++c) {
    const double exact = fraction * static_cast<double>(by_class[c].size());
    quota[c] = fraction_count(fraction, by_class[c].size());
    assigned += quota[c];
    remainder.emplace_back(exact - static_cast<double>(quota[c]), c);
  }
  std::stable_sort(remainder.begin(), remainder.end(),
                   [](const auto& a, const auto& b) { return a.first > b.first; });
  for (std::size_t k = 0; assigned < target && k < remainder.size(); ++k) {
    const auto c = remainder[k].second;
    if (quota[c] < by_class[c].size()) {
      ++quota[c];
      ++assigned;
    }
  }

  std::vector<std::size_t> chosen;
  for (std::size_t c = 0; c < by_class.size(); ++c) {
    chosen.insert(chosen.end(), by_class[c].begin(), by_class[c].begin() + static_cast<std::ptrdiff_t>(quota[c]));
  }
  std::shuffle(chosen.begin(), chosen.end(), rng);
  return data.subset(chosen);
}

TrainTestSplit split_stratified(const LabeledDataset& data, double test_fraction, std::uint64_t seed) {
  if (!(test_fraction > 0.0 && test_fraction < 1.0)) {
    throw std::invalid_argument("test_fraction must lie in (0,1)");
  }
  Engine rng(derive_seed(seed, 0x53504c4954ULL));
  const auto by_class = shuffled_by_class(data, rng);
  std::vector<std::size_t> train, test;
  for (const auto& members : by_class) {
    const std::size_t n_test = fraction_count(test_fraction, members.size());
    test.insert(test.end(), members.begin(), members.begin() + static_cast<std::ptrdiff_t>(n_test));
    train.insert(train.end(), members.begin() + static_cast<std::ptrdiff_t>(n_test), members.end());
  }
  std::sort(train.begin(), train.end());
  std::sort(test.begin(), test.end());
  if (train.empty() || test.empty()) throw DataError("stratified split left one side empty");
  return {data.subset(train), data.subset(test)};
}

}  // namespace rmf
