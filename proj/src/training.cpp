#include <algorithm>
#include <bit>
#include <chrono>
#include <cmath>
#include <fstream>
#include <numeric>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "rmf/dataset.hpp"
#include "rmf/error.hpp"
#include "rmf/model.hpp"
#include "rmf/rng.hpp"

namespace rmf {

void TrainConfig::validate() const {
  if (batch_size == 0) throw ConfigError("batch_size must be positive");
  if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) {
    throw ConfigError("learning_rate must be a positive finite number");
  }
}

TrainResult train(Model model, const LabeledDataset& data, const TrainConfig& cfg) {
  cfg.validate();
  if (data.empty()) throw DataError("cannot train on an empty dataset");
  if (cfg.epochs > 0 && cfg.batch_size > data.size()) {
    throw ConfigError(fmt::format("batch_size {} exceeds dataset size {}", cfg.batch_size, data.size()));
  }
  if (data.image_shape() != model.input_shape()) {
    throw DataError("dataset image shape does not match the model input");
  }
  if (data.class_count > model.num_classes()) {
    throw DataError(fmt::format("dataset has {} classes but the model only {}", data.class_count,
                                model.num_classes()));
  }

  const auto start = std::chrono::steady_clock::now();
  TrainResult result{std::move(model), 0.0, {}};
  auto& weights = result.model.weights();

  std::vector<std::size_t> order(data.size());
  std::vector<int> labels;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    Engine rng(hash_key({cfg.seed, 0x5348554646ULL, epoch}));
    std::shuffle(order.begin(), order.end(), rng);

    double total = 0.0;
    std::size_t batch_index = 0;
    for (std::size_t begin = 0; begin < order.size(); begin += cfg.batch_size, ++batch_index) {
      const std::size_t end = std::min(order.size(), begin + cfg.batch_size);
      const std::span<const std::size_t> rows(order.data() + begin, end - begin);
      const Tensor batch = gather_rows(data.images, rows);
      labels.resize(rows.size());
      for (std::size_t i = 0; i < rows.size(); ++i) labels[i] = data.labels[rows[i]];

      auto grads = backward(result.model, batch, labels, {cfg.seed, epoch, batch_index});
      if (!std::isfinite(grads.loss)) {
        throw DivergenceError(fmt::format("non-finite loss {} at epoch {} batch {}", grads.loss,
                                          epoch, batch_index));
      }
      for (std::size_t w = 0; w < weights.size(); ++w) {
        auto dst = weights[w].values();
        auto src = grads.weights[w].values();
        for (std::size_t i = 0; i < dst.size(); ++i) dst[i] -= cfg.learning_rate * src[i];
        if (!weights[w].all_finite()) {
          throw DivergenceError(fmt::format("non-finite weights after epoch {} batch {}", epoch, batch_index));
        }
      }
      total += grads.loss * static_cast<double>(rows.size());
    }
    result.epoch_loss.push_back(total / static_cast<double>(data.size()));
    spdlog::debug("epoch {} loss {:.6f}", epoch, result.epoch_loss.back());
  }

  result.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return result;
}

std::vector<int> predict_labels(const Model& model, const LabeledDataset& data) {
  if (data.empty()) return {};
  if (data.image_shape() != model.input_shape()) {
    throw std::invalid_argument("dataset image shape does not match the model input");
  }
  constexpr std::size_t chunk = 64;
  std::vector<int> out;
  out.reserve(data.size());
  std::vector<std::size_t> rows;
  for (std::size_t begin = 0; begin < data.size(); begin += chunk) {
    const std::size_t end = std::min(data.size(), begin + chunk);
    rows.resize(end - begin);
    std::iota(rows.begin(), rows.end(), begin);
    const auto labels = argmax_rows(forward(model, gather_rows(data.images, rows), false));
    out.insert(out.end(), labels.begin(), labels.end());
  }
  return out;
}

// ---------------------------------------------------------------------------
// Checkpoints. All integers and doubles are little-endian.

namespace {

constexpr char kMagic[8] = {'R', 'M', 'F', 'C', 'K', 'P', 'T', '\0'};
constexpr std::uint32_t kVersion = 1;

class Writer {
 public:
  explicit Writer(std::ostream& os) : os_(os) {}
  void bytes(const void* p, std::size_t n) { os_.write(static_cast<const char*>(p), static_cast<std::streamsize>(n)); }
  template <typename T>
  void uint(T v) {
    unsigned char buf[sizeof(T)];
    for (std::size_t i = 0; i < sizeof(T); ++i) buf[i] = static_cast<unsigned char>(v >> (8 * i));
    bytes(buf, sizeof(T));
  }
  void f64(double v) { uint(std::bit_cast<std::uint64_t>(v)); }

 private:
  std::ostream& os_;
};

class Reader {
 public:
  explicit Reader(std::istream& is) : is_(is) {}
  void bytes(void* p, std::size_t n) {
    if (!is_.read(static_cast<char*>(p), static_cast<std::streamsize>(n))) {
      throw DataError("checkpoint is truncated");
    }
  }
  template <typename T>
  T uint() {
    unsigned char buf[sizeof(T)];
    bytes(buf, sizeof(T));
    T v = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) v |= static_cast<T>(buf[i]) << (8 * i);
    return v;
  }
  double f64() { return std::bit_cast<double>(uint<std::uint64_t>()); }

 private:
  std::istream& is_;
};

}  // namespace

void save_checkpoint(const Model& model, const std::filesystem::path& path) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw ReportWriteError(fmt::format("cannot open checkpoint {} for writing", path.string()));
  Writer w(os);
  w.bytes(kMagic, sizeof kMagic);
  w.uint<std::uint32_t>(kVersion);
  w.uint<std::uint64_t>(model.seed());
  const auto in = model.input_shape();
  w.uint<std::uint32_t>(static_cast<std::uint32_t>(in.height));
  w.uint<std::uint32_t>(static_cast<std::uint32_t>(in.width));
  w.uint<std::uint32_t>(static_cast<std::uint32_t>(in.channels));
  w.uint<std::uint32_t>(static_cast<std::uint32_t>(model.layers().size()));
  for (const auto& l : model.layers()) {
    w.uint<std::uint8_t>(static_cast<std::uint8_t>(l.kind));
    w.uint<std::uint8_t>(static_cast<std::uint8_t>(l.activation));
    w.uint<std::uint32_t>(static_cast<std::uint32_t>(l.filters));
    w.uint<std::uint32_t>(static_cast<std::uint32_t>(l.kernel));
    w.uint<std::uint32_t>(static_cast<std::uint32_t>(l.pool));
    w.uint<std::uint32_t>(static_cast<std::uint32_t>(l.units));
    w.f64(l.drop_rate);
  }
  w.uint<std::uint32_t>(static_cast<std::uint32_t>(model.weights().size()));
  for (const auto& t : model.weights()) {
    w.uint<std::uint32_t>(static_cast<std::uint32_t>(t.rank()));
    for (auto d : t.shape()) w.uint<std::uint64_t>(d);
    for (double v : t.values()) w.f64(v);
  }
  if (!os.flush()) throw ReportWriteError(fmt::format("failed writing checkpoint {}", path.string()));
}

Model load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError(fmt::format("cannot open checkpoint {}", path.string()));
  Reader r(is);
  char magic[8];
  r.bytes(magic, sizeof magic);
  if (!std::equal(std::begin(magic), std::end(magic), std::begin(kMagic))) {
    throw DataError(fmt::format("{} is not an rmf checkpoint", path.string()));
  }
  if (const auto v = r.uint<std::uint32_t>(); v != kVersion) {
    throw DataError(fmt::format("unsupported checkpoint version {}", v));
  }
  const auto seed = r.uint<std::uint64_t>();
  ImageShape in;
  in.height = r.uint<std::uint32_t>();
  in.width = r.uint<std::uint32_t>();
  in.channels = r.uint<std::uint32_t>();
  const auto layer_count = r.uint<std::uint32_t>();
  std::vector<LayerSpec> layers(layer_count);
  for (auto& l : layers) {
    const auto kind = r.uint<std::uint8_t>();
    const auto act = r.uint<std::uint8_t>();
    if (kind > static_cast<std::uint8_t>(LayerKind::dense) ||
        act > static_cast<std::uint8_t>(Activation::softmax)) {
      throw DataError("checkpoint holds an unknown layer kind");
    }
    l.kind = static_cast<LayerKind>(kind);
    l.activation = static_cast<Activation>(act);
    l.filters = r.uint<std::uint32_t>();
    l.kernel = r.uint<std::uint32_t>();
    l.pool = r.uint<std::uint32_t>();
    l.units = r.uint<std::uint32_t>();
    l.drop_rate = r.f64();
  }
  const auto tensor_count = r.uint<std::uint32_t>();
  std::vector<Tensor> weights;
  weights.reserve(tensor_count);
  for (std::uint32_t t = 0; t < tensor_count; ++t) {
    const auto rank = r.uint<std::uint32_t>();
    if (rank > 8) throw DataError("checkpoint tensor rank is implausible");
    std::vector<std::size_t> shape(rank);
    for (auto& d : shape) d = r.uint<std::uint64_t>();
    std::vector<double> values(shape_product(shape));
    for (auto& v : values) v = r.f64();
    weights.emplace_back(std::move(shape), std::move(values));
  }
  try {
    return Model::from_parts(std::move(layers), in, seed, std::move(weights));
  } catch (const std::invalid_argument& e) {
    throw DataError(fmt::format("checkpoint {} is inconsistent: {}", path.string(), e.what()));
  }
}

}  // namespace rmf
