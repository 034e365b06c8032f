#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string_view>
#include <vector>

#include "rmf/tensor.hpp"

namespace rmf {

enum class LayerKind { conv2d, maxpool2d, dropout, flatten, dense };
enum class Activation { none, relu, softmax };

std::string_view to_string(LayerKind kind);
std::string_view to_string(Activation act);

/// One layer of a sequential network. Only the fields relevant to `kind`
/// are read: conv2d uses filters/kernel, maxpool2d uses pool, dropout uses
/// drop_rate, dense uses units.
struct LayerSpec {
  LayerKind kind = LayerKind::flatten;
  Activation activation = Activation::none;
  std::size_t filters = 0;
  std::size_t kernel = 0;
  std::size_t pool = 0;
  std::size_t units = 0;
  double drop_rate = 0.0;

  static LayerSpec conv2d(std::size_t filters, std::size_t kernel, Activation act);
  static LayerSpec maxpool2d(std::size_t pool);
  static LayerSpec dropout(double rate);
  static LayerSpec flatten();
  static LayerSpec dense(std::size_t units, Activation act);

  bool operator==(const LayerSpec&) const = default;
};

struct ImageShape {
  std::size_t height = 0;
  std::size_t width = 0;
  std::size_t channels = 0;

  std::size_t size() const noexcept { return height * width * channels; }
  bool operator==(const ImageShape&) const = default;
};

/// Sequential convolutional classifier. Weights are stored per parametric
/// layer as (kernel, bias): conv2d kernels are (k, k, in_channels, filters),
/// dense kernels are (in, units).
class Model {
 public:
  /// Validates the stack and initializes weights (Glorot-uniform kernels,
  /// zero biases) from `seed`.
  Model(std::vector<LayerSpec> layers, ImageShape input, std::uint64_t seed);

  /// Rebuilds a model from stored parts; shapes are checked against the stack.
  static Model from_parts(std::vector<LayerSpec> layers, ImageShape input, std::uint64_t seed,
                          std::vector<Tensor> weights);

  const std::vector<LayerSpec>& layers() const noexcept { return layers_; }
  const std::vector<Tensor>& weights() const noexcept { return weights_; }
  std::vector<Tensor>& weights() noexcept { return weights_; }
  ImageShape input_shape() const noexcept { return input_; }
  std::uint64_t seed() const noexcept { return seed_; }
  std::size_t num_classes() const;

  /// Per-sample output shape of every layer, in order.
  const std::vector<std::vector<std::size_t>>& output_shapes() const noexcept { return shapes_; }

  /// Index into weights() of layer `i`'s kernel, or -1 for parameter-free layers.
  std::ptrdiff_t weight_offset(std::size_t layer) const { return offsets_.at(layer); }

  std::size_t parameter_count() const noexcept;

  bool operator==(const Model& other) const;

 private:
  Model() = default;
  void derive_shapes();

  std::vector<LayerSpec> layers_;
  ImageShape input_;
  std::uint64_t seed_ = 0;
  std::vector<Tensor> weights_;
  std::vector<std::vector<std::size_t>> shapes_;
  std::vector<std::ptrdiff_t> offsets_;
};

/// conv(32,3x3,relu) -> conv(64,3x3,relu) -> maxpool(2) -> dropout(0.25)
/// -> flatten -> dense(128,relu) -> dropout(0.5) -> dense(classes,softmax)
Model build_model(std::size_t num_classes, ImageShape input, std::uint64_t seed);

/// Dropout masks are a pure function of (seed, epoch, batch, layer, element).
struct DropoutKey {
  std::uint64_t seed = 0;
  std::uint64_t epoch = 0;
  std::uint64_t batch = 0;
};

/// Class probabilities (N, classes) for an (N, H, W, C) batch. Dropout is
/// applied only when `training` is set.
Tensor forward(const Model& model, const Tensor& batch, bool training, DropoutKey key = {});

struct Gradients {
  double loss = 0.0;            ///< mean categorical cross-entropy
  std::vector<Tensor> weights;  ///< mirrors Model::weights()
};

/// Loss and weight gradients in training mode (dropout active under `key`).
Gradients backward(const Model& model, const Tensor& batch, std::span<const int> labels,
                   DropoutKey key = {});

/// Mean cross-entropy for a batch; `training` selects the dropout path.
double loss(const Model& model, const Tensor& batch, std::span<const int> labels, bool training,
            DropoutKey key = {});

/// Gradient of the mean inference-mode loss with respect to the input batch.
Tensor input_gradient(const Model& model, const Tensor& batch, std::span<const int> labels);

struct TrainConfig {
  std::size_t epochs = 10;
  std::size_t batch_size = 32;
  double learning_rate = 0.05;
  std::uint64_t seed = 0;

  void validate() const;
};

struct TrainResult {
  Model model;
  double seconds = 0.0;
  std::vector<double> epoch_loss;  ///< sample-weighted mean loss of each epoch
};

struct LabeledDataset;

/// Minibatch SGD. Throws DivergenceError on a non-finite loss.
TrainResult train(Model model, const LabeledDataset& data, const TrainConfig& cfg);

/// Argmax class per sample; ties resolve to the lowest index.
std::vector<int> predict_labels(const Model& model, const LabeledDataset& data);
std::vector<int> argmax_rows(const Tensor& probabilities);

/// Binary checkpoint; see docs/FORMATS.md.
void save_checkpoint(const Model& model, const std::filesystem::path& path);
Model load_checkpoint(const std::filesystem::path& path);

}  // namespace rmf
