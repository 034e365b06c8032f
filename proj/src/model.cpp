#include "rmf/model.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>
#include <stdexcept>

#include <Eigen/Core>
#include <fmt/format.h>

#include "rmf/rng.hpp"

namespace rmf {

std::string_view to_string(LayerKind kind) {
  switch (kind) {
    case LayerKind::conv2d: return "conv2d";
    case LayerKind::maxpool2d: return "maxpool2d";
    case LayerKind::dropout: return "dropout";
    case LayerKind::flatten: return "flatten";
    case LayerKind::dense: return "dense";
  }
  return "unknown";
}

std::string_view to_string(Activation act) {
  switch (act) {
    case Activation::none: return "none";
    case Activation::relu: return "relu";
    case Activation::softmax: return "softmax";
  }
  return "unknown";
}

LayerSpec LayerSpec::conv2d(std::size_t filters, std::size_t kernel, Activation act) {
  LayerSpec s;
  s.kind = LayerKind::conv2d;
  s.filters = filters;
  s.kernel = kernel;
  s.activation = act;
  return s;
}

LayerSpec LayerSpec::maxpool2d(std::size_t pool) {
  LayerSpec s;
  s.kind = LayerKind::maxpool2d;
  s.pool = pool;
  return s;
}

LayerSpec LayerSpec::dropout(double rate) {
  LayerSpec s;
  s.kind = LayerKind::dropout;
  s.drop_rate = rate;
  return s;
}

LayerSpec LayerSpec::flatten() { return LayerSpec{}; }

LayerSpec LayerSpec::dense(std::size_t units, Activation act) {
  LayerSpec s;
  s.kind = LayerKind::dense;
  s.units = units;
  s.activation = act;
  return s;
}

// ---------------------------------------------------------------------------
// Model

Model::Model(std::vector<LayerSpec> layers, ImageShape input, std::uint64_t seed)
    : layers_(std::move(layers)), input_(input), seed_(seed) {
  derive_shapes();

  // Glorot-uniform kernels, zero biases. Each layer draws from its own stream.
  std::vector<std::size_t> in_shape{input_.height, input_.width, input_.channels};
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    const auto& spec = layers_[i];
    if (spec.kind == LayerKind::conv2d || spec.kind == LayerKind::dense) {
      std::vector<std::size_t> kshape;
      double fan_in = 0, fan_out = 0;
      std::size_t out_units = 0;
      if (spec.kind == LayerKind::conv2d) {
        const std::size_t cin = in_shape[2];
        kshape = {spec.kernel, spec.kernel, cin, spec.filters};
        fan_in = static_cast<double>(spec.kernel * spec.kernel * cin);
        fan_out = static_cast<double>(spec.kernel * spec.kernel * spec.filters);
        out_units = spec.filters;
      } else {
        kshape = {in_shape[0], spec.units};
        fan_in = static_cast<double>(in_shape[0]);
        fan_out = static_cast<double>(spec.units);
        out_units = spec.units;
      }
      const double limit = std::sqrt(6.0 / (fan_in + fan_out));
      Tensor kernel(kshape);
      Engine rng(hash_key({seed_, i}));
      for (auto& w : kernel.values()) w = (2.0 * unit_double(rng()) - 1.0) * limit;
      weights_.push_back(std::move(kernel));
      weights_.emplace_back(std::vector<std::size_t>{out_units});
    }
    in_shape = shapes_[i];
  }
}

Model Model::from_parts(std::vector<LayerSpec> layers, ImageShape input, std::uint64_t seed,
                        std::vector<Tensor> weights) {
  Model m;
  m.layers_ = std::move(layers);
  m.input_ = input;
  m.seed_ = seed;
  m.derive_shapes();
  // Reference shapes come from a freshly initialized model.
  Model reference(m.layers_, input, seed);
  if (weights.size() != reference.weights_.size()) {
    throw std::invalid_argument(fmt::format("model expects {} weight tensors, got {}",
                                            reference.weights_.size(), weights.size()));
  }
  for (std::size_t i = 0; i < weights.size(); ++i) {
    if (weights[i].shape() != reference.weights_[i].shape()) {
      throw std::invalid_argument(fmt::format("weight {} has shape {}, expected {}", i,
                                              shape_string(weights[i].shape()),
                                              shape_string(reference.weights_[i].shape())));
    }
  }
  m.weights_ = std::move(weights);
  return m;
}

void Model::derive_shapes() {
  if (input_.height == 0 || input_.width == 0 || input_.channels == 0) {
    throw std::invalid_argument("input shape must be positive");
  }
  if (layers_.empty()) throw std::invalid_argument("model needs at least one layer");
  shapes_.clear();
  offsets_.clear();
  std::vector<std::size_t> shape{input_.height, input_.width, input_.channels};
  std::ptrdiff_t offset = 0;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    const auto& s = layers_[i];
    const bool last = i + 1 == layers_.size();
    if (s.activation == Activation::softmax && !(last && s.kind == LayerKind::dense)) {
      throw std::invalid_argument("softmax is only allowed on the final dense layer");
    }
    if (s.activation != Activation::none && s.kind != LayerKind::conv2d &&
        s.kind != LayerKind::dense) {
      throw std::invalid_argument(fmt::format("{} layer cannot carry an activation", to_string(s.kind)));
    }
    offsets_.push_back(-1);
    switch (s.kind) {
      case LayerKind::conv2d:
        if (shape.size() != 3) throw std::invalid_argument("conv2d needs a (H,W,C) input");
        if (s.kernel == 0 || s.filters == 0) throw std::invalid_argument("conv2d needs kernel and filters");
        if (shape[0] < s.kernel || shape[1] < s.kernel) {
          throw std::invalid_argument(fmt::format("input {} too small for a {}x{} convolution",
                                                  shape_string(shape), s.kernel, s.kernel));
        }
        shape = {shape[0] - s.kernel + 1, shape[1] - s.kernel + 1, s.filters};
        offsets_.back() = offset;
        offset += 2;
        break;
      case LayerKind::maxpool2d:
        if (shape.size() != 3) throw std::invalid_argument("maxpool2d needs a (H,W,C) input");
        if (s.pool == 0 || shape[0] < s.pool || shape[1] < s.pool) {
          throw std::invalid_argument(fmt::format("input {} too small for {}x{} pooling",
                                                  shape_string(shape), s.pool, s.pool));
        }
        shape = {shape[0] / s.pool, shape[1] / s.pool, shape[2]};
        break;
      case LayerKind::dropout:
        if (!(s.drop_rate >= 0.0 && s.drop_rate < 1.0)) {
          throw std::invalid_argument("dropout rate must lie in [0, 1)");
        }
        break;
      case LayerKind::flatten:
        shape = {shape_product(shape)};
        break;
      case LayerKind::dense:
        if (shape.size() != 1) throw std::invalid_argument("dense needs a flat input");
        if (s.units == 0) throw std::invalid_argument("dense needs at least one unit");
        shape = {s.units};
        offsets_.back() = offset;
        offset += 2;
        break;
    }
    shapes_.push_back(shape);
  }
  const auto& tail = layers_.back();
  if (tail.kind != LayerKind::dense || tail.activation != Activation::softmax) {
    throw std::invalid_argument("the final layer must be a softmax dense layer");
  }
}

std::size_t Model::num_classes() const { return layers_.back().units; }

std::size_t Model::parameter_count() const noexcept {
  std::size_t n = 0;
  for (const auto& w : weights_) n += w.size();
  return n;
}

bool Model::operator==(const Model& other) const {
  return layers_ == other.layers_ && input_ == other.input_ && seed_ == other.seed_ &&
         weights_ == other.weights_;
}

Model build_model(std::size_t num_classes, ImageShape input, std::uint64_t seed) {
  if (num_classes < 2) throw std::invalid_argument("num_classes must be at least 2");
  if (input.channels < 1) throw std::invalid_argument("input needs at least one channel");
  if (input.height < 8 || input.width < 8) {
    throw std::invalid_argument(fmt::format(
        "input {}x{} is too small for two 3x3 convolutions plus 2x2 pooling (minimum 8x8)",
        input.height, input.width));
  }
  return Model({LayerSpec::conv2d(32, 3, Activation::relu),
                LayerSpec::conv2d(64, 3, Activation::relu),
                LayerSpec::maxpool2d(2),
                LayerSpec::dropout(0.25),
                LayerSpec::flatten(),
                LayerSpec::dense(128, Activation::relu),
                LayerSpec::dropout(0.5),
                LayerSpec::dense(num_classes, Activation::softmax)},
               input, seed);
}

// ---------------------------------------------------------------------------
// Forward / backward

namespace {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatrixMap = Eigen::Map<RowMatrix>;
using ConstMatrixMap = Eigen::Map<const RowMatrix>;
using VectorMap = Eigen::Map<Eigen::RowVectorXd>;
using ConstVectorMap = Eigen::Map<const Eigen::RowVectorXd>;

struct Trace {
  std::vector<Tensor> values;  // values[0] is the batch, values[i + 1] the output of layer i
  Tensor logits;
  std::vector<std::vector<std::uint32_t>> pool_source;
  std::vector<std::vector<double>> dropout_scale;
};

std::vector<std::size_t> batch_shape(std::size_t n, const std::vector<std::size_t>& sample) {
  std::vector<std::size_t> s{n};
  s.insert(s.end(), sample.begin(), sample.end());
  return s;
}

void check_batch(const Model& model, const Tensor& batch) {
  const auto in = model.input_shape();
  if (batch.rank() != 4 || batch.dim(1) != in.height || batch.dim(2) != in.width ||
      batch.dim(3) != in.channels) {
    throw std::invalid_argument(fmt::format("batch shape {} does not match model input (N,{},{},{})",
                                            shape_string(batch.shape()), in.height, in.width,
                                            in.channels));
  }
}

void check_labels(const Model& model, const Tensor& batch, std::span<const int> labels) {
  if (labels.size() != batch.dim(0)) {
    throw std::invalid_argument(fmt::format("{} labels for a batch of {}", labels.size(), batch.dim(0)));
  }
  const auto classes = static_cast<int>(model.num_classes());
  for (int y : labels) {
    if (y < 0 || y >= classes) {
      throw std::invalid_argument(fmt::format("label {} out of range [0,{})", y, classes));
    }
  }
}

// Rows are output positions, columns the (ky, kx, c) receptive field.
void im2col(const double* in, std::size_t h, std::size_t w, std::size_t c, std::size_t k, double* cols) {
  const std::size_t oh = h - k + 1, ow = w - k + 1, span = k * c;
  for (std::size_t oy = 0; oy < oh; ++oy) {
    for (std::size_t ox = 0; ox < ow; ++ox) {
      double* row = cols + (oy * ow + ox) * k * span;
      for (std::size_t ky = 0; ky < k; ++ky) {
        std::memcpy(row + ky * span, in + ((oy + ky) * w + ox) * c, span * sizeof(double));
      }
    }
  }
}

void col2im_add(const double* cols, std::size_t h, std::size_t w, std::size_t c, std::size_t k, double* in) {
  const std::size_t oh = h - k + 1, ow = w - k + 1, span = k * c;
  for (std::size_t oy = 0; oy < oh; ++oy) {
    for (std::size_t ox = 0; ox < ow; ++ox) {
      const double* row = cols + (oy * ow + ox) * k * span;
      for (std::size_t ky = 0; ky < k; ++ky) {
        double* dst = in + ((oy + ky) * w + ox) * c;
        for (std::size_t j = 0; j < span; ++j) dst[j] += row[ky * span + j];
      }
    }
  }
}

void relu_inplace(Tensor& t) {
  for (auto& v : t.values()) v = v > 0.0 ? v : 0.0;
}

void softmax_rows(const Tensor& logits, Tensor& probs) {
  const std::size_t n = logits.dim(0), k = logits.dim(1);
  for (std::size_t i = 0; i < n; ++i) {
    const double* z = logits.data() + i * k;
    double* p = probs.data() + i * k;
    const double top = *std::max_element(z, z + k);
    double sum = 0.0;
    for (std::size_t j = 0; j < k; ++j) sum += (p[j] = std::exp(z[j] - top));
    for (std::size_t j = 0; j < k; ++j) p[j] /= sum;
  }
}

Trace run_forward(const Model& model, const Tensor& batch, bool training, DropoutKey key) {
  check_batch(model, batch);
  const std::size_t n = batch.dim(0);
  const auto& layers = model.layers();
  const auto& weights = model.weights();

  Trace tr;
  tr.values.reserve(layers.size() + 1);
  tr.values.push_back(batch);
  tr.pool_source.resize(layers.size());
  tr.dropout_scale.resize(layers.size());

  std::vector<double> cols;
  for (std::size_t li = 0; li < layers.size(); ++li) {
    const auto& spec = layers[li];
    const Tensor& in = tr.values.back();
    Tensor out(batch_shape(n, model.output_shapes()[li]));

    switch (spec.kind) {
      case LayerKind::conv2d: {
        const std::size_t h = in.dim(1), w = in.dim(2), c = in.dim(3), k = spec.kernel;
        const std::size_t positions = (h - k + 1) * (w - k + 1), field = k * k * c;
        const auto off = static_cast<std::size_t>(model.weight_offset(li));
        ConstMatrixMap kernel(weights[off].data(), static_cast<Eigen::Index>(field),
                              static_cast<Eigen::Index>(spec.filters));
        ConstVectorMap bias(weights[off + 1].data(), static_cast<Eigen::Index>(spec.filters));
        cols.resize(positions * field);
        for (std::size_t s = 0; s < n; ++s) {
          im2col(in.data() + s * in.stride0(), h, w, c, k, cols.data());
          ConstMatrixMap x(cols.data(), static_cast<Eigen::Index>(positions), static_cast<Eigen::Index>(field));
          MatrixMap y(out.data() + s * out.stride0(), static_cast<Eigen::Index>(positions),
                      static_cast<Eigen::Index>(spec.filters));
          y.noalias() = x * kernel;
          y.rowwise() += bias;
        }
        break;
      }
      case LayerKind::maxpool2d: {
        const std::size_t h = in.dim(1), w = in.dim(2), c = in.dim(3), p = spec.pool;
        const std::size_t oh = h / p, ow = w / p;
        auto& source = tr.pool_source[li];
        source.resize(out.size());
        std::size_t o = 0;
        for (std::size_t s = 0; s < n; ++s) {
          const std::size_t base = s * in.stride0();
          for (std::size_t oy = 0; oy < oh; ++oy) {
            for (std::size_t ox = 0; ox < ow; ++ox) {
              for (std::size_t ch = 0; ch < c; ++ch, ++o) {
                std::size_t best = base + ((oy * p) * w + ox * p) * c + ch;
                for (std::size_t dy = 0; dy < p; ++dy) {
                  for (std::size_t dx = 0; dx < p; ++dx) {
                    const std::size_t idx = base + ((oy * p + dy) * w + ox * p + dx) * c + ch;
                    if (in[idx] > in[best]) best = idx;
                  }
                }
                out[o] = in[best];
                source[o] = static_cast<std::uint32_t>(best);
              }
            }
          }
        }
        break;
      }
      case LayerKind::dropout: {
        if (!training || spec.drop_rate == 0.0) {
          out = in;
          break;
        }
        const double keep = 1.0 / (1.0 - spec.drop_rate);
        auto& scale = tr.dropout_scale[li];
        scale.resize(in.size());
        for (std::size_t i = 0; i < in.size(); ++i) {
          const double u = counter_uniform({key.seed, key.epoch, key.batch, li, i});
          scale[i] = u >= spec.drop_rate ? keep : 0.0;
          out[i] = in[i] * scale[i];
        }
        break;
      }
      case LayerKind::flatten:
        out = in.reshaped(out.shape());
        break;
      case LayerKind::dense: {
        const std::size_t fan_in = in.stride0();
        const auto off = static_cast<std::size_t>(model.weight_offset(li));
        ConstMatrixMap x(in.data(), static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(fan_in));
        ConstMatrixMap kernel(weights[off].data(), static_cast<Eigen::Index>(fan_in),
                              static_cast<Eigen::Index>(spec.units));
        ConstVectorMap bias(weights[off + 1].data(), static_cast<Eigen::Index>(spec.units));
        MatrixMap y(out.data(), static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(spec.units));
        y.noalias() = x * kernel;
        y.rowwise() += bias;
        break;
      }
    }

    if (spec.activation == Activation::relu) {
      relu_inplace(out);
    } else if (spec.activation == Activation::softmax) {
      tr.logits = out;
      softmax_rows(tr.logits, out);
    }
    tr.values.push_back(std::move(out));
  }
  return tr;
}

double cross_entropy(const Tensor& logits, std::span<const int> labels) {
  const std::size_t n = logits.dim(0), k = logits.dim(1);
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double* z = logits.data() + i * k;
    const double top = *std::max_element(z, z + k);
    double sum = 0.0;
    for (std::size_t j = 0; j < k; ++j) sum += std::exp(z[j] - top);
    total += top + std::log(sum) - z[static_cast<std::size_t>(labels[i])];
  }
  return total / static_cast<double>(n);
}

struct BackwardResult {
  double loss = 0.0;
  std::vector<Tensor> weights;
  Tensor input;
};

BackwardResult run_backward(const Model& model, const Trace& tr, std::span<const int> labels,
                            bool want_weights, bool want_input) {
  const auto& layers = model.layers();
  const auto& weights = model.weights();
  const Tensor& probs = tr.values.back();
  const std::size_t n = probs.dim(0), classes = probs.dim(1);

  BackwardResult res;
  res.loss = cross_entropy(tr.logits, labels);
  if (want_weights) {
    for (const auto& w : weights) res.weights.emplace_back(w.shape());
  }

  // Softmax + cross-entropy: d loss / d logits = (p - onehot) / N.
  Tensor grad = probs;
  for (std::size_t i = 0; i < n; ++i) grad[i * classes + static_cast<std::size_t>(labels[i])] -= 1.0;
  for (auto& g : grad.values()) g /= static_cast<double>(n);

  std::vector<double> cols, dcols;
  for (std::size_t li = layers.size(); li-- > 0;) {
    const auto& spec = layers[li];
    const Tensor& in = tr.values[li];
    const Tensor& out = tr.values[li + 1];
    const bool need_input = want_input || li > 0;

    if (spec.activation == Activation::relu) {
      for (std::size_t i = 0; i < grad.size(); ++i) {
        if (!(out[i] > 0.0)) grad[i] = 0.0;
      }
    }

    Tensor dx;
    switch (spec.kind) {
      case LayerKind::conv2d: {
        const std::size_t h = in.dim(1), w = in.dim(2), c = in.dim(3), k = spec.kernel;
        const std::size_t positions = (h - k + 1) * (w - k + 1), field = k * k * c;
        const auto off = static_cast<std::size_t>(model.weight_offset(li));
        const auto rows = static_cast<Eigen::Index>(positions);
        const auto f = static_cast<Eigen::Index>(spec.filters);
        const auto fd = static_cast<Eigen::Index>(field);
        ConstMatrixMap kernel(weights[off].data(), fd, f);
        if (need_input) dx = Tensor(in.shape());
        cols.resize(positions * field);
        dcols.resize(positions * field);
        for (std::size_t s = 0; s < n; ++s) {
          ConstMatrixMap dy(grad.data() + s * grad.stride0(), rows, f);
          if (want_weights) {
            im2col(in.data() + s * in.stride0(), h, w, c, k, cols.data());
            ConstMatrixMap x(cols.data(), rows, fd);
            MatrixMap dk(res.weights[off].data(), fd, f);
            VectorMap db(res.weights[off + 1].data(), f);
            dk.noalias() += x.transpose() * dy;
            db += dy.colwise().sum();
          }
          if (need_input) {
            MatrixMap dc(dcols.data(), rows, fd);
            dc.noalias() = dy * kernel.transpose();
            col2im_add(dcols.data(), h, w, c, k, dx.data() + s * dx.stride0());
          }
        }
        break;
      }
      case LayerKind::maxpool2d: {
        dx = Tensor(in.shape());
        const auto& source = tr.pool_source[li];
        for (std::size_t o = 0; o < grad.size(); ++o) dx[source[o]] += grad[o];
        break;
      }
      case LayerKind::dropout: {
        dx = std::move(grad);
        const auto& scale = tr.dropout_scale[li];
        if (!scale.empty()) {
          for (std::size_t i = 0; i < dx.size(); ++i) dx[i] *= scale[i];
        }
        break;
      }
      case LayerKind::flatten:
        dx = grad.reshaped(in.shape());
        break;
      case LayerKind::dense: {
        const std::size_t fan_in = in.stride0();
        const auto off = static_cast<std::size_t>(model.weight_offset(li));
        const auto rows = static_cast<Eigen::Index>(n);
        const auto fi = static_cast<Eigen::Index>(fan_in);
        const auto u = static_cast<Eigen::Index>(spec.units);
        ConstMatrixMap x(in.data(), rows, fi);
        ConstMatrixMap dy(grad.data(), rows, u);
        if (want_weights) {
          MatrixMap dk(res.weights[off].data(), fi, u);
          VectorMap db(res.weights[off + 1].data(), u);
          dk.noalias() = x.transpose() * dy;
          db = dy.colwise().sum();
        }
        if (need_input) {
          ConstMatrixMap kernel(weights[off].data(), fi, u);
          dx = Tensor(in.shape());
          MatrixMap d(dx.data(), rows, fi);
          d.noalias() = dy * kernel.transpose();
        }
        break;
      }
    }
    if (li == 0) {
      if (want_input) res.input = std::move(dx);
      break;
    }
    grad = std::move(dx);
  }
  return res;
}

}  // namespace

Tensor forward(const Model& model, const Tensor& batch, bool training, DropoutKey key) {
  auto tr = run_forward(model, batch, training, key);
  return std::move(tr.values.back());
}

double loss(const Model& model, const Tensor& batch, std::span<const int> labels, bool training,
            DropoutKey key) {
  check_batch(model, batch);
  check_labels(model, batch, labels);
  const auto tr = run_forward(model, batch, training, key);
  return cross_entropy(tr.logits, labels);
}

Gradients backward(const Model& model, const Tensor& batch, std::span<const int> labels, DropoutKey key) {
  check_batch(model, batch);
  check_labels(model, batch, labels);
  const auto tr = run_forward(model, batch, true, key);
  auto res = run_backward(model, tr, labels, true, false);
  return {res.loss, std::move(res.weights)};
}

Tensor input_gradient(const Model& model, const Tensor& batch, std::span<const int> labels) {
  check_batch(model, batch);
  check_labels(model, batch, labels);
  const auto tr = run_forward(model, batch, false, {});
  return run_backward(model, tr, labels, false, true).input;
}

std::vector<int> argmax_rows(const Tensor& probabilities) {
  if (probabilities.rank() != 2) throw std::invalid_argument("argmax_rows needs a (N, K) tensor");
  const std::size_t n = probabilities.dim(0), k = probabilities.dim(1);
  std::vector<int> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double* row = probabilities.data() + i * k;
    // max_element returns the first maximum, which gives the lowest-index tie-break.
    out[i] = static_cast<int>(std::max_element(row, row + k) - row);
  }
  return out;
}

}  // namespace rmf
