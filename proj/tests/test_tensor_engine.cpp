#include <doctest.h>

#include <cmath>
#include <cstring>
#include <filesystem>
#include <numeric>

#include "oracles.hpp"
#include "rmf/dataset.hpp"
#include "rmf/error.hpp"
#include "rmf/metrics.hpp"
#include "rmf/model.hpp"
#include "rmf/rng.hpp"
#include "rmf/selftest.hpp"

using namespace rmf;

namespace {

Tensor random_batch(std::vector<std::size_t> shape, std::uint64_t seed) {
  Tensor t(std::move(shape));
  Engine rng(seed);
  for (auto& v : t.values()) v = unit_double(rng());
  return t;
}

Model small_model(std::uint64_t seed, double drop = 0.25) {
  return Model({LayerSpec::conv2d(3, 3, Activation::relu), LayerSpec::maxpool2d(2), LayerSpec::dropout(drop),
                LayerSpec::flatten(), LayerSpec::dense(5, Activation::relu), LayerSpec::dense(4, Activation::softmax)},
               {8, 8, 2}, seed);
}

bool same_bytes(const Model& a, const Model& b) {
  if (a.weights().size() != b.weights().size()) return false;
  for (std::size_t i = 0; i < a.weights().size(); ++i) {
    const auto& x = a.weights()[i];
    const auto& y = b.weights()[i];
    if (x.shape() != y.shape() || std::memcmp(x.data(), y.data(), x.size() * sizeof(double)) != 0) return false;
  }
  return true;
}

}  // namespace

TEST_CASE("tensor construction checks the element count") {
  CHECK_THROWS_AS(Tensor({2, 3}, std::vector<double>(5)), std::invalid_argument);
  Tensor t({2, 3}, 1.5);
  CHECK(t.size() == 6);
  CHECK(t.stride0() == 3);
  CHECK(shape_product(t.shape()) == t.size());
  CHECK(t.reshaped({3, 2}).shape() == std::vector<std::size_t>{3, 2});
  CHECK_THROWS(t.reshaped({4, 2}));
  t[4] = std::nan("");
  CHECK_FALSE(t.all_finite());
}

TEST_CASE("gather_rows copies slices in order") {
  Tensor t({3, 2}, std::vector<double>{0, 1, 2, 3, 4, 5});
  const std::vector<std::size_t> rows{2, 0, 2};
  const auto g = gather_rows(t, rows);
  CHECK(g.shape() == std::vector<std::size_t>{3, 2});
  CHECK(std::vector<double>(g.values().begin(), g.values().end()) == std::vector<double>{4, 5, 0, 1, 4, 5});
}

TEST_CASE("build_model output shapes for 43 classes on 30x30x3") {
  const auto m = build_model(43, {30, 30, 3}, 7);
  const std::vector<std::vector<std::size_t>> expected{{28, 28, 32}, {26, 26, 64}, {13, 13, 64}, {13, 13, 64},
                                                       {10816},      {128},        {128},        {43}};
  CHECK(m.output_shapes() == expected);
  CHECK(m.num_classes() == 43);
  // conv 3*3*3*32+32, conv 3*3*32*64+64, dense 10816*128+128, dense 128*43+43
  CHECK(m.parameter_count() == 896 + 18496 + 1384576 + 5547);
}

TEST_CASE("build_model on 8x8x1 flattens to 256") {
  const auto m = build_model(2, {8, 8, 1}, 1);
  CHECK(m.output_shapes()[4] == std::vector<std::size_t>{256});
  CHECK_THROWS_AS(build_model(1, {8, 8, 1}, 1), std::invalid_argument);
  CHECK_THROWS_AS(build_model(2, {7, 8, 1}, 1), std::invalid_argument);
  CHECK_THROWS_AS(build_model(2, {8, 8, 0}, 1), std::invalid_argument);
}

TEST_CASE("identical specs and seeds give bitwise identical weights") {
  CHECK(same_bytes(build_model(10, {30, 30, 3}, 5), build_model(10, {30, 30, 3}, 5)));
  CHECK_FALSE(same_bytes(build_model(10, {30, 30, 3}, 5), build_model(10, {30, 30, 3}, 6)));
}

TEST_CASE("initialization is Glorot uniform with zero biases") {
  const auto m = small_model(3);
  // conv kernel: fan_in 3*3*2, fan_out 3*3*3
  const double limit = std::sqrt(6.0 / (18.0 + 27.0));
  double lo = 1, hi = -1;
  for (double v : m.weights()[0].values()) lo = std::min(lo, v), hi = std::max(hi, v);
  CHECK(lo >= -limit);
  CHECK(hi <= limit);
  CHECK(hi - lo > limit);  // actually spread over the range
  for (double v : m.weights()[1].values()) CHECK(v == 0.0);
}

TEST_CASE("stack validation") {
  const ImageShape in{8, 8, 1};
  CHECK_THROWS_AS(Model({LayerSpec::flatten(), LayerSpec::dense(3, Activation::relu)}, in, 0), std::invalid_argument);
  CHECK_THROWS_AS(Model({LayerSpec::flatten(), LayerSpec::dense(3, Activation::softmax), LayerSpec::dense(3, Activation::softmax)}, in, 0),
                  std::invalid_argument);
  CHECK_THROWS_AS(Model({LayerSpec::conv2d(2, 3, Activation::softmax), LayerSpec::flatten(), LayerSpec::dense(3, Activation::softmax)}, in, 0),
                  std::invalid_argument);
  CHECK_THROWS_AS(Model({LayerSpec::dropout(1.0), LayerSpec::flatten(), LayerSpec::dense(3, Activation::softmax)}, in, 0),
                  std::invalid_argument);
  CHECK_THROWS_AS(Model({LayerSpec::dense(3, Activation::softmax)}, in, 0), std::invalid_argument);
  CHECK_THROWS_AS(Model({LayerSpec::conv2d(2, 9, Activation::relu), LayerSpec::flatten(), LayerSpec::dense(3, Activation::softmax)}, in, 0),
                  std::invalid_argument);
}

TEST_CASE("forward matches a direct-loop reference") {
  const auto m = small_model(9);
  const auto batch = random_batch({3, 8, 8, 2}, 4);
  const auto probs = forward(m, batch, false);
  REQUIRE(probs.shape() == std::vector<std::size_t>{3, 4});
  for (std::size_t n = 0; n < 3; ++n) {
    const auto ref = oracle::forward_sample(m, batch.data() + n * batch.stride0());
    for (std::size_t k = 0; k < 4; ++k) CHECK(probs[n * 4 + k] == doctest::Approx(ref[k]).epsilon(1e-12));
  }
  // The full desk-scale stack as well.
  const auto big = build_model(10, {30, 30, 3}, 2);
  const auto b2 = random_batch({2, 30, 30, 3}, 8);
  const auto p2 = forward(big, b2, false);
  for (std::size_t n = 0; n < 2; ++n) {
    const auto ref = oracle::forward_sample(big, b2.data() + n * b2.stride0());
    for (std::size_t k = 0; k < 10; ++k) CHECK(p2[n * 10 + k] == doctest::Approx(ref[k]).epsilon(1e-10));
  }
}

TEST_CASE("softmax rows sum to one and outputs are deterministic") {
  const auto m = build_model(10, {30, 30, 3}, 1);
  const Tensor zeros({4, 30, 30, 3});
  const auto a = forward(m, zeros, false);
  for (std::size_t n = 0; n < 4; ++n) {
    double s = 0;
    for (std::size_t k = 0; k < 10; ++k) s += a[n * 10 + k];
    CHECK(std::fabs(s - 1.0) <= 1e-9);
  }
  const auto batch = random_batch({4, 30, 30, 3}, 2);
  CHECK(forward(m, batch, false) == forward(m, batch, false));
  CHECK(forward(m, batch, false).all_finite());
}

TEST_CASE("uniform shift of the final bias leaves probabilities and argmax unchanged") {
  auto m = small_model(4);
  const auto batch = random_batch({6, 8, 8, 2}, 10);
  const auto before = forward(m, batch, false);
  for (auto& b : m.weights().back().values()) b += 3.75;
  const auto after = forward(m, batch, false);
  CHECK(argmax_rows(before) == argmax_rows(after));
  for (std::size_t i = 0; i < before.size(); ++i) CHECK(after[i] == doctest::Approx(before[i]).epsilon(1e-12));
}

TEST_CASE("dropout at rate 0 is the identity") {
  const auto m = small_model(4, 0.0);
  const auto batch = random_batch({3, 8, 8, 2}, 12);
  CHECK(forward(m, batch, true, {1, 2, 3}) == forward(m, batch, false));
}

TEST_CASE("dropout masks are keyed by seed, epoch and batch") {
  const auto m = small_model(4, 0.5);
  const auto batch = random_batch({3, 8, 8, 2}, 12);
  CHECK(forward(m, batch, true, {1, 2, 3}) == forward(m, batch, true, {1, 2, 3}));
  CHECK_FALSE(forward(m, batch, true, {1, 2, 3}) == forward(m, batch, true, {1, 2, 4}));
}

TEST_CASE("uniform output gives loss ln C") {
  auto m = small_model(4);
  for (auto& t : m.weights()) std::fill(t.values().begin(), t.values().end(), 0.0);
  const auto batch = random_batch({5, 8, 8, 2}, 1);
  const std::vector<int> labels{0, 1, 2, 3, 0};
  CHECK(loss(m, batch, labels, false) == doctest::Approx(std::log(4.0)).epsilon(1e-12));
  CHECK(backward(m, batch, labels).loss == doctest::Approx(std::log(4.0)).epsilon(1e-12));
}

TEST_CASE("analytic gradients match central differences for every layer kind") {
  const Model m({LayerSpec::conv2d(2, 3, Activation::relu), LayerSpec::conv2d(3, 2, Activation::none),
                 LayerSpec::maxpool2d(2), LayerSpec::dropout(0.3), LayerSpec::flatten(),
                 LayerSpec::dense(5, Activation::relu), LayerSpec::dropout(0.5), LayerSpec::dense(3, Activation::softmax)},
                {8, 8, 2}, 21);
  const auto batch = random_batch({4, 8, 8, 2}, 3);
  const std::vector<int> labels{2, 0, 1, 2};
  const auto checks = check_gradients(m, batch, labels, 1e-5, 1, {5, 0, 1});
  REQUIRE(checks.size() == m.weights().size());
  for (const auto& c : checks) {
    INFO("tensor " << c.tensor);
    CHECK(c.checked == m.weights()[c.tensor].size());
    CHECK(c.max_rel_error < 1e-4);
  }
}

TEST_CASE("input gradient matches central differences") {
  const auto m = small_model(8);
  auto batch = random_batch({2, 8, 8, 2}, 5);
  const std::vector<int> labels{1, 3};
  const auto g = input_gradient(m, batch, labels);
  REQUIRE(g.shape() == batch.shape());
  double worst = 0;
  for (std::size_t i = 0; i < batch.size(); i += 7) {
    const double saved = batch[i];
    batch[i] = saved + 1e-5;
    const double up = loss(m, batch, labels, false);
    batch[i] = saved - 1e-5;
    const double down = loss(m, batch, labels, false);
    batch[i] = saved;
    const double num = (up - down) / 2e-5;
    worst = std::max(worst, std::fabs(num - g[i]) / std::max({std::fabs(num), std::fabs(g[i]), 1e-8}));
  }
  CHECK(worst < 1e-4);
}

TEST_CASE("a perfectly fitted model has near-zero gradient") {
  auto m = small_model(4);
  m.weights().back()[0] = 1000.0;  // class 0 dominates every logit row
  const auto batch = random_batch({4, 8, 8, 2}, 1);
  const std::vector<int> labels{0, 0, 0, 0};
  const auto g = backward(m, batch, labels);
  double norm = 0;
  for (const auto& t : g.weights)
    for (double v : t.values()) norm += v * v;
  CHECK(g.loss < 1e-12);
  CHECK(std::sqrt(norm) < 1e-12);
}

TEST_CASE("argmax ties resolve to the lowest index") {
  const Tensor p({3, 2}, std::vector<double>{0.2, 0.2, 0.1, 0.9, 0.5, 0.5});
  CHECK(argmax_rows(p) == std::vector<int>{0, 1, 0});
}

TEST_CASE("label checks in backward") {
  const auto m = small_model(1);
  const auto batch = random_batch({2, 8, 8, 2}, 1);
  CHECK_THROWS_AS(backward(m, batch, std::vector<int>{0}), std::invalid_argument);
  CHECK_THROWS_AS(backward(m, batch, std::vector<int>{0, 4}), std::invalid_argument);
  CHECK_THROWS_AS(forward(m, random_batch({2, 8, 8, 1}, 1), false), std::invalid_argument);
}

namespace {

LabeledDataset tiny_set(std::size_t n, std::uint64_t seed) {
  LabeledDataset d;
  d.images = random_batch({n, 8, 8, 2}, seed);
  d.labels.resize(n);
  for (std::size_t i = 0; i < n; ++i) d.labels[i] = static_cast<int>(i % 4);
  d.poisoned.assign(n, false);
  d.class_count = 4;
  return d;
}

}  // namespace

TEST_CASE("zero epochs leave the weights unchanged") {
  const auto m = small_model(2);
  const auto r = train(m, tiny_set(10, 1), {0, 4, 0.05, 1});
  CHECK(r.model == m);
  CHECK(r.seconds >= 0.0);
  CHECK(r.epoch_loss.empty());
}

TEST_CASE("training a 10-sample set memorizes it") {
  const auto data = tiny_set(10, 3);
  const auto r = train(small_model(2, 0.0), data, {150, 5, 0.1, 4});
  CHECK(predict_labels(r.model, data) == data.labels);
  CHECK(r.epoch_loss.back() < r.epoch_loss.front());
}

TEST_CASE("training is bitwise deterministic") {
  const auto data = tiny_set(12, 3);
  const auto a = train(small_model(2), data, {3, 4, 0.05, 9});
  const auto b = train(small_model(2), data, {3, 4, 0.05, 9});
  CHECK(same_bytes(a.model, b.model));
  CHECK(a.epoch_loss == b.epoch_loss);
  const auto c = train(small_model(2), data, {3, 4, 0.05, 10});
  CHECK_FALSE(same_bytes(a.model, c.model));
}

TEST_CASE("train rejects bad configs and diverging runs") {
  const auto data = tiny_set(8, 3);
  CHECK_THROWS_AS(train(small_model(1), data, {1, 0, 0.05, 0}), ConfigError);
  CHECK_THROWS_AS(train(small_model(1), data, {1, 4, -1.0, 0}), ConfigError);
  CHECK_THROWS_AS(train(small_model(1), data, {1, 9, 0.05, 0}), ConfigError);
  CHECK_THROWS_AS(train(small_model(1), data, {5, 4, 1e200, 0}), DivergenceError);
}

TEST_CASE("predict_labels on an empty dataset") {
  LabeledDataset empty;
  empty.images = Tensor({0, 8, 8, 2});
  empty.class_count = 4;
  CHECK(predict_labels(small_model(1), empty).empty());
}

TEST_CASE("checkpoint round trip") {
  const auto path = std::filesystem::temp_directory_path() / "rmf_test_ckpt.bin";
  const auto m = train(small_model(6), tiny_set(8, 2), {1, 4, 0.05, 0}).model;
  save_checkpoint(m, path);
  const auto back = load_checkpoint(path);
  CHECK(back == m);
  CHECK(same_bytes(back, m));
  CHECK(back.layers() == m.layers());
  // Truncated files are rejected.
  std::filesystem::resize_file(path, 40);
  CHECK_THROWS(load_checkpoint(path));
  std::filesystem::remove(path);
  CHECK_THROWS(load_checkpoint(path));
}

TEST_CASE("[slow] default synthetic set trains to at least 0.85 clean accuracy") {
  SyntheticSpec spec;
  spec.seed = 1;
  const auto split = generate_synthetic(spec);
  const auto r = train(build_model(10, spec.image_size, 1), split.train, TrainConfig{});
  const auto acc = evaluate(r.model, split.test).accuracy;
  MESSAGE("clean test accuracy " << acc);
  CHECK(acc >= 0.85);
}
