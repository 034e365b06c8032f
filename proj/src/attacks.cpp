#include "rmf/attacks.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "rmf/error.hpp"
#include "rmf/model.hpp"
#include "rmf/rng.hpp"

namespace rmf {

std::string_view to_string(AttackKind kind) {
  switch (kind) {
    case AttackKind::pattern_backdoor: return "pattern_backdoor";
    case AttackKind::clean_label_backdoor: return "clean_label_backdoor";
    case AttackKind::label_flip: return "label_flip";
  }
  return "unknown";
}

std::string_view to_string(Specificity s) {
  return s == Specificity::targeted ? "targeted" : "untargeted";
}

std::string_view to_string(StepPhase phase) {
  switch (phase) {
    case StepPhase::knowledge: return "knowledge";
    case StepPhase::goal: return "goal";
    case StepPhase::specificity: return "specificity";
  }
  return "unknown";
}

std::string_view to_string(TriggerKind kind) {
  return kind == TriggerKind::corner_square ? "corner_square" : "checkerboard";
}

std::string_view to_string(TriggerPosition pos) {
  return pos == TriggerPosition::bottom_right ? "bottom_right" : "top_left";
}

std::optional<AttackKind> parse_attack_kind(std::string_view text) {
  for (auto k : {AttackKind::pattern_backdoor, AttackKind::clean_label_backdoor, AttackKind::label_flip}) {
    if (to_string(k) == text) return k;
  }
  return std::nullopt;
}

// ---------------------------------------------------------------------------
// Step catalogs

StepCatalog StepCatalog::from_steps(const std::vector<AttackStep>& steps) {
  StepCatalog c;
  for (const auto& s : steps) {
    switch (s.phase) {
      case StepPhase::knowledge: c.knowledge.push_back(s.name); break;
      case StepPhase::goal: c.goal.push_back(s.name); break;
      case StepPhase::specificity: c.specificity.push_back(s.name); break;
    }
  }
  return c;
}

std::vector<AttackStep> StepCatalog::steps() const {
  std::vector<AttackStep> out;
  for (const auto& n : knowledge) out.push_back({n, StepPhase::knowledge});
  for (const auto& n : goal) out.push_back({n, StepPhase::goal});
  for (const auto& n : specificity) out.push_back({n, StepPhase::specificity});
  return out;
}

void StepCatalog::validate() const {
  for (const auto& s : steps()) {
    if (s.name.empty()) throw ConfigError(fmt::format("{} step with an empty name", to_string(s.phase)));
  }
}

// Itemized sub-goals per attack. Only the clean-label totals (10/6/5) are
// externally anchored; the names are this project's own breakdown.
StepCatalog default_step_catalog(AttackKind kind) {
  switch (kind) {
    case AttackKind::clean_label_backdoor:
      return {{"identify target architecture (white-box access)",
               "identify input shape and preprocessing",
               "identify label set and class count",
               "locate the training data pipeline",
               "obtain representative clean training data",
               "identify training hyperparameters for a proxy",
               "select the proxy classifier architecture",
               "identify the target class index",
               "fix the poisoning budget",
               "find an image region free of class features for the trigger"},
              {"choose the backdoor type (clean-label)",
               "design the trigger pattern",
               "implement the optimization function (PGD)",
               "train the original dataset and a proxy classifier",
               "perturb and stamp target-class samples",
               "inject the poisoned samples into the training set"},
              {"choose targeted intent",
               "fix the target label",
               "restrict poisoning to target-class samples",
               "keep the original labels",
               "verify the trigger steers the proxy to the target"}};
    case AttackKind::pattern_backdoor:
      return {{"identify input shape and preprocessing",
               "identify label set and class count",
               "obtain write access to training data",
               "fix the poisoning budget"},
              {"choose the backdoor type (pixel pattern)",
               "design the trigger pattern",
               "stamp the trigger and relabel selected samples"},
              {"choose targeted intent", "fix the target label"}};
    case AttackKind::label_flip:
      return {{"identify label set and class count", "obtain write access to training labels"},
              {"relabel selected samples"},
              {"choose a specific or random replacement label"}};
  }
  return {};
}

// ---------------------------------------------------------------------------
// Trigger

void TriggerPattern::check_fits(ImageShape shape) const {
  if (size == 0) throw std::invalid_argument("trigger size must be positive");
  if (!(intensity >= 0.0 && intensity <= 1.0)) throw std::invalid_argument("trigger intensity outside [0,1]");
  if (2 * size >= std::min(shape.height, shape.width)) {
    throw std::invalid_argument(fmt::format("trigger larger than image: size {} needs less than half of {}x{}",
                                            size, shape.height, shape.width));
  }
}

bool TriggerPattern::covers(ImageShape shape, std::size_t y, std::size_t x) const {
  if (position == TriggerPosition::top_left) return y < size && x < size;
  return y >= shape.height - size && x >= shape.width - size;
}

namespace {

void stamp(double* image, ImageShape shape, const TriggerPattern& t) {
  const std::size_t y0 = t.position == TriggerPosition::top_left ? 0 : shape.height - t.size;
  const std::size_t x0 = t.position == TriggerPosition::top_left ? 0 : shape.width - t.size;
  for (std::size_t dy = 0; dy < t.size; ++dy) {
    for (std::size_t dx = 0; dx < t.size; ++dx) {
      double v = t.intensity;
      if (t.kind == TriggerKind::checkerboard && (dy + dx) % 2 == 1) v = 0.0;
      double* px = image + ((y0 + dy) * shape.width + x0 + dx) * shape.channels;
      std::fill(px, px + shape.channels, v);
    }
  }
}

ImageShape image_shape_of(const Tensor& images) {
  if (images.rank() == 4) return {images.dim(1), images.dim(2), images.dim(3)};
  if (images.rank() == 3) return {images.dim(0), images.dim(1), images.dim(2)};
  throw std::invalid_argument("apply_trigger needs (N,H,W,C) or (H,W,C) images");
}

std::vector<std::size_t> seeded_selection(std::vector<std::size_t> population, double fraction,
                                          std::uint64_t seed) {
  const std::size_t count = fraction_count(fraction, population.size());
  Engine rng(derive_seed(seed, 0x504f49534f4eULL));
  std::shuffle(population.begin(), population.end(), rng);
  population.resize(count);
  std::sort(population.begin(), population.end());
  return population;
}

std::vector<std::size_t> all_indices(std::size_t n) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  return idx;
}

void require_kind(const AttackSpec& spec, AttackKind kind) {
  spec.validate();
  if (spec.kind != kind) {
    throw ConfigError(fmt::format("attack spec is {} but {} was requested", to_string(spec.kind), to_string(kind)));
  }
}

void require_target(const AttackSpec& spec, const LabeledDataset& data) {
  if (spec.specificity != Specificity::targeted) throw ConfigError(fmt::format("{} must be targeted", to_string(spec.kind)));
  const int t = *spec.target_label;
  if (t < 0 || static_cast<std::size_t>(t) >= data.class_count) {
    throw ConfigError(fmt::format("target_label {} out of range [0,{})", t, data.class_count));
  }
}

}  // namespace

Tensor apply_trigger(const Tensor& images, const TriggerPattern& trigger) {
  const ImageShape shape = image_shape_of(images);
  trigger.check_fits(shape);
  Tensor out = images;
  const std::size_t n = images.rank() == 4 ? images.dim(0) : 1;
  for (std::size_t i = 0; i < n; ++i) stamp(out.data() + i * shape.size(), shape, trigger);
  return out;
}

void AttackSpec::validate() const {
  if (!(poison_fraction >= 0.0 && poison_fraction <= 1.0)) {
    throw ConfigError(fmt::format("poison_fraction {} outside [0,1]", poison_fraction));
  }
  if ((specificity == Specificity::targeted) != target_label.has_value()) {
    throw ConfigError("a target_label is required exactly when the attack is targeted");
  }
  if (kind != AttackKind::label_flip && !trigger) {
    throw ConfigError(fmt::format("{} requires a trigger", to_string(kind)));
  }
  if (trigger && !(trigger->intensity >= 0.0 && trigger->intensity <= 1.0)) {
    throw ConfigError("trigger intensity outside [0,1]");
  }
  if (trigger && trigger->size == 0) throw ConfigError("trigger size must be positive");
  if (!(clean_label.epsilon >= 0.0) || !(clean_label.pgd_step_size >= 0.0)) {
    throw ConfigError("clean_label epsilon and pgd_step_size must be non-negative");
  }
  steps.validate();
}

LabeledDataset pattern_backdoor(const LabeledDataset& data, const AttackSpec& spec, std::uint64_t seed) {
  require_kind(spec, AttackKind::pattern_backdoor);
  require_target(spec, data);
  const ImageShape shape = data.image_shape();
  spec.trigger->check_fits(shape);

  LabeledDataset out = data;
  for (auto i : seeded_selection(all_indices(data.size()), spec.poison_fraction, seed)) {
    stamp(out.images.data() + i * shape.size(), shape, *spec.trigger);
    out.labels[i] = *spec.target_label;
    out.poisoned[i] = true;
  }
  return out;
}

LabeledDataset clean_label_backdoor(const LabeledDataset& data, const AttackSpec& spec,
                                    std::uint64_t proxy_seed) {
  require_kind(spec, AttackKind::clean_label_backdoor);
  require_target(spec, data);
  const ImageShape shape = data.image_shape();
  spec.trigger->check_fits(shape);
  const int target = *spec.target_label;

  std::vector<std::size_t> eligible;
  for (std::size_t i = 0; i < data.size(); ++i) {
    if (data.labels[i] == target) eligible.push_back(i);
  }
  if (eligible.empty()) throw DataError(fmt::format("target class {} is absent from the data", target));
  const auto chosen = seeded_selection(std::move(eligible), spec.poison_fraction, proxy_seed);

  LabeledDataset out = data;
  const auto& p = spec.clean_label;
  if (!chosen.empty() && p.pgd_steps > 0 && p.epsilon > 0.0) {
    TrainConfig proxy_cfg;
    proxy_cfg.epochs = p.proxy_epochs;
    proxy_cfg.batch_size = std::min<std::size_t>(32, data.size());
    proxy_cfg.seed = derive_seed(proxy_seed, 0x50524f5859ULL);
    spdlog::debug("training proxy classifier for {} epochs", p.proxy_epochs);
    const Model proxy =
        train(build_model(std::max<std::size_t>(data.class_count, 2), shape, proxy_cfg.seed), data, proxy_cfg).model;

    constexpr std::size_t chunk = 32;
    for (std::size_t begin = 0; begin < chosen.size(); begin += chunk) {
      const std::span<const std::size_t> rows(chosen.data() + begin, std::min(chunk, chosen.size() - begin));
      const Tensor original = gather_rows(data.images, rows);
      const std::vector<int> labels(rows.size(), target);
      Tensor x = original;
      for (std::size_t step = 0; step < p.pgd_steps; ++step) {
        const Tensor g = input_gradient(proxy, x, labels);
        for (std::size_t k = 0; k < x.size(); ++k) {
          const double sign = g[k] > 0.0 ? 1.0 : (g[k] < 0.0 ? -1.0 : 0.0);
          const double moved = x[k] + p.pgd_step_size * sign;
          x[k] = std::clamp(std::clamp(moved, original[k] - p.epsilon, original[k] + p.epsilon), 0.0, 1.0);
        }
      }
      const std::size_t stride = shape.size();
      for (std::size_t r = 0; r < rows.size(); ++r) {
        std::copy_n(x.data() + r * stride, stride, out.images.data() + rows[r] * stride);
      }
    }
  }
  for (auto i : chosen) {
    stamp(out.images.data() + i * shape.size(), shape, *spec.trigger);
    out.poisoned[i] = true;
  }
  return out;
}

LabeledDataset label_flip(const LabeledDataset& data, const AttackSpec& spec, std::uint64_t seed) {
  require_kind(spec, AttackKind::label_flip);
  if (spec.specificity == Specificity::targeted) {
    require_target(spec, data);
  } else if (data.class_count < 2) {
    throw ConfigError("untargeted label flip needs at least two classes");
  }

  LabeledDataset out = data;
  Engine rng(derive_seed(seed, 0x464c4950ULL));
  for (auto i : seeded_selection(all_indices(data.size()), spec.poison_fraction, seed)) {
    if (spec.specificity == Specificity::targeted) {
      out.labels[i] = *spec.target_label;
    } else {
      // Uniform over the other class_count - 1 labels.
      const auto draw = static_cast<int>(rng() % (data.class_count - 1));
      out.labels[i] = draw >= data.labels[i] ? draw + 1 : draw;
    }
    out.poisoned[i] = true;
  }
  return out;
}

LabeledDataset run_attack(const LabeledDataset& data, const AttackSpec& spec, std::uint64_t seed) {
  switch (spec.kind) {
    case AttackKind::pattern_backdoor: return pattern_backdoor(data, spec, seed);
    case AttackKind::clean_label_backdoor: return clean_label_backdoor(data, spec, seed);
    case AttackKind::label_flip: return label_flip(data, spec, seed);
  }
  throw ConfigError("unknown attack kind");
}

}  // namespace rmf
