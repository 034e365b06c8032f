#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "rmf/dataset.hpp"
#include "rmf/tensor.hpp"

namespace rmf {

enum class TriggerKind { corner_square, checkerboard };
enum class TriggerPosition { bottom_right, top_left };

/// Square patch overwritten on every channel. A checkerboard writes
/// `intensity` on even (row + column) cells and 0 on the others.
struct TriggerPattern {
  TriggerKind kind = TriggerKind::corner_square;
  std::size_t size = 3;
  double intensity = 1.0;
  TriggerPosition position = TriggerPosition::bottom_right;

  /// Throws std::invalid_argument unless the patch fits inside an image of `shape`.
  void check_fits(ImageShape shape) const;
  /// True if pixel (y, x) is covered for an image of `shape`.
  bool covers(ImageShape shape, std::size_t y, std::size_t x) const;

  bool operator==(const TriggerPattern&) const = default;
};

enum class AttackKind { pattern_backdoor, clean_label_backdoor, label_flip };
enum class Specificity { targeted, untargeted };
enum class StepPhase { knowledge, goal, specificity };

std::string_view to_string(AttackKind kind);
std::string_view to_string(Specificity s);
std::string_view to_string(StepPhase phase);
std::string_view to_string(TriggerKind kind);
std::string_view to_string(TriggerPosition pos);
std::optional<AttackKind> parse_attack_kind(std::string_view text);

struct AttackStep {
  std::string name;
  StepPhase phase = StepPhase::knowledge;
  bool operator==(const AttackStep&) const = default;
};

/// Attacker sub-goals, grouped by the effort attribute they count toward.
struct StepCatalog {
  std::vector<std::string> knowledge;
  std::vector<std::string> goal;
  std::vector<std::string> specificity;

  static StepCatalog from_steps(const std::vector<AttackStep>& steps);
  std::vector<AttackStep> steps() const;
  void validate() const;

  bool operator==(const StepCatalog&) const = default;
};

struct CleanLabelParams {
  double epsilon = 0.1;        ///< L-infinity bound of the perturbation
  std::size_t pgd_steps = 10;
  double pgd_step_size = 0.02;
  std::size_t proxy_epochs = 3;

  bool operator==(const CleanLabelParams&) const = default;
};

struct AttackSpec {
  AttackKind kind = AttackKind::pattern_backdoor;
  double poison_fraction = 0.5;
  std::optional<int> target_label = 0;
  std::optional<TriggerPattern> trigger = TriggerPattern{};
  Specificity specificity = Specificity::targeted;
  CleanLabelParams clean_label;
  StepCatalog steps;

  /// Structural checks that do not depend on the dataset.
  void validate() const;

  bool operator==(const AttackSpec&) const = default;
};

/// Stamps the trigger onto every image of an (N,H,W,C) batch or one (H,W,C) image.
Tensor apply_trigger(const Tensor& images, const TriggerPattern& trigger);

/// Gu et al. style backdoor: a seeded floor(fraction * N) selection gets the
/// trigger and the target label.
LabeledDataset pattern_backdoor(const LabeledDataset& data, const AttackSpec& spec, std::uint64_t seed);

/// Turner et al. style clean-label backdoor. Target-class samples are pushed
/// away from their own label by sign-gradient ascent on a proxy classifier,
/// projected to the epsilon ball, then stamped. Labels are left untouched.
LabeledDataset clean_label_backdoor(const LabeledDataset& data, const AttackSpec& spec,
                                    std::uint64_t proxy_seed);

/// Relabels a seeded floor(fraction * N) selection; images are not touched.
LabeledDataset label_flip(const LabeledDataset& data, const AttackSpec& spec, std::uint64_t seed);

/// Dispatches on spec.kind.
LabeledDataset run_attack(const LabeledDataset& data, const AttackSpec& spec, std::uint64_t seed);

StepCatalog default_step_catalog(AttackKind kind);

}  // namespace rmf
