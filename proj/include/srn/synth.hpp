#pragma once

// Seeded synthetic tracking sequences: a textured target and look-alike
// distractors moving over procedural clutter, with optional occlusion and
// illumination drift.

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "srn/sequence.hpp"

namespace srn {

enum class BlobShape { kEllipse, kRectangle };

struct Appearance {
  std::array<double, 3> color_a{0.8, 0.2, 0.2};  // RGB in [0, 1]
  std::array<double, 3> color_b{0.9, 0.8, 0.1};
  double frequency = 3.0;    // stripe cycles across the blob
  double orientation = 0.0;  // radians
  double phase = 0.0;
  BlobShape shape = BlobShape::kEllipse;
};

struct OcclusionEvent {
  int start = 0;  // first occluded frame (0-based)
  int end = 0;    // one past the last
};

struct SequenceSpec {
  std::string name = "seq";
  int frames = 60;
  int width = 256;
  int height = 192;
  double target_w = 32;
  double target_h = 28;
  uint64_t texture_seed = 1;  // target appearance
  int distractors = 2;
  double similarity = 0.0;  // 0: random distractor appearance, 1: target clone
  double speed = 2.0;       // px per frame
  double jitter = 0.5;      // per-frame positional noise (px, std)
  std::vector<OcclusionEvent> occlusions;
  double illumination = 0.0;  // brightness drift amplitude
  uint64_t seed = 1;
};

/// Parameters for a family of random sequences.
struct SuiteSpec {
  std::string prefix = "seq";
  int count = 10;
  uint64_t seed = 1;
  int frames = 60;
  int width = 256;
  int height = 192;
  int distractors = 2;
  double similarity = 0.8;
  double min_size = 24, max_size = 40;
  double min_speed = 1.0, max_speed = 3.0;
  double occlusion_prob = 0.3;
  double illumination = 0.1;
};

Appearance make_appearance(uint64_t texture_seed);
/// Linear blend from `random` (s = 0) to `target` (s = 1).
Appearance blend_appearance(const Appearance& random, const Appearance& target, double s);

Sequence gen_sequence(const SequenceSpec& spec);
std::vector<SequenceSpec> make_suite(const SuiteSpec& suite);

void to_json(nlohmann::json& j, const SequenceSpec& s);
void from_json(const nlohmann::json& j, SequenceSpec& s);
void to_json(nlohmann::json& j, const SuiteSpec& s);
void from_json(const nlohmann::json& j, SuiteSpec& s);

/// Expand a generator description: a single SequenceSpec object, an object
/// with a "sequences" array, or an object with a "suite" entry.
std::vector<SequenceSpec> specs_from_json(const nlohmann::json& j);

}  // namespace srn
