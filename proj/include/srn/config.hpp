#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

namespace srn {

inline constexpr int kNumLevels = 3;  // backbone stages 3, 4, 5
inline constexpr int kNumHeads = 3;   // global, local, patch

enum class RelationHead { kGlobal = 0, kLocal = 1, kPatch = 2 };

/// Non-empty subset of {global, local, patch}.
struct HeadSet {
  std::array<bool, kNumHeads> on{true, true, true};

  static HeadSet only(RelationHead h) {
    HeadSet s{{false, false, false}};
    s.on[static_cast<int>(h)] = true;
    return s;
  }
  bool has(RelationHead h) const { return on[static_cast<int>(h)]; }
  int count() const { return on[0] + on[1] + on[2]; }
  std::string str() const;
  static HeadSet parse(const std::string& s);  // e.g. "global+local"
  /// All 7 non-empty subsets, singletons first.
  static std::vector<HeadSet> all_subsets();
  bool operator==(const HeadSet&) const = default;
};

/// Non-empty subset of the pyramid levels {L3, L4, L5}.
struct LevelSet {
  std::array<bool, kNumLevels> on{true, true, true};

  bool has(int level) const { return on[level]; }
  int count() const { return on[0] + on[1] + on[2]; }
  std::vector<int> indices() const;
  std::string str() const;
  static LevelSet parse(const std::string& s);  // e.g. "L4+L5"
  bool operator==(const LevelSet&) const = default;
};

struct ModelConfig {
  int channels = 64;       // C, shared by all pyramid levels
  int stem_channels = 16;  // stage 1 width
  int mid_channels = 32;   // stage 2 width
  LevelSet levels;
  HeadSet heads;
  int attention_dim = 16;
  int global_hidden = 64;
  int local_hidden = 64;
  int patch_embed = 32;
  int tower_hidden = 0;  // 0 = same as channels
  uint64_t init_seed = 1;

  int tower() const { return tower_hidden > 0 ? tower_hidden : channels; }
};

void to_json(nlohmann::json& j, const HeadSet& h);
void from_json(const nlohmann::json& j, HeadSet& h);
void to_json(nlohmann::json& j, const LevelSet& l);
void from_json(const nlohmann::json& j, LevelSet& l);
void to_json(nlohmann::json& j, const ModelConfig& c);
void from_json(const nlohmann::json& j, ModelConfig& c);

}  // namespace srn
