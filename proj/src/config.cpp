#include "srn/config.hpp"

#include <sstream>

#include "srn/common.hpp"

namespace srn {
namespace {

const char* kHeadNames[kNumHeads] = {"global", "local", "patch"};
const char* kLevelNames[kNumLevels] = {"L3", "L4", "L5"};

std::vector<std::string> split_plus(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string tok;
  while (std::getline(ss, tok, '+'))
    if (!tok.empty()) out.push_back(tok);
  return out;
}

}  // namespace

std::string HeadSet::str() const {
  std::string s;
  for (int i = 0; i < kNumHeads; ++i)
    if (on[i]) s += (s.empty() ? "" : "+") + std::string(kHeadNames[i]);
  return s;
}

HeadSet HeadSet::parse(const std::string& s) {
  HeadSet h{{false, false, false}};
  for (const auto& tok : split_plus(s)) {
    bool found = false;
    for (int i = 0; i < kNumHeads; ++i)
      if (tok == kHeadNames[i]) h.on[i] = found = true;
    SRN_CHECK(found, ErrorCode::kParse, "unknown relation head '" + tok + "'");
  }
  SRN_CHECK(h.count() > 0, ErrorCode::kInvalidArgument, "relation head set must be non-empty");
  return h;
}

std::vector<HeadSet> HeadSet::all_subsets() {
  std::vector<HeadSet> out;
  for (int size = 1; size <= kNumHeads; ++size)
    for (int mask = 1; mask < (1 << kNumHeads); ++mask) {
      if (__builtin_popcount(mask) != size) continue;
      HeadSet h{{(mask & 1) != 0, (mask & 2) != 0, (mask & 4) != 0}};
      out.push_back(h);
    }
  return out;
}

std::vector<int> LevelSet::indices() const {
  std::vector<int> out;
  for (int i = 0; i < kNumLevels; ++i)
    if (on[i]) out.push_back(i);
  return out;
}

std::string LevelSet::str() const {
  std::string s;
  for (int i = 0; i < kNumLevels; ++i)
    if (on[i]) s += (s.empty() ? "" : "+") + std::string(kLevelNames[i]);
  return s;
}

LevelSet LevelSet::parse(const std::string& s) {
  LevelSet l{{false, false, false}};
  for (const auto& tok : split_plus(s)) {
    bool found = false;
    for (int i = 0; i < kNumLevels; ++i)
      if (tok == kLevelNames[i] || tok == std::string("C") + std::to_string(i + 3)) l.on[i] = found = true;
    SRN_CHECK(found, ErrorCode::kParse, "unknown pyramid level '" + tok + "'");
  }
  SRN_CHECK(l.count() > 0, ErrorCode::kInvalidArgument, "level set must be non-empty");
  return l;
}

void to_json(nlohmann::json& j, const HeadSet& h) { j = h.str(); }
void from_json(const nlohmann::json& j, HeadSet& h) { h = HeadSet::parse(j.get<std::string>()); }
void to_json(nlohmann::json& j, const LevelSet& l) { j = l.str(); }
void from_json(const nlohmann::json& j, LevelSet& l) { l = LevelSet::parse(j.get<std::string>()); }

void to_json(nlohmann::json& j, const ModelConfig& c) {
  j = nlohmann::json{{"channels", c.channels},
                     {"stem_channels", c.stem_channels},
                     {"mid_channels", c.mid_channels},
                     {"levels", c.levels},
                     {"heads", c.heads},
                     {"attention_dim", c.attention_dim},
                     {"global_hidden", c.global_hidden},
                     {"local_hidden", c.local_hidden},
                     {"patch_embed", c.patch_embed},
                     {"tower_hidden", c.tower_hidden},
                     {"init_seed", c.init_seed}};
}

void from_json(const nlohmann::json& j, ModelConfig& c) {
  ModelConfig d;
  c.channels = j.value("channels", d.channels);
  c.stem_channels = j.value("stem_channels", d.stem_channels);
  c.mid_channels = j.value("mid_channels", d.mid_channels);
  c.levels = j.contains("levels") ? j.at("levels").get<LevelSet>() : d.levels;
  c.heads = j.contains("heads") ? j.at("heads").get<HeadSet>() : d.heads;
  c.attention_dim = j.value("attention_dim", d.attention_dim);
  c.global_hidden = j.value("global_hidden", d.global_hidden);
  c.local_hidden = j.value("local_hidden", d.local_hidden);
  c.patch_embed = j.value("patch_embed", d.patch_embed);
  c.tower_hidden = j.value("tower_hidden", d.tower_hidden);
  c.init_seed = j.value("init_seed", d.init_seed);
}

}  // namespace srn
