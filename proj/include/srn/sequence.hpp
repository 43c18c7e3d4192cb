#pragma once

// Annotated frame sequences in the OTB directory layout:
//   DIR/img/000001.png ...   frames, numbered from 1
//   DIR/groundtruth.txt      x,y,w,h per frame (comma, tab or space separated)
//   DIR/tags.txt             optional per-frame attribute tags

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "srn/geometry.hpp"
#include "srn/image.hpp"

namespace srn {

enum FrameTag : uint8_t {
  kTagOccluded = 1,
  kTagFastMotion = 2,
  kTagNearDistractor = 4,
};

std::string tags_to_string(uint8_t tags);  // "occluded,near-distractor" or "none"
uint8_t tags_from_string(const std::string& s);

struct Sequence {
  std::string name;
  std::vector<Image> frames;
  std::vector<BBox> gt;
  std::vector<uint8_t> tags;  // empty when unknown

  int size() const { return static_cast<int>(gt.size()); }
  bool operator==(const Sequence&) const = default;
};

/// Parse one annotation line into a box; separators may be commas, tabs or
/// runs of spaces. Throws kParse citing `line_no`.
BBox parse_box_line(const std::string& line, int line_no);
std::vector<BBox> read_groundtruth(const std::filesystem::path& path);
void write_groundtruth(const std::filesystem::path& path, const std::vector<BBox>& boxes);

Sequence load_sequence(const std::filesystem::path& dir);
void write_sequence(const std::filesystem::path& dir, const Sequence& seq);

/// Sequence directories below `root` (those holding a groundtruth.txt), sorted by name.
std::vector<std::filesystem::path> list_sequences(const std::filesystem::path& root);
std::vector<Sequence> load_dataset(const std::filesystem::path& root);

}  // namespace srn
