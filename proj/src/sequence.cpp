#include "srn/sequence.hpp"

#include <algorithm>
#include <charconv>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace srn {
namespace fs = std::filesystem;
namespace {

const char* kTagNames[] = {"occluded", "fast-motion", "near-distractor"};

std::string format_number(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

bool is_frame_file(const fs::path& p) {
  std::string ext = p.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
  return ext == ".png" || ext == ".jpg" || ext == ".jpeg";
}

}  // namespace

std::string tags_to_string(uint8_t tags) {
  std::string s;
  for (int i = 0; i < 3; ++i)
    if (tags & (1 << i)) s += (s.empty() ? "" : ",") + std::string(kTagNames[i]);
  return s.empty() ? "none" : s;
}

uint8_t tags_from_string(const std::string& s) {
  uint8_t tags = 0;
  std::stringstream ss(s);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    if (tok.empty() || tok == "none") continue;
    bool found = false;
    for (int i = 0; i < 3; ++i)
      if (tok == kTagNames[i]) {
        tags |= static_cast<uint8_t>(1 << i);
        found = true;
      }
    SRN_CHECK(found, ErrorCode::kParse, "unknown frame tag '" + tok + "'");
  }
  return tags;
}

BBox parse_box_line(const std::string& line, int line_no) {
  std::string norm = line;
  for (auto& c : norm)
    if (c == ',' || c == '\t' || c == ';' || c == '\r') c = ' ';
  std::istringstream in(norm);
  double v[4];
  for (double& x : v) {
    std::string tok;
    SRN_CHECK(static_cast<bool>(in >> tok), ErrorCode::kParse,
              "groundtruth line " + std::to_string(line_no) + ": expected 4 numbers");
    const char* end = tok.data() + tok.size();
    auto res = std::from_chars(tok.data(), end, x);
    SRN_CHECK(res.ec == std::errc() && res.ptr == end, ErrorCode::kParse,
              "groundtruth line " + std::to_string(line_no) + ": bad number '" + tok + "'");
  }
  std::string extra;
  SRN_CHECK(!(in >> extra), ErrorCode::kParse, "groundtruth line " + std::to_string(line_no) + ": trailing data");
  return BBox::from_xywh(v[0], v[1], v[2], v[3]);
}

std::vector<BBox> read_groundtruth(const fs::path& path) {
  std::ifstream in(path);
  SRN_CHECK(in.good(), ErrorCode::kIo, "cannot open " + path.string());
  std::vector<BBox> boxes;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    boxes.push_back(parse_box_line(line, line_no));
  }
  return boxes;
}

void write_groundtruth(const fs::path& path, const std::vector<BBox>& boxes) {
  std::ofstream out(path);
  SRN_CHECK(out.good(), ErrorCode::kIo, "cannot write " + path.string());
  for (const auto& b : boxes)
    out << format_number(b.x0) << ',' << format_number(b.y0) << ',' << format_number(b.width()) << ','
        << format_number(b.height()) << '\n';
}

Sequence load_sequence(const fs::path& dir) {
  SRN_CHECK(fs::is_directory(dir), ErrorCode::kIo, "not a sequence directory: " + dir.string());
  Sequence seq;
  seq.name = dir.filename().string();
  if (seq.name.empty()) seq.name = dir.parent_path().filename().string();
  seq.gt = read_groundtruth(dir / "groundtruth.txt");

  std::vector<fs::path> files;
  const fs::path img = dir / "img";
  SRN_CHECK(fs::is_directory(img), ErrorCode::kIo, "missing frame directory " + img.string());
  for (const auto& e : fs::directory_iterator(img))
    if (e.is_regular_file() && is_frame_file(e.path())) files.push_back(e.path());
  std::sort(files.begin(), files.end());
  SRN_CHECK(files.size() == seq.gt.size(), ErrorCode::kParse,
            seq.name + ": " + std::to_string(files.size()) + " frames but " + std::to_string(seq.gt.size()) +
                " annotations");
  seq.frames.reserve(files.size());
  for (const auto& f : files) seq.frames.push_back(read_image(f));

  if (const fs::path tags = dir / "tags.txt"; fs::exists(tags)) {
    std::ifstream in(tags);
    std::string line;
    while (std::getline(in, line)) {
      if (!line.empty() && line.back() == '\r') line.pop_back();
      if (!line.empty()) seq.tags.push_back(tags_from_string(line));
    }
    SRN_CHECK(seq.tags.size() == seq.gt.size(), ErrorCode::kParse,
              seq.name + ": " + std::to_string(seq.tags.size()) + " tag lines but " +
                  std::to_string(seq.gt.size()) + " annotations");
  }
  return seq;
}

void write_sequence(const fs::path& dir, const Sequence& seq) {
  SRN_CHECK(seq.frames.size() == seq.gt.size(), ErrorCode::kInvalidArgument, "frame/annotation count mismatch");
  fs::create_directories(dir / "img");
  char name[32];
  for (size_t i = 0; i < seq.frames.size(); ++i) {
    std::snprintf(name, sizeof name, "%06zu.png", i + 1);
    write_png(dir / "img" / name, seq.frames[i]);
  }
  write_groundtruth(dir / "groundtruth.txt", seq.gt);
  if (!seq.tags.empty()) {
    std::ofstream out(dir / "tags.txt");
    for (uint8_t t : seq.tags) out << tags_to_string(t) << '\n';
  }
}

std::vector<fs::path> list_sequences(const fs::path& root) {
  SRN_CHECK(fs::is_directory(root), ErrorCode::kIo, "not a directory: " + root.string());
  if (fs::exists(root / "groundtruth.txt")) return {root};
  std::vector<fs::path> dirs;
  for (const auto& e : fs::directory_iterator(root))
    if (e.is_directory() && fs::exists(e.path() / "groundtruth.txt")) dirs.push_back(e.path());
  std::sort(dirs.begin(), dirs.end());
  return dirs;
}

std::vector<Sequence> load_dataset(const fs::path& root) {
  std::vector<Sequence> out;
  for (const auto& d : list_sequences(root)) out.push_back(load_sequence(d));
  SRN_CHECK(!out.empty(), ErrorCode::kEmptyInput, "no sequences under " + root.string());
  return out;
}

}  // namespace srn
