#include "srn/tracker.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <numbers>

namespace srn {
namespace {

constexpr double kMinSide = 4.0;

uint64_t fnv1a(uint64_t h, const void* data, size_t n) {
  const auto* p = static_cast<const uint8_t*>(data);
  for (size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ull;
  }
  return h;
}

}  // namespace

std::vector<double> cosine_window(int size) {
  std::vector<double> h(size);
  for (int i = 0; i < size; ++i)
    h[i] = size == 1 ? 1.0 : 0.5 - 0.5 * std::cos(2 * std::numbers::pi * i / (size - 1));
  std::vector<double> w(static_cast<size_t>(size) * size);
  for (int j = 0; j < size; ++j)
    for (int i = 0; i < size; ++i) w[j * size + i] = h[j] * h[i];
  return w;
}

Selection select_box(const std::vector<double>& prob, const Tensor<float>& reg, const GridSpec& grid,
                     double window_influence) {
  SRN_CHECK(static_cast<int>(prob.size()) == grid.count(), ErrorCode::kShapeMismatch, "one score per location");
  require_shape(reg, {4, grid.size, grid.size}, "regression map");
  const auto window = cosine_window(grid.size);
  Selection best;
  for (int i = 0; i < grid.count(); ++i) {
    const double s = prob[i] * std::pow(window[i], window_influence);
    if (best.index < 0 || s > best.score) best = {i, s, {}};
  }
  const size_t plane = static_cast<size_t>(grid.count());
  Distances d{};
  for (int k = 0; k < 4; ++k) d[k] = reg[k * plane + best.index];
  best.box = decode_box(grid.px(best.index % grid.size), grid.px(best.index / grid.size), d);
  return best;
}

BBox smooth_size(const BBox& prev, const BBox& candidate, double rate) {
  const double w = (1 - rate) * prev.width() + rate * candidate.width();
  const double h = (1 - rate) * prev.height() + rate * candidate.height();
  return BBox::from_center(candidate.cx(), candidate.cy(), w, h);
}

void write_unit_map(const std::filesystem::path& path, int size, const std::vector<double>& values) {
  std::vector<uint8_t> px(values.size());
  for (size_t i = 0; i < values.size(); ++i)
    px[i] = static_cast<uint8_t>(std::lround(std::clamp(values[i], 0.0, 1.0) * 255.0));
  write_pgm(path, size, size, px);
}

Tracker::Tracker(const Model<float>& model, TrackerOptions opt) : model_(model), opt_(std::move(opt)) {}

void Tracker::init(const Image& frame, const BBox& box) {
  SRN_CHECK(!frame.empty(), ErrorCode::kEmptyInput, "init on an empty frame");
  SRN_CHECK(box.has_area() && std::isfinite(box.area()), ErrorCode::kDegenerateTarget, "init box has no area");
  ag::NoGradGuard guard;
  const Patch patch = crop_template(frame, box);
  z_ = extract_pyramid(model_.backbone(), patch, Role::kTemplate);
  rois_ = pool_template_rois(z_, patch.to_patch(box), model_.config().levels);
  box_ = box;
  frame_ = 1;
  initialized_ = true;
}

TrackOutput Tracker::update(const Image& frame) {
  SRN_CHECK(initialized_, ErrorCode::kState, "tracker used before init");
  SRN_CHECK(!frame.empty(), ErrorCode::kEmptyInput, "update on an empty frame");
  ag::NoGradGuard guard;
  ++frame_;
  const GridSpec grid;
  const Patch patch = crop_search(frame, box_);
  const auto x = extract_pyramid(model_.backbone(), patch, Role::kSearch);
  const auto co = model_.head().forward(z_, x);
  const auto ones = ag::Var<float>::constant(Tensor<float>({grid.size, grid.size}, 1.0f));
  const auto prob_pre = target_probability(model_.refine().forward(co.cls, ones).value());

  MatchingScoreMap m;
  std::vector<double> prob_post;
  if (opt_.ablate_no_rd) {
    prob_post = prob_pre;
  } else {
    m = build_matching_map(co.reg_all.value(), grid, model_.scorer(x, rois_), opt_.proposals, &prob_pre);
    const auto mv = ag::Var<float>::constant(m.tensor<float>());
    prob_post = target_probability(model_.refine().forward(co.cls, mv).value());
  }

  const Selection sel = select_box(prob_post, co.reg_all.value(), grid, opt_.window_influence);
  BBox next = smooth_size(box_, patch.to_frame(sel.box), opt_.size_rate);
  const double w = std::clamp(next.width(), kMinSide, std::max<double>(kMinSide, frame.width));
  const double h = std::clamp(next.height(), kMinSide, std::max<double>(kMinSide, frame.height));
  const double cx = std::clamp(next.cx(), 0.0, static_cast<double>(frame.width));
  const double cy = std::clamp(next.cy(), 0.0, static_cast<double>(frame.height));
  if (std::isfinite(cx) && std::isfinite(cy) && std::isfinite(w) && std::isfinite(h))
    box_ = BBox::from_center(cx, cy, w, h);

  TrackOutput out;
  out.box = box_;
  out.confidence = prob_post[sel.index];
  out.diag.argmax = sel.index;
  out.diag.score_pre = prob_pre[sel.index];
  out.diag.score_post = prob_post[sel.index];
  out.diag.matching = m.scores[sel.index];
  out.diag.evaluated = m.evaluated_count();
  out.diag.degenerate = m.degenerate;

  if (opt_.dump_dir) {
    std::filesystem::create_directories(*opt_.dump_dir);
    char name[32];
    std::snprintf(name, sizeof name, "%06d_matching.pgm", frame_);
    write_unit_map(*opt_.dump_dir / name, grid.size, m.scores);
    std::snprintf(name, sizeof name, "%06d_cls.pgm", frame_);
    write_unit_map(*opt_.dump_dir / name, grid.size, prob_post);
  }
  return out;
}

std::vector<BBox> track_sequence(const Model<float>& model, const Sequence& seq, const TrackerOptions& opt) {
  SRN_CHECK(seq.size() > 0 && seq.frames.size() == seq.gt.size(), ErrorCode::kEmptyInput,
            "sequence " + seq.name + " has no frames or mismatched annotations");
  Tracker tracker(model, opt);
  tracker.init(seq.frames[0], seq.gt[0]);
  std::vector<BBox> boxes{seq.gt[0]};
  for (int f = 1; f < seq.size(); ++f) boxes.push_back(tracker.update(seq.frames[f]).box);
  return boxes;
}

std::string results_text(const std::vector<BBox>& boxes) {
  std::string out;
  char line[160];
  for (const auto& b : boxes) {
    std::snprintf(line, sizeof line, "%.4f,%.4f,%.4f,%.4f\n", b.x0, b.y0, b.width(), b.height());
    out += line;
  }
  return out;
}

uint64_t Tracker::cache_digest() const {
  uint64_t h = 0xcbf29ce484222325ull;
  for (int l = 0; l < kNumLevels; ++l) {
    for (const auto* v : {&z_.levels[l], &z_.full[l], &rois_.blocks[l]})
      if (v->defined()) h = fnv1a(h, v->value().data(), v->value().size() * sizeof(float));
  }
  return h;
}

}  // namespace srn
