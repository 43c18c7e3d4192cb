#include "srn/synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>

namespace srn {
namespace {

constexpr double kPi = std::numbers::pi;

struct Canvas {
  int w, h;
  std::vector<double> rgb;  // interleaved, [0, 1]
  Canvas(int w_, int h_) : w(w_), h(h_), rgb(static_cast<size_t>(w_) * h_ * 3, 0.0) {}
  double* px(int x, int y) { return rgb.data() + (static_cast<size_t>(y) * w + x) * 3; }
};

struct Mover {
  double cx, cy, w, h;
  double heading;
  double speed;
  Appearance look;
};

double lerp(double a, double b, double t) { return a + (b - a) * t; }

std::array<double, 3> random_color(Rng& r) {
  // Saturated colors keep blobs visible against the muted background.
  std::array<double, 3> c{r.uniform(0.05, 0.95), r.uniform(0.05, 0.95), r.uniform(0.05, 0.95)};
  const int hi = static_cast<int>(r.below(3));
  c[hi] = std::max(c[hi], 0.75);
  return c;
}

Appearance random_appearance(Rng& r) {
  Appearance a;
  a.color_a = random_color(r);
  a.color_b = random_color(r);
  a.frequency = r.uniform(1.5, 5.0);
  a.orientation = r.uniform(0.0, kPi);
  a.phase = r.uniform(0.0, 2 * kPi);
  a.shape = r.bernoulli(0.5) ? BlobShape::kEllipse : BlobShape::kRectangle;
  return a;
}

void draw_blob(Canvas& c, double cx, double cy, double w, double h, const Appearance& a) {
  const int x0 = std::max(0, static_cast<int>(std::floor(cx - w / 2)));
  const int x1 = std::min(c.w - 1, static_cast<int>(std::ceil(cx + w / 2)));
  const int y0 = std::max(0, static_cast<int>(std::floor(cy - h / 2)));
  const int y1 = std::min(c.h - 1, static_cast<int>(std::ceil(cy + h / 2)));
  const double co = std::cos(a.orientation), si = std::sin(a.orientation);
  for (int y = y0; y <= y1; ++y)
    for (int x = x0; x <= x1; ++x) {
      const double u = (x + 0.5 - cx) / (w / 2), v = (y + 0.5 - cy) / (h / 2);
      const bool inside = a.shape == BlobShape::kEllipse ? u * u + v * v <= 1.0 : std::abs(u) <= 1 && std::abs(v) <= 1;
      if (!inside) continue;
      const double t = 0.5 + 0.5 * std::sin(kPi * a.frequency * (u * co + v * si) + a.phase);
      double* p = c.px(x, y);
      for (int k = 0; k < 3; ++k) p[k] = lerp(a.color_a[k], a.color_b[k], t);
    }
}

void fill_rect(Canvas& c, double cx, double cy, double w, double h, const std::array<double, 3>& color) {
  const int x0 = std::max(0, static_cast<int>(std::floor(cx - w / 2)));
  const int x1 = std::min(c.w - 1, static_cast<int>(std::ceil(cx + w / 2)));
  const int y0 = std::max(0, static_cast<int>(std::floor(cy - h / 2)));
  const int y1 = std::min(c.h - 1, static_cast<int>(std::ceil(cy + h / 2)));
  for (int y = y0; y <= y1; ++y)
    for (int x = x0; x <= x1; ++x) {
      double* p = c.px(x, y);
      for (int k = 0; k < 3; ++k) p[k] = color[k];
    }
}

Canvas render_background(const SequenceSpec& spec, Rng& r) {
  Canvas bg(spec.width, spec.height);
  std::array<double, 3> base{r.uniform(0.3, 0.6), r.uniform(0.3, 0.6), r.uniform(0.3, 0.6)};
  struct Wave {
    double fx, fy, phase, amp;
  };
  std::array<std::array<Wave, 3>, 3> waves;
  for (auto& ch : waves)
    for (auto& wv : ch) wv = {r.uniform(-0.05, 0.05), r.uniform(-0.05, 0.05), r.uniform(0, 2 * kPi), r.uniform(0, 0.08)};
  for (int y = 0; y < bg.h; ++y)
    for (int x = 0; x < bg.w; ++x) {
      double* p = bg.px(x, y);
      for (int k = 0; k < 3; ++k) {
        double v = base[k];
        for (const auto& wv : waves[k]) v += wv.amp * std::sin(wv.fx * x + wv.fy * y + wv.phase);
        p[k] = v;
      }
    }
  const int clutter = 10 + static_cast<int>(r.below(8));
  for (int i = 0; i < clutter; ++i) {
    Appearance a = random_appearance(r);
    for (auto& c : a.color_a) c = lerp(c, 0.45, 0.5);
    for (auto& c : a.color_b) c = lerp(c, 0.45, 0.5);
    draw_blob(bg, r.uniform(0, spec.width), r.uniform(0, spec.height), r.uniform(6, 40), r.uniform(6, 40), a);
  }
  return bg;
}

double quantize(double v) { return std::round(v * 64.0) / 64.0; }

void step_mover(Mover& m, const SequenceSpec& spec, Rng& r, const Mover* attract) {
  m.heading += 0.15 * r.normal();
  if (attract) {
    const double want = std::atan2(attract->cy - m.cy, attract->cx - m.cx);
    double diff = std::remainder(want - m.heading, 2 * kPi);
    m.heading += 0.08 * diff;
  }
  m.cx += m.speed * std::cos(m.heading) + spec.jitter * r.normal();
  m.cy += m.speed * std::sin(m.heading) + spec.jitter * r.normal();
  const double mx = m.w / 2 + 2, my = m.h / 2 + 2;
  if (m.cx < mx || m.cx > spec.width - mx) {
    m.heading = kPi - m.heading;
    m.cx = std::clamp(m.cx, mx, spec.width - mx);
  }
  if (m.cy < my || m.cy > spec.height - my) {
    m.heading = -m.heading;
    m.cy = std::clamp(m.cy, my, spec.height - my);
  }
}

}  // namespace

Appearance make_appearance(uint64_t texture_seed) {
  Rng r(texture_seed ^ 0x7e57u);
  return random_appearance(r);
}

Appearance blend_appearance(const Appearance& random, const Appearance& target, double s) {
  Appearance a;
  for (int k = 0; k < 3; ++k) {
    a.color_a[k] = lerp(random.color_a[k], target.color_a[k], s);
    a.color_b[k] = lerp(random.color_b[k], target.color_b[k], s);
  }
  a.frequency = lerp(random.frequency, target.frequency, s);
  a.orientation = lerp(random.orientation, target.orientation, s);
  a.phase = lerp(random.phase, target.phase, s);
  a.shape = s >= 0.5 ? target.shape : random.shape;
  return a;
}

Sequence gen_sequence(const SequenceSpec& spec) {
  SRN_CHECK(spec.frames > 0 && spec.width > 0 && spec.height > 0, ErrorCode::kInvalidArgument,
            "sequence needs positive frame count and canvas size");
  SRN_CHECK(spec.target_w > 0 && spec.target_h > 0, ErrorCode::kInvalidArgument, "target size must be positive");
  SRN_CHECK(spec.target_w + 4 <= spec.width && spec.target_h + 4 <= spec.height, ErrorCode::kInvalidArgument,
            "target larger than canvas");
  SRN_CHECK(spec.similarity >= 0 && spec.similarity <= 1, ErrorCode::kInvalidArgument,
            "similarity must lie in [0, 1]");
  Rng r(spec.seed);
  const Canvas bg = render_background(spec, r);

  Mover target{r.uniform(spec.target_w, spec.width - spec.target_w),
               r.uniform(spec.target_h, spec.height - spec.target_h),
               spec.target_w,
               spec.target_h,
               r.uniform(0, 2 * kPi),
               spec.speed,
               make_appearance(spec.texture_seed)};
  std::vector<Mover> others;
  for (int i = 0; i < spec.distractors; ++i) {
    const double sw = lerp(spec.target_w * r.uniform(0.6, 1.4), spec.target_w, spec.similarity);
    const double sh = lerp(spec.target_h * r.uniform(0.6, 1.4), spec.target_h, spec.similarity);
    Mover m{r.uniform(sw, spec.width - sw), r.uniform(sh, spec.height - sh), sw, sh, r.uniform(0, 2 * kPi),
            spec.speed * r.uniform(0.5, 1.5), blend_appearance(random_appearance(r), target.look, spec.similarity)};
    others.push_back(m);
  }
  const double illum_phase = r.uniform(0, 2 * kPi);
  const std::array<double, 3> occluder_color{r.uniform(0.3, 0.6), r.uniform(0.3, 0.6), r.uniform(0.3, 0.6)};

  Sequence seq;
  seq.name = spec.name;
  double prev_cx = 0, prev_cy = 0;
  for (int t = 0; t < spec.frames; ++t) {
    if (t > 0) {
      step_mover(target, spec, r, nullptr);
      for (auto& m : others) step_mover(m, spec, r, &target);
    }
    const double w = quantize(target.w), h = quantize(target.h);
    const double x = quantize(target.cx - w / 2), y = quantize(target.cy - h / 2);
    const BBox box = BBox::from_xywh(x, y, w, h);

    Canvas c = bg;
    for (const auto& m : others) draw_blob(c, m.cx, m.cy, m.w, m.h, m.look);
    draw_blob(c, box.cx(), box.cy(), w, h, target.look);

    uint8_t tags = 0;
    for (const auto& ev : spec.occlusions)
      if (t >= ev.start && t < ev.end) {
        tags |= kTagOccluded;
        fill_rect(c, box.cx(), box.cy() + 0.15 * h, 1.2 * w, 0.9 * h, occluder_color);
      }
    if (t > 0 && std::hypot(box.cx() - prev_cx, box.cy() - prev_cy) >= 0.2 * std::min(w, h)) tags |= kTagFastMotion;
    for (const auto& m : others)
      if (std::hypot(m.cx - box.cx(), m.cy - box.cy()) < 1.5 * std::max(w, h)) tags |= kTagNearDistractor;
    prev_cx = box.cx();
    prev_cy = box.cy();

    const double gain = 1.0 + spec.illumination * std::sin(2 * kPi * t / 40.0 + illum_phase);
    Image img(spec.width, spec.height);
    for (size_t i = 0; i < c.rgb.size(); ++i) {
      const double v = c.rgb[i] * gain + 0.01 * r.normal();
      img.pixels[i] = static_cast<uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
    }
    seq.frames.push_back(std::move(img));
    seq.gt.push_back(box);
    seq.tags.push_back(tags);
  }
  return seq;
}

std::vector<SequenceSpec> make_suite(const SuiteSpec& suite) {
  SRN_CHECK(suite.count > 0, ErrorCode::kInvalidArgument, "suite count must be positive");
  Rng r(suite.seed);
  std::vector<SequenceSpec> out;
  char name[64];
  for (int i = 0; i < suite.count; ++i) {
    SequenceSpec s;
    std::snprintf(name, sizeof name, "%s_%03d", suite.prefix.c_str(), i);
    s.name = name;
    s.frames = suite.frames;
    s.width = suite.width;
    s.height = suite.height;
    const double side = r.uniform(suite.min_size, suite.max_size);
    const double aspect = r.uniform(0.75, 1.33);
    s.target_w = side * std::sqrt(aspect);
    s.target_h = side / std::sqrt(aspect);
    s.texture_seed = r.next();
    s.distractors = suite.distractors;
    s.similarity = suite.similarity;
    s.speed = r.uniform(suite.min_speed, suite.max_speed);
    s.illumination = suite.illumination;
    if (r.bernoulli(suite.occlusion_prob) && suite.frames > 30) {
      const int len = r.range(4, 8);
      const int start = r.range(10, suite.frames - len - 5);
      s.occlusions.push_back({start, start + len});
    }
    s.seed = r.next();
    out.push_back(s);
  }
  return out;
}

void to_json(nlohmann::json& j, const SequenceSpec& s) {
  nlohmann::json occ = nlohmann::json::array();
  for (const auto& e : s.occlusions) occ.push_back({e.start, e.end});
  j = {{"name", s.name},
       {"frames", s.frames},
       {"width", s.width},
       {"height", s.height},
       {"target_w", s.target_w},
       {"target_h", s.target_h},
       {"texture_seed", s.texture_seed},
       {"distractors", s.distractors},
       {"similarity", s.similarity},
       {"speed", s.speed},
       {"jitter", s.jitter},
       {"occlusions", occ},
       {"illumination", s.illumination},
       {"seed", s.seed}};
}

void from_json(const nlohmann::json& j, SequenceSpec& s) {
  SequenceSpec d;
  s.name = j.value("name", d.name);
  s.frames = j.value("frames", d.frames);
  s.width = j.value("width", d.width);
  s.height = j.value("height", d.height);
  s.target_w = j.value("target_w", d.target_w);
  s.target_h = j.value("target_h", d.target_h);
  s.texture_seed = j.value("texture_seed", d.texture_seed);
  s.distractors = j.value("distractors", d.distractors);
  s.similarity = j.value("similarity", d.similarity);
  s.speed = j.value("speed", d.speed);
  s.jitter = j.value("jitter", d.jitter);
  s.occlusions.clear();
  if (j.contains("occlusions"))
    for (const auto& e : j.at("occlusions")) s.occlusions.push_back({e.at(0).get<int>(), e.at(1).get<int>()});
  s.illumination = j.value("illumination", d.illumination);
  s.seed = j.value("seed", d.seed);
}

void to_json(nlohmann::json& j, const SuiteSpec& s) {
  j = {{"prefix", s.prefix},
       {"count", s.count},
       {"seed", s.seed},
       {"frames", s.frames},
       {"width", s.width},
       {"height", s.height},
       {"distractors", s.distractors},
       {"similarity", s.similarity},
       {"min_size", s.min_size},
       {"max_size", s.max_size},
       {"min_speed", s.min_speed},
       {"max_speed", s.max_speed},
       {"occlusion_prob", s.occlusion_prob},
       {"illumination", s.illumination}};
}

void from_json(const nlohmann::json& j, SuiteSpec& s) {
  SuiteSpec d;
  s.prefix = j.value("prefix", d.prefix);
  s.count = j.value("count", d.count);
  s.seed = j.value("seed", d.seed);
  s.frames = j.value("frames", d.frames);
  s.width = j.value("width", d.width);
  s.height = j.value("height", d.height);
  s.distractors = j.value("distractors", d.distractors);
  s.similarity = j.value("similarity", d.similarity);
  s.min_size = j.value("min_size", d.min_size);
  s.max_size = j.value("max_size", d.max_size);
  s.min_speed = j.value("min_speed", d.min_speed);
  s.max_speed = j.value("max_speed", d.max_speed);
  s.occlusion_prob = j.value("occlusion_prob", d.occlusion_prob);
  s.illumination = j.value("illumination", d.illumination);
}

std::vector<SequenceSpec> specs_from_json(const nlohmann::json& j) {
  try {
    if (j.contains("suite")) return make_suite(j.at("suite").get<SuiteSpec>());
    if (j.contains("sequences")) return j.at("sequences").get<std::vector<SequenceSpec>>();
    return {j.get<SequenceSpec>()};
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kParse, std::string("bad generator spec: ") + e.what());
  }
}

}  // namespace srn
