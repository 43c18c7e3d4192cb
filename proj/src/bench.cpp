#include "srn/bench.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <sstream>

#include "srn/synth.hpp"

namespace srn {
namespace {

class ModelTracker final : public BoxTracker {
 public:
  ModelTracker(const Model<float>& model, const TrackerOptions& opt) : tracker_(model, opt) {}
  void init(const Image& frame, const BBox& box) override { tracker_.init(frame, box); }
  BBox update(const Image& frame) override { return tracker_.update(frame).box; }

 private:
  Tracker tracker_;
};

void check_sequence(const Sequence& seq) {
  SRN_CHECK(seq.size() > 0, ErrorCode::kEmptyInput, "sequence " + seq.name + " has no frames");
  SRN_CHECK(seq.frames.size() == seq.gt.size(), ErrorCode::kShapeMismatch,
            "sequence " + seq.name + ": " + std::to_string(seq.frames.size()) + " frames vs " +
                std::to_string(seq.gt.size()) + " annotations");
}

nlohmann::json summary_json(const EvalSummary& s) {
  return {{"auc", s.auc}, {"precision20", s.precision20}, {"failures", s.failures}, {"sequences", s.sequences}};
}

TrackerOptions tracker_options_from_json(const nlohmann::json& j) {
  TrackerOptions t;
  t.window_influence = j.value("window_influence", t.window_influence);
  t.size_rate = j.value("size_rate", t.size_rate);
  const std::string mode = j.value("proposals", std::string("topk"));
  SRN_CHECK(mode == "topk" || mode == "all", ErrorCode::kInvalidArgument, "proposals must be topk or all");
  t.proposals.mode = mode == "all" ? ProposalMode::kAll : ProposalMode::kTopK;
  t.proposals.k = j.value("k", t.proposals.k);
  return t;
}

/// Reseed a suite description so training and evaluation draw from the
/// shared data seed; explicit sequence lists are left untouched.
nlohmann::json with_seed(nlohmann::json data, uint64_t seed) {
  if (data.is_object() && data.contains("suite")) data["suite"]["seed"] = seed;
  return data;
}

std::vector<Sequence> generate(const nlohmann::json& description) {
  std::vector<Sequence> out;
  for (const auto& spec : specs_from_json(description)) out.push_back(gen_sequence(spec));
  return out;
}

}  // namespace

TrackerFactory model_tracker_factory(const Model<float>& model, TrackerOptions opt) {
  return [&model, opt] { return std::make_unique<ModelTracker>(model, opt); };
}

std::array<double, kSuccessPoints> success_curve(const std::vector<double>& ious) {
  std::array<double, kSuccessPoints> curve{};
  if (ious.empty()) return curve;
  for (int t = 0; t < kSuccessPoints; ++t) {
    const double threshold = t / 20.0;
    const auto n = std::count_if(ious.begin(), ious.end(), [&](double v) { return v > threshold; });
    curve[t] = static_cast<double>(n) / ious.size();
  }
  return curve;
}

double curve_auc(const std::array<double, kSuccessPoints>& curve) {
  double s = 0.0;
  for (double v : curve) s += v;
  return s / kSuccessPoints;
}

double center_error(const BBox& a, const BBox& b) { return std::hypot(a.cx() - b.cx(), a.cy() - b.cy()); }

double precision_at(const std::vector<double>& errors, double radius) {
  if (errors.empty()) return 0.0;
  const auto n = std::count_if(errors.begin(), errors.end(), [&](double e) { return e <= radius; });
  return static_cast<double>(n) / errors.size();
}

SequenceResult score_boxes(const std::string& name, const std::vector<BBox>& boxes, const std::vector<BBox>& gt) {
  SRN_CHECK(boxes.size() == gt.size(), ErrorCode::kShapeMismatch,
            name + ": " + std::to_string(boxes.size()) + " boxes vs " + std::to_string(gt.size()) + " annotations");
  SequenceResult r;
  r.name = name;
  r.boxes = boxes;
  for (size_t i = 1; i < boxes.size(); ++i) {
    r.iou.push_back(iou(boxes[i], gt[i]));
    r.center_error.push_back(center_error(boxes[i], gt[i]));
  }
  r.success = success_curve(r.iou);
  r.auc = curve_auc(r.success);
  r.precision20 = precision_at(r.center_error);
  return r;
}

SequenceResult run_ope_sequence(const TrackerFactory& factory, const Sequence& seq) {
  check_sequence(seq);
  auto tracker = factory();
  std::vector<BBox> boxes{seq.gt[0]};
  tracker->init(seq.frames[0], seq.gt[0]);
  for (int f = 1; f < seq.size(); ++f) boxes.push_back(tracker->update(seq.frames[f]));
  return score_boxes(seq.name, boxes, seq.gt);
}

SequenceResult run_restart_sequence(const TrackerFactory& factory, const Sequence& seq, const RestartOptions& opt) {
  check_sequence(seq);
  SRN_CHECK(opt.failure_frames > 0 && opt.reinit_delay > 0, ErrorCode::kInvalidArgument, "restart constants must be positive");
  auto tracker = factory();
  std::vector<BBox> boxes(seq.size());
  std::vector<int> failures;
  int f = 0;
  while (f < seq.size()) {
    tracker->init(seq.frames[f], seq.gt[f]);
    boxes[f] = seq.gt[f];
    int zero_run = 0;
    int next = seq.size();
    for (int g = f + 1; g < seq.size(); ++g) {
      boxes[g] = tracker->update(seq.frames[g]);
      zero_run = iou(boxes[g], seq.gt[g]) > 0.0 ? 0 : zero_run + 1;
      if (zero_run == opt.failure_frames) {
        failures.push_back(g);
        // Frames until re-init keep the last prediction.
        for (int h = g + 1; h < std::min(g + opt.reinit_delay, seq.size()); ++h) boxes[h] = boxes[g];
        next = g + opt.reinit_delay;
        break;
      }
    }
    f = next;
  }
  auto r = score_boxes(seq.name, boxes, seq.gt);
  r.failures = static_cast<int>(failures.size());
  r.failure_frames = std::move(failures);
  return r;
}

EvalSummary summarize(const std::vector<SequenceResult>& results) {
  EvalSummary s;
  s.sequences = static_cast<int>(results.size());
  for (const auto& r : results) {
    s.auc += r.auc;
    s.precision20 += r.precision20;
    s.failures += r.failures;
  }
  if (s.sequences > 0) {
    s.auc /= s.sequences;
    s.precision20 /= s.sequences;
  }
  return s;
}

EvalReport run_ope(const TrackerFactory& factory, const std::vector<Sequence>& data) {
  EvalReport rep;
  rep.protocol = "ope";
  for (const auto& seq : data) rep.per_sequence.push_back(run_ope_sequence(factory, seq));
  rep.summary = summarize(rep.per_sequence);
  return rep;
}

EvalReport run_restart(const TrackerFactory& factory, const std::vector<Sequence>& data, const RestartOptions& opt) {
  EvalReport rep;
  rep.protocol = "restart";
  for (const auto& seq : data) rep.per_sequence.push_back(run_restart_sequence(factory, seq, opt));
  rep.summary = summarize(rep.per_sequence);
  return rep;
}

nlohmann::json report_json(const EvalReport& report) {
  nlohmann::json seqs = nlohmann::json::array();
  for (const auto& r : report.per_sequence) {
    nlohmann::json boxes = nlohmann::json::array();
    for (const auto& b : r.boxes) boxes.push_back({b.x0, b.y0, b.width(), b.height()});
    seqs.push_back({{"name", r.name},
                    {"auc", r.auc},
                    {"precision20", r.precision20},
                    {"failures", r.failures},
                    {"failure_frames", r.failure_frames},
                    {"success", r.success},
                    {"iou", r.iou},
                    {"boxes", boxes}});
  }
  return {{"protocol", report.protocol}, {"per_sequence", seqs}, {"summary", summary_json(report.summary)}};
}

// ---- ablation ------------------------------------------------------------

double median(std::vector<double> v) {
  if (v.empty()) return 0.0;
  std::sort(v.begin(), v.end());
  const size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

AblationMatrix ablation_from_json(const nlohmann::json& j) {
  AblationMatrix m;
  if (j.contains("base")) m.base = j.at("base").get<TrainConfig>();
  if (j.contains("seeds")) m.seeds = j.at("seeds").get<std::vector<uint64_t>>();
  m.data_seed = j.value("data_seed", m.data_seed);
  SRN_CHECK(j.contains("train_data") && j.contains("eval_data"), ErrorCode::kInvalidArgument,
            "matrix needs train_data and eval_data");
  m.train_data = j.at("train_data");
  m.eval_data = j.at("eval_data");
  if (j.contains("tracker")) m.tracker = tracker_options_from_json(j.at("tracker"));
  if (j.contains("restart")) {
    m.restart.failure_frames = j.at("restart").value("failure_frames", m.restart.failure_frames);
    m.restart.reinit_delay = j.at("restart").value("reinit_delay", m.restart.reinit_delay);
  }
  for (const auto& v : j.value("variants", nlohmann::json::array())) {
    AblationVariant var;
    var.name = v.at("name").get<std::string>();
    var.train_overrides = v.value("train", nlohmann::json::object());
    var.ablate_no_rd = v.value("ablate_no_rd", false);
    var.reuse = v.value("reuse", std::string());
    m.variants.push_back(std::move(var));
  }
  const std::string sweep = j.value("sweep", std::string());
  if (sweep == "heads") {
    for (const auto& h : HeadSet::all_subsets())
      m.variants.push_back({"heads=" + h.str(), {{"model", {{"heads", h.str()}}}}, false, {}});
  } else if (sweep == "levels") {
    for (int mask = 1; mask < (1 << kNumLevels); ++mask) {
      LevelSet l{{(mask & 1) != 0, (mask & 2) != 0, (mask & 4) != 0}};
      m.variants.push_back({"levels=" + l.str(), {{"model", {{"levels", l.str()}}}}, false, {}});
    }
  } else {
    SRN_CHECK(sweep.empty(), ErrorCode::kInvalidArgument, "unknown sweep '" + sweep + "'");
  }
  SRN_CHECK(!m.variants.empty(), ErrorCode::kInvalidArgument, "matrix has no variants");
  SRN_CHECK(!m.seeds.empty(), ErrorCode::kInvalidArgument, "matrix has no seeds");
  for (const auto& v : m.variants) {
    if (v.reuse.empty()) continue;
    const bool found = std::any_of(m.variants.begin(), m.variants.end(),
                                   [&](const AblationVariant& o) { return o.name == v.reuse && o.reuse.empty(); });
    SRN_CHECK(found, ErrorCode::kInvalidArgument, "variant " + v.name + " reuses unknown or non-trained '" + v.reuse + "'");
  }
  return m;
}

AblationData ablation_data(const AblationMatrix& m) {
  AblationData d;
  d.train = generate(with_seed(m.train_data, m.data_seed));
  d.eval = generate(with_seed(m.eval_data, m.data_seed + 1));
  return d;
}

std::vector<AblationRow> run_ablation(const AblationMatrix& m, const AblationData& data, const AblationLog& log) {
  const auto say = [&](const std::string& s) {
    if (log) log(s);
  };
  std::vector<AblationRow> rows(m.variants.size());
  for (size_t v = 0; v < m.variants.size(); ++v) {
    rows[v].variant = m.variants[v].name;
    rows[v].data_seed = m.data_seed;
    rows[v].seeds = m.seeds;
  }
  for (uint64_t seed : m.seeds) {
    // Trained models for this seed, by variant name.
    std::map<std::string, std::unique_ptr<Model<float>>> models;
    for (const auto& var : m.variants) {
      if (!var.reuse.empty()) continue;
      nlohmann::json cfg_json = m.base;
      cfg_json.merge_patch(var.train_overrides);
      TrainConfig cfg = cfg_json.get<TrainConfig>();
      cfg.seed = seed;
      cfg.model.init_seed = seed;
      say("train " + var.name + " seed " + std::to_string(seed) + " data_seed " + std::to_string(m.data_seed));
      Trainer trainer(cfg, data.train);
      trainer.run();
      auto model = std::make_unique<Model<float>>(cfg.model);
      model->load_state(trainer.model().state());
      models[var.name] = std::move(model);
    }
    for (size_t v = 0; v < m.variants.size(); ++v) {
      const auto& var = m.variants[v];
      const Model<float>& model = *models.at(var.reuse.empty() ? var.name : var.reuse);
      TrackerOptions topt = m.tracker;
      topt.ablate_no_rd = var.ablate_no_rd;
      const auto factory = model_tracker_factory(model, topt);
      const auto ope = run_ope(factory, data.eval);
      const auto restart = run_restart(factory, data.eval, m.restart);
      rows[v].ope.push_back(ope.summary);
      rows[v].restart.push_back(restart.summary);
      std::ostringstream msg;
      msg << "eval " << var.name << " seed " << seed << " auc " << ope.summary.auc << " precision20 "
          << ope.summary.precision20 << " failures " << restart.summary.failures;
      say(msg.str());
    }
  }
  for (auto& row : rows) {
    std::vector<double> auc, prec, fail;
    for (const auto& s : row.ope) {
      auc.push_back(s.auc);
      prec.push_back(s.precision20);
    }
    for (const auto& s : row.restart) fail.push_back(s.failures);
    row.auc = median(auc);
    row.precision20 = median(prec);
    row.failures = median(fail);
  }
  return rows;
}

std::string ablation_csv(const std::vector<AblationRow>& rows) {
  std::ostringstream out;
  out << "variant,data_seed,seeds,auc,precision20,failures,auc_per_seed,failures_per_seed\n";
  const auto join = [](const auto& values, auto get) {
    std::ostringstream s;
    for (size_t i = 0; i < values.size(); ++i) s << (i ? ";" : "") << get(values[i]);
    return s.str();
  };
  for (const auto& r : rows) {
    out << r.variant << ',' << r.data_seed << ',' << join(r.seeds, [](uint64_t s) { return s; }) << ',' << r.auc
        << ',' << r.precision20 << ',' << r.failures << ','
        << join(r.ope, [](const EvalSummary& s) { return s.auc; }) << ','
        << join(r.restart, [](const EvalSummary& s) { return s.failures; }) << '\n';
  }
  return out.str();
}

}  // namespace srn
