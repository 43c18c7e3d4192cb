#include <cstdio>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>

#include "srn/bench.hpp"
#include "srn/synth.hpp"

namespace fs = std::filesystem;
using namespace srn;

namespace {

nlohmann::json read_json(const fs::path& path) {
  std::ifstream in(path);
  SRN_CHECK(in.good(), ErrorCode::kIo, "cannot open " + path.string());
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kParse, path.string() + ": " + e.what());
  }
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path);
  SRN_CHECK(out.good(), ErrorCode::kIo, "cannot write " + path.string());
  out << text;
}

TrackerOptions tracker_options(double window, double size_rate, const std::string& proposals, int k,
                               bool no_rd) {
  TrackerOptions t;
  t.window_influence = window;
  t.size_rate = size_rate;
  SRN_CHECK(proposals == "topk" || proposals == "all", ErrorCode::kInvalidArgument,
            "--proposals must be topk or all");
  t.proposals = {proposals == "all" ? ProposalMode::kAll : ProposalMode::kTopK, k};
  t.ablate_no_rd = no_rd;
  return t;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Relation-refined single-object tracker"};
  app.require_subcommand(1);

  fs::path config_path, data_dir, out_path, ckpt, seq_dir, spec_path, report_path, matrix_path;
  bool verbose = false, dump = false, no_rd = false;
  std::string protocol = "ope", proposals = "topk";
  double window = 0.4, size_rate = 0.3;
  int k = 64;
  const auto add_tracker_flags = [&](CLI::App* c) {
    c->add_option("--window", window, "cosine window exponent")->capture_default_str();
    c->add_option("--size-rate", size_rate, "size smoothing rate")->capture_default_str();
    c->add_option("--proposals", proposals, "matching map mode: topk or all")->capture_default_str();
    c->add_option("--k", k, "locations scored in topk mode")->capture_default_str();
    c->add_flag("--ablate-no-rd", no_rd, "fix the matching map to 1");
  };

  auto* train = app.add_subcommand("train", "train a model on a sequence directory");
  train->add_option("--config", config_path, "training config JSON")->required();
  train->add_option("--data", data_dir, "dataset root")->required();
  train->add_option("--out", out_path, "checkpoint path; metrics.jsonl goes beside it")->required();
  train->add_flag("-v,--verbose", verbose);

  auto* track = app.add_subcommand("track", "track one sequence and write results.txt");
  track->add_option("--ckpt", ckpt, "checkpoint")->required();
  track->add_option("--seq", seq_dir, "sequence directory")->required();
  track->add_option("--out", out_path, "output directory (default: current)");
  track->add_flag("--dump-confidence", dump, "write per-frame matching and confidence maps");
  add_tracker_flags(track);

  auto* gen = app.add_subcommand("gen-data", "generate synthetic sequences");
  gen->add_option("--spec", spec_path, "generator JSON")->required();
  gen->add_option("--out", out_path, "output root")->required();

  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint on a dataset");
  eval->add_option("--ckpt", ckpt, "checkpoint")->required();
  eval->add_option("--data", data_dir, "dataset root")->required();
  eval->add_option("--protocol", protocol, "ope or restart")->capture_default_str();
  eval->add_option("--report", report_path, "report JSON")->required();
  add_tracker_flags(eval);

  auto* ablate = app.add_subcommand("ablate", "train and evaluate a variant matrix");
  ablate->add_option("--matrix", matrix_path, "matrix JSON")->required();
  ablate->add_option("--out", out_path, "table CSV")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (*train) {
      TrainConfig cfg = load_train_config(config_path);
      const auto data = load_dataset(data_dir);
      const fs::path dir = out_path.has_parent_path() ? out_path.parent_path() : fs::current_path();
      fs::create_directories(dir);
      const fs::path metrics = dir / "metrics.jsonl";
      fs::remove(metrics);
      Trainer trainer(cfg, data);
      trainer.run({metrics, fs::path(out_path).replace_extension(".nan-snapshot.ckpt"), verbose});
      save_model(out_path, trainer.model(), trainer.checkpoint_meta());
      std::cout << "wrote " << out_path.string() << "\n";
    } else if (*track) {
      const auto model = load_model<float>(ckpt);
      const Sequence seq = load_sequence(seq_dir);
      SRN_CHECK(seq.size() > 0, ErrorCode::kEmptyInput, "sequence has no frames");
      const fs::path out = out_path.empty() ? fs::current_path() : out_path;
      TrackerOptions topt = tracker_options(window, size_rate, proposals, k, no_rd);
      if (dump) topt.dump_dir = out / "confidence" / seq_dir.filename();
      write_text(out / "results.txt", results_text(track_sequence(*model, seq, topt)));
      std::cout << "wrote " << (out / "results.txt").string() << "\n";
    } else if (*gen) {
      const auto specs = specs_from_json(read_json(spec_path));
      for (const auto& spec : specs) write_sequence(out_path / spec.name, gen_sequence(spec));
      std::cout << "wrote " << specs.size() << " sequences to " << out_path.string() << "\n";
    } else if (*eval) {
      SRN_CHECK(protocol == "ope" || protocol == "restart", ErrorCode::kInvalidArgument,
                "--protocol must be ope or restart");
      const auto model = load_model<float>(ckpt);
      const auto data = load_dataset(data_dir);
      const auto factory = model_tracker_factory(*model, tracker_options(window, size_rate, proposals, k, no_rd));
      const auto report = protocol == "ope" ? run_ope(factory, data) : run_restart(factory, data);
      write_text(report_path, report_json(report).dump(2) + "\n");
      std::cout << "auc " << report.summary.auc << " precision20 " << report.summary.precision20 << " failures "
                << report.summary.failures << "\n";
    } else if (*ablate) {
      const auto matrix = ablation_from_json(read_json(matrix_path));
      const auto data = ablation_data(matrix);
      const auto rows = run_ablation(matrix, data, [](const std::string& s) { std::cerr << s << "\n"; });
      write_text(out_path, ablation_csv(rows));
      std::cout << ablation_csv(rows);
    }
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
