#pragma once

// The full network and its checkpoint container.
//
// Checkpoint layout: 8-byte little-endian header length, a JSON header
// (format tag, version, model config, free-form metadata, tensor directory),
// then the raw little-endian float32 tensor data.

#include <filesystem>
#include <map>
#include <memory>

#include "srn/refinement.hpp"

namespace srn {

template <typename T>
class Model {
 public:
  explicit Model(const ModelConfig& cfg);
  Model(const Model&) = delete;
  Model& operator=(const Model&) = delete;

  const ModelConfig& config() const { return cfg_; }
  nn::ParamStore<T>& params() { return store_; }
  const nn::ParamStore<T>& params() const { return store_; }

  const Backbone<T>& backbone() const { return backbone_; }
  const Head<T>& head() const { return head_; }
  const RefineHead<T>& refine() const { return refine_; }
  const RelationDetector<T>& detector(int level) const;
  LevelDetectors<T> detectors() const;

  /// Relation scorer bound to one search pyramid and template; runs without
  /// building a graph.
  ProposalScorer scorer(const FeaturePyramid<T>& x, const TemplateRois<T>& rois) const;

  /// Values by parameter name, cast to float.
  std::map<std::string, Tensor<float>> state() const;
  /// Overwrite parameters; every parameter must be present with its shape.
  void load_state(const std::map<std::string, Tensor<float>>& state);

 private:
  ModelConfig cfg_;
  nn::ParamStore<T> store_;
  Rng rng_;
  Backbone<T> backbone_;
  Head<T> head_;
  std::array<std::unique_ptr<RelationDetector<T>>, kNumLevels> detectors_;
  RefineHead<T> refine_;
};

inline constexpr int kCheckpointVersion = 1;

struct Checkpoint {
  ModelConfig model;
  nlohmann::json meta;  // training config echo, step counters, etc.
  std::map<std::string, Tensor<float>> tensors;
};

void write_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint read_checkpoint(const std::filesystem::path& path);

template <typename T>
void save_model(const std::filesystem::path& path, const Model<T>& model, const nlohmann::json& meta = {});
template <typename T>
std::unique_ptr<Model<T>> load_model(const std::filesystem::path& path, nlohmann::json* meta = nullptr);

}  // namespace srn
