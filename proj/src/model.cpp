#include "srn/model.hpp"

#include <bit>
#include <cstring>
#include <fstream>

namespace srn {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

template <typename T>
Model<T>::Model(const ModelConfig& cfg)
    : cfg_(cfg),
      rng_(cfg.init_seed),
      backbone_(store_, cfg_, rng_),
      head_(store_, cfg_, rng_) {
  for (int l : cfg_.levels.indices())
    detectors_[l] = std::make_unique<RelationDetector<T>>(store_, "rd.L" + std::to_string(l + 3), cfg_, rng_);
  refine_ = RefineHead<T>(store_, cfg_, rng_);
}

template <typename T>
const RelationDetector<T>& Model<T>::detector(int level) const {
  SRN_CHECK(level >= 0 && level < kNumLevels && detectors_[level], ErrorCode::kInvalidArgument,
            "no relation detector for level index " + std::to_string(level));
  return *detectors_[level];
}

template <typename T>
LevelDetectors<T> Model<T>::detectors() const {
  LevelDetectors<T> out{};
  for (int l = 0; l < kNumLevels; ++l) out[l] = detectors_[l].get();
  return out;
}

template <typename T>
ProposalScorer Model<T>::scorer(const FeaturePyramid<T>& x, const TemplateRois<T>& rois) const {
  return [this, &x, &rois](const std::vector<BBox>& boxes) {
    ag::NoGradGuard guard;
    auto b = ag::Var<T>::constant(boxes_to_feature<T>(boxes));
    auto r = score_proposals(detectors(), cfg_.levels, x, rois, b, cfg_.heads);
    std::vector<double> out(boxes.size());
    for (size_t i = 0; i < out.size(); ++i) out[i] = static_cast<double>(r.value()[i]);
    return out;
  };
}

template <typename T>
std::map<std::string, Tensor<float>> Model<T>::state() const {
  std::map<std::string, Tensor<float>> s;
  for (const auto& p : store_.params()) s.emplace(p.name, p.var.value().template cast<float>());
  return s;
}

template <typename T>
void Model<T>::load_state(const std::map<std::string, Tensor<float>>& state) {
  for (auto& p : store_.params()) {
    auto it = state.find(p.name);
    SRN_CHECK(it != state.end(), ErrorCode::kParse, "checkpoint lacks parameter " + p.name);
    SRN_CHECK(it->second.shape() == p.var.shape(), ErrorCode::kShapeMismatch,
              "checkpoint shape for " + p.name + ": " + shape_str(it->second.shape()) + ", model has " +
                  shape_str(p.var.shape()));
    p.var.mutable_value() = it->second.template cast<T>();
  }
}

void write_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  nlohmann::json dir = nlohmann::json::object();
  uint64_t offset = 0;
  for (const auto& [name, t] : ckpt.tensors) {
    const uint64_t bytes = t.size() * sizeof(float);
    dir[name] = {{"dtype", "F32"}, {"shape", t.shape()}, {"offsets", {offset, offset + bytes}}};
    offset += bytes;
  }
  nlohmann::json header = {{"format", "srn-checkpoint"},
                           {"version", kCheckpointVersion},
                           {"model", ckpt.model},
                           {"meta", ckpt.meta.is_null() ? nlohmann::json::object() : ckpt.meta},
                           {"tensors", dir}};
  const std::string text = header.dump();
  const uint64_t len = text.size();

  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  SRN_CHECK(out.good(), ErrorCode::kIo, "cannot write checkpoint " + path.string());
  out.write(reinterpret_cast<const char*>(&len), sizeof len);
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  for (const auto& [name, t] : ckpt.tensors)
    out.write(reinterpret_cast<const char*>(t.data()), static_cast<std::streamsize>(t.size() * sizeof(float)));
  SRN_CHECK(out.good(), ErrorCode::kIo, "short write to " + path.string());
}

Checkpoint read_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  SRN_CHECK(in.good(), ErrorCode::kIo, "cannot open checkpoint " + path.string());
  const auto file_size = std::filesystem::file_size(path);
  uint64_t len = 0;
  in.read(reinterpret_cast<char*>(&len), sizeof len);
  SRN_CHECK(in.good() && len > 0 && len <= file_size - sizeof len, ErrorCode::kParse,
            "bad checkpoint header length in " + path.string());
  std::string text(len, '\0');
  in.read(text.data(), static_cast<std::streamsize>(len));
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kParse, "checkpoint header is not JSON: " + std::string(e.what()));
  }
  SRN_CHECK(header.value("format", "") == "srn-checkpoint", ErrorCode::kParse, "not a checkpoint file");
  const int version = header.value("version", 0);
  SRN_CHECK(version == kCheckpointVersion, ErrorCode::kParse,
            "unsupported checkpoint version " + std::to_string(version));

  Checkpoint ckpt;
  ckpt.model = header.at("model").get<ModelConfig>();
  ckpt.meta = header.value("meta", nlohmann::json::object());
  const uint64_t data_start = sizeof len + len;
  const uint64_t data_size = file_size - data_start;
  for (const auto& [name, entry] : header.at("tensors").items()) {
    SRN_CHECK(entry.value("dtype", "") == "F32", ErrorCode::kParse, "unsupported dtype for " + name);
    const Shape shape = entry.at("shape").get<Shape>();
    const auto offs = entry.at("offsets").get<std::vector<uint64_t>>();
    SRN_CHECK(offs.size() == 2 && offs[0] <= offs[1] && offs[1] <= data_size &&
                  offs[1] - offs[0] == shape_numel(shape) * sizeof(float),
              ErrorCode::kParse, "bad tensor extent for " + name);
    Tensor<float> t(shape);
    in.seekg(static_cast<std::streamoff>(data_start + offs[0]));
    in.read(reinterpret_cast<char*>(t.data()), static_cast<std::streamsize>(offs[1] - offs[0]));
    SRN_CHECK(in.good(), ErrorCode::kIo, "truncated checkpoint " + path.string());
    ckpt.tensors.emplace(name, std::move(t));
  }
  return ckpt;
}

template <typename T>
void save_model(const std::filesystem::path& path, const Model<T>& model, const nlohmann::json& meta) {
  write_checkpoint(path, {model.config(), meta, model.state()});
}

template <typename T>
std::unique_ptr<Model<T>> load_model(const std::filesystem::path& path, nlohmann::json* meta) {
  Checkpoint ckpt = read_checkpoint(path);
  auto model = std::make_unique<Model<T>>(ckpt.model);
  model->load_state(ckpt.tensors);
  if (meta) *meta = std::move(ckpt.meta);
  return model;
}

template class Model<float>;
template class Model<double>;
template void save_model(const std::filesystem::path&, const Model<float>&, const nlohmann::json&);
template void save_model(const std::filesystem::path&, const Model<double>&, const nlohmann::json&);
template std::unique_ptr<Model<float>> load_model(const std::filesystem::path&, nlohmann::json*);
template std::unique_ptr<Model<double>> load_model(const std::filesystem::path&, nlohmann::json*);

}  // namespace srn
