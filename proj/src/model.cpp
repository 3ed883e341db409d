#include "chansr/model.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <random>

#include <json.hpp>

namespace chansr {

namespace {

bool is_power_of_two(int v) { return v >= 1 && (v & (v - 1)) == 0; }

int log2_int(int v) {
  int s = 0;
  while ((1 << s) < v) ++s;
  return s;
}

}  // namespace

void ModelConfig::validate() const {
  if (in_channels < 1)
    throw std::invalid_argument("ModelConfig.in_channels must be >= 1");
  if (width < 1) throw std::invalid_argument("ModelConfig.width must be >= 1");
  if (block_repeats < 1)
    throw std::invalid_argument("ModelConfig.block_repeats must be >= 1");
  if (shallow_convs_per_block < 1)
    throw std::invalid_argument("ModelConfig.shallow_convs_per_block must be >= 1");
  if (deep_convs_per_block != shallow_convs_per_block + 2)
    throw std::invalid_argument(
        "ModelConfig.deep_convs_per_block must equal shallow_convs_per_block + 2");
  if (attention_kernels.empty())
    throw std::invalid_argument("ModelConfig.attention_kernels must be non-empty");
  for (int k : attention_kernels)
    if (k % 2 == 0 || k < 1 || k > 7)
      throw std::invalid_argument(
          "ModelConfig.attention_kernels entries must be odd in {1,3,5,7}");
  if (attention_reduction < 1 || width % attention_reduction != 0)
    throw std::invalid_argument(
        "ModelConfig.attention_reduction must divide width");
  if (scale < 2 || !is_power_of_two(scale))
    throw std::invalid_argument("ModelConfig.scale must be a power of two >= 2");
}

std::string ModelConfig::to_json() const {
  nlohmann::json j;
  j["in_channels"] = in_channels;
  j["width"] = width;
  j["block_repeats"] = block_repeats;
  j["shallow_convs_per_block"] = shallow_convs_per_block;
  j["deep_convs_per_block"] = deep_convs_per_block;
  j["attention_kernels"] = attention_kernels;
  j["attention_reduction"] = attention_reduction;
  j["scale"] = scale;
  j["back_projection"] = back_projection;
  j["use_residual"] = use_residual;
  j["use_attention"] = use_attention;
  j["init_seed"] = init_seed;
  return j.dump();
}

ModelConfig ModelConfig::from_json(const std::string& json) {
  nlohmann::json j = nlohmann::json::parse(json);
  ModelConfig c;
  c.in_channels = j.value("in_channels", c.in_channels);
  c.width = j.value("width", c.width);
  c.block_repeats = j.value("block_repeats", c.block_repeats);
  c.shallow_convs_per_block =
      j.value("shallow_convs_per_block", c.shallow_convs_per_block);
  c.deep_convs_per_block = j.value("deep_convs_per_block", c.deep_convs_per_block);
  c.attention_kernels =
      j.value("attention_kernels", c.attention_kernels);
  c.attention_reduction = j.value("attention_reduction", c.attention_reduction);
  c.scale = j.value("scale", c.scale);
  c.back_projection = j.value("back_projection", c.back_projection);
  c.use_residual = j.value("use_residual", c.use_residual);
  c.use_attention = j.value("use_attention", c.use_attention);
  c.init_seed = j.value("init_seed", c.init_seed);
  return c;
}

Tensor& Model::param(const std::string& name) {
  auto it = index_.find(name);
  if (it == index_.end())
    throw std::invalid_argument("Model: unknown parameter " + name);
  return params_[it->second].second;
}

const Tensor& Model::param(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end())
    throw std::invalid_argument("Model: unknown parameter " + name);
  return params_[it->second].second;
}

bool Model::has_param(const std::string& name) const {
  return index_.count(name) != 0;
}

int64_t Model::parameter_count() const {
  int64_t n = 0;
  for (const auto& [name, t] : params_) n += t.size();
  return n;
}

void Model::add_param(const std::string& name, Tensor t) {
  if (!index_.emplace(name, params_.size()).second)
    throw std::invalid_argument("Model: duplicate parameter " + name);
  params_.emplace_back(name, std::move(t));
}

namespace {

struct Builder {
  Model& model;
  std::mt19937_64 rng;

  Tensor he_uniform(Shape shape, int fan_in, double gain = 1.0) {
    const double limit = gain * std::sqrt(6.0 / fan_in);
    std::uniform_real_distribution<double> dist(-limit, limit);
    std::vector<double> data(static_cast<size_t>(shape_size(shape)));
    for (double& v : data) v = dist(rng);
    return Tensor::from_data(std::move(shape), std::move(data), true);
  }

  void conv(const std::string& name, int cin, int cout, int k,
            double gain = 1.0) {
    model.add_param(name + ".weight",
                    he_uniform({cout, cin, k, k}, cin * k * k, gain));
    model.add_param(name + ".bias", Tensor::zeros({cout}, true));
  }

  void fc(const std::string& name, int din, int dout) {
    model.add_param(name + ".weight", he_uniform({dout, din}, din));
    model.add_param(name + ".bias", Tensor::zeros({dout}, true));
  }
};

Tensor conv_p(const Model& m, const std::string& name, const Tensor& x) {
  return ops::conv2d(x, m.param(name + ".weight"), m.param(name + ".bias"));
}

Tensor fc_p(const Model& m, const std::string& name, const Tensor& x) {
  return ops::fully_connected(x, m.param(name + ".weight"),
                              m.param(name + ".bias"));
}

}  // namespace

std::string head_prefix(Characteristic c) {
  return std::string("head.") + characteristic_name(c) + ".";
}

Model build_model(const ModelConfig& config) {
  config.validate();
  Model model;
  model.config = config;
  Builder b{model, std::mt19937_64(config.init_seed)};

  const int C = config.width;
  b.conv("stem", config.in_channels, C, 3);
  for (int i = 0; i < config.block_repeats; ++i)
    for (int j = 0; j < config.deep_convs_per_block; ++j)
      b.conv("deep.block" + std::to_string(i) + ".conv" + std::to_string(j), C, C, 3);
  for (int j = 0; j < config.shallow_convs_per_block; ++j)
    b.conv("shallow.block0.conv" + std::to_string(j), C, C, 3);
  b.conv("fuse", 2 * C, C, 1);

  if (config.use_attention) {
    for (int k : config.attention_kernels)
      b.conv("attn.branch" + std::to_string(k), C, C, k);
    const int red = C / config.attention_reduction;
    b.fc("attn.reduce", C, red);
    for (size_t i = 0; i < config.attention_kernels.size(); ++i)
      b.fc("attn.expand" + std::to_string(i), red, C);
  }

  const int stages = log2_int(config.scale);
  for (int s = 0; s < stages; ++s) {
    const std::string stage = "up.stage" + std::to_string(s);
    b.conv(stage + ".conv", C, C, 3);
    if (config.back_projection) {
      b.conv(stage + ".down", C, C, 3);
      // The correction path is additive on top of an already-trained-looking
      // upsample path; start it near identity (small weights) so refinement
      // is learned instead of injecting full-scale noise at initialization.
      b.conv(stage + ".corr", C, C, 3, 0.01);
    }
  }

  for (Characteristic t : kTargets) {
    const std::string h = "head." + std::string(characteristic_name(t));
    const int out = t == Characteristic::LOS ? 2 : 1;
    b.conv(h + ".conv0", C, C, 3);
    b.conv(h + ".conv1", C, out, 3);
  }
  return model;
}

Tensor forward_backbone(const Model& model, const Tensor& input) {
  const ModelConfig& cfg = model.config;
  if (input.shape().size() != 4 || input.shape()[1] != cfg.in_channels)
    throw std::invalid_argument("forward_backbone: expected " +
                                std::to_string(cfg.in_channels) +
                                " input channels, got " +
                                shape_str(input.shape()));
  const Tensor stem = conv_p(model, "stem", input);

  Tensor deep = stem;
  for (int i = 0; i < cfg.block_repeats; ++i) {
    Tensor y = deep;
    for (int j = 0; j < cfg.deep_convs_per_block; ++j)
      y = ops::relu(conv_p(model,
                           "deep.block" + std::to_string(i) + ".conv" +
                               std::to_string(j),
                           y));
    deep = cfg.use_residual ? ops::add(y, deep) : y;
  }

  Tensor shallow = stem;
  {
    Tensor y = shallow;
    for (int j = 0; j < cfg.shallow_convs_per_block; ++j)
      y = ops::relu(conv_p(model, "shallow.block0.conv" + std::to_string(j), y));
    shallow = cfg.use_residual ? ops::add(y, shallow) : y;
  }

  Tensor fused = conv_p(model, "fuse", ops::concat_channels(deep, shallow));
  return cfg.use_residual ? ops::add(fused, stem) : fused;
}

namespace {

struct AttentionParts {
  std::vector<Tensor> branches;
  Tensor weights;  // [N,B,C]
};

AttentionParts attention_parts(const Model& model, const Tensor& features) {
  const ModelConfig& cfg = model.config;
  AttentionParts parts;
  for (int k : cfg.attention_kernels)
    parts.branches.push_back(
        conv_p(model, "attn.branch" + std::to_string(k), features));
  Tensor s = parts.branches[0];
  for (size_t i = 1; i < parts.branches.size(); ++i)
    s = ops::add(s, parts.branches[i]);
  const Tensor pooled = ops::global_avg_pool(s);
  const Tensor reduced = ops::relu(fc_p(model, "attn.reduce", pooled));
  std::vector<Tensor> logits;
  for (size_t i = 0; i < parts.branches.size(); ++i)
    logits.push_back(fc_p(model, "attn.expand" + std::to_string(i), reduced));
  parts.weights = ops::branch_softmax(ops::stack_rows(logits));
  return parts;
}

}  // namespace

Tensor forward_attention(const Model& model, const Tensor& features) {
  if (!model.config.use_attention) return features;
  AttentionParts parts = attention_parts(model, features);
  return ops::branch_weighted_sum(parts.branches, parts.weights);
}

Tensor attention_weights(const Model& model, const Tensor& features) {
  if (!model.config.use_attention)
    throw std::invalid_argument("attention_weights: attention disabled");
  return attention_parts(model, features).weights;
}

Tensor upscale(const Model& model, const Tensor& features) {
  const ModelConfig& cfg = model.config;
  Tensor x = features;
  const int stages = log2_int(cfg.scale);
  for (int s = 0; s < stages; ++s) {
    const std::string stage = "up.stage" + std::to_string(s);
    const Tensor prev = x;
    x = ops::relu(conv_p(model, stage + ".conv", ops::upsample_nearest(x, 2)));
    if (cfg.back_projection) {
      const Tensor down = conv_p(model, stage + ".down", ops::block_mean_pool(x, 2));
      const Tensor err = ops::sub(prev, down);
      x = ops::add(x, conv_p(model, stage + ".corr", ops::upsample_nearest(err, 2)));
    }
  }
  return x;
}

Tensor& Prediction::regression(Characteristic c) {
  switch (c) {
    case Characteristic::PL: return pl;
    case Characteristic::RP: return rp;
    case Characteristic::DS: return ds;
    case Characteristic::PHI: return phi;
    case Characteristic::THETA: return theta;
    default:
      throw std::invalid_argument("Prediction::regression: LOS has no regression head");
  }
}

const Tensor& Prediction::regression(Characteristic c) const {
  return const_cast<Prediction*>(this)->regression(c);
}

Prediction forward_heads(const Model& model, const Tensor& upscaled) {
  Prediction pred;
  for (Characteristic t : kTargets) {
    const std::string h = "head." + std::string(characteristic_name(t));
    Tensor y = ops::relu(conv_p(model, h + ".conv0", upscaled));
    y = conv_p(model, h + ".conv1", y);
    if (t == Characteristic::LOS)
      pred.los_logits = y;
    else
      pred.regression(t) = y;
  }
  return pred;
}

Prediction forward(const Model& model, const Tensor& lr_input) {
  return forward_heads(
      model, upscale(model, forward_attention(model, forward_backbone(model, lr_input))));
}

namespace {

constexpr char kCkptMagic[4] = {'C', 'S', 'R', 'M'};
constexpr uint16_t kCkptVersion = 1;

template <typename T>
void wle(std::ofstream& os, T v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T rle(std::ifstream& is, const char* what) {
  T v;
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!is)
    throw CheckpointError(CheckpointErrorKind::Truncated,
                          std::string("checkpoint truncated reading ") + what);
  return v;
}

}  // namespace

void save_checkpoint(const Model& model, const std::string& path) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os)
    throw CheckpointError(CheckpointErrorKind::Io,
                          "cannot open for write: " + path);
  os.write(kCkptMagic, 4);
  wle<uint16_t>(os, kCkptVersion);
  const std::string cfg = model.config.to_json();
  wle<uint32_t>(os, static_cast<uint32_t>(cfg.size()));
  os.write(cfg.data(), static_cast<std::streamsize>(cfg.size()));
  wle<uint32_t>(os, static_cast<uint32_t>(model.parameters().size()));
  for (const auto& [name, t] : model.parameters()) {
    wle<uint16_t>(os, static_cast<uint16_t>(name.size()));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    wle<uint8_t>(os, static_cast<uint8_t>(t.shape().size()));
    for (int d : t.shape()) wle<uint32_t>(os, static_cast<uint32_t>(d));
    os.write(reinterpret_cast<const char*>(t.data()),
             static_cast<std::streamsize>(t.size() * sizeof(double)));
  }
  if (!os)
    throw CheckpointError(CheckpointErrorKind::Io, "write failed: " + path);
}

Model load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is)
    throw CheckpointError(CheckpointErrorKind::Io,
                          "cannot open for read: " + path);
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, kCkptMagic, 4) != 0)
    throw CheckpointError(CheckpointErrorKind::BadMagic,
                          "bad magic in checkpoint: " + path);
  const uint16_t version = rle<uint16_t>(is, "version");
  if (version != kCkptVersion)
    throw CheckpointError(CheckpointErrorKind::BadVersion,
                          "unsupported checkpoint version " +
                              std::to_string(version));
  const uint32_t cfg_len = rle<uint32_t>(is, "config length");
  std::string cfg(cfg_len, '\0');
  is.read(cfg.data(), cfg_len);
  if (!is)
    throw CheckpointError(CheckpointErrorKind::Truncated,
                          "checkpoint truncated reading config");
  Model model = build_model(ModelConfig::from_json(cfg));
  const uint32_t count = rle<uint32_t>(is, "parameter count");
  if (count != model.parameters().size())
    throw CheckpointError(CheckpointErrorKind::ConfigMismatch,
                          "checkpoint parameter count " + std::to_string(count) +
                              " does not match config");
  for (uint32_t i = 0; i < count; ++i) {
    const uint16_t name_len = rle<uint16_t>(is, "parameter name length");
    std::string name(name_len, '\0');
    is.read(name.data(), name_len);
    if (!is)
      throw CheckpointError(CheckpointErrorKind::Truncated,
                            "checkpoint truncated reading parameter name");
    const uint8_t rank = rle<uint8_t>(is, "parameter rank");
    Shape shape(rank);
    for (int d = 0; d < rank; ++d)
      shape[d] = static_cast<int>(rle<uint32_t>(is, "parameter dim"));
    if (!model.has_param(name))
      throw CheckpointError(CheckpointErrorKind::ConfigMismatch,
                            "checkpoint parameter " + name +
                                " not present in rebuilt model");
    Tensor& t = model.param(name);
    if (t.shape() != shape)
      throw CheckpointError(CheckpointErrorKind::ConfigMismatch,
                            "checkpoint parameter " + name + " shape mismatch");
    is.read(reinterpret_cast<char*>(t.data()),
            static_cast<std::streamsize>(t.size() * sizeof(double)));
    if (!is)
      throw CheckpointError(CheckpointErrorKind::Truncated,
                            "checkpoint truncated reading parameter data");
  }
  return model;
}

}  // namespace chansr
