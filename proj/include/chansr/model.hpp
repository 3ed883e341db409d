#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include "chansr/characteristics.hpp"
#include "chansr/ops.hpp"
#include "chansr/tensor.hpp"

namespace chansr {

struct ModelConfig {
  int in_channels = 7;
  int width = 64;
  int block_repeats = 2;  // deep-panel block count
  int shallow_convs_per_block = 2;
  int deep_convs_per_block = 4;
  std::vector<int> attention_kernels = {1, 3, 5, 7};
  int attention_reduction = 4;
  int scale = 2;
  bool back_projection = false;
  bool use_residual = true;
  bool use_attention = true;
  uint64_t init_seed = 0;

  /// Throws std::invalid_argument naming the offending field.
  void validate() const;

  std::string to_json() const;
  static ModelConfig from_json(const std::string& json);
};

/// Named-parameter network. Parameter creation order is fixed by the build,
/// so initialization is bitwise-deterministic per seed.
class Model {
 public:
  ModelConfig config;

  Tensor& param(const std::string& name);
  const Tensor& param(const std::string& name) const;
  bool has_param(const std::string& name) const;
  const std::vector<std::pair<std::string, Tensor>>& parameters() const {
    return params_;
  }
  int64_t parameter_count() const;

  /// Registration used by the builder; rejects duplicate names.
  void add_param(const std::string& name, Tensor t);

 private:
  std::vector<std::pair<std::string, Tensor>> params_;
  std::unordered_map<std::string, size_t> index_;
};

Model build_model(const ModelConfig& config);

/// Stem + deep/shallow panels + fusion: [N,in,H,W] -> [N,width,H,W].
Tensor forward_backbone(const Model& model, const Tensor& input);

/// Multi-kernel attention over backbone features; identity when disabled.
Tensor forward_attention(const Model& model, const Tensor& features);

/// Branch weights [N,B,C] for inspection; requires use_attention.
Tensor attention_weights(const Model& model, const Tensor& features);

/// log2(scale) stages of upsample + conv (+ optional back-projection).
Tensor upscale(const Model& model, const Tensor& features);

struct Prediction {
  // regression heads in kTargets order minus LOS: PL, Rp, DS, phi, theta
  Tensor pl, rp, ds, phi, theta;  // each [N,1,Hs,Ws]
  Tensor los_logits;              // [N,2,Hs,Ws]

  Tensor& regression(Characteristic c);
  const Tensor& regression(Characteristic c) const;
};

Prediction forward_heads(const Model& model, const Tensor& upscaled);

/// Full pipeline: backbone -> attention -> upscale -> heads.
Prediction forward(const Model& model, const Tensor& lr_input);

/// Head parameter prefix for a target, e.g. "head.PL."
std::string head_prefix(Characteristic c);

void save_checkpoint(const Model& model, const std::string& path);
Model load_checkpoint(const std::string& path);

enum class CheckpointErrorKind { BadMagic, BadVersion, Truncated, Io, ConfigMismatch };

class CheckpointError : public std::runtime_error {
 public:
  CheckpointError(CheckpointErrorKind kind, const std::string& what)
      : std::runtime_error(what), kind_(kind) {}
  CheckpointErrorKind kind() const { return kind_; }

 private:
  CheckpointErrorKind kind_;
};

}  // namespace chansr
