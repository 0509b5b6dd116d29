#pragma once

#include "json.hpp"

namespace oneframe {

struct ModelConfig {
  int image_size = 32;
  int patch_size = 8;
  int channels = 3;
  int hidden_dim = 64;
  int proj_dim = 32;
  int vision_layers = 2;
  int text_layers = 2;
  int multimodal_layers = 2;
  int heads = 4;
  int mlp_ratio = 4;
  int vocab_size = 0;
  int max_text_len = 16;
  double mlm_mask_ratio = 0.5;
  double temperature_init = 0.07;
  double temperature_min = 0.01;
  double temperature_max = 1.0;
  double layer_norm_eps = 1e-6;
  double init_std = 0.02;
  int temporal_layers = 2;
  int temporal_train_frames = 4;

  int patches_per_side() const { return image_size / patch_size; }
  int num_patches() const { return patches_per_side() * patches_per_side(); }
  int vision_len() const { return num_patches() + 1; }
  int patch_dim() const { return patch_size * patch_size * channels; }

  // Throws ConfigError naming the first violated invariant.
  void validate() const;
};

void to_json(nlohmann::json& j, const ModelConfig& c);
// Rounds to 10 significant digits so emitted metrics have a fixed precision.
double fixed_precision(double v);
void from_json(const nlohmann::json& j, ModelConfig& c);

}  // namespace oneframe
