#include "oneframe/config.hpp"

#include <cmath>
#include <cstdio>
#include <cstdlib>

#include "oneframe/error.hpp"

namespace oneframe {

void ModelConfig::validate() const {
  auto positive = [](int v, const char* name) {
    if (v <= 0) throw ConfigError(std::string(name) + " must be positive");
  };
  positive(image_size, "image_size");
  positive(patch_size, "patch_size");
  positive(channels, "channels");
  positive(hidden_dim, "hidden_dim");
  positive(proj_dim, "proj_dim");
  positive(heads, "heads");
  positive(mlp_ratio, "mlp_ratio");
  positive(max_text_len, "max_text_len");
  positive(temporal_train_frames, "temporal_train_frames");
  if (vision_layers < 0 || text_layers < 0 || multimodal_layers < 1 || temporal_layers < 0) {
    throw ConfigError("layer counts must be non-negative (multimodal_layers >= 1)");
  }
  if (image_size % patch_size != 0) throw ConfigError("image_size must be divisible by patch_size");
  if (hidden_dim % heads != 0) throw ConfigError("hidden_dim must be divisible by heads");
  if (!(mlm_mask_ratio > 0.0 && mlm_mask_ratio < 1.0)) throw ConfigError("mlm_mask_ratio must lie in (0, 1)");
  if (!(temperature_init > 0.0)) throw ConfigError("temperature_init must be positive");
  if (!(temperature_min > 0.0 && temperature_min <= temperature_max)) throw ConfigError("bad temperature clamp range");
  if (max_text_len < 2) throw ConfigError("max_text_len must hold [CLS] and [SEP]");
  if (vocab_size < 5) throw ConfigError("vocab_size must cover the reserved tokens");
}

double fixed_precision(double v) {
  if (!std::isfinite(v)) return v;
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.10g", v);
  return std::strtod(buf, nullptr);
}

void to_json(nlohmann::json& j, const ModelConfig& c) {
  j = nlohmann::json{{"image_size", c.image_size},
                     {"patch_size", c.patch_size},
                     {"channels", c.channels},
                     {"hidden_dim", c.hidden_dim},
                     {"proj_dim", c.proj_dim},
                     {"vision_layers", c.vision_layers},
                     {"text_layers", c.text_layers},
                     {"multimodal_layers", c.multimodal_layers},
                     {"heads", c.heads},
                     {"mlp_ratio", c.mlp_ratio},
                     {"vocab_size", c.vocab_size},
                     {"max_text_len", c.max_text_len},
                     {"mlm_mask_ratio", c.mlm_mask_ratio},
                     {"temperature_init", c.temperature_init},
                     {"temperature_min", c.temperature_min},
                     {"temperature_max", c.temperature_max},
                     {"layer_norm_eps", c.layer_norm_eps},
                     {"init_std", c.init_std},
                     {"temporal_layers", c.temporal_layers},
                     {"temporal_train_frames", c.temporal_train_frames}};
}

void from_json(const nlohmann::json& j, ModelConfig& c) {
  ModelConfig d;
  c.image_size = j.value("image_size", d.image_size);
  c.patch_size = j.value("patch_size", d.patch_size);
  c.channels = j.value("channels", d.channels);
  c.hidden_dim = j.value("hidden_dim", d.hidden_dim);
  c.proj_dim = j.value("proj_dim", d.proj_dim);
  c.vision_layers = j.value("vision_layers", d.vision_layers);
  c.text_layers = j.value("text_layers", d.text_layers);
  c.multimodal_layers = j.value("multimodal_layers", d.multimodal_layers);
  c.heads = j.value("heads", d.heads);
  c.mlp_ratio = j.value("mlp_ratio", d.mlp_ratio);
  c.vocab_size = j.value("vocab_size", d.vocab_size);
  c.max_text_len = j.value("max_text_len", d.max_text_len);
  c.mlm_mask_ratio = j.value("mlm_mask_ratio", d.mlm_mask_ratio);
  c.temperature_init = j.value("temperature_init", d.temperature_init);
  c.temperature_min = j.value("temperature_min", d.temperature_min);
  c.temperature_max = j.value("temperature_max", d.temperature_max);
  c.layer_norm_eps = j.value("layer_norm_eps", d.layer_norm_eps);
  c.init_std = j.value("init_std", d.init_std);
  c.temporal_layers = j.value("temporal_layers", d.temporal_layers);
  c.temporal_train_frames = j.value("temporal_train_frames", d.temporal_train_frames);
}

}  // namespace oneframe
