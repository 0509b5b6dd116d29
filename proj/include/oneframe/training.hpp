#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "oneframe/data.hpp"
#include "oneframe/model.hpp"
#include "oneframe/tokenizer.hpp"

namespace oneframe {

struct ScheduleConfig {
  double peak_lr = 1e-4;
  double min_lr = 1e-6;
  int warmup_steps = 0;
  int total_steps = 1;
  double weight_decay = 0.02;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  // Global gradient-norm clip; <= 0 disables clipping.
  double clip_norm = 1.0;

  void validate() const;
};

// Linear warmup from 0 to peak, then cosine decay to min_lr. Steps past the
// end return min_lr.
double lr_at_step(int step, const ScheduleConfig& sched);

// Adam with decoupled weight decay: p <- p * (1 - lr * wd) for decaying
// parameters, then the bias-corrected Adam update.
class AdamW {
 public:
  // `lr_scale` maps a parameter-name prefix to a learning-rate multiplier;
  // the longest matching prefix wins.
  explicit AdamW(const ScheduleConfig& sched, std::map<std::string, double> lr_scale = {})
      : sched_(sched), lr_scale_(std::move(lr_scale)) {}
  void step(ParameterStore& params, double lr);
  int steps_taken() const { return t_; }
  double scale_for(const std::string& name) const;

 private:
  ScheduleConfig sched_;
  std::map<std::string, double> lr_scale_;
  int t_ = 0;
  std::map<std::string, std::pair<Mat, Mat>> moments_;
};

enum class Objective { vtc, mlm, vtm, qa, retrieval_finetune };

std::string to_string(Objective o);
Objective parse_objective(const std::string& name);
// retrieval_finetune expands to {vtc, vtm}.
std::set<Objective> expand_objectives(const std::set<Objective>& objectives);

struct TrainOptions {
  std::set<Objective> objectives{Objective::vtc, Objective::mlm, Objective::vtm};
  int epochs = 1;
  int batch_size = 16;
  double peak_lr = 1e-4;
  double min_lr = 1e-6;
  double warmup_epochs = 1.0;
  double weight_decay = 0.02;
  double clip_norm = 1.0;
  // Per-prefix learning-rate multipliers (see AdamW).
  std::map<std::string, double> lr_scale;
  // 1 is single-frame training; more frames use segment sampling and, when
  // the model has a temporal encoder, the temporal path.
  int frames_per_step = 1;
  bool augment = true;
  std::uint64_t seed = 0;
  // Metrics log and checkpoints are written here when non-empty.
  std::filesystem::path run_dir;
  bool save_checkpoints = true;
};

struct StepRecord {
  int step = 0;
  double lr = 0.0;
  double loss_total = 0.0;
  double loss_vtc = 0.0;
  double loss_mlm = 0.0;
  double loss_vtm = 0.0;
  double loss_qa = 0.0;
};

nlohmann::json to_json(const StepRecord& r, bool with_qa);

struct TrainResult {
  std::vector<StepRecord> log;
  std::vector<std::filesystem::path> checkpoints;
};

ScheduleConfig make_schedule(const TrainOptions& options, int dataset_size);

// Epochs of shuffled mini-batches. Throws DivergenceError on a non-finite
// loss after appending a diagnostic record to the metrics log.
// `on_step`, if set, sees every record as it is produced.
TrainResult run_training(Model& model, const Dataset& dataset, const Tokenizer& tokenizer,
                         const TrainOptions& options, const std::function<void(const StepRecord&)>& on_step = {});

}  // namespace oneframe
