#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "hyperadapt/model.hpp"
#include "hyperadapt/task.hpp"

namespace hyperadapt {

enum class Stage { align, instruct };

std::string_view to_string(Stage stage);
Stage parse_stage(std::string_view text);

struct AdamWConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;

  bool operator==(const AdamWConfig&) const = default;
};

/// Returns true for parameters that must stay fixed.
using FreezeMask = std::function<bool(std::string_view name)>;

/// Align trains the projector and the visual hypernetwork only; instruct
/// trains everything, optionally keeping the visual expert fixed.
FreezeMask stage_freeze_mask(Stage stage, bool freeze_visual_expert = false);

struct TrainPlan {
  Stage stage = Stage::align;
  std::size_t batch_size = 32;
  double learning_rate = 1e-3;
  std::size_t steps = 300;
  AdamWConfig optimizer;
  FreezeMask frozen;            // empty: stage_freeze_mask(stage, freeze_visual_expert)
  std::uint64_t data_stream = 0;
  double clip_norm = 0.0;       // global grad-norm clip, 0 disables
  bool cosine_schedule = false;
  bool freeze_visual_expert = false;
  std::size_t final_window = 50;

  // Instruct only: the align checkpoint to start from. Without one the
  // stage refuses to run unless allow_without_align is set.
  std::optional<std::filesystem::path> align_checkpoint;
  bool allow_without_align = false;

  static TrainPlan align_defaults();
  static TrainPlan instruct_defaults();
  double lr_at(std::size_t step) const;
};

/// Per-parameter AdamW moments.
struct AdamWState {
  std::uint64_t step = 0;
  std::unordered_map<std::string, std::vector<double>> m;
  std::unordered_map<std::string, std::vector<double>> v;
};

/// One decoupled AdamW update at (1-based) step t.
void adamw_update(std::span<double> p, std::span<const double> g, std::span<double> m, std::span<double> v,
                  std::uint64_t t, double lr, const AdamWConfig& config);

/// Updates every parameter that requires grad; others are untouched.
void adamw_step(ParameterStore& params, AdamWState& state, double lr, const AdamWConfig& config);

/// L2 norm over the gradients of every parameter that requires grad.
double global_grad_norm(const ParameterStore& params);

struct StepRecord {
  Stage stage = Stage::align;
  std::size_t step = 0;
  double loss = 0.0;
  double grad_norm = 0.0;  // before clipping
  double lr = 0.0;
  double wallclock_ms = 0.0;
};

struct StageResult {
  std::vector<StepRecord> records;
  double final_loss = 0.0;  // mean loss over the last final_window steps
  bool aborted = false;
  std::string abort_reason;
};

using StepCallback = std::function<void(const StepRecord&)>;

/// Trains `model` on batches of `task`. A non-finite loss or gradient stops
/// the stage with aborted=true before the offending update is applied.
StageResult run_stage(const TrainPlan& plan, Model& model, const SynthTask& task, const StepCallback& on_step = {});

}  // namespace hyperadapt
