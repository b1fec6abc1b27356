#include "hyperadapt/train.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numbers>
#include <stdexcept>

#include "hyperadapt/checkpoint.hpp"

namespace hyperadapt {

std::string_view to_string(Stage stage) { return stage == Stage::align ? "align" : "instruct"; }

Stage parse_stage(std::string_view text) {
  if (text == "align") return Stage::align;
  if (text == "instruct") return Stage::instruct;
  throw std::invalid_argument("unknown stage '" + std::string(text) + "'");
}

FreezeMask stage_freeze_mask(Stage stage, bool freeze_visual_expert) {
  if (stage == Stage::align) {
    return [](std::string_view name) { return !(name.starts_with("proj.") || name.starts_with("hyper.visual.")); };
  }
  if (freeze_visual_expert) {
    return [](std::string_view name) { return name.starts_with("hyper.visual.") || name.starts_with("proj.lift."); };
  }
  return [](std::string_view) { return false; };
}

TrainPlan TrainPlan::align_defaults() {
  TrainPlan plan;
  plan.stage = Stage::align;
  plan.batch_size = 32;
  plan.learning_rate = 1e-3;
  return plan;
}

TrainPlan TrainPlan::instruct_defaults() {
  TrainPlan plan;
  plan.stage = Stage::instruct;
  plan.batch_size = 16;
  plan.learning_rate = 2e-5;
  plan.clip_norm = 1.0;
  plan.data_stream = 1;
  return plan;
}

double TrainPlan::lr_at(std::size_t step) const {
  if (!cosine_schedule || steps <= 1) return learning_rate;
  const double progress = static_cast<double>(step) / static_cast<double>(steps - 1);
  return 0.5 * learning_rate * (1.0 + std::cos(std::numbers::pi * progress));
}

void adamw_update(std::span<double> p, std::span<const double> g, std::span<double> m, std::span<double> v,
                  std::uint64_t t, double lr, const AdamWConfig& c) {
  if (t == 0) throw std::invalid_argument("adamw step counter starts at 1");
  const double bc1 = 1.0 - std::pow(c.beta1, static_cast<double>(t));
  const double bc2 = 1.0 - std::pow(c.beta2, static_cast<double>(t));
  const double decay = 1.0 - lr * c.weight_decay;
  for (std::size_t i = 0; i < p.size(); ++i) {
    m[i] = c.beta1 * m[i] + (1.0 - c.beta1) * g[i];
    v[i] = c.beta2 * v[i] + (1.0 - c.beta2) * g[i] * g[i];
    const double m_hat = m[i] / bc1;
    const double v_hat = v[i] / bc2;
    p[i] = p[i] * decay - lr * m_hat / (std::sqrt(v_hat) + c.eps);
  }
}

void adamw_step(ParameterStore& params, AdamWState& state, double lr, const AdamWConfig& config) {
  ++state.step;
  for (auto& entry : params.entries()) {
    Tensor& t = entry.tensor;
    if (!t.requires_grad()) continue;
    auto& m = state.m[entry.name];
    auto& v = state.v[entry.name];
    if (m.empty()) {
      m.assign(t.numel(), 0.0);
      v.assign(t.numel(), 0.0);
    }
    adamw_update(t.mutable_data(), t.grad(), m, v, state.step, lr, config);
  }
}

double global_grad_norm(const ParameterStore& params) {
  double sq = 0.0;
  for (const auto& entry : params.entries()) {
    if (!entry.tensor.requires_grad() || !entry.tensor.has_grad()) continue;
    for (double g : entry.tensor.grad()) sq += g * g;
  }
  return std::sqrt(sq);
}

namespace {

void apply_mask(ParameterStore& params, const FreezeMask& frozen) {
  for (auto& entry : params.entries()) entry.tensor.set_requires_grad(!frozen(entry.name));
}

void check_gradients(const ParameterStore& params) {
  for (const auto& entry : params.entries()) {
    if (!entry.tensor.requires_grad() || !entry.tensor.has_grad()) continue;
    for (double g : entry.tensor.grad()) {
      if (!std::isfinite(g)) throw NumericError(entry.name, "non-finite gradient");
    }
  }
}

struct RestoreTrainable {
  ParameterStore& params;
  ~RestoreTrainable() {
    for (auto& entry : params.entries()) entry.tensor.set_requires_grad(true);
  }
};

}  // namespace

StageResult run_stage(const TrainPlan& plan, Model& model, const SynthTask& task, const StepCallback& on_step) {
  if (plan.batch_size == 0) throw std::invalid_argument("batch_size must be positive");
  if (!(plan.learning_rate >= 0.0) || !std::isfinite(plan.learning_rate)) {
    throw std::invalid_argument("learning rate must be finite and non-negative");
  }
  if (plan.stage == Stage::instruct) {
    if (plan.align_checkpoint) {
      Checkpoint ckpt = load_checkpoint(*plan.align_checkpoint);
      const std::string* stage = ckpt.meta("stage");
      if (stage == nullptr || *stage != "align") {
        throw CheckpointError("instruct stage needs an align-stage checkpoint, got " +
                                    (stage ? "stage '" + *stage + "'" : std::string("no stage tag")));
      }
      if (!(ckpt.spec == model.spec())) throw CheckpointError("align checkpoint was written for a different model spec");
      restore_parameters(model, ckpt);
    } else if (!plan.allow_without_align) {
      throw std::invalid_argument("instruct stage refuses to start without an align checkpoint");
    }
  }

  ParameterStore& params = model.params();
  RestoreTrainable restore{params};
  apply_mask(params, plan.frozen ? plan.frozen : stage_freeze_mask(plan.stage, plan.freeze_visual_expert));
  std::size_t trainable = 0;
  for (const auto& entry : params.entries()) trainable += entry.tensor.requires_grad() ? 1 : 0;
  if (trainable == 0) throw std::invalid_argument("no trainable parameters in this stage");

  StageResult result;
  AdamWState state;
  using Clock = std::chrono::steady_clock;
  for (std::size_t step = 0; step < plan.steps; ++step) {
    const auto start = Clock::now();
    StepRecord rec;
    rec.stage = plan.stage;
    rec.step = step;
    rec.lr = plan.lr_at(step);
    try {
      const Batch batch = task.batch(plan.data_stream, step, plan.batch_size);
      const Tensor l = loss(model.forward(batch), batch);
      rec.loss = l.item();
      if (!std::isfinite(rec.loss)) throw NumericError("loss", "non-finite loss");
      params.zero_grad();
      backward(l);
      check_gradients(params);
    } catch (const NumericError& e) {
      result.aborted = true;
      result.abort_reason = "step " + std::to_string(step) + ": " + e.what();
      break;
    }
    rec.grad_norm = global_grad_norm(params);
    if (plan.clip_norm > 0.0 && rec.grad_norm > plan.clip_norm) {
      const double factor = plan.clip_norm / rec.grad_norm;
      for (auto& entry : params.entries()) {
        if (!entry.tensor.requires_grad() || !entry.tensor.has_grad()) continue;
        for (double& g : entry.tensor.mutable_grad()) g *= factor;
      }
    }
    adamw_step(params, state, rec.lr, plan.optimizer);
    rec.wallclock_ms = std::chrono::duration<double, std::milli>(Clock::now() - start).count();
    result.records.push_back(rec);
    if (on_step) on_step(rec);
  }
  params.zero_grad();

  if (!result.records.empty()) {
    const std::size_t window = std::min(std::max<std::size_t>(plan.final_window, 1), result.records.size());
    double sum = 0.0;
    for (std::size_t i = result.records.size() - window; i < result.records.size(); ++i) sum += result.records[i].loss;
    result.final_loss = sum / static_cast<double>(window);
  }
  return result;
}

}  // namespace hyperadapt
