#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <ostream>
#include <string>
#include <string_view>
#include <vector>

#include "hyperadapt/checkpoint.hpp"
#include "hyperadapt/config.hpp"

namespace hyperadapt {

inline constexpr std::string_view kMetricsSchema = "hyperadapt.metrics/1";
inline constexpr int kSummarySchemaVersion = 1;
inline constexpr std::string_view kSummaryHeader =
    "schema_version,run,variant,placement,guidance_dim,bottleneck,seed,ffn_hidden,trainable_params,"
    "align_steps,align_final_loss,instruct_steps,instruct_final_loss,status";
inline constexpr std::string_view kAggregateHeader =
    "schema_version,variant,placement,guidance_dim,bottleneck,seeds,mean_instruct_final_loss";
inline constexpr std::string_view kAuditHeader =
    "schema_version,point,direct,hypernet,generated,trainable,static_baseline,adapter_expert,full_generation,"
    "adapter_generated,full_generated";

// Process exit codes of the command-line tool.
inline constexpr int kExitOk = 0;
inline constexpr int kExitConfigError = 2;
inline constexpr int kExitNumericAbort = 3;

/// One coordinate of the sweep cross-product.
struct RunPoint {
  std::string name;  // encodes every coordinate
  ProjectorVariant variant = ProjectorVariant::Static;
  std::string placement;  // preset name or "custom"
  std::size_t guidance_dim = 0;
  std::size_t bottleneck = 0;
  std::uint64_t seed = 0;
  ModelSpec spec;
};

std::string point_name(ProjectorVariant variant, std::string_view placement, std::size_t guidance_dim,
                       std::size_t bottleneck, std::uint64_t seed);

/// Cross-product variants x placements x g x r x seeds, in that nesting order.
std::vector<RunPoint> expand_sweep(const ExperimentConfig& config);

/// Expands the sweep and builds every point's model spec and tasks without
/// training; any inconsistency is reported as a ConfigError.
std::vector<RunPoint> validate_experiment(const ExperimentConfig& config, const std::string& source);

struct PointResult {
  RunPoint point;
  std::size_t trainable_params = 0;
  std::size_t align_steps = 0;
  std::optional<double> align_final_loss;
  std::size_t instruct_steps = 0;
  double instruct_final_loss = 0.0;
  bool aborted = false;
  std::string abort_reason;
};

/// Runs both stages of one point, writing metrics.jsonl, timing.csv,
/// align.ckpt, final.ckpt (abort.ckpt on a numeric abort) and a one-row
/// summary.csv into `run_dir`.
PointResult run_point(const ExperimentConfig& config, const RunPoint& point, const std::filesystem::path& run_dir);

struct AggregateRow {
  ProjectorVariant variant = ProjectorVariant::Static;
  std::string placement;
  std::size_t guidance_dim = 0;
  std::size_t bottleneck = 0;
  std::size_t seeds = 0;
  double mean_final_loss = 0.0;
};

struct ExperimentReport {
  std::vector<PointResult> results;
  std::vector<AggregateRow> aggregates;
  std::vector<std::string> notes;  // comparisons and placement-ordering flags
  bool placement_inversion = false;
  bool any_aborted() const;
};

std::string summary_row(const PointResult& result);
std::string summary_csv(const std::vector<PointResult>& results);
std::vector<AggregateRow> aggregate(const std::vector<PointResult>& results);
std::vector<std::string> compare_points(const std::vector<AggregateRow>& rows, bool* placement_inversion);

/// Executes every sweep point (up to `threads` at once) under `out_dir` and
/// writes summary.csv, aggregate.csv, report.txt and the resolved config.
ExperimentReport run_experiment(const ExperimentConfig& config, const std::filesystem::path& out_dir,
                                std::size_t threads, std::ostream* log = nullptr);

// ---------------------------------------------------------------------------

struct AuditLine {
  std::string point;
  AuditReport report;
};

std::vector<AuditLine> audit_experiment(const ExperimentConfig& config);
std::string audit_csv(const std::vector<AuditLine>& lines);
std::string audit_text(const std::vector<AuditLine>& lines);

// ---------------------------------------------------------------------------

struct PartStats {
  std::string name;
  std::size_t size = 0;
  double norm = 0.0;
  double min = 0.0;
  double max = 0.0;
};

struct InspectBlock {
  std::string label;
  TargetKind kind = TargetKind::adapter;
  std::size_t d_in = 0;
  std::size_t rank = 0;
  std::size_t flat_size = 0;
  std::size_t expected_size = 0;  // flat-size law
  std::vector<PartStats> parts;
};

struct InspectResult {
  KeyValues metadata;
  ModelSpec spec;
  std::uint64_t sample_seed = 0;
  int cluster = -1;
  std::vector<InspectBlock> blocks;
};

/// Regenerates every expert block of `checkpoint` for one seeded sample of
/// the clustered task. Throws CheckpointError if a block breaks the
/// flat-size law.
InspectResult inspect_checkpoint(const Checkpoint& checkpoint, std::uint64_t sample_seed);
std::string format_inspect(const InspectResult& result);

/// Task settings recorded in checkpoint metadata ("task.*" keys).
KeyValues task_metadata(const TaskConfig& task);
TaskConfig task_from_metadata(const Checkpoint& checkpoint);

}  // namespace hyperadapt
