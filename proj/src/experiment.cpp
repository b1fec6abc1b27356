#include "hyperadapt/experiment.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <mutex>
#include <sstream>
#include <thread>

#include <nlohmann/json.hpp>

namespace hyperadapt {

namespace {

using ordered_json = nlohmann::ordered_json;

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string fmt_short(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return buf;
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
}

std::string placement_name(const ModelSpec& spec) {
  for (auto preset : {PlacementPreset::none, PlacementPreset::anterior_half, PlacementPreset::posterior_half,
                      PlacementPreset::all}) {
    if (ExpertPlacement::preset(preset, spec.n_blocks) == spec.placement) return std::string(to_string(preset));
  }
  return "custom";
}

bool has_experts(const ModelSpec& spec) { return spec.has_visual_expert() || spec.has_language_expert(); }

PartStats stats_of(std::string name, std::span<const double> values) {
  PartStats s;
  s.name = std::move(name);
  s.size = values.size();
  double sq = 0.0;
  s.min = values.empty() ? 0.0 : values.front();
  s.max = s.min;
  for (double v : values) {
    sq += v * v;
    s.min = std::min(s.min, v);
    s.max = std::max(s.max, v);
  }
  s.norm = std::sqrt(sq);
  return s;
}

}  // namespace

std::string point_name(ProjectorVariant variant, std::string_view placement, std::size_t guidance_dim,
                       std::size_t bottleneck, std::uint64_t seed) {
  return "variant-" + std::string(to_string(variant)) + "__placement-" + std::string(placement) + "__g-" +
         std::to_string(guidance_dim) + "__r-" + std::to_string(bottleneck) + "__seed-" + std::to_string(seed);
}

std::vector<RunPoint> expand_sweep(const ExperimentConfig& config) {
  const ModelSpec& base = config.model;
  std::vector<ProjectorVariant> variants = config.sweep.variants;
  if (variants.empty()) variants.push_back(base.projector_variant);
  std::vector<std::optional<PlacementPreset>> placements;
  for (auto p : config.sweep.placements) placements.emplace_back(p);
  if (placements.empty()) placements.emplace_back(std::nullopt);
  std::vector<std::size_t> gs = config.sweep.guidance_dims;
  if (gs.empty()) gs.push_back(base.guidance_dim);
  std::vector<std::size_t> rs = config.sweep.bottlenecks;
  if (rs.empty()) rs.push_back(base.bottleneck);

  std::vector<RunPoint> points;
  for (auto variant : variants) {
    for (const auto& placement : placements) {
      for (auto g : gs) {
        for (auto r : rs) {
          ModelSpec spec = base;
          spec.projector_variant = variant;
          if (placement) spec.placement = ExpertPlacement::preset(*placement, spec.n_blocks);
          spec.guidance_dim = g;
          spec.bottleneck = r;
          spec.validate();
          if (config.param_match && !has_experts(spec)) {
            ModelSpec reference = spec;
            reference.projector_variant = config.match_variant;
            reference.placement = ExpertPlacement::preset(config.match_placement, spec.n_blocks);
            spec.ffn_hidden = matched_ffn_hidden(reference, spec);
          }
          for (auto seed : config.seeds) {
            RunPoint p;
            p.variant = variant;
            p.placement = placement_name(spec);
            p.guidance_dim = g;
            p.bottleneck = r;
            p.seed = seed;
            p.spec = spec;
            p.name = point_name(variant, p.placement, g, r, seed);
            points.push_back(std::move(p));
          }
        }
      }
    }
  }
  return points;
}

std::vector<RunPoint> validate_experiment(const ExperimentConfig& config, const std::string& source) {
  try {
    std::vector<RunPoint> points = expand_sweep(config);
    for (const auto& p : points) {
      TaskConfig task = config.task;
      task.seed = p.seed;
      make_alignment_task(p.spec, task);
      make_clustered_task(p.spec, task);
    }
    return points;
  } catch (const ConfigError&) {
    throw;
  } catch (const std::exception& e) {
    throw ConfigError(source, e.what());
  }
}

KeyValues task_metadata(const TaskConfig& t) {
  return {
      {"task.n_clusters", std::to_string(t.n_clusters)},
      {"task.n_visual_tokens", std::to_string(t.n_visual_tokens)},
      {"task.prompt_len", std::to_string(t.prompt_len)},
      {"task.content_tokens", std::to_string(t.content_tokens)},
      {"task.label_noise", fmt(t.label_noise)},
      {"task.feature_noise", fmt(t.feature_noise)},
      {"task.separation", fmt(t.separation)},
      {"task.seed", std::to_string(t.seed)},
  };
}

TaskConfig task_from_metadata(const Checkpoint& ckpt) {
  TaskConfig t;
  auto size_of = [&](const char* key, std::size_t& out) {
    if (const std::string* v = ckpt.meta(key)) out = std::stoull(*v);
  };
  auto double_of = [&](const char* key, double& out) {
    if (const std::string* v = ckpt.meta(key)) out = std::stod(*v);
  };
  size_of("task.n_clusters", t.n_clusters);
  size_of("task.n_visual_tokens", t.n_visual_tokens);
  size_of("task.prompt_len", t.prompt_len);
  size_of("task.content_tokens", t.content_tokens);
  double_of("task.label_noise", t.label_noise);
  double_of("task.feature_noise", t.feature_noise);
  double_of("task.separation", t.separation);
  if (const std::string* v = ckpt.meta("task.seed")) t.seed = std::stoull(*v);
  return t;
}

PointResult run_point(const ExperimentConfig& config, const RunPoint& point, const std::filesystem::path& run_dir) {
  std::filesystem::create_directories(run_dir);
  PointResult result;
  result.point = point;
  result.trainable_params = audit_params(point.spec).trainable();

  Model model(point.spec, point.seed);
  TaskConfig task_config = config.task;
  task_config.seed = point.seed;
  const SynthTask align_task = make_alignment_task(point.spec, task_config);
  const SynthTask instruct_task = make_clustered_task(point.spec, task_config);

  std::ofstream metrics(run_dir / "metrics.jsonl", std::ios::binary | std::ios::trunc);
  std::ofstream timing(run_dir / "timing.csv", std::ios::binary | std::ios::trunc);
  if (!metrics || !timing) throw std::runtime_error("cannot write metrics under " + run_dir.string());
  timing << "stage,step,wallclock_ms\n";
  auto on_step = [&](const StepRecord& rec) {
    ordered_json j;
    j["schema"] = kMetricsSchema;
    j["run"] = point.name;
    j["event"] = "step";
    j["stage"] = to_string(rec.stage);
    j["step"] = rec.step;
    j["loss"] = rec.loss;
    j["grad_norm"] = rec.grad_norm;
    j["lr"] = rec.lr;
    metrics << j.dump() << "\n";
    timing << to_string(rec.stage) << "," << rec.step << "," << fmt_short(rec.wallclock_ms) << "\n";
  };
  auto metadata = [&](Stage stage) {
    KeyValues kv{{"stage", std::string(to_string(stage))}, {"run", point.name}, {"seed", std::to_string(point.seed)}};
    for (auto& item : task_metadata(task_config)) kv.push_back(std::move(item));
    return kv;
  };
  auto abort = [&](Stage stage, const StageResult& r) {
    result.aborted = true;
    result.abort_reason = r.abort_reason;
    ordered_json j;
    j["schema"] = kMetricsSchema;
    j["run"] = point.name;
    j["event"] = "abort";
    j["stage"] = to_string(stage);
    j["step"] = r.records.size();
    j["reason"] = r.abort_reason;
    metrics << j.dump() << "\n";
    KeyValues kv = metadata(stage);
    kv.emplace_back("abort_reason", r.abort_reason);
    save_checkpoint(run_dir / "abort.ckpt", model, kv);
  };

  TrainPlan instruct = make_plan(Stage::instruct, config.instruct);
  instruct.data_stream = 1;
  if (config.align.enabled) {
    TrainPlan align = make_plan(Stage::align, config.align);
    align.data_stream = 0;
    StageResult r = run_stage(align, model, align_task, on_step);
    result.align_steps = r.records.size();
    if (r.aborted) {
      abort(Stage::align, r);
    } else {
      if (!r.records.empty()) result.align_final_loss = r.final_loss;
      save_checkpoint(run_dir / "align.ckpt", model, metadata(Stage::align));
      instruct.align_checkpoint = run_dir / "align.ckpt";
    }
  } else {
    instruct.allow_without_align = true;
  }

  if (!result.aborted && config.instruct.enabled) {
    StageResult r = run_stage(instruct, model, instruct_task, on_step);
    result.instruct_steps = r.records.size();
    result.instruct_final_loss = r.final_loss;
    if (r.aborted) abort(Stage::instruct, r);
  }
  if (!result.aborted) save_checkpoint(run_dir / "final.ckpt", model, metadata(Stage::instruct));
  metrics.close();
  timing.close();
  write_text(run_dir / "summary.csv", std::string(kSummaryHeader) + "\n" + summary_row(result) + "\n");
  return result;
}

std::string summary_row(const PointResult& r) {
  std::ostringstream out;
  out << kSummarySchemaVersion << "," << r.point.name << "," << to_string(r.point.variant) << "," << r.point.placement
      << "," << r.point.guidance_dim << "," << r.point.bottleneck << "," << r.point.seed << ","
      << r.point.spec.ffn_hidden << "," << r.trainable_params << "," << r.align_steps << ","
      << (r.align_final_loss ? fmt(*r.align_final_loss) : "") << "," << r.instruct_steps << ","
      << (r.instruct_steps ? fmt(r.instruct_final_loss) : "") << "," << (r.aborted ? "aborted" : "ok");
  return out.str();
}

std::string summary_csv(const std::vector<PointResult>& results) {
  std::string out = std::string(kSummaryHeader) + "\n";
  for (const auto& r : results) out += summary_row(r) + "\n";
  return out;
}

bool ExperimentReport::any_aborted() const {
  return std::any_of(results.begin(), results.end(), [](const PointResult& r) { return r.aborted; });
}

std::vector<AggregateRow> aggregate(const std::vector<PointResult>& results) {
  std::vector<AggregateRow> rows;
  for (const auto& r : results) {
    if (r.aborted || r.instruct_steps == 0) continue;
    auto it = std::find_if(rows.begin(), rows.end(), [&](const AggregateRow& a) {
      return a.variant == r.point.variant && a.placement == r.point.placement &&
             a.guidance_dim == r.point.guidance_dim && a.bottleneck == r.point.bottleneck;
    });
    if (it == rows.end()) {
      rows.push_back({r.point.variant, r.point.placement, r.point.guidance_dim, r.point.bottleneck, 0, 0.0});
      it = rows.end() - 1;
    }
    it->mean_final_loss += r.instruct_final_loss;
    ++it->seeds;
  }
  for (auto& row : rows) row.mean_final_loss /= static_cast<double>(row.seeds);
  return rows;
}

std::vector<std::string> compare_points(const std::vector<AggregateRow>& rows, bool* placement_inversion) {
  std::vector<std::string> notes;
  if (placement_inversion != nullptr) *placement_inversion = false;
  auto label = [](const AggregateRow& a) {
    return std::string(to_string(a.variant)) + "/" + a.placement + "/g" + std::to_string(a.guidance_dim) + "/r" +
           std::to_string(a.bottleneck);
  };
  const AggregateRow* baseline = nullptr;
  for (const auto& row : rows) {
    if (row.variant == ProjectorVariant::Static && row.placement == "none") {
      baseline = &row;
      break;
    }
  }
  if (baseline != nullptr) {
    for (const auto& row : rows) {
      if (&row == baseline) continue;
      const double gap = (baseline->mean_final_loss - row.mean_final_loss) / baseline->mean_final_loss;
      notes.push_back("advantage " + label(row) + " vs " + label(*baseline) + ": " + fmt_short(100.0 * gap) +
                      "% (" + fmt_short(row.mean_final_loss) + " vs " + fmt_short(baseline->mean_final_loss) + ")");
    }
  }
  for (const auto& post : rows) {
    if (post.placement != "posterior-half") continue;
    for (const auto& ante : rows) {
      if (ante.placement != "anterior-half" || ante.variant != post.variant ||
          ante.guidance_dim != post.guidance_dim || ante.bottleneck != post.bottleneck) {
        continue;
      }
      const bool ok = post.mean_final_loss <= ante.mean_final_loss;
      notes.push_back(std::string(ok ? "placement ordering ok: " : "PLACEMENT INVERSION: ") + label(post) + " " +
                      fmt_short(post.mean_final_loss) + (ok ? " <= " : " > ") + label(ante) + " " +
                      fmt_short(ante.mean_final_loss));
      if (!ok && placement_inversion != nullptr) *placement_inversion = true;
    }
  }
  return notes;
}

ExperimentReport run_experiment(const ExperimentConfig& config, const std::filesystem::path& out_dir,
                                std::size_t threads, std::ostream* log) {
  const std::vector<RunPoint> points = validate_experiment(config, "config");
  std::filesystem::create_directories(out_dir);
  write_text(out_dir / "config.toml", emit_config(config));

  ExperimentReport report;
  report.results.resize(points.size());
  std::atomic<std::size_t> next{0};
  std::mutex log_mutex;
  std::exception_ptr failure;
  auto worker = [&]() {
    while (true) {
      const std::size_t i = next.fetch_add(1);
      if (i >= points.size()) return;
      try {
        report.results[i] = run_point(config, points[i], out_dir / points[i].name);
        if (log != nullptr) {
          std::lock_guard lock(log_mutex);
          const auto& r = report.results[i];
          *log << "[" << (i + 1) << "/" << points.size() << "] " << r.point.name << " "
               << (r.aborted ? "ABORTED " + r.abort_reason : "final_loss=" + fmt_short(r.instruct_final_loss)) << "\n";
        }
      } catch (...) {
        std::lock_guard lock(log_mutex);
        if (!failure) failure = std::current_exception();
        next = points.size();
        return;
      }
    }
  };
  const std::size_t n_threads = std::max<std::size_t>(1, std::min(threads, points.size()));
  if (n_threads == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < n_threads; ++t) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
  }
  if (failure) std::rethrow_exception(failure);

  report.aggregates = aggregate(report.results);
  report.notes = compare_points(report.aggregates, &report.placement_inversion);
  write_text(out_dir / "summary.csv", summary_csv(report.results));
  std::string agg = std::string(kAggregateHeader) + "\n";
  for (const auto& a : report.aggregates) {
    agg += std::to_string(kSummarySchemaVersion) + "," + std::string(to_string(a.variant)) + "," + a.placement + "," +
           std::to_string(a.guidance_dim) + "," + std::to_string(a.bottleneck) + "," + std::to_string(a.seeds) + "," +
           fmt(a.mean_final_loss) + "\n";
  }
  write_text(out_dir / "aggregate.csv", agg);
  std::string text;
  for (const auto& note : report.notes) text += note + "\n";
  write_text(out_dir / "report.txt", text);
  return report;
}

std::vector<AuditLine> audit_experiment(const ExperimentConfig& config) {
  std::vector<AuditLine> lines;
  for (const auto& p : expand_sweep(config)) {
    if (p.seed != config.seeds.front()) continue;
    std::string name = p.name.substr(0, p.name.rfind("__seed-"));
    lines.push_back({std::move(name), audit_params(p.spec)});
  }
  return lines;
}

std::string audit_csv(const std::vector<AuditLine>& lines) {
  std::string out = std::string(kAuditHeader) + "\n";
  for (const auto& l : lines) {
    const AuditReport& a = l.report;
    out += std::to_string(kSummarySchemaVersion) + "," + l.point + "," + std::to_string(a.direct) + "," +
           std::to_string(a.hypernet) + "," + std::to_string(a.generated) + "," + std::to_string(a.trainable()) + "," +
           std::to_string(a.static_baseline) + "," + std::to_string(a.adapter_expert) + "," +
           std::to_string(a.full_generation) + "," + std::to_string(a.adapter_generated) + "," +
           std::to_string(a.full_generated) + "\n";
  }
  return out;
}

std::string audit_text(const std::vector<AuditLine>& lines) {
  std::ostringstream out;
  for (const auto& l : lines) {
    const AuditReport& a = l.report;
    out << l.point << "\n";
    for (const auto& row : a.rows) {
      out << "  " << row.component << ": direct=" << row.direct << " hypernet=" << row.hypernet
          << " generated/sample=" << row.generated << "\n";
    }
    out << "  total: direct=" << a.direct << " hypernet=" << a.hypernet << " trainable=" << a.trainable()
        << " generated/sample=" << a.generated << "\n";
    out << "  static baseline trainable=" << a.static_baseline << "\n";
    out << "  adapter experts: trainable=" << a.adapter_expert << " generated/sample=" << a.adapter_generated << "\n";
    out << "  full-matrix generation: trainable=" << a.full_generation << " generated/sample=" << a.full_generated;
    if (a.adapter_generated > 0) {
      out << " (" << fmt_short(static_cast<double>(a.full_generated) / static_cast<double>(a.adapter_generated))
          << "x adapter)";
    }
    out << "\n";
  }
  return out.str();
}

InspectResult inspect_checkpoint(const Checkpoint& checkpoint, std::uint64_t sample_seed) {
  InspectResult result;
  result.metadata = checkpoint.metadata;
  result.spec = checkpoint.spec;
  result.sample_seed = sample_seed;
  auto model = model_from_checkpoint(checkpoint);
  const SynthTask task = make_clustered_task(checkpoint.spec, task_from_metadata(checkpoint));
  const Sample sample = task.sample(2, sample_seed);
  result.cluster = sample.cluster;

  NoGradGuard no_grad;
  const Tensor vision = Tensor::from({task.config().n_visual_tokens, checkpoint.spec.d_v}, sample.vision);
  const std::size_t context = task.config().prompt_len + 1;
  for (const auto& gen : model->generated_blocks(vision, sample.text_ids, context)) {
    InspectBlock block;
    block.label = gen.label;
    block.kind = gen.target.kind;
    block.expected_size = gen.target.flat_size();
    if (gen.adapter) {
      const AdapterWeights& w = *gen.adapter;
      block.d_in = w.d_in();
      block.rank = w.rank();
      block.flat_size = w.flatten().size();
      block.parts.push_back(stats_of("w_down", w.w_down.data()));
      block.parts.push_back(stats_of("w_up", w.w_up.data()));
      block.parts.push_back(stats_of("b_down", w.b_down.data()));
      block.parts.push_back(stats_of("b_up", w.b_up.data()));
    } else {
      block.d_in = gen.target.n_in;
      block.flat_size = gen.matrix.numel();
      block.parts.push_back(stats_of("matrix", gen.matrix.data()));
    }
    const std::size_t law = block.kind == TargetKind::adapter
                                ? 2 * block.d_in * block.rank + block.rank + block.d_in
                                : gen.target.n_in * gen.target.n_out;
    if (block.flat_size != block.expected_size || block.flat_size != law) {
      throw CheckpointError(block.label + ": generated " + std::to_string(block.flat_size) +
                            " scalars, flat-size law gives " + std::to_string(law));
    }
    result.blocks.push_back(std::move(block));
  }
  return result;
}

std::string format_inspect(const InspectResult& r) {
  std::ostringstream out;
  for (const auto& [k, v] : r.metadata) {
    if (!k.starts_with("task.")) out << k << ": " << v << "\n";
  }
  out << "projector_variant: " << to_string(r.spec.projector_variant) << "\n";
  out << "placement: " << placement_name(r.spec) << "\n";
  out << "sample_seed: " << r.sample_seed << " (cluster " << r.cluster << ")\n";
  if (r.blocks.empty()) out << "no generated blocks (static model)\n";
  for (const auto& b : r.blocks) {
    out << b.label << " " << (b.kind == TargetKind::adapter ? "adapter" : "full_matrix") << " d_in=" << b.d_in;
    if (b.kind == TargetKind::adapter) out << " r=" << b.rank;
    out << " flat=" << b.flat_size << " law=ok\n";
    for (const auto& p : b.parts) {
      out << "  " << p.name << " n=" << p.size << " norm=" << fmt(p.norm) << " min=" << fmt(p.min)
          << " max=" << fmt(p.max) << "\n";
    }
  }
  return out.str();
}

}  // namespace hyperadapt
