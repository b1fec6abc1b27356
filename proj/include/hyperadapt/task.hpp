#pragma once

#include <cstdint>
#include <string_view>
#include <vector>

#include "hyperadapt/model.hpp"

namespace hyperadapt {

enum class TaskKind { alignment_regression, clustered_instruction };

std::string_view to_string(TaskKind kind);
TaskKind parse_task_kind(std::string_view text);

inline constexpr int kBosToken = 0;
inline constexpr int kSepToken = 1;
inline constexpr int kFirstContentToken = 2;

struct TaskConfig {
  TaskKind kind = TaskKind::clustered_instruction;
  std::size_t n_clusters = 4;
  std::size_t n_visual_tokens = 4;
  std::size_t prompt_len = 4;      // clustered: prompt tokens; alignment: caption tokens
  std::size_t content_tokens = 16; // distinct content ids, starting at kFirstContentToken
  double label_noise = 0.05;       // chance a response token is replaced uniformly
  double feature_noise = 0.3;      // per-token std around the cluster centroid
  double separation = 1.0;         // centroid std per feature
  std::uint64_t seed = 0;

  bool operator==(const TaskConfig&) const = default;
};

struct Sample {
  std::vector<double> vision;  // [n_v, d_v]
  std::vector<int> text_ids;
  std::vector<int> target_ids;
  int cluster = -1;
};

/// Seed-deterministic, unbounded sample stream.
///
/// clustered-instruction: vision tokens scatter around centroid c; the text
/// is [p_1..p_k, SEP, r_1..r_k] with r_j = perm_c(p_j), so the correct
/// response mapping differs per cluster.
///
/// alignment-regression: vision tokens are a fixed linear mix of latent
/// attributes a in [-1,1]^k; the caption [BOS, t_1..t_k] quantizes each a_j
/// into one of content_tokens levels.
class SynthTask {
 public:
  SynthTask(const ModelSpec& spec, TaskConfig config);

  const TaskConfig& config() const { return config_; }
  std::size_t d_v() const { return d_v_; }
  std::size_t text_len() const;

  Sample sample(std::uint64_t stream, std::uint64_t index) const;
  /// Samples [step * batch_size, (step + 1) * batch_size) of `stream`.
  Batch batch(std::uint64_t stream, std::uint64_t step, std::size_t batch_size) const;

  const std::vector<std::vector<double>>& centroids() const { return centroids_; }
  // Response mapping of cluster c: content index -> content index.
  const std::vector<int>& permutation(std::size_t cluster) const { return permutations_[cluster]; }

 private:
  TaskConfig config_;
  std::size_t d_v_;
  std::vector<std::vector<double>> centroids_;
  std::vector<std::vector<int>> permutations_;
  std::vector<double> mixing_;  // [d_v, prompt_len], alignment task
};

SynthTask make_clustered_task(const ModelSpec& spec, TaskConfig config);
SynthTask make_alignment_task(const ModelSpec& spec, TaskConfig config);

}  // namespace hyperadapt
