#include "hyperadapt/task.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <stdexcept>
#include <string>

#include "hyperadapt/ops.hpp"

namespace hyperadapt {

std::string_view to_string(TaskKind kind) {
  return kind == TaskKind::alignment_regression ? "alignment-regression" : "clustered-instruction";
}

TaskKind parse_task_kind(std::string_view text) {
  if (text == "alignment-regression") return TaskKind::alignment_regression;
  if (text == "clustered-instruction") return TaskKind::clustered_instruction;
  throw std::invalid_argument("unknown task kind '" + std::string(text) + "'");
}

SynthTask::SynthTask(const ModelSpec& spec, TaskConfig config) : config_(config), d_v_(spec.d_v) {
  if (config_.n_clusters == 0) throw std::invalid_argument("task needs at least one cluster");
  if (config_.n_clusters > spec.vocab_size) {
    throw std::invalid_argument("n_clusters=" + std::to_string(config_.n_clusters) + " exceeds vocab_size=" +
                                std::to_string(spec.vocab_size));
  }
  if (config_.content_tokens < 2 || kFirstContentToken + config_.content_tokens > spec.vocab_size) {
    throw std::invalid_argument("content_tokens=" + std::to_string(config_.content_tokens) +
                                " does not fit in vocab_size=" + std::to_string(spec.vocab_size));
  }
  if (config_.prompt_len == 0 || config_.n_visual_tokens == 0) {
    throw std::invalid_argument("task needs at least one prompt token and one visual token");
  }
  if (config_.label_noise < 0.0 || config_.label_noise > 1.0) {
    throw std::invalid_argument("label_noise must lie in [0, 1]");
  }
  if (config_.n_visual_tokens + text_len() > spec.max_seq) {
    throw std::invalid_argument("task sequences of " + std::to_string(config_.n_visual_tokens + text_len()) +
                                " tokens exceed max_seq=" + std::to_string(spec.max_seq));
  }

  for (std::size_t c = 0; c < config_.n_clusters; ++c) {
    auto rng = named_rng(config_.seed, "task/centroid/" + std::to_string(c));
    centroids_.push_back(normal_values(rng, d_v_, config_.separation));
    std::vector<int> perm(config_.content_tokens);
    std::iota(perm.begin(), perm.end(), 0);
    auto prng = named_rng(config_.seed, "task/permutation/" + std::to_string(c));
    std::shuffle(perm.begin(), perm.end(), prng);
    permutations_.push_back(std::move(perm));
  }
  auto mrng = named_rng(config_.seed, "task/mixing");
  mixing_ = normal_values(mrng, d_v_ * config_.prompt_len, 1.0);
}

std::size_t SynthTask::text_len() const {
  return config_.kind == TaskKind::clustered_instruction ? 2 * config_.prompt_len + 1 : config_.prompt_len + 1;
}

Sample SynthTask::sample(std::uint64_t stream, std::uint64_t index) const {
  auto rng = named_rng(config_.seed ^ (stream * 0x9e3779b97f4a7c15ULL), "sample/" + std::to_string(index));
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const std::size_t m = config_.content_tokens;
  const std::size_t k = config_.prompt_len;
  auto content = [&]() { return static_cast<int>(std::min<std::size_t>(m - 1, static_cast<std::size_t>(unit(rng) * m))); };

  Sample s;
  s.vision.resize(config_.n_visual_tokens * d_v_);
  if (config_.kind == TaskKind::clustered_instruction) {
    s.cluster = static_cast<int>(std::min<std::size_t>(config_.n_clusters - 1,
                                                       static_cast<std::size_t>(unit(rng) * config_.n_clusters)));
    const auto& centroid = centroids_[static_cast<std::size_t>(s.cluster)];
    for (std::size_t t = 0; t < config_.n_visual_tokens; ++t)
      for (std::size_t f = 0; f < d_v_; ++f) s.vision[t * d_v_ + f] = centroid[f] + config_.feature_noise * normal(rng);

    const auto& perm = permutations_[static_cast<std::size_t>(s.cluster)];
    std::vector<int> prompt(k), response(k);
    for (std::size_t j = 0; j < k; ++j) {
      prompt[j] = content();
      response[j] = perm[static_cast<std::size_t>(prompt[j])];
      if (unit(rng) < config_.label_noise) response[j] = content();
    }
    for (int p : prompt) s.text_ids.push_back(kFirstContentToken + p);
    s.text_ids.push_back(kSepToken);
    for (int r : response) s.text_ids.push_back(kFirstContentToken + r);
    s.target_ids.assign(s.text_ids.size(), kIgnoreIndex);
    for (std::size_t j = k; j + 1 < s.text_ids.size(); ++j) s.target_ids[j] = s.text_ids[j + 1];
  } else {
    std::vector<double> attrs(k);
    for (auto& a : attrs) a = 2.0 * unit(rng) - 1.0;
    for (std::size_t t = 0; t < config_.n_visual_tokens; ++t) {
      for (std::size_t f = 0; f < d_v_; ++f) {
        double v = 0.0;
        for (std::size_t j = 0; j < k; ++j) v += mixing_[f * k + j] * attrs[j];
        s.vision[t * d_v_ + f] = v + config_.feature_noise * normal(rng);
      }
    }
    s.text_ids.push_back(kBosToken);
    for (double a : attrs) {
      auto level = static_cast<std::size_t>((a + 1.0) / 2.0 * static_cast<double>(m));
      int token = static_cast<int>(std::min(level, m - 1));
      if (unit(rng) < config_.label_noise) token = content();
      s.text_ids.push_back(kFirstContentToken + token);
    }
    s.target_ids.assign(s.text_ids.size(), kIgnoreIndex);
    for (std::size_t j = 0; j + 1 < s.text_ids.size(); ++j) s.target_ids[j] = s.text_ids[j + 1];
  }
  return s;
}

Batch SynthTask::batch(std::uint64_t stream, std::uint64_t step, std::size_t batch_size) const {
  if (batch_size == 0) throw std::invalid_argument("batch_size must be positive");
  Batch b;
  b.size = batch_size;
  b.n_v = config_.n_visual_tokens;
  b.d_v = d_v_;
  b.n_t = text_len();
  for (std::size_t i = 0; i < batch_size; ++i) {
    Sample s = sample(stream, step * batch_size + i);
    b.vision.insert(b.vision.end(), s.vision.begin(), s.vision.end());
    b.text_ids.insert(b.text_ids.end(), s.text_ids.begin(), s.text_ids.end());
    b.target_ids.insert(b.target_ids.end(), s.target_ids.begin(), s.target_ids.end());
  }
  return b;
}

SynthTask make_clustered_task(const ModelSpec& spec, TaskConfig config) {
  config.kind = TaskKind::clustered_instruction;
  return SynthTask(spec, config);
}

SynthTask make_alignment_task(const ModelSpec& spec, TaskConfig config) {
  config.kind = TaskKind::alignment_regression;
  return SynthTask(spec, config);
}

}  // namespace hyperadapt
