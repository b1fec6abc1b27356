#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "hyperadapt/experts.hpp"
#include "hyperadapt/hypernet.hpp"
#include "hyperadapt/params.hpp"

namespace hyperadapt {

/// Full topology of the toy multimodal model.
struct ModelSpec {
  std::size_t d_v = 32;
  std::size_t d = 64;
  std::size_t n_blocks = 8;
  std::size_t n_heads = 4;
  std::size_t vocab_size = 64;
  std::size_t max_seq = 48;
  std::size_t ffn_hidden = 128;
  ProjectorVariant projector_variant = ProjectorVariant::Static;
  std::optional<ExpertPlacement> placement;
  std::size_t guidance_dim = 64;
  std::size_t bottleneck = 16;
  std::size_t generator_hidden = 64;
  Activation adapter_act = Activation::silu;
  ExpertStructure structure = ExpertStructure::adapter;
  bool latent_guidance = false;
  bool shared_trunk = true;
  double up_gain = 0.1;

  void validate() const;
  bool has_visual_expert() const { return projector_variant != ProjectorVariant::Static; }
  bool has_language_expert() const { return placement.has_value(); }
  ExpertOptions expert_options() const;

  // Ordered key/value form used by checkpoint headers and configs.
  std::vector<std::pair<std::string, std::string>> to_kv() const;
  static ModelSpec from_kv(const std::vector<std::pair<std::string, std::string>>& kv);

  bool operator==(const ModelSpec&) const = default;
};

/// b samples sharing n_v visual tokens and n_t text tokens. target_ids
/// holds the next text token over the response span and kIgnoreIndex
/// elsewhere.
struct Batch {
  std::size_t size = 0;
  std::size_t n_v = 0;
  std::size_t d_v = 0;
  std::size_t n_t = 0;
  std::vector<double> vision;   // [size, n_v, d_v]
  std::vector<int> text_ids;    // [size, n_t]
  std::vector<int> target_ids;  // [size, n_t]

  Tensor vision_of(std::size_t i) const;
  std::span<const int> text_of(std::size_t i) const;
  std::span<const int> targets_of(std::size_t i) const;
  // Text tokens visible to language guidance: up to the first supervised
  // position, or the whole text when nothing is supervised.
  std::size_t context_of(std::size_t i) const;
  void validate() const;
};

/// One generated parameter block, recorded for inspection.
struct GeneratedBlock {
  std::string label;
  GenerationTarget target;
  std::optional<AdapterWeights> adapter;
  Tensor matrix;  // full-matrix targets only
};

class Model {
 public:
  Model(ModelSpec spec, std::uint64_t seed);
  Model(const Model&) = delete;
  Model& operator=(const Model&) = delete;

  const ModelSpec& spec() const { return spec_; }
  ParameterStore& params() { return params_; }
  const ParameterStore& params() const { return params_; }
  const Projector& projector() const { return *projector_; }
  const HyperNetwork* language_expert() const { return language_.get(); }

  /// Logits [n_v + n_t, vocab] for one sample. Language guidance pools the
  /// visual tokens and the first `context_text` text tokens (all by default).
  Tensor forward_sample(const Tensor& vision, std::span<const int> text_ids, std::size_t context_text = kWholeText) const;
  static constexpr std::size_t kWholeText = static_cast<std::size_t>(-1);
  /// Logits [b, n_v + n_t, vocab].
  Tensor forward(const Batch& batch) const;

  /// Every generated block for one sample, in forward order.
  std::vector<GeneratedBlock> generated_blocks(const Tensor& vision, std::span<const int> text_ids,
                                               std::size_t context_text = kWholeText) const;

  std::vector<int> greedy_decode(const Tensor& vision, std::vector<int> prompt, std::size_t max_new) const;

  /// Zeroes every hypernetwork parameter, which switches all experts off.
  void zero_generators();

 private:
  Tensor run(const Tensor& vision, std::span<const int> text_ids, std::size_t context_text,
             std::vector<GeneratedBlock>* trace) const;

  ModelSpec spec_;
  ParameterStore params_;
  Tensor token_embedding_;
  Tensor position_embedding_;
  std::unique_ptr<Projector> projector_;
  std::vector<TransformerBlock> blocks_;
  std::unique_ptr<HyperNetwork> language_;
  Tensor final_norm_;
  Tensor lm_head_;
};

/// Mean autoregressive NLL over response positions.
Tensor loss(const Tensor& logits, const Batch& batch);

// ---------------------------------------------------------------------------
// Parameter audit

struct AuditRow {
  std::string component;
  std::size_t direct = 0;      // trained directly
  std::size_t hypernet = 0;    // owned by a hypernetwork
  std::size_t generated = 0;   // emitted per sample
};

struct AuditReport {
  std::vector<AuditRow> rows;
  std::size_t direct = 0;
  std::size_t hypernet = 0;
  std::size_t generated = 0;
  std::size_t trainable() const { return direct + hypernet; }

  // The same spec under three arms.
  std::size_t static_baseline = 0;   // experts removed
  std::size_t adapter_expert = 0;    // trainable with adapter targets
  std::size_t full_generation = 0;   // trainable with full-matrix targets
  std::size_t adapter_generated = 0; // per-sample flat sizes, adapter arm
  std::size_t full_generated = 0;    // per-sample flat sizes, full arm
};

/// Trainable scalars of a hypernetwork with the given target flat sizes.
std::size_t hypernet_param_count(std::size_t feature_dim, std::size_t guidance_dim, std::size_t hidden,
                                 std::span<const std::size_t> flat_sizes, bool shared_trunk, bool latent);

AuditReport audit_params(const ModelSpec& spec);

/// FFN width for a static spec whose trainable count is closest to that of
/// `dynamic`.
std::size_t matched_ffn_hidden(const ModelSpec& dynamic, const ModelSpec& static_spec);

}  // namespace hyperadapt
