#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "hyperadapt/hypernet.hpp"
#include "hyperadapt/params.hpp"

namespace hyperadapt {

enum class ProjectorVariant { Static, V1, V2, V1andV2 };
enum class Activation { silu, gelu };
enum class ExpertStructure { adapter, full_matrix };
enum class PlacementPreset { none, anterior_half, posterior_half, all };

std::string_view to_string(ProjectorVariant v);
std::string_view to_string(Activation a);
std::string_view to_string(ExpertStructure s);
std::string_view to_string(PlacementPreset p);
ProjectorVariant parse_variant(std::string_view text);
Activation parse_activation(std::string_view text);
ExpertStructure parse_structure(std::string_view text);
PlacementPreset parse_placement(std::string_view text);

/// Which transformer blocks host language experts, and which block output
/// feeds their guidance. A tap of -1 means the embedded input sequence.
struct ExpertPlacement {
  std::vector<int> block_ids;  // sorted, unique
  int guidance_tap = -1;

  // Throws std::invalid_argument unless tap < min(block_ids) and every id
  // lies in [0, n_blocks).
  static ExpertPlacement make(std::vector<int> block_ids, int guidance_tap, std::size_t n_blocks);
  // nullopt for PlacementPreset::none. Posterior half taps block n/2 - 1;
  // the other presets start at block 0 and so tap the embeddings.
  static std::optional<ExpertPlacement> preset(PlacementPreset preset, std::size_t n_blocks);

  bool hosts(int block_id) const;
  bool operator==(const ExpertPlacement&) const = default;
};

Tensor activate(const Tensor& x, Activation act);

/// W_up(act(x W_down + b_down)) + b_up, applied to every row of x.
Tensor apply_adapter(const Tensor& x, const AdapterWeights& w, Activation act);

struct Linear {
  Tensor w;
  Tensor b;  // undefined for bias-free layers

  Tensor forward(const Tensor& x) const;
};

/// Generated-weight correction for one target: an adapter, or x K scaled
/// by the hypernetwork's up gain when the target is a full matrix.
Tensor expert_output(const HyperNetwork& hypernet, const GuidanceVector& guidance, int layer_id,
                     const Tensor& x, Activation act);

/// Shared configuration for building a hypernetwork-backed expert.
struct ExpertOptions {
  std::size_t guidance_dim = 64;
  std::size_t bottleneck = 16;
  std::size_t generator_hidden = 64;
  Activation act = Activation::silu;
  ExpertStructure structure = ExpertStructure::adapter;
  bool latent = false;
  bool shared_trunk = true;
  double up_gain = 0.1;
};

/// Two-layer GELU projector with optional visual experts on the first
/// layer's output (V1), the second layer's output (V2), or both.
class Projector {
 public:
  static constexpr int kFirstExpert = 1;
  static constexpr int kSecondExpert = 2;

  Projector(ProjectorVariant variant, std::size_t d_v, std::size_t d, const ExpertOptions& options,
            ParameterStore& store, std::uint64_t seed);

  ProjectorVariant variant() const { return variant_; }
  const HyperNetwork* visual_expert() const { return hypernet_.get(); }

  Tensor project_visual(const Tensor& features) const { return project_visual(features, variant_); }
  // `variant` must be Static or the configured variant.
  Tensor project_visual(const Tensor& features, ProjectorVariant variant) const;

 private:
  ProjectorVariant variant_;
  std::size_t d_v_;
  Linear l1_, l2_;
  Tensor lift_;
  Activation act_;
  std::unique_ptr<HyperNetwork> hypernet_;
};

/// Pre-norm attention followed by the normalized-residual gated FFN:
///   x_att = x + Attn(RMSNorm(x)),  x_n = RMSNorm(x_att)
///   out   = x_n + FFN(x_n) [+ E_L(x_n)]
struct TransformerBlock {
  Tensor attn_norm;
  Tensor wq, wk, wv, wo;
  Tensor ffn_norm;
  Tensor w_gate, w_in, w_out;
  std::size_t n_heads = 1;

  static TransformerBlock create(const std::string& prefix, std::size_t d, std::size_t ffn_hidden,
                                 std::size_t n_heads, ParameterStore& store, std::uint64_t seed);

  Tensor normalized_attention(const Tensor& x) const;
  Tensor ffn(const Tensor& x_n) const;
};

struct LanguageExpert {
  const HyperNetwork* hypernet = nullptr;
  Activation act = Activation::silu;
};

/// Pools the first `context_rows` tap hidden states through the encoder of
/// `layer_id`. Rows past the context (the response being predicted) never
/// reach the guidance, which keeps the model causal.
GuidanceVector tap_guidance(const HyperNetwork& language, const Tensor& tap_hidden, int layer_id,
                            std::size_t context_rows);

/// Runs one block. When `expert` hosts `block_id`, the generated adapter
/// branch is added and `guidance` must be provided.
Tensor wrap_block(const Tensor& x, const TransformerBlock& block, int block_id, const LanguageExpert* expert,
                  const GuidanceVector* guidance);

}  // namespace hyperadapt
