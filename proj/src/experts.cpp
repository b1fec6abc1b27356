#include "hyperadapt/experts.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "hyperadapt/ops.hpp"

namespace hyperadapt {

namespace {

constexpr double kInitStd = 0.02;

Tensor init_param(ParameterStore& store, std::uint64_t seed, const std::string& name, Shape shape, double stddev) {
  auto rng = named_rng(seed, name);
  return store.add(name, shape, normal_values(rng, shape_numel(shape), stddev));
}

Tensor ones_param(ParameterStore& store, const std::string& name, std::size_t n) {
  return store.add(name, {n}, std::vector<double>(n, 1.0));
}

template <typename Enum, std::size_t N>
Enum parse_enum(std::string_view text, const std::pair<std::string_view, Enum> (&table)[N], const char* what) {
  for (const auto& [name, value] : table) {
    if (name == text) return value;
  }
  throw std::invalid_argument("unknown " + std::string(what) + " '" + std::string(text) + "'");
}

constexpr std::pair<std::string_view, ProjectorVariant> kVariants[] = {
    {"Static", ProjectorVariant::Static}, {"V1", ProjectorVariant::V1},
    {"V2", ProjectorVariant::V2},         {"V1andV2", ProjectorVariant::V1andV2}};
constexpr std::pair<std::string_view, Activation> kActivations[] = {{"silu", Activation::silu},
                                                                    {"gelu", Activation::gelu}};
constexpr std::pair<std::string_view, ExpertStructure> kStructures[] = {
    {"adapter", ExpertStructure::adapter}, {"full_matrix", ExpertStructure::full_matrix}};
constexpr std::pair<std::string_view, PlacementPreset> kPlacements[] = {
    {"none", PlacementPreset::none},
    {"anterior-half", PlacementPreset::anterior_half},
    {"posterior-half", PlacementPreset::posterior_half},
    {"all", PlacementPreset::all}};

template <typename Enum, std::size_t N>
std::string_view name_of(Enum value, const std::pair<std::string_view, Enum> (&table)[N]) {
  for (const auto& [name, v] : table) {
    if (v == value) return name;
  }
  return "?";
}

}  // namespace

std::string_view to_string(ProjectorVariant v) { return name_of(v, kVariants); }
std::string_view to_string(Activation a) { return name_of(a, kActivations); }
std::string_view to_string(ExpertStructure s) { return name_of(s, kStructures); }
std::string_view to_string(PlacementPreset p) { return name_of(p, kPlacements); }
ProjectorVariant parse_variant(std::string_view text) { return parse_enum(text, kVariants, "projector variant"); }
Activation parse_activation(std::string_view text) { return parse_enum(text, kActivations, "activation"); }
ExpertStructure parse_structure(std::string_view text) { return parse_enum(text, kStructures, "expert structure"); }
PlacementPreset parse_placement(std::string_view text) { return parse_enum(text, kPlacements, "placement"); }

ExpertPlacement ExpertPlacement::make(std::vector<int> block_ids, int guidance_tap, std::size_t n_blocks) {
  std::sort(block_ids.begin(), block_ids.end());
  block_ids.erase(std::unique(block_ids.begin(), block_ids.end()), block_ids.end());
  if (block_ids.empty()) throw std::invalid_argument("expert placement needs at least one block");
  if (block_ids.front() < 0 || static_cast<std::size_t>(block_ids.back()) >= n_blocks) {
    throw std::invalid_argument("expert blocks must lie in [0, " + std::to_string(n_blocks) + ")");
  }
  if (guidance_tap < -1 || guidance_tap >= block_ids.front()) {
    throw std::invalid_argument("guidance tap " + std::to_string(guidance_tap) +
                                " must precede the first expert block " + std::to_string(block_ids.front()));
  }
  return {std::move(block_ids), guidance_tap};
}

std::optional<ExpertPlacement> ExpertPlacement::preset(PlacementPreset preset, std::size_t n_blocks) {
  const int n = static_cast<int>(n_blocks);
  const int half = n / 2;
  std::vector<int> ids;
  switch (preset) {
    case PlacementPreset::none:
      return std::nullopt;
    case PlacementPreset::anterior_half:
      for (int i = 0; i < std::max(half, 1); ++i) ids.push_back(i);
      return make(ids, -1, n_blocks);
    case PlacementPreset::posterior_half:
      for (int i = half; i < n; ++i) ids.push_back(i);
      return make(ids, half - 1, n_blocks);
    case PlacementPreset::all:
      for (int i = 0; i < n; ++i) ids.push_back(i);
      return make(ids, -1, n_blocks);
  }
  return std::nullopt;
}

bool ExpertPlacement::hosts(int block_id) const {
  return std::binary_search(block_ids.begin(), block_ids.end(), block_id);
}

Tensor activate(const Tensor& x, Activation act) { return act == Activation::silu ? silu(x) : gelu(x); }

Tensor apply_adapter(const Tensor& x, const AdapterWeights& w, Activation act) {
  if (x.rank() != 2 || x.dim(1) != w.d_in()) {
    throw ShapeError("apply_adapter: input " + shape_str(x.shape()) + " does not match adapter d_in " +
                     std::to_string(w.d_in()));
  }
  Tensor hidden = activate(add_row(matmul(x, w.w_down), w.b_down), act);
  return add_row(matmul(hidden, w.w_up), w.b_up);
}

Tensor Linear::forward(const Tensor& x) const {
  Tensor y = matmul(x, w);
  return b.defined() ? add_row(y, b) : y;
}

Tensor expert_output(const HyperNetwork& hypernet, const GuidanceVector& guidance, int layer_id, const Tensor& x,
                     Activation act) {
  if (hypernet.target(layer_id).kind == TargetKind::adapter) {
    return apply_adapter(x, hypernet.generate_adapter(guidance, layer_id), act);
  }
  return scale(matmul(x, hypernet.generate_full_mlp(guidance, layer_id)), hypernet.config().up_gain);
}

namespace {

GenerationTarget expert_target(const ExpertOptions& options, int layer_id, std::size_t d) {
  return options.structure == ExpertStructure::adapter
             ? GenerationTarget::make_adapter(layer_id, d, options.bottleneck)
             : GenerationTarget::make_full_matrix(layer_id, d, d);
}

}  // namespace

Projector::Projector(ProjectorVariant variant, std::size_t d_v, std::size_t d, const ExpertOptions& options,
                     ParameterStore& store, std::uint64_t seed)
    : variant_(variant), d_v_(d_v), act_(options.act) {
  l1_.w = init_param(store, seed, "proj.l1.w", {d_v, d}, kInitStd);
  l1_.b = init_param(store, seed, "proj.l1.b", {d}, 0.0);
  l2_.w = init_param(store, seed, "proj.l2.w", {d, d}, kInitStd);
  l2_.b = init_param(store, seed, "proj.l2.b", {d}, 0.0);
  if (variant == ProjectorVariant::Static) return;

  const bool first = variant == ProjectorVariant::V1 || variant == ProjectorVariant::V1andV2;
  const bool second = variant == ProjectorVariant::V2 || variant == ProjectorVariant::V1andV2;
  if (first) lift_ = init_param(store, seed, "proj.lift.w", {d_v, d}, 1.0 / std::sqrt(static_cast<double>(d_v)));

  std::vector<GenerationTarget> targets;
  if (first) targets.push_back(expert_target(options, kFirstExpert, d));
  if (second) targets.push_back(expert_target(options, kSecondExpert, d));
  HyperNetConfig config{Modality::visual, d_v,           options.guidance_dim, options.generator_hidden,
                        options.shared_trunk, options.latent, options.up_gain};
  hypernet_ = std::make_unique<HyperNetwork>("hyper.visual", config, std::move(targets), store, seed);
}

Tensor Projector::project_visual(const Tensor& features, ProjectorVariant variant) const {
  if (features.rank() != 2 || features.dim(1) != d_v_) {
    throw ShapeError("project_visual: features " + shape_str(features.shape()) + " need width " +
                     std::to_string(d_v_));
  }
  if (variant != ProjectorVariant::Static && variant != variant_) {
    throw std::invalid_argument("project_visual: projector built as " + std::string(to_string(variant_)) +
                                " cannot run " + std::string(to_string(variant)));
  }
  Tensor hidden = l1_.forward(features);
  Tensor out;
  if (variant == ProjectorVariant::Static || variant == ProjectorVariant::V2) {
    out = l2_.forward(gelu(hidden));
  } else {
    GuidanceVector e1 = hypernet_->guidance(features, kFirstExpert);
    Tensor shift = expert_output(*hypernet_, e1, kFirstExpert, matmul(features, lift_), act_);
    out = l2_.forward(gelu(add(hidden, shift)));
  }
  if (variant == ProjectorVariant::V2 || variant == ProjectorVariant::V1andV2) {
    GuidanceVector e2 = hypernet_->guidance(features, kSecondExpert);
    out = add(out, expert_output(*hypernet_, e2, kSecondExpert, gelu(hidden), act_));
  }
  return out;
}

TransformerBlock TransformerBlock::create(const std::string& prefix, std::size_t d, std::size_t ffn_hidden,
                                          std::size_t n_heads, ParameterStore& store, std::uint64_t seed) {
  if (n_heads == 0 || d % n_heads != 0) throw std::invalid_argument("model dim must be divisible by n_heads");
  TransformerBlock b;
  b.n_heads = n_heads;
  b.attn_norm = ones_param(store, prefix + ".attn_norm", d);
  b.wq = init_param(store, seed, prefix + ".attn.wq", {d, d}, kInitStd);
  b.wk = init_param(store, seed, prefix + ".attn.wk", {d, d}, kInitStd);
  b.wv = init_param(store, seed, prefix + ".attn.wv", {d, d}, kInitStd);
  b.wo = init_param(store, seed, prefix + ".attn.wo", {d, d}, kInitStd);
  b.ffn_norm = ones_param(store, prefix + ".ffn_norm", d);
  b.w_gate = init_param(store, seed, prefix + ".ffn.w_gate", {d, ffn_hidden}, kInitStd);
  b.w_in = init_param(store, seed, prefix + ".ffn.w_in", {d, ffn_hidden}, kInitStd);
  b.w_out = init_param(store, seed, prefix + ".ffn.w_out", {ffn_hidden, d}, kInitStd);
  return b;
}

Tensor TransformerBlock::normalized_attention(const Tensor& x) const {
  Tensor x_att = add(x, causal_self_attention(rms_norm(x, attn_norm), wq, wk, wv, wo, n_heads));
  return rms_norm(x_att, ffn_norm);
}

Tensor TransformerBlock::ffn(const Tensor& x_n) const {
  return matmul(mul(silu(matmul(x_n, w_gate)), matmul(x_n, w_in)), w_out);
}

GuidanceVector tap_guidance(const HyperNetwork& language, const Tensor& tap_hidden, int layer_id,
                            std::size_t context_rows) {
  if (context_rows == 0 || context_rows > tap_hidden.dim(0)) {
    throw ShapeError("tap_guidance: context of " + std::to_string(context_rows) + " rows for hidden " +
                     shape_str(tap_hidden.shape()));
  }
  if (context_rows == tap_hidden.dim(0)) return language.guidance(tap_hidden, layer_id);
  return language.guidance(slice_rows(tap_hidden, 0, context_rows), layer_id);
}

Tensor wrap_block(const Tensor& x, const TransformerBlock& block, int block_id, const LanguageExpert* expert,
                  const GuidanceVector* guidance) {
  Tensor x_n = block.normalized_attention(x);
  Tensor out = add(x_n, block.ffn(x_n));
  if (expert != nullptr && expert->hypernet != nullptr && expert->hypernet->has_layer(block_id)) {
    if (guidance == nullptr) {
      throw std::invalid_argument("block " + std::to_string(block_id) + " hosts a language expert but has no guidance");
    }
    out = add(out, expert_output(*expert->hypernet, *guidance, block_id, x_n, expert->act));
  }
  return out;
}

}  // namespace hyperadapt
