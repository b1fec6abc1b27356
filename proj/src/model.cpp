#include "hyperadapt/model.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <map>
#include <sstream>
#include <stdexcept>

#include "hyperadapt/ops.hpp"

namespace hyperadapt {

namespace {

constexpr double kInitStd = 0.02;

std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::size_t parse_size(const std::string& key, const std::string& text) {
  std::size_t value = 0;
  auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
  if (ec != std::errc() || ptr != text.data() + text.size()) {
    throw std::invalid_argument("model key '" + key + "' expects a non-negative integer, got '" + text + "'");
  }
  return value;
}

int parse_int(const std::string& key, const std::string& text) {
  int value = 0;
  auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
  if (ec != std::errc() || ptr != text.data() + text.size()) {
    throw std::invalid_argument("model key '" + key + "' expects an integer, got '" + text + "'");
  }
  return value;
}

bool parse_bool(const std::string& key, const std::string& text) {
  if (text == "true") return true;
  if (text == "false") return false;
  throw std::invalid_argument("model key '" + key + "' expects true/false, got '" + text + "'");
}

double parse_double(const std::string& key, const std::string& text) {
  try {
    std::size_t used = 0;
    double v = std::stod(text, &used);
    if (used == text.size()) return v;
  } catch (const std::exception&) {
  }
  throw std::invalid_argument("model key '" + key + "' expects a number, got '" + text + "'");
}

Tensor init_param(ParameterStore& store, std::uint64_t seed, const std::string& name, Shape shape, double stddev) {
  auto rng = named_rng(seed, name);
  return store.add(name, shape, normal_values(rng, shape_numel(shape), stddev));
}

}  // namespace

ExpertOptions ModelSpec::expert_options() const {
  ExpertOptions o;
  o.guidance_dim = guidance_dim;
  o.bottleneck = bottleneck;
  o.generator_hidden = generator_hidden;
  o.act = adapter_act;
  o.structure = structure;
  o.latent = latent_guidance;
  o.shared_trunk = shared_trunk;
  o.up_gain = up_gain;
  return o;
}

void ModelSpec::validate() const {
  using Dim = std::pair<const char*, std::size_t>;
  for (auto [name, value] : std::initializer_list<Dim>{{"d_v", d_v}, {"d", d}, {"n_blocks", n_blocks}, {"n_heads", n_heads},
                             {"vocab_size", vocab_size}, {"max_seq", max_seq}, {"ffn_hidden", ffn_hidden},
                             {"guidance_dim", guidance_dim}, {"bottleneck", bottleneck},
                             {"generator_hidden", generator_hidden}}) {
    if (value == 0) throw std::invalid_argument(std::string("model dim '") + name + "' must be positive");
  }
  if (d % n_heads != 0) {
    throw std::invalid_argument("d=" + std::to_string(d) + " is not divisible by n_heads=" + std::to_string(n_heads));
  }
  if ((has_visual_expert() || has_language_expert()) && structure == ExpertStructure::adapter && bottleneck >= d) {
    throw std::invalid_argument("bottleneck " + std::to_string(bottleneck) + " must be below d=" + std::to_string(d));
  }
  if (placement) ExpertPlacement::make(placement->block_ids, placement->guidance_tap, n_blocks);
}

std::vector<std::pair<std::string, std::string>> ModelSpec::to_kv() const {
  std::string blocks;
  if (placement) {
    for (std::size_t i = 0; i < placement->block_ids.size(); ++i) {
      blocks += (i ? "," : "") + std::to_string(placement->block_ids[i]);
    }
  }
  return {
      {"d_v", std::to_string(d_v)},
      {"d", std::to_string(d)},
      {"n_blocks", std::to_string(n_blocks)},
      {"n_heads", std::to_string(n_heads)},
      {"vocab_size", std::to_string(vocab_size)},
      {"max_seq", std::to_string(max_seq)},
      {"ffn_hidden", std::to_string(ffn_hidden)},
      {"projector_variant", std::string(to_string(projector_variant))},
      {"expert_blocks", blocks},
      {"guidance_tap", std::to_string(placement ? placement->guidance_tap : -1)},
      {"guidance_dim", std::to_string(guidance_dim)},
      {"bottleneck", std::to_string(bottleneck)},
      {"generator_hidden", std::to_string(generator_hidden)},
      {"adapter_act", std::string(to_string(adapter_act))},
      {"structure", std::string(to_string(structure))},
      {"latent_guidance", latent_guidance ? "true" : "false"},
      {"shared_trunk", shared_trunk ? "true" : "false"},
      {"up_gain", format_double(up_gain)},
  };
}

ModelSpec ModelSpec::from_kv(const std::vector<std::pair<std::string, std::string>>& kv) {
  ModelSpec s;
  std::string blocks;
  int tap = -1;
  for (const auto& [key, value] : kv) {
    if (key == "d_v") s.d_v = parse_size(key, value);
    else if (key == "d") s.d = parse_size(key, value);
    else if (key == "n_blocks") s.n_blocks = parse_size(key, value);
    else if (key == "n_heads") s.n_heads = parse_size(key, value);
    else if (key == "vocab_size") s.vocab_size = parse_size(key, value);
    else if (key == "max_seq") s.max_seq = parse_size(key, value);
    else if (key == "ffn_hidden") s.ffn_hidden = parse_size(key, value);
    else if (key == "projector_variant") s.projector_variant = parse_variant(value);
    else if (key == "expert_blocks") blocks = value;
    else if (key == "guidance_tap") tap = parse_int(key, value);
    else if (key == "guidance_dim") s.guidance_dim = parse_size(key, value);
    else if (key == "bottleneck") s.bottleneck = parse_size(key, value);
    else if (key == "generator_hidden") s.generator_hidden = parse_size(key, value);
    else if (key == "adapter_act") s.adapter_act = parse_activation(value);
    else if (key == "structure") s.structure = parse_structure(value);
    else if (key == "latent_guidance") s.latent_guidance = parse_bool(key, value);
    else if (key == "shared_trunk") s.shared_trunk = parse_bool(key, value);
    else if (key == "up_gain") s.up_gain = parse_double(key, value);
    else throw std::invalid_argument("unknown model key '" + key + "'");
  }
  if (!blocks.empty()) {
    std::vector<int> ids;
    std::stringstream ss(blocks);
    for (std::string item; std::getline(ss, item, ',');) ids.push_back(parse_int("expert_blocks", item));
    s.placement = ExpertPlacement::make(std::move(ids), tap, s.n_blocks);
  }
  s.validate();
  return s;
}

Tensor Batch::vision_of(std::size_t i) const {
  const std::size_t n = n_v * d_v;
  return Tensor::from({n_v, d_v}, std::vector<double>(vision.begin() + i * n, vision.begin() + (i + 1) * n));
}

std::span<const int> Batch::text_of(std::size_t i) const { return std::span(text_ids).subspan(i * n_t, n_t); }

std::span<const int> Batch::targets_of(std::size_t i) const { return std::span(target_ids).subspan(i * n_t, n_t); }

std::size_t Batch::context_of(std::size_t i) const {
  const auto targets = targets_of(i);
  for (std::size_t j = 0; j < targets.size(); ++j) {
    if (targets[j] != kIgnoreIndex) return j + 1;
  }
  return n_t;
}

void Batch::validate() const {
  if (size == 0 || n_v == 0 || d_v == 0 || n_t == 0) throw ShapeError("batch extents must be positive");
  if (vision.size() != size * n_v * d_v || text_ids.size() != size * n_t || target_ids.size() != size * n_t) {
    throw ShapeError("batch buffers do not match [b=" + std::to_string(size) + ", n_v=" + std::to_string(n_v) +
                     ", d_v=" + std::to_string(d_v) + ", n_t=" + std::to_string(n_t) + "]");
  }
}

Model::Model(ModelSpec spec, std::uint64_t seed) : spec_(std::move(spec)) {
  spec_.validate();
  const std::size_t d = spec_.d;
  token_embedding_ = init_param(params_, seed, "embed.tokens", {spec_.vocab_size, d}, kInitStd);
  position_embedding_ = init_param(params_, seed, "embed.positions", {spec_.max_seq, d}, kInitStd);
  const ExpertOptions options = spec_.expert_options();
  projector_ = std::make_unique<Projector>(spec_.projector_variant, spec_.d_v, d, options, params_, seed);
  for (std::size_t i = 0; i < spec_.n_blocks; ++i) {
    blocks_.push_back(
        TransformerBlock::create("block." + std::to_string(i), d, spec_.ffn_hidden, spec_.n_heads, params_, seed));
  }
  if (spec_.placement) {
    std::vector<GenerationTarget> targets;
    for (int id : spec_.placement->block_ids) {
      targets.push_back(spec_.structure == ExpertStructure::adapter
                            ? GenerationTarget::make_adapter(id, d, spec_.bottleneck)
                            : GenerationTarget::make_full_matrix(id, d, d));
    }
    HyperNetConfig config{Modality::language,  d,
                          spec_.guidance_dim,  spec_.generator_hidden,
                          spec_.shared_trunk,  spec_.latent_guidance,
                          spec_.up_gain};
    language_ = std::make_unique<HyperNetwork>("hyper.language", config, std::move(targets), params_, seed);
  }
  final_norm_ = params_.add("final_norm", {d}, std::vector<double>(d, 1.0));
  lm_head_ = init_param(params_, seed, "lm_head", {d, spec_.vocab_size}, kInitStd);
}

Tensor Model::run(const Tensor& vision, std::span<const int> text_ids, std::size_t context_text,
                  std::vector<GeneratedBlock>* trace) const {
  if (vision.rank() != 2 || vision.dim(1) != spec_.d_v) {
    throw ShapeError("vision features " + shape_str(vision.shape()) + " need width d_v=" + std::to_string(spec_.d_v));
  }
  if (text_ids.empty()) throw ShapeError("empty text sequence");
  const std::size_t total = vision.dim(0) + text_ids.size();
  const std::size_t context = vision.dim(0) + std::min(context_text, text_ids.size());
  if (total > spec_.max_seq) {
    throw std::length_error("sequence of " + std::to_string(total) + " tokens exceeds max_seq=" +
                            std::to_string(spec_.max_seq));
  }

  if (trace != nullptr && projector_->visual_expert() != nullptr) {
    const HyperNetwork& visual = *projector_->visual_expert();
    for (const auto& target : visual.targets()) {
      GuidanceVector e = visual.guidance(vision, target.layer_id);
      GeneratedBlock block{"visual." + std::to_string(target.layer_id), target, std::nullopt, Tensor()};
      if (target.kind == TargetKind::adapter) block.adapter = visual.generate_adapter(e, target.layer_id);
      else block.matrix = visual.generate_full_mlp(e, target.layer_id);
      trace->push_back(std::move(block));
    }
  }

  Tensor visual_tokens = projector_->project_visual(vision);
  Tensor text = embedding_lookup(token_embedding_, text_ids);
  Tensor x = add(concat_rows({visual_tokens, text}), slice_rows(position_embedding_, 0, total));

  const ExpertPlacement* placement = spec_.placement ? &*spec_.placement : nullptr;
  Tensor tap;
  if (placement != nullptr && placement->guidance_tap == -1) tap = x;
  LanguageExpert expert{language_.get(), spec_.adapter_act};
  for (std::size_t i = 0; i < blocks_.size(); ++i) {
    const int id = static_cast<int>(i);
    std::optional<GuidanceVector> guidance;
    if (language_ && language_->has_layer(id)) {
      guidance = tap_guidance(*language_, tap, id, context);
      if (trace != nullptr) {
        const auto& target = language_->target(id);
        GeneratedBlock block{"language." + std::to_string(id), target, std::nullopt, Tensor()};
        if (target.kind == TargetKind::adapter) block.adapter = language_->generate_adapter(*guidance, id);
        else block.matrix = language_->generate_full_mlp(*guidance, id);
        trace->push_back(std::move(block));
      }
    }
    x = wrap_block(x, blocks_[i], id, &expert, guidance ? &*guidance : nullptr);
    if (placement != nullptr && placement->guidance_tap == id) tap = x;
  }
  return matmul(rms_norm(x, final_norm_), lm_head_);
}

Tensor Model::forward_sample(const Tensor& vision, std::span<const int> text_ids, std::size_t context_text) const {
  return run(vision, text_ids, context_text, nullptr);
}

Tensor Model::forward(const Batch& batch) const {
  batch.validate();
  std::vector<Tensor> logits;
  logits.reserve(batch.size);
  for (std::size_t i = 0; i < batch.size; ++i) logits.push_back(run(batch.vision_of(i), batch.text_of(i), batch.context_of(i), nullptr));
  return stack(logits);
}

std::vector<GeneratedBlock> Model::generated_blocks(const Tensor& vision, std::span<const int> text_ids,
                                                    std::size_t context_text) const {
  std::vector<GeneratedBlock> trace;
  run(vision, text_ids, context_text, &trace);
  return trace;
}

std::vector<int> Model::greedy_decode(const Tensor& vision, std::vector<int> prompt, std::size_t max_new) const {
  NoGradGuard no_grad;
  std::vector<int> generated;
  const std::size_t context = prompt.size();
  for (std::size_t step = 0; step < max_new && vision.dim(0) + prompt.size() < spec_.max_seq; ++step) {
    Tensor logits = run(vision, prompt, context, nullptr);
    const std::size_t v = spec_.vocab_size;
    auto last = logits.data().subspan((logits.dim(0) - 1) * v, v);
    int next = static_cast<int>(std::max_element(last.begin(), last.end()) - last.begin());
    prompt.push_back(next);
    generated.push_back(next);
  }
  return generated;
}

void Model::zero_generators() {
  for (auto& entry : params_.entries()) {
    if (entry.name.starts_with("hyper.")) {
      auto data = entry.tensor.mutable_data();
      std::fill(data.begin(), data.end(), 0.0);
    }
  }
}

Tensor loss(const Tensor& logits, const Batch& batch) {
  batch.validate();
  if (logits.rank() != 3 || logits.dim(0) != batch.size || logits.dim(1) != batch.n_v + batch.n_t) {
    throw ShapeError("loss: logits " + shape_str(logits.shape()) + " do not match the batch");
  }
  std::vector<int> targets;
  targets.reserve(batch.size * (batch.n_v + batch.n_t));
  for (std::size_t i = 0; i < batch.size; ++i) {
    targets.insert(targets.end(), batch.n_v, kIgnoreIndex);
    auto t = batch.targets_of(i);
    targets.insert(targets.end(), t.begin(), t.end());
  }
  if (std::all_of(targets.begin(), targets.end(), [](int t) { return t == kIgnoreIndex; })) {
    throw std::invalid_argument("loss: batch has no response positions");
  }
  const std::size_t rows = logits.dim(0) * logits.dim(1);
  return softmax_cross_entropy(reshape(logits, {rows, logits.dim(2)}), targets);
}

std::size_t hypernet_param_count(std::size_t feature_dim, std::size_t guidance_dim, std::size_t hidden,
                                 std::span<const std::size_t> flat_sizes, bool shared_trunk, bool latent) {
  auto trunk = [&](std::size_t p) { return guidance_dim * hidden + hidden + hidden * p + p; };
  std::size_t total = 0;
  for (std::size_t p : flat_sizes) {
    total += latent ? guidance_dim : feature_dim * guidance_dim + guidance_dim;
    total += p;  // b^(n)
    if (!shared_trunk) total += trunk(p);
  }
  if (shared_trunk && !flat_sizes.empty()) total += trunk(flat_sizes.front());
  return total;
}

namespace {

struct ArmCounts {
  std::vector<AuditRow> rows;
  std::size_t direct = 0, hypernet = 0, generated = 0;
};

ArmCounts count_arm(const ModelSpec& spec) {
  const std::size_t d = spec.d;
  ArmCounts arm;
  auto push = [&](std::string name, std::size_t direct, std::size_t hyper, std::size_t generated) {
    arm.rows.push_back({std::move(name), direct, hyper, generated});
    arm.direct += direct;
    arm.hypernet += hyper;
    arm.generated += generated;
  };
  auto flat_size = [&]() {
    return spec.structure == ExpertStructure::adapter ? AdapterShape{d, spec.bottleneck}.flat_size() : d * d;
  };

  push("token_embedding", spec.vocab_size * d, 0, 0);
  push("position_embedding", spec.max_seq * d, 0, 0);
  push("projector.static", spec.d_v * d + d + d * d + d, 0, 0);
  const bool first = spec.projector_variant == ProjectorVariant::V1 ||
                     spec.projector_variant == ProjectorVariant::V1andV2;
  const bool second = spec.projector_variant == ProjectorVariant::V2 ||
                      spec.projector_variant == ProjectorVariant::V1andV2;
  if (first) push("projector.lift", spec.d_v * d, 0, 0);
  push("blocks", spec.n_blocks * (2 * d + 4 * d * d + 3 * d * spec.ffn_hidden), 0, 0);
  push("final_norm", d, 0, 0);
  push("lm_head", d * spec.vocab_size, 0, 0);
  if (first || second) {
    std::vector<std::size_t> sizes((first ? 1 : 0) + (second ? 1 : 0), flat_size());
    std::size_t gen = 0;
    for (auto p : sizes) gen += p;
    push("visual_expert", 0,
         hypernet_param_count(spec.d_v, spec.guidance_dim, spec.generator_hidden, sizes, spec.shared_trunk,
                              spec.latent_guidance),
         gen);
  }
  if (spec.placement) {
    std::vector<std::size_t> sizes(spec.placement->block_ids.size(), flat_size());
    std::size_t gen = 0;
    for (auto p : sizes) gen += p;
    push("language_expert", 0,
         hypernet_param_count(d, spec.guidance_dim, spec.generator_hidden, sizes, spec.shared_trunk,
                              spec.latent_guidance),
         gen);
  }
  return arm;
}

}  // namespace

AuditReport audit_params(const ModelSpec& spec) {
  spec.validate();
  ArmCounts own = count_arm(spec);
  AuditReport report;
  report.rows = std::move(own.rows);
  report.direct = own.direct;
  report.hypernet = own.hypernet;
  report.generated = own.generated;

  ModelSpec base = spec;
  base.projector_variant = ProjectorVariant::Static;
  base.placement.reset();
  report.static_baseline = count_arm(base).direct;

  ModelSpec adapter = spec;
  adapter.structure = ExpertStructure::adapter;
  ArmCounts a = count_arm(adapter);
  report.adapter_expert = a.direct + a.hypernet;
  report.adapter_generated = a.generated;

  ModelSpec full = spec;
  full.structure = ExpertStructure::full_matrix;
  ArmCounts f = count_arm(full);
  report.full_generation = f.direct + f.hypernet;
  report.full_generated = f.generated;
  return report;
}

std::size_t matched_ffn_hidden(const ModelSpec& dynamic, const ModelSpec& static_spec) {
  const std::size_t target = audit_params(dynamic).trainable();
  ModelSpec probe = static_spec;
  probe.ffn_hidden = 1;
  const std::size_t base = audit_params(probe).trainable() - probe.n_blocks * 3 * probe.d;
  const double per_unit = static_cast<double>(probe.n_blocks * 3 * probe.d);
  if (target <= base) return 1;
  return std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(static_cast<double>(target - base) / per_unit)));
}

}  // namespace hyperadapt
