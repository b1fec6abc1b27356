#include "hyperadapt/hypernet.hpp"

#include <cmath>
#include <stdexcept>

#include "hyperadapt/binary_io.hpp"
#include "hyperadapt/ops.hpp"

namespace hyperadapt {

namespace {

constexpr char kAdapterMagic[] = "HADW";
constexpr std::uint32_t kAdapterVersion = 1;

std::string layer_key(const std::string& prefix, const char* group, int layer_id, const char* leaf) {
  std::string key = prefix + "." + group + "." + std::to_string(layer_id);
  if (leaf[0] != '\0') key += std::string(".") + leaf;
  return key;
}

}  // namespace

AdapterWeights AdapterWeights::from_flat(const Tensor& flat, AdapterShape shape) {
  if (shape.d_in == 0 || shape.rank == 0) throw ShapeError("adapter dims must be positive");
  if (flat.numel() != shape.flat_size()) {
    throw ShapeError("adapter flat vector has " + std::to_string(flat.numel()) + " values, expected " +
                     std::to_string(shape.flat_size()));
  }
  const std::size_t d = shape.d_in, r = shape.rank;
  AdapterWeights w;
  std::size_t offset = 0;
  w.w_down = view(flat, offset, {d, r});
  offset += d * r;
  w.w_up = view(flat, offset, {r, d});
  offset += r * d;
  w.b_down = view(flat, offset, {r});
  offset += r;
  w.b_up = view(flat, offset, {d});
  return w;
}

std::vector<double> AdapterWeights::flatten() const {
  std::vector<double> out;
  out.reserve(AdapterShape{d_in(), rank()}.flat_size());
  for (const Tensor* part : {&w_down, &w_up, &b_down, &b_up}) {
    out.insert(out.end(), part->data().begin(), part->data().end());
  }
  return out;
}

std::vector<std::uint8_t> serialize_adapter(const AdapterWeights& weights) {
  io::Writer out;
  out.put_bytes(std::string_view(kAdapterMagic, 4));
  out.put(kAdapterVersion);
  out.put(static_cast<std::uint64_t>(weights.d_in()));
  out.put(static_cast<std::uint64_t>(weights.rank()));
  for (double v : weights.flatten()) out.put_f64(v);
  return std::move(out.buffer());
}

AdapterWeights deserialize_adapter(std::span<const std::uint8_t> bytes) {
  io::Reader in(bytes);
  if (in.get_bytes(4) != std::string_view(kAdapterMagic, 4)) {
    throw std::runtime_error("not an adapter record (bad magic)");
  }
  if (auto version = in.get<std::uint32_t>(); version != kAdapterVersion) {
    throw std::runtime_error("unsupported adapter record version " + std::to_string(version));
  }
  AdapterShape shape{in.get<std::uint64_t>(), in.get<std::uint64_t>()};
  if (in.remaining() != shape.flat_size() * sizeof(double)) {
    throw std::runtime_error("adapter record payload size does not match its shape header");
  }
  std::vector<double> flat(shape.flat_size());
  for (auto& v : flat) v = in.get_f64();
  const std::size_t n = flat.size();
  return AdapterWeights::from_flat(Tensor::from({n}, std::move(flat)), shape);
}

GenerationTarget GenerationTarget::make_adapter(int layer_id, std::size_t d_in, std::size_t rank) {
  if (rank == 0 || d_in == 0) throw std::invalid_argument("adapter dims must be positive");
  if (rank >= d_in) {
    throw std::invalid_argument("adapter bottleneck " + std::to_string(rank) + " must be below d_in " +
                                std::to_string(d_in));
  }
  GenerationTarget t;
  t.layer_id = layer_id;
  t.kind = TargetKind::adapter;
  t.adapter = {d_in, rank};
  return t;
}

GenerationTarget GenerationTarget::make_full_matrix(int layer_id, std::size_t n_in, std::size_t n_out) {
  if (n_in == 0 || n_out == 0) throw std::invalid_argument("matrix dims must be positive");
  GenerationTarget t;
  t.layer_id = layer_id;
  t.kind = TargetKind::full_matrix;
  t.n_in = n_in;
  t.n_out = n_out;
  return t;
}

std::size_t GenerationTarget::flat_size() const {
  return kind == TargetKind::adapter ? adapter.flat_size() : n_in * n_out;
}

HyperNetwork::HyperNetwork(std::string prefix, HyperNetConfig config, std::vector<GenerationTarget> targets,
                           ParameterStore& store, std::uint64_t seed)
    : prefix_(std::move(prefix)), config_(config), targets_(std::move(targets)) {
  if (targets_.empty()) throw std::invalid_argument(prefix_ + ": hypernetwork needs at least one target");
  if (config_.guidance_dim == 0 || config_.hidden_dim == 0 || (!config_.latent && config_.feature_dim == 0)) {
    throw std::invalid_argument(prefix_ + ": hypernetwork dims must be positive");
  }
  const std::size_t g = config_.guidance_dim;
  const std::size_t h = config_.hidden_dim;

  auto param = [&](const std::string& name, Shape shape, double stddev) {
    auto rng = named_rng(seed, name);
    return store.add(name, shape, normal_values(rng, shape_numel(shape), stddev));
  };
  // Output-side init: only the w_down slice is random so the generated
  // adapter starts as an exact no-op (w_up = 0) with a live gradient path.
  auto output_init = [&](const std::string& name, Shape shape, const GenerationTarget& target, double stddev) {
    std::vector<double> values(shape_numel(shape), 0.0);
    if (target.kind == TargetKind::adapter) {
      auto rng = named_rng(seed, name);
      const std::size_t cols = shape.back();
      const std::size_t rows = values.size() / cols;
      const std::size_t down = target.adapter.d_in * target.adapter.rank;
      std::normal_distribution<double> dist(0.0, stddev);
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < down; ++c) values[r * cols + c] = dist(rng);
    }
    return store.add(name, std::move(shape), std::move(values));
  };
  auto make_trunk = [&](const std::string& base, const GenerationTarget& target) {
    const std::size_t p = target.flat_size();
    Trunk t;
    t.w1 = param(base + ".w1", {g, h}, 1.0 / std::sqrt(static_cast<double>(g)));
    t.b1 = param(base + ".b1", {h}, 0.0);
    t.w2 = output_init(base + ".w2", {h, p}, target, 0.02);
    t.b2 = param(base + ".b2", {p}, 0.0);
    trunks_.push_back(t);
    return trunks_.size() - 1;
  };

  for (const auto& target : targets_) {
    if (layers_.contains(target.layer_id)) {
      throw std::invalid_argument(prefix_ + ": layer " + std::to_string(target.layer_id) + " registered twice");
    }
    if (config_.shared_trunk && target.flat_size() != targets_.front().flat_size()) {
      throw std::invalid_argument(prefix_ + ": a shared trunk needs equal flat sizes across targets");
    }
  }
  if (config_.shared_trunk) make_trunk(prefix_ + ".trunk", targets_.front());

  for (const auto& target : targets_) {
    const int n = target.layer_id;
    Layer layer;
    layer.target = target;
    if (config_.latent) {
      layer.latent = param(layer_key(prefix_, "latent", n, ""), {1, g}, 1.0);
    } else {
      layer.enc_w = param(layer_key(prefix_, "enc", n, "w"), {config_.feature_dim, g},
                          1.0 / std::sqrt(static_cast<double>(config_.feature_dim)));
      layer.enc_b = param(layer_key(prefix_, "enc", n, "b"), {g}, 0.0);
    }
    layer.trunk = config_.shared_trunk ? 0 : make_trunk(layer_key(prefix_, "trunk", n, ""), target);
    const double bias_std =
        target.kind == TargetKind::adapter ? 1.0 / std::sqrt(static_cast<double>(target.adapter.d_in)) : 0.0;
    layer.bias = output_init(layer_key(prefix_, "bias", n, ""), {target.flat_size()}, target, bias_std);
    layers_.emplace(n, std::move(layer));
  }
}

const HyperNetwork::Layer& HyperNetwork::layer(int layer_id) const {
  auto it = layers_.find(layer_id);
  if (it == layers_.end()) {
    throw std::out_of_range(prefix_ + ": layer " + std::to_string(layer_id) + " is not registered");
  }
  return it->second;
}

const GenerationTarget& HyperNetwork::target(int layer_id) const { return layer(layer_id).target; }

GuidanceVector HyperNetwork::layer_encode(const Tensor& features, int layer_id) const {
  const Layer& l = layer(layer_id);
  if (config_.latent) throw std::logic_error(prefix_ + ": layer_encode is unavailable in latent mode");
  if (features.rank() != 2 || features.dim(1) != config_.feature_dim) {
    throw ShapeError(prefix_ + ": guidance features " + shape_str(features.shape()) + " need width " +
                     std::to_string(config_.feature_dim));
  }
  Tensor pooled = mean_rows(features);
  return {tanh(add_row(matmul(pooled, l.enc_w), l.enc_b)), config_.modality};
}

GuidanceVector HyperNetwork::guidance(const Tensor& features, int layer_id) const {
  if (config_.latent) return {layer(layer_id).latent, config_.modality};
  return layer_encode(features, layer_id);
}

Tensor HyperNetwork::generate_flat(const GuidanceVector& e, int layer_id) const {
  const Layer& l = layer(layer_id);
  if (e.size() != config_.guidance_dim) {
    throw ShapeError(prefix_ + ": guidance has length " + std::to_string(e.size()) + ", expected " +
                     std::to_string(config_.guidance_dim));
  }
  const Trunk& t = trunks_[l.trunk];
  Tensor hidden = add_row(matmul(reshape(e.values, {1, config_.guidance_dim}), t.w1), t.b1);
  Tensor w = add_row(matmul(hidden, t.w2), t.b2);
  Tensor k = add_row(w, l.bias);
  return reshape(k, {l.target.flat_size()});
}

AdapterWeights HyperNetwork::generate_adapter(const GuidanceVector& e, int layer_id) const {
  const Layer& l = layer(layer_id);
  if (l.target.kind != TargetKind::adapter) {
    throw std::invalid_argument(prefix_ + ": layer " + std::to_string(layer_id) + " is not an adapter target");
  }
  Tensor flat = generate_flat(e, layer_id);
  AdapterWeights w = AdapterWeights::from_flat(flat, l.target.adapter);
  w.w_up = scale(w.w_up, config_.up_gain);
  return w;
}

Tensor HyperNetwork::generate_full_mlp(const GuidanceVector& e, int layer_id) const {
  const Layer& l = layer(layer_id);
  if (l.target.kind != TargetKind::full_matrix) {
    throw std::invalid_argument(prefix_ + ": layer " + std::to_string(layer_id) + " is not a full-matrix target");
  }
  return reshape(generate_flat(e, layer_id), {l.target.n_in, l.target.n_out});
}

Tensor HyperNetwork::latent_mode_generate(int layer_id) const {
  const Layer& l = layer(layer_id);
  if (!config_.latent) throw std::logic_error(prefix_ + ": latent mode is not enabled");
  return generate_flat({l.latent, config_.modality}, layer_id);
}

}  // namespace hyperadapt
