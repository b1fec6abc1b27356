#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "hyperadapt/params.hpp"
#include "hyperadapt/tensor.hpp"

namespace hyperadapt {

enum class Modality { visual, language };

/// Pooled, encoded conditioning signal e^(n); values has shape [1, g].
struct GuidanceVector {
  Tensor values;
  Modality modality = Modality::visual;

  std::size_t size() const { return values.numel(); }
};

struct AdapterShape {
  std::size_t d_in = 0;
  std::size_t rank = 0;

  // 2 * d_in * rank + rank + d_in
  std::size_t flat_size() const { return 2 * d_in * rank + rank + d_in; }
};

/// One sample's generated bottleneck adapter. Flat layout, row-major:
/// [w_down (d_in x r) | w_up (r x d_in) | b_down (r) | b_up (d_in)].
struct AdapterWeights {
  Tensor w_down;
  Tensor w_up;
  Tensor b_down;
  Tensor b_up;

  std::size_t d_in() const { return w_down.dim(0); }
  std::size_t rank() const { return w_down.dim(1); }

  static AdapterWeights from_flat(const Tensor& flat, AdapterShape shape);
  std::vector<double> flatten() const;
};

/// Little-endian record: "HADW", u32 version, u64 d_in, u64 rank, f64[P].
std::vector<std::uint8_t> serialize_adapter(const AdapterWeights& weights);
AdapterWeights deserialize_adapter(std::span<const std::uint8_t> bytes);

enum class TargetKind { adapter, full_matrix };

/// A parameter block the hypernetwork emits for one layer.
struct GenerationTarget {
  int layer_id = 0;
  TargetKind kind = TargetKind::adapter;
  AdapterShape adapter{};
  std::size_t n_in = 0;
  std::size_t n_out = 0;

  static GenerationTarget make_adapter(int layer_id, std::size_t d_in, std::size_t rank);
  static GenerationTarget make_full_matrix(int layer_id, std::size_t n_in, std::size_t n_out);
  std::size_t flat_size() const;
};

struct HyperNetConfig {
  Modality modality = Modality::visual;
  std::size_t feature_dim = 0;   // width of the features being pooled
  std::size_t guidance_dim = 64;
  std::size_t hidden_dim = 64;
  bool shared_trunk = true;      // one W_1/W_2 for all layers
  bool latent = false;           // learned z^(n) instead of input guidance
  double up_gain = 0.1;          // applied to the w_up slice of adapters
};

/// Generates per-sample parameters from guidance:
///   e^(n) = tanh(mean_pool(f) E^n + c^n)
///   K^(n) = (e^(n) W_1 + B_1) W_2 + B_2 + b^(n)
///
/// Parameters are registered in the caller's store under `prefix`:
///   <prefix>.enc.<n>.{w,b}, <prefix>.trunk[.<n>].{w1,b1,w2,b2},
///   <prefix>.bias.<n>, and <prefix>.latent.<n> in latent mode.
class HyperNetwork {
 public:
  HyperNetwork(std::string prefix, HyperNetConfig config, std::vector<GenerationTarget> targets,
               ParameterStore& store, std::uint64_t seed);

  const std::string& prefix() const { return prefix_; }
  const HyperNetConfig& config() const { return config_; }
  const std::vector<GenerationTarget>& targets() const { return targets_; }
  const GenerationTarget& target(int layer_id) const;
  bool has_layer(int layer_id) const { return layers_.contains(layer_id); }

  GuidanceVector layer_encode(const Tensor& features, int layer_id) const;
  // layer_encode in input mode, the learned latent in latent mode.
  GuidanceVector guidance(const Tensor& features, int layer_id) const;

  Tensor generate_flat(const GuidanceVector& e, int layer_id) const;
  AdapterWeights generate_adapter(const GuidanceVector& e, int layer_id) const;
  Tensor generate_full_mlp(const GuidanceVector& e, int layer_id) const;
  Tensor latent_mode_generate(int layer_id) const;

 private:
  struct Trunk {
    Tensor w1, b1, w2, b2;
  };
  struct Layer {
    GenerationTarget target;
    Tensor enc_w, enc_b;
    Tensor latent;
    Tensor bias;
    std::size_t trunk = 0;
  };

  const Layer& layer(int layer_id) const;

  std::string prefix_;
  HyperNetConfig config_;
  std::vector<GenerationTarget> targets_;
  std::vector<Trunk> trunks_;
  std::map<int, Layer> layers_;
};

}  // namespace hyperadapt
