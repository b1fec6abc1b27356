#include <gtest/gtest.h>

#include <cmath>

#include "hyperadapt/hypernet.hpp"
#include "hyperadapt/ops.hpp"
#include "support.hpp"

using namespace hyperadapt;
using namespace testing_support;

namespace {

void fill(ParameterStore& store, const std::string& name, std::vector<double> values) {
  auto data = store.get(name).mutable_data();
  ASSERT_EQ(data.size(), values.size()) << name;
  std::copy(values.begin(), values.end(), data.begin());
}

void randomize(ParameterStore& store, std::mt19937_64& rng, double scale) {
  for (auto& e : store.entries()) {
    auto v = uniform(rng, e.tensor.numel(), -scale, scale);
    std::copy(v.begin(), v.end(), e.tensor.mutable_data().begin());
  }
}

GuidanceVector random_guidance(std::mt19937_64& rng, std::size_t g, Modality m = Modality::visual) {
  return {Tensor::from({1, g}, uniform(rng, g, -1.0, 1.0)), m};
}

HyperNetConfig small_config(std::size_t feature_dim, std::size_t g, std::size_t h) {
  HyperNetConfig c;
  c.feature_dim = feature_dim;
  c.guidance_dim = g;
  c.hidden_dim = h;
  return c;
}

}  // namespace

TEST(FlatSize, AdapterLaw) {
  EXPECT_EQ((AdapterShape{64, 16}.flat_size()), 2128u);
  EXPECT_EQ((AdapterShape{32, 16}.flat_size()), 1072u);
  EXPECT_EQ((AdapterShape{32, 8}.flat_size()), 552u);
  EXPECT_EQ(GenerationTarget::make_full_matrix(0, 64, 64).flat_size(), 4096u);
  EXPECT_EQ(GenerationTarget::make_adapter(0, 64, 16).flat_size(), 2128u);
}

TEST(FlatSize, LawOnRandomShapes) {
  std::mt19937_64 rng(1);
  std::uniform_int_distribution<std::size_t> dim(2, 200);
  for (int i = 0; i < 200; ++i) {
    const std::size_t d = dim(rng);
    const std::size_t r = 1 + rng() % (d - 1);
    std::size_t count = 0;
    for (std::size_t a = 0; a < d; ++a)
      for (std::size_t b = 0; b < r; ++b) count += 2;  // one w_down and one w_up entry
    count += r + d;
    EXPECT_EQ((AdapterShape{d, r}.flat_size()), count);
  }
}

TEST(FlatSize, IllegalAdapterRejected) {
  EXPECT_THROW(GenerationTarget::make_adapter(0, 16, 16), std::invalid_argument);
  EXPECT_THROW(GenerationTarget::make_adapter(0, 16, 0), std::invalid_argument);
  EXPECT_THROW(AdapterWeights::from_flat(Tensor::zeros({10}), {4, 2}), ShapeError);
}

TEST(AdapterWeights, FromFlatRoundTrip) {
  std::mt19937_64 rng(2);
  AdapterShape shape{5, 3};
  auto flat = uniform(rng, shape.flat_size());
  AdapterWeights w = AdapterWeights::from_flat(Tensor::from({flat.size()}, flat), shape);
  EXPECT_EQ(w.w_down.shape(), (Shape{5, 3}));
  EXPECT_EQ(w.w_up.shape(), (Shape{3, 5}));
  EXPECT_EQ(w.b_down.shape(), (Shape{3}));
  EXPECT_EQ(w.b_up.shape(), (Shape{5}));
  EXPECT_EQ(w.w_down.at(1, 2), flat[1 * 3 + 2]);
  EXPECT_EQ(w.w_up.at(2, 4), flat[15 + 2 * 5 + 4]);
  EXPECT_EQ(w.b_down.at(1), flat[30 + 1]);
  EXPECT_EQ(w.b_up.at(4), flat[33 + 4]);
  EXPECT_TRUE(bit_equal(w.flatten(), flat));
}

TEST(AdapterWeights, SerializationRoundTrip) {
  std::mt19937_64 rng(3);
  AdapterShape shape{6, 2};
  auto flat = uniform(rng, shape.flat_size(), -1e3, 1e3);
  AdapterWeights w = AdapterWeights::from_flat(Tensor::from({flat.size()}, flat), shape);
  auto bytes = serialize_adapter(w);
  EXPECT_EQ(bytes.size(), 4 + 4 + 8 + 8 + 8 * shape.flat_size());
  EXPECT_EQ(std::string(bytes.begin(), bytes.begin() + 4), "HADW");
  AdapterWeights back = deserialize_adapter(bytes);
  EXPECT_EQ(back.d_in(), 6u);
  EXPECT_EQ(back.rank(), 2u);
  EXPECT_TRUE(bit_equal(back.flatten(), flat));

  auto bad = bytes;
  bad[0] = 'X';
  EXPECT_ANY_THROW(deserialize_adapter(bad));
  bytes.pop_back();
  EXPECT_ANY_THROW(deserialize_adapter(bytes));
}

TEST(LayerEncode, MatchesPoolThenTanh) {
  ParameterStore store;
  HyperNetwork hn("hn", small_config(3, 2, 4), {GenerationTarget::make_full_matrix(0, 2, 2)}, store, 7);
  fill(store, "hn.enc.0.w", {0.5, -1.0, 0.25, 2.0, -0.75, 0.1});
  fill(store, "hn.enc.0.b", {0.2, -0.3});
  Tensor f = Tensor::from({2, 3}, {1.0, 2.0, 3.0, -1.0, 0.0, 1.0});
  GuidanceVector e = hn.layer_encode(f, 0);
  // mean over rows: [0, 1, 2]
  const double e0 = std::tanh(0 * 0.5 + 1 * 0.25 + 2 * -0.75 + 0.2);
  const double e1 = std::tanh(0 * -1.0 + 1 * 2.0 + 2 * 0.1 - 0.3);
  EXPECT_EQ(e.values.shape(), (Shape{1, 2}));
  EXPECT_NEAR(e.values.at(0), e0, 1e-15);
  EXPECT_NEAR(e.values.at(1), e1, 1e-15);
  EXPECT_EQ(e.modality, Modality::visual);
}

TEST(LayerEncode, IdenticalTokensPoolToThemselves) {
  ParameterStore store;
  HyperNetwork hn("hn", small_config(4, 3, 4), {GenerationTarget::make_adapter(0, 4, 2)}, store, 1);
  std::vector<double> row{0.3, -0.2, 0.9, 0.0};
  std::vector<double> many;
  for (int i = 0; i < 5; ++i) many.insert(many.end(), row.begin(), row.end());
  auto one = hn.layer_encode(Tensor::from({1, 4}, row), 0);
  auto five = hn.layer_encode(Tensor::from({5, 4}, many), 0);
  for (std::size_t i = 0; i < 3; ++i) EXPECT_NEAR(one.values.at(i), five.values.at(i), 1e-15);
}

TEST(LayerEncode, WrongWidthThrows) {
  ParameterStore store;
  HyperNetwork hn("hn", small_config(4, 3, 4), {GenerationTarget::make_adapter(0, 4, 2)}, store, 1);
  EXPECT_THROW(hn.layer_encode(Tensor::zeros({2, 5}), 0), ShapeError);
  EXPECT_ANY_THROW(hn.layer_encode(Tensor::zeros({2, 4}), 9));
}

TEST(GenerateFlat, HandComputedChain) {
  // g = 2, h = 3, P = 4
  ParameterStore store;
  HyperNetwork hn("hn", small_config(2, 2, 3), {GenerationTarget::make_full_matrix(0, 2, 2)}, store, 0);
  const std::vector<double> w1{1, 0, -1, 0.5, 2, 0};  // [2,3]
  const std::vector<double> b1{0.1, 0.2, 0.3};
  const std::vector<double> w2{1, 2, 3, 4, 0, -1, 0, 1, 0.5, 0.5, 0.5, 0.5};  // [3,4]
  const std::vector<double> b2{0, 1, 0, 1};
  const std::vector<double> bn{10, 20, 30, 40};
  fill(store, "hn.trunk.w1", w1);
  fill(store, "hn.trunk.b1", b1);
  fill(store, "hn.trunk.w2", w2);
  fill(store, "hn.trunk.b2", b2);
  fill(store, "hn.bias.0", bn);
  const double e[2] = {0.5, -2.0};
  double hidden[3];
  for (int j = 0; j < 3; ++j) hidden[j] = e[0] * w1[j] + e[1] * w1[3 + j] + b1[j];
  Tensor k = hn.generate_flat({Tensor::from({1, 2}, {e[0], e[1]}), Modality::visual}, 0);
  ASSERT_EQ(k.shape(), (Shape{4}));
  for (int p = 0; p < 4; ++p) {
    double v = b2[p] + bn[p];
    for (int j = 0; j < 3; ++j) v += hidden[j] * w2[j * 4 + p];
    EXPECT_NEAR(k.at(p), v, 1e-13) << p;
  }
  // The full-matrix view is the same buffer, row-major.
  Tensor m = hn.generate_full_mlp({Tensor::from({1, 2}, {e[0], e[1]}), Modality::visual}, 0);
  EXPECT_EQ(m.shape(), (Shape{2, 2}));
  EXPECT_TRUE(bit_equal(m.data(), k.data()));
}

TEST(GenerateFlat, ZeroGeneratorLeavesOnlyTheLayerBias) {
  std::mt19937_64 rng(4);
  ParameterStore store;
  HyperNetwork hn("hn", small_config(8, 6, 5), {GenerationTarget::make_adapter(3, 8, 2)}, store, 2);
  randomize(store, rng, 1.0);
  for (const char* n : {"hn.trunk.w1", "hn.trunk.b1", "hn.trunk.w2", "hn.trunk.b2"}) {
    auto d = store.get(n).mutable_data();
    std::fill(d.begin(), d.end(), 0.0);
  }
  Tensor k = hn.generate_flat(random_guidance(rng, 6), 3);
  EXPECT_TRUE(bit_equal(k.data(), store.get("hn.bias.3").data()));
}

TEST(GenerateFlat, WrongGuidanceLengthThrows) {
  ParameterStore store;
  HyperNetwork hn("hn", small_config(8, 6, 5), {GenerationTarget::make_adapter(0, 8, 2)}, store, 2);
  EXPECT_THROW(hn.generate_flat({Tensor::zeros({1, 5}), Modality::visual}, 0), ShapeError);
}

TEST(GenerateAdapter, ScalesOnlyTheUpProjection) {
  std::mt19937_64 rng(5);
  ParameterStore store;
  HyperNetConfig c = small_config(8, 4, 4);
  c.up_gain = 0.25;
  HyperNetwork hn("hn", c, {GenerationTarget::make_adapter(0, 8, 3)}, store, 1);
  randomize(store, rng, 0.5);
  GuidanceVector e = random_guidance(rng, 4);
  Tensor flat = hn.generate_flat(e, 0);
  AdapterWeights w = hn.generate_adapter(e, 0);
  ASSERT_EQ(w.flatten().size(), (AdapterShape{8, 3}.flat_size()));
  auto f = flat.data();
  for (std::size_t i = 0; i < 24; ++i) EXPECT_EQ(w.w_down.at(i), f[i]);
  for (std::size_t i = 0; i < 24; ++i) EXPECT_EQ(w.w_up.at(i), f[24 + i] * 0.25);
  for (std::size_t i = 0; i < 3; ++i) EXPECT_EQ(w.b_down.at(i), f[48 + i]);
  for (std::size_t i = 0; i < 8; ++i) EXPECT_EQ(w.b_up.at(i), f[51 + i]);
}

TEST(GenerateAdapter, FreshNetworkIsANoOpAdapter) {
  std::mt19937_64 rng(6);
  ParameterStore store;
  HyperNetwork hn("hn", small_config(16, 8, 8), {GenerationTarget::make_adapter(0, 16, 4)}, store, 9);
  AdapterWeights w = hn.generate_adapter(random_guidance(rng, 8), 0);
  for (double v : w.w_up.data()) EXPECT_EQ(v, 0.0);
  for (double v : w.b_up.data()) EXPECT_EQ(v, 0.0);
  double down = 0;
  for (double v : w.w_down.data()) down = std::max(down, std::abs(v));
  EXPECT_GT(down, 0.0);
}

TEST(GenerateAdapter, KindMismatchThrows) {
  ParameterStore store;
  HyperNetwork hn("hn", small_config(4, 2, 2),
                  {GenerationTarget::make_adapter(0, 4, 2), GenerationTarget::make_full_matrix(1, 2, 11)}, store, 0);
  GuidanceVector e{Tensor::zeros({1, 2}), Modality::visual};
  EXPECT_ANY_THROW(hn.generate_adapter(e, 1));
  EXPECT_ANY_THROW(hn.generate_full_mlp(e, 0));
}

TEST(HyperNetwork, SharedTrunkNeedsEqualSizes) {
  ParameterStore store;
  HyperNetConfig c = small_config(4, 2, 2);
  EXPECT_ANY_THROW(HyperNetwork("hn", c,
                                {GenerationTarget::make_adapter(0, 4, 2), GenerationTarget::make_full_matrix(1, 4, 4)},
                                store, 0));
}

TEST(HyperNetwork, FullMatrixAsLinearLayer) {
  std::mt19937_64 rng(7);
  ParameterStore store;
  HyperNetwork hn("hn", small_config(3, 4, 5), {GenerationTarget::make_full_matrix(0, 6, 4)}, store, 3);
  randomize(store, rng, 0.7);
  Tensor k = hn.generate_full_mlp(random_guidance(rng, 4), 0);
  EXPECT_EQ(k.shape(), (Shape{6, 4}));
  Tensor x = random_input(rng, {2, 6});
  auto expect = naive_matmul(x.data(), k.data(), 2, 6, 4);
  Tensor y = matmul(x, k);
  for (std::size_t i = 0; i < expect.size(); ++i) EXPECT_NEAR(y.at(i), expect[i], 1e-12);
}

TEST(Dynamism, DistinctGuidanceGivesDistinctAdapters) {
  std::mt19937_64 rng(8);
  ParameterStore store;
  HyperNetwork hn("hn", small_config(32, 64, 64), {GenerationTarget::make_adapter(0, 32, 16)}, store, 11);
  int distinct = 0, identical = 0;
  for (int trial = 0; trial < 100; ++trial) {
    GuidanceVector e1 = random_guidance(rng, 64);
    GuidanceVector e2 = random_guidance(rng, 64);
    GuidanceVector e1_copy{Tensor::from({1, 64}, std::vector<double>(e1.values.data().begin(), e1.values.data().end())),
                           Modality::visual};
    auto a = hn.generate_adapter(e1, 0).flatten();
    auto b = hn.generate_adapter(e2, 0).flatten();
    auto c = hn.generate_adapter(e1_copy, 0).flatten();
    double diff = 0;
    for (std::size_t i = 0; i < a.size(); ++i) diff = std::max(diff, std::abs(a[i] - b[i]));
    distinct += diff > 1e-8;
    identical += bit_equal(a, c);
  }
  EXPECT_EQ(distinct, 100);
  EXPECT_EQ(identical, 100);
}

TEST(LatentMode, InputInvariant) {
  std::mt19937_64 rng(9);
  ParameterStore store;
  HyperNetConfig c = small_config(0, 8, 8);
  c.latent = true;
  HyperNetwork hn("hn", c, {GenerationTarget::make_adapter(0, 12, 4)}, store, 4);
  EXPECT_FALSE(store.contains("hn.enc.0.w"));
  EXPECT_TRUE(store.contains("hn.latent.0"));
  Tensor reference = hn.latent_mode_generate(0);
  for (int trial = 0; trial < 100; ++trial) {
    GuidanceVector e = hn.guidance(random_input(rng, {3, 12}), 0);
    Tensor k = hn.generate_flat(e, 0);
    EXPECT_TRUE(bit_equal(k.data(), reference.data()));
  }
  EXPECT_ANY_THROW(hn.layer_encode(Tensor::zeros({1, 12}), 0));
}

TEST(LatentMode, OneStepOfGradientDescentMovesTheLatent) {
  std::mt19937_64 rng(10);
  ParameterStore store;
  HyperNetConfig c = small_config(0, 4, 3);
  c.latent = true;
  HyperNetwork hn("hn", c, {GenerationTarget::make_full_matrix(0, 2, 2)}, store, 5);
  randomize(store, rng, 1.0);
  Tensor probe = random_input(rng, {4});
  auto loss = [&] { return sum(mul(hn.latent_mode_generate(0), probe)); };
  const double before = loss().item();
  backward(loss());
  // dL/dz = probe W_2^T W_1^T
  Tensor& z = store.get("hn.latent.0");
  auto w1 = store.get("hn.trunk.w1").data();
  auto w2 = store.get("hn.trunk.w2").data();
  std::vector<double> oracle(4, 0.0);
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t j = 0; j < 3; ++j)
      for (std::size_t p = 0; p < 4; ++p) oracle[i] += w1[i * 3 + j] * w2[j * 4 + p] * probe.at(p);
  std::vector<double> expected_z;
  for (std::size_t i = 0; i < 4; ++i) {
    EXPECT_NEAR(z.grad()[i], oracle[i], 1e-13);
    expected_z.push_back(z.at(i) - 0.1 * oracle[i]);
  }
  auto data = z.mutable_data();
  for (std::size_t i = 0; i < 4; ++i) data[i] -= 0.1 * z.grad()[i];
  for (std::size_t i = 0; i < 4; ++i) EXPECT_NEAR(z.at(i), expected_z[i], 1e-15);
  double norm2 = 0;
  for (double v : oracle) norm2 += v * v;
  // The loss is linear in z, so one step lowers it by exactly lr * |grad|^2.
  EXPECT_NEAR(loss().item(), before - 0.1 * norm2, 1e-12);
}

TEST(HyperNetwork, GradientsThroughGeneration) {
  std::mt19937_64 rng(12);
  ParameterStore store;
  HyperNetwork hn("hn", small_config(5, 4, 6), {GenerationTarget::make_adapter(0, 5, 2)}, store, 6);
  randomize(store, rng, 0.8);
  Tensor f = random_input(rng, {3, 5});
  Tensor probe = random_input(rng, {AdapterShape{5, 2}.flat_size()});
  std::vector<Tensor> leaves;
  for (auto& e : store.entries()) leaves.push_back(e.tensor);
  auto loss = [&] { return sum(mul(hn.generate_flat(hn.layer_encode(f, 0), 0), probe)); };
  GradCheck r = check_gradients(loss, all_coords(leaves));
  EXPECT_LT(r.max_rel, 1e-4);
}

TEST(HyperNetwork, InitialisationIsSeedDeterministic) {
  ParameterStore a, b, c;
  HyperNetwork ha("hn", small_config(8, 4, 4), {GenerationTarget::make_adapter(0, 8, 2)}, a, 42);
  HyperNetwork hb("hn", small_config(8, 4, 4), {GenerationTarget::make_adapter(0, 8, 2)}, b, 42);
  HyperNetwork hc("hn", small_config(8, 4, 4), {GenerationTarget::make_adapter(0, 8, 2)}, c, 43);
  bool any_diff = false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_TRUE(bit_equal(a.entries()[i].tensor.data(), b.entries()[i].tensor.data()));
    any_diff = any_diff || !bit_equal(a.entries()[i].tensor.data(), c.entries()[i].tensor.data());
  }
  EXPECT_TRUE(any_diff);
}
