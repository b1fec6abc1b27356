#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "hyperadapt/experts.hpp"
#include "hyperadapt/ops.hpp"
#include "support.hpp"

using namespace hyperadapt;
using namespace testing_support;

namespace {

double silu_ref(double x) { return x / (1.0 + std::exp(-x)); }
double gelu_ref(double x) {
  return 0.5 * x * (1.0 + std::tanh(std::sqrt(2.0 / std::numbers::pi) * (x + 0.044715 * x * x * x)));
}

// Row-wise W_up(act(x W_down + b_down)) + b_up with plain loops.
std::vector<double> adapter_ref(std::span<const double> x, std::size_t rows, const AdapterWeights& w,
                                double (*act)(double)) {
  const std::size_t d = w.d_in(), r = w.rank();
  std::vector<double> out(rows * d);
  for (std::size_t i = 0; i < rows; ++i) {
    std::vector<double> h(r);
    for (std::size_t k = 0; k < r; ++k) {
      double s = w.b_down.at(k);
      for (std::size_t j = 0; j < d; ++j) s += x[i * d + j] * w.w_down.at(j * r + k);
      h[k] = act(s);
    }
    for (std::size_t j = 0; j < d; ++j) {
      double s = w.b_up.at(j);
      for (std::size_t k = 0; k < r; ++k) s += h[k] * w.w_up.at(k * d + j);
      out[i * d + j] = s;
    }
  }
  return out;
}

void randomize_prefix(ParameterStore& store, std::string_view prefix, std::mt19937_64& rng, double scale) {
  for (auto& e : store.entries()) {
    if (!e.name.starts_with(prefix)) continue;
    auto v = uniform(rng, e.tensor.numel(), -scale, scale);
    std::copy(v.begin(), v.end(), e.tensor.mutable_data().begin());
  }
}

void zero_prefix(ParameterStore& store, std::string_view prefix) {
  for (auto& e : store.entries()) {
    if (!e.name.starts_with(prefix)) continue;
    auto d = e.tensor.mutable_data();
    std::fill(d.begin(), d.end(), 0.0);
  }
}

ExpertOptions small_options() {
  ExpertOptions o;
  o.guidance_dim = 6;
  o.bottleneck = 3;
  o.generator_hidden = 5;
  return o;
}

}  // namespace

TEST(Adapter, ZeroWeightsGiveZero) {
  AdapterWeights w = AdapterWeights::from_flat(Tensor::zeros({AdapterShape{4, 2}.flat_size()}), {4, 2});
  Tensor y = apply_adapter(Tensor::full({3, 4}, 1.5), w, Activation::silu);
  for (double v : y.data()) EXPECT_EQ(v, 0.0);
}

TEST(Adapter, OnlyBiasUpGivesConstantRows) {
  std::vector<double> flat(AdapterShape{3, 1}.flat_size(), 0.0);
  flat[3 + 3 + 1 + 0] = 0.5;
  flat[3 + 3 + 1 + 2] = -2.0;
  AdapterWeights w = AdapterWeights::from_flat(Tensor::from({flat.size()}, flat), {3, 1});
  Tensor y = apply_adapter(Tensor::from({2, 3}, {1, 2, 3, 4, 5, 6}), w, Activation::gelu);
  EXPECT_TRUE(bit_equal(y.data(), std::vector<double>{0.5, 0.0, -2.0, 0.5, 0.0, -2.0}));
}

TEST(Adapter, MatchesLoopOracle) {
  std::mt19937_64 rng(1);
  for (auto act : {Activation::silu, Activation::gelu}) {
    for (int trial = 0; trial < 10; ++trial) {
      AdapterShape shape{7, 3};
      auto flat = uniform(rng, shape.flat_size());
      AdapterWeights w = AdapterWeights::from_flat(Tensor::from({flat.size()}, flat), shape);
      Tensor x = random_input(rng, {4, 7});
      auto expect = adapter_ref(x.data(), 4, w, act == Activation::silu ? silu_ref : gelu_ref);
      Tensor y = apply_adapter(x, w, act);
      for (std::size_t i = 0; i < expect.size(); ++i) EXPECT_NEAR(y.at(i), expect[i], 1e-12);
    }
  }
}

TEST(Adapter, WidthMismatchThrows) {
  AdapterWeights w = AdapterWeights::from_flat(Tensor::zeros({AdapterShape{4, 2}.flat_size()}), {4, 2});
  EXPECT_THROW(apply_adapter(Tensor::zeros({3, 5}), w, Activation::silu), ShapeError);
}

TEST(Placement, PresetsOnEightBlocks) {
  EXPECT_FALSE(ExpertPlacement::preset(PlacementPreset::none, 8).has_value());
  auto post = *ExpertPlacement::preset(PlacementPreset::posterior_half, 8);
  EXPECT_EQ(post.block_ids, (std::vector<int>{4, 5, 6, 7}));
  EXPECT_EQ(post.guidance_tap, 3);
  auto ant = *ExpertPlacement::preset(PlacementPreset::anterior_half, 8);
  EXPECT_EQ(ant.block_ids, (std::vector<int>{0, 1, 2, 3}));
  EXPECT_EQ(ant.guidance_tap, -1);
  auto all = *ExpertPlacement::preset(PlacementPreset::all, 8);
  EXPECT_EQ(all.block_ids.size(), 8u);
  EXPECT_EQ(all.guidance_tap, -1);
  EXPECT_TRUE(post.hosts(5));
  EXPECT_FALSE(post.hosts(3));
}

TEST(Placement, OddAndSingleBlockStacks) {
  auto post = *ExpertPlacement::preset(PlacementPreset::posterior_half, 5);
  EXPECT_EQ(post.block_ids, (std::vector<int>{2, 3, 4}));
  EXPECT_EQ(post.guidance_tap, 1);
  auto ant = *ExpertPlacement::preset(PlacementPreset::anterior_half, 1);
  EXPECT_EQ(ant.block_ids, (std::vector<int>{0}));
  auto one = *ExpertPlacement::preset(PlacementPreset::posterior_half, 1);
  EXPECT_EQ(one.block_ids, (std::vector<int>{0}));
  EXPECT_EQ(one.guidance_tap, -1);
}

TEST(Placement, LegalityRules) {
  EXPECT_THROW(ExpertPlacement::make({}, -1, 4), std::invalid_argument);
  EXPECT_THROW(ExpertPlacement::make({4}, -1, 4), std::invalid_argument);
  EXPECT_THROW(ExpertPlacement::make({-1}, -1, 4), std::invalid_argument);
  EXPECT_THROW(ExpertPlacement::make({2, 3}, 2, 4), std::invalid_argument);  // tap must precede
  EXPECT_THROW(ExpertPlacement::make({2}, -2, 4), std::invalid_argument);
  auto p = ExpertPlacement::make({3, 1, 3}, 0, 4);
  EXPECT_EQ(p.block_ids, (std::vector<int>{1, 3}));
}

TEST(Placement, EveryLegalChoiceIsAccepted) {
  std::mt19937_64 rng(2);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n = 1 + rng() % 10;
    std::vector<int> ids;
    for (std::size_t i = 0; i < n; ++i)
      if (rng() % 2) ids.push_back(static_cast<int>(i));
    if (ids.empty()) ids.push_back(static_cast<int>(n - 1));
    const int tap = -1 + static_cast<int>(rng() % (ids.front() + 1));
    auto p = ExpertPlacement::make(ids, tap, n);
    EXPECT_LT(p.guidance_tap, p.block_ids.front());
    EXPECT_THROW(ExpertPlacement::make(ids, ids.front(), n), std::invalid_argument);
  }
}

// ---------------------------------------------------------------------------

class ProjectorTest : public ::testing::Test {
 protected:
  static constexpr std::size_t kDv = 5, kD = 8;
};

TEST_F(ProjectorTest, ExpertOffReducesToStatic) {
  std::mt19937_64 rng(3);
  for (auto variant : {ProjectorVariant::V1, ProjectorVariant::V2, ProjectorVariant::V1andV2}) {
    ParameterStore store;
    Projector p(variant, kDv, kD, small_options(), store, 17);
    randomize_prefix(store, "hyper.", rng, 1.0);
    zero_prefix(store, "hyper.");
    for (int trial = 0; trial < 20; ++trial) {
      Tensor f = random_input(rng, {3, kDv});
      EXPECT_TRUE(bit_equal(p.project_visual(f).data(), p.project_visual(f, ProjectorVariant::Static).data()))
          << to_string(variant);
    }
  }
}

TEST_F(ProjectorTest, StaticIsTwoLayerGelu) {
  std::mt19937_64 rng(4);
  ParameterStore store;
  Projector p(ProjectorVariant::Static, kDv, kD, small_options(), store, 5);
  EXPECT_EQ(p.visual_expert(), nullptr);
  Tensor f = random_input(rng, {2, kDv});
  auto h = naive_matmul(f.data(), store.get("proj.l1.w").data(), 2, kDv, kD);
  for (std::size_t i = 0; i < h.size(); ++i) h[i] = gelu_ref(h[i] + store.get("proj.l1.b").at(i % kD));
  auto y = naive_matmul(h, store.get("proj.l2.w").data(), 2, kD, kD);
  Tensor out = p.project_visual(f);
  for (std::size_t i = 0; i < y.size(); ++i) EXPECT_NEAR(out.at(i), y[i] + store.get("proj.l2.b").at(i % kD), 1e-13);
}

TEST_F(ProjectorTest, FirstExpertShiftsTheHiddenLayer) {
  std::mt19937_64 rng(5);
  ParameterStore store;
  Projector p(ProjectorVariant::V1, kDv, kD, small_options(), store, 6);
  randomize_prefix(store, "", rng, 0.6);
  const HyperNetwork& hn = *p.visual_expert();
  Tensor f = random_input(rng, {3, kDv});
  AdapterWeights w = hn.generate_adapter(hn.layer_encode(f, Projector::kFirstExpert), Projector::kFirstExpert);
  auto lifted = naive_matmul(f.data(), store.get("proj.lift.w").data(), 3, kDv, kD);
  auto shift = adapter_ref(lifted, 3, w, silu_ref);
  auto h = naive_matmul(f.data(), store.get("proj.l1.w").data(), 3, kDv, kD);
  for (std::size_t i = 0; i < h.size(); ++i) h[i] = gelu_ref(h[i] + store.get("proj.l1.b").at(i % kD) + shift[i]);
  auto y = naive_matmul(h, store.get("proj.l2.w").data(), 3, kD, kD);
  Tensor out = p.project_visual(f);
  for (std::size_t i = 0; i < y.size(); ++i) EXPECT_NEAR(out.at(i), y[i] + store.get("proj.l2.b").at(i % kD), 1e-12);
}

TEST_F(ProjectorTest, BothExpertsAddTheSecondTerm) {
  std::mt19937_64 rng(6);
  ParameterStore both_store, v1_store;
  Projector both(ProjectorVariant::V1andV2, kDv, kD, small_options(), both_store, 8);
  Projector v1(ProjectorVariant::V1, kDv, kD, small_options(), v1_store, 8);
  randomize_prefix(both_store, "", rng, 0.6);
  // Copy every parameter the V1 projector shares with the combined one.
  for (auto& e : v1_store.entries()) {
    auto src = both_store.get(e.name).data();
    std::copy(src.begin(), src.end(), e.tensor.mutable_data().begin());
  }
  const HyperNetwork& hn = *both.visual_expert();
  Tensor f = random_input(rng, {4, kDv});
  Tensor hidden = add_row(matmul(f, both_store.get("proj.l1.w")), both_store.get("proj.l1.b"));
  Tensor second = expert_output(hn, hn.guidance(f, Projector::kSecondExpert), Projector::kSecondExpert, gelu(hidden),
                                Activation::silu);
  Tensor expect = add(v1.project_visual(f), second);
  Tensor out = both.project_visual(f);
  for (std::size_t i = 0; i < out.numel(); ++i) EXPECT_NEAR(out.at(i), expect.at(i), 1e-14);
}

TEST_F(ProjectorTest, RejectsForeignVariant) {
  ParameterStore store;
  Projector p(ProjectorVariant::V1, kDv, kD, small_options(), store, 1);
  EXPECT_ANY_THROW(p.project_visual(Tensor::zeros({2, kDv}), ProjectorVariant::V2));
  EXPECT_THROW(p.project_visual(Tensor::zeros({2, kDv + 1})), ShapeError);
}

TEST_F(ProjectorTest, GradientsForEveryVariant) {
  std::mt19937_64 rng(7);
  for (auto variant : {ProjectorVariant::V1, ProjectorVariant::V2, ProjectorVariant::V1andV2}) {
    ParameterStore store;
    Projector p(variant, kDv, kD, small_options(), store, 3);
    randomize_prefix(store, "", rng, 0.5);
    Tensor f = random_input(rng, {3, kDv});
    Tensor probe = random_input(rng, {3, kD});
    std::vector<Tensor> leaves;
    for (auto& e : store.entries()) leaves.push_back(e.tensor);
    GradCheck r = check_gradients([&] { return sum(mul(p.project_visual(f), probe)); }, sample_coords(leaves, 120, rng));
    EXPECT_LT(r.max_rel, 1e-4) << to_string(variant);
  }
}

// ---------------------------------------------------------------------------

class BlockTest : public ::testing::Test {
 protected:
  void SetUp() override {
    block = TransformerBlock::create("block.1", 8, 12, 2, store, 21);
    HyperNetConfig c;
    c.modality = Modality::language;
    c.feature_dim = 8;
    c.guidance_dim = 6;
    c.hidden_dim = 5;
    hn = std::make_unique<HyperNetwork>("hyper.language", c, std::vector{GenerationTarget::make_adapter(1, 8, 3)},
                                        store, 21);
    expert = {hn.get(), Activation::silu};
  }

  ParameterStore store;
  TransformerBlock block;
  std::unique_ptr<HyperNetwork> hn;
  LanguageExpert expert;
};

TEST_F(BlockTest, ExpertOffMatchesPlainBlock) {
  std::mt19937_64 rng(8);
  randomize_prefix(store, "hyper.", rng, 1.0);
  zero_prefix(store, "hyper.");
  Tensor x = random_input(rng, {5, 8});
  GuidanceVector e = tap_guidance(*hn, x, 1, 3);
  Tensor plain = wrap_block(x, block, 1, nullptr, nullptr);
  EXPECT_TRUE(bit_equal(wrap_block(x, block, 1, &expert, &e).data(), plain.data()));
}

TEST_F(BlockTest, FreshExpertIsExactNoOp) {
  std::mt19937_64 rng(9);
  Tensor x = random_input(rng, {5, 8});
  GuidanceVector e = tap_guidance(*hn, x, 1, 5);
  EXPECT_TRUE(bit_equal(wrap_block(x, block, 1, &expert, &e).data(), wrap_block(x, block, 1, nullptr, nullptr).data()));
}

TEST_F(BlockTest, NormalizedResidualOracle) {
  std::mt19937_64 rng(10);
  Tensor x = random_input(rng, {4, 8});
  Tensor x_n = block.normalized_attention(x);
  Tensor out = wrap_block(x, block, 1, nullptr, nullptr);
  Tensor gate = matmul(x_n, block.w_gate), in = matmul(x_n, block.w_in);
  std::vector<double> hidden(gate.numel());
  for (std::size_t i = 0; i < hidden.size(); ++i) hidden[i] = silu_ref(gate.at(i)) * in.at(i);
  auto ffn = naive_matmul(hidden, block.w_out.data(), 4, 12, 8);
  for (std::size_t i = 0; i < ffn.size(); ++i) EXPECT_NEAR(out.at(i), x_n.at(i) + ffn[i], 1e-13);
}

TEST_F(BlockTest, HostWithoutGuidanceThrows) {
  EXPECT_ANY_THROW(wrap_block(Tensor::zeros({2, 8}), block, 1, &expert, nullptr));
  // A block the expert does not host ignores it.
  EXPECT_NO_THROW(wrap_block(Tensor::zeros({2, 8}), block, 0, &expert, nullptr));
}

TEST_F(BlockTest, GuidanceChangesTheOutput) {
  std::mt19937_64 rng(11);
  randomize_prefix(store, "hyper.", rng, 0.8);
  Tensor x = random_input(rng, {5, 8});
  int differ = 0;
  for (int trial = 0; trial < 50; ++trial) {
    GuidanceVector e1{Tensor::from({1, 6}, uniform(rng, 6, -1, 1)), Modality::language};
    GuidanceVector e2{Tensor::from({1, 6}, uniform(rng, 6, -1, 1)), Modality::language};
    Tensor a = wrap_block(x, block, 1, &expert, &e1), b = wrap_block(x, block, 1, &expert, &e2);
    double diff = 0;
    for (std::size_t i = 0; i < a.numel(); ++i) diff = std::max(diff, std::abs(a.at(i) - b.at(i)));
    differ += diff > 1e-8;
  }
  EXPECT_EQ(differ, 50);
}

TEST_F(BlockTest, TapGuidanceIgnoresRowOrderAndLaterRows) {
  std::mt19937_64 rng(12);
  randomize_prefix(store, "hyper.", rng, 0.8);
  Tensor x = random_input(rng, {6, 8});
  GuidanceVector ref = tap_guidance(*hn, x, 1, 4);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<std::size_t> order{0, 1, 2, 3};
    std::shuffle(order.begin(), order.end(), rng);
    std::vector<double> rows;
    for (std::size_t r : order) rows.insert(rows.end(), x.data().begin() + r * 8, x.data().begin() + (r + 1) * 8);
    // rows past the context are replaced with noise
    auto tail = uniform(rng, 16, -5, 5);
    rows.insert(rows.end(), tail.begin(), tail.end());
    GuidanceVector e = tap_guidance(*hn, Tensor::from({6, 8}, rows), 1, 4);
    for (std::size_t i = 0; i < 6; ++i) EXPECT_NEAR(e.values.at(i), ref.values.at(i), 1e-14);
  }
  EXPECT_THROW(tap_guidance(*hn, x, 1, 0), ShapeError);
  EXPECT_THROW(tap_guidance(*hn, x, 1, 7), ShapeError);
}

TEST_F(BlockTest, GradientsThroughWrappedBlock) {
  std::mt19937_64 rng(13);
  randomize_prefix(store, "hyper.", rng, 0.5);
  Tensor x = random_param(rng, {4, 8}, -1.0, 1.0);
  Tensor probe = random_input(rng, {4, 8});
  auto loss = [&] {
    GuidanceVector e = tap_guidance(*hn, x, 1, 2);
    return sum(mul(wrap_block(x, block, 1, &expert, &e), probe));
  };
  std::vector<Tensor> leaves{x};
  for (auto& e : store.entries()) leaves.push_back(e.tensor);
  GradCheck r = check_gradients(loss, sample_coords(leaves, 200, rng));
  EXPECT_LT(r.max_rel, 1e-4);
}

TEST(ExpertOutput, FullMatrixIsScaledProduct) {
  std::mt19937_64 rng(14);
  ParameterStore store;
  HyperNetConfig c;
  c.feature_dim = 4;
  c.guidance_dim = 3;
  c.hidden_dim = 3;
  c.up_gain = 0.5;
  HyperNetwork hn("hn", c, {GenerationTarget::make_full_matrix(2, 4, 4)}, store, 1);
  randomize_prefix(store, "", rng, 1.0);
  GuidanceVector e{Tensor::from({1, 3}, uniform(rng, 3, -1, 1)), Modality::language};
  Tensor x = random_input(rng, {2, 4});
  Tensor k = hn.generate_full_mlp(e, 2);
  auto expect = naive_matmul(x.data(), k.data(), 2, 4, 4);
  Tensor y = expert_output(hn, e, 2, x, Activation::silu);
  for (std::size_t i = 0; i < expect.size(); ++i) EXPECT_NEAR(y.at(i), 0.5 * expect[i], 1e-13);
}
