#include "pcst/model.hpp"
#include "pcst/multires.hpp"
#include "pcst/pc_io.hpp"
#include "test_util.hpp"

#include <gtest/gtest.h>

#include <random>

using namespace pcst;
using testutil::Mat;

namespace {

ModelConfig small_config() {
  ModelConfig c;
  c.enc_channels = {4, 8, 8};
  c.irn_per_stage = 1;
  c.density_filters = {3};
  return c;
}

SparseVar<double> input_var(ag::Tape<double>& tape, const std::vector<Coord>& v) {
  const auto x = SparseTensor<double>::occupancy(v, 1);
  return {x.coords, tape.constant(x.feats)};
}

std::vector<Coord> sphere_voxels(std::size_t n, std::uint64_t seed, int depth = 6) {
  return voxelize_coords(synth_shape(ShapeKind::sphere, n, seed), depth);
}

}  // namespace

TEST(Encode, SingleVoxelSurvivesAllPoolings) {
  PcstModel<double> m(small_config(), 1);
  ag::Tape<double> tape(false);
  const auto y = m.encoder(tape, input_var(tape, {{0, 0, 0}}));
  ASSERT_EQ(y.size(), 1u);
  EXPECT_EQ((*y.coords)[0], (Coord{0, 0, 0}));
  EXPECT_EQ(y.stride(), 8);
  EXPECT_EQ(y.channels(), 8);
}

TEST(Encode, FullCubeCollapsesToOneCell) {
  std::vector<Coord> cube;
  for (int x = 0; x < 8; ++x)
    for (int y = 0; y < 8; ++y)
      for (int z = 0; z < 8; ++z) cube.push_back({x + 16, y + 8, z});
  PcstModel<double> m(small_config(), 2);
  ag::Tape<double> tape(false);
  const auto y = m.encoder(tape, input_var(tape, cube));
  ASSERT_EQ(y.size(), 1u);
  EXPECT_EQ((*y.coords)[0], (Coord{16, 8, 0}));
  const auto c = scale_counts(CoordinateSet::make(cube, 1));
  EXPECT_EQ(c.n, (std::array<std::int64_t, 3>{8, 64, 512}));
}

TEST(Encode, CountsStrictlyDecreaseOnSphere) {
  const auto v = sphere_voxels(2000, 3);
  const auto c = scale_counts(CoordinateSet::make(v, 1));
  EXPECT_EQ(c.n[2], static_cast<std::int64_t>(v.size()));
  EXPECT_LT(c.n[0], c.n[1]);
  EXPECT_LT(c.n[1], c.n[2]);
}

TEST(Encode, EmptyInputThrows) {
  PcstModel<double> m(small_config(), 1);
  ag::Tape<double> tape(false);
  SparseVar<double> empty{CoordinateSet::make({}, 1), tape.constant(Mat(0, 1))};
  EXPECT_THROW(m.encoder(tape, empty), std::invalid_argument);
}

TEST(Encode, Deterministic) {
  PcstModel<double> m(small_config(), 4);
  const auto v = sphere_voxels(500, 4);
  ag::Tape<double> t1(false), t2(false);
  EXPECT_EQ(m.encoder(t1, input_var(t1, v)).feats.value(), m.encoder(t2, input_var(t2, v)).feats.value());
}

TEST(OccupancyLogits, ZeroWeightsGiveOneHalf) {
  PcstModel<double> m(small_config(), 5);
  m.store.at("dec.s1.cls.weight").value.setZero();
  m.store.at("dec.s1.cls.bias").value.setZero();
  std::mt19937_64 rng(1);
  ag::Tape<double> tape(false);
  const auto set = CoordinateSet::make({{0, 0, 0}, {2, 0, 0}, {2, 2, 2}}, 2);
  SparseVar<double> parent{set, tape.constant(testutil::random_matrix(3, 8, rng))};
  const auto logits = m.decoder.occupancy_logits(tape, 1, parent).value();
  for (Eigen::Index i = 0; i < logits.rows(); ++i) EXPECT_EQ(1 / (1 + std::exp(-logits(i, 0))), 0.5);
}

TEST(OccupancyLogits, SingleCandidateProbabilityInOpenInterval) {
  PcstModel<double> m(small_config(), 6);
  std::mt19937_64 rng(2);
  ag::Tape<double> tape(false);
  SparseVar<double> parent{CoordinateSet::make({{4, 4, 4}}, 1), tape.constant(testutil::random_matrix(1, 4, rng))};
  const double p = 1 / (1 + std::exp(-m.decoder.occupancy_logits(tape, 2, parent).value()(0, 0)));
  EXPECT_GT(p, 0.0);
  EXPECT_LT(p, 1.0);
}

TEST(OccupancyLogits, BceGradientMatchesFiniteDifferences) {
  PcstModel<double> m(small_config(), 7);
  std::mt19937_64 rng(3);
  std::vector<Coord> sites;
  for (int i = 0; i < 12; ++i) sites.push_back({2 * (i % 3), 2 * (i / 3 % 2), 2 * (i / 6)});
  const auto set = CoordinateSet::make(sites, 2);
  Mat feats = testutil::random_matrix(static_cast<Eigen::Index>(set->size()), 8, rng);
  std::vector<std::uint8_t> truth(set->size());
  for (std::size_t i = 0; i < truth.size(); ++i) truth[i] = (i * 7) % 3 == 0;

  auto run = [&](ag::Tape<double>& tape, const ag::Var<double>& f) {
    return ag::bce_with_logits_sum(m.decoder.occupancy_logits(tape, 1, SparseVar<double>{set, f}), truth);
  };
  auto value = [&] {
    ag::Tape<double> tape(false);
    return run(tape, tape.constant(feats)).value()(0, 0);
  };
  m.store.zero_grad();
  ag::Parameter<double> fin{"f", feats, Mat::Zero(feats.rows(), feats.cols())};
  ag::Tape<double> tape;
  tape.backward(run(tape, tape.parameter(fin)));
  EXPECT_LT(testutil::grad_rel_error(fin.grad, testutil::numeric_grad(value, feats)), 1e-4);
  for (const char* name : {"dec.s1.cls.weight", "dec.s1.cls.bias"}) {
    auto& p = m.store.at(name);
    EXPECT_LT(testutil::grad_rel_error(p.grad, testutil::numeric_grad(value, p.value)), 1e-4) << name;
  }
}

TEST(TopkPrune, Examples) {
  const auto cand = SparseTensor<double>::occupancy({{0, 0, 0}, {0, 0, 1}, {0, 1, 0}}, 1);
  const auto two = topk_prune(cand, {0.9, 0.1, 0.8}, 2);
  EXPECT_EQ(two.coords->coords(), (std::vector<Coord>{{0, 0, 0}, {0, 1, 0}}));
  EXPECT_EQ(topk_prune(cand, {0.9, 0.1, 0.8}, 3).coords->coords(), cand.coords->coords());
  EXPECT_EQ(topk_prune(cand, {0.9, 0.1, 0.8}, 10).size(), 3u);
  EXPECT_EQ(topk_prune(cand, {0.9, 0.1, 0.8}, 0).size(), 0u);
  EXPECT_THROW(topk_prune(cand, {0.9, 0.1, 0.8}, -1), std::invalid_argument);
  EXPECT_THROW(topk_prune(cand, {0.9, 0.1}, 1), std::invalid_argument);
}

TEST(TopkPrune, TiesGoToCanonicalOrder) {
  EXPECT_EQ(topk_mask(std::vector<double>{0.5, 0.7, 0.5, 0.5}, 2), (std::vector<bool>{true, true, false, false}));
  EXPECT_EQ(topk_mask(std::vector<double>{0.2, 0.2, 0.2}, 1), (std::vector<bool>{true, false, false}));
}

TEST(ThresholdMask, KeepsAboveRatioAndNeverEmpty) {
  EXPECT_EQ(threshold_mask(std::vector<double>{0.1, 0.6, 0.4, 0.9}, 2), (std::vector<bool>{false, true, false, true}));
  EXPECT_EQ(threshold_mask(std::vector<double>{0.1, 0.2}, 2), (std::vector<bool>{false, true}));
}

TEST(Decode, SingleCoordinateUnitCounts) {
  PcstModel<double> m(small_config(), 8);
  std::mt19937_64 rng(4);
  ag::Tape<double> tape(false);
  SparseVar<double> y{CoordinateSet::make({{8, 0, 8}}, 8), tape.constant(testutil::random_matrix(1, 8, rng))};
  const auto out = m.decoder(tape, y, ScalePointCounts{{1, 1, 1}});
  ASSERT_EQ(out.output->size(), 1u);
  EXPECT_EQ(out.output->stride(), 1);
  const auto c = (*out.output)[0];
  for (int a = 0; a < 3; ++a) EXPECT_EQ(c[a] / 8 * 8, (Coord{8, 0, 8})[a]);
  EXPECT_TRUE(out.warnings.empty());
}

TEST(Decode, UntrainedOutputHasExactlyN3Points) {
  for (std::uint64_t seed = 1; seed <= 4; ++seed) {
    PcstModel<double> m(small_config(), seed);
    const auto v = voxelize_coords(synth_shape(static_cast<ShapeKind>(seed % 4), 1500, seed), 5);
    ag::Tape<double> tape(false);
    const auto x = input_var(tape, v);
    const auto counts = scale_counts(x.coords);
    const auto out = m.decoder(tape, m.encoder(tape, x), counts);
    EXPECT_EQ(static_cast<std::int64_t>(out.output->size()), counts.n[2]);
    EXPECT_TRUE(out.warnings.empty());
  }
}

TEST(Decode, CountsBeyondCandidatesAreClippedWithWarning) {
  PcstModel<double> m(small_config(), 9);
  std::mt19937_64 rng(5);
  ag::Tape<double> tape(false);
  SparseVar<double> y{CoordinateSet::make({{0, 0, 0}}, 8), tape.constant(testutil::random_matrix(1, 8, rng))};
  const auto out = m.decoder(tape, y, ScalePointCounts{{20, 3, 5}});
  EXPECT_EQ(out.stages[0].keep, std::vector<bool>(8, true));
  EXPECT_EQ(out.output->size(), 5u);
  ASSERT_EQ(out.warnings.size(), 1u);
  EXPECT_NE(out.warnings[0].find("stage 0"), std::string::npos);
  EXPECT_THROW(m.decoder(tape, y, ScalePointCounts{{0, 1, 1}}), std::invalid_argument);
}

TEST(Decode, CandidatesCoverTruthWhenTruthIsKept) {
  PcstModel<double> m(small_config(), 10);
  const auto v = sphere_voxels(1500, 11, 5);
  ag::Tape<double> tape(false);
  const auto x = input_var(tape, v);
  const auto truth = scale_truth(x.coords);
  DecodeTargets targets{truth, true};
  const auto out = m.decoder(tape, m.encoder(tape, x), scale_counts(x.coords), &targets);
  for (std::size_t s = 0; s < 3; ++s) {
    const auto& cand = *out.stages[s].candidates.coords;
    for (const auto& c : truth[s]->coords()) EXPECT_TRUE(cand.contains(c)) << "stage " << s;
    std::size_t positives = 0;
    for (auto t : out.stages[s].truth) positives += t;
    EXPECT_EQ(positives, truth[s]->size());
  }
}

TEST(Decode, Deterministic) {
  PcstModel<double> m(small_config(), 12);
  const auto v = sphere_voxels(800, 12, 5);
  auto run = [&] {
    ag::Tape<double> tape(false);
    const auto x = input_var(tape, v);
    return m.decoder(tape, m.encoder(tape, x), scale_counts(x.coords)).output->coords();
  };
  EXPECT_EQ(run(), run());
}
