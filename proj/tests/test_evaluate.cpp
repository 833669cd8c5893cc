#include <gtest/gtest.h>

#include <algorithm>
#include <boost/property_tree/ptree.hpp>
#include <boost/property_tree/xml_parser.hpp>
#include <cmath>
#include <numeric>
#include <sstream>

#include "fidn/evaluate.hpp"
#include "fidn/rng.hpp"

using namespace fidn;

namespace {

EmbeddingSet random_set(Rng& rng, std::vector<std::size_t> ids, std::size_t d, bool normalise = true) {
  EmbeddingSet s;
  s.ids = std::move(ids);
  s.vectors = Tensor<float>({s.ids.size(), d});
  for (std::size_t i = 0; i < s.ids.size(); ++i) {
    double n = 0;
    for (std::size_t j = 0; j < d; ++j) {
      s.vectors[i * d + j] = static_cast<float>(rng.normal());
      n += double(s.vectors[i * d + j]) * s.vectors[i * d + j];
    }
    if (normalise)
      for (std::size_t j = 0; j < d; ++j) s.vectors[i * d + j] = static_cast<float>(s.vectors[i * d + j] / std::sqrt(n));
  }
  return s;
}

// Sorts the whole gallery for every probe and reads off the first hit.
std::vector<double> brute_force_cmc(const EmbeddingSet& g, const EmbeddingSet& p) {
  const std::size_t d = g.vectors.dim(1);
  std::vector<double> hits(g.size(), 0.0);
  for (std::size_t i = 0; i < p.size(); ++i) {
    std::vector<double> sim(g.size());
    for (std::size_t j = 0; j < g.size(); ++j) {
      long double s = 0;
      for (std::size_t k = 0; k < d; ++k) s += (long double)g.vectors[j * d + k] * p.vectors[i * d + k];
      sim[j] = static_cast<double>(s);
    }
    std::vector<std::size_t> order(g.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return sim[a] > sim[b]; });
    std::size_t pos = 0;
    while (g.ids[order[pos]] != p.ids[i]) ++pos;
    for (std::size_t k = pos; k < g.size(); ++k) hits[k] += 1.0;
  }
  for (double& h : hits) h /= static_cast<double>(p.size());
  return hits;
}

struct Trained {
  SynthOutput synth;
  ModelParams<float> params;
};

const Trained& trained() {
  static const Trained t = [] {
    SynthSpec s;
    s.identities = 5;
    s.train_per_identity = 2;
    s.distractor_identities = 3;
    s.height = s.width = 16;
    s.attributes = 4;
    NetConfig n;
    n.input_height = n.input_width = 16;
    n.trunk = parse_trunk("4p,6");
    n.fc_width = 8;
    n.num_attributes = 4;
    n.num_classes = 5;
    return Trained{synth_generate(s), build_model(n)};
  }();
  return t;
}

}  // namespace

TEST(RankKHits, AgreesWithBruteForceOracle) {
  Rng rng(1);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<std::size_t> gid(10), pid(5);
    for (std::size_t i = 0; i < 10; ++i) gid[i] = rng.below(4);
    gid[0] = 0, gid[1] = 1, gid[2] = 2, gid[3] = 3;
    for (auto& x : pid) x = rng.below(4);
    const auto g = random_set(rng, gid, 3), p = random_set(rng, pid, 3);
    const auto cmc = rank_k_hits(g, p, 10);
    const auto oracle = brute_force_cmc(g, p);
    for (std::size_t k = 1; k <= 10; ++k) EXPECT_DOUBLE_EQ(cmc.at(k), oracle[k - 1]) << "trial " << trial;
  }
}

TEST(RankKHits, IdenticalSetsAndClosedSet) {
  Rng rng(2);
  const auto g = random_set(rng, {0, 1, 2, 3, 4, 5}, 8);
  EXPECT_EQ(rank_k_hits(g, g, 6).at(1), 1.0);
  const auto p = random_set(rng, {5, 1, 1, 3}, 8);
  EXPECT_EQ(rank_k_hits(g, p, 6).at(6), 1.0);
}

TEST(RankKHits, TiesBrokenByGalleryIndex) {
  EmbeddingSet g;
  g.ids = {7, 3};
  g.vectors = Tensor<float>({2, 2}, std::vector<float>{1, 0, 1, 0});
  EmbeddingSet p;
  p.ids = {3};
  p.vectors = Tensor<float>({1, 2}, std::vector<float>{1, 0});
  EXPECT_EQ(first_match_rank(g, p.vectors.ptr(), 3), 2u);
  EXPECT_EQ(rank_k_hits(g, p, 2).at(1), 0.0);
  std::swap(g.ids[0], g.ids[1]);
  EXPECT_EQ(rank_k_hits(g, p, 2).at(1), 1.0);
}

TEST(RankKHits, OpenSetProbeNamesIdentity) {
  Rng rng(3);
  const auto g = random_set(rng, {0, 1}, 4), p = random_set(rng, {0, 17}, 4);
  try {
    rank_k_hits(g, p, 2);
    FAIL();
  } catch (const ValidationError& e) {
    EXPECT_NE(std::string(e.what()).find("17"), std::string::npos);
  }
  EXPECT_THROW(rank_k_hits(g, random_set(rng, {0}, 4), 3), ValidationError);
}

TEST(RankKHits, MonotoneAndDistractorsNeverHelp) {
  Rng rng(4);
  for (int trial = 0; trial < 50; ++trial) {
    const auto g = random_set(rng, {0, 1, 2, 3, 4, 5}, 3);
    const auto p = random_set(rng, {rng.below(6), rng.below(6), rng.below(6), rng.below(6)}, 3);
    const auto x = random_set(rng, {10, 11, 12, 13, 14}, 3);
    const auto base = rank_k_hits(g, p, 6);
    const auto big = concat(g, x);
    const auto polluted = rank_k_hits(big, p, big.size());
    for (std::size_t k = 1; k < 6; ++k) EXPECT_LE(base.at(k), base.at(k + 1));
    for (std::size_t k = 1; k <= 6; ++k) EXPECT_LE(polluted.at(k), base.at(k));
  }
}

TEST(RankKHits, PermutationInvariantWithDistinctSimilarities) {
  Rng rng(5);
  const auto g = random_set(rng, {0, 1, 2, 3, 4, 5, 6}, 5), p = random_set(rng, {1, 4, 6, 0, 0}, 5);
  EmbeddingSet r;
  std::vector<std::size_t> perm{6, 2, 0, 5, 1, 3, 4};
  std::vector<float> v;
  for (std::size_t i : perm) {
    r.ids.push_back(g.ids[i]);
    v.insert(v.end(), g.vectors.ptr() + i * 5, g.vectors.ptr() + i * 5 + 5);
  }
  r.vectors = Tensor<float>({7, 5}, v);
  EXPECT_EQ(rank_k_hits(g, p, 7).hit_rates, rank_k_hits(r, p, 7).hit_rates);
}

TEST(AttributeAccuracy, RulesAndCountingOracle) {
  const Tensor<float> labels({2, 2}, std::vector<float>{1, 0, 0, 0});
  const auto sat = attribute_accuracy(Tensor<float>({2, 2}, std::vector<float>{50, -50, -50, -50}), labels);
  EXPECT_EQ(sat, (std::vector<double>{1.0, 1.0}));
  const auto tie = attribute_accuracy(Tensor<float>({2, 2}), labels);
  EXPECT_EQ(tie, (std::vector<double>{0.5, 1.0}));  // fraction of negative labels

  Rng rng(6);
  Tensor<float> z({30, 3}), y({30, 3});
  for (float& v : z.data()) v = static_cast<float>(rng.normal());
  for (float& v : y.data()) v = rng.uniform() < 0.5 ? 0.0f : 1.0f;
  const auto acc = attribute_accuracy(z, y);
  for (std::size_t j = 0; j < 3; ++j) {
    int right = 0;
    for (std::size_t i = 0; i < 30; ++i) right += ((1 / (1 + std::exp(-z.at(i, j))) > 0.5) == (y.at(i, j) == 1));
    EXPECT_DOUBLE_EQ(acc[j], right / 30.0);
  }
}

TEST(Embed, UnitNormDeterministicChunkIndependent) {
  const auto& t = trained();
  const auto a = embed(t.params, t.synth.probe);
  const auto b = embed(t.params, t.synth.probe, 3);
  EXPECT_TRUE(bit_equal(a.vectors, b.vectors));
  EXPECT_TRUE(bit_equal(a.vectors, embed(t.params, t.synth.probe).vectors));
  for (std::size_t i = 0; i < a.size(); ++i) {
    double n = 0;
    for (std::size_t j = 0; j < 8; ++j) n += double(a.vectors.at(i, j)) * a.vectors.at(i, j);
    EXPECT_NEAR(std::sqrt(n), 1.0, 1e-5);
  }
  LoadedDataset dup = t.synth.probe;
  dup.images[2] = dup.images[0];
  const auto d = embed(t.params, dup);
  for (std::size_t j = 0; j < 8; ++j) EXPECT_EQ(d.vectors.at(0, j), d.vectors.at(2, j));
}

TEST(Embed, ShapeMismatchRejected) {
  const auto& t = trained();
  LoadedDataset bad = t.synth.probe;
  for (auto& img : bad.images) img = Tensor<float>({1, 8, 8});
  EXPECT_THROW(embed(t.params, bad), ShapeError);
}

TEST(Evaluate, ReportInvariants) {
  const auto& t = trained();
  const auto r = evaluate(t.params, t.synth.gallery, t.synth.probe, &t.synth.distractor);
  EXPECT_EQ(r.rank1, r.cmc.at(1));
  EXPECT_EQ(r.gallery_size, 5u + 6u);
  EXPECT_EQ(r.cmc.max_rank(), r.gallery_size);
  EXPECT_EQ(r.cmc.at(r.gallery_size), 1.0);
  EXPECT_EQ(r.attribute_accuracy.size(), 4u);
  const auto self = evaluate(t.params, t.synth.gallery, t.synth.gallery, nullptr);
  EXPECT_EQ(self.rank1, 1.0);
  EXPECT_THROW(evaluate(t.params, t.synth.gallery, t.synth.probe, &t.synth.probe), ValidationError);
}

TEST(Report, CsvRoundTripExact) {
  CmcCurve c;
  c.hit_rates = {0.1, 1.0 / 3.0, 0.7, 1.0};
  const std::string csv = cmc_csv_text(c);
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 5);
  EXPECT_EQ(parse_cmc_csv(csv).hit_rates, c.hit_rates);
}

TEST(Report, SvgIsWellFormedWithOnePathPerCurve) {
  CmcCurve a, b;
  a.hit_rates = {0.5, 0.75, 1.0};
  b.hit_rates = {0.25, 0.5, 0.9, 1.0};
  for (std::size_t curves : {1u, 2u}) {
    std::vector<std::pair<std::string, CmcCurve>> list{{"joint", a}};
    if (curves == 2) list.push_back({"separate", b});
    const std::string svg = cmc_svg_text(list);
    EXPECT_EQ(svg, cmc_svg_text(list));
    std::istringstream in(svg);
    boost::property_tree::ptree tree;
    ASSERT_NO_THROW(boost::property_tree::read_xml(in, tree));
    std::size_t paths = 0;
    for (const auto& child : tree.get_child("svg"))
      if (child.first == "path") ++paths;
    EXPECT_EQ(paths, curves);
  }
}

TEST(Report, TextRoundTrip) {
  EvalReport r;
  r.cmc.hit_rates = {0.2, 0.6, 1.0};
  r.rank1 = 0.2;
  r.attribute_accuracy = {0.125, 2.0 / 3.0};
  r.gallery_size = 3;
  r.probe_count = 5;
  r.distractor_count = 1;
  r.config = {{"checkpoint", "m.ckpt"}};
  const auto back = parse_report_text(report_text(r));
  EXPECT_EQ(back.rank1, r.rank1);
  EXPECT_EQ(back.cmc.hit_rates, r.cmc.hit_rates);
  EXPECT_EQ(back.attribute_accuracy, r.attribute_accuracy);
  EXPECT_EQ(back.gallery_size, 3u);
  EXPECT_EQ(back.probe_count, 5u);
  EXPECT_EQ(back.distractor_count, 1u);
  EXPECT_EQ(back.config, r.config);
}
