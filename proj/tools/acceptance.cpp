// Acceptance run: one PASS/FAIL line per criterion.
#include <CLI11.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <iostream>
#include <numbers>
#include <numeric>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "fidn/checkpoint.hpp"
#include "fidn/data.hpp"
#include "fidn/evaluate.hpp"
#include "fidn/kernels.hpp"
#include "fidn/model.hpp"
#include "fidn/objective.hpp"
#include "fidn/rng.hpp"
#include "fidn/trainer.hpp"
#include "fidn/verify.hpp"

using namespace fidn;

namespace {

// Protocol constants for the joint-vs-separate comparison.
constexpr double kSigma = 1.5;
constexpr double kBase = 0.05;  // weak identity blobs; attributes carry part of identity
constexpr std::size_t kEpochs = 15;
constexpr std::size_t kSeeds = 5;

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, auto... v) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, v...);
  return buf;
}

double mean(const std::vector<double>& v) {
  return v.empty() ? 0.0 : std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

Outcome gradient_suite() {
  verify::Options o;
  auto checks = verify::check_all_ops(o);
  checks.push_back(verify::check_joint_loss(o));
  double op_worst = 0, e2e = 0;
  std::size_t min_samples = ~std::size_t{0};
  bool ok = true;
  for (const auto& c : checks) {
    min_samples = std::min(min_samples, c.samples);
    const bool end_to_end = c.kind == "loss";
    const double tol = end_to_end ? 1e-5 : 1e-6;
    ok = ok && c.passed && c.max_rel_error < tol && c.samples >= 20;
    (end_to_end ? e2e : op_worst) = std::max(end_to_end ? e2e : op_worst, c.max_rel_error);
  }
  return {ok, fmt("%zu checks, min samples %zu, worst op rel err %.2e (< 1e-6), joint loss %.2e (< 1e-5)",
                  checks.size(), min_samples, op_worst, e2e)};
}

Outcome fusion_coupling() {
  verify::Options o;
  const auto on = verify::check_fusion_coupling(true, o);
  const auto off = verify::check_fusion_coupling(false, o);
  return {on.passed && off.passed, fmt("on: rel err %.2e, %s; off: %s", on.max_rel_error, on.detail.c_str(),
                                       off.detail.c_str())};
}

struct SeedResult {
  double rank1_joint, rank1_sep_id, attr_joint, attr_sep_attr;
};

ModelParams<float> train_mode(const SynthOutput& synth, TrainMode mode, std::uint64_t seed) {
  NetConfig net;
  net.num_attributes = synth.spec.attributes;
  net.num_classes = synth.spec.identities;
  net.seed = seed;
  TrainConfig tc;
  tc.mode = mode;
  tc.epochs = kEpochs;
  tc.seed = seed;
  return train(net, tc, synth.train).params;
}

std::vector<SeedResult> run_direction_protocol() {
  std::vector<SeedResult> out;
  for (std::uint64_t seed = 0; seed < kSeeds; ++seed) {
    SynthSpec spec;  // C=32, T=8, 20 train + 2 probe per identity, 64 distractor identities
    spec.noise_sigma = kSigma;
    spec.base_amplitude = kBase;
    spec.seed = seed;
    const SynthOutput synth = synth_generate(spec);
    SeedResult r{};
    const auto joint = train_mode(synth, TrainMode::Joint, seed);
    const auto sep_id = train_mode(synth, TrainMode::SeparateId, seed);
    const auto sep_attr = train_mode(synth, TrainMode::SeparateAttr, seed);
    r.rank1_joint = evaluate(joint, synth.gallery, synth.probe, &synth.distractor).rank1;
    r.rank1_sep_id = evaluate(sep_id, synth.gallery, synth.probe, &synth.distractor).rank1;
    r.attr_joint = mean(attribute_accuracy(joint, synth.probe));
    r.attr_sep_attr = mean(attribute_accuracy(sep_attr, synth.probe));
    std::cerr << fmt("  seed %llu: rank1 joint %.4f separate %.4f | attr joint %.4f separate %.4f\n",
                     static_cast<unsigned long long>(seed), r.rank1_joint, r.rank1_sep_id, r.attr_joint,
                     r.attr_sep_attr);
    out.push_back(r);
  }
  return out;
}

Outcome joint_vs_separate_rank1(const std::vector<SeedResult>& rs, double seconds) {
  std::vector<double> j, s;
  int wins = 0;
  for (const auto& r : rs) {
    j.push_back(r.rank1_joint);
    s.push_back(r.rank1_sep_id);
    wins += r.rank1_joint > r.rank1_sep_id;
  }
  const bool in_band = mean(s) >= 0.60 && mean(s) <= 0.90;
  const bool ok = in_band && mean(j) >= mean(s) && wins >= 4 && seconds < 1800;
  return {ok, fmt("sigma %.2f base %.2f, mean rank1 joint %.4f vs separate %.4f (band 0.60-0.90: %s), joint wins %d/5, %.0f s",
                  kSigma, kBase, mean(j), mean(s), in_band ? "yes" : "no", wins, seconds)};
}

Outcome joint_vs_separate_attr(const std::vector<SeedResult>& rs) {
  std::vector<double> j, s;
  int wins = 0;
  for (const auto& r : rs) {
    j.push_back(r.attr_joint);
    s.push_back(r.attr_sep_attr);
    wins += r.attr_joint > r.attr_sep_attr;
  }
  const bool ok = mean(j) >= mean(s) - 0.005 && wins >= 3;
  return {ok, fmt("mean attr acc joint %.4f vs separate %.4f (margin -0.005), strict wins %d/5", mean(j), mean(s), wins)};
}

SynthOutput overfit_set() {
  SynthSpec spec;
  spec.identities = 32;
  spec.train_per_identity = 2;  // 64 samples
  spec.distractor_identities = 0;
  spec.seed = 21;
  spec.attribute_amplitude = 2.0;
  return synth_generate(spec);
}

NetConfig overfit_net(const SynthOutput& s) {
  NetConfig net;
  net.num_attributes = s.spec.attributes;
  net.num_classes = s.spec.identities;
  return net;
}

struct OverfitRun {
  SynthOutput synth;
  TrainResult result;
  double seconds = 0;
};

OverfitRun overfit_run() {
  OverfitRun run{overfit_set(), {}, 0};
  TrainConfig tc;
  tc.epochs = 200;
  const auto t0 = std::chrono::steady_clock::now();
  run.result = train(overfit_net(run.synth), tc, run.synth.train);
  run.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return run;
}

Outcome overfit(const OverfitRun& run) {
  const auto& r = run.result;
  const double id_acc = identification_accuracy(r.params, run.synth.train);
  const auto attr = attribute_accuracy(r.params, run.synth.train);
  const double attr_min = *std::min_element(attr.begin(), attr.end());
  const double first = r.epochs.front().mean_total, last = r.epochs.back().mean_total;
  const bool ok = run.synth.train.size() == 64 && id_acc == 1.0 && attr_min == 1.0 && last < 0.1 * first &&
                  run.seconds < 300;
  return {ok, fmt("train id acc %.4f, min attr acc %.4f, loss %.4f -> %.4f (%.2f%%), %.0f s", id_acc, attr_min, first,
                  last, 100 * last / first, run.seconds)};
}

Outcome calibration() {
  SynthSpec spec;
  spec.distractor_identities = 0;
  const SynthOutput synth = synth_generate(spec);
  NetConfig net;
  auto p = build_model(net);
  std::vector<std::size_t> idx(64);
  std::iota(idx.begin(), idx.end(), 0);
  std::vector<std::size_t> spread;
  for (std::size_t i = 0; i < idx.size(); ++i) spread.push_back(i * synth.train.size() / idx.size());
  const auto batch = gather_batch(synth.train, spread);
  auto g = forward_graph(p, batch.images, ForwardOptions{Mode::Train, true, true});
  const double n = static_cast<double>(batch.size());
  const double l1 = attribute_loss(g.tape.value(g.attr_logits), batch.attributes) / n;
  const double l2 = identification_loss(g.tape.value(g.id_logits), std::span<const std::size_t>(batch.identities)) / n;
  const double t_ln2 = static_cast<double>(net.num_attributes) * std::numbers::ln2;
  const double ln_c = std::log(static_cast<double>(net.num_classes));
  const double d1 = std::abs(l1 / t_ln2 - 1), d2 = std::abs(l2 / ln_c - 1);
  return {d1 <= 0.05 && d2 <= 0.05,
          fmt("id loss %.4f vs ln C %.4f (%.2f%%), attr loss %.4f vs T ln 2 %.4f (%.2f%%)", l2, ln_c, 100 * d2, l1,
              t_ln2, 100 * d1)};
}

// Reference ranking: sort the gallery for each probe, ties by index.
std::vector<double> oracle_cmc(const EmbeddingSet& g, const EmbeddingSet& p) {
  const std::size_t d = g.vectors.dim(1), m = g.size();
  std::vector<double> hits(m, 0.0);
  for (std::size_t i = 0; i < p.size(); ++i) {
    std::vector<double> sim(m);
    for (std::size_t j = 0; j < m; ++j) {
      long double s = 0;
      for (std::size_t k = 0; k < d; ++k) s += static_cast<long double>(g.vectors[j * d + k]) * p.vectors[i * d + k];
      sim[j] = static_cast<double>(s);
    }
    std::vector<std::size_t> order(m);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return sim[a] > sim[b]; });
    std::size_t pos = 0;
    while (g.ids[order[pos]] != p.ids[i]) ++pos;
    for (std::size_t k = pos; k < m; ++k) hits[k] += 1;
  }
  for (double& h : hits) h /= static_cast<double>(p.size());
  return hits;
}

EmbeddingSet random_embeddings(Rng& rng, const std::vector<std::size_t>& ids, std::size_t d) {
  EmbeddingSet s;
  s.ids = ids;
  s.vectors = Tensor<float>({ids.size(), d});
  for (std::size_t i = 0; i < ids.size(); ++i) {
    double n = 0;
    for (std::size_t k = 0; k < d; ++k) {
      // Coarse values make exact similarity ties common.
      const float v = static_cast<float>(static_cast<int>(rng.below(5)) - 2);
      s.vectors[i * d + k] = v;
      n += double(v) * v;
    }
    if (n == 0) s.vectors[i * d] = 1, n = 1;
    for (std::size_t k = 0; k < d; ++k) s.vectors[i * d + k] = static_cast<float>(s.vectors[i * d + k] / std::sqrt(n));
  }
  return s;
}

Outcome cmc_properties() {
  Rng rng(7);
  int monotone = 0, rank1 = 0, closed = 0, distractor = 0, oracle = 0;
  const int cases = 100;
  for (int c = 0; c < cases; ++c) {
    const std::size_t ng = 3 + rng.below(8), classes = 2 + rng.below(std::min<std::size_t>(ng - 1, 5));
    std::vector<std::size_t> gid(ng), pid(1 + rng.below(6)), xid(1 + rng.below(5));
    for (std::size_t i = 0; i < ng; ++i) gid[i] = i < classes ? i : rng.below(classes);
    for (auto& x : pid) x = rng.below(classes);
    for (std::size_t i = 0; i < xid.size(); ++i) xid[i] = 100 + i;
    const std::size_t d = 2 + rng.below(3);
    const auto g = random_embeddings(rng, gid, d), p = random_embeddings(rng, pid, d), x = random_embeddings(rng, xid, d);
    const auto cmc = rank_k_hits(g, p, ng);
    bool mono = true;
    for (std::size_t k = 1; k < ng; ++k) mono = mono && cmc.at(k) <= cmc.at(k + 1);
    monotone += mono;
    double r1 = 0;
    for (std::size_t i = 0; i < p.size(); ++i) r1 += first_match_rank(g, p.vectors.ptr() + i * d, p.ids[i]) == 1;
    rank1 += cmc.at(1) == r1 / static_cast<double>(p.size());
    closed += cmc.at(ng) == 1.0;
    const auto big = concat(g, x);
    const auto with = rank_k_hits(big, p, big.size());
    bool never_up = true;
    for (std::size_t k = 1; k <= ng; ++k) never_up = never_up && with.at(k) <= cmc.at(k);
    distractor += never_up;
    oracle += cmc.hit_rates == oracle_cmc(g, p) && with.hit_rates == oracle_cmc(big, p);
  }
  const bool ok = monotone == cases && rank1 == cases && closed == cases && distractor == cases && oracle == cases;
  return {ok, fmt("of %d random cases: monotone %d, CMC(1)==rank1 %d, CMC(M)==1 %d, distractors never help %d, "
                  "oracle agreement %d",
                  cases, monotone, rank1, closed, distractor, oracle)};
}

Outcome adam_trace() {
  const auto r = verify::check_adam_trace();
  return {r.passed && r.tolerance <= 1e-10, fmt("max abs error %.2e (tolerance %.0e)", r.max_rel_error, r.tolerance)};
}

// Share of the top-decile CAM mass inside `mask`, with the map upsampled to
// the mask's resolution.
double top_decile_share(const Tensor<float>& map, const Tensor<float>& mask) {
  const std::size_t h = mask.dim(0), w = mask.dim(1), hf = map.dim(0), wf = map.dim(1);
  std::vector<std::pair<float, std::size_t>> px;
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x) px.push_back({map[(y * hf / h) * wf + x * wf / w], y * w + x});
  std::stable_sort(px.begin(), px.end(), [](const auto& a, const auto& b) { return a.first > b.first; });
  const std::size_t top = (px.size() + 9) / 10;
  double mass = 0, inside = 0;
  for (std::size_t i = 0; i < top; ++i) {
    mass += px[i].first;
    if (mask[px[i].second] > 0.5f) inside += px[i].first;
  }
  return mass > 0 ? inside / mass : 0.0;
}

Outcome cam_localisation(const OverfitRun& run) {
  const auto& params = run.result.params;
  const auto& s = run.synth;
  int good = 0;
  std::ostringstream shares;
  for (std::size_t a = 0; a < s.spec.attributes; ++a) {
    std::vector<double> share;
    for (const LoadedDataset* d : {&s.train, &s.probe}) {
      for (std::size_t i = 0; i < d->size(); ++i) {
        if (!d->meta.records[i].attributes[a]) continue;
        const auto& img = d->images[i];
        const auto x = img.reshaped({1, img.dim(0), img.dim(1), img.dim(2)});
        share.push_back(top_decile_share(cam(params, x, a), s.quadrant_masks[a]));
      }
    }
    const double m = mean(share);
    good += !share.empty() && m >= 0.5;
    shares << (a ? " " : "") << fmt("%.2f", m);
  }
  return {good >= 6, fmt("attributes localised %d/8, mean in-quadrant share per attribute: %s", good,
                         shares.str().c_str())};
}

std::string checkpoint_bytes(const ModelParams<float>& p, const AdamState<float>* opt = nullptr) {
  std::stringstream s;
  write_checkpoint(s, p, opt);
  return s.str();
}

Outcome determinism() {
  const SynthOutput s = overfit_set();
  TrainConfig tc;
  tc.epochs = 3;
  tc.seed = 5;
  NetConfig net = overfit_net(s);
  net.seed = 5;
  const auto a = train(net, tc, s.train), b = train(net, tc, s.train);
  const std::string ba = checkpoint_bytes(a.params, &a.optimizer), bb = checkpoint_bytes(b.params, &b.optimizer);
  const bool same_seed = ba == bb;

  std::stringstream in(ba);
  const Checkpoint loaded = read_checkpoint(in);
  const bool resave = checkpoint_bytes(loaded.params, loaded.optimizer ? &*loaded.optimizer : nullptr) == ba;

  const Tensor<float> images = whole_batch(s.probe).images;
  const auto before = forward(a.params, images), after = forward(loaded.params, images);
  const bool fwd = bit_equal(before.attr_logits, after.attr_logits) && bit_equal(before.id_logits, after.id_logits) &&
                   bit_equal(before.id_embedding, after.id_embedding) &&
                   bit_equal(embed(a.params, s.probe).vectors, embed(loaded.params, s.probe).vectors);
  return {same_seed && resave && fwd, fmt("same-seed checkpoints identical: %s, save/load/save identical: %s, "
                                          "eval forward identical: %s (%zu bytes)",
                                          same_seed ? "yes" : "no", resave ? "yes" : "no", fwd ? "yes" : "no",
                                          ba.size())};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance criteria"};
  std::vector<int> only;
  app.add_option("--only", only, "Run just these criteria")->check(CLI::Range(1, 10));
  CLI11_PARSE(app, argc, argv);
  const std::set<int> wanted = only.empty() ? std::set<int>{1, 2, 3, 4, 5, 6, 7, 8, 9, 10}
                                            : std::set<int>(only.begin(), only.end());

  std::cout << "kernels: " << kernels::isa_name(kernels::active_isa()) << std::endl;
  int failed = 0;
  auto report = [&](int id, const std::function<Outcome()>& f) {
    if (!wanted.contains(id)) return;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = f();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double sec = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    failed += !o.pass;
    std::cout << fmt("criterion %2d: %s  %s [%.1f s]", id, o.pass ? "PASS" : "FAIL", o.detail.c_str(), sec)
              << std::endl;
  };

  report(1, [] {
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o = gradient_suite();
    const double sec = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    o.pass = o.pass && sec < 120;
    return o;
  });
  report(2, [] {
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o = fusion_coupling();
    o.pass = o.pass && std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count() < 60;
    return o;
  });

  std::vector<SeedResult> seeds;
  double protocol_seconds = 0;
  if (wanted.contains(3) || wanted.contains(4)) {
    const auto t0 = std::chrono::steady_clock::now();
    try {
      seeds = run_direction_protocol();
    } catch (const std::exception& e) {
      std::cerr << "protocol error: " << e.what() << '\n';
    }
    protocol_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  }
  report(3, [&] {
    if (seeds.size() != kSeeds) return Outcome{false, "protocol did not complete"};
    return joint_vs_separate_rank1(seeds, protocol_seconds);
  });
  report(4, [&] {
    if (seeds.size() != kSeeds) return Outcome{false, "protocol did not complete"};
    return joint_vs_separate_attr(seeds);
  });

  std::optional<OverfitRun> run;
  if (wanted.contains(5) || wanted.contains(9)) {
    try {
      run = overfit_run();
    } catch (const std::exception& e) {
      std::cerr << "overfit run error: " << e.what() << '\n';
    }
  }
  report(5, [&] { return run ? overfit(*run) : Outcome{false, "training failed"}; });
  report(6, calibration);
  report(7, cmc_properties);
  report(8, adam_trace);
  report(9, [&] { return run ? cam_localisation(*run) : Outcome{false, "training failed"}; });
  report(10, determinism);

  std::cout << (failed ? "ACCEPTANCE: FAIL" : "ACCEPTANCE: PASS") << std::endl;
  return failed ? 1 : 0;
}
