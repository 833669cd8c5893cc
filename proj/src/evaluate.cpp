#include "fidn/evaluate.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "fidn/config.hpp"

namespace fidn {

EmbeddingSet embed(const ModelParams<float>& params, const LoadedDataset& data, std::size_t chunk) {
  if (data.size() == 0) throw ValidationError("embed: dataset is empty");
  const std::size_t width = params.config.fc_width;
  EmbeddingSet out;
  out.role = data.meta.role;
  out.vectors = Tensor<float>({data.size(), width});
  auto& mutable_params = const_cast<ModelParams<float>&>(params);  // eval mode reads only
  for (std::size_t start = 0; start < data.size(); start += chunk) {
    const std::size_t end = std::min(data.size(), start + chunk);
    std::vector<std::size_t> idx;
    for (std::size_t i = start; i < end; ++i) idx.push_back(i);
    const Batch<float> batch = gather_batch(data, idx);
    ForwardGraph<float> g = forward_graph(mutable_params, batch.images, ForwardOptions{Mode::Eval, false, true});
    const Tensor<float>& e = g.tape.value(g.id_embedding);
    for (std::size_t r = 0; r < idx.size(); ++r) {
      const float* row = e.ptr() + r * width;
      double norm = 0.0;
      for (std::size_t j = 0; j < width; ++j) norm += static_cast<double>(row[j]) * row[j];
      norm = std::sqrt(norm);
      float* dst = out.vectors.ptr() + (start + r) * width;
      for (std::size_t j = 0; j < width; ++j) dst[j] = norm > 0.0 ? static_cast<float>(row[j] / norm) : 0.0f;
    }
  }
  for (const auto& rec : data.meta.records) out.ids.push_back(rec.identity);
  return out;
}

EmbeddingSet concat(const EmbeddingSet& base, const EmbeddingSet& extra) {
  if (base.size() == 0) return extra;
  if (extra.size() == 0) return base;
  if (base.vectors.dim(1) != extra.vectors.dim(1)) {
    throw ShapeError("concat: embedding widths differ (" + std::to_string(base.vectors.dim(1)) + " vs " +
                     std::to_string(extra.vectors.dim(1)) + ")");
  }
  EmbeddingSet out;
  out.role = base.role;
  out.ids = base.ids;
  out.ids.insert(out.ids.end(), extra.ids.begin(), extra.ids.end());
  std::vector<float> data(base.vectors.data().begin(), base.vectors.data().end());
  data.insert(data.end(), extra.vectors.data().begin(), extra.vectors.data().end());
  out.vectors = Tensor<float>({out.ids.size(), base.vectors.dim(1)}, std::move(data));
  return out;
}

namespace {

double similarity(const float* a, const float* b, std::size_t n) {
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) s += static_cast<double>(a[i]) * b[i];
  return s;
}

}  // namespace

std::size_t first_match_rank(const EmbeddingSet& gallery, const float* probe_row, std::size_t probe_id) {
  const std::size_t d = gallery.vectors.dim(1);
  std::vector<double> sims(gallery.size());
  std::size_t best = gallery.size();
  for (std::size_t j = 0; j < gallery.size(); ++j) {
    sims[j] = similarity(gallery.vectors.ptr() + j * d, probe_row, d);
    if (gallery.ids[j] == probe_id && (best == gallery.size() || sims[j] > sims[best])) best = j;
  }
  if (best == gallery.size()) {
    throw ValidationError("probe identity " + std::to_string(probe_id) + " does not appear in the gallery");
  }
  std::size_t ahead = 0;
  for (std::size_t j = 0; j < gallery.size(); ++j) {
    if (sims[j] > sims[best] || (sims[j] == sims[best] && j < best)) ++ahead;
  }
  return ahead + 1;
}

CmcCurve rank_k_hits(const EmbeddingSet& gallery, const EmbeddingSet& probe, std::size_t max_rank) {
  if (gallery.size() == 0 || probe.size() == 0) throw ValidationError("rank_k_hits: empty gallery or probe set");
  if (max_rank < 1 || max_rank > gallery.size()) {
    throw ValidationError("rank_k_hits: K=" + std::to_string(max_rank) + " must be in [1, gallery size " +
                          std::to_string(gallery.size()) + "]");
  }
  if (gallery.vectors.dim(1) != probe.vectors.dim(1)) throw ShapeError("rank_k_hits: embedding widths differ");
  for (std::size_t id : probe.ids) {
    if (std::find(gallery.ids.begin(), gallery.ids.end(), id) == gallery.ids.end()) {
      throw ValidationError("open-set probe: identity " + std::to_string(id) + " does not appear in the gallery");
    }
  }
  std::vector<std::size_t> hits_at(max_rank + 1, 0);
  const std::size_t d = probe.vectors.dim(1);
  for (std::size_t i = 0; i < probe.size(); ++i) {
    const std::size_t rank = first_match_rank(gallery, probe.vectors.ptr() + i * d, probe.ids[i]);
    if (rank <= max_rank) ++hits_at[rank];
  }
  CmcCurve cmc;
  std::size_t cumulative = 0;
  for (std::size_t k = 1; k <= max_rank; ++k) {
    cumulative += hits_at[k];
    cmc.hit_rates.push_back(static_cast<double>(cumulative) / static_cast<double>(probe.size()));
  }
  return cmc;
}

std::vector<double> attribute_accuracy(const Tensor<float>& logits, const Tensor<float>& labels) {
  if (logits.rank() != 2 || labels.shape() != logits.shape()) {
    throw ShapeError("attribute_accuracy: logits " + shape_string(logits.shape()) + " vs labels " +
                     shape_string(labels.shape()));
  }
  const std::size_t n = logits.dim(0), t = logits.dim(1);
  std::vector<double> acc(t, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < t; ++j) {
      // logistic(z) > 0.5  <=>  z > 0; a logit of exactly 0 predicts negative.
      const bool predicted = logits[i * t + j] > 0.0f;
      const bool actual = labels[i * t + j] == 1.0f;
      acc[j] += predicted == actual ? 1.0 : 0.0;
    }
  for (double& a : acc) a /= static_cast<double>(n);
  return acc;
}

namespace {

// Eval-mode outputs for a whole dataset, chunked.
template <typename Fn>
void for_each_chunk(const ModelParams<float>& params, const LoadedDataset& data, bool identity, Fn fn) {
  auto& mutable_params = const_cast<ModelParams<float>&>(params);
  for (std::size_t start = 0; start < data.size(); start += 64) {
    std::vector<std::size_t> idx;
    for (std::size_t i = start; i < std::min(data.size(), start + 64); ++i) idx.push_back(i);
    const Batch<float> batch = gather_batch(data, idx);
    ForwardGraph<float> g =
        forward_graph(mutable_params, batch.images, ForwardOptions{Mode::Eval, !identity, identity});
    fn(g, batch);
  }
}

}  // namespace

std::vector<double> attribute_accuracy(const ModelParams<float>& params, const LoadedDataset& data) {
  if (data.size() == 0) throw ValidationError("attribute_accuracy: dataset is empty");
  const std::size_t t = params.config.num_attributes;
  if (data.meta.num_attributes != t) {
    throw ValidationError("attribute_accuracy: dataset has T=" + std::to_string(data.meta.num_attributes) +
                          ", model has " + std::to_string(t));
  }
  std::vector<float> logits, labels;
  for_each_chunk(params, data, false, [&](ForwardGraph<float>& g, const Batch<float>& b) {
    const auto& f = g.tape.value(g.attr_logits);
    logits.insert(logits.end(), f.data().begin(), f.data().end());
    labels.insert(labels.end(), b.attributes.data().begin(), b.attributes.data().end());
  });
  return attribute_accuracy(Tensor<float>({data.size(), t}, std::move(logits)),
                            Tensor<float>({data.size(), t}, std::move(labels)));
}

double identification_accuracy(const ModelParams<float>& params, const LoadedDataset& data) {
  if (data.size() == 0) throw ValidationError("identification_accuracy: dataset is empty");
  std::size_t correct = 0;
  const std::size_t c = params.config.num_classes;
  for_each_chunk(params, data, true, [&](ForwardGraph<float>& g, const Batch<float>& b) {
    const auto& logits = g.tape.value(g.id_logits);
    for (std::size_t i = 0; i < b.size(); ++i) {
      const float* row = logits.ptr() + i * c;
      const std::size_t pred = static_cast<std::size_t>(std::max_element(row, row + c) - row);
      correct += pred == b.identities[i] ? 1 : 0;
    }
  });
  return static_cast<double>(correct) / static_cast<double>(data.size());
}

EvalReport evaluate(const ModelParams<float>& params, const LoadedDataset& gallery, const LoadedDataset& probe,
                    const LoadedDataset* distractors, std::size_t max_rank) {
  EmbeddingSet g = embed(params, gallery);
  if (distractors != nullptr && distractors->size() > 0) {
    for (const auto& rec : distractors->meta.records) {
      for (const auto& p : probe.meta.records) {
        if (p.identity == rec.identity) {
          throw ValidationError("distractor identity " + std::to_string(rec.identity) + " also appears in the probe set");
        }
      }
    }
    g = concat(g, embed(params, *distractors));
  }
  const EmbeddingSet p = embed(params, probe);
  EvalReport report;
  report.cmc = rank_k_hits(g, p, max_rank == 0 ? g.size() : std::min(max_rank, g.size()));
  report.rank1 = report.cmc.at(1);
  report.attribute_accuracy = attribute_accuracy(params, probe);
  report.gallery_size = g.size();
  report.probe_count = p.size();
  report.distractor_count = distractors != nullptr ? distractors->size() : 0;
  return report;
}

// ------------------------------------------------------------------ output

namespace {

std::string exact(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string fixed(double v, int digits) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

void write_file(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ValidationError("cannot write " + path.string());
  out << text;
  if (!out) throw ValidationError("failed writing " + path.string());
}

}  // namespace

std::string cmc_csv_text(const CmcCurve& cmc) {
  std::string s = "k,hit_rate\n";
  for (std::size_t k = 1; k <= cmc.max_rank(); ++k) s += std::to_string(k) + "," + exact(cmc.at(k)) + "\n";
  return s;
}

CmcCurve parse_cmc_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line) || line != "k,hit_rate") throw FormatError("CMC CSV: bad header");
  CmcCurve cmc;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto comma = line.find(',');
    if (comma == std::string::npos) throw FormatError("CMC CSV: bad row '" + line + "'");
    if (parse_size("k", line.substr(0, comma)) != cmc.hit_rates.size() + 1) {
      throw FormatError("CMC CSV: ranks out of order");
    }
    cmc.hit_rates.push_back(parse_double("hit_rate", line.substr(comma + 1)));
  }
  return cmc;
}

std::string cmc_svg_text(const std::vector<std::pair<std::string, CmcCurve>>& curves) {
  constexpr double kW = 480, kH = 360, kLeft = 60, kRight = 20, kTop = 20, kBottom = 50;
  const double pw = kW - kLeft - kRight, ph = kH - kTop - kBottom;
  std::size_t max_k = 1;
  for (const auto& [name, c] : curves) max_k = std::max(max_k, c.max_rank());
  auto px = [&](double k) { return kLeft + (max_k > 1 ? (k - 1) / static_cast<double>(max_k - 1) : 0.0) * pw; };
  auto py = [&](double r) { return kTop + (1.0 - r) * ph; };

  std::ostringstream os;
  os << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n"
     << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"480\" height=\"360\" viewBox=\"0 0 480 360\">\n"
     << "<rect x=\"0\" y=\"0\" width=\"480\" height=\"360\" fill=\"white\"/>\n"
     << "<g stroke=\"black\" stroke-width=\"1\">\n"
     << "<line x1=\"" << kLeft << "\" y1=\"" << kTop + ph << "\" x2=\"" << kLeft + pw << "\" y2=\"" << kTop + ph
     << "\"/>\n"
     << "<line x1=\"" << kLeft << "\" y1=\"" << kTop << "\" x2=\"" << kLeft << "\" y2=\"" << kTop + ph << "\"/>\n"
     << "</g>\n<g font-family=\"sans-serif\" font-size=\"11\">\n";
  for (int i = 0; i <= 5; ++i) {
    const double r = i / 5.0;
    os << "<text x=\"" << kLeft - 6 << "\" y=\"" << fixed(py(r) + 4, 2) << "\" text-anchor=\"end\">" << fixed(r, 1)
       << "</text>\n";
  }
  const std::size_t step = std::max<std::size_t>(1, max_k / 5);
  for (std::size_t k = 1; k <= max_k; k += step) {
    os << "<text x=\"" << fixed(px(static_cast<double>(k)), 2) << "\" y=\"" << kTop + ph + 16
       << "\" text-anchor=\"middle\">" << k << "</text>\n";
  }
  os << "<text x=\"" << kLeft + pw / 2 << "\" y=\"" << kH - 10 << "\" text-anchor=\"middle\">Rank</text>\n"
     << "<text x=\"16\" y=\"" << kTop + ph / 2 << "\" text-anchor=\"middle\" transform=\"rotate(-90 16 "
     << kTop + ph / 2 << ")\">Identification rate</text>\n</g>\n";
  static const char* kColors[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e"};
  for (std::size_t ci = 0; ci < curves.size(); ++ci) {
    const auto& [name, c] = curves[ci];
    os << "<path fill=\"none\" stroke=\"" << kColors[ci % 5] << "\" stroke-width=\"2\" d=\"";
    for (std::size_t k = 1; k <= c.max_rank(); ++k) {
      os << (k == 1 ? "M" : " L") << fixed(px(static_cast<double>(k)), 2) << "," << fixed(py(c.at(k)), 2);
    }
    os << "\"/>\n<text x=\"" << kLeft + pw - 4 << "\" y=\"" << kTop + ph - 8 - 14.0 * static_cast<double>(ci)
       << "\" font-family=\"sans-serif\" font-size=\"11\" text-anchor=\"end\" fill=\"" << kColors[ci % 5] << "\">"
       << name << "</text>\n";
  }
  os << "</svg>\n";
  return os.str();
}

void emit_report(const EvalReport& report, const std::filesystem::path& cmc_csv, const std::filesystem::path& svg) {
  write_file(cmc_csv, cmc_csv_text(report.cmc));
  write_file(svg, cmc_svg_text({{"CMC", report.cmc}}));
}

std::string report_text(const EvalReport& r) {
  std::ostringstream os;
  os << "rank1 = " << exact(r.rank1) << '\n'
     << "gallery_size = " << r.gallery_size << '\n'
     << "probe_count = " << r.probe_count << '\n'
     << "distractor_count = " << r.distractor_count << '\n'
     << "cmc_max_rank = " << r.cmc.max_rank() << '\n';
  for (std::size_t k = 1; k <= r.cmc.max_rank(); ++k) os << "cmc." << k << " = " << exact(r.cmc.at(k)) << '\n';
  os << "attributes = " << r.attribute_accuracy.size() << '\n';
  for (std::size_t j = 0; j < r.attribute_accuracy.size(); ++j) {
    os << "attr_acc." << j << " = " << exact(r.attribute_accuracy[j]) << '\n';
  }
  for (const auto& [k, v] : r.config) os << "config." << k << " = " << v << '\n';
  return os.str();
}

EvalReport parse_report_text(const std::string& text) {
  EvalReport r;
  std::map<std::size_t, double> cmc, attrs;
  for (const auto& kv : parse_key_values(text)) {
    const std::string& k = kv.key;
    if (k == "rank1") r.rank1 = parse_double(k, kv.value);
    else if (k == "gallery_size") r.gallery_size = parse_size(k, kv.value);
    else if (k == "probe_count") r.probe_count = parse_size(k, kv.value);
    else if (k == "distractor_count") r.distractor_count = parse_size(k, kv.value);
    else if (k == "cmc_max_rank" || k == "attributes") continue;
    else if (k.starts_with("cmc.")) cmc[parse_size(k, k.substr(4))] = parse_double(k, kv.value);
    else if (k.starts_with("attr_acc.")) attrs[parse_size(k, k.substr(9))] = parse_double(k, kv.value);
    else if (k.starts_with("config.")) r.config[k.substr(7)] = kv.value;
    else throw FormatError("report: unknown key '" + k + "'");
  }
  for (const auto& [k, v] : cmc) r.cmc.hit_rates.push_back(v);
  for (const auto& [j, v] : attrs) r.attribute_accuracy.push_back(v);
  return r;
}

}  // namespace fidn
