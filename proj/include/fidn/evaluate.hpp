#pragma once

#include <cstddef>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "fidn/data.hpp"
#include "fidn/model.hpp"

namespace fidn {

struct EmbeddingSet {
  std::vector<std::size_t> ids;
  Tensor<float> vectors;  // [M, D], rows L2-normalised
  Role role = Role::Gallery;

  std::size_t size() const { return ids.size(); }
};

// Eval-mode forward; rows are the identification branch's first FC
// activations, L2-normalised. Chunked so memory stays bounded.
EmbeddingSet embed(const ModelParams<float>& params, const LoadedDataset& data, std::size_t chunk = 64);

// Rows of `extra` appended after `base`.
EmbeddingSet concat(const EmbeddingSet& base, const EmbeddingSet& extra);

struct CmcCurve {
  std::vector<double> hit_rates;  // index k-1 holds CMC(k)

  std::size_t max_rank() const { return hit_rates.size(); }
  double at(std::size_t k) const { return hit_rates.at(k - 1); }
};

// 1-based rank of the first gallery entry sharing the probe identity when
// the gallery is ordered by cosine similarity descending, ties by index
// ascending. Throws if the identity is absent from the gallery.
std::size_t first_match_rank(const EmbeddingSet& gallery, const float* probe_row, std::size_t probe_id);

// Closed-set CMC for k = 1..K.
CmcCurve rank_k_hits(const EmbeddingSet& gallery, const EmbeddingSet& probe, std::size_t max_rank);

// Fraction correct per attribute with prediction = (probability > 0.5).
std::vector<double> attribute_accuracy(const Tensor<float>& attr_logits, const Tensor<float>& labels);
std::vector<double> attribute_accuracy(const ModelParams<float>& params, const LoadedDataset& data);

// Closed-set classifier accuracy of argmax(g) against the identity labels.
double identification_accuracy(const ModelParams<float>& params, const LoadedDataset& data);

struct EvalReport {
  double rank1 = 0.0;
  CmcCurve cmc;
  std::vector<double> attribute_accuracy;
  std::size_t gallery_size = 0;
  std::size_t probe_count = 0;
  std::size_t distractor_count = 0;
  std::map<std::string, std::string> config;  // echoed verbatim
};

EvalReport evaluate(const ModelParams<float>& params, const LoadedDataset& gallery, const LoadedDataset& probe,
                    const LoadedDataset* distractors, std::size_t max_rank = 0);

// CSV "k,hit_rate" and a standalone SVG line plot of the CMC curve.
void emit_report(const EvalReport& report, const std::filesystem::path& cmc_csv, const std::filesystem::path& svg);
std::string cmc_csv_text(const CmcCurve& cmc);
CmcCurve parse_cmc_csv(const std::string& text);
std::string cmc_svg_text(const std::vector<std::pair<std::string, CmcCurve>>& curves);

// Flat key=value serialisation of the report.
std::string report_text(const EvalReport& report);
EvalReport parse_report_text(const std::string& text);

}  // namespace fidn
