#pragma once

#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "annodist/errors.hpp"
#include "annodist/tensor.hpp"

namespace annodist {

// One annotator's rating of one utterance. Activation and valence are in
// [-1, 1] once a corpus has been scaled.
struct AnnotationRecord {
  std::string utterance_id;
  std::string annotator_id;
  double activation = 0.0;
  double valence = 0.0;
};

enum class Split { train, validation, test };

inline const char* split_name(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::validation: return "validation";
    default: return "test";
  }
}

struct Utterance {
  std::string utterance_id;
  std::vector<double> features;
  std::vector<AnnotationRecord> annotations;  // duplicate-merged
  double consensus_act = 0.0;  // arithmetic mean of annotations
  double consensus_val = 0.0;
};

// Immutable after construction; safe for concurrent reads.
struct Corpus {
  std::vector<Utterance> utterances;
  std::vector<Split> split;                    // parallel to utterances
  std::map<std::string, int> annotator_index;  // annotator_id -> [0, A)
  int feature_dim = 0;
  // True when every annotator in validation/test also labeled a train
  // utterance. Required for training and within-corpus evaluation.
  bool annotator_coverage_ok = false;

  int num_annotators() const { return static_cast<int>(annotator_index.size()); }

  std::vector<std::size_t> indices_of(Split s) const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < utterances.size(); ++i)
      if (split[i] == s) out.push_back(i);
    return out;
  }
};

// A G x G nonnegative grid over [-1,1]^2 summing to 1. Rows index activation,
// columns valence.
struct ProbabilityGrid {
  int size = 0;
  Tensor cells;
};

// The N x N (default 4x4) distribution the models predict. Row-major,
// activation-major, same orientation as ProbabilityGrid.
struct BinnedDistribution {
  int n = 0;
  Tensor cells;
};

inline bool is_normalized_grid(const Tensor& cells, double tol = 1e-8) {
  double total = 0.0;
  for (std::size_t i = 0; i < cells.size(); ++i) {
    if (!(cells[i] >= 0.0)) return false;
    total += cells[i];
  }
  return std::fabs(total - 1.0) <= tol;
}

// Collapses duplicate (utterance_id, annotator_id) pairs to their arithmetic
// mean, preserving first-occurrence order.
inline std::vector<AnnotationRecord> merge_duplicate_annotations(
    const std::vector<AnnotationRecord>& records) {
  std::vector<AnnotationRecord> merged;
  std::map<std::pair<std::string, std::string>, std::size_t> seen;
  std::vector<int> counts;
  merged.reserve(records.size());
  for (const AnnotationRecord& r : records) {
    if (!std::isfinite(r.activation) || !std::isfinite(r.valence))
      throw DataError("non-finite annotation value for utterance '" + r.utterance_id +
                      "', annotator '" + r.annotator_id + "'");
    auto key = std::make_pair(r.utterance_id, r.annotator_id);
    auto it = seen.find(key);
    if (it == seen.end()) {
      seen.emplace(key, merged.size());
      merged.push_back(r);
      counts.push_back(1);
    } else {
      AnnotationRecord& m = merged[it->second];
      const int c = counts[it->second];
      m.activation = (m.activation * c + r.activation) / (c + 1);
      m.valence = (m.valence * c + r.valence) / (c + 1);
      counts[it->second] = c + 1;
    }
  }
  return merged;
}

// Linear map sending observed_min -> -1 and observed_max -> 1.
inline std::vector<double> minmax_scale(const std::vector<double>& values, double observed_min,
                                        double observed_max) {
  if (!(observed_max > observed_min))
    throw DataError("degenerate label range: min " + std::to_string(observed_min) + " >= max " +
                    std::to_string(observed_max));
  std::vector<double> out;
  out.reserve(values.size());
  const double span = observed_max - observed_min;
  for (double v : values) out.push_back(-1.0 + 2.0 * (v - observed_min) / span);
  return out;
}

inline double minmax_scale_one(double v, double lo, double hi) {
  if (lo == -1.0 && hi == 1.0) return v;  // native range, keep bit-exact
  return -1.0 + 2.0 * (v - lo) / (hi - lo);
}

inline double minmax_unscale_one(double v, double lo, double hi) {
  if (lo == -1.0 && hi == 1.0) return v;
  return lo + (v + 1.0) * 0.5 * (hi - lo);
}

// Computes consensus values, the annotator index, the feature-dimension
// check, and the coverage flag. Annotations must already be merged + scaled.
inline void finalize_corpus(Corpus& corpus) {
  if (corpus.split.size() != corpus.utterances.size())
    throw DataError("corpus split tags do not cover every utterance");
  corpus.annotator_index.clear();
  int dim = -1;
  for (Utterance& u : corpus.utterances) {
    if (u.annotations.empty())
      throw DataError("utterance '" + u.utterance_id + "' has no annotations");
    double sa = 0.0, sv = 0.0;
    for (const AnnotationRecord& a : u.annotations) {
      sa += a.activation;
      sv += a.valence;
      corpus.annotator_index.emplace(a.annotator_id, 0);
    }
    u.consensus_act = sa / static_cast<double>(u.annotations.size());
    u.consensus_val = sv / static_cast<double>(u.annotations.size());
    const int d = static_cast<int>(u.features.size());
    if (dim < 0) dim = d;
    if (d != dim)
      throw DataError("feature dimension mismatch at utterance '" + u.utterance_id + "'");
  }
  corpus.feature_dim = dim < 0 ? 0 : dim;
  int next = 0;
  for (auto& [id, idx] : corpus.annotator_index) idx = next++;

  std::map<std::string, bool> in_train;
  for (std::size_t i = 0; i < corpus.utterances.size(); ++i)
    if (corpus.split[i] == Split::train)
      for (const AnnotationRecord& a : corpus.utterances[i].annotations)
        in_train[a.annotator_id] = true;
  corpus.annotator_coverage_ok = true;
  for (std::size_t i = 0; i < corpus.utterances.size(); ++i) {
    if (corpus.split[i] == Split::train) continue;
    for (const AnnotationRecord& a : corpus.utterances[i].annotations)
      if (!in_train.count(a.annotator_id)) {
        corpus.annotator_coverage_ok = false;
        return;
      }
  }
}

}  // namespace annodist
