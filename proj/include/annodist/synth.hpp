#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "annodist/core.hpp"
#include "annodist/rng.hpp"

namespace annodist {

// A simulated crowdsourced annotator: an affine view of the latent affect
// plus optional Gaussian noise. Scale and bias are chosen so that ratings of
// in-range latents stay inside [-1, 1].
struct AnnotatorPersona {
  std::string id;
  double bias_act = 0.0, bias_val = 0.0;
  double scale_act = 1.0, scale_val = 1.0;
  double noise_std = 0.0;
  double coverage = 0.2;  // probability of labeling any given utterance
};

struct SynthConfig {
  int n_utterances = 700;
  int n_annotators = 40;
  int feature_dim = 32;
  double mean_annotations = 7.0;  // sets persona coverage = mean / A
  double noise_std = 0.0;
  double feature_noise = 0.05;
  // Gain on the latent-to-feature map. Sized so plain SGD at the reference
  // learning rate makes visible progress within the epoch budget.
  double feature_scale = 2.5;
  double train_frac = 0.7;
  double val_frac = 0.15;
  std::uint64_t seed = 0;
};

inline std::vector<AnnotatorPersona> make_personas(const SynthConfig& cfg) {
  Rng rng(cfg.seed, "personas");
  std::vector<AnnotatorPersona> personas(cfg.n_annotators);
  const double coverage =
      std::clamp(cfg.mean_annotations / static_cast<double>(cfg.n_annotators), 0.01, 1.0);
  char buf[16];
  for (int i = 0; i < cfg.n_annotators; ++i) {
    AnnotatorPersona& p = personas[i];
    std::snprintf(buf, sizeof(buf), "a%03d", i);
    p.id = buf;
    p.bias_act = rng.uniform(-0.3, 0.3);
    p.bias_val = rng.uniform(-0.3, 0.3);
    p.scale_act = rng.uniform(0.5, 0.7);
    p.scale_val = rng.uniform(0.5, 0.7);
    p.noise_std = cfg.noise_std;
    p.coverage = coverage;
  }
  return personas;
}

// Deterministic synthetic corpus: latents uniform on [-1,1]^2, features a
// fixed random linear map of the latent plus small noise, ratings from the
// personas. Every utterance receives at least two annotations.
inline Corpus generate_corpus(const SynthConfig& cfg) {
  if (cfg.n_utterances < 1 || cfg.n_annotators < 2 || cfg.feature_dim < 1)
    throw std::invalid_argument("generate_corpus: sizes must be positive (>= 2 annotators)");
  const std::vector<AnnotatorPersona> personas = make_personas(cfg);

  // fixed feature map shared by the corpus
  Rng map_rng(cfg.seed, "feature-map");
  std::vector<double> w_act(cfg.feature_dim), w_val(cfg.feature_dim), w_bias(cfg.feature_dim);
  for (int d = 0; d < cfg.feature_dim; ++d) {
    w_act[d] = map_rng.normal(0.0, cfg.feature_scale);
    w_val[d] = map_rng.normal(0.0, cfg.feature_scale);
    w_bias[d] = map_rng.normal(0.0, 0.1);
  }

  Corpus corpus;
  corpus.utterances.resize(cfg.n_utterances);
  char buf[16];
  for (int i = 0; i < cfg.n_utterances; ++i) {
    std::snprintf(buf, sizeof(buf), "u%05d", i);
    Utterance& u = corpus.utterances[i];
    u.utterance_id = buf;
    Rng rng(cfg.seed, u.utterance_id);
    const double lat_act = rng.uniform(-1.0, 1.0);
    const double lat_val = rng.uniform(-1.0, 1.0);

    u.features.resize(cfg.feature_dim);
    for (int d = 0; d < cfg.feature_dim; ++d)
      u.features[d] = w_act[d] * lat_act + w_val[d] * lat_val + w_bias[d] +
                      rng.normal(0.0, cfg.feature_noise);

    std::vector<int> labelers;
    for (int a = 0; a < cfg.n_annotators; ++a)
      if (rng.uniform() < personas[a].coverage) labelers.push_back(a);
    while (labelers.size() < 2) {  // guarantee at least two annotations
      const int a = static_cast<int>(rng.below(cfg.n_annotators));
      if (std::find(labelers.begin(), labelers.end(), a) == labelers.end())
        labelers.push_back(a);
    }
    std::sort(labelers.begin(), labelers.end());

    for (int a : labelers) {
      const AnnotatorPersona& p = personas[a];
      double act = p.scale_act * lat_act + p.bias_act;
      double val = p.scale_val * lat_val + p.bias_val;
      if (p.noise_std > 0.0) {
        act += rng.normal(0.0, p.noise_std);
        val += rng.normal(0.0, p.noise_std);
      }
      u.annotations.push_back(
          {u.utterance_id, p.id, std::clamp(act, -1.0, 1.0), std::clamp(val, -1.0, 1.0)});
    }
  }

  // split assignment, then coverage repair: any annotator appearing only
  // outside train pulls their first such utterance into train
  std::vector<std::size_t> order(corpus.utterances.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  Rng split_rng(cfg.seed, "split");
  split_rng.shuffle(order);
  corpus.split.assign(corpus.utterances.size(), Split::test);
  const auto n_train = static_cast<std::size_t>(cfg.train_frac * corpus.utterances.size());
  const auto n_val = static_cast<std::size_t>(cfg.val_frac * corpus.utterances.size());
  for (std::size_t r = 0; r < order.size(); ++r) {
    if (r < n_train)
      corpus.split[order[r]] = Split::train;
    else if (r < n_train + n_val)
      corpus.split[order[r]] = Split::validation;
  }
  std::map<std::string, bool> seen_in_train;
  for (std::size_t i = 0; i < corpus.utterances.size(); ++i)
    if (corpus.split[i] == Split::train)
      for (const AnnotationRecord& a : corpus.utterances[i].annotations)
        seen_in_train[a.annotator_id] = true;
  for (std::size_t i = 0; i < corpus.utterances.size(); ++i) {
    if (corpus.split[i] == Split::train) continue;
    for (const AnnotationRecord& a : corpus.utterances[i].annotations)
      if (!seen_in_train.count(a.annotator_id)) {
        corpus.split[i] = Split::train;
        for (const AnnotationRecord& b : corpus.utterances[i].annotations)
          seen_in_train[b.annotator_id] = true;
        break;
      }
  }

  finalize_corpus(corpus);
  return corpus;
}

}  // namespace annodist
