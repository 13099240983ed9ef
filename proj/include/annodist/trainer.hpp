#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "annodist/core.hpp"
#include "annodist/errors.hpp"
#include "annodist/kde.hpp"
#include "annodist/labels.hpp"
#include "annodist/metrics.hpp"
#include "annodist/model.hpp"
#include "annodist/parallel.hpp"
#include "annodist/rng.hpp"
#include "annodist/softhist.hpp"

namespace annodist {

enum class TaskMode { baseline, task1, task12 };

struct TrainConfig {
  double lr = 0.001;
  double lr_decay_factor = 0.1;
  int lr_patience = 5;          // epochs without improvement before decay
  int early_stop_patience = 10;
  int min_epochs = 30;
  int max_epochs = 100;
  int batch_size = 32;
  int upsample_train_k = 20;  // cheaper than the k used for targets
  double noise_epsilon = 1e-12;
  SoftHistConfig softhist;  // 64 bins, sigma 8
  int diff_grid = 64;
  int n_bins = 4;
  std::uint64_t seed = 0;
  bool verbose = false;
};

struct EpochRecord {
  int epoch = 0;
  double task1_loss = std::numeric_limits<double>::quiet_NaN();
  double task2_loss = std::numeric_limits<double>::quiet_NaN();
  double val_loss = 0.0;
  double lr = 0.0;
  int task1_steps = 0;
  int task2_steps = 0;
};

struct TrainResult {
  Parameters params;
  std::vector<EpochRecord> history;
  int epochs_run = 0;
};

// Validation-loss bookkeeping: decays the learning rate after every
// lr_patience consecutive epochs without improvement, and requests a stop
// once early_stop_patience such epochs have passed, never before min_epochs.
class PlateauScheduler {
 public:
  PlateauScheduler(double lr0, double factor, int lr_patience, int stop_patience, int min_epochs)
      : lr_(lr0), factor_(factor), lr_patience_(lr_patience), stop_patience_(stop_patience),
        min_epochs_(min_epochs) {}

  struct Decision {
    bool improved = false;
    bool decayed = false;
    bool stop = false;
  };

  // epoch is 1-based and must advance by one per call.
  Decision observe(int epoch, double val_loss) {
    Decision d;
    if (val_loss < best_) {
      best_ = val_loss;
      streak_ = 0;
      d.improved = true;
    } else {
      ++streak_;
      if (streak_ % lr_patience_ == 0) {
        lr_ *= factor_;
        d.decayed = true;
      }
    }
    d.stop = epoch >= min_epochs_ && streak_ >= stop_patience_;
    return d;
  }

  double lr() const { return lr_; }
  double best() const { return best_; }
  int streak() const { return streak_; }

 private:
  double lr_, factor_;
  int lr_patience_, stop_patience_, min_epochs_;
  double best_ = std::numeric_limits<double>::infinity();
  int streak_ = 0;
};

namespace detail {

inline std::vector<int> annotator_positions(const Corpus& corpus, const Utterance& u) {
  std::vector<int> out;
  out.reserve(u.annotations.size());
  for (const AnnotationRecord& a : u.annotations) out.push_back(corpus.annotator_index.at(a.annotator_id));
  return out;
}

inline void require_targets(const Corpus& corpus, const TargetTable& targets) {
  for (std::size_t i = 0; i < corpus.utterances.size(); ++i) {
    if (corpus.split[i] == Split::test) continue;
    if (!targets.find(corpus.utterances[i].utterance_id))
      throw DataError("missing target for utterance '" + corpus.utterances[i].utterance_id + "'");
  }
}

inline std::vector<std::string> sorted_annotator_ids(const Corpus& corpus) {
  std::vector<std::string> ids;
  ids.reserve(corpus.annotator_index.size());
  for (const auto& [id, idx] : corpus.annotator_index) ids.push_back(id);
  return ids;  // map iteration is sorted; finalize_corpus indexed it the same way
}

// Per-annotator predictions for one utterance on the given tape. Raw head
// outputs, unclamped.
inline std::vector<std::pair<ad::Var, ad::Var>> annotator_forward(TapedModel& model,
                                                                  const Utterance& u,
                                                                  const std::vector<int>& heads,
                                                                  ModelKind kind) {
  if (kind == ModelKind::multitask) return model.multitask_preds(u.features, heads);
  std::vector<std::pair<ad::Var, ad::Var>> out;
  out.reserve(heads.size());
  for (int h : heads) out.push_back(model.onehot_pred(u.features, h));
  return out;
}

struct PooledBatch {
  std::vector<ad::Var> pred_act, pred_val;
  std::vector<double> act, val;
};

inline PooledBatch pool_pairs(TapedModel& model, const Corpus& corpus,
                              const std::vector<std::size_t>& batch, ModelKind kind) {
  PooledBatch pool;
  for (std::size_t ui : batch) {
    const Utterance& u = corpus.utterances[ui];
    const std::vector<int> heads = annotator_positions(corpus, u);
    auto preds = annotator_forward(model, u, heads, kind);
    for (std::size_t j = 0; j < preds.size(); ++j) {
      pool.pred_act.push_back(preds[j].first);
      pool.pred_val.push_back(preds[j].second);
      pool.act.push_back(u.annotations[j].activation);
      pool.val.push_back(u.annotations[j].valence);
    }
  }
  return pool;
}

inline ad::Var pooled_ccc_loss(ad::Tape& tape, PooledBatch& pool) {
  ad::Var ma = tape.concat_rows(std::span<const ad::Var>(pool.pred_act.data(), pool.pred_act.size()));
  ad::Var mv = tape.concat_rows(std::span<const ad::Var>(pool.pred_val.data(), pool.pred_val.size()));
  return ccc_loss_t(tape, ma, tape.constant(Tensor::column(pool.act)), mv,
                    tape.constant(Tensor::column(pool.val)));
}

// Task 2 forward for one utterance: heads -> clamp -> upsample -> diffkde ->
// bin -> cross entropy against the cached target.
inline ad::Var task2_utterance_loss(ad::Tape& tape, TapedModel& model, const Corpus& corpus,
                                    const Utterance& u, const BinnedDistribution& target,
                                    const UpsamplePlan& plan, const TrainConfig& cfg,
                                    ModelKind kind) {
  const std::vector<int> heads = annotator_positions(corpus, u);
  auto preds = annotator_forward(model, u, heads, kind);
  std::vector<ad::Var> acts, vals;
  for (auto& [a, v] : preds) {
    acts.push_back(a);
    vals.push_back(v);
  }
  ad::Var act_col = tape.clamp(
      tape.concat_rows(std::span<const ad::Var>(acts.data(), acts.size())), -1.0, 1.0);
  ad::Var val_col = tape.clamp(
      tape.concat_rows(std::span<const ad::Var>(vals.data(), vals.size())), -1.0, 1.0);
  auto [ua, uv] = upsample_t(tape, act_col, val_col, plan);
  ad::Var grid = diffkde(tape, ua, uv, cfg.softhist, KdeConfig::auto_bandwidth(cfg.diff_grid));
  ad::Var binned = bin_grid_t(tape, grid, cfg.n_bins);
  return cross_entropy_t(tape, target.cells, binned);
}

inline double task1_validation_loss(const Corpus& corpus, Parameters& params) {
  const auto val_idx = corpus.indices_of(Split::validation);
  ad::Tape tape;
  TapedModel model(tape, params, false);
  PooledBatch pool = pool_pairs(model, corpus, val_idx, params.spec.kind);
  if (pool.act.size() < 2) return 0.0;
  std::vector<double> pa, pv;
  for (const ad::Var& v : pool.pred_act) pa.push_back(v.item());
  for (const ad::Var& v : pool.pred_val) pv.push_back(v.item());
  return ccc_loss(pa, pool.act, pv, pool.val);
}

inline double task2_validation_loss(const Corpus& corpus, Parameters& params,
                                    const TargetTable& targets, const TrainConfig& cfg) {
  const auto val_idx = corpus.indices_of(Split::validation);
  double total = 0.0;
  int count = 0;
  for (std::size_t ui : val_idx) {
    const Utterance& u = corpus.utterances[ui];
    const BinnedDistribution* target = targets.find(u.utterance_id);
    ad::Tape tape;
    TapedModel model(tape, params, false);
    // the validation upsample plan is a fixed function of (seed, utterance),
    // so the loss is comparable across epochs
    Rng rng(splitmix64(cfg.seed ^ fnv1a(u.utterance_id)), "val-upsample");
    UpsamplePlan plan = draw_upsample_plan(static_cast<int>(u.annotations.size()),
                                           cfg.upsample_train_k, cfg.noise_epsilon, rng);
    ad::Var ce = task2_utterance_loss(tape, model, corpus, u, *target, plan, cfg,
                                      params.spec.kind);
    total += ce.item();
    ++count;
  }
  return count ? total / count : 0.0;
}

inline double baseline_validation_loss(const Corpus& corpus, Parameters& params,
                                       const TargetTable& targets) {
  const auto val_idx = corpus.indices_of(Split::validation);
  double total = 0.0;
  int count = 0;
  for (std::size_t ui : val_idx) {
    const Utterance& u = corpus.utterances[ui];
    const BinnedDistribution* target = targets.find(u.utterance_id);
    ad::Tape tape;
    TapedModel model(tape, params, false);
    ad::Var pred = tape.softmax(model.baseline_logits(u.features));
    Tensor t = target->cells;
    ad::Var ce = cross_entropy_t(tape, Tensor::column(t.vec()), pred);
    total += ce.item();
    ++count;
  }
  return count ? total / count : 0.0;
}

inline std::vector<std::vector<std::size_t>> make_batches(std::vector<std::size_t>& train_idx,
                                                          Rng& shuffle_rng, int batch_size) {
  shuffle_rng.shuffle(train_idx);
  std::vector<std::vector<std::size_t>> batches;
  for (std::size_t at = 0; at < train_idx.size(); at += batch_size) {
    const std::size_t end = std::min(at + batch_size, train_idx.size());
    batches.emplace_back(train_idx.begin() + at, train_idx.begin() + end);
  }
  return batches;
}

}  // namespace detail

// Baseline task: cross entropy of softmaxed logits against the cached
// targets, plain SGD, plateau scheduling.
inline TrainResult train_baseline(const Corpus& corpus, const TargetTable& targets,
                                  const ModelSpec& spec, const TrainConfig& cfg) {
  if (spec.kind != ModelKind::baseline)
    throw std::invalid_argument("train_baseline: spec must be a baseline model");
  detail::require_targets(corpus, targets);

  TrainResult result;
  result.params = init_parameters(spec, cfg.seed, {});
  PlateauScheduler sched(cfg.lr, cfg.lr_decay_factor, cfg.lr_patience, cfg.early_stop_patience,
                         cfg.min_epochs);
  Rng shuffle_rng(cfg.seed, "shuffle");
  Rng dropout_rng(cfg.seed, "dropout");
  std::vector<std::size_t> train_idx = corpus.indices_of(Split::train);

  for (int epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    const double lr = sched.lr();
    double epoch_loss = 0.0;
    int steps = 0;
    for (const auto& batch : detail::make_batches(train_idx, shuffle_rng, cfg.batch_size)) {
      ad::Tape tape;
      TapedModel model(tape, result.params, true, &dropout_rng);
      std::optional<ad::Var> total;
      for (std::size_t ui : batch) {
        const Utterance& u = corpus.utterances[ui];
        const BinnedDistribution* target = targets.find(u.utterance_id);
        ad::Var pred = tape.softmax(model.baseline_logits(u.features));
        Tensor t = target->cells;
        ad::Var ce = cross_entropy_t(tape, Tensor::column(t.vec()), pred);
        total = total ? tape.add(*total, ce) : ce;
      }
      ad::Var loss = tape.mul_scalar(*total, 1.0 / static_cast<double>(batch.size()));
      tape.backward(loss);
      model.sgd_step(lr);
      epoch_loss += loss.item();
      ++steps;
    }
    const double val = detail::baseline_validation_loss(corpus, result.params, targets);
    EpochRecord rec;
    rec.epoch = epoch;
    rec.task1_loss = steps ? epoch_loss / steps : 0.0;
    rec.val_loss = val;
    rec.lr = lr;
    rec.task1_steps = steps;
    result.history.push_back(rec);
    result.epochs_run = epoch;
    if (cfg.verbose)
      std::fprintf(stderr, "[baseline] epoch %d loss %.6f val %.6f lr %g\n", epoch,
                   rec.task1_loss, val, lr);
    if (sched.observe(epoch, val).stop) break;
  }
  return result;
}

// Task 1: pooled CCC loss over every (annotator, utterance) pair in a batch.
inline TrainResult train_task1(const Corpus& corpus, const ModelSpec& spec,
                               const TrainConfig& cfg) {
  if (spec.kind == ModelKind::baseline)
    throw std::invalid_argument("train_task1: needs a multitask or one-hot model");
  if (!corpus.annotator_coverage_ok)
    throw DataError("train_task1: validation/test annotators missing from the train split");

  TrainResult result;
  result.params = init_parameters(spec, cfg.seed, detail::sorted_annotator_ids(corpus));
  PlateauScheduler sched(cfg.lr, cfg.lr_decay_factor, cfg.lr_patience, cfg.early_stop_patience,
                         cfg.min_epochs);
  Rng shuffle_rng(cfg.seed, "shuffle");
  Rng dropout_rng(cfg.seed, "dropout");
  std::vector<std::size_t> train_idx = corpus.indices_of(Split::train);

  for (int epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    const double lr = sched.lr();
    double epoch_loss = 0.0;
    int steps = 0;
    for (const auto& batch : detail::make_batches(train_idx, shuffle_rng, cfg.batch_size)) {
      ad::Tape tape;
      TapedModel model(tape, result.params, true, &dropout_rng);
      detail::PooledBatch pool = detail::pool_pairs(model, corpus, batch, spec.kind);
      if (pool.act.size() < 2) {
        std::fprintf(stderr, "warning: skipping batch with %zu pooled pairs (CCC undefined)\n",
                     pool.act.size());
        continue;
      }
      ad::Var loss = detail::pooled_ccc_loss(tape, pool);
      if (!std::isfinite(loss.item())) {
        std::fprintf(stderr, "warning: skipping batch with degenerate CCC denominator\n");
        continue;
      }
      tape.backward(loss);
      model.sgd_step(lr);
      epoch_loss += loss.item();
      ++steps;
    }
    const double val = detail::task1_validation_loss(corpus, result.params);
    EpochRecord rec;
    rec.epoch = epoch;
    rec.task1_loss = steps ? epoch_loss / steps : 0.0;
    rec.val_loss = val;
    rec.lr = lr;
    rec.task1_steps = steps;
    result.history.push_back(rec);
    result.epochs_run = epoch;
    if (cfg.verbose)
      std::fprintf(stderr, "[task1] epoch %d loss %.6f val %.6f lr %g\n", epoch, rec.task1_loss,
                   val, lr);
    if (sched.observe(epoch, val).stop) break;
  }
  return result;
}

// Interleaved Task 1 + Task 2: batches alternate strictly between the CCC
// task and the DiffKDE distribution task; the validation criterion is the
// unweighted sum of both validation losses.
inline TrainResult train_task12(const Corpus& corpus, const TargetTable& targets,
                                const ModelSpec& spec, const TrainConfig& cfg) {
  if (spec.kind == ModelKind::baseline)
    throw std::invalid_argument("train_task12: needs a multitask or one-hot model");
  if (!corpus.annotator_coverage_ok)
    throw DataError("train_task12: validation/test annotators missing from the train split");
  detail::require_targets(corpus, targets);

  TrainResult result;
  result.params = init_parameters(spec, cfg.seed, detail::sorted_annotator_ids(corpus));
  PlateauScheduler sched(cfg.lr, cfg.lr_decay_factor, cfg.lr_patience, cfg.early_stop_patience,
                         cfg.min_epochs);
  Rng shuffle_rng(cfg.seed, "shuffle");
  Rng dropout_rng(cfg.seed, "dropout");
  Rng upsample_rng(cfg.seed, "task2-upsample");
  std::vector<std::size_t> train_idx = corpus.indices_of(Split::train);

  for (int epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    const double lr = sched.lr();
    double loss1 = 0.0, loss2 = 0.0;
    int steps1 = 0, steps2 = 0;
    const auto batches = detail::make_batches(train_idx, shuffle_rng, cfg.batch_size);
    for (std::size_t b = 0; b < batches.size(); ++b) {
      const auto& batch = batches[b];
      ad::Tape tape;
      TapedModel model(tape, result.params, true, &dropout_rng);
      if (b % 2 == 0) {  // Task 1
        detail::PooledBatch pool = detail::pool_pairs(model, corpus, batch, spec.kind);
        if (pool.act.size() < 2) {
          std::fprintf(stderr, "warning: skipping batch with %zu pooled pairs (CCC undefined)\n",
                       pool.act.size());
          continue;
        }
        ad::Var loss = detail::pooled_ccc_loss(tape, pool);
        if (!std::isfinite(loss.item())) {
          std::fprintf(stderr, "warning: skipping batch with degenerate CCC denominator\n");
          continue;
        }
        tape.backward(loss);
        model.sgd_step(lr);
        loss1 += loss.item();
        ++steps1;
      } else {  // Task 2
        std::optional<ad::Var> total;
        for (std::size_t ui : batch) {
          const Utterance& u = corpus.utterances[ui];
          const BinnedDistribution* target = targets.find(u.utterance_id);
          UpsamplePlan plan =
              draw_upsample_plan(static_cast<int>(u.annotations.size()), cfg.upsample_train_k,
                                 cfg.noise_epsilon, upsample_rng);
          ad::Var ce = detail::task2_utterance_loss(tape, model, corpus, u, *target, plan, cfg, spec.kind);
          total = total ? tape.add(*total, ce) : ce;
        }
        ad::Var loss = tape.mul_scalar(*total, 1.0 / static_cast<double>(batch.size()));
        tape.backward(loss);
        model.sgd_step(lr);
        loss2 += loss.item();
        ++steps2;
      }
    }
    const double val1 = detail::task1_validation_loss(corpus, result.params);
    const double val2 = detail::task2_validation_loss(corpus, result.params, targets, cfg);
    EpochRecord rec;
    rec.epoch = epoch;
    rec.task1_loss = steps1 ? loss1 / steps1 : 0.0;
    rec.task2_loss = steps2 ? loss2 / steps2 : 0.0;
    rec.val_loss = val1 + val2;
    rec.lr = lr;
    rec.task1_steps = steps1;
    rec.task2_steps = steps2;
    result.history.push_back(rec);
    result.epochs_run = epoch;
    if (cfg.verbose)
      std::fprintf(stderr, "[task1+2] epoch %d t1 %.6f t2 %.6f val %.6f lr %g\n", epoch,
                   rec.task1_loss, rec.task2_loss, rec.val_loss, lr);
    if (sched.observe(epoch, rec.val_loss).stop) break;
  }
  return result;
}

// ---- evaluation ----

enum class EvalMode { within, zero_shot };
enum class DistributionMethod { diffkde, plainkde };

struct EvaluateOptions {
  EvalMode mode = EvalMode::within;
  DistributionMethod method = DistributionMethod::diffkde;
  Split split = Split::test;
  int upsample_k = 100;
  double noise_epsilon = 1e-12;
  SoftHistConfig softhist;
  int grid = 64;
  std::uint64_t seed = 0;  // labels the report and seeds eval upsampling
  int threads = 0;         // 0 = hardware default
};

struct UtteranceEvaluation {
  std::string utterance_id;
  BinnedDistribution predicted;
  double tvd_to_target = 0.0;
  double jsd_to_target = 0.0;
  double consensus_act = 0.0, consensus_val = 0.0;
};

struct EvaluationDetail {
  SeedEvaluation summary;
  std::vector<UtteranceEvaluation> utterances;
};

// Evaluates one trained model on one split. Within-corpus mode uses only the
// heads of annotators who labeled each utterance; zero-shot mode feeds every
// head. All model kinds produce consensus values through the same binned
// distribution path.
inline EvaluationDetail evaluate_detailed(const Parameters& params_in, const Corpus& corpus,
                                          const TargetTable& targets,
                                          const EvaluateOptions& opt) {
  Parameters params = params_in;  // local copy; forward passes register tensors from it
  if (corpus.feature_dim != params.spec.input_dim)
    throw DataError("evaluate: corpus feature dimension does not match the model");

  std::map<std::string, int> head_of;
  for (std::size_t i = 0; i < params.annotator_ids.size(); ++i)
    head_of.emplace(params.annotator_ids[i], static_cast<int>(i));

  const auto idx = corpus.indices_of(opt.split);
  const ModelKind kind = params.spec.kind;
  const bool annotator_metrics = opt.mode == EvalMode::within && kind != ModelKind::baseline;

  std::vector<int> all_heads;
  if (opt.mode == EvalMode::zero_shot)
    for (int h = 0; h < static_cast<int>(params.annotator_ids.size()); ++h) all_heads.push_back(h);

  struct Slot {
    UtteranceEvaluation ue;
    std::vector<double> pair_pred_act, pair_pred_val, pair_act, pair_val;
    std::vector<int> pair_head;
  };
  std::vector<Slot> slots(idx.size());

  parallel_for(
      idx.size(),
      [&](std::size_t s) {
        const Utterance& u = corpus.utterances[idx[s]];
        Slot& slot = slots[s];
        slot.ue.utterance_id = u.utterance_id;
        const BinnedDistribution* target = targets.find(u.utterance_id);
        if (!target) throw DataError("evaluate: missing target for utterance '" + u.utterance_id + "'");

        ad::Tape tape;
        TapedModel model(tape, params, false);
        BinnedDistribution pred;
        if (kind == ModelKind::baseline) {
          ad::Var sm = tape.softmax(model.baseline_logits(u.features));
          pred.n = params.spec.n_bins;
          pred.cells = Tensor(pred.n, pred.n);
          for (std::size_t i = 0; i < pred.cells.size(); ++i) pred.cells[i] = sm.value()[i];
        } else {
          std::vector<int> heads;
          if (opt.mode == EvalMode::zero_shot) {
            heads = all_heads;
          } else {
            for (const AnnotationRecord& a : u.annotations) {
              auto it = head_of.find(a.annotator_id);
              if (it == head_of.end())
                throw DataError("evaluate: annotator '" + a.annotator_id +
                                "' unknown to the model (split contract violated)");
              heads.push_back(it->second);
            }
          }
          auto preds = detail::annotator_forward(model, u, heads, kind);
          std::vector<std::pair<double, double>> points;
          points.reserve(preds.size());
          for (auto& [a, v] : preds)
            points.emplace_back(std::clamp(a.item(), -1.0, 1.0),
                                std::clamp(v.item(), -1.0, 1.0));
          if (annotator_metrics) {
            for (std::size_t j = 0; j < heads.size(); ++j) {
              slot.pair_pred_act.push_back(preds[j].first.item());
              slot.pair_pred_val.push_back(preds[j].second.item());
              slot.pair_act.push_back(u.annotations[j].activation);
              slot.pair_val.push_back(u.annotations[j].valence);
              slot.pair_head.push_back(heads[j]);
            }
          }
          UpsampleConfig up;
          up.k_subsets = opt.upsample_k;
          up.noise_epsilon = opt.noise_epsilon;
          up.rng_seed = splitmix64(splitmix64(opt.seed ^ fnv1a("eval")) ^ fnv1a(u.utterance_id));
          auto samples = upsample(points, up);
          std::vector<double> act(samples.size()), val(samples.size());
          for (std::size_t i = 0; i < samples.size(); ++i) {
            act[i] = samples[i].first;
            val[i] = samples[i].second;
          }
          if (opt.method == DistributionMethod::plainkde) {
            pred = bin_grid(kde2d(act, val, KdeConfig::auto_bandwidth(opt.grid)), params.spec.n_bins);
          } else {
            ad::Tape kde_tape;
            ad::Var grid = diffkde(kde_tape, kde_tape.constant(Tensor::column(act)),
                                   kde_tape.constant(Tensor::column(val)), opt.softhist,
                                   KdeConfig::auto_bandwidth(opt.grid));
            ad::Var binned = bin_grid_t(kde_tape, grid, params.spec.n_bins);
            pred.n = params.spec.n_bins;
            pred.cells = binned.value();
          }
        }
        slot.ue.tvd_to_target = tvd(pred, *target);
        slot.ue.jsd_to_target = jsd(pred, *target);
        auto [ca, cv] = consensus_from_distribution(pred);
        slot.ue.consensus_act = ca;
        slot.ue.consensus_val = cv;
        slot.ue.predicted = std::move(pred);
      },
      opt.threads > 0 ? opt.threads : hardware_threads());

  EvaluationDetail out;
  out.summary.seed = opt.seed;
  std::vector<double> cons_pred_act, cons_pred_val, cons_act, cons_val;
  std::vector<double> pool_pa, pool_pv, pool_a, pool_v;
  std::map<int, std::vector<std::size_t>> by_head;
  for (std::size_t s = 0; s < slots.size(); ++s) {
    const Utterance& u = corpus.utterances[idx[s]];
    Slot& slot = slots[s];
    out.summary.tvd_mean += slot.ue.tvd_to_target;
    out.summary.jsd_mean += slot.ue.jsd_to_target;
    cons_pred_act.push_back(slot.ue.consensus_act);
    cons_pred_val.push_back(slot.ue.consensus_val);
    cons_act.push_back(u.consensus_act);
    cons_val.push_back(u.consensus_val);
    for (std::size_t j = 0; j < slot.pair_act.size(); ++j) {
      by_head[slot.pair_head[j]].push_back(pool_a.size());
      pool_pa.push_back(slot.pair_pred_act[j]);
      pool_pv.push_back(slot.pair_pred_val[j]);
      pool_a.push_back(slot.pair_act[j]);
      pool_v.push_back(slot.pair_val[j]);
    }
    out.utterances.push_back(std::move(slot.ue));
  }
  if (!slots.empty()) {
    out.summary.tvd_mean /= static_cast<double>(slots.size());
    out.summary.jsd_mean /= static_cast<double>(slots.size());
  }
  if (cons_act.size() >= 2) {
    out.summary.act_ccc = ccc(cons_pred_act, cons_act);
    out.summary.val_ccc = ccc(cons_pred_val, cons_val);
  }
  if (annotator_metrics && pool_a.size() >= 2) {
    out.summary.has_annotator_ccc = true;
    out.summary.annotator_act_ccc = ccc(pool_pa, pool_a);
    out.summary.annotator_val_ccc = ccc(pool_pv, pool_v);
    double macro_a = 0.0, macro_v = 0.0;
    int macro_n = 0;
    for (const auto& [head, rows] : by_head) {
      if (rows.size() < 2) continue;
      std::vector<double> pa, pv, aa, vv;
      for (std::size_t r : rows) {
        pa.push_back(pool_pa[r]);
        pv.push_back(pool_pv[r]);
        aa.push_back(pool_a[r]);
        vv.push_back(pool_v[r]);
      }
      macro_a += ccc(pa, aa);
      macro_v += ccc(pv, vv);
      ++macro_n;
    }
    if (macro_n > 0) {
      out.summary.annotator_act_ccc_macro = macro_a / macro_n;
      out.summary.annotator_val_ccc_macro = macro_v / macro_n;
    }
  }
  return out;
}

inline SeedEvaluation evaluate(const Parameters& params, const Corpus& corpus,
                               const TargetTable& targets, const EvaluateOptions& opt) {
  return evaluate_detailed(params, corpus, targets, opt).summary;
}

}  // namespace annodist
