#pragma once

#include <cstdint>
#include <fstream>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "annodist/autodiff.hpp"
#include "annodist/errors.hpp"
#include "annodist/rng.hpp"
#include "annodist/tensor.hpp"

namespace annodist {

enum class ModelKind { baseline, multitask, onehot };

inline const char* model_kind_name(ModelKind k) {
  switch (k) {
    case ModelKind::baseline: return "baseline";
    case ModelKind::multitask: return "multitask";
    default: return "onehot";
  }
}

inline ModelKind model_kind_from_name(const std::string& s) {
  if (s == "baseline") return ModelKind::baseline;
  if (s == "multitask") return ModelKind::multitask;
  if (s == "onehot") return ModelKind::onehot;
  throw DataError("unknown model kind '" + s + "'");
}

struct ModelSpec {
  ModelKind kind = ModelKind::multitask;
  int input_dim = 0;     // feature dimension D
  int n_annotators = 0;  // A; used by multitask and onehot
  int hidden = 256;
  double dropout_p = 0.2;
  int n_bins = 4;  // baseline predicts n_bins^2 logits

  int trunk_input_dim() const {
    return kind == ModelKind::onehot ? input_dim + n_annotators : input_dim;
  }
  int baseline_outputs() const { return n_bins * n_bins; }
};

struct BranchParams {
  Tensor w1, b1, w2, b2;  // two hidden x hidden layers with ReLU
};

// All weights of one model. The trunk is shared; branch layers are the
// duplicated pair of common layers; heads are per-prediction linear layers.
struct Parameters {
  ModelSpec spec;
  std::uint64_t init_seed = 0;
  std::vector<std::string> annotator_ids;  // head order (multitask), id order (onehot)
  Tensor trunk_w, trunk_b;
  BranchParams act_branch, val_branch;  // multitask / onehot
  BranchParams dist_branch;             // baseline
  Tensor baseline_w, baseline_b;
  std::vector<Tensor> act_head_w, act_head_b;
  std::vector<Tensor> val_head_w, val_head_b;
};

namespace detail {

inline Tensor init_linear(Rng& rng, int rows, int cols, int fan_in) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  Tensor t(rows, cols);
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = rng.uniform(-bound, bound);
  return t;
}

inline BranchParams init_branch(Rng& rng, int hidden) {
  BranchParams b;
  b.w1 = init_linear(rng, hidden, hidden, hidden);
  b.b1 = init_linear(rng, hidden, 1, hidden);
  b.w2 = init_linear(rng, hidden, hidden, hidden);
  b.b2 = init_linear(rng, hidden, 1, hidden);
  return b;
}

}  // namespace detail

// Uniform +-1/sqrt(fan_in) initialization, drawn in a fixed order so a seed
// fully determines the parameters.
inline Parameters init_parameters(const ModelSpec& spec, std::uint64_t seed,
                                  std::vector<std::string> annotator_ids) {
  if (spec.kind != ModelKind::baseline &&
      static_cast<int>(annotator_ids.size()) != spec.n_annotators)
    throw std::invalid_argument("init_parameters: annotator id list must match n_annotators");
  Parameters p;
  p.spec = spec;
  p.init_seed = seed;
  p.annotator_ids = std::move(annotator_ids);
  Rng rng(seed, "init");
  const int in = spec.trunk_input_dim();
  p.trunk_w = detail::init_linear(rng, spec.hidden, in, in);
  p.trunk_b = detail::init_linear(rng, spec.hidden, 1, in);
  if (spec.kind == ModelKind::baseline) {
    p.dist_branch = detail::init_branch(rng, spec.hidden);
    p.baseline_w = detail::init_linear(rng, spec.baseline_outputs(), spec.hidden, spec.hidden);
    p.baseline_b = detail::init_linear(rng, spec.baseline_outputs(), 1, spec.hidden);
  } else {
    p.act_branch = detail::init_branch(rng, spec.hidden);
    p.val_branch = detail::init_branch(rng, spec.hidden);
    const int heads = spec.kind == ModelKind::multitask ? spec.n_annotators : 1;
    for (int h = 0; h < heads; ++h) {
      p.act_head_w.push_back(detail::init_linear(rng, 1, spec.hidden, spec.hidden));
      p.act_head_b.push_back(detail::init_linear(rng, 1, 1, spec.hidden));
    }
    for (int h = 0; h < heads; ++h) {
      p.val_head_w.push_back(detail::init_linear(rng, 1, spec.hidden, spec.hidden));
      p.val_head_b.push_back(detail::init_linear(rng, 1, 1, spec.hidden));
    }
  }
  return p;
}

// Registers parameters on a tape lazily, runs forward passes, and applies
// SGD updates from the accumulated gradients. Only parameters that actually
// participated in a forward pass are registered, so a step cannot touch
// inactive heads.
class TapedModel {
 public:
  TapedModel(ad::Tape& tape, Parameters& params, bool train_mode, Rng* dropout_rng = nullptr)
      : tape_(tape), params_(params), train_(train_mode), rng_(dropout_rng) {
    if (train_ && params_.spec.dropout_p > 0.0 && rng_ == nullptr)
      throw std::invalid_argument("TapedModel: train mode needs a dropout RNG");
  }

  // Baseline: trunk -> distribution branch -> n_bins^2 logits.
  ad::Var baseline_logits(const std::vector<double>& features) {
    require_kind(ModelKind::baseline);
    ad::Var h = trunk(features_input(features));
    ad::Var d = branch(dist_vars(), h);
    return linear(var(params_.baseline_w), var(params_.baseline_b), d);
  }

  // Multitask: one shared trunk/branch pass, then the requested annotator
  // heads. Returns (act, val) scalar Vars per annotator in subset order.
  std::vector<std::pair<ad::Var, ad::Var>> multitask_preds(const std::vector<double>& features,
                                                           const std::vector<int>& annotators) {
    require_kind(ModelKind::multitask);
    ad::Var h = trunk(features_input(features));
    ad::Var ha = branch(act_vars(), h);
    ad::Var hv = branch(val_vars(), h);
    std::vector<std::pair<ad::Var, ad::Var>> out;
    out.reserve(annotators.size());
    for (int a : annotators) {
      check_annotator(a);
      out.emplace_back(
          linear(var(params_.act_head_w[a]), var(params_.act_head_b[a]), ha),
          linear(var(params_.val_head_w[a]), var(params_.val_head_b[a]), hv));
    }
    return out;
  }

  // One-hot: annotator identity is appended to the feature vector; a single
  // pair of heads serves every annotator.
  std::pair<ad::Var, ad::Var> onehot_pred(const std::vector<double>& features, int annotator) {
    require_kind(ModelKind::onehot);
    check_annotator(annotator);
    ad::Var h = trunk(features_input(onehot_input(features, annotator)));
    ad::Var ha = branch(act_vars(), h);
    ad::Var hv = branch(val_vars(), h);
    return {linear(var(params_.act_head_w[0]), var(params_.act_head_b[0]), ha),
            linear(var(params_.val_head_w[0]), var(params_.val_head_b[0]), hv)};
  }

  std::vector<double> onehot_input(const std::vector<double>& features, int annotator) const {
    std::vector<double> in(features);
    in.resize(features.size() + params_.spec.n_annotators, 0.0);
    in[features.size() + annotator] = 1.0;
    return in;
  }

  // Plain SGD over every parameter registered on this tape.
  void sgd_step(double lr) {
    for (auto& [tensor, v] : registered_) {
      const Tensor& g = tape_.grad(v);
      for (std::size_t i = 0; i < tensor->size(); ++i) (*tensor)[i] -= lr * g[i];
    }
  }

  // Parameter tensors touched by forward passes so far (for isolation audits).
  std::vector<const Tensor*> registered_tensors() const {
    std::vector<const Tensor*> out;
    out.reserve(registered_.size());
    for (const auto& [tensor, v] : registered_) out.push_back(tensor);
    return out;
  }

  ad::Var var(Tensor& t) {
    auto it = cache_.find(&t);
    if (it != cache_.end()) return it->second;
    ad::Var v = tape_.input(t);
    cache_.emplace(&t, v);
    registered_.emplace_back(&t, v);
    return v;
  }

 private:
  struct BranchVars {
    ad::Var w1, b1, w2, b2;
  };

  void require_kind(ModelKind k) {
    if (params_.spec.kind != k) throw std::invalid_argument("model kind mismatch");
  }

  void check_annotator(int a) const {
    const int heads = params_.spec.kind == ModelKind::multitask
                          ? static_cast<int>(params_.act_head_w.size())
                          : params_.spec.n_annotators;
    if (a < 0 || a >= heads) throw std::invalid_argument("annotator index out of range");
  }

  ad::Var features_input(const std::vector<double>& features) {
    if (static_cast<int>(features.size()) != params_.spec.trunk_input_dim())
      throw std::invalid_argument("feature dimension mismatch");
    Tensor x = Tensor::column(features);
    if (train_ && params_.spec.dropout_p > 0.0) {
      // inverted dropout: eval mode needs no rescaling
      const double keep = 1.0 - params_.spec.dropout_p;
      for (std::size_t i = 0; i < x.size(); ++i)
        x[i] = rng_->uniform() < keep ? x[i] / keep : 0.0;
    }
    return tape_.constant(std::move(x));
  }

  ad::Var trunk(ad::Var x) {
    return tape_.relu(linear(var(params_.trunk_w), var(params_.trunk_b), x));
  }

  BranchVars act_vars() { return branch_vars(params_.act_branch); }
  BranchVars val_vars() { return branch_vars(params_.val_branch); }
  BranchVars dist_vars() { return branch_vars(params_.dist_branch); }

  BranchVars branch_vars(BranchParams& b) {
    return {var(b.w1), var(b.b1), var(b.w2), var(b.b2)};
  }

  ad::Var branch(BranchVars b, ad::Var h) {
    ad::Var h1 = tape_.relu(tape_.add(tape_.matmul(b.w1, h), b.b1));
    return tape_.relu(tape_.add(tape_.matmul(b.w2, h1), b.b2));
  }

  ad::Var linear(ad::Var w, ad::Var b, ad::Var x) {
    return tape_.add(tape_.matmul(w, x), b);
  }

  ad::Tape& tape_;
  Parameters& params_;
  bool train_;
  Rng* rng_;
  std::map<Tensor*, ad::Var> cache_;
  std::vector<std::pair<Tensor*, ad::Var>> registered_;
};

// ---- checkpoint serialization (versioned JSON; bit-exact round trip) ----

namespace detail {

inline nlohmann::json tensor_to_json(const Tensor& t) {
  nlohmann::json j;
  j["rows"] = t.rows();
  j["cols"] = t.cols();
  j["data"] = t.vec();
  return j;
}

inline Tensor tensor_from_json(const nlohmann::json& j) {
  Tensor t(j.at("rows").get<int>(), j.at("cols").get<int>());
  const auto& data = j.at("data");
  if (data.size() != t.size()) throw DataError("checkpoint tensor size mismatch");
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = data[i].get<double>();
  return t;
}

inline nlohmann::json branch_to_json(const BranchParams& b) {
  return {{"w1", tensor_to_json(b.w1)},
          {"b1", tensor_to_json(b.b1)},
          {"w2", tensor_to_json(b.w2)},
          {"b2", tensor_to_json(b.b2)}};
}

inline BranchParams branch_from_json(const nlohmann::json& j) {
  return {tensor_from_json(j.at("w1")), tensor_from_json(j.at("b1")),
          tensor_from_json(j.at("w2")), tensor_from_json(j.at("b2"))};
}

}  // namespace detail

inline nlohmann::json checkpoint_to_json(const Parameters& p) {
  nlohmann::json j;
  j["version"] = 1;
  j["kind"] = model_kind_name(p.spec.kind);
  j["input_dim"] = p.spec.input_dim;
  j["n_annotators"] = p.spec.n_annotators;
  j["hidden"] = p.spec.hidden;
  j["dropout_p"] = p.spec.dropout_p;
  j["n_bins"] = p.spec.n_bins;
  j["init_seed"] = p.init_seed;
  j["annotator_ids"] = p.annotator_ids;
  j["trunk_w"] = detail::tensor_to_json(p.trunk_w);
  j["trunk_b"] = detail::tensor_to_json(p.trunk_b);
  if (p.spec.kind == ModelKind::baseline) {
    j["dist_branch"] = detail::branch_to_json(p.dist_branch);
    j["baseline_w"] = detail::tensor_to_json(p.baseline_w);
    j["baseline_b"] = detail::tensor_to_json(p.baseline_b);
  } else {
    j["act_branch"] = detail::branch_to_json(p.act_branch);
    j["val_branch"] = detail::branch_to_json(p.val_branch);
    auto heads = nlohmann::json::array();
    for (std::size_t h = 0; h < p.act_head_w.size(); ++h)
      heads.push_back({{"act_w", detail::tensor_to_json(p.act_head_w[h])},
                       {"act_b", detail::tensor_to_json(p.act_head_b[h])},
                       {"val_w", detail::tensor_to_json(p.val_head_w[h])},
                       {"val_b", detail::tensor_to_json(p.val_head_b[h])}});
    j["heads"] = std::move(heads);
  }
  return j;
}

inline Parameters checkpoint_from_json(const nlohmann::json& j) {
  if (j.at("version").get<int>() != 1) throw DataError("unsupported checkpoint version");
  Parameters p;
  p.spec.kind = model_kind_from_name(j.at("kind").get<std::string>());
  p.spec.input_dim = j.at("input_dim").get<int>();
  p.spec.n_annotators = j.at("n_annotators").get<int>();
  p.spec.hidden = j.at("hidden").get<int>();
  p.spec.dropout_p = j.at("dropout_p").get<double>();
  p.spec.n_bins = j.at("n_bins").get<int>();
  p.init_seed = j.at("init_seed").get<std::uint64_t>();
  p.annotator_ids = j.at("annotator_ids").get<std::vector<std::string>>();
  p.trunk_w = detail::tensor_from_json(j.at("trunk_w"));
  p.trunk_b = detail::tensor_from_json(j.at("trunk_b"));
  if (p.spec.kind == ModelKind::baseline) {
    p.dist_branch = detail::branch_from_json(j.at("dist_branch"));
    p.baseline_w = detail::tensor_from_json(j.at("baseline_w"));
    p.baseline_b = detail::tensor_from_json(j.at("baseline_b"));
  } else {
    p.act_branch = detail::branch_from_json(j.at("act_branch"));
    p.val_branch = detail::branch_from_json(j.at("val_branch"));
    for (const auto& h : j.at("heads")) {
      p.act_head_w.push_back(detail::tensor_from_json(h.at("act_w")));
      p.act_head_b.push_back(detail::tensor_from_json(h.at("act_b")));
      p.val_head_w.push_back(detail::tensor_from_json(h.at("val_w")));
      p.val_head_b.push_back(detail::tensor_from_json(h.at("val_b")));
    }
  }
  return p;
}

}  // namespace annodist
