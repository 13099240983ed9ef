#pragma once

#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "annodist/core.hpp"
#include "annodist/errors.hpp"
#include "annodist/labels.hpp"
#include "annodist/metrics.hpp"
#include "annodist/rng.hpp"
#include "annodist/trainer.hpp"

namespace annodist {

namespace io {

// Shortest round-trip representation of a double.
inline std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  // trim to the shortest form that still parses back exactly
  for (int prec = 1; prec < 17; ++prec) {
    char probe[32];
    std::snprintf(probe, sizeof(probe), "%.*g", prec, v);
    if (std::strtod(probe, nullptr) == v) return probe;
  }
  return buf;
}

// Writes via a temp file and renames, so interrupted runs never leave a
// half-written cache.
inline void atomic_write(const std::filesystem::path& path, const std::string& contents) {
  namespace fs = std::filesystem;
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot write '" + tmp.string() + "'");
    out << contents;
    if (!out.flush()) throw DataError("write failed for '" + tmp.string() + "'");
  }
  fs::rename(tmp, path);
}

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open '" + path.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string field;
  for (char c : line) {
    if (c == ',') {
      out.push_back(field);
      field.clear();
    } else if (c != '\r') {
      field.push_back(c);
    }
  }
  out.push_back(field);
  return out;
}

inline double parse_double(const std::string& s, const std::string& where) {
  char* end = nullptr;
  const double v = std::strtod(s.c_str(), &end);
  if (end == s.c_str() || *end != '\0')
    throw DataError("invalid number '" + s + "' in " + where);
  return v;
}

inline void require_clean_id(const std::string& id) {
  if (id.empty() || id.find(',') != std::string::npos || id.find('\n') != std::string::npos)
    throw DataError("identifier '" + id + "' is empty or contains a delimiter");
}

}  // namespace io

// ---- corpus manifest + ingestion ----

struct CorpusManifest {
  std::filesystem::path annotations;  // resolved relative to the manifest
  std::filesystem::path features;
  std::optional<std::filesystem::path> splits;
  std::optional<std::uint64_t> split_seed;
  double act_lo = -1.0, act_hi = 1.0;
  double val_lo = -1.0, val_hi = 1.0;
  double train_frac = 0.7, val_frac = 0.15;
  int feature_dim = 0;
};

inline CorpusManifest load_manifest(const std::filesystem::path& path) {
  nlohmann::json j = nlohmann::json::parse(io::read_file(path));
  CorpusManifest m;
  const auto dir = path.parent_path();
  m.annotations = dir / j.at("annotations").get<std::string>();
  m.features = dir / j.at("features").get<std::string>();
  if (j.contains("splits")) m.splits = dir / j.at("splits").get<std::string>();
  if (j.contains("split_seed")) m.split_seed = j.at("split_seed").get<std::uint64_t>();
  if (j.contains("train_frac")) m.train_frac = j.at("train_frac").get<double>();
  if (j.contains("val_frac")) m.val_frac = j.at("val_frac").get<double>();
  const auto& range = j.at("label_range");
  m.act_lo = range.at("activation")[0].get<double>();
  m.act_hi = range.at("activation")[1].get<double>();
  m.val_lo = range.at("valence")[0].get<double>();
  m.val_hi = range.at("valence")[1].get<double>();
  m.feature_dim = j.at("feature_dim").get<int>();
  if (!m.splits && !m.split_seed)
    throw DataError("manifest must provide either 'splits' or 'split_seed'");
  return m;
}

// Parses annotation/feature/split files, merges duplicates, scales labels to
// [-1,1] by the declared ranges, computes consensus, and builds the index.
inline Corpus load_corpus(const std::filesystem::path& manifest_path) {
  const CorpusManifest m = load_manifest(manifest_path);
  if (!(m.act_hi > m.act_lo) || !(m.val_hi > m.val_lo))
    throw DataError("manifest declares a degenerate label range");

  // annotations
  std::istringstream ann(io::read_file(m.annotations));
  std::string line;
  if (!std::getline(ann, line) ||
      io::split_csv_line(line) !=
          std::vector<std::string>{"utterance_id", "annotator_id", "activation", "valence"})
    throw DataError("annotations file must start with "
                    "'utterance_id,annotator_id,activation,valence'");
  std::vector<AnnotationRecord> records;
  int row = 1;
  while (std::getline(ann, line)) {
    ++row;
    if (line.empty()) continue;
    const auto f = io::split_csv_line(line);
    if (f.size() != 4)
      throw DataError("annotations row " + std::to_string(row) + ": expected 4 fields");
    const std::string where = "annotations row " + std::to_string(row);
    AnnotationRecord r{f[0], f[1], io::parse_double(f[2], where), io::parse_double(f[3], where)};
    if (r.activation < m.act_lo || r.activation > m.act_hi || r.valence < m.val_lo ||
        r.valence > m.val_hi)
      throw DataError(where + ": value outside the declared label range");
    records.push_back(std::move(r));
  }
  if (records.empty()) throw DataError("annotations file has no data rows");
  records = merge_duplicate_annotations(records);
  for (AnnotationRecord& r : records) {
    r.activation = minmax_scale_one(r.activation, m.act_lo, m.act_hi);
    r.valence = minmax_scale_one(r.valence, m.val_lo, m.val_hi);
  }

  // features
  std::istringstream feat(io::read_file(m.features));
  if (!std::getline(feat, line)) throw DataError("features file is empty");
  std::map<std::string, std::vector<double>> features;
  row = 1;
  while (std::getline(feat, line)) {
    ++row;
    if (line.empty()) continue;
    const auto f = io::split_csv_line(line);
    if (static_cast<int>(f.size()) != m.feature_dim + 1)
      throw DataError("features row " + std::to_string(row) + ": expected " +
                      std::to_string(m.feature_dim + 1) + " fields");
    std::vector<double> v(m.feature_dim);
    for (int d = 0; d < m.feature_dim; ++d)
      v[d] = io::parse_double(f[d + 1], "features row " + std::to_string(row));
    features.emplace(f[0], std::move(v));
  }

  // assemble utterances in first-appearance order
  Corpus corpus;
  std::map<std::string, std::size_t> position;
  for (const AnnotationRecord& r : records) {
    auto it = position.find(r.utterance_id);
    if (it == position.end()) {
      position.emplace(r.utterance_id, corpus.utterances.size());
      Utterance u;
      u.utterance_id = r.utterance_id;
      auto fit = features.find(r.utterance_id);
      if (fit == features.end())
        throw DataError("missing feature row for utterance '" + r.utterance_id + "'");
      u.features = fit->second;
      corpus.utterances.push_back(std::move(u));
      it = position.find(r.utterance_id);
    }
    corpus.utterances[it->second].annotations.push_back(r);
  }
  for (const auto& [uid, vec] : features)
    if (!position.count(uid))
      std::fprintf(stderr, "warning: feature row for unknown utterance '%s' ignored\n",
                   uid.c_str());

  // splits
  corpus.split.assign(corpus.utterances.size(), Split::train);
  if (m.splits) {
    std::istringstream sp(io::read_file(*m.splits));
    if (!std::getline(sp, line) ||
        io::split_csv_line(line) != std::vector<std::string>{"utterance_id", "split"})
      throw DataError("splits file must start with 'utterance_id,split'");
    std::map<std::string, Split> tag;
    row = 1;
    while (std::getline(sp, line)) {
      ++row;
      if (line.empty()) continue;
      const auto f = io::split_csv_line(line);
      if (f.size() != 2) throw DataError("splits row " + std::to_string(row) + ": expected 2 fields");
      Split s;
      if (f[1] == "train")
        s = Split::train;
      else if (f[1] == "validation")
        s = Split::validation;
      else if (f[1] == "test")
        s = Split::test;
      else
        throw DataError("splits row " + std::to_string(row) + ": unknown split '" + f[1] + "'");
      tag.emplace(f[0], s);
    }
    for (std::size_t i = 0; i < corpus.utterances.size(); ++i) {
      auto it = tag.find(corpus.utterances[i].utterance_id);
      if (it == tag.end())
        throw DataError("utterance '" + corpus.utterances[i].utterance_id +
                        "' missing from the splits file");
      corpus.split[i] = it->second;
    }
  } else {
    std::vector<std::size_t> order(corpus.utterances.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    Rng rng(*m.split_seed, "split");
    rng.shuffle(order);
    const auto n_train = static_cast<std::size_t>(m.train_frac * order.size());
    const auto n_val = static_cast<std::size_t>(m.val_frac * order.size());
    for (std::size_t r = 0; r < order.size(); ++r)
      corpus.split[order[r]] = r < n_train             ? Split::train
                               : r < n_train + n_val   ? Split::validation
                                                       : Split::test;
    // coverage repair as in the generator: pull an utterance into train for
    // any annotator otherwise unseen there
    std::map<std::string, bool> seen;
    for (std::size_t i = 0; i < corpus.utterances.size(); ++i)
      if (corpus.split[i] == Split::train)
        for (const auto& a : corpus.utterances[i].annotations) seen[a.annotator_id] = true;
    for (std::size_t i = 0; i < corpus.utterances.size(); ++i) {
      if (corpus.split[i] == Split::train) continue;
      for (const auto& a : corpus.utterances[i].annotations)
        if (!seen.count(a.annotator_id)) {
          corpus.split[i] = Split::train;
          for (const auto& b : corpus.utterances[i].annotations) seen[b.annotator_id] = true;
          break;
        }
    }
  }

  finalize_corpus(corpus);
  if (corpus.feature_dim != m.feature_dim)
    throw DataError("manifest feature_dim does not match the feature rows");
  return corpus;
}

// Writes a corpus as the manifest + 3 CSV files load_corpus consumes. Labels
// are written raw in the declared range (the in-memory corpus is scaled).
inline void write_corpus(const std::filesystem::path& dir, const Corpus& corpus,
                         double act_lo = -1.0, double act_hi = 1.0, double val_lo = -1.0,
                         double val_hi = 1.0) {
  std::ostringstream ann;
  ann << "utterance_id,annotator_id,activation,valence\n";
  for (const Utterance& u : corpus.utterances)
    for (const AnnotationRecord& a : u.annotations) {
      io::require_clean_id(a.utterance_id);
      io::require_clean_id(a.annotator_id);
      ann << a.utterance_id << ',' << a.annotator_id << ','
          << io::format_double(minmax_unscale_one(a.activation, act_lo, act_hi)) << ','
          << io::format_double(minmax_unscale_one(a.valence, val_lo, val_hi)) << '\n';
    }

  std::ostringstream feat;
  feat << "utterance_id";
  for (int d = 0; d < corpus.feature_dim; ++d) feat << ",f" << d;
  feat << '\n';
  for (const Utterance& u : corpus.utterances) {
    feat << u.utterance_id;
    for (double v : u.features) feat << ',' << io::format_double(v);
    feat << '\n';
  }

  std::ostringstream sp;
  sp << "utterance_id,split\n";
  for (std::size_t i = 0; i < corpus.utterances.size(); ++i)
    sp << corpus.utterances[i].utterance_id << ',' << split_name(corpus.split[i]) << '\n';

  nlohmann::ordered_json manifest;
  manifest["version"] = 1;
  manifest["annotations"] = "annotations.csv";
  manifest["features"] = "features.csv";
  manifest["splits"] = "splits.csv";
  manifest["label_range"] = {{"activation", {act_lo, act_hi}}, {"valence", {val_lo, val_hi}}};
  manifest["feature_dim"] = corpus.feature_dim;

  io::atomic_write(dir / "annotations.csv", ann.str());
  io::atomic_write(dir / "features.csv", feat.str());
  io::atomic_write(dir / "splits.csv", sp.str());
  io::atomic_write(dir / "manifest.json", manifest.dump(2) + "\n");
}

// ---- target cache ----

inline void write_targets(const std::filesystem::path& path, const TargetTable& targets) {
  std::ostringstream out;
  out << "utterance_id,n_bins,seed";
  for (int i = 0; i < targets.n_bins * targets.n_bins; ++i) out << ",p" << i;
  out << '\n';
  for (const auto& [uid, b] : targets.by_utterance) {
    io::require_clean_id(uid);
    out << uid << ',' << b.n << ',' << targets.seed;
    for (std::size_t i = 0; i < b.cells.size(); ++i) out << ',' << io::format_double(b.cells[i]);
    out << '\n';
  }
  io::atomic_write(path, out.str());
}

inline TargetTable load_targets(const std::filesystem::path& path) {
  std::istringstream in(io::read_file(path));
  std::string line;
  if (!std::getline(in, line)) throw DataError("targets file is empty");
  const auto header = io::split_csv_line(line);
  if (header.size() < 4 || header[0] != "utterance_id" || header[1] != "n_bins" ||
      header[2] != "seed")
    throw DataError("targets file has an unexpected header");
  const int n_cells = static_cast<int>(header.size()) - 3;
  TargetTable t;
  t.n_bins = static_cast<int>(std::lround(std::sqrt(static_cast<double>(n_cells))));
  if (t.n_bins * t.n_bins != n_cells) throw DataError("targets header cell count is not square");
  int row = 1;
  while (std::getline(in, line)) {
    ++row;
    if (line.empty()) continue;
    const auto f = io::split_csv_line(line);
    if (static_cast<int>(f.size()) != n_cells + 3)
      throw DataError("targets row " + std::to_string(row) + ": wrong field count");
    const std::string where = "targets row " + std::to_string(row);
    BinnedDistribution b{t.n_bins, Tensor(t.n_bins, t.n_bins)};
    for (int i = 0; i < n_cells; ++i) b.cells[i] = io::parse_double(f[i + 3], where);
    if (!is_normalized_grid(b.cells, 1e-6))
      throw DataError(where + ": probabilities do not form a distribution");
    t.seed = static_cast<std::uint64_t>(std::strtoull(f[2].c_str(), nullptr, 10));
    t.by_utterance.emplace(f[0], std::move(b));
  }
  return t;
}

// ---- training history ----

inline void write_history(const std::filesystem::path& path,
                          const std::vector<EpochRecord>& history) {
  std::ostringstream out;
  out << "epoch,task1_loss,task2_loss,val_loss,lr\n";
  for (const EpochRecord& r : history) {
    out << r.epoch << ',';
    if (std::isfinite(r.task1_loss)) out << io::format_double(r.task1_loss);
    out << ',';
    if (std::isfinite(r.task2_loss)) out << io::format_double(r.task2_loss);
    out << ',' << io::format_double(r.val_loss) << ',' << io::format_double(r.lr) << '\n';
  }
  io::atomic_write(path, out.str());
}

// ---- checkpoints ----

inline void save_checkpoint(const std::filesystem::path& path, const Parameters& params) {
  io::atomic_write(path, checkpoint_to_json(params).dump() + "\n");
}

inline Parameters load_checkpoint(const std::filesystem::path& path) {
  return checkpoint_from_json(nlohmann::json::parse(io::read_file(path)));
}

// ---- evaluation report ----

inline nlohmann::ordered_json report_to_json(const EvalReport& report) {
  nlohmann::ordered_json j;
  j["version"] = 1;
  j["mode"] = report.mode;
  auto stat = [](const EvalReport::Stat& s) {
    return nlohmann::ordered_json{{"mean", s.mean}, {"std", s.stddev}};
  };
  j["tvd"] = stat(report.tvd());
  j["jsd"] = stat(report.jsd());
  j["activation_ccc"] = stat(report.act_ccc());
  j["valence_ccc"] = stat(report.val_ccc());
  auto seeds = nlohmann::ordered_json::array();
  for (const SeedEvaluation& e : report.seeds) {
    nlohmann::ordered_json s;
    s["seed"] = e.seed;
    s["tvd"] = e.tvd_mean;
    s["jsd"] = e.jsd_mean;
    s["activation_ccc"] = e.act_ccc;
    s["valence_ccc"] = e.val_ccc;
    if (e.has_annotator_ccc) {
      s["annotator_activation_ccc"] = e.annotator_act_ccc;
      s["annotator_valence_ccc"] = e.annotator_val_ccc;
      s["annotator_activation_ccc_macro"] = e.annotator_act_ccc_macro;
      s["annotator_valence_ccc_macro"] = e.annotator_val_ccc_macro;
    }
    seeds.push_back(std::move(s));
  }
  j["seeds"] = std::move(seeds);
  return j;
}

inline void write_report(const std::filesystem::path& path, const EvalReport& report) {
  io::atomic_write(path, report_to_json(report).dump(2) + "\n");
}

// Table-shaped summary for the terminal.
inline std::string format_report_table(const EvalReport& report) {
  char buf[256];
  std::string out;
  out += "metric            mean      std\n";
  auto line = [&](const char* name, const EvalReport::Stat& s) {
    std::snprintf(buf, sizeof(buf), "%-15s %8.4f %8.4f\n", name, s.mean, s.stddev);
    out += buf;
  };
  line("TVD", report.tvd());
  line("JSD", report.jsd());
  line("Activation CCC", report.act_ccc());
  line("Valence CCC", report.val_ccc());
  return out;
}

// Per-utterance predicted and target cells, for external plotting.
inline void write_distribution_dump(const std::filesystem::path& path,
                                    const std::vector<std::pair<std::uint64_t, EvaluationDetail>>& runs,
                                    const TargetTable& targets) {
  std::ostringstream out;
  const int cells = targets.n_bins * targets.n_bins;
  out << "seed,utterance_id";
  for (int i = 0; i < cells; ++i) out << ",pred" << i;
  for (int i = 0; i < cells; ++i) out << ",target" << i;
  out << '\n';
  for (const auto& [seed, detail] : runs) {
    for (const UtteranceEvaluation& ue : detail.utterances) {
      out << seed << ',' << ue.utterance_id;
      for (std::size_t i = 0; i < ue.predicted.cells.size(); ++i)
        out << ',' << io::format_double(ue.predicted.cells[i]);
      const BinnedDistribution* t = targets.find(ue.utterance_id);
      for (std::size_t i = 0; i < t->cells.size(); ++i)
        out << ',' << io::format_double(t->cells[i]);
      out << '\n';
    }
  }
  io::atomic_write(path, out.str());
}

}  // namespace annodist
