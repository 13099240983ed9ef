#include <cstdio>
#include <filesystem>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "annodist/annodist.hpp"

namespace fs = std::filesystem;
using namespace annodist;

namespace {

// Exit codes: 0 success, 1 usage, 2 data validation, 3 numerical failure.
constexpr int kExitUsage = 1;
constexpr int kExitData = 2;
constexpr int kExitNumeric = 3;

struct SynthArgs {
  int utterances = 700;
  int annotators = 40;
  int feature_dim = 32;
  double mean_annotations = 7.0;
  double noise = 0.0;
  std::uint64_t seed = 0;
  std::string out;
};

int run_synth(const SynthArgs& a) {
  SynthConfig cfg;
  cfg.n_utterances = a.utterances;
  cfg.n_annotators = a.annotators;
  cfg.feature_dim = a.feature_dim;
  cfg.mean_annotations = a.mean_annotations;
  cfg.noise_std = a.noise;
  cfg.seed = a.seed;
  Corpus corpus = generate_corpus(cfg);
  write_corpus(a.out, corpus);
  std::printf("wrote %zu utterances (%d annotators, %d train / %d validation / %d test) to %s\n",
              corpus.utterances.size(), corpus.num_annotators(),
              static_cast<int>(corpus.indices_of(Split::train).size()),
              static_cast<int>(corpus.indices_of(Split::validation).size()),
              static_cast<int>(corpus.indices_of(Split::test).size()), a.out.c_str());
  return 0;
}

struct LabelsArgs {
  std::string corpus;
  int k = 100;
  int grid = 512;
  int bins = 4;
  std::uint64_t seed = 0;
  std::string out;
  int threads = 0;
};

int run_labels(const LabelsArgs& a) {
  Corpus corpus = load_corpus(fs::path(a.corpus) / "manifest.json");
  if (!is_pow2(a.grid) || a.grid < 8)
    throw CLI::ValidationError("--grid must be a power of two >= 8");
  if (a.grid % a.bins != 0) throw CLI::ValidationError("--bins must divide --grid");

  TargetTable targets;
  targets.n_bins = a.bins;
  targets.seed = a.seed;
  UpsampleConfig up;
  up.k_subsets = a.k;
  up.rng_seed = a.seed;
  const KdeConfig kde_cfg = KdeConfig::auto_bandwidth(a.grid);

  std::vector<BinnedDistribution> binned(corpus.utterances.size());
  parallel_for(
      corpus.utterances.size(),
      [&](std::size_t i) {
        binned[i] = make_target(corpus.utterances[i], up, kde_cfg, a.bins).second;
      },
      a.threads > 0 ? a.threads : hardware_threads());
  for (std::size_t i = 0; i < corpus.utterances.size(); ++i)
    targets.by_utterance.emplace(corpus.utterances[i].utterance_id, std::move(binned[i]));
  write_targets(a.out, targets);
  std::printf("wrote %zu targets (%dx%d bins from a %d-grid, k=%d) to %s\n",
              targets.by_utterance.size(), a.bins, a.bins, a.grid, a.k, a.out.c_str());
  return 0;
}

struct TrainArgs {
  std::string corpus;
  std::string targets;
  std::string model = "mt";
  std::string task = "1+2";
  int seeds = 5;
  std::uint64_t seed_base = 0;
  std::string out;
  int hidden = 256;
  int max_epochs = 100;
  double lr = 0.001;
  int batch_size = 32;
  int upsample_k = 20;
  bool verbose = false;
};

int run_train(const TrainArgs& a) {
  const bool is_baseline_model = a.model == "baseline";
  if (is_baseline_model != (a.task == "baseline"))
    throw CLI::ValidationError("the baseline model trains with --task baseline and the "
                               "mt/onehot models with --task 1 or 1+2");
  if (a.task != "baseline" && a.task != "1" && a.task != "1+2")
    throw CLI::ValidationError("--task must be baseline, 1, or 1+2");

  Corpus corpus = load_corpus(fs::path(a.corpus) / "manifest.json");
  TargetTable targets;
  if (a.task != "1") targets = load_targets(a.targets);

  ModelSpec spec;
  spec.kind = a.model == "baseline" ? ModelKind::baseline
              : a.model == "mt"     ? ModelKind::multitask
              : a.model == "onehot" ? ModelKind::onehot
                                    : throw CLI::ValidationError("--model must be baseline, mt, or onehot");
  spec.input_dim = corpus.feature_dim;
  spec.n_annotators = spec.kind == ModelKind::baseline ? 0 : corpus.num_annotators();
  spec.hidden = a.hidden;

  fs::create_directories(a.out);
  for (int s = 0; s < a.seeds; ++s) {
    TrainConfig cfg;
    cfg.seed = a.seed_base + static_cast<std::uint64_t>(s);
    cfg.max_epochs = a.max_epochs;
    cfg.lr = a.lr;
    cfg.batch_size = a.batch_size;
    cfg.upsample_train_k = a.upsample_k;
    cfg.verbose = a.verbose;
    TrainResult result = a.task == "baseline" ? train_baseline(corpus, targets, spec, cfg)
                         : a.task == "1"      ? train_task1(corpus, spec, cfg)
                                              : train_task12(corpus, targets, spec, cfg);
    const std::string tag = "seed" + std::to_string(cfg.seed);
    save_checkpoint(fs::path(a.out) / (tag + ".json"), result.params);
    write_history(fs::path(a.out) / ("history_" + tag + ".csv"), result.history);
    std::printf("seed %llu: %d epochs, final val loss %.6f -> %s/%s.json\n",
                static_cast<unsigned long long>(cfg.seed), result.epochs_run,
                result.history.empty() ? 0.0 : result.history.back().val_loss, a.out.c_str(),
                tag.c_str());
  }
  return 0;
}

struct EvalArgs {
  std::string corpus;
  std::string targets;
  std::string ckpt;
  std::string mode = "within";
  std::string distribution = "diffkde";
  std::string split = "test";
  std::string out;
  std::string dump;
  std::uint64_t seed = 0;
  int threads = 0;
};

int run_eval(const EvalArgs& a) {
  Corpus corpus = load_corpus(fs::path(a.corpus) / "manifest.json");
  TargetTable targets = load_targets(a.targets);

  std::vector<fs::path> checkpoints;
  for (const auto& entry : fs::directory_iterator(a.ckpt)) {
    const std::string name = entry.path().filename().string();
    if (name.rfind("seed", 0) == 0 && name.size() > 9 &&
        name.compare(name.size() - 5, 5, ".json") == 0)
      checkpoints.push_back(entry.path());
  }
  std::sort(checkpoints.begin(), checkpoints.end());
  if (checkpoints.empty()) throw DataError("no seed*.json checkpoints in '" + a.ckpt + "'");

  EvaluateOptions opt;
  if (a.mode == "within")
    opt.mode = EvalMode::within;
  else if (a.mode == "zero-shot")
    opt.mode = EvalMode::zero_shot;
  else
    throw CLI::ValidationError("--mode must be within or zero-shot");
  if (a.distribution == "diffkde")
    opt.method = DistributionMethod::diffkde;
  else if (a.distribution == "kde")
    opt.method = DistributionMethod::plainkde;
  else
    throw CLI::ValidationError("--distribution must be diffkde or kde");
  if (a.split == "train")
    opt.split = Split::train;
  else if (a.split == "validation")
    opt.split = Split::validation;
  else if (a.split == "test")
    opt.split = Split::test;
  else
    throw CLI::ValidationError("--split must be train, validation, or test");
  opt.threads = a.threads;

  EvalReport report;
  report.mode = a.mode == "within" ? "within" : "zero_shot";
  std::vector<std::pair<std::uint64_t, EvaluationDetail>> details;
  for (const fs::path& path : checkpoints) {
    Parameters params = load_checkpoint(path);
    opt.seed = params.init_seed;
    EvaluationDetail detail = evaluate_detailed(params, corpus, targets, opt);
    report.seeds.push_back(detail.summary);
    if (!a.dump.empty()) details.emplace_back(params.init_seed, std::move(detail));
  }
  write_report(a.out, report);
  if (!a.dump.empty()) write_distribution_dump(a.dump, details, targets);
  std::printf("%s", format_report_table(report).c_str());
  std::printf("wrote %zu-seed report to %s\n", report.seeds.size(), a.out.c_str());
  return 0;
}

int run_gradcheck_cmd() {
  GradCheckReport report = run_gradcheck(1e-4);
  std::printf("%s", format_gradcheck(report).c_str());
  return report.all_passed() ? 0 : kExitNumeric;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"annodist: learn per-annotator emotion ratings and differentiable "
               "KDE distributions over activation x valence"};
  app.require_subcommand(1);

  SynthArgs synth_args;
  auto* synth_cmd = app.add_subcommand("synth", "generate a synthetic corpus");
  synth_cmd->add_option("--utterances", synth_args.utterances, "number of utterances");
  synth_cmd->add_option("--annotators", synth_args.annotators, "number of annotators");
  synth_cmd->add_option("--feature-dim", synth_args.feature_dim, "feature dimension");
  synth_cmd->add_option("--mean-annotations", synth_args.mean_annotations,
                        "expected annotations per utterance");
  synth_cmd->add_option("--noise", synth_args.noise, "persona rating noise stddev");
  synth_cmd->add_option("--seed", synth_args.seed, "generator seed");
  synth_cmd->add_option("--out", synth_args.out, "output directory")->required();

  LabelsArgs labels_args;
  auto* labels_cmd = app.add_subcommand("labels", "generate ground-truth distributions");
  labels_cmd->add_option("--corpus", labels_args.corpus, "corpus directory")->required();
  labels_cmd->add_option("--k", labels_args.k, "upsample count per utterance");
  labels_cmd->add_option("--grid", labels_args.grid, "KDE grid size (power of two)");
  labels_cmd->add_option("--bins", labels_args.bins, "output bins per dimension");
  labels_cmd->add_option("--seed", labels_args.seed, "upsampling seed");
  labels_cmd->add_option("--threads", labels_args.threads, "worker threads (0 = auto)");
  labels_cmd->add_option("--out", labels_args.out, "targets CSV path")->required();

  TrainArgs train_args;
  auto* train_cmd = app.add_subcommand("train", "train a model");
  train_cmd->add_option("--corpus", train_args.corpus, "corpus directory")->required();
  train_cmd->add_option("--targets", train_args.targets, "targets CSV (baseline and 1+2)");
  train_cmd->add_option("--model", train_args.model, "baseline | mt | onehot");
  train_cmd->add_option("--task", train_args.task, "baseline | 1 | 1+2");
  train_cmd->add_option("--seeds", train_args.seeds, "number of seeds to train");
  train_cmd->add_option("--seed-base", train_args.seed_base, "first seed value");
  train_cmd->add_option("--hidden", train_args.hidden, "hidden layer width");
  train_cmd->add_option("--max-epochs", train_args.max_epochs, "epoch cap");
  train_cmd->add_option("--lr", train_args.lr, "SGD learning rate");
  train_cmd->add_option("--batch-size", train_args.batch_size, "utterances per batch");
  train_cmd->add_option("--upsample-k", train_args.upsample_k, "Task 2 upsample count");
  train_cmd->add_flag("--verbose", train_args.verbose, "per-epoch progress on stderr");
  train_cmd->add_option("--out", train_args.out, "checkpoint directory")->required();

  EvalArgs eval_args;
  auto* eval_cmd = app.add_subcommand("eval", "evaluate checkpoints");
  eval_cmd->add_option("--corpus", eval_args.corpus, "corpus directory")->required();
  eval_cmd->add_option("--targets", eval_args.targets, "targets CSV")->required();
  eval_cmd->add_option("--ckpt", eval_args.ckpt, "checkpoint directory")->required();
  eval_cmd->add_option("--mode", eval_args.mode, "within | zero-shot");
  eval_cmd->add_option("--distribution", eval_args.distribution,
                       "diffkde | kde (post-processing method)");
  eval_cmd->add_option("--split", eval_args.split, "train | validation | test");
  eval_cmd->add_option("--threads", eval_args.threads, "worker threads (0 = auto)");
  eval_cmd->add_option("--dump-distributions", eval_args.dump,
                       "also write per-utterance distributions CSV");
  eval_cmd->add_option("--out", eval_args.out, "report JSON path")->required();

  auto* gradcheck_cmd =
      app.add_subcommand("gradcheck", "verify all gradients against finite differences");

  try {
    app.parse(argc, argv);
    if (synth_cmd->parsed()) return run_synth(synth_args);
    if (labels_cmd->parsed()) return run_labels(labels_args);
    if (train_cmd->parsed()) return run_train(train_args);
    if (eval_cmd->parsed()) return run_eval(eval_args);
    if (gradcheck_cmd->parsed()) return run_gradcheck_cmd();
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitUsage;
  } catch (const DataError& e) {
    std::fprintf(stderr, "data error: %s\n", e.what());
    return kExitData;
  } catch (const NumericError& e) {
    std::fprintf(stderr, "numerical error: %s\n", e.what());
    return kExitNumeric;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitUsage;
  }
  return 0;
}
