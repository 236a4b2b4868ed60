#include "cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <filesystem>
#include <optional>
#include <stdexcept>

#include "normaug/checkpoint.hpp"
#include "normaug/diagnostics.hpp"
#include "normaug/experiment.hpp"
#include "normaug/io.hpp"

namespace naug {

namespace fs = std::filesystem;

namespace {

constexpr std::size_t kProbeRows = 64;

// Failure tagged with the stage that raised it.
struct StageError : std::runtime_error {
  StageError(const std::string &stage, const std::string &what) : std::runtime_error(stage + ": " + what) {}
};

template <typename F>
auto stage(const std::string &name, F &&fn) -> decltype(fn()) {
  try {
    return fn();
  } catch (const StageError &) {
    throw;
  } catch (const std::exception &e) {
    throw StageError(name, e.what());
  }
}

struct Options {
  std::string config;
  std::string out;
  std::optional<std::uint64_t> seed;
  std::string strategy;
  std::string scope;
  std::string checkpoint;
  std::vector<std::uint64_t> seeds{0, 1, 2, 3, 4};
};

RunConfig resolve_config(const Options &opt) {
  return stage("config", [&] {
    RunConfig c = opt.config.empty() ? RunConfig::from_key_values({}) : load_run_config(opt.config);
    if (opt.seed) c.set_seed(*opt.seed);
    if (!opt.strategy.empty()) c.strategy = parse_fusion_strategy(opt.strategy);
    if (!opt.scope.empty()) c.scope = parse_subpath_scope(opt.scope);
    return c;
  });
}

fs::path output_dir(const Options &opt) {
  return stage("output", [&] {
    fs::create_directories(opt.out);
    return fs::path(opt.out);
  });
}

struct Restored {
  Model model;
  RunConfig config;
  LodoSplit split;
};

Restored restore(const Options &opt) {
  auto loaded = stage("checkpoint", [&] { return load_checkpoint(opt.checkpoint); });
  RunConfig config = stage("config", [&] {
    RunConfig c = run_config_from_checkpoint(loaded.model.config(), loaded.meta);
    if (!opt.strategy.empty()) c.strategy = parse_fusion_strategy(opt.strategy);
    if (!opt.scope.empty()) c.scope = parse_subpath_scope(opt.scope);
    return c;
  });
  LodoSplit split = stage("data", [&] { return split_for_run(config, prepare_data(config)); });
  return {std::move(loaded.model), std::move(config), std::move(split)};
}

void write(const fs::path &path, const std::string &content, std::ostream &out) {
  stage("write", [&] { write_file_atomic(path, content); });
  out << "wrote " << path.string() << "\n";
}

void cmd_gen_data(const Options &opt, std::ostream &out) {
  const RunConfig config = resolve_config(opt);
  const fs::path dir = output_dir(opt);
  const Dataset data = stage("data", [&] { return generate(config.data).data; });
  write(dir / "data.csv", to_csv(data), out);
}

void cmd_train(const Options &opt, std::ostream &out) {
  const RunConfig config = resolve_config(opt);
  const fs::path dir = output_dir(opt);
  LodoSplit split = stage("data", [&] { return split_for_run(config, prepare_data(config)); });
  Model model = stage("model", [&] { return Model(config.model, config.train.seed); });
  TrainResult result = stage("train", [&] {
    return train(model, split.source, split.target, config.train, config.strategy, config.scope,
                 [&](const EpochMetrics &m) {
                   out << "epoch " << m.epoch << " loss " << format_double(m.train_loss) << " tgt "
                       << format_double(m.tgt_acc_ensemble) << "\n";
                 });
  });
  write(dir / "metrics.csv", metrics_csv(result.metrics), out);
  write(dir / "run_config.txt", format_key_values(config.to_key_values()), out);
  const std::string blob = stage("checkpoint", [&] { return serialize_checkpoint(model, checkpoint_meta(config, result)); });
  write(dir / "checkpoint.naug", blob, out);
}

void cmd_eval(const Options &opt, std::ostream &out) {
  Restored r = restore(opt);
  const fs::path dir = output_dir(opt);
  const EvalResult result = stage("eval", [&] { return evaluate(r.model, r.split.target, r.config.strategy, r.config.scope); });
  write(dir / "eval.csv", eval_csv(result), out);
  out << "fused accuracy " << format_double(result.fused_accuracy) << " (" << to_string(r.config.strategy) << ", "
      << to_string(r.config.scope) << ")\n";
}

Tensor head_rows(const Dataset &data, std::size_t n) { return rows_tensor(data, 0, std::min(n, data.size())); }

void cmd_diagnose(const Options &opt, std::ostream &out) {
  Restored r = restore(opt);
  const fs::path dir = output_dir(opt);
  const DivergenceReport report = stage("diagnose", [&] { return divergence(r.model, r.split.source, r.split.target); });
  write(dir / "divergence.csv", divergence_csv(report), out);

  std::string probe_csv = stage("diagnose", [&] {
    const auto domains = r.split.source.present_domains();
    const Dataset probe_set = r.split.source.subset(r.split.source.rows_of_domain(domains.front()));
    const Tensor probe = head_rows(probe_set, kProbeRows);
    std::vector<std::string> names{"copy"};
    std::vector<Tensor> companions{probe};
    std::vector<double> merged;
    for (std::size_t i = 1; i < domains.size(); ++i) {
      names.push_back("domain_" + std::to_string(domains[i]));
      companions.push_back(head_rows(r.split.source.subset(r.split.source.rows_of_domain(domains[i])), kProbeRows));
      merged.insert(merged.end(), companions.back().data().begin(), companions.back().data().end());
    }
    names.push_back("other_sources");
    const std::size_t dim = probe.dim(1);
    const std::size_t merged_rows = merged.size() / dim;
    companions.push_back(Tensor({merged_rows, dim}, std::move(merged)));
    names.push_back("target");
    companions.push_back(head_rows(r.split.target, kProbeRows));
    const auto displacement = perturbation_probe(r.model, probe, companions);
    std::string csv = "companion,displacement\n";
    for (std::size_t i = 0; i < names.size(); ++i) csv += names[i] + "," + format_double(displacement[i]) + "\n";
    return csv;
  });
  write(dir / "probe.csv", probe_csv, out);
  out << "d_s2s " << format_double(report.d_s2s) << " d_s2t " << format_double(report.d_s2t) << "\n";
}

void cmd_ablate(const Options &opt, std::ostream &out) {
  const RunConfig config = resolve_config(opt);
  const fs::path dir = output_dir(opt);
  const auto rows = stage("ablate", [&] { return run_ablation(config, opt.seeds); });
  const auto summary = summarize_ablation(rows);
  write(dir / "ablation_runs.csv", ablation_runs_csv(rows), out);
  write(dir / "ablation_summary.csv", ablation_summary_csv(summary), out);
  for (const auto &s : summary) {
    out << to_string(s.variant) << " " << format_double(s.mean) << " +- " << format_double(s.std) << "\n";
  }
}

}  // namespace

int run_cli(const std::vector<std::string> &args, std::ostream &out, std::ostream &err) {
  CLI::App app{"NormAUG: normalization-guided augmentation on synthetic multi-domain data", "normaug"};
  app.require_subcommand(1);
  Options opt;

  auto add_common = [&](CLI::App *sub, bool needs_config) {
    if (needs_config) sub->add_option("--config", opt.config, "key=value config file")->check(CLI::ExistingFile);
    sub->add_option("--out", opt.out, "output directory")->required();
  };
  std::vector<std::string> strategy_names;
  for (auto s : all_fusion_strategies()) strategy_names.push_back(to_string(s));
  auto add_fusion = [&](CLI::App *sub) {
    sub->add_option("--strategy", opt.strategy, "fusion strategy (default from config: MeanMeanIM)")
        ->check(CLI::IsMember(strategy_names));
    sub->add_option("--scope", opt.scope, "sub-path scope")
        ->check(CLI::IsMember({"independent_only", "all_units"}));
  };

  auto *gen = app.add_subcommand("gen-data", "write a synthetic dataset CSV");
  add_common(gen, true);
  gen->add_option("--seed", opt.seed, "seed override");

  auto *tr = app.add_subcommand("train", "train one model; writes checkpoint and metrics");
  add_common(tr, true);
  tr->add_option("--seed", opt.seed, "seed override");
  add_fusion(tr);

  auto *ev = app.add_subcommand("eval", "evaluate a checkpoint on its held-out domain");
  add_common(ev, false);
  ev->add_option("--checkpoint", opt.checkpoint, "checkpoint file")->required()->check(CLI::ExistingFile);
  add_fusion(ev);

  auto *dg = app.add_subcommand("diagnose", "divergence and perturbation probe for a checkpoint");
  add_common(dg, false);
  dg->add_option("--checkpoint", opt.checkpoint, "checkpoint file")->required()->check(CLI::ExistingFile);

  auto *ab = app.add_subcommand("ablate", "DeepAll / Model-1 / Model-2 / Ours grid across seeds");
  add_common(ab, true);
  ab->add_option("--seeds", opt.seeds, "seed list")->delimiter(',');
  add_fusion(ab);

  std::vector<std::string> argv_store = args.empty() ? std::vector<std::string>{"normaug"} : args;
  if (argv_store.size() > 1 && argv_store[1].rfind('-', 0) != 0 && !app.get_subcommand_no_throw(argv_store[1])) {
    err << "error: unknown subcommand '" << argv_store[1] << "'\n\n" << app.help();
    return kExitUsage;
  }
  std::vector<char *> argv;
  for (auto &a : argv_store) argv.push_back(a.data());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::CallForHelp &) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::ParseError &e) {
    err << "error: " << e.what() << "\n\n" << app.help();
    return kExitUsage;
  }

  try {
    if (gen->parsed()) cmd_gen_data(opt, out);
    else if (tr->parsed()) cmd_train(opt, out);
    else if (ev->parsed()) cmd_eval(opt, out);
    else if (dg->parsed()) cmd_diagnose(opt, out);
    else if (ab->parsed()) cmd_ablate(opt, out);
  } catch (const std::exception &e) {
    err << "error in " << e.what() << "\n";
    return kExitRuntime;
  }
  return kExitOk;
}

}  // namespace naug
