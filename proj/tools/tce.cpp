// SPDX-License-Identifier: Apache-2.0
// tce: synthetic data, training, retrieval evaluation, tree export and
// gradient checks from the command line.
#include <CLI11.hpp>

#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>

#include "tce/dataset.hpp"
#include "tce/error.hpp"
#include "tce/gradient_suite.hpp"
#include "tce/joint_space.hpp"
#include "tce/model.hpp"
#include "tce/run_config.hpp"
#include "tce/trainer.hpp"

namespace fs = std::filesystem;
using namespace tce;

namespace {

constexpr int kOk = 0;
constexpr int kUsage = 1;
constexpr int kData = 2;
constexpr int kNumerical = 3;
constexpr double kGradTolerance = 1e-4;

struct ConfigArgs {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::vector<std::string> overrides;
};

void add_config_args(CLI::App* cmd, ConfigArgs& a) {
  cmd->add_option("--config", a.config_path, "key=value run configuration file");
  cmd->add_option("--seed", a.seed, "overrides the configured seed");
  cmd->add_option("--set", a.overrides, "extra key=value overrides, applied last");
}

RunConfig resolve_config(const ConfigArgs& a) {
  RunConfig cfg = a.config_path.empty() ? RunConfig{} : RunConfig::load(a.config_path);
  for (const auto& kv : a.overrides) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + kv + "'");
    cfg.set(kv.substr(0, eq), kv.substr(eq + 1));
  }
  if (a.seed) cfg.seed = *a.seed;
  return cfg;
}

TceModel fresh_model(RunConfig cfg, const fs::path& data_dir, const Dataset& data) {
  if (cfg.frame_dim == 0) cfg.frame_dim = data.frame_dim();
  return TceModel(std::move(cfg), dataset_vocabulary(data_dir, data));
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Tree-augmented cross-modal encoding for complex-query video retrieval"};
  app.require_subcommand(1);

  SyntheticOptions synth;
  std::string synth_out;
  auto* synth_cmd = app.add_subcommand("synth", "write a synthetic query/video corpus");
  synth_cmd->add_option("--out", synth_out, "output directory")->required();
  synth_cmd->add_option("--pairs", synth.pairs, "number of query/video pairs")->capture_default_str();
  synth_cmd->add_option("--vocab", synth.vocab_size, "distinct words")->capture_default_str();
  synth_cmd->add_option("--frame-dim", synth.frame_dim, "frame feature width")->capture_default_str();
  synth_cmd->add_option("--min-frames", synth.min_frames)->capture_default_str();
  synth_cmd->add_option("--max-frames", synth.max_frames)->capture_default_str();
  synth_cmd->add_option("--noise", synth.frame_noise, "frame noise stddev")->capture_default_str();
  synth_cmd->add_option("--seed", synth.seed)->capture_default_str();

  ConfigArgs train_cfg;
  std::string train_data, train_out = "checkpoint", train_log;
  bool train_f32 = false;
  auto* train_cmd = app.add_subcommand("train", "train a model and write the best checkpoint");
  add_config_args(train_cmd, train_cfg);
  train_cmd->add_option("--data", train_data, "dataset directory (manifest.jsonl, features/)")->required();
  train_cmd->add_option("--out", train_out, "checkpoint directory")->capture_default_str();
  train_cmd->add_option("--log", train_log, "per-batch CSV log file (default: stdout)");
  train_cmd->add_flag("--f32", train_f32, "store the checkpoint in single precision");

  ConfigArgs eval_cfg;
  std::string eval_data, eval_ckpt, eval_split = "all", eval_dump;
  auto* eval_cmd = app.add_subcommand("eval", "retrieval metrics for a checkpoint (or a fresh model)");
  add_config_args(eval_cmd, eval_cfg);
  eval_cmd->add_option("--data", eval_data, "dataset directory")->required();
  eval_cmd->add_option("--checkpoint", eval_ckpt, "checkpoint directory; omitted = freshly initialized model");
  eval_cmd->add_option("--split", eval_split, "all, train or val")
      ->check(CLI::IsMember({"all", "train", "val"}))
      ->capture_default_str();
  eval_cmd->add_option("--out", eval_dump, "embedding dump prefix");

  std::string tree_ckpt, tree_query;
  auto* tree_cmd = app.add_subcommand("tree", "print the latent tree of a query");
  tree_cmd->add_option("--checkpoint", tree_ckpt, "checkpoint directory")->required();
  tree_cmd->add_option("--query", tree_query, "query text")->required();

  std::uint64_t grad_seed = 1;
  std::size_t grad_seeds = 5;
  auto* grad_cmd = app.add_subcommand("gradcheck", "finite-difference check of every component");
  grad_cmd->add_option("--seed", grad_seed, "first seed")->capture_default_str();
  grad_cmd->add_option("--seeds", grad_seeds, "number of consecutive seeds")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    std::cerr << app.help();
    return kUsage;
  }

  try {
    if (*synth_cmd) {
      generate_synthetic(synth_out, synth);
      std::cout << "wrote " << synth.pairs << " pairs to " << synth_out << '\n';
      return kOk;
    }

    if (*train_cmd) {
      const RunConfig cfg = resolve_config(train_cfg);
      cfg.validate();
      const Dataset data = load_dataset_dir(train_data);
      const DatasetSplit split = split_dataset(data, cfg.val_fraction);
      if (split.val_is_train) std::cerr << "note: fewer than two held-out videos; validating on the training pairs\n";
      TceModel model = fresh_model(cfg, train_data, data);
      std::ofstream log_file;
      if (!train_log.empty()) {
        log_file.open(train_log, std::ios::trunc);
        if (!log_file) throw FormatError("cannot write log " + train_log);
      }
      TrainOptions opt{train_log.empty() ? &std::cout : &log_file, &std::cerr};
      const TrainResult r = train(model, split.train, split.val, opt);
      model.save(train_out, train_f32 ? StoragePrecision::f32 : StoragePrecision::f64);
      std::cerr << "best epoch " << r.best_epoch << " val " << r.best.summary() << "; checkpoint " << train_out
                << '\n';
      return kOk;
    }

    if (*eval_cmd) {
      const Dataset all = load_dataset_dir(eval_data);
      std::optional<TceModel> model;
      if (eval_ckpt.empty()) {
        const RunConfig cfg = resolve_config(eval_cfg);
        cfg.validate();
        model.emplace(fresh_model(cfg, eval_data, all));
      } else {
        if (!eval_cfg.config_path.empty() || !eval_cfg.overrides.empty() || eval_cfg.seed) {
          throw ConfigError("--config/--seed/--set only apply without --checkpoint");
        }
        model.emplace(TceModel::load(eval_ckpt));
      }
      Dataset data = all;
      if (eval_split != "all") {
        DatasetSplit split = split_dataset(all, model->config().val_fraction);
        data = eval_split == "train" ? std::move(split.train) : std::move(split.val);
      }
      const RetrievalResult r = evaluate(*model, data);
      std::cout << "queries=" << data.records.size() << " videos=" << data.video_ids.size() << ' ' << r.summary()
                << '\n';
      if (!eval_dump.empty()) {
        std::vector<std::string> queries, query_ids;
        for (std::size_t i = 0; i < data.records.size(); ++i) {
          queries.push_back(data.records[i].query);
          query_ids.push_back(data.records[i].video_id);
        }
        std::vector<FrameFeatures> clips;
        for (std::size_t v = 0; v < data.video_ids.size(); ++v)
          clips.push_back(model->fit(data.raw_frames[v], data.video_ids[v]));
        write_embedding_dump(eval_dump, model->query_embeddings(queries), query_ids, model->video_embeddings(clips),
                             data.video_ids);
      }
      return kOk;
    }

    if (*tree_cmd) {
      TceModel model = TceModel::load(tree_ckpt);
      std::cout << export_tree(model, tree_query) << '\n';
      return kOk;
    }

    if (*grad_cmd) {
      std::vector<std::uint64_t> seeds;
      for (std::size_t i = 0; i < grad_seeds; ++i) seeds.push_back(grad_seed + i);
      const auto entries = run_gradient_suite(seeds);
      bool ok = true;
      for (const auto& name : gradient_suite_modules()) {
        double worst = 0.0;
        bool kink_only = true;
        for (const auto& e : entries) {
          if (e.module != name) continue;
          worst = std::max(worst, e.report.max_rel_error);
          kink_only = kink_only && e.report.skipped_at_kink;
          ok = ok && e.report.passed(kGradTolerance);
        }
        std::printf("%-22s max_rel_error=%.3e%s\n", name.c_str(), worst, kink_only ? " (skipped at kink)" : "");
      }
      std::printf("%s (tolerance %.0e, %zu seeds)\n", ok ? "PASS" : "FAIL", kGradTolerance, seeds.size());
      return ok ? kOk : kNumerical;
    }
  } catch (const NumericalError& e) {
    std::cerr << "numerical error: " << e.what() << '\n';
    return kNumerical;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kData;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kData;
  }
  return kUsage;
}
