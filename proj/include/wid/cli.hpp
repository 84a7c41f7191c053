// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <CLI11.hpp>

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <iostream>

#include "wid/checkpoint.hpp"
#include "wid/config.hpp"
#include "wid/flops.hpp"
#include "wid/synth.hpp"
#include "wid/train.hpp"

namespace wid {

// ---------------------------------------------------------------------------
// Subcommands: train | eval | predict | flops | gen-synth. Every option has a
// config-file twin (--config file, flags override the file). Exit codes:
// 0 success, 1 usage/validation error, 2 runtime failure.

namespace cli {

using KvList = std::vector<std::pair<std::string, std::string>>;

// Records present flags as (config key, raw value) so file/flag precedence is
// a simple apply order: defaults, then env, then file, then flags.
inline void kv_flag(CLI::App* cmd, const std::string& flag, const std::string& key,
                    std::shared_ptr<KvList> sink, const std::string& help) {
  cmd->add_option_function<std::string>(
      flag, [key, sink](const std::string& v) { sink->emplace_back(key, v); }, help);
}

struct Invocation {
  std::string command;
  std::string config_file;
  KvList flags;
};

inline RunConfig build_run_config(const Invocation& inv) {
  RunConfig rc;
  if (const char* env = std::getenv("WID_OUT_DIR")) rc.out_dir = env;
  if (rc.out_dir.empty()) rc.out_dir = "wid-out";
  if (!inv.config_file.empty())
    for (const auto& [k, v] : load_kv_file(inv.config_file)) apply_kv(rc, k, v);
  for (const auto& [k, v] : inv.flags) apply_kv(rc, k, v);
  return rc;
}

inline void require_file(const std::string& what, const std::string& path) {
  if (path.empty()) throw ConfigError(what + " is required (flag or config file)");
  if (!std::filesystem::exists(path)) throw IoError(what + " not found: " + path);
}

inline std::string epoch_ckpt_name(int epoch) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "ckpt_epoch_%03d.bin", epoch);
  return buf;
}

inline std::map<std::string, std::string> checkpoint_manifest(const RunConfig& rc,
                                                              const WordDataset<float>& ds,
                                                              int epoch) {
  std::map<std::string, std::string> m = net_config_kv(rc.net);
  m["arch"] = rc.net.arch;
  m["epoch"] = std::to_string(epoch);
  m["config_hash"] = config_hash(rc.net);
  m["seed"] = std::to_string(rc.train.seed);
  std::string writers;
  for (std::size_t i = 0; i < ds.writer_ids.size(); ++i)
    writers += (i ? "," : "") + std::to_string(ds.writer_ids[i]);
  m["writers"] = writers;
  return m;
}

inline int run_train(RunConfig rc, std::ostream& out) {
  auto ds = load_dataset<float>(rc.manifest);
  if (!rc.writers_given) rc.net.num_writers = ds.num_classes();
  rc.net.validate();
  rc.train.validate();
  auto net = make_network<float>(rc.net);

  namespace fs = std::filesystem;
  fs::create_directories(rc.out_dir);
  const std::string log_path = (fs::path(rc.out_dir) / "loss_log.csv").string();
  std::ofstream log(log_path, std::ios::trunc);
  if (!log) throw IoError("cannot open for writing: " + log_path);
  log << "# epoch, mean_loss, lr, train_top1\n";

  Trainer<float> trainer(*net, ds, rc.train);
  int last_epoch = 0;
  trainer.run([&](const EpochLog& el) {
    char line[128];
    std::snprintf(line, sizeof(line), "%d, %.10g, %.10g, %.6f", el.epoch, el.mean_loss, el.lr,
                  el.train_top1);
    log << line << "\n";
    log.flush();
    out << "epoch " << line << "\n";
    save_checkpoint((fs::path(rc.out_dir) / epoch_ckpt_name(el.epoch)).string(), *net,
                    checkpoint_manifest(rc, ds, el.epoch));
    last_epoch = el.epoch;
    return false;
  });
  save_checkpoint((fs::path(rc.out_dir) / "ckpt_last.bin").string(), *net,
                  checkpoint_manifest(rc, ds, last_epoch));
  out << "trained " << last_epoch << " epochs; checkpoints and loss log in " << rc.out_dir
      << "\n";
  return 0;
}

// Rebuilds the trained architecture from the checkpoint's own manifest.
inline std::unique_ptr<Network<float>> network_from_checkpoint(const std::string& path) {
  const auto manifest = read_checkpoint_manifest(path);
  auto net = make_network<float>(net_config_from_kv(manifest, path));
  load_checkpoint(path, *net);
  return net;
}

inline int run_eval(const RunConfig& rc, std::ostream& out) {
  auto net = network_from_checkpoint(rc.checkpoint);
  const auto ds = load_dataset<float>(rc.manifest);
  if (ds.num_classes() != net->config().num_writers)
    throw ConfigError("checkpoint was trained for " +
                      std::to_string(net->config().num_writers) + " writers, manifest has " +
                      std::to_string(ds.num_classes()));
  const EvalReport rep = rc.level == "page"
                             ? evaluate_page_level(*net, ds, ds.test_indices)
                             : evaluate_word_level(*net, ds, ds.test_indices);
  out << rep.to_text();
  return 0;
}

inline int run_predict(const RunConfig& rc, std::ostream& out) {
  auto net = network_from_checkpoint(rc.checkpoint);
  const auto manifest = read_checkpoint_manifest(rc.checkpoint);
  std::vector<std::int64_t> writer_ids;
  if (auto it = manifest.find("writers"); it != manifest.end())
    writer_ids = detail::kv_int_list("writers", it->second);

  const std::vector<Tensor<float>> words{preprocess<float>(read_png_gray8(rc.image))};
  const WordPrediction<float> pred = predict_word(*net, stack_words(words, {0}));

  std::vector<std::size_t> order(pred.probs.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return pred.probs[a] > pred.probs[b];  // stable: ties keep index order
  });
  const std::size_t k = std::min<std::size_t>(5, order.size());
  for (std::size_t i = 0; i < k; ++i) {
    const std::size_t cls = order[i];
    const std::int64_t writer =
        cls < writer_ids.size() ? writer_ids[cls] : static_cast<std::int64_t>(cls);
    char line[64];
    std::snprintf(line, sizeof(line), "writer %lld  p=%.6f", static_cast<long long>(writer),
                  static_cast<double>(pred.probs[cls]));
    out << line << "\n";
  }
  return 0;
}

inline int run_flops(const RunConfig& rc, std::ostream& out) {
  rc.net.validate();
  const CostReport report = analyze_flops(rc.net);
  out << (rc.csv ? report.csv() : report.table());
  return 0;
}

inline int run_gen_synth(const RunConfig& rc, std::ostream& out) {
  const std::string manifest = generate_synthetic_corpus(
      rc.out_dir, rc.synth_writers, rc.synth_words_per_page, rc.synth_pages, rc.train.seed);
  out << "manifest: " << manifest << "\n";
  return 0;
}

}  // namespace cli

inline int cli_main(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"writer identification from handwritten word images"};
  app.require_subcommand(1);

  cli::Invocation inv;
  auto flags = std::make_shared<cli::KvList>();

  const auto add_net_flags = [&](CLI::App* cmd) {
    cli::kv_flag(cmd, "--arch", "arch", flags, "architecture: sa|msrf|patch");
    cli::kv_flag(cmd, "--writers", "writers", flags, "number of writers (classes)");
    cli::kv_flag(cmd, "--input-h", "input_h", flags, "input height");
    cli::kv_flag(cmd, "--input-w", "input_w", flags, "input width");
    cli::kv_flag(cmd, "--widths", "widths", flags, "4 comma-separated stage widths");
    cli::kv_flag(cmd, "--patch-widths", "patch_widths", flags,
                 "4 comma-separated patch-stream widths");
    cli::kv_flag(cmd, "--growth-msrf", "growth_msrf", flags, "dense growth, scale fusion");
    cli::kv_flag(cmd, "--growth-patch", "growth_patch", flags, "dense growth, patch exchange");
    cli::kv_flag(cmd, "--init-seed", "init_seed", flags, "weight init seed");
  };
  const auto add_common = [&](CLI::App* cmd) {
    cmd->add_option("--config", inv.config_file, "key=value config file; flags override it");
    cmd->callback([cmd, &inv]() { inv.command = cmd->get_name(); });
  };

  CLI::App* train = app.add_subcommand("train", "train a network on a word-image manifest");
  add_common(train);
  add_net_flags(train);
  cli::kv_flag(train, "--manifest", "manifest", flags, "dataset manifest file");
  cli::kv_flag(train, "--out", "out_dir", flags, "output directory (default $WID_OUT_DIR)");
  cli::kv_flag(train, "--seed", "seed", flags, "training seed (batch order)");
  cli::kv_flag(train, "--epochs", "epochs", flags, "training epochs");
  cli::kv_flag(train, "--batch-size", "batch_size", flags, "minibatch size");
  cli::kv_flag(train, "--lr", "lr", flags, "initial learning rate");
  cli::kv_flag(train, "--weight-decay", "weight_decay", flags, "L2 coefficient");
  cli::kv_flag(train, "--lr-decay-factor", "lr_decay_factor", flags, "schedule factor");
  cli::kv_flag(train, "--lr-decay-every", "lr_decay_every", flags, "epochs per decay period");

  std::string ckpt_path, image_path;
  CLI::App* evalc = app.add_subcommand("eval", "evaluate a checkpoint at word or page level");
  add_common(evalc);
  evalc->add_option("--checkpoint", ckpt_path, "trained checkpoint file");
  cli::kv_flag(evalc, "--manifest", "manifest", flags, "dataset manifest file");
  cli::kv_flag(evalc, "--level", "level", flags, "word|page");
  cli::kv_flag(evalc, "--batch-size", "batch_size", flags, "evaluation batch size");

  CLI::App* predict = app.add_subcommand("predict", "top-5 writers for one word image");
  add_common(predict);
  predict->add_option("--checkpoint", ckpt_path, "trained checkpoint file");
  predict->add_option("--image", image_path, "8-bit grayscale PNG word image");

  CLI::App* flopsc = app.add_subcommand("flops", "parameter/FLOPs cost report");
  add_common(flopsc);
  add_net_flags(flopsc);
  bool csv = false;
  flopsc->add_flag("--csv", csv, "emit delimiter-separated rows instead of a table");

  CLI::App* gensynth = app.add_subcommand("gen-synth", "generate a synthetic corpus");
  add_common(gensynth);
  cli::kv_flag(gensynth, "--out", "out_dir", flags, "output directory (default $WID_OUT_DIR)");
  cli::kv_flag(gensynth, "--writers", "synth_writers", flags, "number of synthetic writers");
  cli::kv_flag(gensynth, "--words-per-page", "synth_words_per_page", flags, "words per page");
  cli::kv_flag(gensynth, "--pages", "synth_pages", flags, "pages per writer");
  cli::kv_flag(gensynth, "--seed", "seed", flags, "corpus seed");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? 0 : 1;
  }

  inv.flags = *flags;
  try {
    RunConfig rc = cli::build_run_config(inv);
    rc.checkpoint = ckpt_path;
    rc.image = image_path;
    rc.csv = csv;

    // Input validation (usage errors).
    if (inv.command == "train") cli::require_file("manifest", rc.manifest);
    if (inv.command == "eval") {
      cli::require_file("checkpoint", rc.checkpoint);
      cli::require_file("manifest", rc.manifest);
    }
    if (inv.command == "predict") {
      cli::require_file("checkpoint", rc.checkpoint);
      cli::require_file("image", rc.image);
    }
    if (inv.command == "flops" || inv.command == "train") rc.net.validate();

    try {
      if (inv.command == "train") return cli::run_train(std::move(rc), out);
      if (inv.command == "eval") return cli::run_eval(rc, out);
      if (inv.command == "predict") return cli::run_predict(rc, out);
      if (inv.command == "flops") return cli::run_flops(rc, out);
      if (inv.command == "gen-synth") return cli::run_gen_synth(rc, out);
      err << "error: no command\n";
      return 1;
    } catch (const std::exception& e) {
      err << "error: " << e.what() << "\n";
      return 2;
    }
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }
}

}  // namespace wid
