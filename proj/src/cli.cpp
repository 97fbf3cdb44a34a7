#include "cslb/cli.hpp"

#include <cstdio>
#include <filesystem>
#include <iostream>

#include <CLI11.hpp>
#include <json.hpp>

#include "cslb/analysis.hpp"
#include "cslb/checkpoint.hpp"
#include "cslb/config.hpp"
#include "cslb/data.hpp"
#include "cslb/error.hpp"
#include "cslb/train.hpp"

namespace cslb::cli {

namespace {

namespace fs = std::filesystem;
using Model = TransformerModel<float>;

template <typename Fn>
int guarded(Fn&& fn) {
  try {
    fn();
    return 0;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 2;
  } catch (const IoError& e) {
    std::cerr << "io error: " << e.what() << '\n';
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 4;
  }
}

void ensure_dir(const std::string& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create output directory " + dir);
}

std::string join(const std::string& dir, const std::string& name) {
  return (fs::path(dir) / name).string();
}

// Loads a checkpoint plus the config echoed in its header.
struct LoadedRun {
  RunConfig config;
  Model model;
  std::int64_t step;
};

LoadedRun load_run(const std::string& checkpoint_path) {
  nlohmann::json header = read_checkpoint_header(checkpoint_path);
  RunConfig config = parse_run_config(header.at("config"));
  LoadedRun run{config, Model(config.model), 0};
  CheckpointInfo info =
      load_checkpoint<float>(checkpoint_path, run.model, nullptr);
  run.step = info.step;
  return run;
}

double corpus_loss(const Model& model, std::span<const std::int32_t> tokens,
                   int seq_len, int batch_size) {
  auto windows = chop_sequences(tokens, seq_len + 1, 0);
  if (windows.empty())
    throw ConfigError("corpus of " + std::to_string(tokens.size()) +
                      " tokens cannot fit a window of " +
                      std::to_string(seq_len + 1));
  double total = 0.0;
  std::int64_t count = 0;
  std::vector<std::int32_t> inputs, targets;
  for (size_t w0 = 0; w0 < windows.size();
       w0 += static_cast<size_t>(batch_size)) {
    const size_t w1 =
        std::min(windows.size(), w0 + static_cast<size_t>(batch_size));
    inputs.clear();
    targets.clear();
    for (size_t w = w0; w < w1; ++w) {
      inputs.insert(inputs.end(), windows[w].begin(), windows[w].end() - 1);
      targets.insert(targets.end(), windows[w].begin() + 1, windows[w].end());
    }
    const std::int64_t b = static_cast<std::int64_t>(w1 - w0);
    Tape<float> tape;
    auto bound = model.bind(tape, false);
    auto loss = model.loss_on_tokens(tape, bound, inputs, targets, b, seq_len);
    total += static_cast<double>(loss.at(0)) * static_cast<double>(b * seq_len);
    count += b * seq_len;
  }
  return total / static_cast<double>(count);
}

}  // namespace

int cmd_train(const std::string& config_path, const std::string& out_dir,
              bool force_gated) {
  return guarded([&] {
    RunConfig config = parse_run_config_file(config_path);
    if (force_gated &&
        config.model.attenuation.mode != AttenuationMode::kGated) {
      AttenuationSpec gated = AttenuationSpec::gated();
      gated.cut_strength = config.model.attenuation.cut_strength;
      gated.alpha_min = config.model.attenuation.alpha_min;
      config.model.attenuation = gated;
      config.validate();
    }
    if (config.train.corpus_path.empty())
      throw ConfigError("config: train.corpus is required for training");
    auto corpus = load_corpus(config.train.corpus_path);
    ensure_dir(out_dir);

    Model model(config.model);
    AdamW<float> opt(config.train.adamw(), model.params());
    auto result = train(model, opt, config.train, corpus);

    write_file(join(out_dir, "metrics.csv"), result.log.to_csv());
    write_file(join(out_dir, "metrics.jsonl"), result.log.to_jsonl());
    if (result.trajectory)
      write_file(join(out_dir, "gate_trajectory.csv"),
                 gate_trajectory_csv(*result.trajectory,
                                     config.model.n_layers));
    save_checkpoint(join(out_dir, "checkpoint.cslb"), model, &opt,
                    result.completed_steps, result.batcher_rng_state,
                    run_config_to_json(config));
    if (result.aborted) {
      write_file(join(out_dir, "error_report.txt"),
                 result.abort_reason + "\n" +
                     "artifacts reflect the last completed step (" +
                     std::to_string(result.completed_steps) + ")\n");
      throw NumericError(result.abort_reason);
    }
  });
}

int cmd_ablate(const std::string& config_path, double alpha,
               const std::string& out_dir) {
  return guarded([&] {
    RunConfig config = parse_run_config_file(config_path);
    if (config.train.corpus_path.empty())
      throw ConfigError("config: train.corpus is required for the sweep");
    auto corpus = load_corpus(config.train.corpus_path);
    ensure_dir(out_dir);
    auto rows =
        ablation_sweep<float>(config.model, config.train, corpus, alpha);
    write_file(join(out_dir, "ablation.csv"), ablation_csv(rows));
  });
}

int cmd_analyze(const std::string& checkpoint_path,
                const std::string& corpus_path, const AnalyzeOptions& opts,
                const std::string& out_dir) {
  return guarded([&] {
    LoadedRun run = load_run(checkpoint_path);
    LensConfig lens = run.config.lens;
    if (opts.k > 0) lens.k = opts.k;
    if (opts.anchors == "hidden") {
      lens.input_anchor = InputAnchor::kLayer0Hidden;
      lens.output_anchor = OutputAnchor::kFinalHidden;
    } else if (opts.anchors == "embedding") {
      lens.input_anchor = InputAnchor::kInputEmbedding;
      lens.output_anchor = OutputAnchor::kTargetEmbedding;
    } else if (!opts.anchors.empty()) {
      throw ConfigError("analyze: --anchors must be 'hidden' or 'embedding'");
    }
    if (opts.exclude_position0) lens.exclude_position0 = true;
    lens.validate(run.config.model.vocab_size);

    auto tokens = load_corpus(corpus_path);
    if (tokens.empty()) throw ConfigError("analyze: corpus is empty");
    const int seq_len =
        opts.seq_len > 0 ? opts.seq_len
                         : std::min(128, run.config.model.max_seq_len);
    if (seq_len > run.config.model.max_seq_len)
      throw ConfigError("analyze: seq_len exceeds the model's max_seq_len");
    auto sequences = chop_sequences(tokens, seq_len, opts.max_sequences);
    if (sequences.empty())
      throw ConfigError("analyze: corpus shorter than one sequence of " +
                        std::to_string(seq_len));
    ensure_dir(out_dir);

    auto profile = alignment_profile(run.model, sequences, lens);
    write_file(join(out_dir, "alignment_profile.csv"), profile.to_csv());

    const auto& first = sequences.front();
    const std::int64_t table_end = std::min<std::int64_t>(
        opts.table_positions, static_cast<std::int64_t>(first.size()) - 1);
    auto table = decode_table(run.model, first, 0, std::max<std::int64_t>(
                                                       1, table_end), lens);
    write_file(join(out_dir, "decode_table.txt"), table.to_text());
    write_file(join(out_dir, "decode_table.json"), table.to_json().dump(2) + "\n");

    auto shift = shift_layer_estimate(profile);
    write_file(join(out_dir, "shift_layer.json"), shift.to_json().dump(2) + "\n");
  });
}

int cmd_eval(const std::string& checkpoint_path,
             const std::string& corpus_path, int seq_len) {
  return guarded([&] {
    LoadedRun run = load_run(checkpoint_path);
    auto tokens = load_corpus(corpus_path);
    const int t = seq_len > 0 ? seq_len : run.config.train.seq_len;
    if (t > run.config.model.max_seq_len)
      throw ConfigError("eval: seq_len exceeds the model's max_seq_len");
    const double loss =
        corpus_loss(run.model, tokens, t, run.config.train.batch_size);
    std::printf("%.6f\n", loss);
  });
}

int run_main(int argc, const char* const* argv) {
  CLI::App app{
      "cslb: a desk-scale decoder-only transformer lab with residual "
      "attenuation and depth-alignment analysis. CSLB_THREADS caps kernel "
      "parallelism."};
  app.require_subcommand(1);

  std::string config_path, out_dir, checkpoint_path, corpus_path;
  double alpha = 0.1;
  AnalyzeOptions aopts;
  int eval_seq_len = -1;

  auto* sub_train = app.add_subcommand("train", "Train a model from a config");
  sub_train->add_option("config", config_path, "JSON run config")->required();
  sub_train->add_option("--out", out_dir, "Output directory")->required();

  auto* sub_gate = app.add_subcommand(
      "gate", "Train with learned residual gating (mode=gated)");
  sub_gate->add_option("config", config_path, "JSON run config")->required();
  sub_gate->add_option("--out", out_dir, "Output directory")->required();

  auto* sub_ablate = app.add_subcommand(
      "ablate", "Fixed-cut sweep: one run per layer plus a baseline");
  sub_ablate->add_option("config", config_path, "JSON run config")->required();
  sub_ablate->add_option("--alpha", alpha,
                         "Residual scale at the cut layer, in (0,1]");
  sub_ablate->add_option("--out", out_dir, "Output directory")->required();

  auto* sub_analyze = app.add_subcommand(
      "analyze", "Layer-wise alignment profile, decode table, shift estimate");
  sub_analyze->add_option("checkpoint", checkpoint_path, "Checkpoint file")
      ->required();
  sub_analyze->add_option("corpus", corpus_path, "Text corpus")->required();
  sub_analyze->add_option("--k", aopts.k, "Lens top-k (default: config)");
  sub_analyze->add_option("--anchors", aopts.anchors,
                          "Anchor mode: hidden|embedding");
  sub_analyze->add_option("--seq-len", aopts.seq_len, "Analysis window");
  sub_analyze->add_option("--max-sequences", aopts.max_sequences,
                          "Cap on analyzed sequences (0 = all)");
  sub_analyze->add_flag("--exclude-pos0", aopts.exclude_position0,
                        "Skip position 0 of every sequence");
  sub_analyze->add_option("--table-positions", aopts.table_positions,
                          "Positions shown in the decode table");
  sub_analyze->add_option("--out", out_dir, "Output directory")->required();

  auto* sub_eval =
      app.add_subcommand("eval", "Print mean next-token loss on a corpus");
  sub_eval->add_option("checkpoint", checkpoint_path, "Checkpoint file")
      ->required();
  sub_eval->add_option("corpus", corpus_path, "Text corpus")->required();
  sub_eval->add_option("--seq-len", eval_seq_len, "Eval window");

  CLI11_PARSE(app, argc, argv);

  if (sub_train->parsed()) return cmd_train(config_path, out_dir, false);
  if (sub_gate->parsed()) return cmd_train(config_path, out_dir, true);
  if (sub_ablate->parsed()) return cmd_ablate(config_path, alpha, out_dir);
  if (sub_analyze->parsed())
    return cmd_analyze(checkpoint_path, corpus_path, aopts, out_dir);
  if (sub_eval->parsed())
    return cmd_eval(checkpoint_path, corpus_path, eval_seq_len);
  return 1;
}

}  // namespace cslb::cli
