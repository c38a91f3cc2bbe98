// scoretune: reinforcement-tuning engine for toy score-prediction policies.
// Subcommands: init, build-dataset, sft, train, eval, select.

#include <chrono>
#include <cmath>
#include <cstdint>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "scoretune/config.hpp"
#include "scoretune/dataset.hpp"
#include "scoretune/errors.hpp"
#include "scoretune/grpo.hpp"
#include "scoretune/metrics.hpp"
#include "scoretune/policy.hpp"
#include "scoretune/reward.hpp"
#include "scoretune/serialization.hpp"
#include "scoretune/tts.hpp"

namespace fs = std::filesystem;
using namespace scoretune;

namespace {

constexpr std::uint64_t kToyTag = 0x746f7964ULL;
constexpr std::uint64_t kTeacherTag = 0x74656163ULL;
constexpr std::uint64_t kPolicyInitTag = 0x70696e69ULL;
constexpr std::uint64_t kTtsTag = 0x74747473ULL;

struct CliOptions {
  std::string config_path = "scoretune.json";
  std::optional<std::uint64_t> seed;
  std::optional<std::string> output;
  bool deterministic = false;
};

struct Context {
  RunConfig config;
  std::string hash;
  fs::path out_dir;
};

std::string read_file(const fs::path& path, const char* what) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw data_error(std::string(what) + ": cannot open '" + path.string() + "'");
  std::stringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

void write_file(const fs::path& path, const std::string& content) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw data_error("cannot open '" + path.string() + "' for writing");
  out << content;
  out.flush();
  if (!out) throw data_error("write failure on '" + path.string() + "'");
}

// Timestamps live only in this sidecar log; every other artifact is
// byte-identical across identical config+seed runs.
void append_run_log(const fs::path& out_dir, const std::string& message) {
  fs::create_directories(out_dir);
  std::ofstream log(out_dir / "run.log", std::ios::app);
  const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  char stamp[32];
  std::strftime(stamp, sizeof(stamp), "%Y-%m-%dT%H:%M:%S", std::gmtime(&now));
  log << "[" << stamp << "Z] " << message << "\n";
}

Context load_context(const CliOptions& cli, const std::string& command) {
  std::string text = read_file(cli.config_path, "config");
  apply_env_overrides(text, scoretune_env());
  RunConfig config = parse_config_text(text);
  if (cli.seed.has_value()) config.seed = *cli.seed;
  if (cli.output.has_value()) config.output_dir = *cli.output;
  if (cli.deterministic) {
    config.train.threads = 1;
    config.tts.parallelism = 1;
  }
  config.validate();

  Context ctx;
  ctx.config = std::move(config);
  ctx.hash = config_hash(ctx.config);
  ctx.out_dir = ctx.config.output_dir;
  fs::create_directories(ctx.out_dir);

  nlohmann::ordered_json meta{
      {"command", command}, {"config_hash", ctx.hash}, {"seed", ctx.config.seed}};
  write_file(ctx.out_dir / "run_meta.json", meta.dump(2) + "\n");
  append_run_log(ctx.out_dir, command + " config_hash=" + ctx.hash);
  return ctx;
}

fs::path resolve_under_output(const Context& ctx, const std::string& path) {
  fs::path p(path);
  return p.is_absolute() ? p : ctx.out_dir / p;
}

// train and held-out items are one dataset split, so both carry the same
// underlying feature-to-score mapping
std::vector<ToyItem> toy_items(const Context& ctx) {
  return make_toy_dataset({ctx.config.toy.train_items + ctx.config.toy.eval_items,
                           ctx.config.toy.feature_dim, derive_seed(ctx.config.seed, {kToyTag})},
                          ctx.config.vocab);
}

std::vector<ToyItem> toy_train_items(const Context& ctx) {
  auto items = toy_items(ctx);
  items.resize(ctx.config.toy.train_items);
  return items;
}

std::vector<ToyItem> toy_eval_items(const Context& ctx) {
  const auto items = toy_items(ctx);
  return
      std::vector<ToyItem>(items.begin() + ctx.config.toy.train_items, items.end());
}

Policy fresh_policy(const Context& ctx) {
  return Policy::random_init(ctx.config.policy, ctx.config.vocab,
                             derive_seed(ctx.config.seed, {kPolicyInitTag}));
}

TrainingCheckpoint load_checkpoint(const fs::path& path) {
  return checkpoint_from_json(read_file(path, "checkpoint"));
}

int cmd_init(const CliOptions& cli) {
  write_file(cli.config_path, serialize_config(default_config()));
  std::cout << "wrote default config to " << cli.config_path << "\n";
  return 0;
}

int cmd_build_dataset(const CliOptions& cli) {
  Context ctx = load_context(cli, "build-dataset");
  const auto items = toy_train_items(ctx);

  std::vector<ItemCandidates> per_item;
  per_item.reserve(items.size());
  for (std::size_t i = 0; i < items.size(); ++i) {
    Rng rng(derive_seed(ctx.config.seed, {kTeacherTag, i}));
    per_item.push_back({items[i], generate_candidates(items[i], ctx.config.teacher,
                                                      ctx.config.rejection.teacher_samples,
                                                      ctx.config.vocab, rng)});
  }
  const FilterResult filtered = filter_items(per_item, ctx.config.rejection, ctx.config.reward);

  const fs::path corpus_path = resolve_under_output(ctx, ctx.config.paths.corpus);
  if (corpus_path.has_parent_path()) fs::create_directories(corpus_path.parent_path());
  const CorpusManifest manifest = export_corpus(filtered, corpus_path.string(), ctx.hash);
  write_file(corpus_path.string() + ".manifest.json", manifest_to_json(manifest));

  int hard = 0;
  for (const auto& outcome : filtered.ledger)
    if (outcome.disposition == Disposition::hard_dropped) ++hard;
  if (items.size() > 0 && hard * 2 > static_cast<int>(items.size()))
    std::cerr << "warning: " << hard << "/" << items.size()
              << " items hard-dropped; consider lowering rejection.accept_reward_min\n";

  std::cout << "corpus: " << manifest.total << " records -> " << corpus_path << "\n";
  for (const auto& [disposition, count] : manifest.per_disposition)
    std::cout << "  " << disposition << ": " << count << "\n";
  return 0;
}

int cmd_sft(const CliOptions& cli) {
  Context ctx = load_context(cli, "sft");
  const fs::path corpus_path = resolve_under_output(ctx, ctx.config.paths.corpus);
  const auto records = import_corpus(corpus_path.string());
  if (records.empty()) throw data_error("sft: corpus '" + corpus_path.string() + "' is empty");

  const auto items = toy_train_items(ctx);
  std::map<std::string, const ToyItem*> by_id;
  for (const auto& item : items) by_id[item.id] = &item;

  std::vector<SftExample> examples;
  examples.reserve(records.size());
  for (const auto& rec : records) {
    const auto it = by_id.find(rec.item_id);
    if (it == by_id.end())
      throw data_error("sft: corpus item '" + rec.item_id + "' not found in the toy dataset; " +
                       "rebuild the corpus with the current seed/config");
    if (static_cast<int>(rec.reasoning_tokens.size()) > ctx.config.policy.prefix_len)
      throw data_error("sft: record for '" + rec.item_id + "' has more reasoning tokens than " +
                       "policy.prefix_len supports");
    for (int token : rec.reasoning_tokens)
      if (token < 0 || token >= ctx.config.vocab.reason_tokens)
        throw data_error("sft: record for '" + rec.item_id + "' carries reason token " +
                         std::to_string(token) + " outside the vocabulary");
    if (!std::isfinite(rec.final_score))
      throw data_error("sft: record for '" + rec.item_id + "' carries a non-finite score");
    SftExample ex;
    ex.item = *it->second;
    ex.tokens = rec.reasoning_tokens;
    ex.tokens.push_back(ctx.config.vocab.encode_score(rec.final_score));
    examples.push_back(std::move(ex));
  }

  const SftResult result = sft_fit(fresh_policy(ctx), examples, ctx.config.sft.epochs,
                                   ctx.config.sft.learning_rate, ctx.config.train.threads);

  std::string loss_lines;
  for (std::size_t e = 0; e < result.epoch_loss.size(); ++e) {
    nlohmann::ordered_json j{{"epoch", e}, {"loss", result.epoch_loss[e]}};
    loss_lines += j.dump() + "\n";
  }
  write_file(ctx.out_dir / "sft_loss.jsonl", loss_lines);

  TrainingCheckpoint ckpt;
  ckpt.config_hash = ctx.hash;
  ckpt.seed = ctx.config.seed;
  ckpt.next_epoch = 0;
  ckpt.rng_state = "root=" + std::to_string(ctx.config.seed) + ";next_epoch=0";
  ckpt.policy = result.policy;
  ckpt.ref_policy = result.policy;
  write_file(ctx.out_dir / "sft_checkpoint.json", checkpoint_to_json(ckpt));

  std::cout << "sft: " << examples.size() << " trajectories, final loss "
            << (result.epoch_loss.empty() ? 0.0 : result.epoch_loss.back()) << "\n";
  return 0;
}

int cmd_train(const CliOptions& cli, const std::string& init_from, const std::string& resume_path) {
  Context ctx = load_context(cli, "train");
  const auto items = toy_train_items(ctx);

  Policy policy = fresh_policy(ctx);
  std::optional<ResumeState> resume;
  if (!resume_path.empty()) {
    const TrainingCheckpoint ckpt = load_checkpoint(resume_path);
    if (ckpt.config_hash != ctx.hash)
      throw config_error("train --resume: checkpoint hash " + ckpt.config_hash +
                         " does not match current config " + ctx.hash);
    resume = resume_from_checkpoint(ckpt);
  } else if (!init_from.empty()) {
    policy = load_checkpoint(init_from).policy;
    if (policy.shape != ctx.config.policy || !(policy.vocab == ctx.config.vocab))
      throw config_error("train --init-from: checkpoint architecture differs from config");
  }

  std::ofstream steps_out(ctx.out_dir / "training_log.jsonl", std::ios::binary | std::ios::trunc);
  std::ofstream epochs_out(ctx.out_dir / "epochs.jsonl", std::ios::binary | std::ios::trunc);
  if (!steps_out || !epochs_out) throw data_error("train: cannot open log files");

  const CheckpointSink ckpt_sink = [&](const TrainingCheckpoint& ckpt) {
    const std::string blob = checkpoint_to_json(ckpt);
    write_file(ctx.out_dir / ("checkpoint-" + std::to_string(ckpt.next_epoch) + ".json"), blob);
    write_file(ctx.out_dir / "checkpoint.json", blob);
  };
  const StepSink step_sink = [&](const StepReport& rep) {
    steps_out << step_report_to_jsonl(rep) << "\n";
    if (!steps_out) throw data_error("train: write failure on training_log.jsonl");
  };
  const EpochSink epoch_sink = [&](const EpochReport& rep) {
    epochs_out << epoch_report_to_jsonl(rep) << "\n";
  };

  const TrainingLog log =
      run_training(items, policy, ctx.config.schedule, ctx.config.grpo, ctx.config.reward,
                   ctx.config.train, ctx.config.seed, ctx.hash, ckpt_sink, step_sink, epoch_sink,
                   std::move(resume));

  if (!log.epochs.empty()) {
    const auto& last = log.epochs.back();
    std::cout << "train: " << log.steps.size() << " steps, final epoch mean_reward "
              << last.mean_reward << ", retained_fraction " << last.retained_fraction << "\n";
  } else {
    std::cout << "train: nothing to do (0 epochs)\n";
  }
  return 0;
}

int cmd_eval(const CliOptions& cli, const std::string& checkpoint_path,
             const std::string& predictions_path) {
  Context ctx = load_context(cli, "eval");
  const auto toy_items = toy_eval_items(ctx);
  std::vector<ScoreItem> items(toy_items.begin(), toy_items.end());
  const ParseRange range{ctx.config.vocab.score_min, ctx.config.vocab.score_max};

  EvalReport report;
  if (!predictions_path.empty()) {
    report = evaluate_predictions(items, read_predictions(predictions_path), "toy-eval", range);
  } else {
    const fs::path ckpt_path = checkpoint_path.empty() ? ctx.out_dir / "checkpoint.json"
                                                       : fs::path(checkpoint_path);
    const Policy policy = load_checkpoint(ckpt_path).policy;
    const Predictor predictor = [&](const ScoreItem&, std::size_t index) {
      char buf[64];
      std::snprintf(buf, sizeof(buf), "SCORE: %.17g", expected_score(policy, toy_items[index]));
      return std::string(buf);
    };
    report = evaluate(items, predictor, "toy-eval", range, ctx.config.train.threads);
  }

  write_file(ctx.out_dir / "eval_report.json", eval_report_to_json(report, ctx.hash));
  std::cout << "eval: n=" << report.n_items << " parse_failures=" << report.n_parse_failures
            << " plcc=" << (report.plcc ? std::to_string(*report.plcc) : "undefined")
            << " srcc=" << (report.srcc ? std::to_string(*report.srcc) : "undefined") << "\n";
  return 0;
}

int cmd_select(const CliOptions& cli, const std::string& prompts_path) {
  Context ctx = load_context(cli, "select");
  const std::string path = prompts_path.empty() ? ctx.config.paths.prompts : prompts_path;
  if (path.empty())
    throw config_error("select: no prompts file (pass --prompts or set paths.prompts)");

  std::vector<std::string> prompts;
  {
    std::istringstream in(read_file(path, "prompts"));
    std::string line;
    while (std::getline(in, line))
      if (!line.empty()) prompts.push_back(line);
  }
  if (prompts.empty()) throw data_error("select: prompts file '" + path + "' is empty");

  SimGenerator generator(derive_seed(ctx.config.seed, {kTtsTag}));
  SimScorer scorer;

  std::ofstream transcripts(ctx.out_dir / "transcripts.jsonl", std::ios::binary | std::ios::trunc);
  if (!transcripts) throw data_error("select: cannot open transcripts.jsonl");
  const TranscriptSink sink = [&](const TranscriptEntry& entry) {
    transcripts << transcript_entry_to_jsonl(entry) << "\n";
  };

  for (std::size_t p = 0; p < prompts.size(); ++p) {
    char id[32];
    std::snprintf(id, sizeof(id), "prompt-%04zu", p);
    const SelectionResult selected =
        best_of_n(id, prompts[p], generator, scorer, ctx.config.tts, sink);
    const Candidate final_best = reflect_loop(id, prompts[p], selected.winner, generator, scorer,
                                              ctx.config.tts, {}, sink);
    std::cout << id << ": best_of_" << ctx.config.tts.n_candidates << " combined "
              << selected.winner.combined << " -> reflected combined " << final_best.combined
              << "\n";
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"scoretune: group-relative reinforcement tuning for score prediction"};
  app.require_subcommand(1);

  CliOptions cli;
  app.add_option("--config", cli.config_path, "config file path")->capture_default_str();
  std::uint64_t seed_value = 0;
  auto* seed_opt = app.add_option("--seed", seed_value, "override config seed");
  std::string output_value;
  auto* output_opt = app.add_option("--output", output_value, "override output directory");
  app.add_flag("--deterministic", cli.deterministic, "force single-threaded execution");

  auto* init = app.add_subcommand("init", "write a default config file");
  auto* build = app.add_subcommand("build-dataset", "run the rejection-sampling pipeline");
  auto* sft = app.add_subcommand("sft", "maximum-likelihood fit on the exported corpus");
  auto* train = app.add_subcommand("train", "two-stage reinforcement training");
  std::string init_from, resume_path;
  train->add_option("--init-from", init_from, "start from a checkpoint's policy");
  train->add_option("--resume", resume_path, "resume an interrupted run from a checkpoint");
  auto* eval = app.add_subcommand("eval", "correlation metrics on the held-out toy set");
  std::string checkpoint_path, predictions_path;
  eval->add_option("--checkpoint", checkpoint_path, "checkpoint to evaluate");
  eval->add_option("--predictions", predictions_path,
                   "prediction file (item_id + response_text or score per line)");
  auto* select = app.add_subcommand("select", "best-of-N plus reflection with sim clients");
  std::string prompts_path;
  select->add_option("--prompts", prompts_path, "prompts file, one per line");
  // global flags (--seed, --output, --deterministic) also parse after the subcommand
  for (auto* sub : app.get_subcommands({})) sub->fallthrough();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  if (seed_opt->count() > 0) cli.seed = seed_value;
  if (output_opt->count() > 0) cli.output = output_value;

  try {
    if (init->parsed()) return cmd_init(cli);
    if (build->parsed()) return cmd_build_dataset(cli);
    if (sft->parsed()) return cmd_sft(cli);
    if (train->parsed()) return cmd_train(cli, init_from, resume_path);
    if (eval->parsed()) return cmd_eval(cli, checkpoint_path, predictions_path);
    if (select->parsed()) return cmd_select(cli, prompts_path);
  } catch (const config_error& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const data_error& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 3;
  } catch (const numerical_error& e) {
    std::cerr << "numerical error: " << e.what() << "\n";
    return 4;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
