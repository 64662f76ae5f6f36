// Command-line driver for the unit-LM preference alignment pipeline.
//
// Exit codes: 0 success, 2 configuration error, 3 stage failure,
// 4 judge endpoint failure.

#include <CLI11.hpp>

#include <cstdio>
#include <exception>
#include <filesystem>
#include <iostream>
#include <memory>
#include <optional>
#include <string>

#include "ualign/eval.hpp"
#include "ualign/metrics.hpp"
#include "ualign/pipeline.hpp"

namespace fs = std::filesystem;
using namespace ualign;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitStage = 3;
constexpr int kExitJudge = 4;

RunConfig base_config(const std::string& config_path) {
  return config_path.empty() ? RunConfig{} : load_run_config(config_path);
}

std::unique_ptr<Judge> make_judge(const RunConfig& cfg, const World& world, OracleCutpoints& cuts_out,
                                  const std::string& persist_dir) {
  OracleCalibration cal;
  cal.n_reference = cfg.judge.n_reference;
  cal.prompt_target_len = cfg.prompt_target_len;
  cal.len_range = {cfg.corpus_len_range[0], cfg.corpus_len_range[1]};
  cuts_out = calibrate_oracle(world, cal, mix64(cfg.seed ^ 0x13));
  if (cfg.judge.kind == "oracle") return std::make_unique<OracleJudge>(world, cuts_out);

  LlmJudgeConfig lc = llm_judge_config_from_env();
  if (lc.endpoint.empty()) lc.endpoint = cfg.judge.endpoint;
  if (lc.endpoint.empty()) throw JudgeEndpointError("http judge selected but no endpoint configured");
  lc.templ = judge_template_by_id(cfg.judge.template_id);
  lc.timeout_ms = cfg.judge.timeout_ms;
  lc.max_attempts = cfg.judge.max_attempts;
  lc.max_in_flight = cfg.judge.max_in_flight;
  if (!persist_dir.empty()) lc.persist_path = persist_dir + "/verdicts.jsonl";
  return std::make_unique<LlmJudge>(lc);
}

json candidate_scores_json(const Candidate& c) {
  json j{{"auto_bleu", c.scores.auto_bleu}};
  j["ppl"] = c.scores.ppl ? json(*c.scores.ppl) : json(nullptr);
  j["judge"] = c.scores.judge ? json(*c.scores.judge) : json(nullptr);
  return j;
}

int cmd_world(const std::string& config_path, std::uint64_t seed, bool has_seed, const std::string& out,
              int corpus_n, const std::string& corpus_out) {
  RunConfig cfg = base_config(config_path);
  if (has_seed) cfg.seed = seed;
  const World world = generate_world(cfg.seed, cfg.world);
  save_world(world, out);
  std::cout << "world: " << out << " (vocab " << world.vocab().size << ", contexts " << world.ctx.num_contexts()
            << ", lexicon " << world.lexicon.size() << ")\n";
  if (corpus_n > 0) {
    const Corpus corpus = sample_corpus(world, corpus_n, {cfg.corpus_len_range[0], cfg.corpus_len_range[1]},
                                        mix64(cfg.seed ^ 0x11), "train");
    save_corpus(corpus, corpus_out);
    std::cout << "corpus: " << corpus_out << " (" << corpus.entries.size() << " sequences)\n";
  }
  return kExitOk;
}

int cmd_pretrain(const std::string& config_path, const std::string& world_path, const std::string& corpus_path,
                 const std::string& out) {
  RunConfig cfg = base_config(config_path);
  const World world = load_world(world_path);
  const Corpus corpus = load_corpus(corpus_path);
  const PolicyModel model = mle_pretrain(corpus, world.vocab(), cfg.pretrain);
  CheckpointMeta meta;
  meta.seed = cfg.seed;
  meta.corpus_id = corpus_path;
  save_checkpoint(model, out, meta);
  std::cout << "pretrained checkpoint: " << out << "\n";
  return kExitOk;
}

int cmd_sample(const std::string& config_path, const std::string& world_path, const std::string& model_path,
               const std::string& corpus_path, int n_prompts, const std::string& out) {
  RunConfig cfg = base_config(config_path);
  const World world = load_world(world_path);
  const PolicyModel model = load_checkpoint(model_path);
  const Corpus corpus = load_corpus(corpus_path);
  const PromptSet prompts = segment_corpus(corpus, cfg.prompt_target_len, world.vocab());
  const std::size_t limit = n_prompts > 0 ? std::min<std::size_t>(prompts.prompts.size(),
                                                                  static_cast<std::size_t>(n_prompts))
                                          : prompts.prompts.size();
  SamplingConfig sampling = cfg.sampling;
  sampling.seed = cfg.seed;
  std::string lines;
  for (std::size_t i = 0; i < limit; ++i) {
    const auto candidates = sample_n(model, prompts.prompts[i], sampling, i);
    for (std::size_t k = 0; k < candidates.size(); ++k) {
      lines += json{{"prompt_id", prompts.ids[i]}, {"candidate_index", k}, {"units", candidates[k].units}}.dump();
      lines += '\n';
    }
  }
  write_text_file(out, lines);
  std::cout << "candidates: " << out << " (" << limit << " prompts x " << sampling.n_continuations << ")\n";
  return kExitOk;
}

int cmd_select(const std::string& config_path, const std::string& world_path, const std::string& model_path,
               const std::string& corpus_path, const std::string& selector, int n_prompts,
               const std::string& pairs_out, const std::string& yield_out, const std::string& scores_out) {
  RunConfig cfg = base_config(config_path);
  if (!selector.empty()) cfg.selector = selector;
  const World world = load_world(world_path);
  const PolicyModel model = load_checkpoint(model_path);
  const Corpus corpus = load_corpus(corpus_path);
  PromptSet prompts = segment_corpus(corpus, cfg.prompt_target_len, world.vocab());
  if (n_prompts > 0 && static_cast<int>(prompts.prompts.size()) > n_prompts) {
    prompts.ids.resize(static_cast<std::size_t>(n_prompts));
    prompts.prompts.resize(static_cast<std::size_t>(n_prompts));
    prompts.references.resize(static_cast<std::size_t>(n_prompts));
  }

  OracleCutpoints cuts;
  const std::unique_ptr<Judge> judge = make_judge(cfg, world, cuts, fs::path(pairs_out).parent_path().string());

  std::string score_lines;
  ScoredSink sink;
  if (!scores_out.empty()) {
    sink = [&](std::size_t i, const std::vector<Candidate>& cands) {
      for (std::size_t k = 0; k < cands.size(); ++k) {
        json j = candidate_scores_json(cands[k]);
        j["prompt_id"] = prompts.ids[i];
        j["candidate_index"] = k;
        score_lines += j.dump();
        score_lines += '\n';
      }
    };
  }

  const PreferenceDataset ds =
      build_preference_dataset(model, prompts, world, cfg.sampling, judge.get(), cfg.thresholds,
                               selector_from_string(cfg.selector), cfg.seed, sink);
  save_preference_dataset(ds, pairs_out, yield_out);
  if (!scores_out.empty()) write_text_file(scores_out, score_lines);
  std::cout << "pairs: " << pairs_out << " (" << ds.stats.pairs_out << "/" << ds.stats.prompts_in << " prompts)\n";
  return kExitOk;
}

int cmd_train(const std::string& config_path, const std::string& model_path, const std::string& reference_path,
              const std::string& pairs_path, const std::string& out, const std::string& history_out) {
  RunConfig cfg = base_config(config_path);
  const PolicyModel policy = load_checkpoint(model_path);
  PolicyModel reference = reference_path.empty() ? policy : load_checkpoint(reference_path);
  if (reference_path.empty()) reference.zero_adapter();

  const std::vector<PreferencePair> pairs = load_preference_pairs(pairs_path);
  std::vector<PreferencePair> train, dev;
  const int stride = cfg.dpo.dev_fraction > 0.0 ? std::max(2, static_cast<int>(1.0 / cfg.dpo.dev_fraction)) : 0;
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    if (stride > 0 && static_cast<int>(i % static_cast<std::size_t>(stride)) == stride - 1)
      dev.push_back(pairs[i]);
    else
      train.push_back(pairs[i]);
  }
  if (train.empty()) std::swap(train, dev);

  const TrainResult tr = train_dpo(policy, reference, train, cfg.dpo, dev);
  save_checkpoint(tr.policy, out, {cfg.seed, pairs_path, ""});
  if (!history_out.empty()) save_history_csv(tr.history, history_out);
  std::cout << "trained checkpoint: " << out << " (best step " << tr.best_step << ", dev reward acc "
            << tr.best_dev_accuracy << ")\n";
  return kExitOk;
}

int cmd_curriculum(const std::string& config_path, const std::string& world_path, const std::string& model_path,
                   const std::string& corpus_path, const std::string& out_dir) {
  RunConfig cfg = base_config(config_path);
  if (!out_dir.empty()) cfg.out_dir = out_dir;
  const World world = load_world(world_path);
  const PolicyModel base = load_checkpoint(model_path);
  const Corpus corpus = load_corpus(corpus_path);
  PromptSet prompts = segment_corpus(corpus, cfg.prompt_target_len, world.vocab());
  if (static_cast<int>(prompts.prompts.size()) > cfg.n_train_prompts) {
    prompts.ids.resize(static_cast<std::size_t>(cfg.n_train_prompts));
    prompts.prompts.resize(static_cast<std::size_t>(cfg.n_train_prompts));
    prompts.references.resize(static_cast<std::size_t>(cfg.n_train_prompts));
  }

  fs::create_directories(cfg.out_dir);
  OracleCutpoints cuts;
  const std::unique_ptr<Judge> judge = make_judge(cfg, world, cuts, cfg.out_dir);

  const CurriculumResult result =
      run_curriculum(base, prompts, world, cfg.schedule(), cfg.sampling, *judge, cfg.dpo,
                     selector_from_string(cfg.selector), cfg.seed, {}, cfg.rebase_reference);

  json manifest{{"config", run_config_to_json(cfg)}, {"completed", result.completed},
                {"stop_reason", result.stop_reason}, {"iterations", json::array()}};
  for (std::size_t k = 0; k < result.iterations.size(); ++k) {
    const auto& iter = result.iterations[k];
    const std::string tag = "iter_" + std::to_string(k + 1);
    fs::create_directories(cfg.out_dir + "/" + tag);
    PreferenceDataset ds;
    ds.pairs = iter.pairs;
    ds.stats = iter.yield;
    save_preference_dataset(ds, cfg.out_dir + "/" + tag + "/prefs.jsonl", cfg.out_dir + "/" + tag + "/yield.json");
    save_history_csv(iter.history, cfg.out_dir + "/" + tag + "/history.csv");
    save_checkpoint(iter.policy, cfg.out_dir + "/" + tag + ".json", {cfg.seed, corpus_path, ""});
    manifest["iterations"].push_back(json{{"tag", tag},
                                          {"s_c", iter.thresholds.s_c},
                                          {"s_r", iter.thresholds.s_r},
                                          {"pairs_out", iter.yield.pairs_out},
                                          {"dev_reward_accuracy", iter.dev_reward_accuracy}});
  }
  save_json(cfg.out_dir + "/curriculum.json", manifest, 2);
  if (!result.completed) {
    std::cerr << "curriculum stopped early: " << result.stop_reason << "\n";
    return kExitStage;
  }
  std::cout << "curriculum: " << result.iterations.size() << " iterations under " << cfg.out_dir << "\n";
  return kExitOk;
}

int cmd_eval(const std::string& config_path, const std::string& world_path, const std::string& model_path,
             const std::string& out) {
  RunConfig cfg = base_config(config_path);
  const World world = load_world(world_path);
  const PolicyModel model = load_checkpoint(model_path);

  OracleCutpoints cuts;
  const std::unique_ptr<Judge> judge = make_judge(cfg, world, cuts, fs::path(out).parent_path().string());

  const Corpus eval_corpus = sample_corpus(world, cfg.eval.n_eval_prompts * 3,
                                           {cfg.corpus_len_range[0], cfg.corpus_len_range[1]},
                                           mix64(cfg.seed ^ 0x12), "eval");
  PromptSet eval_set = segment_corpus(eval_corpus, cfg.prompt_target_len, world.vocab());
  if (static_cast<int>(eval_set.prompts.size()) < cfg.eval.n_eval_prompts)
    throw StageError("eval", "not enough eval prompts after segmentation");
  std::vector<UnitSeq> prompts(eval_set.prompts.begin(),
                               eval_set.prompts.begin() + cfg.eval.n_eval_prompts);

  const auto nonword = make_paired_suite(world, cfg.eval.n_paired, PairedKind::nonword, mix64(cfg.seed ^ 0x14));
  const auto syntax = make_paired_suite(world, cfg.eval.n_paired, PairedKind::syntax, mix64(cfg.seed ^ 0x15));
  const auto story = make_story_suite(world, cfg.eval.n_story, mix64(cfg.seed ^ 0x16), cfg.prompt_target_len,
                                      cfg.eval.story_ending_len);

  const ContinuationReport rep =
      eval_continuation(model, *judge, prompts, world, cfg.sampling, mix64(cfg.seed ^ 0x17));
  json j{{"n_prompts", rep.n_prompts},
         {"n_scored", rep.n_scored},
         {"n_judge_failures", rep.n_judge_failures},
         {"mean_judge", rep.mean_judge},
         {"mean_auto_bleu", rep.mean_auto_bleu},
         {"mean_ppl", rep.mean_ppl},
         {"score_histogram", rep.score_histogram},
         {"nonword_acc", eval_paired(model, nonword)},
         {"syntax_acc", eval_paired(model, syntax)},
         {"story_acc", eval_story(model, story)}};
  save_json(out, j, 2);
  std::cout << "metrics: " << out << "\n";
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Preference alignment for discrete-unit language models"};
  app.require_subcommand(1);

  std::string config_path, world_path, model_path, reference_path, corpus_path, out, corpus_out, yield_out,
      scores_out, history_out, run_dir, selector;
  std::uint64_t seed = 0;
  int corpus_n = 0, n_prompts = 0;
  bool dry_run = false;

  auto* world_cmd = app.add_subcommand("world", "Generate a hidden world (and optionally a corpus)");
  world_cmd->add_option("--config", config_path, "Run config JSON");
  auto* seed_opt = world_cmd->add_option("--seed", seed, "World seed");
  world_cmd->add_option("--out", out, "world.json path")->required();
  world_cmd->add_option("--corpus", corpus_n, "Also sample this many corpus sequences");
  world_cmd->add_option("--corpus-out", corpus_out, "corpus.jsonl path")->default_val("corpus.jsonl");

  auto* pretrain_cmd = app.add_subcommand("pretrain", "Count-based MLE pretraining");
  pretrain_cmd->add_option("--config", config_path, "Run config JSON");
  pretrain_cmd->add_option("--world", world_path)->required();
  pretrain_cmd->add_option("--corpus", corpus_path)->required();
  pretrain_cmd->add_option("--out", out, "Checkpoint path")->required();

  auto* sample_cmd = app.add_subcommand("sample", "Sample N continuations per prompt");
  sample_cmd->add_option("--config", config_path, "Run config JSON");
  sample_cmd->add_option("--world", world_path)->required();
  sample_cmd->add_option("--model", model_path)->required();
  sample_cmd->add_option("--corpus", corpus_path)->required();
  sample_cmd->add_option("--prompts", n_prompts, "Limit number of prompts (0 = all)");
  sample_cmd->add_option("--out", out, "candidates.jsonl path")->required();

  auto* select_cmd = app.add_subcommand("select", "Build preference pairs from scored candidates");
  select_cmd->add_option("--config", config_path, "Run config JSON");
  select_cmd->add_option("--world", world_path)->required();
  select_cmd->add_option("--model", model_path)->required();
  select_cmd->add_option("--corpus", corpus_path)->required();
  select_cmd->add_option("--selector", selector, "ppl or score");
  select_cmd->add_option("--prompts", n_prompts, "Limit number of prompts (0 = all)");
  select_cmd->add_option("--out", out, "prefs.jsonl path")->required();
  select_cmd->add_option("--yield", yield_out, "yield.json path")->default_val("yield.json");
  select_cmd->add_option("--scores-out", scores_out, "Optional scores.jsonl dump");

  auto* train_cmd = app.add_subcommand("train", "DPO training against a frozen reference");
  train_cmd->add_option("--config", config_path, "Run config JSON");
  train_cmd->add_option("--model", model_path, "Policy checkpoint")->required();
  train_cmd->add_option("--reference", reference_path, "Reference checkpoint (default: policy with zero adapter)");
  train_cmd->add_option("--prefs", corpus_path, "prefs.jsonl")->required();
  train_cmd->add_option("--out", out, "Output checkpoint")->required();
  train_cmd->add_option("--history", history_out, "history.csv path");

  auto* curriculum_cmd = app.add_subcommand("curriculum", "Iterated DPO with a threshold schedule");
  curriculum_cmd->add_option("--config", config_path, "Run config JSON")->required();
  curriculum_cmd->add_option("--world", world_path)->required();
  curriculum_cmd->add_option("--model", model_path)->required();
  curriculum_cmd->add_option("--corpus", corpus_path)->required();
  curriculum_cmd->add_option("--out-dir", run_dir, "Output directory");

  auto* eval_cmd = app.add_subcommand("eval", "Benchmark suites plus judged continuation metrics");
  eval_cmd->add_option("--config", config_path, "Run config JSON");
  eval_cmd->add_option("--world", world_path)->required();
  eval_cmd->add_option("--model", model_path)->required();
  eval_cmd->add_option("--out", out, "metrics.json path")->required();

  auto* report_cmd = app.add_subcommand("report", "metrics.csv + score histogram from a run directory");
  report_cmd->add_option("--run-dir", run_dir)->required();

  auto* pipeline_cmd = app.add_subcommand("pipeline", "End-to-end run from a config file");
  pipeline_cmd->add_option("--config", config_path, "Run config JSON")->required();
  pipeline_cmd->add_option("--out-dir", run_dir, "Override out_dir");
  auto* pseed_opt = pipeline_cmd->add_option("--seed", seed, "Override seed");
  pipeline_cmd->add_flag("--dry-run", dry_run, "Write the manifest only");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);
    app.exit(e);
    return kExitConfig;
  }

  try {
    if (world_cmd->parsed())
      return cmd_world(config_path, seed, seed_opt->count() > 0, out, corpus_n, corpus_out);
    if (pretrain_cmd->parsed()) return cmd_pretrain(config_path, world_path, corpus_path, out);
    if (sample_cmd->parsed()) return cmd_sample(config_path, world_path, model_path, corpus_path, n_prompts, out);
    if (select_cmd->parsed())
      return cmd_select(config_path, world_path, model_path, corpus_path, selector, n_prompts, out, yield_out,
                        scores_out);
    if (train_cmd->parsed())
      return cmd_train(config_path, model_path, reference_path, corpus_path, out, history_out);
    if (curriculum_cmd->parsed())
      return cmd_curriculum(config_path, world_path, model_path, corpus_path, run_dir);
    if (eval_cmd->parsed()) return cmd_eval(config_path, world_path, model_path, out);
    if (report_cmd->parsed()) {
      emit_report(run_dir);
      std::cout << "report: " << run_dir << "/metrics.csv\n";
      return kExitOk;
    }
    if (pipeline_cmd->parsed()) {
      RunConfig cfg = load_run_config(config_path);
      if (!run_dir.empty()) cfg.out_dir = run_dir;
      if (pseed_opt->count() > 0) cfg.seed = seed;
      const RunResult r = run_pipeline(cfg, dry_run);
      if (!r.ok) {
        std::cerr << "pipeline failed at stage: " << r.failed_stage << "\n";
        return kExitStage;
      }
      std::cout << "run directory: " << r.dir << "\n";
      return kExitOk;
    }
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const JudgeEndpointError& e) {
    std::cerr << "judge endpoint error: " << e.what() << "\n";
    return kExitJudge;
  } catch (const std::invalid_argument& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitStage;
  }
  return kExitConfig;
}
