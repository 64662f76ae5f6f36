#include "ualign/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <memory>

#include "ualign/eval.hpp"
#include "ualign/metrics.hpp"

namespace ualign {

namespace fs = std::filesystem;

namespace {

json sampling_to_json(const SamplingConfig& c) {
  return json{{"temperature", c.temperature}, {"top_p", c.top_p}, {"n_continuations", c.n_continuations},
              {"max_len", c.max_len}, {"seed", c.seed}};
}

SamplingConfig sampling_from_json(const json& j) {
  SamplingConfig c;
  c.temperature = j.at("temperature").get<double>();
  c.top_p = j.at("top_p").get<double>();
  c.n_continuations = j.at("n_continuations").get<int>();
  c.max_len = j.at("max_len").get<int>();
  c.seed = j.value("seed", std::uint64_t{0});
  return c;
}

json thresholds_to_json(const SelectionThresholds& t) {
  return json{{"delta", t.delta}, {"s_c", t.s_c}, {"s_r", t.s_r}};
}

SelectionThresholds thresholds_from_json(const json& j) {
  SelectionThresholds t;
  t.delta = j.at("delta").get<double>();
  t.s_c = j.at("s_c").get<int>();
  t.s_r = j.at("s_r").get<int>();
  return t;
}

json dpo_to_json(const DpoConfig& c) {
  return json{{"beta", c.beta},
              {"batch_size", c.batch_size},
              {"peak_lr", c.peak_lr},
              {"warmup_steps", c.warmup_steps},
              {"total_steps", c.total_steps},
              {"seed", c.seed},
              {"use_adam", c.use_adam},
              {"adam_beta1", c.adam_beta1},
              {"adam_beta2", c.adam_beta2},
              {"adam_eps", c.adam_eps},
              {"eval_every", c.eval_every},
              {"dev_fraction", c.dev_fraction}};
}

DpoConfig dpo_from_json(const json& j) {
  DpoConfig c;
  c.beta = j.at("beta").get<double>();
  c.batch_size = j.at("batch_size").get<int>();
  c.peak_lr = j.at("peak_lr").get<double>();
  c.warmup_steps = j.at("warmup_steps").get<int>();
  c.total_steps = j.at("total_steps").get<int>();
  c.seed = j.value("seed", std::uint64_t{0});
  c.use_adam = j.value("use_adam", false);
  c.adam_beta1 = j.value("adam_beta1", 0.9);
  c.adam_beta2 = j.value("adam_beta2", 0.999);
  c.adam_eps = j.value("adam_eps", 1e-8);
  c.eval_every = j.value("eval_every", 100);
  c.dev_fraction = j.value("dev_fraction", 0.1);
  return c;
}

json pretrain_to_json(const PretrainConfig& c) {
  return json{{"order", c.order}, {"smoothing", c.smoothing},
              {"adapter", {{"rank", c.adapter.rank}, {"alpha", c.adapter.alpha}}}};
}

PretrainConfig pretrain_from_json(const json& j) {
  PretrainConfig c;
  c.order = j.at("order").get<int>();
  c.smoothing = j.at("smoothing").get<double>();
  c.adapter.rank = j.at("adapter").at("rank").get<int>();
  c.adapter.alpha = j.at("adapter").at("alpha").get<double>();
  return c;
}

json judge_to_json(const JudgeConfig& c) {
  return json{{"kind", c.kind},          {"n_reference", c.n_reference},   {"endpoint", c.endpoint},
              {"template_id", c.template_id}, {"timeout_ms", c.timeout_ms}, {"max_attempts", c.max_attempts},
              {"max_in_flight", c.max_in_flight}};
}

JudgeConfig judge_from_json(const json& j) {
  JudgeConfig c;
  c.kind = j.at("kind").get<std::string>();
  c.n_reference = j.value("n_reference", 500);
  c.endpoint = j.value("endpoint", std::string{});
  c.template_id = j.value("template_id", std::string{"rate-direct"});
  c.timeout_ms = j.value("timeout_ms", 30000);
  c.max_attempts = j.value("max_attempts", 3);
  c.max_in_flight = j.value("max_in_flight", 4);
  return c;
}

json eval_to_json(const EvalSuiteConfig& c) {
  return json{{"n_eval_prompts", c.n_eval_prompts}, {"n_paired", c.n_paired}, {"n_story", c.n_story},
              {"story_ending_len", c.story_ending_len}};
}

EvalSuiteConfig eval_from_json(const json& j) {
  EvalSuiteConfig c;
  c.n_eval_prompts = j.at("n_eval_prompts").get<int>();
  c.n_paired = j.at("n_paired").get<int>();
  c.n_story = j.at("n_story").get<int>();
  c.story_ending_len = j.value("story_ending_len", 12);
  return c;
}

std::string iso_timestamp() {
  const auto now = std::chrono::system_clock::now();
  const std::time_t t = std::chrono::system_clock::to_time_t(now);
  char buf[32];
  std::tm tm{};
  gmtime_r(&t, &tm);
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

std::string fmt_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace

void RunConfig::validate() const {
  try {
    world.validate();
    sampling.validate();
    thresholds.validate();
    dpo.validate();
    selector_from_string(selector);
    validate_schedule(schedule());
    if (corpus_n < 1) throw std::invalid_argument("corpus_n must be positive");
    if (prompt_target_len < 1) throw std::invalid_argument("prompt_target_len must be positive");
    if (corpus_len_range[0] < 2 * prompt_target_len)
      throw std::invalid_argument("corpus_len_range minimum must be at least twice prompt_target_len");
    if (corpus_len_range[1] < corpus_len_range[0]) throw std::invalid_argument("corpus_len_range is inverted");
    if (n_train_prompts < 1) throw std::invalid_argument("n_train_prompts must be positive");
    if (sampling.n_continuations < 2)
      throw std::invalid_argument("preference building needs at least 2 continuations per prompt");
    if (judge.kind != "oracle" && judge.kind != "http")
      throw std::invalid_argument("judge.kind must be 'oracle' or 'http'");
    if (eval.n_eval_prompts < 1 || eval.n_paired < 1 || eval.n_story < 2)
      throw std::invalid_argument("evaluation suite sizes too small");
    if (pretrain.order < 1) throw std::invalid_argument("pretrain.order must be positive");
    if (out_dir.empty()) throw std::invalid_argument("out_dir must be set");
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
}

CurriculumSchedule RunConfig::schedule() const {
  CurriculumSchedule out;
  if (curriculum.empty()) {
    out.push_back(thresholds);
    return out;
  }
  for (const auto& stage : curriculum) {
    SelectionThresholds t = thresholds;
    t.s_r = stage[0];
    t.s_c = stage[1];
    out.push_back(t);
  }
  return out;
}

json run_config_to_json(const RunConfig& cfg) {
  return json{{"seed", cfg.seed},
              {"world", world_config_to_json(cfg.world)},
              {"corpus_n", cfg.corpus_n},
              {"corpus_len_range", cfg.corpus_len_range},
              {"prompt_target_len", cfg.prompt_target_len},
              {"n_train_prompts", cfg.n_train_prompts},
              {"pretrain", pretrain_to_json(cfg.pretrain)},
              {"sampling", sampling_to_json(cfg.sampling)},
              {"thresholds", thresholds_to_json(cfg.thresholds)},
              {"selector", cfg.selector},
              {"dpo", dpo_to_json(cfg.dpo)},
              {"curriculum", cfg.curriculum},
              {"rebase_reference", cfg.rebase_reference},
              {"judge", judge_to_json(cfg.judge)},
              {"eval", eval_to_json(cfg.eval)},
              {"out_dir", cfg.out_dir}};
}

RunConfig run_config_from_json(const json& j) {
  RunConfig cfg;
  cfg.seed = j.value("seed", std::uint64_t{7});
  if (j.contains("world")) cfg.world = world_config_from_json(j.at("world"));
  cfg.corpus_n = j.value("corpus_n", cfg.corpus_n);
  if (j.contains("corpus_len_range")) cfg.corpus_len_range = j.at("corpus_len_range").get<std::array<int, 2>>();
  cfg.prompt_target_len = j.value("prompt_target_len", cfg.prompt_target_len);
  cfg.n_train_prompts = j.value("n_train_prompts", cfg.n_train_prompts);
  if (j.contains("pretrain")) cfg.pretrain = pretrain_from_json(j.at("pretrain"));
  if (j.contains("sampling")) cfg.sampling = sampling_from_json(j.at("sampling"));
  if (j.contains("thresholds")) cfg.thresholds = thresholds_from_json(j.at("thresholds"));
  cfg.selector = j.value("selector", cfg.selector);
  if (j.contains("dpo")) cfg.dpo = dpo_from_json(j.at("dpo"));
  if (j.contains("curriculum")) cfg.curriculum = j.at("curriculum").get<std::vector<std::array<int, 2>>>();
  cfg.rebase_reference = j.value("rebase_reference", false);
  if (j.contains("judge")) cfg.judge = judge_from_json(j.at("judge"));
  if (j.contains("eval")) cfg.eval = eval_from_json(j.at("eval"));
  cfg.out_dir = j.value("out_dir", cfg.out_dir);
  return cfg;
}

RunConfig load_run_config(const std::string& path) {
  try {
    return run_config_from_json(load_json(path));
  } catch (const json::exception& e) {
    throw ConfigError(std::string("bad config file: ") + e.what());
  }
}

namespace {

std::unique_ptr<Judge> build_judge(const RunConfig& cfg, const World& world, const OracleCutpoints& cuts,
                                   const std::string& out_dir) {
  if (cfg.judge.kind == "oracle") return std::make_unique<OracleJudge>(world, cuts);
  LlmJudgeConfig lc = llm_judge_config_from_env();
  if (lc.endpoint.empty()) lc.endpoint = cfg.judge.endpoint;
  if (lc.endpoint.empty()) throw JudgeEndpointError("http judge selected but no endpoint configured");
  lc.templ = judge_template_by_id(cfg.judge.template_id);
  lc.timeout_ms = cfg.judge.timeout_ms;
  lc.max_attempts = cfg.judge.max_attempts;
  lc.max_in_flight = cfg.judge.max_in_flight;
  lc.persist_path = out_dir + "/verdicts.jsonl";
  return std::make_unique<LlmJudge>(lc);
}

json report_to_json(const ContinuationReport& r) {
  return json{{"n_prompts", r.n_prompts},
              {"n_scored", r.n_scored},
              {"n_judge_failures", r.n_judge_failures},
              {"mean_judge", r.mean_judge},
              {"mean_auto_bleu", r.mean_auto_bleu},
              {"mean_ppl", r.mean_ppl},
              {"score_histogram", r.score_histogram}};
}

}  // namespace

RunResult run_pipeline(const RunConfig& cfg, bool dry_run) {
  cfg.validate();
  fs::create_directories(cfg.out_dir);
  fs::create_directories(cfg.out_dir + "/checkpoints");
  fs::create_directories(cfg.out_dir + "/metrics");

  json manifest{{"config", run_config_to_json(cfg)},
                {"config_hash", hex64(fnv1a(run_config_to_json(cfg).dump()))},
                {"started_at", iso_timestamp()},
                {"dry_run", dry_run},
                {"stages", json::array()}};
  const std::string manifest_path = cfg.out_dir + "/manifest.json";
  const auto flush_manifest = [&]() { save_json(manifest_path, manifest, 2); };

  RunResult result{cfg.out_dir, true, ""};
  if (dry_run) {
    manifest["finished_at"] = iso_timestamp();
    flush_manifest();
    return result;
  }

  const auto fail = [&](const std::string& stage, const std::string& what) {
    manifest["stages"].push_back(json{{"name", stage}, {"status", "failed"}, {"error", what}});
    manifest["finished_at"] = iso_timestamp();
    flush_manifest();
    result.ok = false;
    result.failed_stage = stage;
    return result;
  };
  const auto done = [&](const std::string& stage, json extra = json::object()) {
    extra["name"] = stage;
    extra["status"] = "ok";
    manifest["stages"].push_back(std::move(extra));
    flush_manifest();
  };

  // ---- world + corpus ----
  World world;
  Corpus corpus;
  try {
    world = generate_world(cfg.seed, cfg.world);
    save_world(world, cfg.out_dir + "/world.json");
    corpus = sample_corpus(world, cfg.corpus_n, {cfg.corpus_len_range[0], cfg.corpus_len_range[1]},
                           mix64(cfg.seed ^ 0x11), "train");
    save_corpus(corpus, cfg.out_dir + "/corpus.jsonl");
    done("world", json{{"corpus_entries", corpus.entries.size()}});
  } catch (const std::exception& e) {
    return fail("world", e.what());
  }

  // ---- prompts ----
  PromptSet train_prompts;
  std::vector<UnitSeq> eval_prompts;
  try {
    PromptSet all = segment_corpus(corpus, cfg.prompt_target_len, world.vocab());
    if (static_cast<int>(all.prompts.size()) < cfg.n_train_prompts)
      throw std::runtime_error("segmentation yielded only " + std::to_string(all.prompts.size()) +
                               " prompts; need " + std::to_string(cfg.n_train_prompts));
    train_prompts.ids.assign(all.ids.begin(), all.ids.begin() + cfg.n_train_prompts);
    train_prompts.prompts.assign(all.prompts.begin(), all.prompts.begin() + cfg.n_train_prompts);
    train_prompts.references.assign(all.references.begin(), all.references.begin() + cfg.n_train_prompts);
    train_prompts.segment_rejects = all.segment_rejects;

    const Corpus eval_corpus = sample_corpus(world, cfg.eval.n_eval_prompts * 3,
                                             {cfg.corpus_len_range[0], cfg.corpus_len_range[1]},
                                             mix64(cfg.seed ^ 0x12), "eval");
    const PromptSet eval_set = segment_corpus(eval_corpus, cfg.prompt_target_len, world.vocab());
    if (static_cast<int>(eval_set.prompts.size()) < cfg.eval.n_eval_prompts)
      throw std::runtime_error("not enough eval prompts after segmentation");
    eval_prompts.assign(eval_set.prompts.begin(), eval_set.prompts.begin() + cfg.eval.n_eval_prompts);
    done("segment", json{{"train_prompts", train_prompts.prompts.size()},
                         {"eval_prompts", eval_prompts.size()},
                         {"segment_rejects", train_prompts.segment_rejects}});
  } catch (const std::exception& e) {
    return fail("segment", e.what());
  }

  // ---- pretrain ----
  PolicyModel pretrained;
  try {
    pretrained = mle_pretrain(corpus, world.vocab(), cfg.pretrain);
    CheckpointMeta meta;
    meta.seed = cfg.seed;
    meta.corpus_id = cfg.out_dir + "/corpus.jsonl";
    save_checkpoint(pretrained, cfg.out_dir + "/checkpoints/pretrained.json", meta);
    done("pretrain");
  } catch (const std::exception& e) {
    return fail("pretrain", e.what());
  }

  // ---- judge ----
  OracleCutpoints cuts;
  std::unique_ptr<Judge> judge;
  try {
    OracleCalibration cal;
    cal.n_reference = cfg.judge.n_reference;
    cal.prompt_target_len = cfg.prompt_target_len;
    cal.len_range = {cfg.corpus_len_range[0], cfg.corpus_len_range[1]};
    cuts = calibrate_oracle(world, cal, mix64(cfg.seed ^ 0x13));
    judge = build_judge(cfg, world, cuts, cfg.out_dir);
    done("judge", json{{"judge_id", judge->id()},
                       {"cutpoints", std::vector<double>(cuts.c.begin(), cuts.c.end())}});
  } catch (const JudgeEndpointError&) {
    fail("judge", "judge endpoint unavailable");
    throw;
  } catch (const std::exception& e) {
    return fail("judge", e.what());
  }

  // ---- evaluation suites (shared across iterations) ----
  std::vector<PairedItem> nonword_items, syntax_items;
  std::vector<StoryItem> story_items;
  SamplingConfig eval_sampling = cfg.sampling;
  try {
    nonword_items = make_paired_suite(world, cfg.eval.n_paired, PairedKind::nonword, mix64(cfg.seed ^ 0x14));
    syntax_items = make_paired_suite(world, cfg.eval.n_paired, PairedKind::syntax, mix64(cfg.seed ^ 0x15));
    story_items = make_story_suite(world, cfg.eval.n_story, mix64(cfg.seed ^ 0x16), cfg.prompt_target_len,
                                   cfg.eval.story_ending_len);
    done("suites");
  } catch (const std::exception& e) {
    return fail("suites", e.what());
  }

  const std::uint64_t eval_seed = mix64(cfg.seed ^ 0x17);
  const auto evaluate_policy = [&](const PolicyModel& policy) {
    const ContinuationReport rep =
        eval_continuation(policy, *judge, eval_prompts, world, eval_sampling, eval_seed);
    json j = report_to_json(rep);
    j["nonword_acc"] = eval_paired(policy, nonword_items);
    j["syntax_acc"] = eval_paired(policy, syntax_items);
    j["story_acc"] = eval_story(policy, story_items);
    return j;
  };

  // ---- baseline metrics ----
  try {
    json base_eval = evaluate_policy(pretrained);
    base_eval["label"] = "pretrained";
    save_json(cfg.out_dir + "/metrics/pretrained.json", base_eval, 2);
    done("eval-pretrained");
  } catch (const std::exception& e) {
    return fail("eval-pretrained", e.what());
  }

  // ---- align (single round or curriculum) ----
  CurriculumResult curriculum;
  try {
    curriculum = run_curriculum(pretrained, train_prompts, world, cfg.schedule(), cfg.sampling, *judge, cfg.dpo,
                                selector_from_string(cfg.selector), cfg.seed, evaluate_policy,
                                cfg.rebase_reference);
    for (std::size_t k = 0; k < curriculum.iterations.size(); ++k) {
      auto& iter = curriculum.iterations[k];
      const std::string tag = "iter_" + std::to_string(k + 1);
      const std::string iter_dir = cfg.out_dir + "/" + tag;
      fs::create_directories(iter_dir);
      PreferenceDataset ds;
      ds.pairs = iter.pairs;
      ds.stats = iter.yield;
      save_preference_dataset(ds, iter_dir + "/prefs.jsonl", iter_dir + "/yield.json");
      save_history_csv(iter.history, iter_dir + "/history.csv");
      CheckpointMeta meta;
      meta.seed = cfg.seed;
      meta.corpus_id = cfg.out_dir + "/corpus.jsonl";
      save_checkpoint(iter.policy, cfg.out_dir + "/checkpoints/" + tag + ".json", meta);
      json m = iter.eval;
      m["label"] = tag;
      m["thresholds"] = thresholds_to_json(iter.thresholds);
      m["yield"] = json{{"prompts_in", iter.yield.prompts_in},
                        {"pairs_out", iter.yield.pairs_out},
                        {"reject_reasons", iter.yield.reject_reasons},
                        {"judge_failures", iter.yield.judge_failures}};
      m["dev_reward_accuracy"] = iter.dev_reward_accuracy;
      m["best_step"] = iter.best_step;
      save_json(cfg.out_dir + "/metrics/" + tag + ".json", m, 2);
    }
    if (!curriculum.completed) return fail("align", curriculum.stop_reason);
    done("align", json{{"iterations", curriculum.iterations.size()}});
  } catch (const std::exception& e) {
    return fail("align", e.what());
  }

  // ---- report ----
  try {
    emit_report(cfg.out_dir);
    done("report");
  } catch (const std::exception& e) {
    return fail("report", e.what());
  }

  manifest["finished_at"] = iso_timestamp();
  flush_manifest();
  return result;
}

void emit_report(const std::string& run_dir) {
  const fs::path metrics_dir = fs::path(run_dir) / "metrics";
  if (!fs::exists(metrics_dir)) throw std::runtime_error("no metrics directory under " + run_dir);

  std::vector<std::string> labels{"pretrained"};
  for (int k = 1;; ++k) {
    const fs::path p = metrics_dir / ("iter_" + std::to_string(k) + ".json");
    if (!fs::exists(p)) break;
    labels.push_back("iter_" + std::to_string(k));
  }

  std::string csv =
      "label,mean_judge,mean_auto_bleu,mean_ppl,nonword_acc,syntax_acc,story_acc,dev_reward_acc,pairs_out,"
      "judge_failures\n";
  std::string hist_csv = "label,score,count\n";
  for (const auto& label : labels) {
    const json m = load_json((metrics_dir / (label + ".json")).string());
    csv += label;
    csv += ',' + fmt_double(m.at("mean_judge").get<double>());
    csv += ',' + fmt_double(m.at("mean_auto_bleu").get<double>());
    csv += ',' + fmt_double(m.at("mean_ppl").get<double>());
    csv += ',' + fmt_double(m.at("nonword_acc").get<double>());
    csv += ',' + fmt_double(m.at("syntax_acc").get<double>());
    csv += ',' + fmt_double(m.at("story_acc").get<double>());
    csv += ',';
    csv += m.contains("dev_reward_accuracy") ? fmt_double(m.at("dev_reward_accuracy").get<double>()) : "";
    csv += ',';
    csv += m.contains("yield") ? std::to_string(m.at("yield").at("pairs_out").get<int>()) : "";
    csv += ',' + std::to_string(m.at("n_judge_failures").get<int>());
    csv += '\n';

    const auto hist = m.at("score_histogram").get<std::array<int, 5>>();
    for (int s = 1; s <= 5; ++s)
      hist_csv += label + ',' + std::to_string(s) + ',' + std::to_string(hist[static_cast<std::size_t>(s - 1)]) + '\n';
  }
  write_text_file(run_dir + "/metrics.csv", csv);
  write_text_file(run_dir + "/score_hist.csv", hist_csv);
}

}  // namespace ualign
