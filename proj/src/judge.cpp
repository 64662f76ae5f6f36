#include "ualign/judge.hpp"

#include <httplib.h>

#include <algorithm>
#include <atomic>
#include <cctype>
#include <chrono>
#include <cstdlib>
#include <fstream>
#include <limits>
#include <mutex>
#include <stdexcept>
#include <thread>

#include "ualign/sampler.hpp"
#include "ualign/serde.hpp"

namespace ualign {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();
constexpr const char* kPromptSlot = "[text_prompt]";
constexpr const char* kContinuationSlot = "[generated_transcription]";

std::size_t count_occurrences(const std::string& haystack, const std::string& needle) {
  std::size_t n = 0;
  for (std::size_t pos = haystack.find(needle); pos != std::string::npos; pos = haystack.find(needle, pos + 1)) ++n;
  return n;
}

std::string replace_once(std::string s, const std::string& slot, const std::string& value) {
  const std::size_t pos = s.find(slot);
  if (pos != std::string::npos) s.replace(pos, slot.size(), value);
  return s;
}

}  // namespace

const char* judge_failure_name(JudgeFailureKind k) {
  switch (k) {
    case JudgeFailureKind::transport: return "transport";
    case JudgeFailureKind::timeout: return "timeout";
    case JudgeFailureKind::parse: return "parse";
  }
  return "unknown";
}

void JudgeTemplate::validate() const {
  if (template_id.empty()) throw std::invalid_argument("judge template needs an id");
  if (count_occurrences(instruction, kPromptSlot) != 1)
    throw std::invalid_argument("template must contain [text_prompt] exactly once");
  if (count_occurrences(instruction, kContinuationSlot) != 1)
    throw std::invalid_argument("template must contain [generated_transcription] exactly once");
}

std::string JudgeTemplate::render(const std::string& prompt_text, const std::string& continuation_text) const {
  return replace_once(replace_once(instruction, kPromptSlot, prompt_text), kContinuationSlot, continuation_text);
}

JudgeTemplate rate_template() {
  JudgeTemplate t;
  t.template_id = "rate-direct";
  t.instruction =
      "Rate the text continuation based on how likelihood is the text continuation given the text "
      "prompt. You should also consider whether the meaning of the text continuation is making sense. "
      "Don't be too strict. The text prompt is [text_prompt], and the text continuation is "
      "[generated_transcription].\n"
      "You must give an overall rating from 1 to 5. The rating guideline is \n"
      "1: Very Unlikely and Irrelevant; \n"
      "2: Unlikely and Marginally Relevant; \n"
      "3: Moderately Likely and Relevant; \n"
      "4: Likely and Relevant; \n"
      "5: Very Likely and Highly Relevant. \n"
      "Output format is: I would rate the score as [NUMBER]";
  return t;
}

JudgeTemplate analyze_then_rate_template() {
  JudgeTemplate t;
  t.template_id = "analyze-then-rate";
  t.instruction =
      "The task is evaluating the relevance and likelihood of the predicted text continuation, given "
      "the text prompt. You should also consider whether the meaning of the text continuation is "
      "making sense. The text prompt is: [text_prompt], and the text continuation is "
      ":[generated_transcription].\n\n"
      "You must give an overall rating from 1 to 5. The rating guideline is as below: \n"
      "1: The text continuation is very unlikely and irrelevant to the text prompt.\n"
      "2: The text continuation is unlikely and marginally relevant to the text prompt.\n"
      "3: The text continuation is moderately likely and relevant to the text prompt.\n"
      "4: The text continuation is likely and relevant to the text prompt.\n"
      "5: The text continuation is very likely and highly relevant. \n"
      "You should take the following steps to provide the score: \n"
      "First: briefly analyze the sample with the above definition. \n"
      "Second: MUST follow the output format as: I would rate the score as _";
  return t;
}

JudgeTemplate judge_template_by_id(const std::string& template_id) {
  if (template_id == "rate-direct") return rate_template();
  if (template_id == "analyze-then-rate") return analyze_then_rate_template();
  throw std::invalid_argument("unknown judge template: " + template_id);
}

std::optional<int> parse_judge_score(const std::string& response, const std::string& answer_phrase) {
  const std::size_t at = response.find(answer_phrase);
  if (at == std::string::npos) return std::nullopt;
  std::size_t i = at + answer_phrase.size();
  while (i < response.size() && !std::isdigit(static_cast<unsigned char>(response[i]))) ++i;
  if (i >= response.size()) return std::nullopt;
  long value = 0;
  while (i < response.size() && std::isdigit(static_cast<unsigned char>(response[i]))) {
    value = value * 10 + (response[i] - '0');
    if (value > 1000000) break;
    ++i;
  }
  if (value < 1 || value > 5) return std::nullopt;
  return static_cast<int>(value);
}

double oracle_mean_log_prob(const World& world, const UnitSeq& prompt, const UnitSeq& continuation) {
  UnitSeq effective = continuation;
  const auto eos_at = std::find(effective.begin(), effective.end(), world.vocab().eos_unit);
  effective.erase(eos_at, effective.end());
  if (effective.empty()) return kNegInf;
  return world_log_prob(world, prompt, effective) / static_cast<double>(effective.size());
}

OracleCutpoints calibrate_oracle(const World& world, const OracleCalibration& cal, std::uint64_t seed) {
  if (cal.n_reference < 100) throw std::invalid_argument("oracle calibration needs at least 100 references");

  std::vector<double> mlps;
  mlps.reserve(static_cast<std::size_t>(cal.n_reference));
  int draw = 0;
  const int max_draws = cal.n_reference * 50;
  while (static_cast<int>(mlps.size()) < cal.n_reference) {
    if (++draw > max_draws) throw std::runtime_error("oracle calibration could not collect enough references");
    Rng rng = Rng::substream(seed, {0x0c, static_cast<std::uint64_t>(draw)});
    const UnitSeq seq = sample_sequence(world, rng, cal.len_range.second);
    const int len = static_cast<int>(seq.size());
    if (len < cal.len_range.first || seq.empty() || seq.back() != world.vocab().eos_unit) continue;
    const auto seg = segment_prompt(seq, cal.prompt_target_len, world.vocab());
    if (!std::holds_alternative<Segmented>(seg)) continue;
    const auto& s = std::get<Segmented>(seg);
    mlps.push_back(oracle_mean_log_prob(world, s.prompt, s.continuation));
  }

  std::sort(mlps.begin(), mlps.end());
  const auto at = [&](double q) {
    const std::size_t idx = static_cast<std::size_t>(q * static_cast<double>(mlps.size()));
    return mlps[std::min(idx, mlps.size() - 1)];
  };
  OracleCutpoints cuts{{at(0.10), at(0.40), at(0.70), at(0.90)}};
  for (int i = 0; i + 1 < 4; ++i) {
    if (!(cuts.c[static_cast<std::size_t>(i)] < cuts.c[static_cast<std::size_t>(i + 1)]))
      throw std::runtime_error("degenerate oracle calibration: cut-points are not strictly increasing");
  }
  return cuts;
}

int bucket_score(double mean_lp, const OracleCutpoints& cuts) {
  int score = 1;
  for (double c : cuts.c) {
    if (mean_lp >= c) ++score;
  }
  return score;
}

JudgeVerdict oracle_judge(const World& world, const OracleCutpoints& cuts, const UnitSeq& prompt,
                          const UnitSeq& continuation) {
  const double mlp = oracle_mean_log_prob(world, prompt, continuation);
  JudgeVerdict v;
  v.score = bucket_score(mlp, cuts);
  v.judge_id = "oracle";
  v.raw_response = "I would rate the score as " + std::to_string(v.score) +
                   " (mean_log_prob=" + std::to_string(mlp) + ")";
  return v;
}

JudgeResult OracleJudge::score(const std::string& prompt_text, const std::string& continuation_text) {
  UnitSeq prompt;
  for (const auto& run : invert_tokens(split_tokens(prompt_text), *world_)) {
    if (!run) continue;  // prompts come from real data; skip stray unknowns
    prompt.insert(prompt.end(), run->begin(), run->end());
    prompt.push_back(world_->vocab().boundary_unit);
  }

  const auto tokens = split_tokens(continuation_text);
  const auto runs = invert_tokens(tokens, *world_);
  UnitSeq continuation;
  bool unknown = false;
  for (std::size_t i = 0; i < runs.size(); ++i) {
    if (!runs[i]) {
      unknown = true;
      break;
    }
    if (i > 0) continuation.push_back(world_->vocab().boundary_unit);
    continuation.insert(continuation.end(), runs[i]->begin(), runs[i]->end());
  }

  JudgeVerdict v;
  if (unknown || continuation.empty()) {
    // Out-of-lexicon words read as junk; floor the score.
    v.score = 1;
    v.judge_id = id();
    v.raw_response = "I would rate the score as 1 (out-of-lexicon continuation)";
    return v;
  }
  v = oracle_judge(*world_, cuts_, prompt, continuation);
  return v;
}

LlmJudgeConfig llm_judge_config_from_env() {
  LlmJudgeConfig cfg;
  if (const char* ep = std::getenv("UALIGN_JUDGE_ENDPOINT")) cfg.endpoint = ep;
  if (const char* tok = std::getenv("UALIGN_JUDGE_TOKEN")) cfg.auth_token = tok;
  return cfg;
}

namespace {

struct ParsedEndpoint {
  std::string host;
  int port = 80;
  std::string path = "/";
};

ParsedEndpoint parse_endpoint(const std::string& endpoint) {
  std::string rest = endpoint;
  const std::string scheme = "http://";
  if (rest.rfind(scheme, 0) == 0) rest = rest.substr(scheme.size());
  ParsedEndpoint out;
  const std::size_t slash = rest.find('/');
  std::string hostport = slash == std::string::npos ? rest : rest.substr(0, slash);
  out.path = slash == std::string::npos ? "/" : rest.substr(slash);
  const std::size_t colon = hostport.find(':');
  if (colon == std::string::npos) {
    out.host = hostport;
  } else {
    out.host = hostport.substr(0, colon);
    out.port = std::atoi(hostport.c_str() + colon + 1);
  }
  if (out.host.empty() || out.port <= 0) throw std::invalid_argument("bad judge endpoint: " + endpoint);
  return out;
}

std::mutex persist_mutex;

void persist_verdict(const std::string& path, const json& record) {
  if (path.empty()) return;
  std::lock_guard<std::mutex> lock(persist_mutex);
  std::ofstream out(path, std::ios::app | std::ios::binary);
  if (out) out << record.dump() << '\n';
}

}  // namespace

JudgeResult llm_judge(const LlmJudgeConfig& cfg, const std::string& prompt_text,
                      const std::string& continuation_text) {
  cfg.templ.validate();
  if (cfg.endpoint.empty())
    return JudgeFailure{JudgeFailureKind::transport, "no judge endpoint configured"};
  if (prompt_text.empty() || continuation_text.empty())
    return JudgeFailure{JudgeFailureKind::transport, "empty prompt or continuation"};

  const ParsedEndpoint ep = parse_endpoint(cfg.endpoint);
  const json body{{"template_id", cfg.templ.template_id},
                  {"prompt", prompt_text},
                  {"continuation", continuation_text},
                  {"rendered_instruction", cfg.templ.render(prompt_text, continuation_text)}};
  const std::string payload = body.dump();

  JudgeFailure last{JudgeFailureKind::transport, "no attempts made"};
  for (int attempt = 0; attempt < std::max(1, cfg.max_attempts); ++attempt) {
    if (attempt > 0)
      std::this_thread::sleep_for(std::chrono::milliseconds(static_cast<long>(cfg.backoff_ms) << (attempt - 1)));

    httplib::Client client(ep.host, ep.port);
    client.set_connection_timeout(0, cfg.timeout_ms * 1000LL);
    client.set_read_timeout(cfg.timeout_ms / 1000, (cfg.timeout_ms % 1000) * 1000LL);
    httplib::Headers headers;
    if (!cfg.auth_token.empty()) headers.emplace("Authorization", "Bearer " + cfg.auth_token);

    const auto started = std::chrono::steady_clock::now();
    httplib::Result res = client.Post(ep.path, headers, payload, "application/json");
    const auto latency =
        std::chrono::duration_cast<std::chrono::milliseconds>(std::chrono::steady_clock::now() - started);

    if (!res) {
      const bool timed_out = res.error() == httplib::Error::ConnectionTimeout || res.error() == httplib::Error::Read;
      last = JudgeFailure{timed_out ? JudgeFailureKind::timeout : JudgeFailureKind::transport,
                          httplib::to_string(res.error())};
      continue;
    }
    if (res->status < 200 || res->status >= 300) {
      last = JudgeFailure{JudgeFailureKind::transport, "http status " + std::to_string(res->status)};
      continue;
    }
    const std::optional<int> score = parse_judge_score(res->body, cfg.templ.answer_phrase);
    if (!score) {
      last = JudgeFailure{JudgeFailureKind::parse, "no score 1-5 after answer phrase"};
      persist_verdict(cfg.persist_path, json{{"judge_id", "llm:" + cfg.templ.template_id},
                                             {"template_id", cfg.templ.template_id},
                                             {"prompt", prompt_text},
                                             {"continuation", continuation_text},
                                             {"score", nullptr},
                                             {"raw_response", res->body},
                                             {"latency_ms", latency.count()}});
      continue;
    }
    JudgeVerdict v;
    v.score = *score;
    v.raw_response = res->body;
    v.latency = latency;
    v.judge_id = "llm:" + cfg.templ.template_id;
    persist_verdict(cfg.persist_path, json{{"judge_id", v.judge_id},
                                           {"template_id", cfg.templ.template_id},
                                           {"prompt", prompt_text},
                                           {"continuation", continuation_text},
                                           {"score", v.score},
                                           {"raw_response", v.raw_response},
                                           {"latency_ms", latency.count()}});
    return v;
  }
  return last;
}

std::vector<JudgeResult> score_batch(Judge& judge,
                                     const std::vector<std::pair<std::string, std::string>>& items,
                                     int max_in_flight) {
  std::vector<JudgeResult> results(items.size(), JudgeFailure{JudgeFailureKind::transport, "not attempted"});
  if (items.empty()) return results;
  const int workers = std::max(1, std::min<int>(max_in_flight, static_cast<int>(items.size())));
  std::atomic<std::size_t> next{0};
  std::vector<std::thread> pool;
  pool.reserve(static_cast<std::size_t>(workers));
  for (int w = 0; w < workers; ++w) {
    pool.emplace_back([&]() {
      for (;;) {
        const std::size_t i = next.fetch_add(1);
        if (i >= items.size()) return;
        results[i] = judge.score(items[i].first, items[i].second);
      }
    });
  }
  for (auto& t : pool) t.join();
  return results;
}

}  // namespace ualign
