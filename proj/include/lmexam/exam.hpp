#pragma once

#include <algorithm>
#include <atomic>
#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <regex>
#include <set>
#include <string>
#include <thread>
#include <unordered_set>
#include <vector>

#include <json.hpp>

#include "lmexam/error.hpp"
#include "lmexam/grading.hpp"
#include "lmexam/prompts.hpp"
#include "lmexam/provider.hpp"
#include "lmexam/records.hpp"
#include "lmexam/store.hpp"
#include "lmexam/taxonomy.hpp"
#include "lmexam/util.hpp"

namespace lmexam {

// ---------------------------------------------------------------------------
// Cognitive level

namespace detail {

inline bool has_word(const std::string& lower, std::string_view word) {
  std::size_t pos = 0;
  while ((pos = lower.find(word, pos)) != std::string::npos) {
    const bool left_ok = pos == 0 || !std::isalpha(static_cast<unsigned char>(lower[pos - 1]));
    if (left_ok) return true;
    pos += 1;
  }
  return false;
}

inline const std::vector<std::string_view>& interrogatives() {
  static const std::vector<std::string_view> words{"what", "which", "when", "where", "who", "whom",
                                                   "whose", "why", "how"};
  return words;
}

/// First interrogative word of the question, lowercase; empty if none.
inline std::string leading_interrogative(const std::string& lower) {
  for (auto w : split_whitespace(lower)) {
    std::string token;
    for (char c : w)
      if (std::isalpha(static_cast<unsigned char>(c)) || c == '\'') token.push_back(c);
    for (auto q : interrogatives())
      if (token == q || token == std::string(q) + "'s") return std::string(q);
  }
  return {};
}

}  // namespace detail

/// Rule cascade:
///   1. analysis: impact / comparison / advantages-disadvantages / short- and
///      long-term cues, or a compound question ("..., and what/how ...").
///      A leading "How does/do" keeps a compound question in comprehension.
///   2. memorization: which/when/where/who, or "what is the name"-style
///      single-entity lookups.
///   3. comprehension otherwise.
inline CognitiveLevel classify_cognitive_level(std::string_view text) {
  const std::string s = to_lower(normalize_whitespace(text));

  static const std::vector<std::string_view> analysis_cues{
      "impact",         "compare",       "comparison",      "compared to",   "compared with",
      "advantages",     "disadvantages", "pros and cons",   "benefits and drawbacks",
      "drawbacks",      "trade-off",     "tradeoff",        "long-term",     "short-term",
      "differences between", "difference between", "differ from", "versus",  " vs"};
  for (auto cue : analysis_cues)
    if (detail::has_word(s, cue)) return CognitiveLevel::analysis;

  static const std::regex compound(R"(\b(what|which|how|why|when|where|who)\b.*\band (what|how|why|which)\b)");
  static const std::regex how_does(R"(^\s*(in [^,]*,\s*)?how (does|do)\b)");
  if (std::regex_search(s, compound) && !std::regex_search(s, how_does)) return CognitiveLevel::analysis;

  const auto lead = detail::leading_interrogative(s);
  if (lead == "which" || lead == "when" || lead == "where" || lead == "who" || lead == "whom" || lead == "whose")
    return CognitiveLevel::memorization;
  static const std::regex entity_lookup(
      R"(\bwhat (is|was|are|were) the (name|names|term|title|capital|date|year)\b|\bwhat (year|date|day|century)\b|\bhow many\b)");
  if (std::regex_search(s, entity_lookup)) return CognitiveLevel::memorization;

  return CognitiveLevel::comprehension;
}

// ---------------------------------------------------------------------------
// Examinees and answers

/// Zero-shot prompt family of a foundation model.
enum class AnswerFamily { bloomz, flan_ul2, flan_t5, glm, llama };

inline std::optional<AnswerFamily> parse_answer_family(std::string_view s) {
  if (s == "bloomz") return AnswerFamily::bloomz;
  if (s == "flan-ul2" || s == "flan_ul2") return AnswerFamily::flan_ul2;
  if (s == "flan-t5" || s == "flan_t5") return AnswerFamily::flan_t5;
  if (s == "glm" || s == "glm-130b") return AnswerFamily::glm;
  if (s == "llama") return AnswerFamily::llama;
  if (s.empty()) return std::nullopt;
  fail(Errc::ConfigError, "unknown answer family '" + std::string(s) + "'");
}

inline std::string_view to_string(AnswerFamily f) {
  switch (f) {
    case AnswerFamily::bloomz: return "bloomz";
    case AnswerFamily::flan_ul2: return "flan-ul2";
    case AnswerFamily::flan_t5: return "flan-t5";
    case AnswerFamily::glm: return "glm";
    case AnswerFamily::llama: return "llama";
  }
  return "?";
}

inline PromptName zero_shot_template(AnswerFamily f) {
  switch (f) {
    case AnswerFamily::bloomz: return PromptName::answer_0shot_bloomz;
    case AnswerFamily::flan_ul2: return PromptName::answer_0shot_flan_ul2;
    case AnswerFamily::flan_t5: return PromptName::answer_0shot_flan_t5;
    case AnswerFamily::glm: return PromptName::answer_0shot_glm;
    case AnswerFamily::llama: return PromptName::answer_0shot_llama;
  }
  return PromptName::answer_0shot_bloomz;
}

/// GLM and LLaMA generations end at their first line break.
inline bool stops_at_line_break(std::optional<AnswerFamily> f) {
  return f == AnswerFamily::glm || f == AnswerFamily::llama;
}

struct Examinee {
  std::string model;
  ShotMode shot_mode = ShotMode::native;
  std::optional<AnswerFamily> family;

  std::string label() const { return examinee_label(model, shot_mode); }
};

/// Prompt sent to an examinee: the family template, the shared 5-shot
/// prompt, or the bare question for fine-tuned (native) models.
inline std::string answer_prompt(const Examinee& who, const Question& question) {
  switch (who.shot_mode) {
    case ShotMode::native: return question.text;
    case ShotMode::five_shot: return render(PromptName::answer_5shot_shared, {{"Question", question.text}});
    case ShotMode::zero_shot:
      if (!who.family) fail(Errc::MissingTemplate, who.model + " has no zero-shot answer template");
      return render(zero_shot_template(*who.family), {{"Question", question.text}});
  }
  return question.text;
}

inline Response collect_answer(Provider& provider, const Examinee& who, const Question& question) {
  const auto completion = provider.complete(answer_prompt(who, question));
  Response r;
  r.question_id = question.id;
  r.examinee = who.model;
  r.shot_mode = who.shot_mode;
  r.id = response_id(question.id, who.model, who.shot_mode);

  std::string_view text = completion.text;
  if (stops_at_line_break(who.family) && who.shot_mode != ShotMode::native) {
    // Leading whitespace is not a stop point.
    auto body = text.find_first_not_of(" \t\r\n");
    if (body != std::string_view::npos) {
      auto nl = text.find('\n', body);
      if (nl != std::string_view::npos) {
        text = text.substr(0, nl);
        r.truncated = true;
      }
    }
  }
  text = trim(text);
  auto [capped, cut] = split_whitespace(text).size() > static_cast<std::size_t>(provider.config().max_output_tokens)
                           ? std::pair{std::string(), true}
                           : std::pair{std::string(text), false};
  if (cut) {
    auto words = split_whitespace(text);
    words.resize(static_cast<std::size_t>(provider.config().max_output_tokens));
    for (std::size_t i = 0; i < words.size(); ++i) {
      if (i) capped.push_back(' ');
      capped.append(words[i]);
    }
    r.truncated = true;
  }
  r.text = std::move(capped);
  return r;
}

// ---------------------------------------------------------------------------
// Question generation

/// Breadth questions for one domain. `templ` is question_gen for centralized
/// exams and peer_question_gen for peer-examination.
inline std::vector<Question> generate_questions(Provider& examiner, const DomainPath& domain, std::size_t m,
                                                PromptName templ = PromptName::question_gen) {
  require(m >= 1, "generate_questions: m must be >= 1");
  const auto prompt = render(templ, {{"Domain", domain.display()}}, static_cast<int>(m));
  const auto reply = examiner.complete(prompt);
  std::vector<std::string> items;
  try {
    items = parse_numbered_list(reply.text, m);
  } catch (const Error& e) {
    fail(Errc::GenerationParseFailure, domain.display() + ": " + e.what());
  }
  std::unordered_set<std::string> seen;
  std::vector<Question> out;
  for (auto& text : items) {
    if (!seen.insert(to_lower(normalize_whitespace(text))).second)
      fail(Errc::DuplicateQuestion, domain.display() + ": duplicate question '" + text + "'");
    Question q;
    q.examiner = examiner.model_id();
    q.domain = domain;
    q.text = std::move(text);
    q.round = 1;
    q.level = classify_cognitive_level(q.text);
    q.id = question_id(q.domain, 1, q.text);
    out.push_back(std::move(q));
  }
  return out;
}

inline std::string generate_groundtruth(Provider& examiner, const Question& question) {
  require(question.round == 1, "ground truth is generated for round-1 questions only");
  auto reply = examiner.complete(render(PromptName::groundtruth_answer, {{"Question", question.text}}));
  auto text = std::string(trim(reply.text));
  if (text.empty()) fail(Errc::EmptyGroundtruth, "examiner returned an empty answer to its own question " + question.id);
  return text;
}

/// Full-mark answers (overall = 5), then a seeded sample of at most `sample`.
/// Selected responses keep their input order.
inline std::vector<Response> select_followup_candidates(std::span<const std::pair<Response, ScoreCard>> graded,
                                                        std::size_t sample, std::uint64_t seed) {
  std::vector<const Response*> full;
  for (const auto& [r, card] : graded)
    if (card.full_mark()) full.push_back(&r);
  auto picks = sample_indices(full.size(), std::min(sample, full.size()), seed);
  std::sort(picks.begin(), picks.end());
  std::vector<Response> out;
  for (auto i : picks) out.push_back(*full[i]);
  return out;
}

/// Follow-up probing `answer`. Only the new question text goes to the
/// examinee later; the exam history is never replayed to it.
inline Question generate_followup(Provider& examiner, const Question& parent, const Response& answer, int rounds_k) {
  require(parent.round < rounds_k, "generate_followup: parent is already at the final round");
  require(answer.question_id == parent.id, "generate_followup: answer belongs to another question");
  const auto prompt = render(PromptName::followup_gen,
                             {{"Previous round question", parent.text}, {"Previous round response", answer.text}});
  Question q;
  q.examiner = examiner.model_id();
  q.domain = parent.domain;
  q.text = parse_followup(examiner.complete(prompt).text);
  q.round = parent.round + 1;
  q.parent_id = parent.id;
  q.parent_response_id = answer.id;
  q.examinee = answer.examinee;
  q.level = classify_cognitive_level(q.text);
  q.id = question_id(q.domain, q.round, q.text, answer.id);
  return q;
}

// ---------------------------------------------------------------------------
// Model registry

/// Providers by model id.
class ModelPool {
 public:
  void add(std::shared_ptr<Provider> p) {
    const auto id = p->model_id();
    if (!providers_.emplace(id, std::move(p)).second) fail(Errc::ConfigError, "provider '" + id + "' defined twice");
  }

  Provider& get(const std::string& model) const {
    auto it = providers_.find(model);
    if (it == providers_.end()) fail(Errc::ConfigError, "no provider configured for model '" + model + "'");
    return *it->second;
  }

  bool has(const std::string& model) const { return providers_.count(model) > 0; }

  std::size_t total_dispatched() const {
    std::size_t n = 0;
    for (const auto& [id, p] : providers_) n += p->dispatched();
    return n;
  }

  std::size_t size() const { return providers_.size(); }

 private:
  std::map<std::string, std::shared_ptr<Provider>> providers_;
};

// ---------------------------------------------------------------------------
// Session orchestration

struct ExamConfig {
  std::string examiner;
  std::vector<Examinee> examinees;
  std::size_t n_domains = 0;
  std::size_t m_per_domain = 10;
  int rounds_k = 2;
  std::size_t followup_sample = 1000;
  std::uint64_t seed = 0;
  bool groundtruth = true;
  bool rank = true;
  std::optional<std::size_t> examiner_truncation;
  std::size_t parallelism = 1;

  void validate() const {
    if (examiner.empty()) fail(Errc::ConfigError, "exam config needs an examiner");
    if (examinees.empty()) fail(Errc::ConfigError, "exam config needs at least one examinee");
    if (rounds_k < 1) fail(Errc::ConfigError, "rounds_k must be >= 1");
    if (m_per_domain < 1) fail(Errc::ConfigError, "m_per_domain must be >= 1");
    std::set<std::string> labels;
    for (const auto& e : examinees)
      if (!labels.insert(e.label()).second) fail(Errc::ConfigError, "examinee '" + e.label() + "' listed twice");
  }
};

inline void to_json(nlohmann::json& j, const Examinee& e) {
  j = {{"model", e.model}, {"shot_mode", to_string(e.shot_mode)}};
  if (e.family) j["family"] = to_string(*e.family);
}

inline void from_json(const nlohmann::json& j, Examinee& e) {
  j.at("model").get_to(e.model);
  e.shot_mode = parse_shot_mode(j.value("shot_mode", std::string("native")));
  e.family = parse_answer_family(j.value("family", std::string{}));
}

inline void to_json(nlohmann::json& j, const ExamConfig& c) {
  j = {{"examiner", c.examiner},           {"examinees", c.examinees}, {"n_domains", c.n_domains},
       {"m_per_domain", c.m_per_domain},   {"rounds_k", c.rounds_k},   {"followup_sample", c.followup_sample},
       {"seed", c.seed},                   {"groundtruth", c.groundtruth}, {"rank", c.rank}};
  if (c.examiner_truncation) j["examiner_truncation"] = *c.examiner_truncation;
}

inline void from_json(const nlohmann::json& j, ExamConfig& c) {
  j.at("examiner").get_to(c.examiner);
  j.at("examinees").get_to(c.examinees);
  j.at("n_domains").get_to(c.n_domains);
  c.m_per_domain = j.value("m_per_domain", std::size_t{10});
  c.rounds_k = j.value("rounds_k", 2);
  c.followup_sample = j.value("followup_sample", std::size_t{1000});
  c.seed = j.value("seed", std::uint64_t{0});
  c.groundtruth = j.value("groundtruth", true);
  c.rank = j.value("rank", true);
  if (j.contains("examiner_truncation") && !j["examiner_truncation"].is_null())
    c.examiner_truncation = j["examiner_truncation"].get<std::size_t>();
  c.parallelism = j.value("parallelism", std::size_t{1});
}

/// Runs `fn(i)` for i in [0, n) on up to `workers` threads. Exceptions are
/// captured per task and returned (empty string = success).
template <typename Fn>
std::vector<std::string> parallel_for(std::size_t n, std::size_t workers, Fn&& fn) {
  std::vector<std::string> errors(n);
  auto run = [&](std::size_t i) {
    try {
      fn(i);
    } catch (const SimulatedCrash&) {
      throw;
    } catch (const std::exception& e) {
      errors[i] = e.what();
      if (errors[i].empty()) errors[i] = "unknown error";
    }
  };
  workers = std::max<std::size_t>(1, std::min(workers, n));
  if (workers == 1) {
    for (std::size_t i = 0; i < n; ++i) run(i);
    return errors;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::jthread> pool;
  for (std::size_t w = 0; w < workers; ++w)
    pool.emplace_back([&] {
      for (std::size_t i; (i = next++) < n;) run(i);
    });
  pool.clear();
  return errors;
}

struct SessionSummary {
  std::size_t domains = 0;
  std::size_t questions = 0;
  std::size_t responses = 0;
  std::size_t scores = 0;
  std::size_t rankings = 0;
  std::size_t item_failures = 0;
};

namespace detail {

class ExamRunner {
 public:
  ExamRunner(const ExamConfig& cfg, const DomainTaxonomy& taxonomy, ModelPool& pool, Session& session)
      : cfg_(cfg), taxonomy_(taxonomy), pool_(pool), session_(session) {
    examiner_.provider = &pool_.get(cfg_.examiner);
    examiner_.truncation_limit = cfg_.examiner_truncation;
    for (const auto& e : cfg_.examinees) {
      pool_.get(e.model);
      if (e.shot_mode == ShotMode::zero_shot && !e.family)
        fail(Errc::ConfigError, e.model + ": zero_shot mode needs an answer family");
    }
  }

  SessionSummary run() {
    generate_breadth();
    for (int round = 1; round <= cfg_.rounds_k; ++round) {
      answer_round(round);
      score_round(round);
      if (cfg_.rank) rank_round(round);
      if (round < cfg_.rounds_k) followups(round);
    }
    SessionSummary s;
    s.domains = domains_done_;
    s.questions = session_.questions().size();
    s.responses = session_.responses().size();
    s.scores = session_.scores().size();
    s.rankings = session_.rankings().size();
    s.item_failures = failures_;
    return s;
  }

 private:
  void item_failed(const std::string& what) {
    ++failures_;
    warn(what);
  }

  std::vector<Question> session_questions(int round) const {
    std::vector<Question> out;
    for (const auto& q : session_.questions())
      if (q.round == round && q.examiner == cfg_.examiner) out.push_back(q);
    return out;
  }

  /// Domains in seeded order; a domain whose generation fails twice is
  /// replaced by the next one so the corpus keeps n * m questions.
  void generate_breadth() {
    const auto order = taxonomy_.shuffled(cfg_.seed);
    std::size_t next = 0;
    while (domains_done_ < cfg_.n_domains) {
      if (next >= order.size()) {
        warn("taxonomy exhausted after " + std::to_string(domains_done_) + " usable domains");
        break;
      }
      const auto& domain = order[next++];
      if (generate_domain(domain)) ++domains_done_;
    }
  }

  bool generate_domain(const DomainPath& domain) {
    std::size_t stored = 0;
    for (const auto& q : session_.questions())
      if (q.round == 1 && q.examiner == cfg_.examiner && q.domain == domain) ++stored;
    if (stored == cfg_.m_per_domain) return true;

    std::vector<Question> batch;
    for (int attempt = 0; attempt < 2 && batch.empty(); ++attempt) {
      try {
        batch = generate_questions(*examiner_.provider, domain, cfg_.m_per_domain);
      } catch (const Error& e) {
        if (e.code() != Errc::GenerationParseFailure && e.code() != Errc::DuplicateQuestion) throw;
        warn("question generation for '" + domain.display() + "' failed (attempt " + std::to_string(attempt + 1) +
             "): " + e.what());
      }
    }
    if (batch.empty()) {
      item_failed("domain '" + domain.display() + "' dropped; refilling the slot with the next domain");
      return false;
    }
    for (auto& q : batch) {
      if (session_.find_question(q.id)) continue;
      if (cfg_.groundtruth) {
        try {
          q.groundtruth = generate_groundtruth(*examiner_.provider, q);
        } catch (const Error& e) {
          if (e.code() != Errc::EmptyGroundtruth) throw;
          warn(e.what());
        }
      }
      session_.append(q);
    }
    return true;
  }

  std::vector<const Examinee*> examinees_for(const Question& q) const {
    std::vector<const Examinee*> out;
    for (const auto& e : cfg_.examinees)
      if (!q.examinee || *q.examinee == e.model) out.push_back(&e);
    return out;
  }

  void answer_round(int round) {
    struct Task {
      const Question* q;
      const Examinee* who;
      std::optional<Response> out;
    };
    const auto questions = session_questions(round);
    std::vector<Task> tasks;
    for (const auto& q : questions)
      for (const auto* who : examinees_for(q))
        if (!session_.find_response(response_id(q.id, who->model, who->shot_mode))) tasks.push_back({&q, who, {}});

    auto errors = parallel_for(tasks.size(), cfg_.parallelism, [&](std::size_t i) {
      tasks[i].out = collect_answer(pool_.get(tasks[i].who->model), *tasks[i].who, *tasks[i].q);
    });
    for (std::size_t i = 0; i < tasks.size(); ++i) {
      if (!errors[i].empty()) {
        item_failed("answer from " + tasks[i].who->label() + " to " + tasks[i].q->id + " failed: " + errors[i]);
        continue;
      }
      session_.append(std::move(*tasks[i].out));
    }
  }

  void score_round(int round) {
    struct Task {
      const Question* q;
      Response r;
      std::optional<ScoreRecord> out;
    };
    const auto questions = session_questions(round);
    std::vector<Task> tasks;
    for (const auto& q : questions)
      for (auto& r : session_.responses_for(q.id))
        if (!session_.find_score(r.id, cfg_.examiner)) tasks.push_back({&q, std::move(r), {}});

    auto errors = parallel_for(tasks.size(), cfg_.parallelism, [&](std::size_t i) {
      tasks[i].out = score_response(examiner_, *tasks[i].q, tasks[i].r);
    });
    for (std::size_t i = 0; i < tasks.size(); ++i) {
      if (!errors[i].empty()) {
        item_failed("scoring " + tasks[i].r.id + " failed: " + errors[i]);
        continue;
      }
      session_.append(std::move(*tasks[i].out));
    }
  }

  void rank_round(int round) {
    PairMemo memo([&](const PairwiseOutcome& o) { session_.append(o); });
    for (const auto& o : session_.outcomes())
      if (o.examiner == cfg_.examiner) memo.preload(o);
    OverallLookup overall_of = [&](const std::string& id) -> std::optional<int> {
      if (auto s = session_.find_score(id, cfg_.examiner)) return s->card.overall;
      return std::nullopt;
    };
    for (const auto& q : session_questions(round)) {
      if (session_.find_ranking(q.id, cfg_.examiner)) continue;
      const auto responses = session_.responses_for(q.id);
      if (responses.size() < 2) continue;
      try {
        session_.append(rank_responses(examiner_, q, responses, memo, overall_of));
      } catch (const SimulatedCrash&) {
        throw;
      } catch (const Error& e) {
        if (e.code() == Errc::IntegrityViolation) throw;
        item_failed("ranking " + q.id + " failed: " + e.what());
      }
    }
  }

  void followups(int round) {
    std::vector<std::pair<Response, ScoreCard>> graded;
    for (const auto& q : session_questions(round))
      for (const auto& r : session_.responses_for(q.id))
        if (auto s = session_.find_score(r.id, cfg_.examiner)) graded.emplace_back(r, s->card);
    const auto seed = derive_seed(cfg_.seed, "followup-round-" + std::to_string(round));
    const auto picks = select_followup_candidates(graded, cfg_.followup_sample, seed);

    std::set<std::string> probed;
    for (const auto& q : session_.questions())
      if (q.parent_response_id) probed.insert(*q.parent_response_id);

    for (const auto& answer : picks) {
      if (probed.count(answer.id)) continue;
      const auto parent = session_.find_question(answer.question_id);
      try {
        auto q = generate_followup(*examiner_.provider, *parent, answer, cfg_.rounds_k);
        if (session_.find_question(q.id)) continue;
        session_.append(std::move(q));
      } catch (const SimulatedCrash&) {
        throw;
      } catch (const Error& e) {
        if (e.code() == Errc::IntegrityViolation) throw;
        item_failed("follow-up for " + answer.id + " failed: " + e.what());
      }
    }
  }

  const ExamConfig& cfg_;
  const DomainTaxonomy& taxonomy_;
  ModelPool& pool_;
  Session& session_;
  Examiner examiner_;
  std::size_t domains_done_ = 0;
  std::size_t failures_ = 0;
};

}  // namespace detail

/// Executes sample -> generate -> answer -> grade -> follow-up for every
/// round. Each artifact is appended as soon as it exists and every step skips
/// work already in the session, so rerunning on a resumed session continues
/// where a crash left off and reproduces the uninterrupted result.
inline SessionSummary run_exam_session(const ExamConfig& cfg, const DomainTaxonomy& taxonomy, ModelPool& pool,
                                       Session& session) {
  cfg.validate();
  if (session.config().empty()) session.set_config({{"kind", "exam"}, {"exam", cfg}});
  if (session.status() != SessionStatus::running) session.set_status(SessionStatus::running);
  try {
    auto summary = detail::ExamRunner(cfg, taxonomy, pool, session).run();
    session.set_status(SessionStatus::complete);
    return summary;
  } catch (const SimulatedCrash&) {
    throw;
  } catch (...) {
    session.set_status(SessionStatus::failed);
    throw;
  }
}

}  // namespace lmexam
