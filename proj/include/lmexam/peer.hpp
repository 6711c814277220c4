#pragma once

#include <algorithm>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "lmexam/analytics.hpp"
#include "lmexam/error.hpp"
#include "lmexam/exam.hpp"
#include "lmexam/grading.hpp"
#include "lmexam/records.hpp"
#include "lmexam/store.hpp"
#include "lmexam/taxonomy.hpp"

namespace lmexam {

// ---------------------------------------------------------------------------
// Qualification probes

namespace detail {

inline ConsistencyProbe make_probe(const std::string& question, const std::string& good, const std::string& poor) {
  ConsistencyProbe p;
  p.question.examiner = "probe";
  p.question.domain = DomainPath({"Probe"});
  p.question.text = question;
  p.question.id = question_id(p.question.domain, 1, question);
  p.a.question_id = p.b.question_id = p.question.id;
  p.a.examinee = "probe-good";
  p.b.examinee = "probe-poor";
  p.a.id = response_id(p.question.id, p.a.examinee, ShotMode::native);
  p.b.id = response_id(p.question.id, p.b.examinee, ShotMode::native);
  p.a.text = good;
  p.b.text = poor;
  return p;
}

}  // namespace detail

/// Ten pairs where one answer is clearly better. A judge that tracks content
/// picks the same answer in both presentation orders.
inline std::vector<ConsistencyProbe> builtin_probes() {
  using detail::make_probe;
  return {
      make_probe("What is the boiling point of water at sea level in Celsius?",
                 "Water boils at 100 degrees Celsius at standard sea-level pressure.",
                 "Water boils at about 50 degrees Celsius everywhere."),
      make_probe("Which planet is closest to the Sun?", "Mercury is the planet closest to the Sun.",
                 "Jupiter is the closest planet to the Sun."),
      make_probe("What causes the seasons on Earth?",
                 "The tilt of Earth's rotational axis changes how directly sunlight strikes each hemisphere over "
                 "the year, which produces the seasons.",
                 "Seasons happen because Earth moves much closer to the Sun in summer."),
      make_probe("What is the main function of red blood cells?",
                 "Red blood cells carry oxygen from the lungs to the tissues using hemoglobin and return some "
                 "carbon dioxide to the lungs.",
                 "Red blood cells fight infections."),
      make_probe("Who wrote the play Romeo and Juliet?", "William Shakespeare wrote Romeo and Juliet.",
                 "Charles Dickens wrote Romeo and Juliet."),
      make_probe("How does compound interest differ from simple interest?",
                 "Simple interest is paid only on the principal, while compound interest is also paid on interest "
                 "already earned, so the balance grows faster over time.",
                 "They are the same thing."),
      make_probe("What is photosynthesis?",
                 "Photosynthesis is the process by which plants use light energy to turn carbon dioxide and water "
                 "into glucose and oxygen.",
                 "Photosynthesis is how plants absorb soil through their leaves."),
      make_probe("What is the capital of Japan?", "Tokyo is the capital of Japan.", "Kyoto is the capital of Japan."),
      make_probe("Why do metals conduct electricity well?",
                 "Metals have delocalized electrons that move freely through the lattice and carry charge.",
                 "Metals conduct electricity because they are heavy."),
      make_probe("What does a firewall do in computer networking?",
                 "A firewall filters network traffic according to rules, allowing or blocking connections to "
                 "protect a system or network.",
                 "A firewall cools down the computer's processor."),
  };
}

// ---------------------------------------------------------------------------
// Voting

struct VoteResult {
  std::string question_id;
  std::string first;   // response ids; orientation of the first input outcome
  std::string second;
  std::map<std::string, double> per_examiner;  // examiner -> first's win fraction
  std::size_t votes_first = 0;
  std::size_t votes_second = 0;
  std::size_t no_vote = 0;                      // examiners with a 0.5 fraction
  std::optional<PairwiseChoice> consensus;      // nullopt: tie

  /// Fraction credited to `first` downstream: 1, 0, or 0.5 for a tie.
  double first_credit() const {
    if (!consensus) return 0.5;
    return *consensus == PairwiseChoice::first ? 1.0 : 0.0;
  }
};

/// Majority over examiner winners for one item. An examiner whose fraction is
/// exactly 0.5 casts no vote.
inline VoteResult vote_aggregate(std::span<const PairwiseOutcome> results) {
  require(!results.empty(), "vote_aggregate needs at least one examiner result");
  VoteResult v;
  v.question_id = results.front().question_id;
  v.first = results.front().first;
  v.second = results.front().second;
  for (const auto& r : results) {
    require(r.question_id == v.question_id, "vote_aggregate: results refer to different questions");
    PairwiseOutcome o = r;
    if (o.first == v.second && o.second == v.first)
      o = o.flipped();
    else
      require(o.first == v.first && o.second == v.second, "vote_aggregate: results refer to different pairs");
    require(v.per_examiner.emplace(o.examiner, o.first_win_fraction).second,
            "vote_aggregate: examiner '" + o.examiner + "' appears twice");
    if (o.first_win_fraction > 0.5)
      ++v.votes_first;
    else if (o.first_win_fraction < 0.5)
      ++v.votes_second;
    else
      ++v.no_vote;
  }
  if (v.votes_first > v.votes_second) v.consensus = PairwiseChoice::first;
  if (v.votes_second > v.votes_first) v.consensus = PairwiseChoice::second;
  return v;
}

// ---------------------------------------------------------------------------
// Peer-examination

struct PeerConfig {
  std::vector<Examinee> participants;
  std::vector<DomainPath> domains;  // empty: sample n_domains from the taxonomy
  std::size_t n_domains = 20;
  std::size_t questions_per_domain = 5;
  std::optional<std::vector<std::string>> examiner_roles;  // nullopt: every qualified participant
  std::vector<std::string> forced_examiners;               // bypass the qualification gate
  std::map<std::string, std::size_t> truncation_limits;
  double qualification_threshold = 0.8;
  bool qualify = true;
  std::uint64_t seed = 0;
  bool rank = true;
  std::size_t parallelism = 1;

  std::size_t questions_per_examiner() const {
    return (domains.empty() ? n_domains : domains.size()) * questions_per_domain;
  }

  void validate() const {
    if (participants.size() < 3)
      fail(Errc::PreconditionViolation, "peer-examination needs at least 3 participants, got " +
                                            std::to_string(participants.size()));
    if (questions_per_domain < 1) fail(Errc::ConfigError, "questions_per_domain must be >= 1");
    std::set<std::string> ids;
    for (const auto& p : participants)
      if (!ids.insert(p.model).second) fail(Errc::ConfigError, "participant '" + p.model + "' listed twice");
    auto check_subset = [&](const std::vector<std::string>& list, const char* what) {
      for (const auto& m : list)
        if (!ids.count(m)) fail(Errc::ConfigError, std::string(what) + " '" + m + "' is not a participant");
    };
    if (examiner_roles) check_subset(*examiner_roles, "examiner");
    check_subset(forced_examiners, "forced examiner");
    for (const auto& [m, limit] : truncation_limits)
      if (limit < 1) fail(Errc::ConfigError, m + ": truncation limit must be >= 1");
  }
};

inline void from_json(const nlohmann::json& j, PeerConfig& c) {
  for (const auto& p : j.at("participants")) {
    if (p.is_string())
      c.participants.push_back({p.get<std::string>(), ShotMode::native, std::nullopt});
    else
      c.participants.push_back(p.get<Examinee>());
  }
  if (j.contains("domains"))
    for (const auto& d : j["domains"]) c.domains.push_back(DomainPath::parse(d.get<std::string>()));
  c.n_domains = j.value("n_domains", std::size_t{20});
  c.questions_per_domain = j.value("questions_per_domain", std::size_t{5});
  if (j.contains("examiner_roles") && !j["examiner_roles"].is_null())
    c.examiner_roles = j["examiner_roles"].get<std::vector<std::string>>();
  c.forced_examiners = j.value("forced_examiners", std::vector<std::string>{});
  c.truncation_limits = j.value("truncation_limits", std::map<std::string, std::size_t>{});
  c.qualification_threshold = j.value("qualification_threshold", 0.8);
  c.qualify = j.value("qualify", true);
  c.seed = j.value("seed", std::uint64_t{0});
  c.rank = j.value("rank", true);
  c.parallelism = j.value("parallelism", std::size_t{1});
}

inline void to_json(nlohmann::json& j, const PeerConfig& c) {
  std::vector<std::string> domains;
  for (const auto& d : c.domains) domains.push_back(d.display());
  j = {{"participants", c.participants},
       {"domains", domains},
       {"n_domains", c.n_domains},
       {"questions_per_domain", c.questions_per_domain},
       {"forced_examiners", c.forced_examiners},
       {"truncation_limits", c.truncation_limits},
       {"qualification_threshold", c.qualification_threshold},
       {"qualify", c.qualify},
       {"seed", c.seed},
       {"rank", c.rank}};
  if (c.examiner_roles) j["examiner_roles"] = *c.examiner_roles;
}

/// Peer questions are scoped by examiner: two examiners writing the same
/// question text still own separate items.
inline std::string peer_question_id(const std::string& examiner, const DomainPath& domain, const std::string& text) {
  return "q" + stable_id({"peer", examiner, domain.display(), normalize_whitespace(text)});
}

struct PeerSummary {
  std::vector<std::string> examiners;
  std::map<std::string, Qualification> qualification;
  std::size_t questions = 0;
  std::size_t responses = 0;
  std::size_t scores = 0;
  std::size_t item_failures = 0;
};

namespace detail {

inline std::vector<std::string> select_examiners(const PeerConfig& cfg, ModelPool& pool,
                                                 std::span<const ConsistencyProbe> probes, PeerSummary& summary) {
  std::vector<std::string> candidates;
  if (cfg.examiner_roles)
    candidates = *cfg.examiner_roles;
  else
    for (const auto& p : cfg.participants) candidates.push_back(p.model);
  const bool explicit_roles = cfg.examiner_roles.has_value();

  std::vector<std::string> out;
  for (const auto& m : candidates) {
    const bool forced = std::find(cfg.forced_examiners.begin(), cfg.forced_examiners.end(), m) !=
                        cfg.forced_examiners.end();
    if (forced || !cfg.qualify) {
      out.push_back(m);
      continue;
    }
    Examiner judge{&pool.get(m), std::nullopt};
    if (auto it = cfg.truncation_limits.find(m); it != cfg.truncation_limits.end()) judge.truncation_limit = it->second;
    auto q = qualify_examiner_consistency(judge, probes, cfg.qualification_threshold);
    summary.qualification[m] = q;
    if (q.pass) {
      out.push_back(m);
    } else if (explicit_roles) {
      fail(Errc::UnqualifiedExaminer, m + " agreed with itself on " + std::to_string(q.consistent) + " of " +
                                          std::to_string(q.total) + " probes (threshold " +
                                          format_double(cfg.qualification_threshold) +
                                          "); list it under forced_examiners to use it anyway");
    } else {
      warn(m + " failed examiner qualification (" + std::to_string(q.consistent) + "/" + std::to_string(q.total) +
           " consistent); it will answer but not judge");
    }
  }
  if (out.empty()) fail(Errc::UnqualifiedExaminer, "no participant qualified as an examiner");
  return out;
}

}  // namespace detail

/// Each qualified examiner writes its own question set with the peer prompt;
/// every other participant answers; the examiner scores and ranks those
/// answers. All artifacts land in one session, separated by examiner id.
/// Rerunning on a resumed session continues from the stored records.
inline PeerSummary run_peer_examination(const PeerConfig& cfg, const DomainTaxonomy* taxonomy, ModelPool& pool,
                                        Session& session, std::span<const ConsistencyProbe> probes = {}) {
  cfg.validate();
  for (const auto& p : cfg.participants) pool.get(p.model);

  std::vector<DomainPath> domains = cfg.domains;
  if (domains.empty()) {
    if (!taxonomy) fail(Errc::ConfigError, "peer config lists no domains and no taxonomy was given");
    domains = taxonomy->sample(cfg.n_domains, cfg.seed);
  }

  PeerSummary summary;
  std::vector<ConsistencyProbe> default_probes;
  if (probes.empty()) {
    default_probes = builtin_probes();
    probes = default_probes;
  }
  summary.examiners = detail::select_examiners(cfg, pool, probes, summary);

  nlohmann::json qual = nlohmann::json::object();
  for (const auto& [m, q] : summary.qualification)
    qual[m] = {{"pass", q.pass}, {"rate", q.rate}, {"consistent", q.consistent}, {"total", q.total}};
  auto snapshot = nlohmann::json{{"kind", "peer"}, {"peer", cfg}, {"examiners", summary.examiners},
                                 {"qualification", qual}};
  if (session.config().empty()) session.set_config(snapshot);
  if (session.status() != SessionStatus::running) session.set_status(SessionStatus::running);

  auto failed = [&](const std::string& what) {
    ++summary.item_failures;
    warn(what);
  };

  try {
    for (const auto& examiner_id : summary.examiners) {
      Examiner judge{&pool.get(examiner_id), std::nullopt};
      if (auto it = cfg.truncation_limits.find(examiner_id); it != cfg.truncation_limits.end())
        judge.truncation_limit = it->second;

      // Questions.
      for (const auto& domain : domains) {
        bool have = false;
        for (const auto& q : session.questions())
          if (q.examiner == examiner_id && q.domain == domain) have = true;
        if (have) continue;
        std::vector<Question> batch;
        for (int attempt = 0; attempt < 2 && batch.empty(); ++attempt) {
          try {
            batch = generate_questions(*judge.provider, domain, cfg.questions_per_domain, PromptName::peer_question_gen);
          } catch (const Error& e) {
            if (e.code() != Errc::GenerationParseFailure && e.code() != Errc::DuplicateQuestion) throw;
            warn(examiner_id + " / " + domain.display() + ": " + e.what());
          }
        }
        if (batch.empty()) {
          failed(examiner_id + " produced no usable questions for '" + domain.display() + "'");
          continue;
        }
        for (auto& q : batch) {
          q.id = peer_question_id(examiner_id, domain, q.text);
          if (!session.find_question(q.id)) session.append(std::move(q));
        }
      }

      std::vector<Question> own;
      for (const auto& q : session.questions())
        if (q.examiner == examiner_id) own.push_back(q);

      // Answers from everyone but the examiner.
      struct Task {
        const Question* q;
        const Examinee* who;
        std::optional<Response> out;
      };
      std::vector<Task> tasks;
      for (const auto& q : own)
        for (const auto& p : cfg.participants)
          if (p.model != examiner_id && !session.find_response(response_id(q.id, p.model, p.shot_mode)))
            tasks.push_back({&q, &p, {}});
      auto errors = parallel_for(tasks.size(), cfg.parallelism, [&](std::size_t i) {
        tasks[i].out = collect_answer(pool.get(tasks[i].who->model), *tasks[i].who, *tasks[i].q);
      });
      for (std::size_t i = 0; i < tasks.size(); ++i) {
        if (errors[i].empty())
          session.append(std::move(*tasks[i].out));
        else
          failed(tasks[i].who->model + " could not answer " + tasks[i].q->id + ": " + errors[i]);
      }

      // Scores.
      for (const auto& q : own)
        for (const auto& r : session.responses_for(q.id)) {
          if (r.examinee == examiner_id || session.find_score(r.id, examiner_id)) continue;
          try {
            session.append(score_response(judge, q, r));
          } catch (const Error& e) {
            if (e.code() == Errc::IntegrityViolation) throw;
            failed(examiner_id + " could not score " + r.id + ": " + e.what());
          }
        }

      // Rankings.
      if (!cfg.rank) continue;
      PairMemo memo([&](const PairwiseOutcome& o) { session.append(o); });
      for (const auto& o : session.outcomes())
        if (o.examiner == examiner_id) memo.preload(o);
      OverallLookup overall_of = [&](const std::string& id) -> std::optional<int> {
        if (auto s = session.find_score(id, examiner_id)) return s->card.overall;
        return std::nullopt;
      };
      for (const auto& q : own) {
        if (session.find_ranking(q.id, examiner_id)) continue;
        const auto responses = session.responses_for(q.id);
        if (responses.size() < 2) continue;
        try {
          session.append(rank_responses(judge, q, responses, memo, overall_of));
        } catch (const Error& e) {
          if (e.code() == Errc::IntegrityViolation) throw;
          failed(examiner_id + " could not rank " + q.id + ": " + e.what());
        }
      }
    }
  } catch (const SimulatedCrash&) {
    throw;
  } catch (...) {
    session.set_status(SessionStatus::failed);
    throw;
  }

  session.set_status(SessionStatus::complete);
  summary.questions = session.questions().size();
  summary.responses = session.responses().size();
  summary.scores = session.scores().size();
  return summary;
}

/// Full-mark percentage of each examinee's answers to each examiner's
/// questions. Self cells stay absent.
inline ScoreTable peer_score_table(const Session& session) {
  std::vector<std::string> examinees, examiners;
  const auto& cfg = session.config();
  if (cfg.contains("peer")) {
    for (const auto& p : cfg["peer"].at("participants")) examinees.push_back(p.at("model").get<std::string>());
    examiners = cfg.value("examiners", std::vector<std::string>{});
  }
  auto add_unique = [](std::vector<std::string>& v, const std::string& s) {
    if (std::find(v.begin(), v.end(), s) == v.end()) v.push_back(s);
  };
  for (const auto& s : session.scores()) add_unique(examiners, s.examiner);
  for (const auto& r : session.responses()) add_unique(examinees, r.examinee);

  std::map<std::pair<std::string, std::string>, std::pair<std::size_t, std::size_t>> tally;  // (row, col) -> full, n
  for (const auto& s : session.scores()) {
    const auto r = session.find_response(s.response_id);
    if (!r || r->examinee == s.examiner) continue;
    auto& t = tally[{r->examinee, s.examiner}];
    t.first += s.card.full_mark() ? 1 : 0;
    ++t.second;
  }

  ScoreTable table(examinees, examiners);
  for (std::size_t i = 0; i < examinees.size(); ++i)
    for (std::size_t j = 0; j < examiners.size(); ++j) {
      auto it = tally.find({examinees[i], examiners[j]});
      if (it != tally.end() && it->second.second > 0)
        table.values[i][j] = 100.0 * static_cast<double>(it->second.first) / static_cast<double>(it->second.second);
    }
  return table;
}

// ---------------------------------------------------------------------------
// Rephrase-bias experiment

struct SourceItem {
  Question question;
  Response response;
};

struct BiasReport {
  std::size_t pairs = 0;
  // Fraction of comparisons the rewritten answer wins, per judge and after
  // voting across judges.
  std::map<std::string, double> per_judge;
  double combined = 0.5;
  std::vector<VoteResult> votes;
};

inline std::string rewritten_examinee(const std::string& source_examinee, const std::string& rewriter) {
  return source_examinee + "+rewrite:" + rewriter;
}

/// Rewrites each source answer with the paraphrase prompt, then every judge
/// compares (rewritten, original) in both orders. With `sink`, the source
/// items, rewrites and outcomes are also appended to that session.
inline BiasReport rephrase_bias_experiment(std::span<const SourceItem> sources, Provider& rewriter,
                                           std::span<Examiner> judges,
                                           const std::optional<std::set<std::string>>& keep = std::nullopt,
                                           Session* sink = nullptr) {
  require(!sources.empty(), "rephrase_bias_experiment: no source responses");
  require(!judges.empty(), "rephrase_bias_experiment: no judges");

  BiasReport rep;
  std::map<std::string, double> judge_sum;
  double combined_sum = 0;
  for (const auto& src : sources) {
    if (keep && !keep->count(src.response.id)) continue;

    Response rewritten;
    rewritten.question_id = src.question.id;
    rewritten.examinee = rewritten_examinee(src.response.examinee, rewriter.model_id());
    rewritten.shot_mode = src.response.shot_mode;
    rewritten.id = response_id(src.question.id, rewritten.examinee, rewritten.shot_mode);
    if (auto stored = sink ? sink->find_response(rewritten.id) : std::nullopt) {
      rewritten = *stored;
    } else {
      rewritten.text = std::string(
          trim(rewriter.complete(render(PromptName::rewrite, {{"Original paragraph", src.response.text}})).text));
    }

    if (sink) {
      if (!sink->find_question(src.question.id)) {
        Question q = src.question;
        // Lineage to the source session does not exist here.
        q.parent_id.reset();
        q.parent_response_id.reset();
        q.round = 1;
        sink->append(std::move(q));
      }
      if (!sink->find_response(src.response.id)) sink->append(src.response);
      if (!sink->find_response(rewritten.id)) sink->append(rewritten);
    }

    std::vector<PairwiseOutcome> outcomes;
    for (auto& judge : judges) {
      PairwiseOutcome o;
      std::optional<PairwiseOutcome> stored;
      if (sink) stored = sink->find_outcome(src.question.id, judge.id(), rewritten.id, src.response.id);
      if (stored) {
        o = *stored;
      } else if (rewritten.text == src.response.text) {
        o.question_id = src.question.id;
        o.examiner = judge.id();
        o.first = rewritten.id;
        o.second = src.response.id;
      } else {
        o = compare_pair(judge, src.question, rewritten, src.response);
      }
      if (sink && !stored) sink->append(o);
      judge_sum[judge.id()] += o.first_win_fraction;
      outcomes.push_back(std::move(o));
    }
    auto v = vote_aggregate(outcomes);
    combined_sum += v.first_credit();
    rep.votes.push_back(std::move(v));
    ++rep.pairs;
  }
  if (rep.pairs == 0) fail(Errc::EmptyInput, "keep-list removed every source response");
  for (const auto& [judge, sum] : judge_sum) rep.per_judge[judge] = sum / static_cast<double>(rep.pairs);
  rep.combined = combined_sum / static_cast<double>(rep.pairs);
  return rep;
}

inline nlohmann::json bias_report_json(const BiasReport& rep) {
  nlohmann::json per_judge = nlohmann::json::object();
  for (const auto& [j, v] : rep.per_judge) per_judge[j] = v;
  return {{"pairs", rep.pairs}, {"rewritten_win_rate", {{"per_judge", per_judge}, {"combined", rep.combined}}}};
}

}  // namespace lmexam
