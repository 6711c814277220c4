#pragma once

// Persisted record types shared by the exam, grading, peer and store layers,
// with their JSON encodings.

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "lmexam/error.hpp"
#include "lmexam/prompts.hpp"
#include "lmexam/taxonomy.hpp"

namespace lmexam {

enum class CognitiveLevel { memorization, comprehension, analysis };

inline constexpr std::array kAllLevels = {CognitiveLevel::memorization, CognitiveLevel::comprehension,
                                          CognitiveLevel::analysis};

inline std::string_view to_string(CognitiveLevel l) {
  switch (l) {
    case CognitiveLevel::memorization: return "memorization";
    case CognitiveLevel::comprehension: return "comprehension";
    case CognitiveLevel::analysis: return "analysis";
  }
  return "?";
}

inline CognitiveLevel parse_level(std::string_view s) {
  for (auto l : kAllLevels)
    if (to_string(l) == s) return l;
  fail(Errc::ConfigError, "unknown cognitive level '" + std::string(s) + "'");
}

enum class ShotMode { zero_shot, five_shot, native };

inline std::string_view to_string(ShotMode m) {
  switch (m) {
    case ShotMode::zero_shot: return "zero_shot";
    case ShotMode::five_shot: return "five_shot";
    case ShotMode::native: return "native";
  }
  return "?";
}

inline ShotMode parse_shot_mode(std::string_view s) {
  if (s == "zero_shot") return ShotMode::zero_shot;
  if (s == "five_shot") return ShotMode::five_shot;
  if (s == "native") return ShotMode::native;
  fail(Errc::ConfigError, "unknown shot mode '" + std::string(s) + "' (expected zero_shot|five_shot|native)");
}

/// Row label used in reports: "llama-13b (5-shot)", or the bare id for native.
inline std::string examinee_label(const std::string& model, ShotMode mode) {
  switch (mode) {
    case ShotMode::zero_shot: return model + " (0-shot)";
    case ShotMode::five_shot: return model + " (5-shot)";
    case ShotMode::native: return model;
  }
  return model;
}

struct Question {
  std::uint64_t seq = 0;
  std::string id;
  std::string examiner;
  DomainPath domain;
  std::string text;
  int round = 1;
  std::optional<std::string> parent_id;
  std::optional<std::string> parent_response_id;  // full-mark answer the follow-up probes
  std::optional<std::string> examinee;            // the only model asked a follow-up
  CognitiveLevel level = CognitiveLevel::comprehension;
  std::optional<std::string> groundtruth;

  friend bool operator==(const Question&, const Question&) = default;
};

/// Stable across resumes. Follow-ups also hash their lineage so two examinees
/// receiving the same follow-up text keep distinct questions.
inline std::string question_id(const DomainPath& domain, int round, const std::string& text,
                               const std::string& parent_response_id = {}) {
  return "q" + stable_id({domain.display(), std::to_string(round), normalize_whitespace(text), parent_response_id});
}

struct Response {
  std::uint64_t seq = 0;
  std::string id;
  std::string question_id;
  std::string examinee;
  ShotMode shot_mode = ShotMode::native;
  std::string text;
  bool truncated = false;

  std::string label() const { return examinee_label(examinee, shot_mode); }
  friend bool operator==(const Response&, const Response&) = default;
};

inline std::string response_id(const std::string& question_id, const std::string& examinee, ShotMode mode) {
  return "r" + stable_id({question_id, examinee, to_string(mode)});
}

struct ScoreRecord {
  std::uint64_t seq = 0;
  std::string response_id;
  std::string question_id;
  std::string examiner;
  ScoreCard card;
  std::string raw;  // examiner text, kept for audit

  friend bool operator==(const ScoreRecord&, const ScoreRecord&) = default;
};

/// Reversal-averaged judgement of `first` against `second`.
struct PairwiseOutcome {
  std::uint64_t seq = 0;
  std::string question_id;
  std::string first;
  std::string second;
  std::string examiner;
  double first_win_fraction = 0.5;
  // Vote of the original presentation (first shown as "Response 1") and of
  // the reversed one; nullopt marks an abstention.
  std::optional<PairwiseChoice> original_vote;
  std::optional<PairwiseChoice> reversed_vote;

  /// Same judgement seen from the other side.
  PairwiseOutcome flipped() const {
    PairwiseOutcome o = *this;
    std::swap(o.first, o.second);
    o.first_win_fraction = 1.0 - first_win_fraction;
    o.original_vote = reversed_vote;
    o.reversed_vote = original_vote;
    return o;
  }

  friend bool operator==(const PairwiseOutcome&, const PairwiseOutcome&) = default;
};

struct Ranking {
  std::uint64_t seq = 0;
  std::string question_id;
  std::string examiner;
  std::vector<std::string> order;  // response ids, best first
  std::size_t comparisons_used = 0;

  friend bool operator==(const Ranking&, const Ranking&) = default;
};

// ---------------------------------------------------------------------------
// JSON

template <typename T>
void put_optional(nlohmann::json& j, const char* key, const std::optional<T>& v) {
  if (v) j[key] = *v;
}

template <typename T>
void get_optional(const nlohmann::json& j, const char* key, std::optional<T>& v) {
  if (auto it = j.find(key); it != j.end() && !it->is_null())
    v = it->template get<T>();
  else
    v.reset();
}

inline void to_json(nlohmann::json& j, const ScoreCard& c) {
  j = {{"accuracy", c.accuracy},
       {"coherence", c.coherence},
       {"factuality", c.factuality},
       {"comprehensiveness", c.comprehensiveness},
       {"overall", c.overall}};
}

inline void from_json(const nlohmann::json& j, ScoreCard& c) {
  j.at("accuracy").get_to(c.accuracy);
  j.at("coherence").get_to(c.coherence);
  j.at("factuality").get_to(c.factuality);
  j.at("comprehensiveness").get_to(c.comprehensiveness);
  j.at("overall").get_to(c.overall);
  if (!c.valid()) fail(Errc::OutOfRange, "stored scorecard outside Likert ranges");
}

inline void to_json(nlohmann::json& j, const Question& q) {
  j = {{"seq", q.seq},         {"id", q.id},       {"examiner", q.examiner},
       {"domain", q.domain.segments()}, {"text", q.text}, {"round", q.round},
       {"level", to_string(q.level)}};
  put_optional(j, "parent_id", q.parent_id);
  put_optional(j, "parent_response_id", q.parent_response_id);
  put_optional(j, "examinee", q.examinee);
  put_optional(j, "groundtruth", q.groundtruth);
}

inline void from_json(const nlohmann::json& j, Question& q) {
  q.seq = j.value("seq", std::uint64_t{0});
  j.at("id").get_to(q.id);
  j.at("examiner").get_to(q.examiner);
  q.domain = DomainPath(j.at("domain").get<std::vector<std::string>>());
  j.at("text").get_to(q.text);
  j.at("round").get_to(q.round);
  q.level = parse_level(j.at("level").get<std::string>());
  get_optional(j, "parent_id", q.parent_id);
  get_optional(j, "parent_response_id", q.parent_response_id);
  get_optional(j, "examinee", q.examinee);
  get_optional(j, "groundtruth", q.groundtruth);
}

inline void to_json(nlohmann::json& j, const Response& r) {
  j = {{"seq", r.seq},       {"id", r.id},     {"question_id", r.question_id}, {"examinee", r.examinee},
       {"shot_mode", to_string(r.shot_mode)}, {"text", r.text}, {"truncated", r.truncated}};
}

inline void from_json(const nlohmann::json& j, Response& r) {
  r.seq = j.value("seq", std::uint64_t{0});
  j.at("id").get_to(r.id);
  j.at("question_id").get_to(r.question_id);
  j.at("examinee").get_to(r.examinee);
  r.shot_mode = parse_shot_mode(j.at("shot_mode").get<std::string>());
  j.at("text").get_to(r.text);
  r.truncated = j.value("truncated", false);
}

inline void to_json(nlohmann::json& j, const ScoreRecord& s) {
  j = {{"seq", s.seq},           {"response_id", s.response_id}, {"question_id", s.question_id},
       {"examiner", s.examiner}, {"score", s.card},              {"raw", s.raw}};
}

inline void from_json(const nlohmann::json& j, ScoreRecord& s) {
  s.seq = j.value("seq", std::uint64_t{0});
  j.at("response_id").get_to(s.response_id);
  j.at("question_id").get_to(s.question_id);
  j.at("examiner").get_to(s.examiner);
  j.at("score").get_to(s.card);
  s.raw = j.value("raw", std::string{});
}

inline nlohmann::json vote_json(const std::optional<PairwiseChoice>& v) {
  return v ? nlohmann::json(to_string(*v)) : nlohmann::json(nullptr);
}

inline std::optional<PairwiseChoice> vote_from_json(const nlohmann::json& j) {
  if (j.is_null()) return std::nullopt;
  return parse_choice_label(j.get<std::string>());
}

inline void to_json(nlohmann::json& j, const PairwiseOutcome& o) {
  j = {{"seq", o.seq},
       {"question_id", o.question_id},
       {"examiner", o.examiner},
       {"first", o.first},
       {"second", o.second},
       {"first_win_fraction", o.first_win_fraction},
       {"raw_votes", nlohmann::json::array({vote_json(o.original_vote), vote_json(o.reversed_vote)})}};
}

inline void from_json(const nlohmann::json& j, PairwiseOutcome& o) {
  o.seq = j.value("seq", std::uint64_t{0});
  j.at("question_id").get_to(o.question_id);
  j.at("examiner").get_to(o.examiner);
  j.at("first").get_to(o.first);
  j.at("second").get_to(o.second);
  j.at("first_win_fraction").get_to(o.first_win_fraction);
  const auto& votes = j.at("raw_votes");
  o.original_vote = vote_from_json(votes.at(0));
  o.reversed_vote = vote_from_json(votes.at(1));
}

inline void to_json(nlohmann::json& j, const Ranking& r) {
  j = {{"seq", r.seq},
       {"question_id", r.question_id},
       {"examiner", r.examiner},
       {"order", r.order},
       {"comparisons_used", r.comparisons_used}};
}

inline void from_json(const nlohmann::json& j, Ranking& r) {
  r.seq = j.value("seq", std::uint64_t{0});
  j.at("question_id").get_to(r.question_id);
  j.at("examiner").get_to(r.examiner);
  j.at("order").get_to(r.order);
  j.at("comparisons_used").get_to(r.comparisons_used);
}

}  // namespace lmexam
