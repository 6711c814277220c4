#pragma once

#include <cstddef>
#include <functional>
#include <map>
#include <mutex>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <tuple>
#include <utility>
#include <vector>

#include "lmexam/error.hpp"
#include "lmexam/prompts.hpp"
#include "lmexam/provider.hpp"
#include "lmexam/records.hpp"
#include "lmexam/util.hpp"

namespace lmexam {

/// A judge: a provider plus its optional response-length cap for pairwise
/// prompts (whitespace tokens).
struct Examiner {
  Provider* provider = nullptr;
  std::optional<std::size_t> truncation_limit;

  const std::string& id() const { return provider->model_id(); }
};

// ---------------------------------------------------------------------------
// Likert scoring

/// Scores one answer with the Likert prompt. A malformed reply is re-asked
/// once; a second failure propagates the parse error.
inline ScoreRecord score_response(Examiner& examiner, const Question& question, const Response& response) {
  require(response.question_id == question.id, "score_response: response belongs to another question");
  const auto prompt = render(PromptName::likert_score, {{"Question", question.text}, {"Response", response.text}});
  ScoreRecord rec;
  rec.response_id = response.id;
  rec.question_id = question.id;
  rec.examiner = examiner.id();
  for (int attempt = 0;; ++attempt) {
    auto reply = examiner.provider->complete(prompt);
    try {
      rec.card = parse_scorecard(reply.text);
      rec.raw = std::move(reply.text);
      return rec;
    } catch (const Error& e) {
      if (attempt >= 1 || (e.code() != Errc::MissingDimension && e.code() != Errc::OutOfRange)) throw;
    }
  }
}

// ---------------------------------------------------------------------------
// Pairwise comparison

/// Keeps the first `max_units` whitespace-delimited tokens.
inline std::pair<std::string, bool> truncate_for_examiner(std::string_view text, std::size_t max_units) {
  require(max_units >= 1, "truncate_for_examiner: limit must be >= 1");
  auto words = split_whitespace(text);
  if (words.size() <= max_units) return {std::string(text), false};
  std::string out;
  for (std::size_t i = 0; i < max_units; ++i) {
    if (i) out.push_back(' ');
    out.append(words[i]);
  }
  return {out, true};
}

/// Synchronized store of pairwise outcomes keyed by (question, examiner,
/// unordered pair). `on_insert` observes every new outcome, which lets a
/// session persist comparisons as they happen.
class PairMemo {
 public:
  using Listener = std::function<void(const PairwiseOutcome&)>;

  PairMemo() = default;
  explicit PairMemo(Listener on_insert) : on_insert_(std::move(on_insert)) {}

  std::optional<PairwiseOutcome> find(const std::string& question_id, const std::string& examiner,
                                      const std::string& a, const std::string& b) const {
    std::lock_guard lock(mutex_);
    auto it = table_.find(key(question_id, examiner, a, b));
    if (it == table_.end()) return std::nullopt;
    return it->second.first == a ? it->second : it->second.flipped();
  }

  /// Adds without notifying (used to preload persisted outcomes).
  void preload(const PairwiseOutcome& o) {
    std::lock_guard lock(mutex_);
    table_.emplace(key(o.question_id, o.examiner, o.first, o.second), o);
  }

  void insert(const PairwiseOutcome& o) {
    {
      std::lock_guard lock(mutex_);
      if (!table_.emplace(key(o.question_id, o.examiner, o.first, o.second), o).second) return;
    }
    if (on_insert_) on_insert_(o);
  }

  std::size_t size() const {
    std::lock_guard lock(mutex_);
    return table_.size();
  }

 private:
  using Key = std::tuple<std::string, std::string, std::string, std::string>;
  static Key key(const std::string& q, const std::string& e, const std::string& a, const std::string& b) {
    return a < b ? Key{q, e, a, b} : Key{q, e, b, a};
  }

  mutable std::mutex mutex_;
  std::map<Key, PairwiseOutcome> table_;
  Listener on_insert_;
};

namespace detail {

inline std::optional<PairwiseChoice> ask_choice(Provider& provider, const std::string& prompt) {
  for (int attempt = 0; attempt < 2; ++attempt) {
    try {
      return parse_pairwise(provider.complete(prompt).text);
    } catch (const Error& e) {
      if (e.code() != Errc::AmbiguousChoice) throw;
    }
  }
  return std::nullopt;
}

/// Combines the two presentation-order votes into a's win fraction. An
/// abstaining order is discarded; double abstention is a tie.
inline double combine_votes(std::optional<PairwiseChoice> original, std::optional<PairwiseChoice> reversed) {
  std::optional<double> v1, v2;
  if (original) v1 = *original == PairwiseChoice::first ? 1.0 : 0.0;
  if (reversed) v2 = *reversed == PairwiseChoice::second ? 1.0 : 0.0;
  if (v1 && v2) return (*v1 + *v2) / 2.0;
  if (v1) return *v1;
  if (v2) return *v2;
  return 0.5;
}

}  // namespace detail

/// Judges `a` against `b` in both presentation orders and averages the votes.
/// Costs two provider calls for a new pair and none for a memoized one.
inline PairwiseOutcome compare_pair(Examiner& examiner, const Question& question, const Response& a,
                                    const Response& b, PairMemo* memo = nullptr) {
  require(a.id != b.id, "compare_pair: a response cannot be compared with itself");
  require(a.text != b.text, "compare_pair: responses " + a.id + " and " + b.id + " have identical text");
  if (memo)
    if (auto hit = memo->find(question.id, examiner.id(), a.id, b.id)) return *hit;

  auto shown = [&](const std::string& text) {
    return examiner.truncation_limit ? truncate_for_examiner(text, *examiner.truncation_limit).first : text;
  };
  const auto ta = shown(a.text);
  const auto tb = shown(b.text);
  const auto original = render(PromptName::pairwise, {{"Question", question.text}, {"Response 1", ta}, {"Response 2", tb}});
  const auto reversed = render(PromptName::pairwise, {{"Question", question.text}, {"Response 1", tb}, {"Response 2", ta}});

  PairwiseOutcome out;
  out.question_id = question.id;
  out.examiner = examiner.id();
  out.first = a.id;
  out.second = b.id;
  out.original_vote = detail::ask_choice(*examiner.provider, original);
  out.reversed_vote = detail::ask_choice(*examiner.provider, reversed);
  out.first_win_fraction = detail::combine_votes(out.original_vote, out.reversed_vote);
  if (memo) memo->insert(out);
  return out;
}

enum class Side { first, second };

/// Strict decision for merge sort: vote fraction, then higher overall score,
/// then the response earlier in input order (`first`).
inline Side resolve_winner(const PairwiseOutcome& outcome,
                           std::optional<std::pair<int, int>> overalls = std::nullopt) {
  if (outcome.first_win_fraction > 0.5) return Side::first;
  if (outcome.first_win_fraction < 0.5) return Side::second;
  if (overalls && overalls->first != overalls->second)
    return overalls->first > overalls->second ? Side::first : Side::second;
  return Side::first;
}

// ---------------------------------------------------------------------------
// Merge-sort ranking

struct MergeRankResult {
  std::vector<std::size_t> order;  // indices into the input, best first
  std::size_t comparisons = 0;     // distinct unordered pairs consulted
};

/// Bottom-up merge sort over indices [0, n). `left_first(i, j)` is asked
/// only with i from the left run and j from the right run, so i always
/// precedes j in input order; returning true keeps i ahead. Each unordered
/// pair reaches the comparator at most once.
template <typename LeftFirst>
MergeRankResult merge_rank(std::size_t n, LeftFirst&& left_first) {
  MergeRankResult res;
  res.order.resize(n);
  for (std::size_t i = 0; i < n; ++i) res.order[i] = i;
  std::set<std::pair<std::size_t, std::size_t>> consulted;
  std::map<std::pair<std::size_t, std::size_t>, bool> cache;

  auto ask = [&](std::size_t i, std::size_t j) {
    auto key = std::minmax(i, j);
    if (auto it = cache.find(key); it != cache.end()) return i == key.first ? it->second : !it->second;
    const bool i_first = left_first(i, j);
    consulted.insert(key);
    cache[key] = (i == key.first) ? i_first : !i_first;
    return i_first;
  };

  std::vector<std::size_t> buf(n);
  for (std::size_t width = 1; width < n; width *= 2) {
    for (std::size_t lo = 0; lo < n; lo += 2 * width) {
      const std::size_t mid = std::min(lo + width, n);
      const std::size_t hi = std::min(lo + 2 * width, n);
      std::size_t l = lo, r = mid, k = lo;
      while (l < mid && r < hi) {
        if (ask(res.order[l], res.order[r]))
          buf[k++] = res.order[l++];
        else
          buf[k++] = res.order[r++];
      }
      while (l < mid) buf[k++] = res.order[l++];
      while (r < hi) buf[k++] = res.order[r++];
    }
    std::copy(buf.begin(), buf.end(), res.order.begin());
  }
  res.comparisons = consulted.size();
  return res;
}

/// Returns overall score of a response if the examiner has scored it.
using OverallLookup = std::function<std::optional<int>(const std::string& response_id)>;

/// Ranks the responses to one question, best first, using reversal-averaged
/// judge comparisons as the merge-sort comparator. Responses with identical
/// text tie without a judge call.
inline Ranking rank_responses(Examiner& examiner, const Question& question, std::span<const Response> responses,
                              PairMemo& memo, const OverallLookup& overall_of = {}) {
  require(!responses.empty(), "rank_responses: no responses");
  {
    std::set<std::string> ids;
    for (const auto& r : responses) require(ids.insert(r.id).second, "rank_responses: duplicate response " + r.id);
  }

  auto left_first = [&](std::size_t i, std::size_t j) {
    const auto& a = responses[i];
    const auto& b = responses[j];
    PairwiseOutcome outcome;
    if (a.text == b.text) {
      if (auto hit = memo.find(question.id, examiner.id(), a.id, b.id)) {
        outcome = *hit;
      } else {
        outcome.question_id = question.id;
        outcome.examiner = examiner.id();
        outcome.first = a.id;
        outcome.second = b.id;
        outcome.first_win_fraction = 0.5;
        memo.insert(outcome);
      }
    } else {
      outcome = compare_pair(examiner, question, a, b, &memo);
    }
    std::optional<std::pair<int, int>> overalls;
    if (overall_of) {
      auto oa = overall_of(a.id);
      auto ob = overall_of(b.id);
      if (oa && ob) overalls = std::pair{*oa, *ob};
    }
    return resolve_winner(outcome, overalls) == Side::first;
  };

  auto merged = merge_rank(responses.size(), left_first);
  Ranking ranking;
  ranking.question_id = question.id;
  ranking.examiner = examiner.id();
  ranking.comparisons_used = merged.comparisons;
  for (auto i : merged.order) ranking.order.push_back(responses[i].id);
  return ranking;
}

// ---------------------------------------------------------------------------
// Examiner qualification

struct ConsistencyProbe {
  Question question;
  Response a;
  Response b;
};

struct Qualification {
  bool pass = false;
  double rate = 0.0;
  std::size_t consistent = 0;
  std::size_t total = 0;
};

/// A probe is consistent when both presentation orders produce a vote and
/// the votes name the same response.
inline Qualification qualify_examiner_consistency(Examiner& examiner, std::span<const ConsistencyProbe> probes,
                                                  double threshold = 0.8) {
  require(!probes.empty(), "qualify_examiner_consistency: no probes");
  Qualification q;
  q.total = probes.size();
  for (const auto& p : probes) {
    auto o = compare_pair(examiner, p.question, p.a, p.b);
    if (o.original_vote && o.reversed_vote && (o.first_win_fraction == 0.0 || o.first_win_fraction == 1.0))
      ++q.consistent;
  }
  q.rate = static_cast<double>(q.consistent) / static_cast<double>(q.total);
  q.pass = q.rate >= threshold;
  return q;
}

}  // namespace lmexam
