#pragma once

#include <array>
#include <map>
#include <optional>
#include <regex>
#include <string>
#include <string_view>
#include <vector>

#include "lmexam/error.hpp"
#include "lmexam/util.hpp"

namespace lmexam {

enum class PromptName {
  question_gen,
  followup_gen,
  peer_question_gen,
  likert_score,
  pairwise,
  rewrite,
  groundtruth_answer,
  answer_0shot_bloomz,
  answer_0shot_flan_ul2,
  answer_0shot_flan_t5,
  answer_0shot_glm,
  answer_0shot_llama,
  answer_5shot_shared,
};

inline constexpr std::array kAllPrompts = {
    PromptName::question_gen,        PromptName::followup_gen,         PromptName::peer_question_gen,
    PromptName::likert_score,        PromptName::pairwise,             PromptName::rewrite,
    PromptName::groundtruth_answer,  PromptName::answer_0shot_bloomz,  PromptName::answer_0shot_flan_ul2,
    PromptName::answer_0shot_flan_t5, PromptName::answer_0shot_glm,    PromptName::answer_0shot_llama,
    PromptName::answer_5shot_shared,
};

constexpr std::string_view to_string(PromptName p) {
  switch (p) {
    case PromptName::question_gen: return "question_gen";
    case PromptName::followup_gen: return "followup_gen";
    case PromptName::peer_question_gen: return "peer_question_gen";
    case PromptName::likert_score: return "likert_score";
    case PromptName::pairwise: return "pairwise";
    case PromptName::rewrite: return "rewrite";
    case PromptName::groundtruth_answer: return "groundtruth_answer";
    case PromptName::answer_0shot_bloomz: return "answer_0shot_bloomz";
    case PromptName::answer_0shot_flan_ul2: return "answer_0shot_flan_ul2";
    case PromptName::answer_0shot_flan_t5: return "answer_0shot_flan_t5";
    case PromptName::answer_0shot_glm: return "answer_0shot_glm";
    case PromptName::answer_0shot_llama: return "answer_0shot_llama";
    case PromptName::answer_5shot_shared: return "answer_5shot_shared";
  }
  return "?";
}

namespace bodies {

inline constexpr std::string_view kQuestionGen =
    "You have been assigned the task of developing a set of 10 different questions that demonstrate your "
    "comprehensive understanding of a specific domain. Please strictly follow these 6 rules for the task:\n"
    "\n"
    "1. Your questions should exhibit a thorough understanding of the domain, and should encompass both breadth "
    "and depth, incorporating different question words, such as \"what\", \"which\", \"when\", \"where\", \"how\", "
    "\"why\", etc.\n"
    "\n"
    "2. Make sure the first 3 questions ask about concise knowledge and can be answered in 20 words.\n"
    "\n"
    "3. The last 7 more complicated questions can be answered in 100 words. Among them, the last 3 questions "
    "should be compound questions.\n"
    "\n"
    "4. You need to generate the questions as DIVERSIFY as possible.\n"
    "\n"
    "5. Ensure that you can confidently answer the questions you are proposing.\n"
    "\n"
    "6. DO NOT add other words other than the question itself. Each question in one line, add the serial number "
    "(\"1.\", \"2.\") before each question.\n"
    "domain: {Domain}";

inline constexpr std::string_view kFollowupGen =
    "You have been provided with a specific domain and a question-and-answer pair related to that domain. Your "
    "task is to generate a follow-up question that delves deeper into the topic of the given question. The "
    "proposed question should be based on the answer provided in the question-and-answer pair and should aim to "
    "test the author's knowledge of the underlying concepts of the answer he proposed. To accomplish this task, "
    "please adhere to the following guidelines:\n"
    "\n"
    "1. The proposed question should be closely related to the topic of the given question and should explore "
    "the same subject matter in greater detail.\n"
    "\n"
    "2. You should be able to confidently answer the question you propose.\n"
    "\n"
    "3. Please only return the following question as: follow question: [your proposed question].\n"
    "\n"
    "Question: {Previous round question} Answer: {Previous round response}";

inline constexpr std::string_view kPeerQuestionGen =
    "I want you to act as a question writer expert. Your objective is to write 5 really complex and difficult "
    "questions of a specific domain to make those famous AI systems (e.g., ChatGPT and GPT-4) a bit harder to "
    "handle.\n"
    "\n"
    "1. The 5 questions should be very complex and difficult, you can ask compound question.\n"
    "\n"
    "2. Ensure that you can confidently answer the questions you are proposing.\n"
    "\n"
    "3. DO NOT add other words other than the question itself. Each question in one line, add the serial number "
    "(\"1.\", \"2.\") before each question.\n"
    "\n"
    "domain: {Domain}";

inline constexpr std::string_view kLikertScore =
    "You are a fair assessment expert, and you will be given a set of question-answer pairs. Your task is to "
    "score the answers according to the following requirements:\n"
    "\n"
    "a. You should score the answer based on your knowledge of the corresponding question. You can assume your "
    "own answer to the corresponding question is the ground truth for the question.\n"
    "\n"
    "b. You should rate the answer on 5 metrics, for the first 4 metrics, assign a score between 1 and 3, with 3 "
    "being the highest:\n"
    "\n"
    "1. For accuracy, you will score whether the answer correctly answers the question.\n"
    "\n"
    "2. For coherence, you will assess the structure and logic of the answer, and whether the answer is "
    "understandable by non-professionals.\n"
    "\n"
    "3. For factuality, you will only evaluate whether the answer contains factual errors.\n"
    "\n"
    "4. For comprehensive, you will determine if the answer covers multiple aspects of the question and provides "
    "a comprehensive response. For simple questions (when, which, where, etc), the plain answer itself suffices "
    "and should be rated 3.\n"
    "\n"
    "5. Finally, you will provide an overall score between 1 and 5, with 5 being the highest.\n"
    "\n"
    "You should only give the score, Format like: coherence: 3\n"
    "\n"
    "DO NOT complete the answer!\n"
    "\n"
    "Question: {Question} Answer: {Response}";

inline constexpr std::string_view kPairwise =
    "You are a fair assessment expert, and you will be given one question along with 2 different responses. "
    "Your task is to decide which response is better. You should take into consideration the accuracy, "
    "coherence, factuality, and comprehensiveness of the responses to reach a judgment. Only return: "
    "\"Response 1\" or \"Response 2\". You do not need to explain the reason.\n"
    "\n"
    "Question: {Question}\n"
    "\n"
    "Response 1: {Response 1}\n"
    "\n"
    "Response 2: {Response 2}";

inline constexpr std::string_view kRewrite =
    "You are a good writer. Paraphrase the given paragraph using more eloquent language. Include all the points "
    "and details without introducing any additional knowledge. Try to make what you write the same length as the "
    "given paragraph.\n"
    "\n"
    "Paragraph: {Original paragraph}";

inline constexpr std::string_view kGroundtruth =
    "Answer the questions accurately and completely, without providing additional details.\n"
    "\n"
    "Question: {Question}";

inline constexpr std::string_view kAnswerBloomz = "Question: {Question} Answer:";
inline constexpr std::string_view kAnswerFlanUl2 = "Answer the question: {Question}";
inline constexpr std::string_view kAnswerFlanT5 = "Question: {Question} Answer:";
inline constexpr std::string_view kAnswerGlm = "Answer this question:\nQuestion: {Question}\nAnswer:";
inline constexpr std::string_view kAnswerLlama = "Answer this question:\nQuestion: {Question}\nAnswer:";

inline constexpr std::string_view kAnswer5Shot =
    "Answer the following questions:\n"
    "Question: Which common household pests are controlled by professional pest control services?\n"
    "Answer: Common household pests controlled by professional pest control services include cockroaches, ants, "
    "termites, rodents, bed bugs, spiders, and wasps.\n"
    "Question: What are the key differences between assisted living and long-term care facilities?\n"
    "Answer: Assisted living facilities provide help with daily activities, social interactions, and minor "
    "medical assistance, while long-term care facilities offer extensive medical care, nursing staff support, and "
    "assistance with daily tasks for residents with serious illnesses or disabilities.\n"
    "Question: What is the primary objective of drug control policies?\n"
    "Answer: The primary objective of drug control policies is to reduce the demand, supply, and harmful "
    "consequences of illegal drugs in society.\n"
    "Question: Why is it essential to consider the type of fabric used in sleepwear when making a purchase?\n"
    "Answer: It is essential to consider the type of fabric used in sleepwear when making a purchase because it "
    "affects comfort, breathability, temperature regulation, and potential allergies or skin sensitivities.\n"
    "Question: Which historical figure is most associated with the origin of Buddhism?\n"
    "Answer: Siddhartha Gautama\n"
    "Question: {Question}\n"
    "Answer:";

}  // namespace bodies

constexpr std::string_view template_body(PromptName p) {
  switch (p) {
    case PromptName::question_gen: return bodies::kQuestionGen;
    case PromptName::followup_gen: return bodies::kFollowupGen;
    case PromptName::peer_question_gen: return bodies::kPeerQuestionGen;
    case PromptName::likert_score: return bodies::kLikertScore;
    case PromptName::pairwise: return bodies::kPairwise;
    case PromptName::rewrite: return bodies::kRewrite;
    case PromptName::groundtruth_answer: return bodies::kGroundtruth;
    case PromptName::answer_0shot_bloomz: return bodies::kAnswerBloomz;
    case PromptName::answer_0shot_flan_ul2: return bodies::kAnswerFlanUl2;
    case PromptName::answer_0shot_flan_t5: return bodies::kAnswerFlanT5;
    case PromptName::answer_0shot_glm: return bodies::kAnswerGlm;
    case PromptName::answer_0shot_llama: return bodies::kAnswerLlama;
    case PromptName::answer_5shot_shared: return bodies::kAnswer5Shot;
  }
  return {};
}

using Bindings = std::map<std::string, std::string, std::less<>>;

/// Substitutes every `{Name}` placeholder. Values are inserted verbatim and
/// never re-scanned. `count` replaces the literal question count of the
/// generation templates ("10 different questions", "5 really complex").
inline std::string render(PromptName name, const Bindings& bindings, std::optional<int> count = std::nullopt) {
  std::string body(template_body(name));
  if (count) {
    require(*count >= 1, "question count must be >= 1");
    auto n = std::to_string(*count);
    auto swap_phrase = [&](std::string_view from, const std::string& to) {
      auto pos = body.find(from);
      if (pos != std::string::npos) body.replace(pos, from.size(), to);
    };
    if (name == PromptName::question_gen) {
      swap_phrase("a set of 10 different", "a set of " + n + " different");
    } else if (name == PromptName::peer_question_gen) {
      swap_phrase("write 5 really complex", "write " + n + " really complex");
      swap_phrase("The 5 questions", "The " + n + " questions");
    }
  }

  std::string out;
  out.reserve(body.size() + 256);
  std::size_t i = 0;
  while (i < body.size()) {
    auto open = body.find('{', i);
    if (open == std::string::npos) {
      out.append(body, i, std::string::npos);
      break;
    }
    auto close = body.find('}', open);
    if (close == std::string::npos) {
      out.append(body, i, std::string::npos);
      break;
    }
    out.append(body, i, open - i);
    auto key = std::string_view(body).substr(open + 1, close - open - 1);
    auto it = bindings.find(key);
    if (it == bindings.end())
      fail(Errc::UnboundPlaceholder, std::string(to_string(name)) + ": no binding for {" + std::string(key) + "}");
    out.append(it->second);
    i = close + 1;
  }
  return out;
}

/// Placeholder names a template expects, in order of first appearance.
inline std::vector<std::string> placeholders(PromptName name) {
  std::vector<std::string> out;
  auto body = template_body(name);
  std::size_t i = 0;
  while ((i = body.find('{', i)) != std::string_view::npos) {
    auto close = body.find('}', i);
    if (close == std::string_view::npos) break;
    std::string key(body.substr(i + 1, close - i - 1));
    if (std::find(out.begin(), out.end(), key) == out.end()) out.push_back(key);
    i = close + 1;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Structured outputs

struct ScoreCard {
  int accuracy = 1;
  int coherence = 1;
  int factuality = 1;
  int comprehensiveness = 1;
  int overall = 1;

  bool valid() const {
    auto in = [](int v, int hi) { return v >= 1 && v <= hi; };
    return in(accuracy, 3) && in(coherence, 3) && in(factuality, 3) && in(comprehensiveness, 3) && in(overall, 5);
  }
  bool full_mark() const { return overall == 5; }

  friend bool operator==(const ScoreCard&, const ScoreCard&) = default;
};

enum class PairwiseChoice { first, second };

inline std::string_view to_string(PairwiseChoice c) { return c == PairwiseChoice::first ? "first" : "second"; }

inline PairwiseChoice parse_choice_label(std::string_view s) {
  if (s == "first") return PairwiseChoice::first;
  if (s == "second") return PairwiseChoice::second;
  fail(Errc::ConfigError, "unknown pairwise choice '" + std::string(s) + "'");
}

/// Items of a "1. ..." list in order. Lines without a serial prefix (leading
/// chatter, trailing remarks, blanks) are ignored.
inline std::vector<std::string> parse_numbered_list(std::string_view text, std::size_t expected) {
  require(expected >= 1, "parse_numbered_list: expected must be >= 1");
  static const std::regex item(R"(^\s*(?:\*\*)?\d+\s*[.)]\s*(?:\*\*)?\s*(.*?)\s*$)");
  std::vector<std::string> items;
  for (auto line : split_lines(text)) {
    std::string s(line);
    std::smatch m;
    if (!std::regex_match(s, m, item)) continue;
    std::string body = m[1].str();
    if (body.empty()) continue;
    items.push_back(std::move(body));
  }
  if (items.empty()) fail(Errc::NoItemsFound, "no numbered items in generator output");
  if (items.size() != expected)
    fail(Errc::CountMismatch,
         "expected " + std::to_string(expected) + " numbered items, parsed " + std::to_string(items.size()));
  return items;
}

/// Case-insensitive label scan; the first "label: <int>" of each dimension
/// wins, so a trailing "Reason:" section cannot override the score line.
/// "comprehensive" and "comprehensiveness" are both accepted. "ccuracy"
/// (dropped leading letter, seen in real examiner output) counts as accuracy.
inline ScoreCard parse_scorecard(std::string_view text) {
  struct Dim {
    const char* name;
    const char* pattern;
    int hi;
    int ScoreCard::*field;
  };
  static const std::array<Dim, 5> dims{{
      {"accuracy", R"((?:^|[^a-z])a?ccuracy\s*:\s*(-?\d+))", 3, &ScoreCard::accuracy},
      {"coherence", R"((?:^|[^a-z])coherence\s*:\s*(-?\d+))", 3, &ScoreCard::coherence},
      {"factuality", R"((?:^|[^a-z])factuality\s*:\s*(-?\d+))", 3, &ScoreCard::factuality},
      {"comprehensiveness", R"((?:^|[^a-z])comprehensive(?:ness)?\s*:\s*(-?\d+))", 3, &ScoreCard::comprehensiveness},
      {"overall", R"((?:^|[^a-z])overall\s*:\s*(-?\d+))", 5, &ScoreCard::overall},
  }};
  static const std::array<std::regex, 5> res = [] {
    std::array<std::regex, 5> r;
    for (std::size_t i = 0; i < dims.size(); ++i) r[i] = std::regex(dims[i].pattern, std::regex::icase);
    return r;
  }();

  const std::string s = to_lower(text);
  ScoreCard card;
  for (std::size_t i = 0; i < dims.size(); ++i) {
    std::smatch m;
    if (!std::regex_search(s, m, res[i])) fail(Errc::MissingDimension, std::string("no '") + dims[i].name + "' score");
    const auto digits = m[1].str();
    long v = digits.size() > 3 ? 1000 : std::stol(digits);
    if (v < 1 || v > dims[i].hi)
      fail(Errc::OutOfRange, std::string(dims[i].name) + " score " + digits + " outside 1.." + std::to_string(dims[i].hi));
    card.*(dims[i].field) = static_cast<int>(v);
  }
  return card;
}

/// The earliest "Response 1" / "Response 2" mention decides.
inline PairwiseChoice parse_pairwise(std::string_view text) {
  const auto s = to_lower(text);
  auto find_label = [&](std::string_view label) -> std::size_t {
    std::size_t pos = 0;
    while ((pos = s.find(label, pos)) != std::string::npos) {
      auto end = pos + label.size();
      if (end >= s.size() || !std::isdigit(static_cast<unsigned char>(s[end]))) return pos;
      pos = end;
    }
    return std::string::npos;
  };
  const auto p1 = find_label("response 1");
  const auto p2 = find_label("response 2");
  if (p1 == std::string::npos && p2 == std::string::npos)
    fail(Errc::AmbiguousChoice, "judge output names neither response: '" + std::string(trim(text).substr(0, 80)) + "'");
  return p1 < p2 ? PairwiseChoice::first : PairwiseChoice::second;
}

/// Text after the "follow question:" marker, or the whole reply without one.
inline std::string parse_followup(std::string_view text) {
  static const std::regex marker(R"(follow(?:ing|-up)?[ -]?question\s*:)", std::regex::icase);
  std::string s(text);
  std::smatch m;
  std::string_view q = s;
  if (std::regex_search(s, m, marker)) q = std::string_view(s).substr(static_cast<std::size_t>(m.position(0) + m.length(0)));
  q = trim(q);
  if (q.size() >= 2 && q.front() == '[' && q.back() == ']') q = trim(q.substr(1, q.size() - 2));
  if (q.empty()) fail(Errc::EmptyQuestion, "examiner returned no follow-up question");
  return std::string(q);
}

}  // namespace lmexam
