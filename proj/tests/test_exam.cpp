#include <gtest/gtest.h>

#include <fstream>
#include <set>

#include "lmexam/config.hpp"
#include "lmexam/exam.hpp"
#include "support.hpp"

using namespace lmexam;
using testing_support::code_of;
using testing_support::fixture;
using testing_support::TempDir;

namespace {

Question make_question(const std::string& text, int round = 1) {
  Question q;
  q.examiner = "ex";
  q.domain = DomainPath::parse("Science > Physics");
  q.text = text;
  q.round = round;
  q.level = classify_cognitive_level(text);
  q.id = question_id(q.domain, round, text);
  return q;
}

Response make_response(const Question& q, const std::string& model, const std::string& text) {
  Response r;
  r.question_id = q.id;
  r.examinee = model;
  r.text = text;
  r.id = response_id(q.id, model, ShotMode::native);
  return r;
}

std::string numbered(std::size_t n, const std::string& stem = "Question number ") {
  std::string s;
  for (std::size_t i = 1; i <= n; ++i) s += std::to_string(i) + ". " + stem + std::to_string(i) + "?\n";
  return s;
}

struct ExamFixture {
  RunConfig rc = RunConfig::load(fixture("exam/config.json"));
  DomainTaxonomy taxonomy = load_taxonomy(read_file(*rc.taxonomy));
  ExamConfig cfg = rc.doc.at("exam").get<ExamConfig>();
};

}  // namespace

// ---------------------------------------------------------------------------
// Cognitive level classifier

TEST(Classifier, FixtureAccuracyAtLeastTenOfTwelve) {
  std::ifstream in(fixture("classifier.jsonl"));
  std::string line;
  int total = 0, correct = 0;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    auto j = nlohmann::json::parse(line);
    ++total;
    const auto got = classify_cognitive_level(j["text"].get<std::string>());
    if (to_string(got) == j["level"].get<std::string>())
      ++correct;
    else
      std::cout << "  miss: " << j["text"].get<std::string>() << " -> " << to_string(got) << "\n";
  }
  EXPECT_EQ(total, 12);
  EXPECT_GE(correct, 10);
}

TEST(Classifier, Cues) {
  EXPECT_EQ(classify_cognitive_level("Which river is the longest in Africa?"), CognitiveLevel::memorization);
  EXPECT_EQ(classify_cognitive_level("When did the Berlin Wall fall?"), CognitiveLevel::memorization);
  EXPECT_EQ(classify_cognitive_level("How many moons does Mars have?"), CognitiveLevel::memorization);
  EXPECT_EQ(classify_cognitive_level("Why does ice float on water?"), CognitiveLevel::comprehension);
  EXPECT_EQ(classify_cognitive_level("Compare nuclear and solar power for base load."), CognitiveLevel::analysis);
  EXPECT_EQ(classify_cognitive_level("What are the differences between TCP and UDP?"), CognitiveLevel::analysis);
  EXPECT_EQ(classify_cognitive_level("What causes inflation and how do central banks respond?"),
            CognitiveLevel::analysis);
}

TEST(Classifier, Deterministic) {
  const std::string q = "How does attachment style influence romantic relationships?";
  EXPECT_EQ(classify_cognitive_level(q), classify_cognitive_level("  " + q + "  "));
}

// ---------------------------------------------------------------------------
// Answer collection

TEST(AnswerPrompt, ShotModes) {
  auto q = make_question("What is entropy?");
  EXPECT_EQ(answer_prompt({"m", ShotMode::native, std::nullopt}, q), "What is entropy?");
  EXPECT_EQ(answer_prompt({"m", ShotMode::zero_shot, AnswerFamily::bloomz}, q), "Question: What is entropy? Answer:");
  EXPECT_EQ(answer_prompt({"m", ShotMode::zero_shot, AnswerFamily::flan_ul2}, q), "Answer the question: What is entropy?");
  EXPECT_EQ(answer_prompt({"m", ShotMode::zero_shot, AnswerFamily::glm}, q),
            "Answer this question:\nQuestion: What is entropy?\nAnswer:");
  auto five = answer_prompt({"m", ShotMode::five_shot, std::nullopt}, q);
  EXPECT_TRUE(five.starts_with("Answer the following questions:\n"));
  EXPECT_TRUE(five.ends_with("Question: What is entropy?\nAnswer:"));
  EXPECT_EQ(code_of([&] { answer_prompt({"m", ShotMode::zero_shot, std::nullopt}, q); }), Errc::MissingTemplate);
}

TEST(AnswerPrompt, FamilyNames) {
  EXPECT_EQ(parse_answer_family("llama"), AnswerFamily::llama);
  EXPECT_EQ(parse_answer_family("flan_t5"), AnswerFamily::flan_t5);
  EXPECT_EQ(parse_answer_family(""), std::nullopt);
}

TEST(CollectAnswer, LineBreakFamiliesStopAtFirstNewline) {
  auto q = make_question("What is entropy?");
  auto p = testing_support::stub_provider("llama-13b", {{"", "\n  A measure of disorder.\nQuestion: next one"}});
  auto r = collect_answer(*p, {"llama-13b", ShotMode::zero_shot, AnswerFamily::llama}, q);
  EXPECT_EQ(r.text, "A measure of disorder.");
  EXPECT_TRUE(r.truncated);
  EXPECT_EQ(r.question_id, q.id);
  EXPECT_EQ(r.shot_mode, ShotMode::zero_shot);
  EXPECT_EQ(r.label(), "llama-13b (0-shot)");
}

TEST(CollectAnswer, OtherFamiliesKeepLines) {
  auto q = make_question("What is entropy?");
  auto p = testing_support::stub_provider("bloomz", {{"", "Line one.\nLine two."}});
  auto r = collect_answer(*p, {"bloomz", ShotMode::zero_shot, AnswerFamily::bloomz}, q);
  EXPECT_EQ(r.text, "Line one.\nLine two.");
  EXPECT_FALSE(r.truncated);
}

TEST(CollectAnswer, OutputCapInWhitespaceTokens) {
  auto q = make_question("What is entropy?");
  auto cfg = testing_support::stub_config("m");
  cfg.max_output_tokens = 3;
  Provider p(cfg, std::make_shared<ScriptedStub>(std::vector<StubRule>{{"", "one two  three four five"}}), Mode::live);
  auto r = collect_answer(p, {"m", ShotMode::native, std::nullopt}, q);
  EXPECT_EQ(r.text, "one two three");
  EXPECT_TRUE(r.truncated);
}

// ---------------------------------------------------------------------------
// Generation

TEST(Generation, ParsesRequestedCount) {
  auto examiner = testing_support::stub_provider("ex", {{"developing a set of 4", "Sure.\n" + numbered(4)}});
  auto d = DomainPath::parse("Sports > Cycling");
  auto qs = generate_questions(*examiner, d, 4);
  ASSERT_EQ(qs.size(), 4u);
  std::set<std::string> ids;
  for (const auto& q : qs) {
    EXPECT_EQ(q.round, 1);
    EXPECT_EQ(q.domain, d);
    EXPECT_EQ(q.examiner, "ex");
    EXPECT_EQ(q.id, question_id(d, 1, q.text));
    ids.insert(q.id);
  }
  EXPECT_EQ(ids.size(), 4u);
  EXPECT_EQ(qs[2].text, "Question number 3?");
}

TEST(Generation, WrongCountIsParseFailure) {
  auto examiner = testing_support::stub_provider("ex", {{"", numbered(9)}});
  EXPECT_EQ(code_of([&] { generate_questions(*examiner, DomainPath::parse("A"), 10); }), Errc::GenerationParseFailure);
}

TEST(Generation, DuplicatesRejected) {
  auto examiner = testing_support::stub_provider("ex", {{"", "1. Same?\n2.  same? "}});
  EXPECT_EQ(code_of([&] { generate_questions(*examiner, DomainPath::parse("A"), 2); }), Errc::DuplicateQuestion);
}

TEST(Generation, PeerTemplateCount) {
  auto examiner = testing_support::stub_provider("ex", {{"write 5 really complex", numbered(5)}});
  EXPECT_EQ(generate_questions(*examiner, DomainPath::parse("A"), 5, PromptName::peer_question_gen).size(), 5u);
}

TEST(Groundtruth, EmptyIsError) {
  auto q = make_question("What is entropy?");
  auto examiner = testing_support::stub_provider("ex", {{"", "   "}});
  EXPECT_EQ(code_of([&] { generate_groundtruth(*examiner, q); }), Errc::EmptyGroundtruth);
  auto good = testing_support::stub_provider("ex", {{"without providing additional details", "Disorder."}});
  EXPECT_EQ(generate_groundtruth(*good, q), "Disorder.");
}

// ---------------------------------------------------------------------------
// Follow-ups

TEST(Followup, OnlyFullMarkAnswersAreCandidates) {
  auto q = make_question("What is entropy?");
  std::vector<std::pair<Response, ScoreCard>> graded;
  for (int i = 0; i < 6; ++i)
    graded.emplace_back(make_response(q, "m" + std::to_string(i), "text " + std::to_string(i)),
                        ScoreCard{3, 3, 3, 3, i % 2 ? 5 : 4});
  auto picks = select_followup_candidates(graded, 1000, 1);
  ASSERT_EQ(picks.size(), 3u);
  for (const auto& r : picks) EXPECT_TRUE(r.examinee == "m1" || r.examinee == "m3" || r.examinee == "m5");
  EXPECT_EQ(select_followup_candidates(graded, 2, 9).size(), 2u);
  EXPECT_EQ(select_followup_candidates(graded, 2, 9), select_followup_candidates(graded, 2, 9));
  EXPECT_TRUE(select_followup_candidates(graded, 0, 9).empty());
}

TEST(Followup, LineageAndRound) {
  auto parent = make_question("What is entropy?");
  auto a = make_response(parent, "alpha", "Disorder of a system.");
  auto b = make_response(parent, "beta", "Heat over temperature.");
  auto examiner = testing_support::stub_provider("ex", {{"follow-up question", "follow question: Why does it grow?"}});
  auto fa = generate_followup(*examiner, parent, a, 2);
  auto fb = generate_followup(*examiner, parent, b, 2);
  EXPECT_EQ(fa.round, 2);
  EXPECT_EQ(fa.text, "Why does it grow?");
  EXPECT_EQ(fa.parent_id, parent.id);
  EXPECT_EQ(fa.parent_response_id, a.id);
  EXPECT_EQ(fa.examinee, "alpha");
  EXPECT_EQ(fa.domain, parent.domain);
  // Same text, different probed answer: distinct questions.
  EXPECT_NE(fa.id, fb.id);
  EXPECT_EQ(code_of([&] { generate_followup(*examiner, fa, a, 2); }), Errc::PreconditionViolation);
}

TEST(Followup, PromptCarriesOnlyThePreviousPair) {
  auto parent = make_question("What is entropy?");
  auto a = make_response(parent, "alpha", "Disorder of a system.");
  std::string seen;
  auto examiner = testing_support::fn_provider("ex", [&](const std::string& p) {
    seen = p;
    return std::string("follow question: Next?");
  });
  generate_followup(*examiner, parent, a, 3);
  EXPECT_TRUE(seen.ends_with("Question: What is entropy? Answer: Disorder of a system."));
}

// ---------------------------------------------------------------------------
// Sessions

TEST(ExamConfig, Validation) {
  ExamConfig c;
  EXPECT_EQ(code_of([&] { c.validate(); }), Errc::ConfigError);
  c.examiner = "ex";
  c.examinees = {{"a", ShotMode::native, std::nullopt}, {"a", ShotMode::native, std::nullopt}};
  EXPECT_EQ(code_of([&] { c.validate(); }), Errc::ConfigError);
  c.examinees[1].shot_mode = ShotMode::five_shot;
  EXPECT_NO_THROW(c.validate());
  c.rounds_k = 0;
  EXPECT_EQ(code_of([&] { c.validate(); }), Errc::ConfigError);
}

TEST(ExamConfig, JsonRoundTrip) {
  ExamFixture f;
  nlohmann::json j = f.cfg;
  auto back = j.get<ExamConfig>();
  EXPECT_EQ(nlohmann::json(back), j);
  EXPECT_EQ(back.examinees[1].family, AnswerFamily::llama);
}

TEST(ExamSession, FixtureRunShape) {
  ExamFixture f;
  TempDir dir;
  auto pool = f.rc.build_pool(Mode::live);
  auto session = open_session(dir.path(), "s", OpenMode::create);
  auto summary = run_exam_session(f.cfg, f.taxonomy, pool, session);

  EXPECT_EQ(session.status(), SessionStatus::complete);
  EXPECT_EQ(summary.item_failures, 0u);
  EXPECT_EQ(summary.domains, 3u);
  // 3 domains x 10 questions; every answer but the partial one earns a 5.
  std::size_t round1 = 0, round2 = 0;
  for (const auto& q : session.questions()) (q.round == 1 ? round1 : round2)++;
  EXPECT_EQ(round1, 30u);
  EXPECT_EQ(round2, 27u);
  EXPECT_EQ(session.responses().size(), 60u + 27u);
  EXPECT_EQ(session.scores().size(), 87u);
  EXPECT_EQ(session.rankings().size(), 30u);

  for (const auto& q : session.questions()) {
    if (q.round == 1) {
      EXPECT_TRUE(q.groundtruth.has_value());
      continue;
    }
    auto parent_answer = session.find_response(*q.parent_response_id);
    ASSERT_TRUE(parent_answer);
    EXPECT_EQ(parent_answer->question_id, *q.parent_id);
    EXPECT_EQ(session.find_score(parent_answer->id, "examiner-stub")->card.overall, 5);
    EXPECT_EQ(q.examinee, "alpha-stub");
    EXPECT_EQ(session.responses_for(q.id).size(), 1u);
  }
  for (const auto& r : session.responses())
    if (r.examinee == "beta-stub") {
      EXPECT_TRUE(r.truncated);
      EXPECT_EQ(r.text.find('\n'), std::string::npos);
    }
  for (const auto& rk : session.rankings()) {
    ASSERT_EQ(rk.order.size(), 2u);
    EXPECT_EQ(session.find_response(rk.order[0])->examinee, "alpha-stub");
  }
}

TEST(ExamSession, RerunOnCompleteSessionAddsNothing) {
  ExamFixture f;
  TempDir dir;
  auto pool = f.rc.build_pool(Mode::live);
  {
    auto session = open_session(dir.path(), "s", OpenMode::create);
    run_exam_session(f.cfg, f.taxonomy, pool, session);
  }
  const auto calls = pool.total_dispatched();
  auto session = open_session(dir.path(), "s", OpenMode::resume);
  const auto seq = session.last_seq();
  run_exam_session(f.cfg, f.taxonomy, pool, session);
  EXPECT_EQ(session.last_seq(), seq);
  EXPECT_EQ(pool.total_dispatched(), calls);
}

TEST(ExamSession, ParallelMatchesSerial) {
  ExamFixture f;
  auto run = [&](std::size_t workers) {
    TempDir dir;
    auto cfg = f.cfg;
    cfg.parallelism = workers;
    auto pool = f.rc.build_pool(Mode::live);
    auto session = open_session(dir.path(), "s", OpenMode::create);
    run_exam_session(cfg, f.taxonomy, pool, session);
    std::set<std::string> items;
    for (const auto& q : session.questions()) items.insert(q.id + q.text);
    for (const auto& r : session.responses()) items.insert(r.id + r.text);
    for (const auto& s : session.scores()) items.insert(s.response_id + std::to_string(s.card.overall));
    for (const auto& k : session.rankings()) items.insert(k.question_id + k.order[0]);
    return items;
  };
  EXPECT_EQ(run(1), run(4));
}

TEST(ExamSession, FailedGenerationRefillsDomain) {
  // Domain "Broken" always yields an unparsable list; the run takes the next one.
  auto tax = load_taxonomy("Broken\nGood A\nGood B");
  ModelPool pool;
  pool.add(testing_support::fn_provider("ex", [](const std::string& p) -> std::string {
    if (p.find("domain: Broken") != std::string::npos) return "no list";
    if (p.find("developing a set of") != std::string::npos) return numbered(2);
    if (p.find("\"Response 1\"") != std::string::npos) return "Response 1";
    if (p.find("accurately and completely") != std::string::npos) return "ref";
    return "accuracy: 3 coherence: 3 factuality: 3 comprehensive: 3 overall: 4";
  }));
  pool.add(testing_support::stub_provider("a", {{"", "answer a"}}));
  ExamConfig cfg;
  cfg.examiner = "ex";
  cfg.examinees = {{"a", ShotMode::native, std::nullopt}};
  cfg.n_domains = 2;
  cfg.m_per_domain = 2;
  cfg.rounds_k = 1;
  TempDir dir;
  auto session = open_session(dir.path(), "s", OpenMode::create);
  testing_support::WarningCapture warnings;
  auto summary = run_exam_session(cfg, tax, pool, session);
  EXPECT_EQ(summary.domains, 2u);
  EXPECT_EQ(session.questions().size(), 4u);
  std::set<std::string> domains;
  for (const auto& q : session.questions()) domains.insert(q.domain.display());
  EXPECT_EQ(domains, (std::set<std::string>{"Good A", "Good B"}));
}
