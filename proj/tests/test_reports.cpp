#include <gtest/gtest.h>

#include <fstream>

#include "lmexam/peer.hpp"
#include "lmexam/reports.hpp"
#include "support.hpp"

using namespace lmexam;
using testing_support::code_of;
using testing_support::slurp;
using testing_support::TempDir;

namespace {

const SessionOptions kFast{false, std::nullopt};

struct Builder {
  Session& s;

  Question question(const std::string& examiner, const std::string& text, CognitiveLevel level, int round = 1,
                    const Response* probed = nullptr) {
    Question q;
    q.examiner = examiner;
    q.domain = DomainPath::parse("D");
    q.text = text;
    q.round = round;
    q.level = level;
    if (probed) {
      q.parent_id = probed->question_id;
      q.parent_response_id = probed->id;
      q.examinee = probed->examinee;
    }
    q.id = examiner + "/" + text;
    s.append(q);
    return q;
  }

  Response answer(const Question& q, const std::string& model, ShotMode mode = ShotMode::native) {
    Response r;
    r.question_id = q.id;
    r.examinee = model;
    r.shot_mode = mode;
    r.text = model + " on " + q.text;
    r.id = response_id(q.id, model, mode);
    s.append(r);
    return r;
  }

  void score(const Response& r, const std::string& examiner, ScoreCard card) {
    ScoreRecord rec;
    rec.response_id = r.id;
    rec.question_id = r.question_id;
    rec.examiner = examiner;
    rec.card = card;
    s.append(rec);
  }

  void rank(const Question& q, const std::string& examiner, std::vector<std::string> order) {
    Ranking r;
    r.question_id = q.id;
    r.examiner = examiner;
    r.order = std::move(order);
    s.append(r);
  }
};

constexpr ScoreCard kFull{3, 3, 3, 3, 5};
constexpr ScoreCard kFair{2, 3, 2, 2, 3};

/// Two examinees, three round-1 questions, one follow-up.
void fill_small_exam(Session& s) {
  s.set_config({{"kind", "exam"},
                {"exam", {{"examiner", "ex"}, {"examinees", {{{"model", "a"}}, {{"model", "b"}, {"shot_mode", "zero_shot"}, {"family", "llama"}}}}, {"n_domains", 1}}}});
  Builder b{s};
  auto q1 = b.question("ex", "Which one?", CognitiveLevel::memorization);
  auto q2 = b.question("ex", "Why so?", CognitiveLevel::comprehension);
  auto q3 = b.question("ex", "Pros and cons?", CognitiveLevel::analysis);
  auto a1 = b.answer(q1, "a"), b1 = b.answer(q1, "b", ShotMode::zero_shot);
  auto a2 = b.answer(q2, "a"), b2 = b.answer(q2, "b", ShotMode::zero_shot);
  auto a3 = b.answer(q3, "a"), b3 = b.answer(q3, "b", ShotMode::zero_shot);
  b.score(a1, "ex", kFull);
  b.score(b1, "ex", kFull);
  b.score(a2, "ex", kFull);
  b.score(b2, "ex", kFair);
  b.score(a3, "ex", {3, 3, 3, 2, 4});
  b.score(b3, "ex", kFair);
  b.rank(q1, "ex", {b1.id, a1.id});
  b.rank(q2, "ex", {a2.id, b2.id});
  b.rank(q3, "ex", {a3.id, b3.id});
  auto f = b.question("ex", "Follow?", CognitiveLevel::comprehension, 2, &a1);
  auto fa = b.answer(f, "a");
  b.score(fa, "ex", kFair);
}

/// Peer session whose full-mark percentages are the published peer table.
void fill_peer_table(Session& s) {
  const std::vector<std::string> models{"Claude", "ChatGPT", "Bard", "Vicuna"};
  // percent[examinee][examiner]
  const int percent[4][4] = {{-1, 98, 100, 96}, {41, -1, 100, 95}, {41, 99, -1, 92}, {42, 98, 99, -1}};
  nlohmann::json participants = nlohmann::json::array();
  for (const auto& m : models) participants.push_back({{"model", m}, {"shot_mode", "native"}});
  s.set_config({{"kind", "peer"}, {"peer", {{"participants", participants}}}, {"examiners", models}});
  Builder b{s};
  for (std::size_t e = 0; e < 4; ++e)
    for (int i = 0; i < 100; ++i) {
      auto q = b.question(models[e], "item " + std::to_string(i), CognitiveLevel::comprehension);
      for (std::size_t x = 0; x < 4; ++x) {
        if (x == e) continue;
        auto r = b.answer(q, models[x]);
        b.score(r, models[e], i < percent[x][e] ? kFull : kFair);
      }
    }
}

}  // namespace

TEST(Reports, MissingInputs) {
  TempDir dir;
  auto s = open_session(dir.path(), "s", OpenMode::create, kFast);
  for (auto kind : kAllReportKinds)
    EXPECT_EQ(code_of([&] { export_report(s, kind, ReportFormat::csv); }), Errc::MissingInputs) << to_string(kind);
}

TEST(Reports, ParseNames) {
  EXPECT_EQ(parse_report_kind("radar"), ReportKind::radar);
  EXPECT_EQ(code_of([] { parse_report_kind("pie"); }), Errc::ConfigError);
  EXPECT_EQ(parse_report_format("json"), ReportFormat::json);
  EXPECT_EQ(code_of([] { parse_report_format("xml"); }), Errc::ConfigError);
}

TEST(Reports, FullMarkTable) {
  TempDir dir;
  auto s = open_session(dir.path(), "s", OpenMode::create, kFast);
  fill_small_exam(s);
  auto path = export_report(s, ReportKind::full_mark_table, ReportFormat::csv);
  EXPECT_EQ(path, dir / "s/reports/full_mark_table.csv");
  EXPECT_EQ(slurp(path),
            "examiner,examinee,round,n,overall,memorization,comprehension,analysis\n"
            "ex,a,1,3,66.7,100.0,100.0,0.0\n"
            "ex,a,2,1,0.0,,0.0,\n"
            "ex,b (0-shot),1,3,33.3,100.0,0.0,0.0\n");
}

TEST(Reports, Radar) {
  TempDir dir;
  auto s = open_session(dir.path(), "s", OpenMode::create, kFast);
  fill_small_exam(s);
  auto j = nlohmann::json::parse(slurp(export_report(s, ReportKind::radar, ReportFormat::json)));
  ASSERT_EQ(j.size(), 2u);
  EXPECT_EQ(j[0]["examinee"], "a");
  EXPECT_EQ(j[0]["n"], 4);
  // accuracy (3+3+3+2)/4 of 3; overall (5+5+4+3)/4 of 5.
  EXPECT_DOUBLE_EQ(j[0]["accuracy"].get<double>(), 91.7);
  EXPECT_DOUBLE_EQ(j[0]["overall"].get<double>(), 85.0);
}

TEST(Reports, Heatmap) {
  TempDir dir;
  auto s = open_session(dir.path(), "s", OpenMode::create, kFast);
  fill_small_exam(s);
  auto j = nlohmann::json::parse(slurp(export_report(s, ReportKind::win_rate_heatmap, ReportFormat::json)));
  EXPECT_EQ(j["models"], (nlohmann::json{"a", "b (0-shot)"}));
  EXPECT_TRUE(j["cells"][0][0].is_null());
  EXPECT_DOUBLE_EQ(j["cells"][0][1].get<double>(), 66.7);
  EXPECT_DOUBLE_EQ(j["cells"][1][0].get<double>(), 33.3);
  EXPECT_EQ(j["counts"][0][1], 3);
  EXPECT_DOUBLE_EQ(j["average"][1].get<double>(), 33.3);
  auto csv = slurp(export_report(s, ReportKind::win_rate_heatmap, ReportFormat::csv));
  EXPECT_EQ(csv, "model,a,b (0-shot),average\na,,66.7,66.7\nb (0-shot),33.3,,33.3\n");
}

TEST(Reports, PeerTableMatchesPublishedAverages) {
  TempDir dir;
  auto s = open_session(dir.path(), "peer", OpenMode::create, kFast);
  fill_peer_table(s);
  auto table = peer_score_table(s);
  EXPECT_EQ(table.examinees, (std::vector<std::string>{"Claude", "ChatGPT", "Bard", "Vicuna"}));
  EXPECT_DOUBLE_EQ(*table.values[1][0], 41.0);
  EXPECT_FALSE(table.values[2][2]);

  auto j = nlohmann::json::parse(slurp(export_report(s, ReportKind::peer_table, ReportFormat::json)));
  const double avg[] = {98.0, 78.6, 77.3, 79.6};
  const double weighted[] = {99.7, 98.9, 97.8, 99.3};
  for (std::size_t i = 0; i < 4; ++i) {
    EXPECT_NEAR(j["rows"][i]["AVG"].get<double>(), avg[i], 0.1 + 1e-9) << i;
    EXPECT_NEAR(j["rows"][i]["AVG_weight"].get<double>(), weighted[i], 0.1 + 1e-9) << i;
  }
  auto csv = slurp(export_report(s, ReportKind::peer_table, ReportFormat::csv));
  EXPECT_NE(csv.find("Claude,,98.0,100.0,96.0,98.0,99.7\n"), std::string::npos);
}

TEST(Reports, DeterministicAcrossResume) {
  TempDir dir;
  std::map<std::string, std::string> first;
  {
    auto s = open_session(dir.path(), "s", OpenMode::create, kFast);
    fill_small_exam(s);
    for (auto kind : {ReportKind::full_mark_table, ReportKind::radar, ReportKind::win_rate_heatmap})
      for (auto fmt : {ReportFormat::csv, ReportFormat::json}) {
        auto p = export_report(s, kind, fmt);
        first[p.string()] = slurp(p);
      }
  }
  auto s = open_session(dir.path(), "s", OpenMode::resume, kFast);
  for (auto kind : {ReportKind::full_mark_table, ReportKind::radar, ReportKind::win_rate_heatmap})
    for (auto fmt : {ReportFormat::csv, ReportFormat::json}) {
      auto p = export_report(s, kind, fmt);
      EXPECT_EQ(slurp(p), first.at(p.string())) << p;
    }
}

TEST(Reports, CsvQuoting) {
  ScoreTable t({"a, inc", "b\"q"}, {"x"});
  t.values = {{50.0}, {100.0}};
  EXPECT_EQ(format_score_table(t, ReportFormat::csv),
            "examinee,x,AVG,AVG_weight\n\"a, inc\",50.0,50.0,50.0\n\"b\"\"q\",100.0,100.0,100.0\n");
}

// ---------------------------------------------------------------------------
// Metric evaluation

namespace {

std::filesystem::path write_lines(const TempDir& dir, const std::vector<nlohmann::json>& lines) {
  const auto path = dir / "ann.jsonl";
  std::ofstream out(path);
  for (const auto& l : lines) out << l.dump() << "\n";
  return path;
}

}  // namespace

TEST(MetricEval, ScoresAndPairs) {
  TempDir dir;
  auto s = open_session(dir.path(), "s", OpenMode::create, kFast);
  fill_small_exam(s);
  const auto qa = s.questions()[0], qb = s.questions()[1], qc = s.questions()[2];
  auto rid = [&](const Question& q, const std::string& m, ShotMode mode = ShotMode::native) {
    return response_id(q.id, m, mode);
  };
  auto path = write_lines(
      dir, {{{"question_id", qa.id}, {"response_id", rid(qa, "a")}, {"overall_score", 5}, {"annotator_id", "h1"}},
            {{"question_id", qb.id}, {"response_id", rid(qb, "b", ShotMode::zero_shot)}, {"overall_score", 2}},
            {{"question_id", qc.id}, {"response_id", rid(qc, "a")}, {"overall_score", 4}},
            {{"question_id", qb.id},
             {"response_ids", {rid(qb, "a"), rid(qb, "b", ShotMode::zero_shot)}},
             {"choice", "first"}},
            {{"question_id", qa.id},
             {"response_ids", {rid(qa, "a"), rid(qa, "b", ShotMode::zero_shot)}},
             {"choice", "first"}}});
  auto ann = load_annotations(path);
  ASSERT_EQ(ann.size(), 5u);
  auto rep = metric_eval(s, ann);
  // Human 5,2,4 against judge 5,3,4: same order.
  EXPECT_EQ(rep.n_samples, 3u);
  EXPECT_DOUBLE_EQ(rep.spearman_rho, 1.0);
  EXPECT_DOUBLE_EQ(rep.kendall_tau, 1.0);
  // Rankings put a first for qb and b first for qa.
  EXPECT_EQ(rep.n_pairs, 2u);
  EXPECT_DOUBLE_EQ(*rep.pairwise_accuracy, 0.5);

  save_metric_eval(s, rep);
  auto csv = slurp(export_report(s, ReportKind::correlation, ReportFormat::csv));
  EXPECT_EQ(csv, "statistic,value\nspearman_rho,1.000\nkendall_tau,1.000\npairwise_accuracy,0.500\nn_samples,3\nn_pairs,2\n");
}

TEST(MetricEval, JoinFailures) {
  TempDir dir;
  auto s = open_session(dir.path(), "s", OpenMode::create, kFast);
  fill_small_exam(s);
  const auto q = s.questions()[0];
  const auto other = s.questions()[1];
  auto one = [&](nlohmann::json line) {
    auto ann = load_annotations(write_lines(dir, {line}));
    return code_of([&] { metric_eval(s, ann); });
  };
  EXPECT_EQ(one({{"question_id", "nope"}, {"response_id", "x"}, {"overall_score", 3}}), Errc::JoinFailure);
  EXPECT_EQ(one({{"question_id", q.id}, {"response_id", "ghost"}, {"overall_score", 3}}), Errc::JoinFailure);
  EXPECT_EQ(one({{"question_id", other.id}, {"response_id", response_id(q.id, "a", ShotMode::native)}, {"overall_score", 3}}),
            Errc::JoinFailure);
}

TEST(MetricEval, BadAnnotationLines) {
  TempDir dir;
  auto bad_score = write_lines(dir, {{{"question_id", "q"}, {"response_id", "r"}, {"overall_score", 6}}});
  EXPECT_EQ(code_of([&] { load_annotations(bad_score); }), Errc::OutOfRange);
  auto bad_pair = write_lines(dir, {{{"question_id", "q"}, {"response_ids", {"a"}}, {"choice", "first"}}});
  EXPECT_EQ(code_of([&] { load_annotations(bad_pair); }), Errc::ConfigError);
  auto bad_choice = write_lines(dir, {{{"question_id", "q"}, {"response_ids", {"a", "b"}}, {"choice", "both"}}});
  EXPECT_EQ(code_of([&] { load_annotations(bad_choice); }), Errc::ConfigError);
}
