// Acceptance run: one PASS/FAIL line per criterion, exit status 1 if any fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <numeric>
#include <random>
#include <sstream>

#include <json.hpp>

#include "lmexam/reports.hpp"

using namespace lmexam;
namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

namespace {

const fs::path kFixtures = LMEXAM_FIXTURES;

double seconds_since(Clock::time_point t) { return std::chrono::duration<double>(Clock::now() - t).count(); }

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

struct Scratch {
  fs::path path;
  Scratch() {
    path = fs::temp_directory_path() / ("lmexam-acceptance-" + std::to_string(::getpid()));
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~Scratch() { fs::remove_all(path); }
};

std::string shown(const std::string& prompt, int n) {
  const std::string tag = "Response " + std::to_string(n) + ": ";
  auto pos = prompt.find(tag);
  if (pos == std::string::npos) return {};
  pos += tag.size();
  auto end = prompt.find("\n\nResponse ", pos);
  return prompt.substr(pos, end == std::string::npos ? std::string::npos : end - pos);
}

std::shared_ptr<Provider> judge(const std::string& id, FunctionBackend::Fn fn) {
  ProviderConfig cfg;
  cfg.model_id = id;
  return std::make_shared<Provider>(cfg, std::make_shared<FunctionBackend>(std::move(fn)), Mode::live);
}

// Examiner and examinees of the bundled exam, answering from the cassette only.
struct ReplayExam {
  nlohmann::json doc = nlohmann::json::parse(slurp(kFixtures / "exam/config.json"));
  DomainTaxonomy taxonomy = load_taxonomy(slurp(kFixtures / "exam/taxonomy.txt"));
  ExamConfig cfg = doc.at("exam").get<ExamConfig>();
  std::shared_ptr<Cassette> tape = std::make_shared<Cassette>(Cassette::load((kFixtures / "exam/cassette.jsonl").string()));

  ModelPool pool() const {
    ModelPool p;
    for (const auto& pc : doc.at("providers")) {
      ProviderConfig c;
      c.model_id = pc.at("model_id").get<std::string>();
      p.add(std::make_shared<Provider>(c, nullptr, Mode::replay, tape));
    }
    return p;
  }
};

// ---------------------------------------------------------------------------

std::string merge_rank_permutations() {
  const auto start = Clock::now();
  std::vector<int> v{1, 2, 3, 4, 5, 6, 7};
  const std::size_t bound = 7 * 3;  // n * ceil(log2 n)
  std::size_t perms = 0, worst = 0;
  do {
    auto res = merge_rank(v.size(), [&](std::size_t i, std::size_t j) { return v[i] > v[j]; });
    std::vector<std::size_t> expect(v.size());
    std::iota(expect.begin(), expect.end(), 0);
    std::sort(expect.begin(), expect.end(), [&](std::size_t a, std::size_t b) { return v[a] > v[b]; });
    if (res.order != expect) return "wrong order on permutation " + std::to_string(perms);
    worst = std::max(worst, res.comparisons);
    ++perms;
  } while (std::next_permutation(v.begin(), v.end()));
  const double t = seconds_since(start);
  if (perms != 5040) return "visited " + std::to_string(perms) + " permutations";
  if (worst > bound) return "used " + std::to_string(worst) + " comparisons";
  if (t >= 10) return "took " + std::to_string(t) + " s";
  return {};
}

std::string peer_table_averages() {
  ScoreTable t({"Claude", "ChatGPT", "Bard", "Vicuna"}, {"Claude", "ChatGPT", "Bard", "Vicuna"});
  const std::optional<double> self;
  t.values = {{self, 98, 100, 96}, {41, self, 100, 95}, {41, 99, self, 92}, {42, 98, 99, self}};
  const double avg[] = {98.0, 78.6, 77.3, 79.6};
  const double weighted[] = {99.7, 98.9, 97.8, 99.3};
  auto rows = weighted_column_average(t);
  for (std::size_t i = 0; i < 4; ++i) {
    if (std::abs(rows[i].avg - avg[i]) > 0.1 + 1e-9)
      return t.examinees[i] + " AVG " + format1(rows[i].avg);
    if (std::abs(rows[i].avg_weight - weighted[i]) > 0.1 + 1e-9)
      return t.examinees[i] + " AVG_weight " + format1(rows[i].avg_weight);
  }
  return {};
}

double brute_spearman(const std::vector<double>& x, const std::vector<double>& y) {
  auto ranks = [](const std::vector<double>& v) {
    std::vector<double> r(v.size());
    for (std::size_t i = 0; i < v.size(); ++i) {
      double less = 0, equal = 0;
      for (double w : v) {
        less += w < v[i];
        equal += w == v[i];
      }
      r[i] = less + (equal + 1) / 2;
    }
    return r;
  };
  auto rx = ranks(x), ry = ranks(y);
  const double n = static_cast<double>(x.size());
  double mx = 0, my = 0;
  for (std::size_t i = 0; i < x.size(); ++i) mx += rx[i] / n, my += ry[i] / n;
  double sxy = 0, sxx = 0, syy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (rx[i] - mx) * (ry[i] - my);
    sxx += (rx[i] - mx) * (rx[i] - mx);
    syy += (ry[i] - my) * (ry[i] - my);
  }
  return sxy / std::sqrt(sxx * syy);
}

double brute_kendall(const std::vector<double>& x, const std::vector<double>& y) {
  double c = 0, d = 0, tx = 0, ty = 0;
  for (std::size_t i = 0; i < x.size(); ++i)
    for (std::size_t j = i + 1; j < x.size(); ++j) {
      const double dx = x[i] - x[j], dy = y[i] - y[j];
      if (dx == 0 && dy == 0) continue;
      if (dx == 0)
        ++tx;
      else if (dy == 0)
        ++ty;
      else if ((dx > 0) == (dy > 0))
        ++c;
      else
        ++d;
    }
  return (c - d) / std::sqrt((c + d + tx) * (c + d + ty));
}

std::string correlation_vs_brute_force() {
  const auto start = Clock::now();
  std::mt19937_64 rng(20230601);
  std::size_t checked = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t n = std::uniform_int_distribution<std::size_t>(2, 50)(rng);
    std::uniform_int_distribution<int> val(0, std::uniform_int_distribution<int>(2, 8)(rng));
    std::vector<double> x(n), y(n);
    for (auto& v : x) v = val(rng);
    for (auto& v : y) v = val(rng);
    auto flat = [](const std::vector<double>& v) { return std::all_of(v.begin(), v.end(), [&](double d) { return d == v[0]; }); };
    if (flat(x) || flat(y)) continue;
    if (std::abs(spearman_rho(x, y) - brute_spearman(x, y)) > 1e-12) return "spearman differs on trial " + std::to_string(trial);
    if (std::abs(kendall_tau(x, y) - brute_kendall(x, y)) > 1e-12) return "kendall differs on trial " + std::to_string(trial);
    ++checked;
  }
  const double t = seconds_since(start);
  if (checked < 900) return "only " + std::to_string(checked) + " non-constant trials";
  if (t >= 30) return "took " + std::to_string(t) + " s";
  return {};
}

std::string parser_fixtures() {
  auto load = [](const char* name) { return nlohmann::json::parse(slurp(kFixtures / "parsers" / name)); };
  std::size_t n = 0;
  try {
    for (const auto& c : load("scorecard_replies.json")) {
      const auto& e = c["expected"];
      const ScoreCard want{e["accuracy"], e["coherence"], e["factuality"], e["comprehensiveness"], e["overall"]};
      if (!(parse_scorecard(c["text"].get<std::string>()) == want)) return "scorecard " + c["label"].get<std::string>();
      ++n;
    }
    for (const auto& c : load("pairwise.json")) {
      if (parse_pairwise(c["text"].get<std::string>()) != parse_choice_label(c["expected"].get<std::string>()))
        return "pairwise " + c["text"].get<std::string>();
      ++n;
    }
    for (const auto& c : load("followup.json")) {
      if (parse_followup(c["text"].get<std::string>()) != c["expected"].get<std::string>())
        return "followup " + c["text"].get<std::string>();
      ++n;
    }
  } catch (const Error& e) {
    return e.what();
  }
  return n == 27 ? std::string{} : "expected 27 cases, saw " + std::to_string(n);
}

std::string bias_cancels() {
  Question q;
  q.id = "q";
  q.text = "Why is the sky blue?";
  std::vector<Response> rs;
  for (std::string text : {"Scattering.", "Rayleigh scattering of sunlight.", "Short wavelengths scatter more in air.",
                           "Because blue light is scattered by air molecules more strongly than red light."}) {
    Response r;
    r.question_id = q.id;
    r.text = text;
    r.id = "r" + std::to_string(rs.size());
    rs.push_back(r);
  }

  auto positional = judge("positional", [](const std::string&) { return std::string("Response 1"); });
  auto verbose = judge("verbose", [](const std::string& p) {
    return shown(p, 1).size() >= shown(p, 2).size() ? std::string("Response 1") : std::string("Response 2");
  });
  auto terse = judge("terse", [](const std::string& p) {
    return shown(p, 1).size() <= shown(p, 2).size() ? std::string("Response 1") : std::string("Response 2");
  });
  Examiner pe{positional.get(), std::nullopt}, ve{verbose.get(), std::nullopt}, te{terse.get(), std::nullopt};

  for (std::size_t i = 0; i < rs.size(); ++i)
    for (std::size_t j = 0; j < rs.size(); ++j) {
      if (i == j) continue;
      const auto o = compare_pair(pe, q, rs[i], rs[j]);
      if (o.first_win_fraction != 0.5) return "position-biased judge gave " + std::to_string(o.first_win_fraction);
      std::vector<PairwiseOutcome> both{compare_pair(ve, q, rs[i], rs[j]), compare_pair(te, q, rs[i], rs[j])};
      if (both[0].first_win_fraction == 0.5) return "style judge failed to decide";
      const double credit = vote_aggregate(both).first_credit();
      if (credit != 0.5) return "opposed style judges combined to " + std::to_string(credit);
    }
  return {};
}

std::string run_replay_exam(const ReplayExam& ex, const fs::path& root, std::string& error) {
  auto pool = ex.pool();
  auto s = open_session(root, "desk-exam", OpenMode::create, {false, std::nullopt});
  s.set_config({{"kind", "exam"}, {"exam", ex.cfg}});
  run_exam_session(ex.cfg, ex.taxonomy, pool, s);
  if (pool.total_dispatched() != 0) error = "backend reached in replay";
  for (auto kind : {ReportKind::full_mark_table, ReportKind::radar, ReportKind::win_rate_heatmap})
    for (auto fmt : {ReportFormat::csv, ReportFormat::json}) export_report(s, kind, fmt);
  return s.id();
}

std::string files_differ(const fs::path& a, const fs::path& b) {
  std::vector<fs::path> rel;
  for (const auto& e : fs::recursive_directory_iterator(a))
    if (e.is_regular_file()) rel.push_back(fs::relative(e.path(), a));
  std::size_t count_b = 0;
  for (const auto& e : fs::recursive_directory_iterator(b)) count_b += e.is_regular_file();
  if (rel.size() != count_b) return "different file sets";
  for (const auto& r : rel)
    if (slurp(a / r) != slurp(b / r)) return r.string();
  return {};
}

std::string offline_exam() {
  const auto start = Clock::now();
  ReplayExam ex;
  ex.cfg.n_domains = 3;
  ex.cfg.m_per_domain = 10;
  ex.cfg.rounds_k = 2;
  if (ex.cfg.examinees.size() != 2) return "fixture should have two examinees";
  Scratch tmp;
  std::string error;
  try {
    run_replay_exam(ex, tmp.path / "one", error);
    run_replay_exam(ex, tmp.path / "two", error);
  } catch (const Error& e) {
    return e.what();
  }
  if (!error.empty()) return error;
  if (auto d = files_differ(tmp.path / "one/desk-exam", tmp.path / "two/desk-exam"); !d.empty()) return "runs differ at " + d;

  // Reopening replays every integrity check on the logs.
  auto s = open_session(tmp.path / "one", "desk-exam", OpenMode::resume, {false, std::nullopt});
  std::size_t round1 = 0, followups = 0;
  for (const auto& q : s.questions()) {
    if (q.round == 1) {
      ++round1;
      continue;
    }
    ++followups;
    if (!q.parent_response_id || !q.examinee) return "follow-up " + q.id + " lacks lineage";
    const auto parent = s.find_score(*q.parent_response_id, ex.cfg.examiner);
    if (!parent || parent->card.overall != 5) return "follow-up " + q.id + " probes a non-full-mark answer";
    bool answered_by_target = false;
    for (const auto& r : s.responses())
      if (r.question_id == q.id) {
        if (r.examinee != *q.examinee) return "follow-up " + q.id + " answered by another examinee";
        answered_by_target = true;
      }
    if (!answered_by_target) return "follow-up " + q.id + " unanswered";
  }
  if (round1 != 30) return std::to_string(round1) + " round-1 questions";
  if (followups == 0) return "no follow-ups";
  for (const auto& r : s.responses())
    if (!s.find_score(r.id, ex.cfg.examiner)) return "unscored response " + r.id;
  const double t = seconds_since(start);
  if (t >= 60) return "took " + std::to_string(t) + " s";
  return {};
}

std::string crash_resume() {
  const auto start = Clock::now();
  ReplayExam ex;
  Scratch tmp;
  std::size_t appends = 0;
  {
    auto pool = ex.pool();
    auto s = open_session(tmp.path, "clean", OpenMode::create, {false, std::nullopt});
    run_exam_session(ex.cfg, ex.taxonomy, pool, s);
    appends = s.questions().size() + s.responses().size() + s.scores().size() + s.outcomes().size() + s.rankings().size();
  }
  auto logs_of = [&](const std::string& id) {
    std::string all;
    for (auto k : kAllLogs) all += slurp(tmp.path / id / log_file_name(k));
    return all;
  };
  const auto clean = logs_of("clean");

  std::mt19937_64 rng(7);
  std::uniform_int_distribution<std::size_t> pick(0, appends - 1);
  for (int i = 0; i < 5; ++i) {
    const std::size_t point = pick(rng);
    const std::string id = "crash" + std::to_string(i);
    auto pool = ex.pool();
    try {
      auto s = open_session(tmp.path, id, OpenMode::create, {false, CrashPlan{point, i % 2 == 1}});
      run_exam_session(ex.cfg, ex.taxonomy, pool, s);
      return "no crash at " + std::to_string(point);
    } catch (const SimulatedCrash&) {
    }
    {
      std::vector<std::string> warnings;
      auto prev = Warnings::set_sink([&](const std::string& w) { warnings.push_back(w); });
      auto s = open_session(tmp.path, id, OpenMode::resume, {false, std::nullopt});
      run_exam_session(ex.cfg, ex.taxonomy, pool, s);
      Warnings::set_sink(prev);
    }
    if (logs_of(id) != clean) return "session differs after crash at append " + std::to_string(point);
  }
  const double t = seconds_since(start);
  if (t >= 300) return "took " + std::to_string(t) + " s";
  return {};
}

std::string classifier_fixture() {
  std::ifstream in(kFixtures / "classifier.jsonl");
  std::string line;
  int total = 0, correct = 0;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    auto j = nlohmann::json::parse(line);
    ++total;
    correct += to_string(classify_cognitive_level(j["text"].get<std::string>())) == j["level"].get<std::string>();
  }
  if (total != 12) return "fixture has " + std::to_string(total) + " items";
  if (correct < 10) return std::to_string(correct) + "/12";
  return {};
}

}  // namespace

int main() {
  const std::vector<std::pair<std::string, std::function<std::string()>>> criteria = {
      {"1 merge rank over all 5040 permutations of 7", merge_rank_permutations},
      {"2 peer table AVG and AVG_weight", peer_table_averages},
      {"3 spearman/kendall against brute force", correlation_vs_brute_force},
      {"4 scorecard, pairwise and follow-up parsers", parser_fixtures},
      {"5 position and style bias cancel", bias_cancels},
      {"6 offline replay exam", offline_exam},
      {"7 crash and resume at 5 random points", crash_resume},
      {"8 cognitive level classifier", classifier_fixture},
  };
  int failed = 0;
  for (const auto& [name, check] : criteria) {
    std::string why;
    try {
      why = check();
    } catch (const std::exception& e) {
      why = std::string("threw: ") + e.what();
    }
    std::cout << (why.empty() ? "PASS " : "FAIL ") << name << (why.empty() ? "" : " (" + why + ")") << "\n";
    failed += !why.empty();
  }
  return failed ? 1 : 0;
}
