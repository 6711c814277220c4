#pragma once

#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "lmexam/analytics.hpp"
#include "lmexam/error.hpp"
#include "lmexam/peer.hpp"
#include "lmexam/records.hpp"
#include "lmexam/store.hpp"

namespace lmexam {

enum class ReportKind { full_mark_table, win_rate_heatmap, radar, peer_table, correlation };
enum class ReportFormat { csv, json };

inline constexpr std::array kAllReportKinds = {ReportKind::full_mark_table, ReportKind::win_rate_heatmap,
                                               ReportKind::radar, ReportKind::peer_table, ReportKind::correlation};

inline std::string_view to_string(ReportKind k) {
  switch (k) {
    case ReportKind::full_mark_table: return "full_mark_table";
    case ReportKind::win_rate_heatmap: return "win_rate_heatmap";
    case ReportKind::radar: return "radar";
    case ReportKind::peer_table: return "peer_table";
    case ReportKind::correlation: return "correlation";
  }
  return "?";
}

inline ReportKind parse_report_kind(std::string_view s) {
  for (auto k : kAllReportKinds)
    if (to_string(k) == s) return k;
  fail(Errc::ConfigError, "unknown report kind '" + std::string(s) + "'");
}

inline ReportFormat parse_report_format(std::string_view s) {
  if (s == "csv") return ReportFormat::csv;
  if (s == "json") return ReportFormat::json;
  fail(Errc::ConfigError, "unknown report format '" + std::string(s) + "' (expected csv|json)");
}

namespace detail {

using ojson = nlohmann::ordered_json;

inline std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n\r") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out.push_back('"');
    out.push_back(c);
  }
  out.push_back('"');
  return out;
}

inline std::string csv_row(const std::vector<std::string>& fields) {
  std::string line;
  for (std::size_t i = 0; i < fields.size(); ++i) {
    if (i) line.push_back(',');
    line += csv_field(fields[i]);
  }
  return line + "\n";
}

inline std::string opt1(const std::optional<double>& v) { return v ? format1(*v) : ""; }
inline ojson jopt1(const std::optional<double>& v) { return v ? ojson(round1(*v)) : ojson(nullptr); }

inline std::string format3(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3f", std::round(v * 1000.0) / 1000.0);
  return buf;
}

/// Examinee labels in configured order, then any others by first appearance.
inline std::vector<std::string> examinee_labels(const Session& s) {
  std::vector<std::string> out;
  auto add = [&](const std::string& l) {
    if (std::find(out.begin(), out.end(), l) == out.end()) out.push_back(l);
  };
  const auto& cfg = s.config();
  if (cfg.contains("exam"))
    for (const auto& e : cfg["exam"].at("examinees")) add(e.get<Examinee>().label());
  if (cfg.contains("peer"))
    for (const auto& e : cfg["peer"].at("participants")) add(e.get<Examinee>().label());
  for (const auto& r : s.responses()) add(r.label());
  return out;
}

inline std::vector<std::string> examiner_ids(const Session& s) {
  std::vector<std::string> out;
  for (const auto& sc : s.scores())
    if (std::find(out.begin(), out.end(), sc.examiner) == out.end()) out.push_back(sc.examiner);
  return out;
}

struct Rendered {
  std::string csv;
  ojson json;
};

inline Rendered render_full_mark(const Session& s) {
  if (s.scores().empty()) fail(Errc::MissingInputs, "full_mark_table needs scorecards; run grading first");
  std::map<std::tuple<std::string, std::string, int>, std::vector<std::pair<ScoreCard, CognitiveLevel>>> groups;
  for (const auto& sc : s.scores()) {
    const auto r = s.find_response(sc.response_id);
    const auto q = s.find_question(sc.question_id);
    groups[{sc.examiner, r->label(), q->round}].emplace_back(sc.card, q->level);
  }
  Rendered out;
  out.csv = csv_row({"examiner", "examinee", "round", "n", "overall", "memorization", "comprehension", "analysis"});
  out.json = ojson::array();
  const auto labels = examinee_labels(s);
  for (const auto& examiner : examiner_ids(s))
    for (const auto& label : labels)
      for (int round = 1;; ++round) {
        auto it = groups.find({examiner, label, round});
        if (it == groups.end()) {
          bool later = false;
          for (const auto& [k, v] : groups)
            if (std::get<0>(k) == examiner && std::get<1>(k) == label && std::get<2>(k) > round) later = true;
          if (!later) break;
          continue;
        }
        const auto rep = full_mark_rate(it->second);
        auto level = [&](CognitiveLevel l) -> std::optional<double> {
          auto f = rep.per_level.find(l);
          return f == rep.per_level.end() ? std::nullopt : std::optional<double>(f->second);
        };
        out.csv += csv_row({examiner, label, std::to_string(round), std::to_string(rep.total), opt1(rep.overall),
                            opt1(level(CognitiveLevel::memorization)), opt1(level(CognitiveLevel::comprehension)),
                            opt1(level(CognitiveLevel::analysis))});
        ojson row;
        row["examiner"] = examiner;
        row["examinee"] = label;
        row["round"] = round;
        row["n"] = rep.total;
        row["overall"] = jopt1(rep.overall);
        for (auto l : kAllLevels) row[std::string(to_string(l))] = jopt1(level(l));
        out.json.push_back(row);
      }
  return out;
}

inline Rendered render_radar(const Session& s) {
  if (s.scores().empty()) fail(Errc::MissingInputs, "radar needs scorecards; run grading first");
  std::map<std::pair<std::string, std::string>, std::vector<ScoreCard>> groups;
  for (const auto& sc : s.scores()) groups[{sc.examiner, s.find_response(sc.response_id)->label()}].push_back(sc.card);
  Rendered out;
  out.csv = csv_row({"examiner", "examinee", "n", "accuracy", "coherence", "factuality", "comprehensiveness", "overall"});
  out.json = ojson::array();
  for (const auto& examiner : examiner_ids(s))
    for (const auto& label : examinee_labels(s)) {
      auto it = groups.find({examiner, label});
      if (it == groups.end()) continue;
      const auto m = dimension_means(it->second);
      out.csv += csv_row({examiner, label, std::to_string(it->second.size()), format1(m.accuracy), format1(m.coherence),
                          format1(m.factuality), format1(m.comprehensiveness), format1(m.overall)});
      ojson row;
      row["examiner"] = examiner;
      row["examinee"] = label;
      row["n"] = it->second.size();
      row["accuracy"] = round1(m.accuracy);
      row["coherence"] = round1(m.coherence);
      row["factuality"] = round1(m.factuality);
      row["comprehensiveness"] = round1(m.comprehensiveness);
      row["overall"] = round1(m.overall);
      out.json.push_back(row);
    }
  return out;
}

/// Cells are percentages (fraction of i's wins over j times 100).
inline Rendered render_heatmap(const Session& s) {
  if (s.rankings().empty()) fail(Errc::MissingInputs, "win_rate_heatmap needs rankings; run `grade rank` first");
  const auto labels = examinee_labels(s);
  auto m = win_rate_matrix(labels, std::span<const Ranking>(s.rankings()),
                           [&](const std::string& id) { return s.find_response(id)->label(); });
  const auto avg = m.size() >= 2 ? average_win_rate(m) : std::vector<std::optional<double>>(m.size());

  Rendered out;
  std::vector<std::string> header{"model"};
  header.insert(header.end(), labels.begin(), labels.end());
  header.push_back("average");
  out.csv = csv_row(header);
  ojson cells = ojson::array(), counts = ojson::array(), average = ojson::array();
  for (std::size_t i = 0; i < m.size(); ++i) {
    std::vector<std::string> row{labels[i]};
    ojson jrow = ojson::array(), crow = ojson::array();
    for (std::size_t j = 0; j < m.size(); ++j) {
      auto c = m.cell(i, j);
      row.push_back(c ? format1(*c * 100.0) : "");
      jrow.push_back(c ? ojson(round1(*c * 100.0)) : ojson(nullptr));
      crow.push_back(m.counts[i][j]);
    }
    const auto a = avg[i] ? std::optional<double>(*avg[i] * 100.0) : std::nullopt;
    row.push_back(opt1(a));
    out.csv += csv_row(row);
    cells.push_back(jrow);
    counts.push_back(crow);
    average.push_back(jopt1(a));
  }
  out.json = ojson{{"models", labels}, {"cells", cells}, {"counts", counts}, {"average", average}};
  return out;
}

inline Rendered render_score_table(const ScoreTable& table) {
  const auto avgs = weighted_column_average(table);
  Rendered out;
  std::vector<std::string> header{"examinee"};
  header.insert(header.end(), table.examiners.begin(), table.examiners.end());
  header.push_back("AVG");
  header.push_back("AVG_weight");
  out.csv = csv_row(header);
  ojson rows = ojson::array();
  for (std::size_t i = 0; i < table.examinees.size(); ++i) {
    std::vector<std::string> row{table.examinees[i]};
    ojson cells = ojson::array();
    for (const auto& v : table.values[i]) {
      row.push_back(opt1(v));
      cells.push_back(jopt1(v));
    }
    row.push_back(format1(avgs[i].avg));
    row.push_back(format1(avgs[i].avg_weight));
    out.csv += csv_row(row);
    rows.push_back(ojson{{"examinee", table.examinees[i]},
                         {"cells", cells},
                         {"AVG", round1(avgs[i].avg)},
                         {"AVG_weight", round1(avgs[i].avg_weight)}});
  }
  out.json = ojson{{"examiners", table.examiners}, {"rows", rows}};
  return out;
}

inline std::string text_of(const Rendered& r, ReportFormat f) {
  return f == ReportFormat::csv ? r.csv : r.json.dump(2) + "\n";
}

}  // namespace detail

/// Peer table layout for an arbitrary score table.
inline std::string format_score_table(const ScoreTable& table, ReportFormat format) {
  return detail::text_of(detail::render_score_table(table), format);
}

// ---------------------------------------------------------------------------
// Human-annotation metric evaluation

struct Annotation {
  std::string question_id;
  std::optional<std::string> response_id;
  std::optional<std::pair<std::string, std::string>> response_pair;
  std::optional<int> overall_score;
  std::optional<PairwiseChoice> choice;
  std::string annotator_id;
};

inline std::vector<Annotation> load_annotations(const fs::path& path) {
  std::ifstream in(path);
  if (!in) fail(Errc::ConfigError, "cannot read annotations " + path.string());
  std::vector<Annotation> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    const auto where = path.string() + ":" + std::to_string(line_no);
    try {
      auto j = nlohmann::json::parse(line);
      Annotation a;
      j.at("question_id").get_to(a.question_id);
      a.annotator_id = j.value("annotator_id", std::string{});
      if (j.contains("response_ids")) {
        auto ids = j["response_ids"].get<std::vector<std::string>>();
        if (ids.size() != 2) fail(Errc::ConfigError, where + ": response_ids must hold exactly two ids");
        a.response_pair = std::pair{ids[0], ids[1]};
        a.choice = parse_choice_label(j.at("choice").get<std::string>());
      } else {
        a.response_id = j.at("response_id").get<std::string>();
        a.overall_score = j.at("overall_score").get<int>();
        if (*a.overall_score < 1 || *a.overall_score > 5)
          fail(Errc::OutOfRange, where + ": overall_score must be in 1..5");
      }
      out.push_back(std::move(a));
    } catch (const nlohmann::json::exception& e) {
      fail(Errc::ConfigError, where + ": " + e.what());
    }
  }
  return out;
}

/// Joins human labels with the session's judge output. Score annotations pair
/// a human overall score with the judge's; pair annotations compare the human
/// choice with the judge's outcome (or ranking order when no outcome exists).
inline CorrelationReport metric_eval(const Session& session, std::span<const Annotation> annotations,
                                     std::optional<std::string> examiner = std::nullopt) {
  if (!examiner) {
    const auto ids = detail::examiner_ids(session);
    if (ids.empty() && !session.outcomes().empty()) examiner = session.outcomes().front().examiner;
    if (!ids.empty()) examiner = ids.front();
    if (!examiner) fail(Errc::MissingInputs, "session has no judge output to evaluate");
  }
  auto response_in = [&](const std::string& rid, const std::string& qid) {
    auto r = session.find_response(rid);
    if (!r) fail(Errc::JoinFailure, "annotation references unknown response " + rid);
    if (r->question_id != qid) fail(Errc::JoinFailure, "response " + rid + " does not answer question " + qid);
  };

  std::vector<double> human, judge;
  std::vector<std::string> human_choice, judge_choice;
  for (const auto& a : annotations) {
    if (!session.find_question(a.question_id))
      fail(Errc::JoinFailure, "annotation references unknown question " + a.question_id);
    if (a.response_id) {
      response_in(*a.response_id, a.question_id);
      auto s = session.find_score(*a.response_id, *examiner);
      if (!s) fail(Errc::JoinFailure, "response " + *a.response_id + " has no score from " + *examiner);
      human.push_back(*a.overall_score);
      judge.push_back(s->card.overall);
    } else {
      const auto& [x, y] = *a.response_pair;
      response_in(x, a.question_id);
      response_in(y, a.question_id);
      std::string predicted = "tie";
      if (auto o = session.find_outcome(a.question_id, *examiner, x, y)) {
        if (o->first_win_fraction > 0.5) predicted = "first";
        if (o->first_win_fraction < 0.5) predicted = "second";
      } else if (auto r = session.find_ranking(a.question_id, *examiner)) {
        auto px = std::find(r->order.begin(), r->order.end(), x);
        auto py = std::find(r->order.begin(), r->order.end(), y);
        if (px == r->order.end() || py == r->order.end())
          fail(Errc::JoinFailure, "ranking of " + a.question_id + " lacks " + x + " or " + y);
        predicted = px < py ? "first" : "second";
      } else {
        fail(Errc::JoinFailure, "no judge comparison of " + x + " and " + y);
      }
      judge_choice.push_back(predicted);
      human_choice.push_back(std::string(to_string(*a.choice)));
    }
  }

  CorrelationReport rep;
  rep.n_samples = human.size();
  rep.n_pairs = human_choice.size();
  if (!human.empty()) {
    rep.spearman_rho = spearman_rho(human, judge);
    rep.kendall_tau = kendall_tau(human, judge);
  }
  if (!human_choice.empty())
    rep.pairwise_accuracy = pairwise_accuracy<std::string>(judge_choice, human_choice);
  if (human.empty() && human_choice.empty()) fail(Errc::EmptyInput, "annotation file is empty");
  return rep;
}

inline fs::path metric_eval_path(const Session& s) { return s.reports_dir() / "metric_eval.json"; }

/// Keeps the result so `report export --kind correlation` can format it.
inline void save_metric_eval(const Session& s, const CorrelationReport& rep) {
  detail::ojson j;
  j["n_samples"] = rep.n_samples;
  j["n_pairs"] = rep.n_pairs;
  j["spearman_rho"] = rep.n_samples ? detail::ojson(rep.spearman_rho) : detail::ojson(nullptr);
  j["kendall_tau"] = rep.n_samples ? detail::ojson(rep.kendall_tau) : detail::ojson(nullptr);
  j["pairwise_accuracy"] = rep.pairwise_accuracy ? detail::ojson(*rep.pairwise_accuracy) : detail::ojson(nullptr);
  write_file_atomic(metric_eval_path(s), j.dump(2) + "\n");
}

namespace detail {

inline Rendered render_correlation(const Session& s) {
  if (!fs::exists(metric_eval_path(s)))
    fail(Errc::MissingInputs, "correlation needs human annotations; run `metric-eval` first");
  auto stored = nlohmann::json::parse(read_file(metric_eval_path(s)));
  auto num = [&](const char* key) -> std::optional<double> {
    if (stored.at(key).is_null()) return std::nullopt;
    return stored[key].get<double>();
  };
  Rendered out;
  out.csv = csv_row({"statistic", "value"});
  out.json = ojson::object();
  for (const char* key : {"spearman_rho", "kendall_tau", "pairwise_accuracy"}) {
    auto v = num(key);
    out.csv += csv_row({key, v ? format3(*v) : ""});
    out.json[key] = v ? ojson(std::stod(format3(*v))) : ojson(nullptr);
  }
  for (const char* key : {"n_samples", "n_pairs"}) {
    out.csv += csv_row({key, std::to_string(stored.at(key).get<std::size_t>())});
    out.json[key] = stored[key].get<std::size_t>();
  }
  return out;
}

}  // namespace detail

/// Writes reports/<kind>.<csv|json> and returns its path. Output depends only
/// on the session contents.
inline fs::path export_report(const Session& session, ReportKind kind, ReportFormat format) {
  detail::Rendered r;
  switch (kind) {
    case ReportKind::full_mark_table: r = detail::render_full_mark(session); break;
    case ReportKind::radar: r = detail::render_radar(session); break;
    case ReportKind::win_rate_heatmap: r = detail::render_heatmap(session); break;
    case ReportKind::peer_table:
      if (session.scores().empty()) fail(Errc::MissingInputs, "peer_table needs scorecards");
      r = detail::render_score_table(peer_score_table(session));
      break;
    case ReportKind::correlation: r = detail::render_correlation(session); break;
  }
  const auto path = session.reports_dir() / (std::string(to_string(kind)) + (format == ReportFormat::csv ? ".csv" : ".json"));
  fs::create_directories(path.parent_path());
  write_file_atomic(path, detail::text_of(r, format));
  return path;
}

}  // namespace lmexam
