// lmexam command-line entry point.

#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "lmexam/config.hpp"
#include "lmexam/exam.hpp"
#include "lmexam/grading.hpp"
#include "lmexam/peer.hpp"
#include "lmexam/reports.hpp"
#include "lmexam/store.hpp"
#include "lmexam/taxonomy.hpp"

namespace fs = std::filesystem;
using namespace lmexam;

namespace {

struct Globals {
  std::string mode;  // empty: config file, then live
  std::optional<std::uint64_t> seed;
  std::string root;
  std::size_t parallelism = 0;
};

const char* hint(Errc c) {
  switch (c) {
    case Errc::MissingCredential: return "export the variable named by auth_env_var for this provider";
    case Errc::CassetteMiss: return "re-record the cassette with --mode record, or check prompts/config drift";
    case Errc::SessionExists: return "pick another session id or remove the existing directory";
    case Errc::SessionNotFound: return "check --root / LMEXAM_ROOT and the session id";
    case Errc::CorruptLog: return "inspect the named log; only a damaged final line is repaired automatically";
    case Errc::MissingInputs: return "run the pipeline step that produces the missing records first";
    case Errc::UnqualifiedExaminer: return "drop the model from examiner_roles or list it under forced_examiners";
    case Errc::JoinFailure: return "annotation ids must refer to questions/responses of this session";
    case Errc::ConfigError: return "fix the configuration value named above";
    case Errc::TransportFailure: return "check endpoint reachability or raise max_retries";
    case Errc::SampleTooLarge: return "lower --n or extend the taxonomy";
    default: return "see the message above";
  }
}

fs::path session_root(const Globals& g, const RunConfig* rc = nullptr) {
  if (!g.root.empty()) return g.root;
  if (rc && rc->doc.contains("root")) return rc->resolve(rc->doc["root"].get<std::string>());
  if (const char* env = std::getenv("LMEXAM_ROOT"); env && *env) return env;
  return "sessions";
}

Mode resolve_mode(const Globals& g, const RunConfig* rc = nullptr) {
  if (!g.mode.empty()) return parse_mode(g.mode);
  if (rc && rc->doc.contains("mode")) return parse_mode(rc->doc["mode"].get<std::string>());
  return Mode::live;
}

std::size_t resolve_parallelism(const Globals& g, const RunConfig& rc, std::size_t from_config) {
  if (g.parallelism) return g.parallelism;
  if (from_config > 1) return from_config;
  return std::max<std::size_t>(1, rc.providers.size());
}

/// Resumes a session when it exists, otherwise creates it.
Session open_or_create(const fs::path& root, const std::string& id) {
  const bool exists = fs::exists(root / id / "config.json");
  return Session::open(root, id, exists ? OpenMode::resume : OpenMode::create);
}

void print_summary(const nlohmann::json& j) { std::cout << j.dump(2) << "\n"; }

std::string default_examiner(const Session& s) {
  const auto& cfg = s.config();
  if (cfg.contains("exam")) return cfg["exam"].at("examiner").get<std::string>();
  for (const auto& q : s.questions()) return q.examiner;
  fail(Errc::MissingInputs, "cannot infer the examiner; pass --examiner");
}

std::vector<ConsistencyProbe> load_probes(const std::string& path) {
  if (path.empty()) return builtin_probes();
  auto doc = nlohmann::json::parse(read_file(path));
  std::vector<ConsistencyProbe> out;
  for (const auto& p : doc)
    out.push_back(detail::make_probe(p.at("question").get<std::string>(), p.at("better").get<std::string>(),
                                     p.at("worse").get<std::string>()));
  if (out.empty()) fail(Errc::ConfigError, "probe file " + path + " is empty");
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"lmexam: language-model-as-examiner benchmarking"};
  app.require_subcommand(1);
  Globals g;
  app.add_option("--mode", g.mode, "live|record|replay")->check(CLI::IsMember({"live", "record", "replay"}));
  app.add_option("--seed", g.seed, "seed for every randomized step");
  app.add_option("--root", g.root, "session root directory (default: $LMEXAM_ROOT or ./sessions)");
  app.add_option("--parallelism", g.parallelism, "worker threads (default: provider count)");

  std::function<int()> action;

  // taxonomy sample
  auto* taxonomy = app.add_subcommand("taxonomy", "domain taxonomy tools");
  taxonomy->require_subcommand(1);
  std::size_t tax_n = 0;
  std::string tax_file;
  auto* tax_sample = taxonomy->add_subcommand("sample", "print n seeded domain paths");
  tax_sample->add_option("--n", tax_n)->required();
  tax_sample->add_option("--file", tax_file)->required();
  tax_sample->callback([&] {
    action = [&] {
      if (!g.seed) fail(Errc::ConfigError, "taxonomy sample needs --seed");
      for (const auto& d : load_taxonomy(read_file(tax_file)).sample(tax_n, *g.seed)) std::cout << d.display() << "\n";
      return 0;
    };
  });

  // exam run
  auto* exam = app.add_subcommand("exam", "centralized examination");
  exam->require_subcommand(1);
  std::string config_path, session_id;
  auto* exam_run = exam->add_subcommand("run", "generate, answer, grade and follow up");
  exam_run->add_option("--config", config_path)->required();
  exam_run->add_option("--session", session_id, "session id (default: config session_id)");
  exam_run->callback([&] {
    action = [&] {
      const auto rc = RunConfig::load(config_path);
      const auto mode = resolve_mode(g, &rc);
      auto cfg = rc.doc.at("exam").get<ExamConfig>();
      if (g.seed) cfg.seed = *g.seed;
      if (mode == Mode::record && !g.seed && !rc.doc["exam"].contains("seed"))
        fail(Errc::ConfigError, "record mode needs an explicit seed (--seed or exam.seed)");
      cfg.parallelism = resolve_parallelism(g, rc, cfg.parallelism);
      if (!rc.taxonomy) fail(Errc::ConfigError, "exam config needs a taxonomy file");
      const auto tax = load_taxonomy(read_file(*rc.taxonomy));
      auto pool = rc.build_pool(mode);
      const auto id = session_id.empty() ? rc.doc.value("session_id", std::string("exam")) : session_id;
      auto session = open_or_create(session_root(g, &rc), id);
      const auto s = run_exam_session(cfg, tax, pool, session);
      print_summary({{"session", session.dir().string()},
                     {"domains", s.domains},
                     {"questions", s.questions},
                     {"responses", s.responses},
                     {"scores", s.scores},
                     {"rankings", s.rankings},
                     {"item_failures", s.item_failures},
                     {"dispatched", pool.total_dispatched()}});
      return 0;
    };
  });

  // grade score / grade rank
  auto* grade = app.add_subcommand("grade", "grade an existing session");
  grade->require_subcommand(1);
  std::string examiner_flag;
  auto* grade_score = grade->add_subcommand("score", "Likert-score every unscored response");
  auto* grade_rank = grade->add_subcommand("rank", "merge-sort rank the responses to every question");
  for (auto* sub : {grade_score, grade_rank}) {
    sub->add_option("--session", session_id)->required();
    sub->add_option("--config", config_path, "provider config")->required();
    sub->add_option("--examiner", examiner_flag, "judge model id");
  }
  grade_rank->get_option("--examiner")->required();
  auto grade_action = [&](bool rank) {
    action = [&, rank] {
      const auto rc = RunConfig::load(config_path);
      auto pool = rc.build_pool(resolve_mode(g, &rc));
      auto session = Session::open(session_root(g, &rc), session_id, OpenMode::resume);
      Examiner judge{&pool.get(examiner_flag.empty() ? default_examiner(session) : examiner_flag), std::nullopt};
      if (rc.doc.contains("truncation_limits") && rc.doc["truncation_limits"].contains(judge.id()))
        judge.truncation_limit = rc.doc["truncation_limits"][judge.id()].get<std::size_t>();
      std::size_t added = 0, failed = 0;
      const auto questions = session.questions();
      if (!rank) {
        for (const auto& q : questions)
          for (const auto& r : session.responses_for(q.id)) {
            if (session.find_score(r.id, judge.id()) || r.examinee == judge.id()) continue;
            try {
              session.append(score_response(judge, q, r));
              ++added;
            } catch (const Error& e) {
              if (e.code() == Errc::IntegrityViolation || e.code() == Errc::CassetteMiss) throw;
              warn(e.what());
              ++failed;
            }
          }
      } else {
        PairMemo memo([&](const PairwiseOutcome& o) { session.append(o); });
        for (const auto& o : session.outcomes())
          if (o.examiner == judge.id()) memo.preload(o);
        OverallLookup overall_of = [&](const std::string& id) -> std::optional<int> {
          if (auto s = session.find_score(id, judge.id())) return s->card.overall;
          return std::nullopt;
        };
        for (const auto& q : questions) {
          if (session.find_ranking(q.id, judge.id())) continue;
          std::vector<Response> responses;
          for (auto& r : session.responses_for(q.id))
            if (r.examinee != judge.id()) responses.push_back(std::move(r));
          if (responses.size() < 2) continue;
          session.append(rank_responses(judge, q, responses, memo, overall_of));
          ++added;
        }
      }
      print_summary({{"session", session.dir().string()}, {rank ? "rankings_added" : "scores_added", added},
                     {"item_failures", failed}});
      return 0;
    };
  };
  grade_score->callback([&] { grade_action(false); });
  grade_rank->callback([&] { grade_action(true); });

  // peer run / peer bias
  auto* peer = app.add_subcommand("peer", "peer-examination");
  peer->require_subcommand(1);
  auto* peer_run = peer->add_subcommand("run", "every qualified participant examines the others");
  std::string probes_path;
  peer_run->add_option("--config", config_path)->required();
  peer_run->add_option("--session", session_id);
  peer_run->add_option("--probes", probes_path, "qualification probe file (default: built-in set)");
  peer_run->callback([&] {
    action = [&] {
      const auto rc = RunConfig::load(config_path);
      const auto mode = resolve_mode(g, &rc);
      auto cfg = rc.doc.at("peer").get<PeerConfig>();
      if (g.seed) cfg.seed = *g.seed;
      if (mode == Mode::record && !g.seed && !rc.doc["peer"].contains("seed") && cfg.domains.empty())
        fail(Errc::ConfigError, "record mode needs an explicit seed (--seed or peer.seed)");
      cfg.parallelism = resolve_parallelism(g, rc, cfg.parallelism);
      std::optional<DomainTaxonomy> tax;
      if (rc.taxonomy) tax = load_taxonomy(read_file(*rc.taxonomy));
      auto pool = rc.build_pool(mode);
      const auto probes = load_probes(probes_path.empty() ? "" : rc.resolve(probes_path).string());
      const auto id = session_id.empty() ? rc.doc.value("session_id", std::string("peer")) : session_id;
      auto session = open_or_create(session_root(g, &rc), id);
      const auto s = run_peer_examination(cfg, tax ? &*tax : nullptr, pool, session, probes);
      nlohmann::json qual = nlohmann::json::object();
      for (const auto& [m, q] : s.qualification) qual[m] = {{"pass", q.pass}, {"rate", q.rate}};
      print_summary({{"session", session.dir().string()},
                     {"examiners", s.examiners},
                     {"qualification", qual},
                     {"questions", s.questions},
                     {"responses", s.responses},
                     {"scores", s.scores},
                     {"item_failures", s.item_failures}});
      return 0;
    };
  });

  auto* peer_bias = peer->add_subcommand("bias", "rephrase-bias experiment on a finished session");
  std::string source_id, rewriter, judges_csv, keep_path, source_examinee, out_id;
  peer_bias->add_option("--source", source_id)->required();
  peer_bias->add_option("--rewriter", rewriter)->required();
  peer_bias->add_option("--judges", judges_csv, "comma-separated judge model ids")->required();
  peer_bias->add_option("--config", config_path, "provider config")->required();
  peer_bias->add_option("--examinee", source_examinee, "only rewrite this examinee's answers");
  peer_bias->add_option("--keep", keep_path, "file of response ids to keep, one per line");
  peer_bias->add_option("--session", out_id, "output session id (default: <source>-bias)");
  peer_bias->callback([&] {
    action = [&] {
      const auto rc = RunConfig::load(config_path);
      auto pool = rc.build_pool(resolve_mode(g, &rc));
      const auto root = session_root(g, &rc);
      auto source = Session::open(root, source_id, OpenMode::resume);
      std::vector<SourceItem> items;
      for (const auto& r : source.responses())
        if (source_examinee.empty() || r.examinee == source_examinee)
          items.push_back({*source.find_question(r.question_id), r});
      std::optional<std::set<std::string>> keep;
      if (!keep_path.empty()) {
        keep.emplace();
        const auto content = read_file(keep_path);
        for (auto line : split_lines(content))
          if (auto t = trim(line); !t.empty()) keep->insert(std::string(t));
      }
      std::vector<Examiner> judges;
      for (const auto& id : split(judges_csv, ',')) judges.push_back({&pool.get(std::string(trim(id))), std::nullopt});
      auto out = open_or_create(root, out_id.empty() ? source_id + "-bias" : out_id);
      if (out.config().empty())
        out.set_config({{"kind", "rephrase_bias"}, {"source", source_id}, {"rewriter", rewriter}, {"judges", judges_csv}});
      const auto rep = rephrase_bias_experiment(items, pool.get(rewriter), judges, keep, &out);
      const auto j = bias_report_json(rep);
      write_file_atomic(out.reports_dir() / "rephrase_bias.json", j.dump(2) + "\n");
      out.set_status(SessionStatus::complete);
      print_summary(j);
      return 0;
    };
  });

  // metric-eval
  auto* metric = app.add_subcommand("metric-eval", "correlate judge output with human annotations");
  std::string annotations_path;
  metric->add_option("--session", session_id)->required();
  metric->add_option("--annotations", annotations_path)->required();
  metric->add_option("--examiner", examiner_flag);
  metric->callback([&] {
    action = [&] {
      auto session = Session::open(session_root(g), session_id, OpenMode::resume);
      const auto ann = load_annotations(annotations_path);
      std::optional<std::string> ex;
      if (!examiner_flag.empty()) ex = examiner_flag;
      const auto rep = metric_eval(session, ann, ex);
      save_metric_eval(session, rep);
      std::cout << read_file(metric_eval_path(session));
      return 0;
    };
  });

  // report export
  auto* report = app.add_subcommand("report", "report exports");
  report->require_subcommand(1);
  std::string kind, format = "csv";
  auto* report_export = report->add_subcommand("export", "write reports/<kind>.<format>");
  report_export->add_option("--session", session_id)->required();
  report_export->add_option("--kind", kind)->required();
  report_export->add_option("--format", format)->check(CLI::IsMember({"csv", "json"}));
  report_export->callback([&] {
    action = [&] {
      auto session = Session::open(session_root(g), session_id, OpenMode::resume);
      std::cout << export_report(session, parse_report_kind(kind), parse_report_format(format)).string() << "\n";
      return 0;
    };
  });

  // provider qualify
  auto* provider = app.add_subcommand("provider", "provider checks");
  provider->require_subcommand(1);
  std::string model;
  double threshold = 0.8;
  auto* qualify = provider->add_subcommand("qualify", "pairwise consistency check for a judge");
  qualify->add_option("--config", config_path)->required();
  qualify->add_option("--model", model)->required();
  qualify->add_option("--probes", probes_path);
  qualify->add_option("--threshold", threshold);
  qualify->callback([&] {
    action = [&] {
      const auto rc = RunConfig::load(config_path);
      auto pool = rc.build_pool(resolve_mode(g, &rc));
      Examiner judge{&pool.get(model), std::nullopt};
      const auto probes = load_probes(probes_path);
      const auto q = qualify_examiner_consistency(judge, probes, threshold);
      print_summary({{"model", model}, {"pass", q.pass}, {"rate", q.rate}, {"consistent", q.consistent}, {"total", q.total}});
      return q.pass ? 0 : 1;
    };
  });

  // cassette verify
  auto* cassette = app.add_subcommand("cassette", "cassette tools");
  cassette->require_subcommand(1);
  std::string cassette_path;
  auto* verify = cassette->add_subcommand("verify", "check cassette records against provider configs");
  verify->add_option("--cassette", cassette_path)->required();
  verify->add_option("--config", config_path, "recompute fingerprints with these provider settings");
  verify->callback([&] {
    action = [&] {
      const auto tape = Cassette::load(cassette_path);
      std::size_t stale = 0, unknown = 0;
      if (!config_path.empty()) {
        const auto rc = RunConfig::load(config_path);
        std::map<std::string, ProviderConfig> by_id;
        for (const auto& p : rc.providers) by_id[p.model_id] = p;
        for (const auto& e : tape.entries()) {
          auto it = by_id.find(e.model_id);
          if (it == by_id.end()) {
            ++unknown;
            warn("record for unconfigured model '" + e.model_id + "'");
          } else if (request_fingerprint(it->second, e.prompt) != e.fingerprint) {
            ++stale;
            warn("fingerprint mismatch for a " + e.model_id + " record (settings drifted since recording)");
          }
        }
      }
      print_summary({{"entries", tape.size()}, {"stale", stale}, {"unknown_model", unknown}});
      return stale || unknown ? 1 : 0;
    };
  });

  // prompts export
  auto* prompts = app.add_subcommand("prompts", "prompt templates");
  prompts->require_subcommand(1);
  std::string prompts_dir;
  auto* prompts_export = prompts->add_subcommand("export", "write every template body to a directory");
  prompts_export->add_option("--dir", prompts_dir)->required();
  prompts_export->callback([&] {
    action = [&] {
      write_prompt_files(prompts_dir);
      std::cout << prompts_dir << "\n";
      return 0;
    };
  });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  try {
    return action ? action() : 2;
  } catch (const Error& e) {
    std::cerr << "error [" << to_string(e.code()) << "]: " << e.what() << "\n  hint: " << hint(e.code()) << "\n";
    return 1;
  } catch (const nlohmann::json::exception& e) {
    std::cerr << "error [ConfigError]: " << e.what() << "\n  hint: " << hint(Errc::ConfigError) << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
