// Command line front end: ingestion, budget planning, synthesis, utility
// evaluation, the planted-toy generator, and the grouped confidence
// interval demo. Error classes map onto exit codes: config 2, data 3,
// budget 4, anything else 1.

#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "permsyn/errors.hpp"
#include "permsyn/eval.hpp"
#include "permsyn/orchestrator.hpp"

namespace {

using nlohmann::json;

double parse_double(const std::string& text, const std::string& what) {
  try {
    std::size_t pos = 0;
    double v = std::stod(text, &pos);
    if (pos != text.size()) throw std::invalid_argument(text);
    return v;
  } catch (const std::exception&) {
    throw permsyn::ConfigError(what + ": expected a number, got '" + text + "'");
  }
}

int parse_int(const std::string& text, const std::string& what) {
  try {
    std::size_t pos = 0;
    int v = std::stoi(text, &pos);
    if (pos != text.size()) throw std::invalid_argument(text);
    return v;
  } catch (const std::exception&) {
    throw permsyn::ConfigError(what + ": expected an integer, got '" + text + "'");
  }
}

// Repeatable "label=value" flags.
std::pair<std::string, std::string> split_kv(const std::string& text, const std::string& what) {
  auto eq = text.rfind('=');
  if (eq == std::string::npos || eq == 0)
    throw permsyn::ConfigError(what + ": expected label=value, got '" + text + "'");
  return {text.substr(0, eq), text.substr(eq + 1)};
}

std::vector<std::string> split_list(const std::string& text) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (start <= text.size()) {
    auto comma = text.find(',', start);
    if (comma == std::string::npos) comma = text.size();
    out.push_back(text.substr(start, comma - start));
    start = comma + 1;
  }
  return out;
}

json load_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw permsyn::ConfigError("cannot open " + path);
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw permsyn::ConfigError(path + ": " + e.what());
  }
  return j;
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw permsyn::DataError("cannot write " + path);
  out << text;
}

void ensure_dir(const std::string& path) {
  std::error_code ec;
  std::filesystem::create_directories(path, ec);
  if (ec) throw permsyn::DataError("cannot create directory " + path + ": " + ec.message());
}

// Everything a synthesis run needs. The manifest written next to the output
// CSVs serializes all of it, so rerunning with --config manifest.json
// reproduces the same CSVs byte for byte.
struct RunConfig {
  std::string schema, data, out;
  double epsilon = 0.0;
  bool have_epsilon = false;
  bool delta_auto = true;
  double delta = 0.0;
  int threads = 0;  // 0 means unresolved; PERMSYN_THREADS then 1
  permsyn::SynthesisConfig cfg;
};

void apply_delta_text(RunConfig& rc, const std::string& text) {
  if (text == "auto") {
    rc.delta_auto = true;
    return;
  }
  rc.delta_auto = false;
  rc.delta = parse_double(text, "--delta");
}

// Accepts both a hand-written config file and a previous run's manifest
// (whose input paths sit under "inputs" and whose delta is already a number).
void apply_config_file(RunConfig& rc, const json& j) {
  try {
    if (j.contains("inputs")) {
      const json& in = j.at("inputs");
      if (in.contains("schema")) rc.schema = in.at("schema").get<std::string>();
      if (in.contains("data")) rc.data = in.at("data").get<std::string>();
    }
    if (j.contains("schema")) rc.schema = j.at("schema").get<std::string>();
    if (j.contains("data")) rc.data = j.at("data").get<std::string>();
    if (j.contains("out")) rc.out = j.at("out").get<std::string>();
    if (j.contains("epsilon")) {
      rc.epsilon = j.at("epsilon").get<double>();
      rc.have_epsilon = true;
    }
    if (j.contains("delta")) {
      if (j.at("delta").is_string()) {
        apply_delta_text(rc, j.at("delta").get<std::string>());
      } else {
        rc.delta_auto = false;
        rc.delta = j.at("delta").get<double>();
      }
    }
    // threads is deliberately not read back: the manifest entry records what
    // ran, but worker caps belong to the invoking environment, and output
    // never depends on them.
    if (j.contains("seed")) rc.cfg.seed = j.at("seed").get<std::uint64_t>();
    if (j.contains("config")) {
      const json& c = j.at("config");
      permsyn::SynthesisConfig& s = rc.cfg;
      if (c.contains("o")) s.o = c.at("o").get<int>();
      if (c.contains("k")) s.k = c.at("k").get<int>();
      if (c.contains("t2")) s.t2 = c.at("t2").get<int>();
      if (c.contains("t1")) s.t1 = c.at("t1").get<int>();
      if (c.contains("n_correlated")) s.n_correlated = c.at("n_correlated").get<int>();
      if (c.contains("max_clique_attrs")) s.max_clique_attrs = c.at("max_clique_attrs").get<int>();
      if (c.contains("lambda_useful")) s.lambda_useful = c.at("lambda_useful").get<double>();
      if (c.contains("merge_lo")) s.merge_lo = c.at("merge_lo").get<int>();
      if (c.contains("cell_cap")) s.cell_cap = c.at("cell_cap").get<std::int64_t>();
      if (c.contains("ipf_max_sweeps")) s.ipf_max_sweeps = c.at("ipf_max_sweeps").get<int>();
      if (c.contains("ipf_tol")) s.ipf_tol = c.at("ipf_tol").get<double>();
      if (c.contains("seed")) s.seed = c.at("seed").get<std::uint64_t>();
      if (c.contains("stage_weights"))
        s.stage_weights = c.at("stage_weights").get<std::map<std::string, double>>();
      if (c.contains("tau_override"))
        s.tau_override = c.at("tau_override").get<std::map<std::string, int>>();
    }
  } catch (const json::exception& e) {
    throw permsyn::ConfigError(std::string("config: ") + e.what());
  }
}

int env_threads() {
  const char* v = std::getenv("PERMSYN_THREADS");
  if (!v || !*v) return 0;
  int n = parse_int(v, "PERMSYN_THREADS");
  if (n < 1) throw permsyn::ConfigError("PERMSYN_THREADS must be at least 1");
  return n;
}

// delta 'auto' is one over the size of the secondary relation; with several
// secondaries the largest row count wins (the smallest delta), and a lone
// primary relation falls back to its own size.
double resolve_delta(const permsyn::Database& db) {
  std::size_t n = 0;
  for (const auto& s : db.schemas)
    if (s.privacy == permsyn::PrivacyClass::Secondary) n = std::max(n, db.rows(s.name).size());
  if (n == 0)
    for (const auto& s : db.schemas)
      if (s.privacy == permsyn::PrivacyClass::Primary) n = std::max(n, db.rows(s.name).size());
  if (n == 0)
    throw permsyn::ConfigError(
        "delta auto needs a private relation with rows; pass a numeric --delta");
  return 1.0 / static_cast<double>(n);
}

int cmd_synthesize(RunConfig rc, bool verbose) {
  if (rc.schema.empty()) throw permsyn::ConfigError("synthesize: a schema file is required (--schema)");
  if (rc.data.empty()) throw permsyn::ConfigError("synthesize: a data directory is required (--data)");
  if (rc.out.empty()) throw permsyn::ConfigError("synthesize: an output directory is required (--out)");
  if (!rc.have_epsilon) throw permsyn::ConfigError("synthesize: --epsilon is required");
  if (rc.threads < 1) throw permsyn::ConfigError("--threads must be at least 1");

  permsyn::Database db = permsyn::load_database(rc.schema, rc.data);
  const double delta = rc.delta_auto ? resolve_delta(db) : rc.delta;
  permsyn::SynthesisResult res =
      permsyn::synthesize_database(db, rc.epsilon, delta, rc.cfg, verbose ? &std::cerr : nullptr);

  ensure_dir(rc.out);
  permsyn::save_database(res.synthetic, rc.out);

  json manifest = std::move(res.manifest);
  manifest["command"] = "synthesize";
  manifest["inputs"] = {{"schema", rc.schema}, {"data", rc.data}};
  manifest["out"] = rc.out;
  manifest["threads"] = rc.threads;
  if (rc.delta_auto) manifest["delta_requested"] = "auto";
  write_text(rc.out + "/manifest.json", manifest.dump(2) + "\n");

  json ledger{{"budget", res.plan.budget},
              {"effective_total", res.ledger.effective_total()},
              {"charges", res.ledger.to_json()}};
  write_text(rc.out + "/ledger.json", ledger.dump(2) + "\n");

  for (const auto& s : res.synthetic.schemas)
    std::cout << s.name << ": " << res.synthetic.rows(s.name).size() << " rows\n";
  std::cout << "privacy cost " << res.ledger.effective_total() << " of budget " << res.plan.budget
            << "\noutputs in " << rc.out << "\n";
  return 0;
}

struct EvalArgs {
  std::string schema, real_dir, syn_dir, out, individual, fk;
  int queries = 1000;
  double selectivity = 0.05;
  int c = 1;
  std::uint64_t seed = 1;
  bool allow_repeat = false;
};

int cmd_evaluate(const EvalArgs& a) {
  if (a.schema.empty()) throw permsyn::ConfigError("evaluate: a schema file is required (--schema)");
  if (a.real_dir.empty()) throw permsyn::ConfigError("evaluate: --real directory is required");
  if (a.syn_dir.empty()) throw permsyn::ConfigError("evaluate: --synthetic directory is required");
  permsyn::Database real_db = permsyn::load_database(a.schema, a.real_dir);
  permsyn::Database syn_db = permsyn::load_database(a.schema, a.syn_dir);

  std::string individual = a.individual, fk = a.fk;
  if (individual.empty() || fk.empty()) {
    std::vector<std::pair<std::string, std::string>> cands;
    for (const auto& s : real_db.schemas) {
      if (!individual.empty() && s.name != individual) continue;
      for (const auto& f : s.foreign_keys) cands.push_back({s.name, f.attribute});
    }
    if (cands.empty())
      throw permsyn::ConfigError("evaluate: no foreign key to group by; pass --individual and --fk");
    if (cands.size() > 1)
      throw permsyn::ConfigError(
          "evaluate: several foreign keys qualify; pass --individual and --fk");
    individual = cands[0].first;
    fk = cands[0].second;
  }

  // Queries are drawn against the real database's flattened form so their
  // group sizes and value sets reflect the data actually being compared.
  permsyn::Database aug = real_db;
  permsyn::augment_size_attribute(aug, individual, fk);
  permsyn::FlattenedRelation fr = permsyn::flatten(aug, individual, fk);
  permsyn::KeyedRng rng(a.seed, "evaluate");
  std::vector<permsyn::GroupQuery> qs = permsyn::gen_queries(fr, a.queries, a.selectivity, a.c, rng);
  if (a.allow_repeat)
    for (auto& q : qs) q.distinct = false;

  const permsyn::RelationSchema& cs = real_db.schema(individual);
  const permsyn::RelationSchema& ps =
      real_db.schema(cs.foreign_keys[static_cast<std::size_t>(cs.fk_index(fk))].references);
  std::vector<std::pair<int, int>> inter, intra;
  for (int h = 0; h < static_cast<int>(ps.attributes.size()); ++h)
    for (int i = 0; i < static_cast<int>(cs.attributes.size()); ++i) inter.push_back({h, i});
  for (int i = 0; i < static_cast<int>(cs.attributes.size()); ++i)
    for (int j = i; j < static_cast<int>(cs.attributes.size()); ++j) intra.push_back({i, j});

  json report = permsyn::eval_report(real_db, syn_db, individual, fk, qs, inter, intra);
  report["params"] = {{"schema", a.schema},
                      {"real", a.real_dir},
                      {"synthetic", a.syn_dir},
                      {"queries", a.queries},
                      {"selectivity", a.selectivity},
                      {"c", a.c},
                      {"seed", a.seed},
                      {"individual", individual},
                      {"fk_attribute", fk},
                      {"distinct", !a.allow_repeat}};

  const std::string text = report.dump(2) + "\n";
  if (a.out.empty() || a.out == "-") {
    std::cout << text;
    return 0;
  }
  write_text(a.out, text);
  const json& s = report["summary"];
  std::cout << "queries " << s["count"].get<std::size_t>() << "  mean rel error "
            << s["mean"].get<double>() << "  median " << s["p50"].get<double>() << "\nreport in "
            << a.out << "\n";
  return 0;
}

int cmd_demo_ci(int group_size, double epsilon, const std::string& delta_text,
                const std::string& sweep) {
  if (group_size < 1) throw permsyn::ConfigError("demo-ci: --group-size must be at least 1");
  const double delta = parse_double(delta_text, "--delta");
  permsyn::CiWidths w = permsyn::ci_width_demo(group_size, epsilon, delta);
  std::cout << "group size       " << group_size << "\n"
            << "epsilon          " << epsilon << "\n"
            << "delta            " << delta << "\n"
            << "gamma            " << w.gamma << "\n"
            << "per-tuple width  " << w.per_tuple << "\n"
            << "grouped width    " << w.grouped << "\n"
            << "width ratio      " << w.grouped / w.per_tuple << "\n";
  if (!sweep.empty()) {
    std::cout << "sweep epsilon gamma per-tuple grouped\n";
    for (const std::string& tok : split_list(sweep)) {
      const double e = parse_double(tok, "--sweep");
      permsyn::CiWidths ws = permsyn::ci_width_demo(group_size, e, delta);
      std::cout << "sweep " << e << " " << ws.gamma << " " << ws.per_tuple << " " << ws.grouped
                << "\n";
    }
  }
  return 0;
}

struct ToyArgs {
  int households = 1000;
  std::string out, size_mix;
  std::uint64_t seed = 1;
  double intra = 0.6, inter = 0.5, inflation = 1.06;
  int bins = 8;
};

int cmd_gen_toy(const ToyArgs& a) {
  if (a.out.empty()) throw permsyn::ConfigError("gen-toy: an output directory is required (--out)");
  permsyn::PlantedSpec spec;
  spec.intra = a.intra;
  spec.inter = a.inter;
  spec.bins = a.bins;
  spec.inflation = a.inflation;
  if (!a.size_mix.empty()) {
    spec.size_mix.clear();
    for (const std::string& tok : split_list(a.size_mix))
      spec.size_mix.push_back(parse_double(tok, "--size-mix"));
  }
  permsyn::KeyedRng rng(a.seed, "gen-toy");
  permsyn::Database db = permsyn::gen_planted_db(a.households, spec, rng);
  ensure_dir(a.out);
  permsyn::save_database(db, a.out);
  write_text(a.out + "/schema.json", permsyn::schema_to_json(db).dump(2) + "\n");
  std::cout << "wrote " << db.rows("household").size() << " households and "
            << db.rows("individual").size() << " individuals to " << a.out << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"differentially private synthesis of databases linked by foreign keys"};
  app.set_version_flag("--version", "permsyn 1.0");
  app.require_subcommand(1);

  CLI::App* syn = app.add_subcommand("synthesize", "Synthesize a database under a privacy budget");
  std::string s_schema, s_data, s_out, s_delta = "auto", s_config;
  double s_eps = 0.0;
  std::uint64_t s_seed = 1;
  int s_threads = 0;
  bool s_verbose = false;
  permsyn::SynthesisConfig defaults;
  int s_o = defaults.o, s_k = defaults.k, s_t2 = defaults.t2, s_t1 = defaults.t1;
  int s_ncorr = defaults.n_correlated, s_clique = defaults.max_clique_attrs;
  int s_merge_lo = defaults.merge_lo, s_ipf_sweeps = defaults.ipf_max_sweeps;
  double s_lambda = defaults.lambda_useful, s_ipf_tol = defaults.ipf_tol;
  std::int64_t s_cell_cap = defaults.cell_cap;
  std::vector<std::string> s_weights, s_taus;
  syn->add_option("--schema", s_schema, "Schema JSON file");
  syn->add_option("--data", s_data, "Directory holding one CSV per relation");
  syn->add_option("--out", s_out, "Output directory for CSVs, manifest.json, ledger.json");
  syn->add_option("--epsilon", s_eps, "Privacy budget epsilon");
  syn->add_option("--delta", s_delta, "Privacy budget delta, or 'auto' for 1/|secondary relation|");
  syn->add_option("--seed", s_seed, "Random seed");
  syn->add_option("--config", s_config,
                  "JSON config file or a previous run's manifest.json; flags override it");
  syn->add_option("--threads", s_threads, "Worker cap; PERMSYN_THREADS sets the default");
  syn->add_flag("--verbose", s_verbose, "Stream the stage log to stderr");
  syn->add_option("--order", s_o, "Highest permutation order kept in the store (2..4)");
  syn->add_option("--candidates", s_k, "Scored candidates per charged structure round");
  syn->add_option("--rounds", s_t2, "Charged structure rounds per model target");
  syn->add_option("--free-rounds", s_t1, "Free structure rounds over already-stored sets");
  syn->add_option("--correlated", s_ncorr, "Attributes admitted to a model's scope");
  syn->add_option("--clique-attrs", s_clique, "Widest attribute set a model may hold");
  syn->add_option("--lambda", s_lambda, "Signal floor, in noise sigmas, for charged marginals");
  syn->add_option("--merge-lo", s_merge_lo, "Group sizes >= this share one noise draw; 0 disables");
  syn->add_option("--cell-cap", s_cell_cap, "Largest contingency table the run may materialize");
  syn->add_option("--ipf-sweeps", s_ipf_sweeps, "Estimation sweep cap");
  syn->add_option("--ipf-tol", s_ipf_tol, "Per-clique L1 stopping tolerance");
  syn->add_option("--stage-weight", s_weights, "Stage budget weight as label=weight, repeatable");
  syn->add_option("--tau", s_taus, "Neighbor-change bound as relation.fk=tau, repeatable");

  CLI::App* ev = app.add_subcommand("evaluate", "Compare a synthetic database against the real one");
  EvalArgs ea;
  ev->add_option("--schema", ea.schema, "Schema JSON file shared by both directories");
  ev->add_option("--real", ea.real_dir, "Directory with the real CSVs");
  ev->add_option("--synthetic", ea.syn_dir, "Directory with the synthetic CSVs");
  ev->add_option("--out", ea.out, "Report JSON path; stdout when omitted");
  ev->add_option("--queries", ea.queries, "Number of counting queries");
  ev->add_option("--selectivity", ea.selectivity, "Target fraction of groups a query matches");
  ev->add_option("--c", ea.c, "Member predicates per query (1 or 2)");
  ev->add_option("--seed", ea.seed, "Query generator seed");
  ev->add_option("--individual", ea.individual, "Referencing relation to group");
  ev->add_option("--fk", ea.fk, "Foreign key attribute to group by");
  ev->add_flag("--no-distinct", ea.allow_repeat, "Let a two-witness query reuse one member");

  CLI::App* demo = app.add_subcommand("demo-ci", "Grouped vs per-tuple confidence interval widths");
  int d_group = 100;
  double d_eps = 3.2;
  std::string d_delta = "5e-06", d_sweep;
  demo->add_option("--group-size", d_group, "Tuples charged together per group");
  demo->add_option("--epsilon", d_eps, "Privacy budget epsilon");
  demo->add_option("--delta", d_delta, "Privacy budget delta");
  demo->add_option("--sweep", d_sweep, "Comma-separated epsilons to tabulate");

  CLI::App* toy = app.add_subcommand("gen-toy", "Generate a planted-correlation toy database");
  ToyArgs ta;
  toy->add_option("--households", ta.households, "Number of referenced tuples");
  toy->add_option("--out", ta.out, "Output directory for schema.json and CSVs");
  toy->add_option("--seed", ta.seed, "Random seed");
  toy->add_option("--intra", ta.intra, "Planted member-member correlation");
  toy->add_option("--inter", ta.inter, "Planted household-member correlation");
  toy->add_option("--bins", ta.bins, "Discretization bins per attribute");
  toy->add_option("--inflation", ta.inflation, "Pre-binning loading inflation");
  toy->add_option("--size-mix", ta.size_mix, "Comma-separated weights for group sizes 1..n");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;  // --help and --version exit 0; usage problems are config errors
  }

  try {
    if (app.got_subcommand(syn)) {
      RunConfig rc;
      if (!s_config.empty()) apply_config_file(rc, load_json_file(s_config));
      if (syn->count("--schema")) rc.schema = s_schema;
      if (syn->count("--data")) rc.data = s_data;
      if (syn->count("--out")) rc.out = s_out;
      if (syn->count("--epsilon")) {
        rc.epsilon = s_eps;
        rc.have_epsilon = true;
      }
      if (syn->count("--delta")) apply_delta_text(rc, s_delta);
      if (syn->count("--seed")) rc.cfg.seed = s_seed;
      if (syn->count("--threads")) rc.threads = s_threads;
      if (syn->count("--order")) rc.cfg.o = s_o;
      if (syn->count("--candidates")) rc.cfg.k = s_k;
      if (syn->count("--rounds")) rc.cfg.t2 = s_t2;
      if (syn->count("--free-rounds")) rc.cfg.t1 = s_t1;
      if (syn->count("--correlated")) rc.cfg.n_correlated = s_ncorr;
      if (syn->count("--clique-attrs")) rc.cfg.max_clique_attrs = s_clique;
      if (syn->count("--lambda")) rc.cfg.lambda_useful = s_lambda;
      if (syn->count("--merge-lo")) rc.cfg.merge_lo = s_merge_lo;
      if (syn->count("--cell-cap")) rc.cfg.cell_cap = s_cell_cap;
      if (syn->count("--ipf-sweeps")) rc.cfg.ipf_max_sweeps = s_ipf_sweeps;
      if (syn->count("--ipf-tol")) rc.cfg.ipf_tol = s_ipf_tol;
      for (const std::string& t : s_weights) {
        auto [key, val] = split_kv(t, "--stage-weight");
        rc.cfg.stage_weights[key] = parse_double(val, "--stage-weight " + key);
      }
      for (const std::string& t : s_taus) {
        auto [key, val] = split_kv(t, "--tau");
        rc.cfg.tau_override[key] = parse_int(val, "--tau " + key);
      }
      if (rc.threads == 0) rc.threads = env_threads();
      if (rc.threads == 0) rc.threads = 1;
      return cmd_synthesize(std::move(rc), s_verbose);
    }
    if (app.got_subcommand(ev)) return cmd_evaluate(ea);
    if (app.got_subcommand(demo)) return cmd_demo_ci(d_group, d_eps, d_delta, d_sweep);
    if (app.got_subcommand(toy)) return cmd_gen_toy(ta);
  } catch (const permsyn::BudgetOverdraw& e) {
    std::cerr << "permsyn: " << e.what() << "\n";
    return 4;
  } catch (const permsyn::DataError& e) {
    std::cerr << "permsyn: " << e.what() << "\n";
    return 3;
  } catch (const permsyn::ConfigError& e) {
    std::cerr << "permsyn: " << e.what() << "\n";
    return 2;
  } catch (const permsyn::Error& e) {
    std::cerr << "permsyn: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "permsyn: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
