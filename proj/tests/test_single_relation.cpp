#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>
#include <map>
#include <vector>

#include "helpers.hpp"
#include "permsyn/flatten.hpp"
#include "permsyn/single_relation.hpp"

using namespace permsyn;

namespace {

// A drives B and C; skewed enough that the pair structure matters.
SrData skewed_data() {
  SrData d;
  d.attrs = {{"A", 2, {}}, {"B", 2, {}}, {"C", 3, {}}};
  for (int r = 0; r < 120; ++r) {
    int a = r % 3 == 0 ? 1 : 0;
    int b = r % 7 == 0 ? 1 - a : a;
    int c = a == 1 ? r % 2 : 2;
    d.rows.push_back({a, b, c});
  }
  return d;
}

Table exact_marginal(const SrData& d, const std::vector<int>& S) {
  std::vector<int> dims;
  for (int a : S) dims.push_back(d.attrs[a].domain_size);
  Table t(dims);
  std::vector<int> idx(S.size());
  for (const auto& row : d.rows) {
    for (std::size_t j = 0; j < S.size(); ++j) idx[j] = row[S[j]];
    t.at(idx) += d.row_weight;
  }
  return t;
}

int count_label(const Ledger& led, const std::string& needle) {
  int n = 0;
  for (const auto& c : led.charges())
    if (c.label.find(needle) != std::string::npos) ++n;
  return n;
}

}  // namespace

TEST_CASE("public run is exact and spends nothing", "[single_relation]") {
  SrData d = skewed_data();
  d.is_public = {true, true, true};
  d.public_count = true;
  SynthesisConfig cfg;
  SingleRelationPlan plan = single_relation_plan(1.0, 3, 0, 1.0, false);
  Ledger led(10.0);
  KeyedRng rng(7, "sr-pub");
  SrResult res =
      synthesize_single_relation(d, plan, {}, {}, 0.0, 20000, cfg, led, rng, "pub");

  REQUIRE(led.effective_total() == 0.0);
  REQUIRE(!led.charges().empty());
  for (const auto& c : led.charges()) REQUIRE(c.delta_sensitivity == 0.0);

  REQUIRE(res.total == 120.0);
  // three unary bases plus all three pairs bought over the growth rounds
  REQUIRE(res.cliques.size() == 6);
  auto it = res.marginals.find({0, 2});
  REQUIRE(it != res.marginals.end());
  Table truth = exact_marginal(d, {0, 2});
  REQUIRE(it->second.l1_diff(truth) == Catch::Approx(0.0).margin(1e-9));

  // sampled pair distribution tracks the data
  REQUIRE(res.sampled.size() == 20000);
  Table samp({2, 3});
  for (const auto& row : res.sampled) samp.at({row[0], row[2]}) += 1.0;
  samp.scale(1.0 / 20000.0);
  Table ref = truth;
  ref.scale(1.0 / 120.0);
  REQUIRE(0.5 * samp.l1_diff(ref) < 0.05);
}

TEST_CASE("private full run realizes its plan to the cent", "[single_relation]") {
  SrData d = skewed_data();
  SynthesisConfig cfg;
  SingleRelationPlan plan = single_relation_plan(2.5, 3, 0, 1.0, false);
  REQUIRE(plan.planned_total() == Catch::Approx(2.5).margin(1e-9));
  Ledger led(plan.planned_total() + 1e-9);
  KeyedRng rng(3, "sr-priv");
  SrResult res = synthesize_single_relation(d, plan, {}, {}, 0.0, 0, cfg, led, rng, "priv");

  REQUIRE(led.effective_total() == Catch::Approx(plan.planned_total()).margin(1e-9));
  REQUIRE(count_label(led, "/count") == 1);
  REQUIRE(count_label(led, "/r:") == plan.pool);
  REQUIRE(count_label(led, "/h") == plan.rounds * plan.k);
  REQUIRE(count_label(led, "/m") == plan.base_queries + plan.rounds);
  REQUIRE(res.sampled.empty());
  REQUIRE(res.has_model);
}

TEST_CASE("a drained candidate pool forfeits the shortfall", "[single_relation]") {
  SrData d;
  d.attrs = {{"A", 2, {}}, {"B", 2, {}}};
  for (int r = 0; r < 400; ++r) d.rows.push_back({r % 2, (r % 2 + r % 3) % 2});
  SynthesisConfig cfg;
  SingleRelationPlan plan = single_relation_plan(1.0, 2, 0, 1.0, false);
  REQUIRE(plan.rounds == 1);
  REQUIRE(plan.k == 4);
  Ledger led(plan.planned_total() + 1e-9);
  KeyedRng rng(11, "sr-pad");
  synthesize_single_relation(d, plan, {}, {}, 0.0, 0, cfg, led, rng, "pad");

  // one real scored candidate, three padded; the plan still lands exactly
  REQUIRE(count_label(led, " [forfeit]") == 3);
  REQUIRE(count_label(led, "/h") == 4);
  REQUIRE(led.effective_total() == Catch::Approx(plan.planned_total()).margin(1e-9));
}

TEST_CASE("marginals-only run with a required attribute", "[single_relation]") {
  Database db = testutil::make_census_db();
  augment_size_attribute(db, "individual", "H-ID");
  FlattenedRelation fr = flatten(db, "individual", "H-ID");
  SrData d;
  d.attrs = fr.household_attrs;
  for (const auto& row : fr.rows)
    d.rows.push_back(std::vector<int>(row.begin(), row.begin() + fr.hcols()));

  SynthesisConfig cfg;
  SingleRelationPlan plan = single_relation_plan(1.0, 2, 1, 1.0, true, 4);
  REQUIRE(plan.base_queries == 2);
  REQUIRE(plan.sigma_count == 0.0);
  REQUIRE(plan.sigma_r == 0.0);
  Ledger led(plan.planned_total() + 1e-9);
  KeyedRng rng(5, "sr-req");
  SrResult res = synthesize_single_relation(
      d, plan, {fr.size_attr_index}, [](int, int) { return 0.3; }, 3.0, 0, cfg, led, rng,
      "req");

  // base cliques are the required set and its extension; the one candidate
  // pair duplicates a base clique, so the charged round forfeits in full
  REQUIRE(res.cliques == std::vector<std::vector<int>>{{1}, {0, 1}});
  REQUIRE(count_label(led, " [forfeit]") == plan.k + 1);
  REQUIRE(led.effective_total() == Catch::Approx(plan.planned_total()).margin(1e-9));
  REQUIRE(led.effective_total() == Catch::Approx(1.0).margin(1e-9));
  for (const auto& [clique, tab] : res.marginals)
    REQUIRE(std::find(clique.begin(), clique.end(), fr.size_attr_index) != clique.end());
}

TEST_CASE("an empty total hint blocks growth at the signal floor", "[single_relation]") {
  SrData d = skewed_data();
  SynthesisConfig cfg;
  SingleRelationPlan plan = single_relation_plan(1.0, 3, 0, 1.0, true);
  Ledger led(plan.planned_total() + 1e-9);
  KeyedRng rng(9, "sr-lam");
  SrResult res = synthesize_single_relation(d, plan, {},
                                            [](int, int) { return 1.0; }, 0.0, 0, cfg, led,
                                            rng, "lam");
  REQUIRE(res.total == 0.0);
  REQUIRE(res.cliques.size() == 3);  // unary bases only
  REQUIRE(count_label(led, " [forfeit]") == plan.rounds * (plan.k + 1));
  REQUIRE(led.effective_total() == Catch::Approx(plan.planned_total()).margin(1e-9));
}

TEST_CASE("same seed, same bytes; the label splits streams", "[single_relation]") {
  SrData d = skewed_data();
  SynthesisConfig cfg;
  SingleRelationPlan plan = single_relation_plan(2.0, 3, 0, 1.0, false);
  auto run = [&](const std::string& label) {
    Ledger led(plan.planned_total() + 1e-9);
    KeyedRng rng(42, label);
    return synthesize_single_relation(d, plan, {}, {}, 0.0, 500, cfg, led, rng, label);
  };
  SrResult a = run("det");
  SrResult b = run("det");
  SrResult c = run("det2");
  REQUIRE(a.sampled == b.sampled);
  REQUIRE(a.total == b.total);
  for (const auto& [k, t] : a.marginals) {
    auto it = b.marginals.find(k);
    REQUIRE(it != b.marginals.end());
    REQUIRE(t.l1_diff(it->second) == 0.0);
  }
  REQUIRE(a.sampled != c.sampled);
}

TEST_CASE("row weights scale every count", "[single_relation]") {
  SrData d;
  d.attrs = {{"A", 2, {}}};
  d.row_weight = 0.5;
  d.is_public = {true};
  d.public_count = true;
  for (int r = 0; r < 8; ++r) d.rows.push_back({r % 2});
  SynthesisConfig cfg;
  SingleRelationPlan plan = single_relation_plan(1.0, 1, 0, 1.0, false);
  Ledger led(2.0);
  KeyedRng rng(1, "sr-w");
  SrResult res = synthesize_single_relation(d, plan, {}, {}, 0.0, 0, cfg, led, rng, "w");
  REQUIRE(res.total == 4.0);
  REQUIRE(res.marginals.at({0}).at({0}) == Catch::Approx(2.0).margin(1e-12));
}

TEST_CASE("input validation", "[single_relation]") {
  SrData d = skewed_data();
  SynthesisConfig cfg;
  Ledger led(10.0);
  KeyedRng rng(1, "sr-v");
  SingleRelationPlan plan = single_relation_plan(1.0, 3, 0, 1.0, false);
  SingleRelationPlan wrong = single_relation_plan(1.0, 2, 0, 1.0, false);
  REQUIRE_THROWS_AS(
      synthesize_single_relation(d, wrong, {}, {}, 0.0, 0, cfg, led, rng, "v"), ConfigError);
  SingleRelationPlan mo = single_relation_plan(1.0, 3, 0, 1.0, true);
  REQUIRE_THROWS_AS(synthesize_single_relation(d, mo, {}, {}, 5.0, 0, cfg, led, rng, "v"),
                    ConfigError);
  d.rows[0][0] = 9;
  REQUIRE_THROWS_AS(synthesize_single_relation(d, plan, {}, {}, 0.0, 0, cfg, led, rng, "v"),
                    DataError);
}
