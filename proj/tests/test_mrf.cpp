#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <map>
#include <vector>

#include "oracles.hpp"
#include "permsyn/mrf.hpp"

using namespace permsyn;

namespace {

// generic variables: household-side attributes at ascending indices
FrAttr v(int i) { return FrAttr{0, i}; }

MrfStructure chain_structure(std::vector<int> domains) {
  MrfStructure st;
  for (int i = 0; i < static_cast<int>(domains.size()); ++i) st.variables.push_back(v(i));
  st.domains = std::move(domains);
  for (int i = 0; i + 1 < static_cast<int>(st.variables.size()); ++i)
    st.cliques.push_back({v(i), v(i + 1)});
  return st;
}

Table random_joint(const std::vector<int>& dims, KeyedRng& rng) {
  Table t(dims);
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = 0.2 + rng.next_uniform();
  t.rescale_total(1.0);
  return t;
}

std::vector<Table> exact_targets(const MrfStructure& st, const Table& joint) {
  std::vector<Table> out;
  for (const auto& c : st.cliques) {
    std::vector<int> vars;
    for (const auto& a : c) vars.push_back(st.index_of(a));
    std::sort(vars.begin(), vars.end());
    out.push_back(joint.rollup(vars));
  }
  return out;
}

}  // namespace

TEST_CASE("junction tree for a chain", "[mrf]") {
  MrfStructure st = chain_structure({2, 3, 2});
  JunctionTree jt = build_junction_tree(st);
  REQUIRE(jt.nodes.size() == 2);
  REQUIRE(jt.nodes[0].vars == std::vector<int>{0, 1});
  REQUIRE(jt.nodes[1].vars == std::vector<int>{1, 2});
  REQUIRE(jt.edges.size() == 1);
  REQUIRE(jt.seps[0] == std::vector<int>{1});
  REQUIRE(jt.nodes[0].potential.size() == 6);
}

TEST_CASE("junction tree for the worked five-variable structure", "[mrf]") {
  // H.OWN, I_1.EMP, I_2.EMP, I_3.AGE, I_3.EMP with a triangle over the EMP
  // slots plus pendant AGE and OWN attachments to I_3.EMP
  MrfStructure st;
  FrAttr own{0, 0}, e1{1, 1}, e2{2, 1}, age3{3, 0}, e3{3, 1};
  st.variables = {own, e1, e2, age3, e3};
  st.domains = {2, 2, 2, 3, 2};
  st.cliques = {{own, e3}, {e1, e2}, {e2, e3}, {e1, e3}, {age3, e3}};
  JunctionTree jt = build_junction_tree(st);
  REQUIRE(jt.edges.size() == jt.nodes.size() - 1);
  // each model clique fits inside some node (construction would throw if not)
  for (const auto& c : st.cliques) {
    std::vector<int> want;
    for (const auto& a : c) want.push_back(st.index_of(a));
    std::sort(want.begin(), want.end());
    bool hosted = false;
    for (const auto& n : jt.nodes)
      hosted = hosted ||
               std::includes(n.vars.begin(), n.vars.end(), want.begin(), want.end());
    REQUIRE(hosted);
  }
  // the EMP triangle must share one node
  const std::vector<int> tri{1, 2, 4};
  bool triangle = false;
  for (const auto& n : jt.nodes)
    triangle =
        triangle || std::includes(n.vars.begin(), n.vars.end(), tri.begin(), tri.end());
  REQUIRE(triangle);
}

TEST_CASE("junction tree width cap", "[mrf]") {
  MrfStructure st;
  for (int i = 0; i < 5; ++i) st.variables.push_back(v(i));
  st.domains = {10, 10, 10, 10, 10};
  st.cliques = {{v(0), v(1), v(2), v(3), v(4)}};
  REQUIRE_THROWS_AS(build_junction_tree(st, 10'000), WidthExceeded);
  REQUIRE_NOTHROW(build_junction_tree(st, 200'000));
}

TEST_CASE("structure validation", "[mrf]") {
  MrfStructure empty;
  REQUIRE_THROWS_AS(build_junction_tree(empty), DomainError);
  MrfStructure uncovered;
  uncovered.variables = {v(0), v(1)};
  uncovered.domains = {2, 2};
  uncovered.cliques = {{v(0)}};
  REQUIRE_THROWS_AS(build_junction_tree(uncovered), DomainError);
  MrfStructure unknown;
  unknown.variables = {v(0)};
  unknown.domains = {2};
  unknown.cliques = {{v(0), v(3)}};
  REQUIRE_THROWS_AS(build_junction_tree(unknown), DomainError);
}

TEST_CASE("estimate reproduces exact marginals", "[mrf]") {
  KeyedRng rng(31, "estimate exact");
  MrfStructure st = chain_structure({2, 3, 2, 3});
  Table joint = random_joint(st.domains, rng);
  std::vector<Table> targets = exact_targets(st, joint);
  Mrf m = estimate(st, targets, 100.0);
  REQUIRE(m.converged);
  for (std::size_t c = 0; c < st.cliques.size(); ++c) {
    Table got = m.marginal_of(st.cliques[c]);
    REQUIRE(got.l1_diff(targets[c]) <= 1e-3);
    REQUIRE(got.total() == Catch::Approx(1.0).epsilon(1e-9));
  }
}

TEST_CASE("saturated single-clique model equals its target", "[mrf]") {
  MrfStructure st;
  st.variables = {v(0), v(1)};
  st.domains = {3, 2};
  st.cliques = {{v(0), v(1)}};
  Table target({3, 2});
  double vals[] = {4, 1, 0, 3, 2, 6};
  for (int i = 0; i < 6; ++i) target[i] = vals[i];
  Mrf m = estimate(st, {target}, 16.0);
  Table q = target;
  q.rescale_total(1.0);
  Table got = m.marginal_of(st.cliques[0]);
  REQUIRE(got.l1_diff(q) <= 1e-9);
  // negative cells clip to zero before fitting
  Table noisy = target;
  noisy[2] = -3.0;
  Mrf m2 = estimate(st, {noisy}, 16.0);
  REQUIRE(m2.marginal_of({v(0), v(1)})[2] <= 1e-12);
}

TEST_CASE("inconsistent targets reconcile within the contradiction", "[mrf]") {
  // two pair targets disagreeing about the shared variable's marginal by 0.4
  MrfStructure st = chain_structure({2, 2, 2});
  Table q_ab({2, 2}), q_bc({2, 2});
  // A uniform, B = (0.7, 0.3)
  q_ab[0] = 0.35; q_ab[1] = 0.15; q_ab[2] = 0.35; q_ab[3] = 0.15;
  // B uniform, C uniform
  for (int i = 0; i < 4; ++i) q_bc[i] = 0.25;
  Mrf m = estimate(st, {q_ab, q_bc}, 50.0);
  REQUIRE_FALSE(m.converged);

  // the model's own marginals are mutually consistent by construction
  Table from_ab = m.marginal_of({v(0), v(1)}).rollup({1});
  Table from_bc = m.marginal_of({v(1), v(2)}).rollup({0});
  REQUIRE(from_ab.l1_diff(from_bc) <= 1e-9);

  // each clique gap is bounded by the targets' own disagreement on B
  double inconsistency = 0.4;
  REQUIRE(m.marginal_of(st.cliques[0]).l1_diff(q_ab) <= inconsistency + 1e-9);
  REQUIRE(m.marginal_of(st.cliques[1]).l1_diff(q_bc) <= inconsistency + 1e-9);
  REQUIRE(m.final_gap <= inconsistency + 1e-9);

  // a direct maximum-likelihood fit of the full joint obeys the same bound,
  // grounding the yardstick
  Table mle = oracle::direct_mle(st, {q_ab, q_bc}, 4000, 0.05);
  REQUIRE(mle.rollup({0, 1}).l1_diff(q_ab) <= inconsistency + 1e-6);
  REQUIRE(mle.rollup({1, 2}).l1_diff(q_bc) <= inconsistency + 1e-6);
}

TEST_CASE("marginals match enumeration on random models", "[mrf]") {
  for (std::uint64_t seed : {41u, 42u, 43u, 44u, 45u, 46u, 47u, 48u}) {
    KeyedRng rng(seed, "random model");
    int nv = 3 + static_cast<int>(rng.next_index(4));  // 3..6 variables
    MrfStructure st;
    for (int i = 0; i < nv; ++i) {
      st.variables.push_back(v(i));
      st.domains.push_back(2 + static_cast<int>(rng.next_index(3)));
    }
    std::vector<bool> covered(nv, false);
    int ncl = 2 + static_cast<int>(rng.next_index(3));
    for (int c = 0; c < ncl; ++c) {
      int a = static_cast<int>(rng.next_index(nv));
      int b = static_cast<int>(rng.next_index(nv));
      int d = static_cast<int>(rng.next_index(nv));
      std::set<int> pick{a, b, d};
      std::vector<FrAttr> clique;
      for (int i : pick) {
        clique.push_back(v(i));
        covered[i] = true;
      }
      st.cliques.push_back(clique);
    }
    for (int i = 0; i < nv; ++i)
      if (!covered[i]) st.cliques.push_back({v(i)});

    std::vector<Table> targets;
    for (const auto& c : st.cliques) {
      std::vector<int> vars;
      for (const auto& a : c) vars.push_back(st.index_of(a));
      std::sort(vars.begin(), vars.end());
      Table t(mrf_detail::table_dims(st, vars));
      for (std::size_t i = 0; i < t.size(); ++i) t[i] = 0.1 + rng.next_uniform();
      targets.push_back(std::move(t));
    }
    Mrf m = estimate(st, targets, 30.0, {1e-3, 40});

    // single variables, pairs (often spanning nodes), and a triple
    std::vector<std::vector<FrAttr>> queries;
    for (int i = 0; i < nv; ++i) queries.push_back({v(i)});
    for (int t = 0; t < 3; ++t) {
      int a = static_cast<int>(rng.next_index(nv));
      int b = static_cast<int>(rng.next_index(nv));
      if (a != b) queries.push_back({v(std::min(a, b)), v(std::max(a, b))});
    }
    if (nv >= 3) queries.push_back({v(0), v(1), v(nv - 1)});
    for (const auto& S : queries) {
      std::vector<FrAttr> uniq;
      for (const auto& a : S)
        if (uniq.empty() || !(uniq.back() == a)) uniq.push_back(a);
      Table got = m.marginal_of(uniq);
      Table want = oracle::mrf_marginal_brute(m, uniq);
      INFO("seed=" << seed << " |S|=" << uniq.size());
      REQUIRE(got.l1_diff(want) <= 1e-9);
      REQUIRE(got.total() == Catch::Approx(1.0).epsilon(1e-9));
    }
  }
}

TEST_CASE("conditionals match enumeration and the chain rule", "[mrf]") {
  KeyedRng rng(77, "conditional");
  MrfStructure st;
  FrAttr own{0, 0}, e1{1, 1}, e2{2, 1}, age3{3, 0}, e3{3, 1};
  st.variables = {own, e1, e2, age3, e3};
  st.domains = {2, 2, 2, 3, 2};
  st.cliques = {{own, e3}, {e1, e2}, {e2, e3}, {e1, e3}, {age3, e3}};
  Table joint = random_joint(st.domains, rng);
  Mrf m = estimate(st, exact_targets(st, joint), 100.0);

  // worked sampling step: the last member attribute given everything else
  for (int o = 0; o < 2; ++o)
    for (int a = 0; a < 2; ++a)
      for (int b = 0; b < 2; ++b)
        for (int g = 0; g < 3; ++g) {
          std::map<FrAttr, int> ev{{own, o}, {e1, a}, {e2, b}, {age3, g}};
          auto got = m.conditional(e3, ev);
          auto want = oracle::mrf_conditional_brute(m, e3, ev);
          REQUIRE(!want.empty());
          REQUIRE(got.size() == want.size());
          for (std::size_t i = 0; i < got.size(); ++i)
            REQUIRE(got[i] == Catch::Approx(want[i]).margin(1e-9));
        }

  // chain rule: p(T=t, E=e) = p(T=t | E=e) p(E=e), checked by enumeration
  Table joint_te = oracle::mrf_marginal_brute(m, {e1, e3});
  Table marg_e = oracle::mrf_marginal_brute(m, {e1});
  for (int e = 0; e < 2; ++e) {
    auto cond = m.conditional(e3, {{e1, e}});
    for (int t = 0; t < 2; ++t)
      REQUIRE(joint_te.at({e, t}) == Catch::Approx(cond[t] * marg_e.at({e})).margin(1e-9));
  }
}

TEST_CASE("conditional edge cases", "[mrf]") {
  // deterministic copy: B always equals A
  MrfStructure st;
  st.variables = {v(0), v(1)};
  st.domains = {2, 2};
  st.cliques = {{v(0), v(1)}};
  Table diag({2, 2});
  diag.at({0, 0}) = 0.5;
  diag.at({1, 1}) = 0.5;
  Mrf copy = estimate(st, {diag}, 10.0);
  auto c0 = copy.conditional(v(1), {{v(0), 0}});
  REQUIRE(c0[0] == Catch::Approx(1.0).margin(1e-9));
  auto c1 = copy.conditional(v(1), {{v(0), 1}});
  REQUIRE(c1[1] == Catch::Approx(1.0).margin(1e-9));

  // independent model: conditioning changes nothing
  MrfStructure ind;
  ind.variables = {v(0), v(1)};
  ind.domains = {2, 3};
  ind.cliques = {{v(0)}, {v(1)}};
  Table qa({2}), qb({3});
  qa[0] = 0.25; qa[1] = 0.75;
  qb[0] = 0.5; qb[1] = 0.3; qb[2] = 0.2;
  Mrf mi = estimate(ind, {qa, qb}, 10.0);
  auto cond = mi.conditional(v(1), {{v(0), 0}});
  Table marg = mi.marginal_of({v(1)});
  for (int i = 0; i < 3; ++i) REQUIRE(cond[i] == Catch::Approx(marg[i]).margin(1e-9));

  // zero-probability evidence falls back to the unconditional marginal
  MrfStructure half;
  half.variables = {v(0), v(1)};
  half.domains = {2, 2};
  half.cliques = {{v(0), v(1)}};
  Table qz({2, 2});
  qz.at({1, 0}) = 0.5;
  qz.at({1, 1}) = 0.5;  // A = 0 never happens
  Mrf mz = estimate(half, {qz}, 10.0);
  auto fb = mz.conditional(v(1), {{v(0), 0}});
  Table um = mz.marginal_of({v(1)});
  for (int i = 0; i < 2; ++i) REQUIRE(fb[i] == Catch::Approx(um[i]).margin(1e-9));

  // evidence on unknown attributes is ignored; unknown targets are uniform
  auto ig = mz.conditional(v(1), {{v(9), 1}});
  for (int i = 0; i < 2; ++i) REQUIRE(ig[i] == Catch::Approx(um[i]).margin(1e-9));
  REQUIRE_THROWS_AS(mz.conditional(v(1), {{v(1), 0}}), DomainError);

  // empty attribute set marginal is the scalar 1
  Table scalar = mz.marginal_of({});
  REQUIRE(scalar.size() == 1);
  REQUIRE(scalar[0] == Catch::Approx(1.0));
}

TEST_CASE("theta shift invariance", "[mrf]") {
  KeyedRng rng(55, "shift");
  MrfStructure st = chain_structure({2, 3, 2});
  Table joint = random_joint(st.domains, rng);
  Mrf m = estimate(st, exact_targets(st, joint), 20.0);
  Mrf scaled = m;
  scaled.jt.nodes[0].potential.scale(3.7);  // theta shift by log 3.7
  scaled.calibrate();
  for (const auto& S : {std::vector<FrAttr>{v(0)}, {v(1)}, {v(0), v(2)}, {v(0), v(1), v(2)}}) {
    Table a = m.marginal_of(S);
    Table b = scaled.marginal_of(S);
    REQUIRE(a.l1_diff(b) <= 1e-12);
  }
}

TEST_CASE("h score worked examples", "[mrf]") {
  // point-mass model against a uniform stored marginal: h equals the count
  MrfStructure st;
  st.variables = {v(0)};
  st.domains = {2};
  st.cliques = {{v(0)}};
  Table point({2});
  point[0] = 5.0;
  Mrf m = estimate(st, {point}, 5.0);
  double n = 40.0;
  Table uniform({2}, n / 2.0);
  std::map<int, Table> targets;
  targets.emplace(3, uniform);
  std::map<int, const Mrf*> models{{3, &m}};
  std::map<int, double> totals{{3, n}};
  REQUIRE(h_score({v(0)}, targets, models, totals) == Catch::Approx(n).margin(1e-9));

  // additivity across group sizes
  targets.emplace(4, uniform);
  models[4] = &m;
  totals[4] = n;
  REQUIRE(h_score({v(0)}, targets, models, totals) == Catch::Approx(2 * n).margin(1e-9));

  // sizes without a model or total contribute nothing
  targets.emplace(5, uniform);
  REQUIRE(h_score({v(0)}, targets, models, totals) == Catch::Approx(2 * n).margin(1e-9));

  // a model fitted exactly to the stored table scores almost zero
  KeyedRng rng(91, "h exact");
  MrfStructure st2 = chain_structure({2, 3});
  Table joint = random_joint(st2.domains, rng);
  double total = 80.0;
  Mrf m2 = estimate(st2, exact_targets(st2, joint), total);
  Table stored = joint.rollup({0, 1});
  stored.scale(total);
  std::map<int, Table> t2;
  t2.emplace(2, stored);
  std::map<int, const Mrf*> mm{{2, &m2}};
  std::map<int, double> tt{{2, total}};
  REQUIRE(h_score({v(0), v(1)}, t2, mm, tt) <= 2e-3 * total);
}

TEST_CASE("estimation gap history is monotone", "[mrf]") {
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    KeyedRng r(seed, "noisy targets");
    MrfStructure st = chain_structure({2, 2, 3, 2});
    std::vector<Table> targets;
    for (const auto& c : st.cliques) {
      std::vector<int> vars;
      for (const auto& a : c) vars.push_back(st.index_of(a));
      std::sort(vars.begin(), vars.end());
      Table t(mrf_detail::table_dims(st, vars));
      for (std::size_t i = 0; i < t.size(); ++i)
        t[i] = std::max(0.0, 1.0 + r.next_gaussian(0.8));  // inconsistent on purpose
      targets.push_back(std::move(t));
    }
    Mrf m = estimate(st, targets, 25.0);
    REQUIRE(!m.gap_history.empty());
    for (std::size_t i = 1; i < m.gap_history.size(); ++i)
      REQUIRE(m.gap_history[i] <= m.gap_history[i - 1] + 1e-12);
    REQUIRE(m.final_gap == m.gap_history.back());
  }
}

TEST_CASE("estimate validations and degenerate targets", "[mrf]") {
  MrfStructure st = chain_structure({2, 2});
  Table q({2, 2}, 0.25);
  REQUIRE_THROWS_AS(estimate(st, {}, 1.0), DomainError);
  REQUIRE_THROWS_AS(estimate(st, {q}, 0.0), DomainError);
  Table wrong({2, 3});
  REQUIRE_THROWS_AS(estimate(st, {wrong}, 1.0), DomainError);

  // an all-zero target fits a uniform distribution
  Table zero({2, 2}, 0.0);
  Mrf m = estimate(st, {zero}, 4.0);
  Table marg = m.marginal_of(st.cliques[0]);
  for (std::size_t i = 0; i < marg.size(); ++i)
    REQUIRE(marg[i] == Catch::Approx(0.25).margin(1e-9));
}

TEST_CASE("model dump shape", "[mrf]") {
  MrfStructure st = chain_structure({2, 3});
  Table q({2, 3}, 1.0);
  Mrf m = estimate(st, {q}, 6.0);
  m.group_size = 4;
  nlohmann::json j = m.to_json();
  REQUIRE(j["variables"].size() == 2);
  REQUIRE(j["variables"][0]["domain"] == 2);
  REQUIRE(j["cliques"].size() == 1);
  REQUIRE(j["potentials"].size() >= 1);
  REQUIRE(j["group_size"] == 4);
  REQUIRE(j.contains("final_gap"));
}
