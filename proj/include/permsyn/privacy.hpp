#pragma once
// Noise calibration, spend accounting, and budget planning.
//
// Accounting model: solve the largest gamma such that a Gaussian mechanism
// with per-query cost (delta/sigma)^2 stays (epsilon, delta)-DP as long as
// the costs sum to at most gamma^2. Every noisy query in the pipeline goes
// through the Ledger, which enforces that bound at run time; the planner
// solves noise scales in closed form so the realized spend equals the plan.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "permsyn/errors.hpp"
#include "permsyn/rng.hpp"
#include "permsyn/schema.hpp"
#include "permsyn/table.hpp"

namespace permsyn {

namespace privacy_detail {

// Tightest delta a Gaussian with sigma = Delta/gamma can certify at eps:
//   g(gamma) = Phi(gamma/2 - eps/gamma) - e^eps Phi(-gamma/2 - eps/gamma).
// Monotone increasing from 0 to 1 on gamma > 0.
inline double tight_delta(double gamma, double eps) {
  double head = normal_cdf(gamma / 2.0 - eps / gamma);
  double tail = normal_cdf(-gamma / 2.0 - eps / gamma);
  // e^eps * tail overflows if formed naively at large eps; go through logs.
  double sub = (tail == 0.0) ? 0.0 : std::exp(eps + std::log(tail));
  return head - sub;
}

}  // namespace privacy_detail

// Largest gamma whose tight delta is still <= delta. A mechanism is then
// (epsilon, delta)-DP whenever sum_i (Delta_i / sigma_i)^2 <= gamma^2.
inline double solve_gamma(double epsilon, double delta) {
  if (!(epsilon > 0.0)) throw ConfigError("solve_gamma: epsilon must be positive");
  if (!(delta > 0.0) || !(delta < 1.0))
    throw ConfigError("solve_gamma: delta must lie in (0, 1)");
  double lo = 1e-12;
  if (privacy_detail::tight_delta(lo, epsilon) > delta)
    throw NumericError("solve_gamma: failed to bracket from below");
  double hi = 1.0;
  int doublings = 0;
  while (privacy_detail::tight_delta(hi, epsilon) <= delta) {
    hi *= 2.0;
    if (++doublings > 64) throw NumericError("solve_gamma: failed to bracket from above");
  }
  for (int it = 0; it < 200; ++it) {
    double mid = 0.5 * (lo + hi);
    if (privacy_detail::tight_delta(mid, epsilon) <= delta)
      lo = mid;
    else
      hi = mid;
  }
  // Bisection is only sound if g really is monotone where we searched.
  double prev = -1.0;
  for (double f : {0.125, 0.25, 0.5, 1.0, 2.0, 4.0}) {
    double v = privacy_detail::tight_delta(lo * f, epsilon);
    if (v + 1e-15 < prev) throw NumericError("solve_gamma: residual not monotone");
    prev = v;
  }
  if (std::fabs(privacy_detail::tight_delta(lo, epsilon) - delta) > 1e-12)
    throw NumericError("solve_gamma: residual above tolerance");
  return lo;
}

struct Charge {
  std::string label;
  double delta_sensitivity = 0.0;
  double sigma = 0.0;
  double cost = 0.0;  // (delta/sigma)^2; exactly 0 for public queries
  // Charges sharing a parallel_group act on disjoint partitions of the data:
  // the group spends only its most expensive parallel_class.
  std::string parallel_group;
  std::string parallel_class;
};

// Append-only record of every noisy query. Rejects the first charge that
// would push the effective total past the budget, leaving the ledger intact.
class Ledger {
 public:
  explicit Ledger(double budget) : budget_(budget) {
    if (!(budget >= 0.0)) throw ConfigError("Ledger: budget must be non-negative");
  }

  const Charge& append(std::string label, double delta, double sigma,
                       std::string group = {}, std::string cls = {}) {
    if (!(delta >= 0.0)) throw NumericError("Ledger: sensitivity must be non-negative");
    if (delta > 0.0 && !(sigma > 0.0))
      throw NumericError("Ledger: private query needs positive sigma: " + label);
    Charge c;
    c.label = std::move(label);
    c.delta_sensitivity = delta;
    c.sigma = sigma;
    c.cost = (delta == 0.0) ? 0.0 : (delta / sigma) * (delta / sigma);
    c.parallel_group = std::move(group);
    c.parallel_class = std::move(cls);
    apply(c, +1.0);
    if (effective_total() > budget_ * (1.0 + 1e-12) + 1e-12) {
      apply(c, -1.0);
      throw BudgetOverdraw("privacy budget exhausted by query: " + c.label);
    }
    charges_.push_back(std::move(c));
    return charges_.back();
  }

  // Sequential charges add; each parallel group counts only its worst class.
  double effective_total() const {
    double t = sequential_;
    for (const auto& [g, classes] : groups_) {
      double worst = 0.0;
      for (const auto& [cls, v] : classes) worst = std::max(worst, v);
      t += worst;
    }
    return t;
  }

  double budget() const { return budget_; }
  double remaining() const { return budget_ - effective_total(); }
  const std::vector<Charge>& charges() const { return charges_; }

  nlohmann::json to_json() const {
    nlohmann::json arr = nlohmann::json::array();
    for (const Charge& c : charges_) {
      nlohmann::json e{{"label", c.label},
                       {"delta_sensitivity", c.delta_sensitivity},
                       {"sigma", c.sigma},
                       {"cost", c.cost}};
      if (!c.parallel_group.empty()) {
        e["parallel_group"] = c.parallel_group;
        e["parallel_class"] = c.parallel_class;
      }
      arr.push_back(std::move(e));
    }
    return arr;
  }

 private:
  void apply(const Charge& c, double sign) {
    if (c.parallel_group.empty())
      sequential_ += sign * c.cost;
    else
      groups_[c.parallel_group][c.parallel_class] += sign * c.cost;
  }

  double budget_ = 0.0;
  double sequential_ = 0.0;
  std::map<std::string, std::map<std::string, double>> groups_;
  std::vector<Charge> charges_;
};

// Registers the charge, then perturbs vals in place with iid N(0, sigma^2).
// delta == 0 marks a query answered from public data: no spend and no noise.
// An overdraw throws before vals is touched.
inline void charge_and_noise(Ledger& ledger, const std::string& label, double delta,
                             double sigma, double* vals, std::size_t n, KeyedRng& rng,
                             const std::string& group = {}, const std::string& cls = {}) {
  ledger.append(label, delta, sigma, group, cls);
  if (delta == 0.0) return;
  for (std::size_t i = 0; i < n; ++i) vals[i] += rng.next_gaussian(sigma);
}

inline void charge_and_noise(Ledger& ledger, const std::string& label, double delta,
                             double sigma, std::vector<double>& vals, KeyedRng& rng,
                             const std::string& group = {}, const std::string& cls = {}) {
  charge_and_noise(ledger, label, delta, sigma, vals.data(), vals.size(), rng, group, cls);
}

inline void charge_and_noise(Ledger& ledger, const std::string& label, double delta,
                             double sigma, Table& t, KeyedRng& rng,
                             const std::string& group = {}, const std::string& cls = {}) {
  charge_and_noise(ledger, label, delta, sigma, t.data(), t.size(), rng, group, cls);
}

// A planned query with nothing left to ask (say, a candidate pool that came up
// short) still spends its budget, so the realized ledger matches the plan
// line for line. The draw is made and discarded.
inline void forfeit_charge(Ledger& ledger, const std::string& label, double delta,
                           double sigma, KeyedRng& rng, const std::string& group = {},
                           const std::string& cls = {}) {
  double scratch = 0.0;
  charge_and_noise(ledger, label + " [forfeit]", delta, sigma, &scratch, 1, rng, group, cls);
}

// Spend of one foreign-key pipeline past its initial store: dependence scores
// over all basic attribute pairs, the group-size vector, and the structure
// search (t2 rounds of k scored candidates plus one marginal per round, for
// every member attribute at every group size).
inline double cost_one_fk(int n_house_attrs, int n_indiv_attrs, double tau, double sigma_r,
                          double sigma_n, double sigma_h, double sigma_m, int t2, int max_size,
                          int k) {
  double ah = n_house_attrs, ai = n_indiv_attrs;
  double pair2 = ah * ah + 2.0 * ah * ai + 2.0 * ai * ai - ah;  // twice the pair count
  double r_term = 2.0 * tau * tau * pair2 / (sigma_r * sigma_r);
  double n_term = tau * tau / (sigma_n * sigma_n);
  double mrf_term = tau * tau * t2 * max_size * ai *
                    (k / (sigma_h * sigma_h) + 1.0 / (sigma_m * sigma_m));
  return r_term + n_term + mrf_term;
}

// Structure-search spend for a single model target at a single group size.
inline double cost_mrf(double tau, int k, int t2, double sigma_h, double sigma_m) {
  return tau * tau * t2 * (k / (sigma_h * sigma_h) + 1.0 / (sigma_m * sigma_m));
}

struct CiWidths {
  double gamma = 0.0;
  double grouped = 0.0;    // whole budget on one count with sensitivity group_size
  double per_tuple = 0.0;  // same count with per-tuple sensitivity 1
};

// 95% confidence width of a single noisy count under the full budget,
// contrasting group-level with per-tuple sensitivity. The ratio is exactly
// group_size: bounding whole groups costs a factor of the group cap.
inline CiWidths ci_width_demo(double group_size, double epsilon, double delta) {
  if (!(group_size > 0.0)) throw ConfigError("ci_width_demo: group size must be positive");
  CiWidths w;
  w.gamma = solve_gamma(epsilon, delta);
  const double z95 = 1.96;
  w.grouped = 2.0 * z95 * group_size / w.gamma;
  w.per_tuple = 2.0 * z95 * 1.0 / w.gamma;
  return w;
}

// Tunables shared by the planner and the synthesis passes.
struct SynthesisConfig {
  int o = 3;                 // highest permutation order kept in the store (2..4)
  int k = 4;                 // scored candidates per charged structure round
  int t2 = 1;                // charged structure rounds per model target
  int t1 = 10;               // free structure rounds (stored sets only)
  int n_correlated = 8;      // attributes admitted to a model's scope
  int max_clique_attrs = 4;  // widest attribute set a model may hold
  double lambda_useful = 6.0;  // signal floor, in noise sigmas, for charged marginals
  int merge_lo = 0;            // group sizes >= merge_lo share one noise draw; 0 disables
  std::int64_t cell_cap = 10'000'000;
  int ipf_max_sweeps = 2000;
  double ipf_tol = 1e-3;
  std::uint64_t seed = 1;
  // Stage label -> weight. Empty means weights default to attribute counts.
  std::map<std::string, double> stage_weights;
  // "relation.fk_attribute" -> tau, overriding the schema-derived value.
  std::map<std::string, int> tau_override;
};

namespace privacy_detail {

// Attribute count of a relation once size attributes for every incoming
// foreign key from a private relation are in place. Counting this way keeps
// the result identical before and after augment_size_attribute has run.
inline int augmented_attr_count(const Database& db, const std::string& rel) {
  const RelationSchema& s = db.schema(rel);
  int n = 0;
  for (const auto& a : s.attributes)
    if (!is_size_attr(a.name)) ++n;
  for (const auto& other : db.schemas) {
    if (other.privacy == PrivacyClass::Public) continue;
    for (const auto& fk : other.foreign_keys)
      if (fk.references == rel) ++n;
  }
  return n;
}

inline int incoming_private_fk_count(const Database& db, const std::string& rel) {
  int n = 0;
  for (const auto& other : db.schemas) {
    if (other.privacy == PrivacyClass::Public) continue;
    for (const auto& fk : other.foreign_keys)
      if (fk.references == rel) ++n;
  }
  return n;
}

// kappa(X): most tuples of private relation X that one removal from the
// primary relation can take with it, via cascading foreign keys.
inline std::int64_t kappa(const Database& db, const std::string& rel,
                          std::map<std::string, std::int64_t>& memo) {
  auto it = memo.find(rel);
  if (it != memo.end()) return it->second;
  const RelationSchema& s = db.schema(rel);
  std::int64_t k = 0;
  if (s.privacy == PrivacyClass::Primary) {
    k = 1;
  } else {
    for (const auto& fk : s.foreign_keys) {
      const RelationSchema& parent = db.schema(fk.references);
      if (parent.privacy == PrivacyClass::Public) continue;
      if (fk.max_group_size < 1)
        throw ConfigError("max_group_size required on " + rel + "." + fk.attribute +
                          " to bound privacy sensitivity");
      k += kappa(db, fk.references, memo) * fk.max_group_size;
    }
  }
  memo[rel] = k;
  return k;
}

}  // namespace privacy_detail

// Per-pipeline sensitivity: how many parent-side groups can change when one
// primary tuple is removed. A removed parent row counts once; a surviving
// parent row whose group shrinks counts twice (its old group leaves the
// counts and its new group enters).
inline std::map<std::string, int> compute_taus(const Database& db) {
  std::map<std::string, std::int64_t> memo;
  std::map<std::string, int> taus;
  for (const auto& s : db.schemas) {
    if (s.privacy == PrivacyClass::Public) continue;
    for (const auto& fk : s.foreign_keys) {
      const RelationSchema& parent = db.schema(fk.references);
      std::int64_t removed = parent.privacy == PrivacyClass::Public
                                 ? 0
                                 : privacy_detail::kappa(db, fk.references, memo);
      std::int64_t shrunk = 0;
      if (s.privacy == PrivacyClass::Primary) {
        shrunk = 1;  // the removed primary tuple leaves its own group
      } else {
        for (const auto& other : s.foreign_keys) {
          if (&other == &fk) continue;
          const RelationSchema& op = db.schema(other.references);
          if (op.privacy == PrivacyClass::Public) continue;
          if (other.max_group_size < 1)
            throw ConfigError("max_group_size required on " + s.name + "." + other.attribute +
                              " to bound privacy sensitivity");
          shrunk += privacy_detail::kappa(db, other.references, memo) * other.max_group_size;
        }
      }
      std::int64_t tau = removed + 2 * shrunk;
      if (tau > 1'000'000'000)
        throw ConfigError("sensitivity bound overflows for " + s.name + "." + fk.attribute);
      taus[s.name + "." + fk.attribute] = static_cast<int>(tau);
    }
  }
  return taus;
}

// delta defaults to one over the largest secondary relation, falling back to
// the primary when nothing references it.
inline double default_delta(const Database& db) {
  std::int64_t n = 0;
  for (const auto& s : db.schemas)
    if (s.privacy == PrivacyClass::Secondary)
      n = std::max<std::int64_t>(n, static_cast<std::int64_t>(db.rows(s.name).size()));
  if (n == 0)
    for (const auto& s : db.schemas)
      if (s.privacy == PrivacyClass::Primary)
        n = std::max<std::int64_t>(n, static_cast<std::int64_t>(db.rows(s.name).size()));
  return 1.0 / static_cast<double>(std::max<std::int64_t>(n, 2));
}

// One run of the single-relation synthesizer. A full run owns its row count
// and dependence scores; a marginals-only run inherits those from the
// enclosing pipeline and puts its whole share into structure search.
// Shares with no query to spend them on (one attribute, empty pool) roll
// into the marginal bucket so the planned total always equals the share.
struct SingleRelationPlan {
  double share = 0.0;
  double tau = 1.0;
  int n_attrs = 0;
  int n_required = 0;  // attributes every base clique must contain
  int pool = 0;        // candidate pairs for structure growth
  int rounds = 0;      // charged structure rounds, min(8, pool)
  int k = 4;
  int base_queries = 0;
  bool marginals_only = false;
  double sigma_count = 0.0;
  double sigma_r = 0.0;
  double sigma_h = 0.0;
  double sigma_m = 0.0;

  double planned_total() const {
    double t = 0.0;
    if (sigma_count > 0.0) t += tau * tau / (sigma_count * sigma_count);
    if (sigma_r > 0.0) t += 4.0 * tau * tau * pool / (sigma_r * sigma_r);
    if (sigma_h > 0.0) t += tau * tau * rounds * k / (sigma_h * sigma_h);
    if (sigma_m > 0.0)
      t += tau * tau * (base_queries + rounds) / (sigma_m * sigma_m);
    return t;
  }
};

inline SingleRelationPlan single_relation_plan(double share, int n_attrs, int n_required,
                                               double tau, bool marginals_only, int k = 4) {
  if (!(share > 0.0)) throw ConfigError("single_relation_plan: share must be positive");
  if (n_attrs < 0 || n_required < 0 || n_required > n_attrs)
    throw ConfigError("single_relation_plan: bad attribute counts");
  if (!(tau > 0.0)) throw ConfigError("single_relation_plan: tau must be positive");
  SingleRelationPlan p;
  p.share = share;
  p.tau = tau;
  p.n_attrs = n_attrs;
  p.n_required = n_required;
  p.k = k;
  p.marginals_only = marginals_only;
  if (n_attrs == 0) {
    if (marginals_only)
      throw ConfigError("single_relation_plan: nothing to query with zero attributes");
    p.sigma_count = tau * std::sqrt(1.0 / share);  // pure count, whole share
    return p;
  }
  p.pool = n_attrs * (n_attrs - 1) / 2;
  p.rounds = std::min(8, p.pool);
  p.base_queries = (n_required > 0) ? (n_attrs - n_required) + 1 : n_attrs;
  double count_share = marginals_only ? 0.0 : share / 20.0;
  double r_share = (marginals_only || p.pool == 0) ? 0.0 : 3.0 * share / 20.0;
  double structure_share = share - count_share - r_share;
  double h_share = p.rounds > 0 ? structure_share / 10.0 : 0.0;
  double m_share = structure_share - h_share;
  if (count_share > 0.0) p.sigma_count = tau * std::sqrt(1.0 / count_share);
  if (r_share > 0.0) p.sigma_r = 2.0 * tau * std::sqrt(p.pool / r_share);
  if (h_share > 0.0)
    p.sigma_h = tau * std::sqrt(static_cast<double>(p.rounds) * p.k / h_share);
  p.sigma_m = tau * std::sqrt(static_cast<double>(p.base_queries + p.rounds) / m_share);
  return p;
}

// One foreign-key pipeline stage. Half the share funds the initial store in
// four equal quarters (parent marginals, per-size first-slot marginals,
// parent-member seeds, cross-slot seeds); the rest splits 1:1:8 between
// dependence scores, the group-size vector, and structure search, whose
// spend splits 1:9 between candidate scoring and marginal queries.
struct FkStagePlan {
  std::string relation;  // member relation being synthesized
  std::string fk_attribute;
  std::string references;  // parent relation
  double weight = 0.0;
  double share = 0.0;
  double tau = 1.0;
  int n_house_attrs = 0;  // parent attrs including size attributes
  int n_indiv_attrs = 0;
  int max_size = 0;
  int o = 3;
  int k = 4;
  int t2 = 1;
  double sigma_r = 0.0;
  double sigma_n = 0.0;
  double sigma_h = 0.0;
  double sigma_m = 0.0;
  double c_init = 0.0;   // share / 2
  double quarter = 0.0;  // c_init / 4
  double sigma_inter = 0.0;
  double sigma_intra = 0.0;

  std::string label() const { return "fk:" + relation + "." + fk_attribute; }

  double planned_total() const {
    return c_init + cost_one_fk(n_house_attrs, n_indiv_attrs, tau, sigma_r, sigma_n, sigma_h,
                                sigma_m, t2, max_size, k);
  }
};

inline FkStagePlan fk_stage_plan(std::string relation, std::string fk_attribute,
                                 std::string references, double share, double tau,
                                 int n_house_attrs, int n_indiv_attrs, int max_size,
                                 const SynthesisConfig& cfg) {
  if (!(share > 0.0)) throw ConfigError("fk_stage_plan: share must be positive");
  if (n_house_attrs < 1 || n_indiv_attrs < 1)
    throw ConfigError("fk_stage_plan: both sides need at least one attribute");
  if (max_size < 1) throw ConfigError("fk_stage_plan: max_group_size must be at least 1");
  if (!(tau > 0.0)) throw ConfigError("fk_stage_plan: tau must be positive");
  if (cfg.o < 2 || cfg.o > 4) throw ConfigError("fk_stage_plan: o must be in [2, 4]");
  if (cfg.k < 1 || cfg.t2 < 1) throw ConfigError("fk_stage_plan: k and t2 must be positive");
  FkStagePlan p;
  p.relation = std::move(relation);
  p.fk_attribute = std::move(fk_attribute);
  p.references = std::move(references);
  p.share = share;
  p.tau = tau;
  p.n_house_attrs = n_house_attrs;
  p.n_indiv_attrs = n_indiv_attrs;
  p.max_size = max_size;
  p.o = cfg.o;
  p.k = cfg.k;
  p.t2 = cfg.t2;
  double ah = n_house_attrs, ai = n_indiv_attrs;
  double pair2 = ah * ah + 2.0 * ah * ai + 2.0 * ai * ai - ah;
  p.sigma_r = tau * std::sqrt(40.0 * pair2 / share);
  p.sigma_n = tau * std::sqrt(20.0 / share);
  double mrf_scale = static_cast<double>(cfg.t2) * max_size * ai;
  p.sigma_h = 5.0 * tau * std::sqrt(mrf_scale * cfg.k / share);
  p.sigma_m = (5.0 * tau / 3.0) * std::sqrt(mrf_scale / share);
  p.c_init = share / 2.0;
  p.quarter = p.c_init / 4.0;
  p.sigma_inter = tau * std::sqrt((ah + ai) / p.quarter);
  p.sigma_intra = tau * std::sqrt((p.o - 1) * ai / p.quarter);
  return p;
}

struct SingleStagePlan {
  std::string relation;
  double weight = 0.0;
  double share = 0.0;
  double tau = 1.0;
  SingleRelationPlan run;

  std::string label() const { return "single:" + relation; }
};

struct BudgetPlan {
  double epsilon = 0.0;
  double delta = 0.0;
  double gamma = 0.0;
  double budget = 0.0;  // gamma^2
  std::vector<SingleStagePlan> singles;
  std::vector<FkStagePlan> fks;

  double planned_total() const {
    double t = 0.0;
    for (const auto& s : singles) t += s.run.planned_total();
    for (const auto& f : fks) t += f.planned_total();
    return t;
  }

  nlohmann::json to_json() const {
    nlohmann::json stages = nlohmann::json::array();
    for (const auto& s : singles)
      stages.push_back({{"stage", s.label()},
                        {"weight", s.weight},
                        {"share", s.share},
                        {"tau", s.tau},
                        {"sigma_count", s.run.sigma_count},
                        {"sigma_r", s.run.sigma_r},
                        {"sigma_h", s.run.sigma_h},
                        {"sigma_m", s.run.sigma_m}});
    for (const auto& f : fks)
      stages.push_back({{"stage", f.label()},
                        {"weight", f.weight},
                        {"share", f.share},
                        {"tau", f.tau},
                        {"max_size", f.max_size},
                        {"sigma_r", f.sigma_r},
                        {"sigma_n", f.sigma_n},
                        {"sigma_h", f.sigma_h},
                        {"sigma_m", f.sigma_m},
                        {"sigma_inter", f.sigma_inter},
                        {"sigma_intra", f.sigma_intra}});
    return nlohmann::json{{"epsilon", epsilon},
                          {"delta", delta},
                          {"gamma", gamma},
                          {"budget", budget},
                          {"planned_total", planned_total()},
                          {"stages", std::move(stages)}};
  }
};

// Splits gamma^2 across one stage per synthesized table: a full
// single-relation stage for each private relation without foreign keys, and
// one pipeline stage per foreign key of every private relation, parents
// ordered before the relations that reference them. Default stage weights
// are the (size-augmented) attribute counts of the relation being built.
inline BudgetPlan plan_budget(const Database& db, double epsilon, double delta,
                              const SynthesisConfig& cfg = {}) {
  BudgetPlan plan;
  plan.epsilon = epsilon;
  plan.delta = delta;
  plan.gamma = solve_gamma(epsilon, delta);
  plan.budget = plan.gamma * plan.gamma;

  // Private relations in dependency order, parents before children.
  std::vector<std::string> order;
  {
    std::set<std::string> placed;
    std::vector<const RelationSchema*> pending;
    for (const auto& s : db.schemas)
      if (s.privacy != PrivacyClass::Public) pending.push_back(&s);
    while (!pending.empty()) {
      bool progressed = false;
      for (auto it = pending.begin(); it != pending.end();) {
        bool ready = true;
        for (const auto& fk : (*it)->foreign_keys) {
          const RelationSchema& parent = db.schema(fk.references);
          if (parent.privacy != PrivacyClass::Public && !placed.count(parent.name)) {
            ready = false;
            break;
          }
        }
        if (ready) {
          order.push_back((*it)->name);
          placed.insert((*it)->name);
          it = pending.erase(it);
          progressed = true;
        } else {
          ++it;
        }
      }
      if (!progressed) throw SchemaError("foreign-key cycle among private relations");
    }
  }

  std::map<std::string, int> taus = compute_taus(db);
  for (const auto& [label, tau] : cfg.tau_override) {
    if (!taus.count(label)) throw ConfigError("tau override for unknown foreign key: " + label);
    if (tau < 1) throw ConfigError("tau override must be at least 1: " + label);
    taus[label] = tau;
  }

  struct StageRef {
    std::string label;
    const RelationSchema* rel;
    const ForeignKeySpec* fk;  // null for a single-relation stage
  };
  std::vector<StageRef> stages;
  for (const auto& name : order) {
    const RelationSchema& s = db.schema(name);
    if (s.foreign_keys.empty()) {
      if (s.privacy != PrivacyClass::Primary)
        throw ConfigError("secondary relation " + name +
                          " has no foreign key linking it to the primary relation");
      stages.push_back({"single:" + name, &s, nullptr});
    } else {
      for (const auto& fk : s.foreign_keys)
        stages.push_back({"fk:" + name + "." + fk.attribute, &s, &fk});
    }
  }

  double weight_sum = 0.0;
  std::vector<double> weights(stages.size(), 0.0);
  for (std::size_t i = 0; i < stages.size(); ++i) {
    if (!cfg.stage_weights.empty()) {
      auto it = cfg.stage_weights.find(stages[i].label);
      if (it == cfg.stage_weights.end())
        throw ConfigError("stage_weights missing stage: " + stages[i].label);
      if (!(it->second > 0.0))
        throw ConfigError("stage weight must be positive: " + stages[i].label);
      weights[i] = it->second;
    } else {
      weights[i] = privacy_detail::augmented_attr_count(db, stages[i].rel->name);
      if (weights[i] <= 0.0) weights[i] = 1.0;  // count-only relation still needs a share
    }
    weight_sum += weights[i];
  }
  if (!cfg.stage_weights.empty())
    for (const auto& [label, w] : cfg.stage_weights) {
      bool known = false;
      for (const auto& st : stages) known = known || st.label == label;
      if (!known) throw ConfigError("stage_weights names unknown stage: " + label);
    }

  for (std::size_t i = 0; i < stages.size(); ++i) {
    const StageRef& st = stages[i];
    double share = plan.budget * weights[i] / weight_sum;
    if (st.fk == nullptr) {
      SingleStagePlan sp;
      sp.relation = st.rel->name;
      sp.weight = weights[i];
      sp.share = share;
      sp.tau = 1.0;
      sp.run = single_relation_plan(share, privacy_detail::augmented_attr_count(db, st.rel->name),
                                    privacy_detail::incoming_private_fk_count(db, st.rel->name),
                                    sp.tau, /*marginals_only=*/false, cfg.k);
      plan.singles.push_back(std::move(sp));
    } else {
      if (st.fk->max_group_size < 1)
        throw ConfigError("max_group_size required on " + st.rel->name + "." +
                          st.fk->attribute + " to plan its pipeline");
      FkStagePlan fp = fk_stage_plan(
          st.rel->name, st.fk->attribute, st.fk->references, share,
          taus.at(st.rel->name + "." + st.fk->attribute),
          privacy_detail::augmented_attr_count(db, st.fk->references),
          privacy_detail::augmented_attr_count(db, st.rel->name), st.fk->max_group_size, cfg);
      fp.weight = weights[i];
      plan.fks.push_back(std::move(fp));
    }
  }
  return plan;
}

}  // namespace permsyn
