#pragma once
// Utility evaluation: random group-counting queries scored by regularized
// relative error, Pearson correlation over bin representatives, a
// random-link baseline, and a planted-correlation generator used by the
// acceptance checks.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <numeric>
#include <optional>
#include <ostream>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "permsyn/errors.hpp"
#include "permsyn/flatten.hpp"
#include "permsyn/rng.hpp"
#include "permsyn/schema.hpp"

namespace permsyn {

// One conjunct: the attribute must take a value from the set.
struct PredicateClause {
  int attr = 0;
  std::vector<int> values;  // distinct, sorted
};
using Predicate = std::vector<PredicateClause>;

// Counts households with exactly s members that satisfy the household
// predicate and contain one distinct member per member predicate.
struct GroupQuery {
  int s = 1;
  Predicate household;
  std::vector<Predicate> members;
  bool distinct = true;  // two-witness queries may not reuse a member
};

inline nlohmann::json to_json(const Predicate& p) {
  nlohmann::json out = nlohmann::json::array();
  for (const auto& c : p) out.push_back({{"attr", c.attr}, {"values", c.values}});
  return out;
}

inline nlohmann::json to_json(const GroupQuery& q) {
  nlohmann::json jm = nlohmann::json::array();
  for (const auto& p : q.members) jm.push_back(to_json(p));
  return {{"s", q.s},
          {"household", to_json(q.household)},
          {"members", std::move(jm)},
          {"distinct", q.distinct}};
}

namespace eval_detail {

inline bool clause_matches(const PredicateClause& c, int value) {
  return std::binary_search(c.values.begin(), c.values.end(), value);
}

inline bool predicate_matches(const Predicate& p, const std::vector<int>& attrs) {
  for (const auto& c : p) {
    if (c.attr < 0 || c.attr >= static_cast<int>(attrs.size()))
      throw DomainError("query clause attribute out of range");
    if (!clause_matches(c, attrs[static_cast<std::size_t>(c.attr)])) return false;
  }
  return true;
}

// One distinct witness per predicate. With at most two predicates an
// injective assignment exists iff both match sets are nonempty and their
// union holds at least two members.
inline bool witnesses_exist(const std::vector<Predicate>& preds, bool distinct,
                            const std::vector<std::vector<int>>& members) {
  if (preds.empty()) return true;
  if (preds.size() > 2) throw ConfigError("group queries support at most two member predicates");
  std::vector<int> a, b;
  for (std::size_t i = 0; i < members.size(); ++i) {
    if (predicate_matches(preds[0], members[i])) a.push_back(static_cast<int>(i));
    if (preds.size() == 2 && predicate_matches(preds[1], members[i]))
      b.push_back(static_cast<int>(i));
  }
  if (preds.size() == 1) return !a.empty();
  if (a.empty() || b.empty()) return false;
  if (!distinct) return true;
  for (int i : a)
    for (int j : b)
      if (i != j) return true;
  return false;
}

}  // namespace eval_detail

// Random queries matching the evaluation recipe: a random group size, one
// or two clauses per predicate over distinct attributes, and value sets of
// |S_A| = floor(selectivity^(1/k) * |X_A|) where k counts every clause in
// the query, so the whole query keeps roughly the requested selectivity.
inline std::vector<GroupQuery> gen_queries(const FlattenedRelation& fr, int count,
                                           double selectivity, int c, KeyedRng& rng) {
  if (!(selectivity > 0.0 && selectivity < 1.0))
    throw ConfigError("gen_queries: selectivity must lie in (0,1)");
  if (c < 1 || c > 2) throw ConfigError("gen_queries: c must be 1 or 2");
  if (count < 0) throw ConfigError("gen_queries: negative count");
  std::vector<int> hpool;
  for (int a = 0; a < fr.hcols(); ++a)
    if (a != fr.size_attr_index) hpool.push_back(a);
  if (hpool.empty()) throw ConfigError("gen_queries: no household attributes to query");
  if (fr.icols() == 0) throw ConfigError("gen_queries: no member attributes to query");

  auto pick = [&](const std::vector<int>& pool, int n) {
    std::vector<int> p = pool;
    for (int i = 0; i < n; ++i) {
      int j = i + rng.next_index(static_cast<int>(p.size()) - i);
      std::swap(p[static_cast<std::size_t>(i)], p[static_cast<std::size_t>(j)]);
    }
    p.resize(static_cast<std::size_t>(n));
    std::sort(p.begin(), p.end());
    return p;
  };

  std::vector<GroupQuery> out;
  out.reserve(static_cast<std::size_t>(count));
  for (int qi = 0; qi < count; ++qi) {
    GroupQuery q;
    q.s = 1 + rng.next_index(fr.N);
    const int nh = 1 + (hpool.size() > 1 ? rng.next_index(2) : 0);
    std::vector<int> nm(static_cast<std::size_t>(c));
    for (int i = 0; i < c; ++i) nm[static_cast<std::size_t>(i)] = 1 + (fr.icols() > 1 ? rng.next_index(2) : 0);
    int k = nh;
    for (int i = 0; i < c; ++i) k += nm[static_cast<std::size_t>(i)];
    const double frac = std::pow(selectivity, 1.0 / k);

    auto make_pred = [&](const std::vector<int>& pool, int n,
                         const std::vector<AttributeSpec>& attrs) {
      Predicate pred;
      for (int a : pick(pool, n)) {
        const int dom = attrs[static_cast<std::size_t>(a)].domain_size;
        const int m = std::max(1, static_cast<int>(std::floor(frac * dom)));
        std::vector<int> vals(static_cast<std::size_t>(dom));
        std::iota(vals.begin(), vals.end(), 0);
        pred.push_back({a, pick(vals, m)});
      }
      return pred;
    };
    q.household = make_pred(hpool, nh, fr.household_attrs);
    std::vector<int> ipool(static_cast<std::size_t>(fr.icols()));
    std::iota(ipool.begin(), ipool.end(), 0);
    for (int i = 0; i < c; ++i)
      q.members.push_back(make_pred(ipool, nm[static_cast<std::size_t>(i)], fr.indiv_attrs));
    out.push_back(std::move(q));
  }
  return out;
}

inline std::int64_t answer_query(const FlattenedRelation& fr, const GroupQuery& q) {
  for (const auto& c : q.household)
    if (c.attr == fr.size_attr_index)
      throw DomainError("household predicate may not target the derived size column");
  std::int64_t n = 0;
  for (const auto& row : fr.rows) {
    if (fr.size_of(row) != q.s) continue;
    bool ok = true;
    for (const auto& c : q.household) {
      if (c.attr < 0 || c.attr >= fr.hcols())
        throw DomainError("query clause attribute out of range");
      if (!eval_detail::clause_matches(c, row[static_cast<std::size_t>(c.attr)])) {
        ok = false;
        break;
      }
    }
    if (!ok) continue;
    std::vector<std::vector<int>> members;
    for (int slot = 1; slot <= q.s; ++slot) {
      std::vector<int> m(static_cast<std::size_t>(fr.icols()));
      for (int a = 0; a < fr.icols(); ++a)
        m[static_cast<std::size_t>(a)] = row[static_cast<std::size_t>(fr.slot_col(slot, a))];
      members.push_back(std::move(m));
    }
    if (eval_detail::witnesses_exist(q.members, q.distinct, members)) ++n;
  }
  return n;
}

inline std::int64_t answer_query(const Database& db, const std::string& individual,
                                 const std::string& fk_attribute, const GroupQuery& q) {
  const RelationSchema& cs = db.schema(individual);
  const int fi = cs.fk_index(fk_attribute);
  if (fi < 0) throw SchemaError(individual + ": no foreign key '" + fk_attribute + "'");
  const RelationSchema& ps = db.schema(cs.foreign_keys[static_cast<std::size_t>(fi)].references);
  std::map<std::string, std::vector<const Row*>> groups;
  for (const auto& r : db.rows(individual))
    groups[r.fks[static_cast<std::size_t>(fi)]].push_back(&r);
  std::int64_t n = 0;
  for (const auto& p : db.rows(ps.name)) {
    auto it = groups.find(p.pk);
    const int sz = it == groups.end() ? 0 : static_cast<int>(it->second.size());
    if (sz != q.s) continue;
    if (!eval_detail::predicate_matches(q.household, p.attrs)) continue;
    std::vector<std::vector<int>> members;
    if (it != groups.end())
      for (const Row* r : it->second) members.push_back(r->attrs);
    if (eval_detail::witnesses_exist(q.members, q.distinct, members)) ++n;
  }
  return n;
}

// |real - syn| / max(real, n/100): the floor keeps near-empty queries from
// dominating the error summary.
inline double rel_error(double real, double syn, double n_households) {
  if (!(n_households >= 1.0)) throw ConfigError("rel_error: need at least one household");
  return std::fabs(real - syn) / std::max(real, 0.01 * n_households);
}

enum class PearsonMode { InterRelational, IntraGroup };

struct PearsonEntry {
  std::string label;
  std::optional<double> r;  // empty when either column is constant
  std::int64_t n = 0;
};

namespace eval_detail {

inline double representative(const AttributeSpec& a, int code) {
  if (a.bin_representatives.empty()) return static_cast<double>(code);
  if (code < 0 || code >= static_cast<int>(a.bin_representatives.size()))
    throw DomainError(a.name + ": code outside bin representatives");
  return a.bin_representatives[static_cast<std::size_t>(code)];
}

struct Corr {
  double sx = 0, sy = 0, sxx = 0, syy = 0, sxy = 0;
  std::int64_t n = 0;
  void add(double x, double y) {
    sx += x;
    sy += y;
    sxx += x * x;
    syy += y * y;
    sxy += x * y;
    ++n;
  }
  // a constant column has no defined coefficient; report that, not zero
  std::optional<double> r() const {
    if (n < 2) return std::nullopt;
    const double d = static_cast<double>(n);
    const double vx = sxx - sx * sx / d, vy = syy - sy * sy / d;
    if (!(vx > 0.0) || !(vy > 0.0)) return std::nullopt;
    return (sxy - sx * sy / d) / std::sqrt(vx * vy);
  }
};

}  // namespace eval_detail

// InterRelational pairs are (household attr, member attr), one sample per
// member under the join. IntraGroup pairs are (member attr, member attr)
// over the self-join within each group: both orderings, no self-pairs.
inline std::vector<PearsonEntry> pearson_report(const Database& db, const std::string& individual,
                                                const std::string& fk_attribute,
                                                const std::vector<std::pair<int, int>>& pairs,
                                                PearsonMode mode) {
  const RelationSchema& cs = db.schema(individual);
  const int fi = cs.fk_index(fk_attribute);
  if (fi < 0) throw SchemaError(individual + ": no foreign key '" + fk_attribute + "'");
  const RelationSchema& ps = db.schema(cs.foreign_keys[static_cast<std::size_t>(fi)].references);
  std::map<std::string, std::vector<const Row*>> groups;
  for (const auto& r : db.rows(individual))
    groups[r.fks[static_cast<std::size_t>(fi)]].push_back(&r);

  std::vector<PearsonEntry> out;
  for (const auto& [a, b] : pairs) {
    eval_detail::Corr corr;
    std::string label;
    if (mode == PearsonMode::InterRelational) {
      if (a < 0 || a >= static_cast<int>(ps.attributes.size()) || b < 0 ||
          b >= static_cast<int>(cs.attributes.size()))
        throw DomainError("pearson pair attribute out of range");
      const AttributeSpec& ha = ps.attributes[static_cast<std::size_t>(a)];
      const AttributeSpec& ia = cs.attributes[static_cast<std::size_t>(b)];
      label = ha.name + "~" + ia.name;
      for (const auto& p : db.rows(ps.name)) {
        auto it = groups.find(p.pk);
        if (it == groups.end()) continue;
        const double x =
            eval_detail::representative(ha, p.attrs[static_cast<std::size_t>(a)]);
        for (const Row* m : it->second)
          corr.add(x, eval_detail::representative(ia, m->attrs[static_cast<std::size_t>(b)]));
      }
    } else {
      if (a < 0 || a >= static_cast<int>(cs.attributes.size()) || b < 0 ||
          b >= static_cast<int>(cs.attributes.size()))
        throw DomainError("pearson pair attribute out of range");
      const AttributeSpec& aa = cs.attributes[static_cast<std::size_t>(a)];
      const AttributeSpec& ab = cs.attributes[static_cast<std::size_t>(b)];
      label = aa.name + "~" + ab.name;
      for (const auto& [pk, ms] : groups) {
        for (std::size_t i = 0; i < ms.size(); ++i)
          for (std::size_t j = 0; j < ms.size(); ++j) {
            if (i == j) continue;
            corr.add(eval_detail::representative(aa, ms[i]->attrs[static_cast<std::size_t>(a)]),
                     eval_detail::representative(ab, ms[j]->attrs[static_cast<std::size_t>(b)]));
          }
      }
    }
    out.push_back({std::move(label), corr.r(), corr.n});
  }
  return out;
}

inline nlohmann::json to_json(const std::vector<PearsonEntry>& entries) {
  nlohmann::json out = nlohmann::json::array();
  for (const auto& e : entries)
    out.push_back({{"pair", e.label},
                   {"r", e.r ? nlohmann::json(*e.r) : nlohmann::json(nullptr)},
                   {"n", e.n}});
  return out;
}

// Baseline for the linkage experiments: keep both independently
// synthesized relations, then assign members to groups uniformly at
// random, with group sizes drawn to match the (noisy) size histogram. A
// histogram whose member total disagrees with |individuals| is repaired by
// rescaling and then moving households one size class at a time; the
// adjustment is logged. The result is an evaluation artifact and is not
// validated against min_group_size.
inline Database random_link_baseline(const RelationSchema& house_schema,
                                     const RelationSchema& indiv_schema,
                                     const std::vector<Row>& house_rows,
                                     const std::vector<Row>& indiv_rows,
                                     const std::vector<double>& size_hist, KeyedRng& rng,
                                     std::ostream* log = nullptr) {
  if (house_rows.empty()) throw DataError("random_link_baseline: no households");
  if (indiv_schema.foreign_keys.size() != 1 ||
      indiv_schema.foreign_keys[0].references != house_schema.name)
    throw ConfigError("random_link_baseline: individuals need exactly one foreign key to " +
                      house_schema.name);

  const std::int64_t H = static_cast<std::int64_t>(house_rows.size());
  const std::int64_t I = static_cast<std::int64_t>(indiv_rows.size());
  std::vector<double> h = size_hist;
  for (double& v : h) v = std::max(0.0, v);
  double W = std::accumulate(h.begin(), h.end(), 0.0);
  if (h.empty() || W <= 0.0) {
    h.assign(2, 0.0);
    h[1] = 1.0;
    W = 1.0;
  }

  // household counts per size: proportional shares, largest remainder
  std::vector<std::int64_t> n_s(h.size(), 0);
  std::vector<std::pair<double, std::size_t>> rem;
  std::int64_t assigned = 0;
  for (std::size_t s = 0; s < h.size(); ++s) {
    const double share = h[s] * static_cast<double>(H) / W;
    n_s[s] = static_cast<std::int64_t>(std::floor(share));
    assigned += n_s[s];
    rem.push_back({share - std::floor(share), s});
  }
  std::stable_sort(rem.begin(), rem.end(),
                   [](const auto& x, const auto& y) { return x.first > y.first; });
  for (std::size_t i = 0; assigned < H; ++i, ++assigned) ++n_s[rem[i % rem.size()].second];

  std::int64_t total = 0;
  for (std::size_t s = 0; s < n_s.size(); ++s) total += static_cast<std::int64_t>(s) * n_s[s];
  if (total != I && log)
    *log << "random_link_baseline: histogram implies " << total << " members for " << I
         << "; repairing\n";
  while (total < I) {
    std::size_t s = 0;
    while (s < n_s.size() && n_s[s] == 0) ++s;
    if (s == n_s.size()) throw NumericError("random_link_baseline: no households to grow");
    if (s + 1 == n_s.size()) n_s.push_back(0);
    --n_s[s];
    ++n_s[s + 1];
    ++total;
  }
  while (total > I) {
    std::size_t s = 1;
    while (s < n_s.size() && n_s[s] == 0) ++s;
    if (s == n_s.size()) throw NumericError("random_link_baseline: histogram repair failed");
    --n_s[s];
    ++n_s[s - 1];
    --total;
  }

  std::vector<int> sizes;
  sizes.reserve(static_cast<std::size_t>(H));
  for (std::size_t s = 0; s < n_s.size(); ++s)
    for (std::int64_t i = 0; i < n_s[s]; ++i) sizes.push_back(static_cast<int>(s));
  for (std::size_t i = sizes.size(); i > 1; --i)
    std::swap(sizes[i - 1], sizes[static_cast<std::size_t>(rng.next_index(static_cast<int>(i)))]);

  std::vector<std::size_t> perm(static_cast<std::size_t>(I));
  std::iota(perm.begin(), perm.end(), 0);
  for (std::size_t i = perm.size(); i > 1; --i)
    std::swap(perm[i - 1], perm[static_cast<std::size_t>(rng.next_index(static_cast<int>(i)))]);

  Database out;
  out.schemas = {house_schema, indiv_schema};
  out.relations[house_schema.name] = house_rows;
  auto& ir = out.relations[indiv_schema.name];
  ir.reserve(static_cast<std::size_t>(I));
  std::size_t next = 0;
  for (std::int64_t hh = 0; hh < H; ++hh)
    for (int k = 0; k < sizes[static_cast<std::size_t>(hh)]; ++k) {
      Row r = indiv_rows[perm[next++]];
      r.fks = {house_rows[static_cast<std::size_t>(hh)].pk};
      ir.push_back(std::move(r));
    }
  return out;
}

// Desk-scale substitute for the survey datasets: a latent factor per
// household drives one household attribute and the first two member
// attributes, so intra-group and household-member correlations are planted
// at known strengths. Values are standard normal draws discretized to
// equal-width bins; the pre-binning loadings are inflated to compensate
// the discretization attenuation.
struct PlantedSpec {
  double intra = 0.6;  // member-member coefficient after binning
  double inter = 0.5;  // household-member coefficient after binning
  int bins = 8;
  double lo = -2.5;
  double hi = 2.5;
  double inflation = 1.06;
  std::vector<double> size_mix = {0.25, 0.30, 0.25, 0.20};  // sizes 1..4
};

inline Database gen_planted_db(int n_households, const PlantedSpec& spec, KeyedRng& rng) {
  if (n_households < 1) throw ConfigError("gen_planted_db: need at least one household");
  if (spec.bins < 2 || !(spec.hi > spec.lo)) throw ConfigError("gen_planted_db: bad binning");
  if (spec.size_mix.empty()) throw ConfigError("gen_planted_db: empty size mix");
  const double mix_sum =
      std::accumulate(spec.size_mix.begin(), spec.size_mix.end(), 0.0);
  if (!(mix_sum > 0.0)) throw ConfigError("gen_planted_db: size mix has no mass");
  const double a2 = spec.intra * spec.inflation;
  if (a2 < 0.0 || a2 >= 1.0) throw ConfigError("gen_planted_db: intra strength outside [0,1)");
  const double a = std::sqrt(a2);
  double c = 0.0;
  if (spec.inter != 0.0) {
    if (a == 0.0) throw ConfigError("gen_planted_db: inter strength needs intra > 0");
    c = spec.inter * spec.inflation / a;
    if (std::fabs(c) >= 1.0)
      throw ConfigError("gen_planted_db: inter strength incompatible with intra");
  }

  const double w = (spec.hi - spec.lo) / spec.bins;
  std::vector<double> reps(static_cast<std::size_t>(spec.bins));
  for (int i = 0; i < spec.bins; ++i)
    reps[static_cast<std::size_t>(i)] = spec.lo + (i + 0.5) * w;
  auto bin = [&](double v) {
    int i = static_cast<int>(std::floor((v - spec.lo) / w));
    return std::clamp(i, 0, spec.bins - 1);
  };

  const int max_size = static_cast<int>(spec.size_mix.size());
  Database db;
  RelationSchema hs;
  hs.name = "household";
  hs.primary_key = "hid";
  hs.privacy = PrivacyClass::Primary;
  hs.attributes = {{"H0", spec.bins, reps}, {"H1", spec.bins, reps}};
  RelationSchema is;
  is.name = "individual";
  is.primary_key = "pid";
  is.privacy = PrivacyClass::Secondary;
  is.attributes = {{"I0", spec.bins, reps},
                   {"I1", spec.bins, reps},
                   {"I2", spec.bins, reps},
                   {"I3", spec.bins, reps}};
  is.foreign_keys = {{"hid", "household", max_size, 1}};
  db.schemas = {hs, is};
  auto& hr = db.relations["household"];
  auto& ir = db.relations["individual"];

  const double hn = std::sqrt(1.0 - c * c);
  const double in = std::sqrt(1.0 - a2);
  int pid = 0;
  for (int i = 0; i < n_households; ++i) {
    const double z = rng.next_gaussian(1.0);
    const int h0 = bin(c * z + hn * rng.next_gaussian(1.0));
    const int h1 = bin(rng.next_gaussian(1.0));
    hr.push_back({"h" + std::to_string(i + 1), {}, {h0, h1}});
    double u = rng.next_uniform() * mix_sum;
    int s = max_size;
    double acc = 0.0;
    for (int t = 0; t < max_size; ++t) {
      acc += spec.size_mix[static_cast<std::size_t>(t)];
      if (u <= acc) {
        s = t + 1;
        break;
      }
    }
    for (int j = 0; j < s; ++j) {
      const int i0 = bin(a * z + in * rng.next_gaussian(1.0));
      const int i1 = bin(a * z + in * rng.next_gaussian(1.0));
      const int i2 = bin(rng.next_gaussian(1.0));
      const int i3 = bin(rng.next_gaussian(1.0));
      ir.push_back({"p" + std::to_string(++pid), {"h" + std::to_string(i + 1)}, {i0, i1, i2, i3}});
    }
  }
  db.validate_schema();
  db.validate_data();
  return db;
}

// Everything a run report needs: per-query answers with their regularized
// errors, error percentiles, and Pearson tables for both databases.
inline nlohmann::json eval_report(const Database& real_db, const Database& syn_db,
                                  const std::string& individual, const std::string& fk_attribute,
                                  const std::vector<GroupQuery>& queries,
                                  const std::vector<std::pair<int, int>>& inter_pairs,
                                  const std::vector<std::pair<int, int>>& intra_pairs) {
  const RelationSchema& cs = real_db.schema(individual);
  const int fi = cs.fk_index(fk_attribute);
  if (fi < 0) throw SchemaError(individual + ": no foreign key '" + fk_attribute + "'");
  const std::string parent = cs.foreign_keys[static_cast<std::size_t>(fi)].references;
  const double n_house = static_cast<double>(real_db.rows(parent).size());

  nlohmann::json rows = nlohmann::json::array();
  std::vector<double> errs;
  for (const auto& q : queries) {
    const std::int64_t real = answer_query(real_db, individual, fk_attribute, q);
    const std::int64_t syn = answer_query(syn_db, individual, fk_attribute, q);
    const double e =
        rel_error(static_cast<double>(real), static_cast<double>(syn), n_house);
    errs.push_back(e);
    rows.push_back({{"query", to_json(q)}, {"real", real}, {"synthetic", syn}, {"rel_error", e}});
  }
  std::vector<double> sorted = errs;
  std::sort(sorted.begin(), sorted.end());
  auto pct = [&](double p) {
    if (sorted.empty()) return 0.0;
    const std::size_t idx = static_cast<std::size_t>(
        std::ceil(p / 100.0 * static_cast<double>(sorted.size())));
    return sorted[std::min(sorted.size() - 1, idx == 0 ? 0 : idx - 1)];
  };
  const double mean =
      errs.empty() ? 0.0
                   : std::accumulate(errs.begin(), errs.end(), 0.0) / static_cast<double>(errs.size());

  nlohmann::json pearson;
  for (const char* side : {"real", "synthetic"}) {
    const Database& d = side == std::string("real") ? real_db : syn_db;
    pearson[side] = {
        {"inter",
         to_json(pearson_report(d, individual, fk_attribute, inter_pairs,
                                PearsonMode::InterRelational))},
        {"intra",
         to_json(pearson_report(d, individual, fk_attribute, intra_pairs,
                                PearsonMode::IntraGroup))}};
  }

  return {{"queries", std::move(rows)},
          {"summary",
           {{"count", errs.size()},
            {"mean", mean},
            {"p50", pct(50)},
            {"p90", pct(90)},
            {"p95", pct(95)},
            {"max", sorted.empty() ? 0.0 : sorted.back()}}},
          {"pearson", std::move(pearson)}};
}

}  // namespace permsyn
