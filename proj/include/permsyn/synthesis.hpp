#pragma once
// Foreign-key pipeline over one flattened relation: noisy pairwise dependence
// scores, a noisy group-size vector, an initial store of normalized
// permutation marginals bought in four equal budget quarters, then one
// structure search and one sampling pass per member attribute, slot by slot.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <ostream>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "permsyn/errors.hpp"
#include "permsyn/flatten.hpp"
#include "permsyn/marginals.hpp"
#include "permsyn/mrf.hpp"
#include "permsyn/privacy.hpp"
#include "permsyn/rng.hpp"
#include "permsyn/single_relation.hpp"
#include "permsyn/table.hpp"

namespace permsyn {

// Noisy pairwise dependence scores, keyed by the letter-canonical form so a
// score bought once answers every renaming of the pair.
class ScoreBook {
 public:
  static std::pair<PrAttr, PrAttr> key(PrAttr a, PrAttr b) {
    CanonicalSet c = canonicalize({a, b});
    return {c.attrs[0], c.attrs[1]};
  }

  void set(PrAttr a, PrAttr b, double v) { scores_[key(a, b)] = v; }

  double pr(PrAttr a, PrAttr b) const {
    auto it = scores_.find(key(a, b));
    if (it == scores_.end()) throw DomainError("no dependence score for pair");
    return it->second;
  }

  // Concrete-slot lookup: distinct member slots map to letters by rank.
  double fr(FrAttr a, FrAttr b) const {
    std::vector<int> slots;
    if (a.slot > 0) slots.push_back(a.slot);
    if (b.slot > 0 && b.slot != a.slot) slots.push_back(b.slot);
    std::sort(slots.begin(), slots.end());
    auto map = [&](FrAttr x) {
      if (x.slot == 0) return PrAttr{-1, x.idx};
      int r = static_cast<int>(std::lower_bound(slots.begin(), slots.end(), x.slot) -
                               slots.begin());
      return PrAttr{r, x.idx};
    };
    return pr(map(a), map(b));
  }

  std::size_t size() const { return scores_.size(); }

 private:
  std::map<std::pair<PrAttr, PrAttr>, double> scores_;
};

// Letters for a concrete-slot attribute set: distinct member slots by rank,
// household attrs stay household. Preserves the given attr order.
inline std::vector<PrAttr> pr_set_of(const std::vector<FrAttr>& S_fr) {
  std::vector<int> slots;
  for (const auto& a : S_fr)
    if (a.slot > 0) slots.push_back(a.slot);
  std::sort(slots.begin(), slots.end());
  slots.erase(std::unique(slots.begin(), slots.end()), slots.end());
  std::vector<PrAttr> out;
  out.reserve(S_fr.size());
  for (const auto& a : S_fr) {
    if (a.slot == 0) {
      out.push_back({-1, a.idx});
    } else {
      int r = static_cast<int>(std::lower_bound(slots.begin(), slots.end(), a.slot) -
                               slots.begin());
      out.push_back({r, a.idx});
    }
  }
  return out;
}

// True dependence score for every basic pair, one charge each: household
// pairs, household-member, same-slot member pairs, and cross-slot member
// pairs up to renaming. A public parent frees only its pure-household pairs;
// the size attribute stays private.
inline ScoreBook compute_noisy_r_scores(const FlattenedRelation& fr, int o, double tau,
                                        double sigma, const std::vector<bool>& house_public,
                                        Ledger& ledger, KeyedRng& rng,
                                        const std::string& label) {
  ScoreBook book;
  auto hpub = [&](int idx) {
    return !house_public.empty() && house_public[static_cast<std::size_t>(idx)];
  };
  auto one = [&](PrAttr p, PrAttr q) {
    double s = r_score(fr, p, q, o);
    bool pub = p.letter < 0 && q.letter < 0 && hpub(p.idx) && hpub(q.idx);
    double delta = (sigma == 0.0 || pub) ? 0.0 : 2.0 * tau;
    charge_and_noise(ledger,
                     label + "/r:" + pr_attr_label(fr, p) + "," + pr_attr_label(fr, q),
                     delta, sigma, &s, 1, rng);
    book.set(p, q, s);
  };
  const int ah = fr.hcols(), ai = fr.icols();
  for (int x = 0; x < ah; ++x)
    for (int y = x + 1; y < ah; ++y) one({-1, x}, {-1, y});
  for (int h = 0; h < ah; ++h)
    for (int i = 0; i < ai; ++i) one({-1, h}, {0, i});
  for (int x = 0; x < ai; ++x)
    for (int y = x + 1; y < ai; ++y) one({0, x}, {0, y});
  for (int x = 0; x < ai; ++x)
    for (int y = x; y < ai; ++y) one({0, x}, {1, y});
  return book;
}

// Top-scoring already-synthesized attributes for one target. The size
// attribute never joins a model scope; it is fixed by the skeleton.
inline std::vector<FrAttr> select_correlated(FrAttr target, const std::vector<FrAttr>& a_syn,
                                             const ScoreBook& book, int n_correlated,
                                             int size_attr_index) {
  std::vector<std::pair<double, FrAttr>> ranked;
  for (const auto& a : a_syn) {
    if (a == target) continue;
    if (a.slot == 0 && a.idx == size_attr_index) continue;
    ranked.push_back({book.fr(a, target), a});
  }
  std::stable_sort(ranked.begin(), ranked.end(),
                   [](const std::pair<double, FrAttr>& x, const std::pair<double, FrAttr>& y) {
                     if (x.first != y.first) return x.first > y.first;
                     return x.second < y.second;
                   });
  std::vector<FrAttr> out;
  for (const auto& [s, a] : ranked) {
    if (static_cast<int>(out.size()) >= n_correlated) break;
    out.push_back(a);
  }
  return out;
}

// Signal floor for a charged marginal: mean cell mass over every group size
// the query materializes must clear lambda mean absolute noise deviations.
inline bool passes_lambda(double n_eff, double cells_total, double sigma, double lambda) {
  if (cells_total <= 0.0) return false;
  return n_eff / cells_total >= lambda * kSqrt2OverPi * sigma;
}

// Merit of candidate set S for seeding attribute A: summed scores against A,
// discounted by the internal redundancy of the rest of the set.
inline double cfs_rho(PrAttr A, const std::vector<PrAttr>& S, const ScoreBook& book) {
  std::vector<PrAttr> rest;
  for (const auto& b : S)
    if (!(b == A)) rest.push_back(b);
  double num = 0.0;
  for (const auto& b : rest) num += book.pr(A, b);
  double pair_sum = 0.0;
  for (std::size_t x = 0; x < rest.size(); ++x)
    for (std::size_t y = x + 1; y < rest.size(); ++y) pair_sum += book.pr(rest[x], rest[y]);
  double rad = std::max(1e-12, static_cast<double>(S.size()) + 2.0 * pair_sum);
  return num / std::sqrt(rad);
}

// Stores the full set and every nonempty subset; insert keeps whichever copy
// of a key carries the lower cell variance.
inline void insert_with_rollups(NpmStore& store, const Npm& m) {
  store.insert(m);
  const std::size_t n = m.attrs.size();
  if (n < 2) return;
  for (unsigned mask = 1; mask < (1u << n) - 1u; ++mask) {
    std::vector<PrAttr> sub;
    for (std::size_t i = 0; i < n; ++i)
      if (mask & (1u << i)) sub.push_back(m.attrs[i]);
    store.insert(rollup(m, sub));
  }
}

// One charged query materializes the attribute set at every group size it is
// defined for. Sizes inside the merge interval [merge_lo, N] share a single
// draw per cell, split in proportion to their noisy counts; the rest draw
// independently. Every subset of the result is stored as a free roll-up.
inline void query_npms(const FlattenedRelation& fr, const std::vector<PrAttr>& S_in,
                       NpmStore& store, const std::vector<double>& tilde_n, double sigma,
                       double tau, int merge_lo, int o, std::int64_t cell_cap, Ledger& ledger,
                       KeyedRng& rng, const std::string& label, const std::string& group = {},
                       const std::string& cls = {}) {
  if (S_in.empty()) throw DomainError("query_npms: empty attribute set");
  if (static_cast<int>(tilde_n.size()) != fr.N + 1)
    throw ConfigError("query_npms: group count vector must cover sizes 0..N");
  CanonicalSet c = canonicalize(S_in);
  const std::vector<PrAttr>& S = c.attrs;
  std::set<int> letters;
  for (const auto& a : S)
    if (a.letter >= 0) letters.insert(a.letter);
  const int D = static_cast<int>(letters.size());
  if (D > o)
    throw DomainError("query_npms: " + std::to_string(D) + " letters exceed order " +
                      std::to_string(o));
  std::vector<int> dims = npm_dims(fr, S);
  if (cell_count(dims) > cell_cap) throw WidthExceeded("query_npms: table exceeds cell cap");

  const double delta = sigma == 0.0 ? 0.0 : tau;
  ledger.append(label, delta, sigma, group, cls);

  std::vector<Npm> per_size;
  for (int s = D; s <= fr.N; ++s) per_size.push_back(count_npm(fr, S, s, o, cell_cap));

  std::vector<std::size_t> merged;
  for (std::size_t p = 0; p < per_size.size(); ++p)
    if (merge_lo >= 1 && per_size[p].group_size >= merge_lo) merged.push_back(p);

  if (!merged.empty() && delta > 0.0) {
    Table sum(dims);
    for (std::size_t p : merged) sum += per_size[p].counts;
    for (std::size_t f = 0; f < sum.size(); ++f) sum[f] += rng.next_gaussian(sigma);
    double denom = 0.0;
    for (std::size_t p : merged) denom += tilde_n[per_size[p].group_size];
    for (std::size_t p : merged) {
      double f = denom > 0.0 ? tilde_n[per_size[p].group_size] / denom
                             : 1.0 / static_cast<double>(merged.size());
      Table t = sum;
      t.scale(f);
      per_size[p].counts = std::move(t);
      per_size[p].cell_variance = f * f * sigma * sigma;
    }
  }
  for (std::size_t p = 0; p < per_size.size(); ++p) {
    bool in_merge = merge_lo >= 1 && per_size[p].group_size >= merge_lo;
    if (!in_merge && delta > 0.0) {
      for (std::size_t f = 0; f < per_size[p].counts.size(); ++f)
        per_size[p].counts[f] += rng.next_gaussian(sigma);
      per_size[p].cell_variance = sigma * sigma;
    }
    per_size[p].total_ref = tilde_n[per_size[p].group_size];
    insert_with_rollups(store, per_size[p]);
  }
}

inline void query_npms(const FlattenedRelation& fr, const std::vector<FrAttr>& S_fr,
                       NpmStore& store, const std::vector<double>& tilde_n, double sigma,
                       double tau, int merge_lo, int o, std::int64_t cell_cap, Ledger& ledger,
                       KeyedRng& rng, const std::string& label, const std::string& group = {},
                       const std::string& cls = {}) {
  query_npms(fr, pr_set_of(S_fr), store, tilde_n, sigma, tau, merge_lo, o, cell_cap, ledger,
             rng, label, group, cls);
}

// Splits parent-stage marginals on the size attribute into per-size
// household NPMs, free of charge: the spend happened when the marginals were
// bought. Only sets that still hold an attribute after the slice survive.
inline void decompose_into_store(const std::map<std::vector<int>, Table>& marginals,
                                 int size_attr_index, int n_max, double cell_variance,
                                 const std::vector<double>& tilde_n, int o, NpmStore& store) {
  for (const auto& [clique, tab] : marginals) {
    if (clique.size() < 2) continue;
    auto pos = std::find(clique.begin(), clique.end(), size_attr_index);
    if (pos == clique.end()) continue;
    const int axis = static_cast<int>(pos - clique.begin());
    if (tab.dims()[axis] != n_max + 1)
      throw DomainError("decompose_into_store: size axis does not span 0..N");
    std::vector<int> out_dims;
    std::vector<PrAttr> attrs;
    for (std::size_t j = 0; j < clique.size(); ++j) {
      if (static_cast<int>(j) == axis) continue;
      out_dims.push_back(tab.dims()[j]);
      attrs.push_back({-1, clique[j]});
    }
    std::vector<int> idx, odx(out_dims.size());
    for (int s = 0; s <= n_max; ++s) {
      Npm m;
      m.attrs = attrs;
      m.group_size = s;
      m.weight_denominator = permutation_weight(s, o);
      m.total_ref = tilde_n[static_cast<std::size_t>(s)];
      m.cell_variance = cell_variance;
      m.counts = Table(out_dims);
      for (std::size_t f = 0; f < tab.size(); ++f) {
        tab.unflatten(f, idx);
        if (idx[axis] != s) continue;
        std::size_t w = 0;
        for (std::size_t j = 0; j < idx.size(); ++j)
          if (static_cast<int>(j) != axis) odx[w++] = idx[j];
        m.counts.at(odx) = tab[f];
      }
      insert_with_rollups(store, m);
    }
  }
}

// Working state of one foreign-key stage.
struct FkState {
  const FlattenedRelation* fr = nullptr;
  FkStagePlan plan;
  SynthesisConfig cfg;
  bool parent_public = false;
  std::vector<FrAttr> a_syn;  // attributes already synthesized
  ScoreBook scores;
  std::vector<double> tilde_n_raw;  // noisy group counts, sizes 0..N
  std::vector<double> tilde_n;      // clipped and rounded
  NpmStore store;
};

namespace fk_detail {

inline int domain_of(const FlattenedRelation& fr, FrAttr a) {
  if (a.slot == 0) return fr.household_attrs[static_cast<std::size_t>(a.idx)].domain_size;
  return fr.indiv_attrs[static_cast<std::size_t>(a.idx)].domain_size;
}

inline std::vector<int> dims_of(const FlattenedRelation& fr, const std::vector<FrAttr>& S) {
  std::vector<int> d;
  d.reserve(S.size());
  for (const auto& a : S) d.push_back(domain_of(fr, a));
  return d;
}

inline std::string set_label(const FlattenedRelation& fr, const std::vector<FrAttr>& S) {
  std::string out;
  for (std::size_t i = 0; i < S.size(); ++i) {
    if (i) out += "+";
    out += fr_attr_label(fr, S[i]);
  }
  return out;
}

// Model distribution over S, with uniform axes for attributes the model does
// not hold (including the no-model case).
inline Table model_dist_over(const Mrf* model, const std::vector<FrAttr>& S,
                             const std::vector<int>& dims) {
  std::vector<FrAttr> cov;
  std::vector<std::size_t> covpos;
  if (model) {
    for (std::size_t i = 0; i < S.size(); ++i)
      if (model->structure.index_of(S[i]) >= 0) {
        cov.push_back(S[i]);
        covpos.push_back(i);
      }
  }
  if (model && cov.size() == S.size()) return model->marginal_of(S);
  Table base = cov.empty() ? Table({}, 1.0) : model->marginal_of(cov);
  double unif = 1.0;
  for (std::size_t i = 0; i < S.size(); ++i) unif /= dims[i];
  for (std::size_t c = 0; c < covpos.size(); ++c) unif *= dims[covpos[c]];
  Table out(dims);
  std::vector<int> idx, bidx(cov.size());
  for (std::size_t f = 0; f < out.size(); ++f) {
    out.unflatten(f, idx);
    for (std::size_t c = 0; c < cov.size(); ++c) bidx[c] = idx[covpos[c]];
    out[f] = base.at(bidx) * unif;
  }
  return out;
}

inline void combinations_rec(int n, int t, std::vector<int>& cur, int start,
                             const std::function<void(const std::vector<int>&)>& fn) {
  if (static_cast<int>(cur.size()) == t) {
    fn(cur);
    return;
  }
  for (int i = start; i <= n - (t - static_cast<int>(cur.size())); ++i) {
    cur.push_back(i);
    combinations_rec(n, t, cur, i + 1, fn);
    cur.pop_back();
  }
}

// ascending index combinations of size t out of 0..n-1, in lexicographic order
inline void for_each_combination(int n, int t,
                                 const std::function<void(const std::vector<int>&)>& fn) {
  if (t <= 0 || t > n) return;
  std::vector<int> cur;
  cur.reserve(static_cast<std::size_t>(t));
  combinations_rec(n, t, cur, 0, fn);
}

inline MrfStructure make_structure(const FlattenedRelation& fr,
                                   const std::vector<std::vector<FrAttr>>& cliques) {
  MrfStructure st;
  std::set<FrAttr> vs;
  for (const auto& c : cliques)
    for (const auto& a : c) vs.insert(a);
  st.variables.assign(vs.begin(), vs.end());
  for (const auto& v : st.variables) st.domains.push_back(domain_of(fr, v));
  st.cliques = cliques;
  return st;
}

}  // namespace fk_detail

// Models for one member attribute: scope, selected cliques, and one fitted
// MRF per group size the slot exists at.
struct TargetModels {
  FrAttr target;
  std::vector<FrAttr> correlated;
  std::vector<FrAttr> scope;  // target plus correlated, sorted
  std::vector<std::vector<FrAttr>> cliques;
  std::map<int, Mrf> by_size;
};

// Structure search for one target: free rounds walk sets the store already
// holds, charged rounds sample candidates, score them against the current
// model with fresh noise, and buy the winner's marginals. The chosen cliques
// are identical across group sizes; only the fitted tables differ.
inline TargetModels construct_mrfs(FkState& st, FrAttr target, Ledger& ledger, KeyedRng& rng,
                                   std::ostream* log = nullptr) {
  const FlattenedRelation& fr = *st.fr;
  const SynthesisConfig& cfg = st.cfg;
  const FkStagePlan& plan = st.plan;
  const int tslot = target.slot;
  if (tslot < 1 || tslot > fr.N)
    throw DomainError("construct_mrfs: target slot outside 1.." + std::to_string(fr.N));
  for (const auto& a : st.a_syn)
    if (a == target) throw DomainError("construct_mrfs: target already synthesized");
  const std::string label = plan.label() + "/mrf:" + fr_attr_label(fr, target);

  TargetModels out;
  out.target = target;
  out.correlated =
      select_correlated(target, st.a_syn, st.scores, cfg.n_correlated, fr.size_attr_index);
  for (const auto& a : out.correlated)
    if (a.slot > tslot) throw DomainError("construct_mrfs: scope attr from a later slot");
  out.scope = out.correlated;
  out.scope.push_back(target);
  std::sort(out.scope.begin(), out.scope.end());
  if (out.scope.size() > 20)
    throw ConfigError("construct_mrfs: scope too wide for subset enumeration");

  std::vector<int> esizes;  // group sizes holding the slot, per the noisy counts
  for (int s = tslot; s <= fr.N; ++s)
    if (st.tilde_n[static_cast<std::size_t>(s)] >= 1.0) esizes.push_back(s);

  auto refit = [&]() {
    out.by_size.clear();
    if (out.cliques.empty()) return;
    MrfStructure mst = fk_detail::make_structure(fr, out.cliques);
    EstimateOptions opt;
    opt.tol = cfg.ipf_tol;
    opt.max_sweeps = cfg.ipf_max_sweeps;
    opt.cell_cap = cfg.cell_cap;
    for (int s = tslot; s <= fr.N; ++s) {
      double tot = std::max(1.0, st.tilde_n[static_cast<std::size_t>(s)]);
      std::vector<Table> targets;
      for (const auto& cl : out.cliques) {
        std::vector<int> dims = fk_detail::dims_of(fr, cl);
        try {
          targets.push_back(st.store.instantiate(cl, s, cfg.o));
        } catch (const MissingNPM&) {
          targets.push_back(Table(dims, tot / static_cast<double>(cell_count(dims))));
        }
      }
      Mrf m = estimate(mst, targets, tot, opt);
      m.group_size = s;
      out.by_size.emplace(s, std::move(m));
    }
  };

  auto model_at = [&](int s) -> const Mrf* {
    auto it = out.by_size.find(s);
    return it == out.by_size.end() ? nullptr : &it->second;
  };

  // gap between stored (or true) counts and the current model, over the
  // group sizes that carry data
  auto h_of = [&](const std::vector<FrAttr>& S, bool true_counts) {
    std::vector<int> dims = fk_detail::dims_of(fr, S);
    double h = 0.0;
    for (int s : esizes) {
      Table counts;
      if (true_counts)
        counts = count_npm(fr, pr_set_of(S), s, cfg.o, cfg.cell_cap).counts;
      else
        counts = st.store.instantiate(S, s, cfg.o);
      Table ref = fk_detail::model_dist_over(model_at(s), S, dims);
      ref.scale(st.tilde_n[static_cast<std::size_t>(s)]);
      h += counts.l1_diff(ref);
    }
    return h;
  };

  auto subsets_of_scope = [&](bool need_target, int min_size) {
    std::vector<std::vector<FrAttr>> sets;
    const std::size_t n = out.scope.size();
    for (unsigned mask = 1; mask < (1u << n); ++mask) {
      std::vector<FrAttr> S;
      for (std::size_t i = 0; i < n; ++i)
        if (mask & (1u << i)) S.push_back(out.scope[i]);
      if (static_cast<int>(S.size()) < min_size ||
          static_cast<int>(S.size()) > cfg.max_clique_attrs)
        continue;
      if (need_target && std::find(S.begin(), S.end(), target) == S.end()) continue;
      std::set<int> slots;
      for (const auto& a : S)
        if (a.slot > 0) slots.insert(a.slot);
      if (static_cast<int>(slots.size()) > cfg.o) continue;
      sets.push_back(std::move(S));
    }
    std::sort(sets.begin(), sets.end(),
              [](const std::vector<FrAttr>& a, const std::vector<FrAttr>& b) {
                if (a.size() != b.size()) return a.size() < b.size();
                return a < b;
              });
    return sets;
  };

  // free rounds: candidates the store fully covers at every data size
  std::vector<std::vector<FrAttr>> pool2;
  for (auto& S : subsets_of_scope(false, 1)) {
    bool covered = true;
    for (int s : esizes)
      if (!st.store.find(pr_set_of(S), s)) {
        covered = false;
        break;
      }
    if (covered) pool2.push_back(std::move(S));
  }
  for (int t = 0; t < cfg.t1 && !pool2.empty(); ++t) {
    double best_h = 0.0;
    std::size_t best = 0;
    for (std::size_t p = 0; p < pool2.size(); ++p) {
      double h = h_of(pool2[p], false);
      if (p == 0 || h > best_h) {
        best_h = h;
        best = p;
      }
    }
    out.cliques.push_back(pool2[best]);
    pool2.erase(pool2.begin() + static_cast<std::ptrdiff_t>(best));
    refit();
  }

  // charged rounds
  const double delta_h = plan.sigma_h == 0.0 ? 0.0 : plan.tau;
  const double delta_m = plan.sigma_m == 0.0 ? 0.0 : plan.tau;
  KeyedRng pick = rng.substream("pick");
  for (int t = 0; t < plan.t2; ++t) {
    std::vector<std::vector<FrAttr>> pool3;
    for (auto& S : subsets_of_scope(true, 2)) {
      if (std::find(out.cliques.begin(), out.cliques.end(), S) != out.cliques.end()) continue;
      std::vector<PrAttr> pr = pr_set_of(S);
      std::set<int> letters;
      for (const auto& a : pr)
        if (a.letter >= 0) letters.insert(a.letter);
      const int D = static_cast<int>(letters.size());
      bool missing = false;
      for (int s = D; s <= fr.N && !missing; ++s)
        if (!st.store.find(pr, s)) missing = true;
      if (!missing) continue;  // nothing left to buy
      double n_eff = 0.0;
      for (int s = D; s <= fr.N; ++s) n_eff += st.tilde_n[static_cast<std::size_t>(s)];
      std::vector<int> dims = fk_detail::dims_of(fr, S);
      double cells_total =
          static_cast<double>(fr.N - D + 1) * static_cast<double>(cell_count(dims));
      if (!passes_lambda(n_eff, cells_total, plan.sigma_m, cfg.lambda_useful)) continue;
      std::vector<std::vector<FrAttr>> trial = out.cliques;
      trial.push_back(S);
      try {
        build_junction_tree(fk_detail::make_structure(fr, trial), cfg.cell_cap);
      } catch (const WidthExceeded&) {
        continue;
      }
      pool3.push_back(std::move(S));
    }
    if (pool3.empty()) {
      for (int q = 0; q < plan.k; ++q)
        forfeit_charge(ledger, label + "/h", delta_h, plan.sigma_h, rng);
      forfeit_charge(ledger, label + "/m", delta_m, plan.sigma_m, rng);
      if (log) *log << label << ": round " << t << " had no candidates\n";
      continue;
    }
    std::vector<std::vector<FrAttr>> sampled;
    {
      std::vector<std::size_t> left(pool3.size());
      for (std::size_t p = 0; p < left.size(); ++p) left[p] = p;
      while (static_cast<int>(sampled.size()) < plan.k && !left.empty()) {
        std::size_t j = pick.next_index(left.size());
        sampled.push_back(pool3[left[j]]);
        left.erase(left.begin() + static_cast<std::ptrdiff_t>(j));
      }
    }
    double best_h = 0.0;
    std::size_t best = 0;
    for (std::size_t q = 0; q < sampled.size(); ++q) {
      double h = h_of(sampled[q], true);
      charge_and_noise(ledger, label + "/h:" + fk_detail::set_label(fr, sampled[q]), delta_h,
                       plan.sigma_h, &h, 1, rng);
      if (q == 0 || h > best_h) {
        best_h = h;
        best = q;
      }
    }
    for (int q = static_cast<int>(sampled.size()); q < plan.k; ++q)
      forfeit_charge(ledger, label + "/h", delta_h, plan.sigma_h, rng);
    const std::vector<FrAttr>& win = sampled[best];
    query_npms(fr, win, st.store, st.tilde_n, plan.sigma_m, plan.tau, cfg.merge_lo, cfg.o,
               cfg.cell_cap, ledger, rng, label + "/m:" + fk_detail::set_label(fr, win));
    out.cliques.push_back(win);
    refit();
  }

  // the sampler needs the target inside the model; back it with its stored
  // unary (uniform at sizes the store misses)
  bool covered = false;
  for (const auto& c : out.cliques)
    covered = covered || std::find(c.begin(), c.end(), target) != c.end();
  if (!covered) {
    out.cliques.push_back({target});
    refit();
  }

  if (log) {
    *log << label << ": scope=" << out.scope.size() << " cliques=" << out.cliques.size();
    for (const auto& [s, m] : out.by_size)
      *log << " s" << s << ":gap=" << m.final_gap << (m.converged ? "" : "!");
    *log << " spent=" << ledger.effective_total() << "\n";
  }
  return out;
}

// Builds the initial store in four equal budget quarters: (a) parent-side
// marginals through the single-table synthesizer, with the size attribute in
// every clique; (b) first-slot marginals per populated group size, composed
// in parallel across sizes; (c) parent-member seed sets; (d) cross-slot seed
// sets. Returns the quarter (a) run, whose sampled rows seed the skeleton
// when no parent rows are supplied.
inline SrResult init_store_full(FkState& st, bool sample_parent, Ledger& ledger, KeyedRng& rng,
                                std::ostream* log = nullptr) {
  const FlattenedRelation& fr = *st.fr;
  const FkStagePlan& plan = st.plan;
  const SynthesisConfig& cfg = st.cfg;
  const std::string L = plan.label();
  const double tau = plan.tau;
  const int ah = fr.hcols(), ai = fr.icols();

  double n_total = 0.0;
  for (double v : st.tilde_n) n_total += v;

  // (a) household columns
  SrData house;
  house.attrs = fr.household_attrs;
  house.rows.reserve(fr.rows.size());
  for (const auto& row : fr.rows)
    house.rows.emplace_back(row.begin(), row.begin() + ah);
  if (st.parent_public) {
    house.is_public.assign(static_cast<std::size_t>(ah), true);
    house.is_public[static_cast<std::size_t>(fr.size_attr_index)] = false;
    house.public_count = true;
  }
  SingleRelationPlan plan_a = single_relation_plan(plan.quarter, ah, 1, tau, true, plan.k);
  KeyedRng rng_a = rng.substream("init-house");
  SrResult house_run = synthesize_single_relation(
      house, plan_a, {fr.size_attr_index},
      [&](int x, int y) { return st.scores.pr({-1, x}, {-1, y}); }, n_total,
      sample_parent ? -1 : 0, cfg, ledger, rng_a, L + "/init-house", {}, {}, log);
  decompose_into_store(house_run.marginals, fr.size_attr_index, fr.N,
                       plan_a.sigma_m * plan_a.sigma_m, st.tilde_n, cfg.o, st.store);

  // (b) first-slot marginals, one parallel class per populated size
  bool any_size = false;
  for (int s = 1; s <= fr.N; ++s) {
    if (st.tilde_n[static_cast<std::size_t>(s)] < 1.0) continue;
    any_size = true;
    SrData slot1;
    slot1.attrs = fr.indiv_attrs;
    slot1.row_weight = 1.0 / static_cast<double>(s);
    for (const auto& row : fr.rows) {
      if (fr.size_of(row) != s) continue;
      for (int slot = 1; slot <= s; ++slot) {
        std::vector<int> member(static_cast<std::size_t>(ai));
        for (int a = 0; a < ai; ++a)
          member[static_cast<std::size_t>(a)] = row[static_cast<std::size_t>(fr.slot_col(slot, a))];
        slot1.rows.push_back(std::move(member));
      }
    }
    SingleRelationPlan plan_b = single_relation_plan(plan.quarter, ai, 0, tau, true, plan.k);
    KeyedRng rng_b = rng.substream("init-slot1/s=" + std::to_string(s));
    SrResult run = synthesize_single_relation(
        slot1, plan_b, {}, [&](int x, int y) { return st.scores.pr({0, x}, {0, y}); },
        st.tilde_n[static_cast<std::size_t>(s)], 0, cfg, ledger, rng_b,
        L + "/init-slot1/s=" + std::to_string(s), L + "/init-slot1", "s=" + std::to_string(s),
        log);
    for (const auto& [clique, tab] : run.marginals) {
      Npm m;
      for (int idx : clique) m.attrs.push_back({0, idx});
      m.group_size = s;
      m.counts = tab;
      m.weight_denominator = permutation_weight(s, cfg.o);
      m.total_ref = st.tilde_n[static_cast<std::size_t>(s)];
      m.cell_variance = plan_b.sigma_m * plan_b.sigma_m;
      insert_with_rollups(st.store, m);
    }
  }
  if (!any_size)
    forfeit_charge(ledger, L + "/init-slot1", tau, tau * std::sqrt(1.0 / plan.quarter), rng,
                   L + "/init-slot1", "s=none");

  // quarters (c) and (d) share the seed-selection shape: for each anchor
  // attribute, take the candidate set with the best redundancy-discounted
  // score and buy its marginals; anchors with nothing to buy forfeit.
  double n_ge1 = 0.0;
  for (int s = 1; s <= fr.N; ++s) n_ge1 += st.tilde_n[static_cast<std::size_t>(s)];

  auto seed_query = [&](PrAttr A, const std::vector<std::vector<PrAttr>>& cands, double sigma,
                        KeyedRng& qrng, const std::string& qlabel) {
    const double delta = sigma == 0.0 ? 0.0 : tau;
    const std::vector<PrAttr>* winner = nullptr;
    double best = 0.0;
    for (const auto& S : cands) {
      if (std::find(S.begin(), S.end(), A) == S.end()) continue;
      double rho = cfs_rho(A, S, st.scores);
      if (!winner || rho > best) {
        winner = &S;
        best = rho;
      }
    }
    if (!winner) {
      forfeit_charge(ledger, qlabel, delta, sigma, qrng);
      return;
    }
    query_npms(fr, *winner, st.store, st.tilde_n, sigma, tau, cfg.merge_lo, cfg.o,
               cfg.cell_cap, ledger, qrng, qlabel);
  };

  // (c) parent-member seeds: 2-3 attributes, at least one household column
  // (the size attribute stays out; its sets come free from quarter (a)) and
  // at least one first-slot member column
  {
    std::vector<PrAttr> elems;
    for (int h = 0; h < ah; ++h)
      if (h != fr.size_attr_index) elems.push_back({-1, h});
    for (int j = 0; j < ai; ++j) elems.push_back({0, j});
    std::vector<std::vector<PrAttr>> pool;
    const int ne = static_cast<int>(elems.size());
    for (int sz = 2; sz <= 3; ++sz) {
      fk_detail::for_each_combination(ne, sz, [&](const std::vector<int>& pickd) {
        std::vector<PrAttr> S;
        bool has_h = false, has_i = false;
        for (int i : pickd) {
          S.push_back(elems[static_cast<std::size_t>(i)]);
          (elems[static_cast<std::size_t>(i)].letter < 0 ? has_h : has_i) = true;
        }
        if (!has_h || !has_i) return;
        std::vector<int> dims = npm_dims(fr, S);
        double cells_total = static_cast<double>(fr.N) * static_cast<double>(cell_count(dims));
        if (!passes_lambda(n_ge1, cells_total, plan.sigma_inter, cfg.lambda_useful)) return;
        pool.push_back(std::move(S));
      });
    }
    KeyedRng rng_c = rng.substream("init-inter");
    const double delta = plan.sigma_inter == 0.0 ? 0.0 : tau;
    for (int h = 0; h < ah; ++h) {
      PrAttr A{-1, h};
      std::string qlabel = L + "/inter:" + pr_attr_label(fr, A);
      if (h == fr.size_attr_index) {
        forfeit_charge(ledger, qlabel, delta, plan.sigma_inter, rng_c);
        continue;
      }
      seed_query(A, pool, plan.sigma_inter, rng_c, qlabel);
    }
    for (int j = 0; j < ai; ++j) {
      PrAttr A{0, j};
      seed_query(A, pool, plan.sigma_inter, rng_c, L + "/inter:" + pr_attr_label(fr, A));
    }
  }

  // (d) cross-slot seeds: for each order up to o, sets using all its letters
  {
    KeyedRng rng_d = rng.substream("init-intra");
    for (int ord = 2; ord <= cfg.o; ++ord) {
      std::vector<PrAttr> elems;
      for (int l = 0; l < ord; ++l)
        for (int j = 0; j < ai; ++j) elems.push_back({l, j});
      double n_ge = 0.0;
      for (int s = ord; s <= fr.N; ++s) n_ge += st.tilde_n[static_cast<std::size_t>(s)];
      std::vector<std::vector<PrAttr>> pool;
      const int ne = static_cast<int>(elems.size());
      const int max_sz = std::max(3, ord);
      for (int sz = ord; sz <= max_sz; ++sz) {
        fk_detail::for_each_combination(ne, sz, [&](const std::vector<int>& pickd) {
          std::vector<PrAttr> S;
          std::set<int> letters;
          for (int i : pickd) {
            S.push_back(elems[static_cast<std::size_t>(i)]);
            letters.insert(elems[static_cast<std::size_t>(i)].letter);
          }
          if (static_cast<int>(letters.size()) != ord) return;
          std::vector<int> dims = npm_dims(fr, S);
          double cells_total =
              static_cast<double>(fr.N - ord + 1) * static_cast<double>(cell_count(dims));
          if (!passes_lambda(n_ge, cells_total, plan.sigma_intra, cfg.lambda_useful)) return;
          pool.push_back(std::move(S));
        });
      }
      for (int j = 0; j < ai; ++j) {
        PrAttr A{ord - 1, j};
        seed_query(A, pool, plan.sigma_intra, rng_d,
                   L + "/intra:o" + std::to_string(ord) + ":" + pr_attr_label(fr, A));
      }
    }
  }
  return house_run;
}

// Full output of one foreign-key stage.
struct FkResult {
  FlattenedRelation synthetic;
  std::vector<std::vector<int>> house_rows;  // skeleton parent rows, coded
  std::vector<double> tilde_n_raw;
  std::vector<double> tilde_n;
  ScoreBook scores;
  NpmStore store;
  SrResult house_run;
  std::vector<FrAttr> attr_order;  // member attributes in sampling order
};

// One complete stage: scores, counts, initial store, then per-target
// structure search and sampling. parent_rows supplies an already-synthesized
// parent (values coded against the household attrs); when empty, the parent
// is sampled inside quarter (a). With sample_parent_sizes, the supplied rows
// are a public parent released verbatim: their size column is ignored and
// redrawn from the quarter (a) model conditioned on the public attributes,
// clamped to the declared group-size range. The realized spend must land on
// the plan: exactly for a private parent, at most for a public one.
inline FkResult synthesize_fk(const FlattenedRelation& fr, const FkStagePlan& plan,
                              const SynthesisConfig& cfg,
                              const std::vector<std::vector<int>>& parent_rows,
                              bool parent_public, Ledger& ledger, std::ostream* log = nullptr,
                              bool sample_parent_sizes = false) {
  if (fr.hcols() != plan.n_house_attrs || fr.icols() != plan.n_indiv_attrs ||
      fr.N != plan.max_size)
    throw ConfigError("synthesize_fk: plan does not match the flattened relation");
  if (fr.size_attr_index < 0 || fr.size_attr_index >= fr.hcols())
    throw ConfigError("synthesize_fk: missing size attribute");
  if (fr.household_attrs[static_cast<std::size_t>(fr.size_attr_index)].domain_size != fr.N + 1)
    throw ConfigError("synthesize_fk: size attribute domain must be 0..N");

  const std::string L = plan.label();
  const double before = ledger.effective_total();
  KeyedRng root(cfg.seed, L);

  FkState st;
  st.fr = &fr;
  st.plan = plan;
  st.cfg = cfg;
  st.parent_public = parent_public;

  std::vector<bool> hpub;
  if (parent_public) {
    hpub.assign(static_cast<std::size_t>(fr.hcols()), true);
    hpub[static_cast<std::size_t>(fr.size_attr_index)] = false;
  }
  KeyedRng rng_r = root.substream("r");
  st.scores = compute_noisy_r_scores(fr, cfg.o, plan.tau, plan.sigma_r, hpub, ledger, rng_r, L);

  st.tilde_n_raw.assign(static_cast<std::size_t>(fr.N + 1), 0.0);
  for (int s = 0; s <= fr.N; ++s)
    st.tilde_n_raw[static_cast<std::size_t>(s)] =
        static_cast<double>(fr.group_counts[static_cast<std::size_t>(s)]);
  KeyedRng rng_n = root.substream("n");
  charge_and_noise(ledger, L + "/n", plan.sigma_n == 0.0 ? 0.0 : plan.tau, plan.sigma_n,
                   st.tilde_n_raw, rng_n);
  st.tilde_n.resize(st.tilde_n_raw.size());
  for (std::size_t s = 0; s < st.tilde_n.size(); ++s)
    st.tilde_n[s] = std::max(0.0, std::floor(st.tilde_n_raw[s] + 0.5));

  KeyedRng rng_init = root.substream("init");
  SrResult house_run = init_store_full(st, parent_rows.empty(), ledger, rng_init, log);

  // skeleton: household columns fixed, live member cells left unsampled
  FkResult res;
  res.house_rows = parent_rows.empty() ? house_run.sampled : parent_rows;
  if (sample_parent_sizes) {
    if (!parent_public || parent_rows.empty())
      throw ConfigError("synthesize_fk: size sampling needs supplied public parent rows");
    if (!house_run.has_model)
      throw NumericError("synthesize_fk: no parent model to draw sizes from");
    const int lo = std::max(0, fr.min_group_size);
    KeyedRng rng_ps = root.substream("parent-sizes");
    std::map<std::vector<int>, std::vector<double>> memo;
    for (auto& hrow : res.house_rows) {
      if (static_cast<int>(hrow.size()) != fr.hcols())
        throw DataError("synthesize_fk: parent row width mismatch");
      std::vector<int> key = hrow;
      key[static_cast<std::size_t>(fr.size_attr_index)] = 0;
      auto it = memo.find(key);
      if (it == memo.end()) {
        std::map<FrAttr, int> ev;
        for (int a = 0; a < fr.hcols(); ++a)
          if (a != fr.size_attr_index) ev[FrAttr{0, a}] = hrow[static_cast<std::size_t>(a)];
        std::vector<double> p =
            house_run.model.conditional(FrAttr{0, fr.size_attr_index}, ev);
        double mass = 0.0;
        for (int s = 0; s <= fr.N; ++s) {
          if (s < lo) p[static_cast<std::size_t>(s)] = 0.0;
          mass += p[static_cast<std::size_t>(s)];
        }
        if (mass > 0.0) {
          for (double& v : p) v /= mass;
        } else {
          p.assign(p.size(), 0.0);
          for (int s = lo; s <= fr.N; ++s)
            p[static_cast<std::size_t>(s)] = 1.0 / static_cast<double>(fr.N - lo + 1);
        }
        it = memo.emplace(std::move(key), std::move(p)).first;
      }
      const std::vector<double>& p = it->second;
      double u = rng_ps.next_uniform(), acc = 0.0;
      int s = fr.N;
      for (std::size_t cix = 0; cix < p.size(); ++cix) {
        acc += p[cix];
        if (u <= acc) {
          s = static_cast<int>(cix);
          break;
        }
      }
      hrow[static_cast<std::size_t>(fr.size_attr_index)] = s;
    }
  }
  res.synthetic = fr;
  res.synthetic.rows.clear();
  res.synthetic.rows.reserve(res.house_rows.size());
  for (const auto& hrow : res.house_rows) {
    if (static_cast<int>(hrow.size()) != fr.hcols())
      throw DataError("synthesize_fk: parent row width mismatch");
    for (int a = 0; a < fr.hcols(); ++a)
      if (hrow[static_cast<std::size_t>(a)] < 0 ||
          hrow[static_cast<std::size_t>(a)] >=
              fr.household_attrs[static_cast<std::size_t>(a)].domain_size)
        throw DataError("synthesize_fk: parent value out of domain");
    std::vector<int> row(static_cast<std::size_t>(fr.width()));
    for (int a = 0; a < fr.hcols(); ++a) row[static_cast<std::size_t>(a)] = hrow[static_cast<std::size_t>(a)];
    const int s = hrow[static_cast<std::size_t>(fr.size_attr_index)];
    for (int slot = 1; slot <= fr.N; ++slot)
      for (int a = 0; a < fr.icols(); ++a)
        row[static_cast<std::size_t>(fr.slot_col(slot, a))] = slot <= s ? -1 : fr.null_code(a);
    res.synthetic.rows.push_back(std::move(row));
  }

  for (int h = 0; h < fr.hcols(); ++h) st.a_syn.push_back({0, h});

  // member attributes ordered by summed affinity to the household side
  std::vector<int> ord(static_cast<std::size_t>(fr.icols()));
  for (int j = 0; j < fr.icols(); ++j) ord[static_cast<std::size_t>(j)] = j;
  std::vector<double> affinity(static_cast<std::size_t>(fr.icols()), 0.0);
  for (int j = 0; j < fr.icols(); ++j)
    for (int h = 0; h < fr.hcols(); ++h)
      affinity[static_cast<std::size_t>(j)] += st.scores.pr({-1, h}, {0, j});
  std::stable_sort(ord.begin(), ord.end(), [&](int a, int b) {
    if (affinity[static_cast<std::size_t>(a)] != affinity[static_cast<std::size_t>(b)])
      return affinity[static_cast<std::size_t>(a)] > affinity[static_cast<std::size_t>(b)];
    return a < b;
  });

  for (int slot = 1; slot <= fr.N; ++slot) {
    for (int j : ord) {
      FrAttr target{slot, j};
      KeyedRng rng_t = root.substream("mrf:" + fr_attr_label(fr, target));
      TargetModels tm = construct_mrfs(st, target, ledger, rng_t, log);

      KeyedRng rng_s = root.substream("sample:" + fr_attr_label(fr, target));
      std::map<std::pair<int, std::vector<int>>, std::vector<double>> memo;
      const int dom = fr.indiv_attrs[static_cast<std::size_t>(j)].domain_size;
      const int col = fr.slot_col(slot, j);
      for (auto& row : res.synthetic.rows) {
        const int s = row[static_cast<std::size_t>(fr.size_attr_index)];
        if (s < slot) continue;
        std::vector<int> ev_vals;
        ev_vals.reserve(tm.correlated.size());
        for (const auto& a : tm.correlated)
          ev_vals.push_back(
              row[static_cast<std::size_t>(a.slot == 0 ? a.idx : fr.slot_col(a.slot, a.idx))]);
        auto mkey = std::make_pair(s, std::move(ev_vals));
        auto it = memo.find(mkey);
        if (it == memo.end()) {
          std::vector<double> p;
          auto mit = tm.by_size.find(s);
          if (mit == tm.by_size.end()) {
            p.assign(static_cast<std::size_t>(dom), 1.0 / dom);
          } else {
            std::map<FrAttr, int> ev;
            for (std::size_t e = 0; e < tm.correlated.size(); ++e)
              ev[tm.correlated[e]] = mkey.second[e];
            p = mit->second.conditional(target, ev);
          }
          it = memo.emplace(std::move(mkey), std::move(p)).first;
        }
        const std::vector<double>& p = it->second;
        double u = rng_s.next_uniform(), acc = 0.0;
        int v = dom - 1;
        for (std::size_t cix = 0; cix < p.size(); ++cix) {
          acc += p[cix];
          if (u <= acc) {
            v = static_cast<int>(cix);
            break;
          }
        }
        row[static_cast<std::size_t>(col)] = v;
      }
      st.a_syn.push_back(target);
      res.attr_order.push_back(target);
    }
  }

  res.synthetic.group_counts = count_group_sizes(res.synthetic);
  res.synthetic.validate();

  const double realized = ledger.effective_total() - before;
  const double planned = plan.planned_total();
  const double tol = 1e-9 * std::max(1.0, planned);
  if (parent_public) {
    if (realized > planned + tol)
      throw NumericError(L + ": realized spend exceeds the plan");
  } else if (std::fabs(realized - planned) > tol) {
    throw NumericError(L + ": realized spend differs from the plan");
  }
  if (log)
    *log << L << ": rows=" << res.synthetic.rows.size() << " spend=" << realized << "/"
         << planned << "\n";

  res.tilde_n_raw = std::move(st.tilde_n_raw);
  res.tilde_n = std::move(st.tilde_n);
  res.scores = std::move(st.scores);
  res.store = std::move(st.store);
  res.house_run = std::move(house_run);
  return res;
}

}  // namespace permsyn
