#pragma once

#include <algorithm>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "permsyn/flatten.hpp"
#include "permsyn/io.hpp"
#include "permsyn/table.hpp"

namespace permsyn {

constexpr std::int64_t kDefaultCellCap = 10'000'000;

// Attribute of the permutation relation: owned by the household (letter -1)
// or by an anonymous member slot letter a,b,c,... (0,1,2,...). idx indexes
// household_attrs or indiv_attrs of the flattened relation.
struct PrAttr {
  int letter = -1;
  int idx = 0;
  auto operator<=>(const PrAttr&) const = default;
};

// Attribute of the flattened relation: slot 0 is the household part, slots
// 1..N are concrete member positions.
struct FrAttr {
  int slot = 0;
  int idx = 0;
  auto operator<=>(const FrAttr&) const = default;
};

inline std::string pr_attr_label(const FlattenedRelation& fr, PrAttr a) {
  if (a.letter < 0) return "H." + fr.household_attrs[a.idx].name;
  return std::string("I_") + static_cast<char>('a' + a.letter) + "." + fr.indiv_attrs[a.idx].name;
}
inline std::string fr_attr_label(const FlattenedRelation& fr, FrAttr a) {
  if (a.slot == 0) return "H." + fr.household_attrs[a.idx].name;
  return "I_" + std::to_string(a.slot) + "." + fr.indiv_attrs[a.idx].name;
}
// positional form for contexts with no relation at hand (model dumps, errors)
inline std::string fr_attr_label(FrAttr a) {
  if (a.slot == 0) return "H.a" + std::to_string(a.idx);
  return "I_" + std::to_string(a.slot) + ".a" + std::to_string(a.idx);
}

// Number of permutation tuples each size-s group contributes to an order-o
// permutation relation: s!/(s-o)! when s >= o, else s! (all members, permuted).
inline std::int64_t permutation_weight(int s, int o) {
  if (s < 0 || o < 1) throw DomainError("permutation_weight: bad arguments");
  std::int64_t w = 1;
  if (s >= o) {
    for (int k = s - o + 1; k <= s; ++k) w *= k;
  } else {
    for (int k = 2; k <= s; ++k) w *= k;
  }
  return w;
}

// Letter-renaming canonical form: the lexicographically least sorted attr
// list over all bijections of the distinct letters. Any two renamings of the
// same set land on the identical canonical list.
struct CanonicalSet {
  std::vector<PrAttr> attrs;  // sorted canonical order
  std::vector<int> perm;      // perm[i] = position of input attr i in attrs
};

inline CanonicalSet canonicalize(const std::vector<PrAttr>& S) {
  std::vector<int> letters;
  for (const auto& a : S)
    if (a.letter >= 0) letters.push_back(a.letter);
  std::sort(letters.begin(), letters.end());
  letters.erase(std::unique(letters.begin(), letters.end()), letters.end());
  const int D = static_cast<int>(letters.size());

  std::vector<int> assign(D);
  for (int j = 0; j < D; ++j) assign[j] = j;
  std::vector<PrAttr> best;
  std::vector<int> best_assign;
  do {
    std::vector<PrAttr> mapped = S;
    for (auto& a : mapped)
      if (a.letter >= 0) {
        int r = static_cast<int>(std::lower_bound(letters.begin(), letters.end(), a.letter) -
                                 letters.begin());
        a.letter = assign[r];
      }
    std::sort(mapped.begin(), mapped.end());
    if (best.empty() || mapped < best) {
      best = mapped;
      best_assign = assign;
    }
  } while (std::next_permutation(assign.begin(), assign.end()));

  CanonicalSet out;
  out.attrs = best.empty() ? std::vector<PrAttr>{} : best;
  if (best.empty()) {
    std::vector<PrAttr> sorted = S;
    std::sort(sorted.begin(), sorted.end());
    out.attrs = sorted;
  }
  out.perm.resize(S.size());
  std::vector<bool> used(out.attrs.size(), false);
  for (std::size_t i = 0; i < S.size(); ++i) {
    PrAttr m = S[i];
    if (m.letter >= 0) {
      int r = static_cast<int>(std::lower_bound(letters.begin(), letters.end(), m.letter) -
                               letters.begin());
      m.letter = best_assign.empty() ? m.letter : best_assign[r];
    }
    for (std::size_t p = 0; p < out.attrs.size(); ++p)
      if (!used[p] && out.attrs[p] == m) {
        out.perm[i] = static_cast<int>(p);
        used[p] = true;
        break;
      }
  }
  return out;
}

// Normalized permutation marginal: a dense table over the attrs, scaled so
// the pre-noise total is n_s.
struct Npm {
  std::vector<PrAttr> attrs;
  int group_size = 0;
  Table counts;
  std::int64_t weight_denominator = 1;  // W_s used in normalization
  double total_ref = 0;                 // n_s, or its noisy estimate
  double cell_variance = 0;             // 0 for exact counts
};

inline std::vector<int> npm_dims(const FlattenedRelation& fr, const std::vector<PrAttr>& S) {
  std::vector<int> dims;
  for (const auto& a : S) {
    if (a.letter < 0) {
      if (a.idx < 0 || a.idx >= fr.hcols()) throw DomainError("npm attr: bad household index");
      dims.push_back(fr.household_attrs[a.idx].domain_size);
    } else {
      if (a.idx < 0 || a.idx >= fr.icols()) throw DomainError("npm attr: bad member index");
      dims.push_back(fr.indiv_attrs[a.idx].domain_size);
    }
  }
  return dims;
}

namespace npm_detail {

// Ordered tuples of distinct member slots for the letter ranks, accumulated
// in exact integers so parallel callers get bit-identical results.
inline void enumerate(const std::vector<int>& row, const FlattenedRelation& fr,
                      const std::vector<PrAttr>& S, const std::vector<int>& letter_rank_of_attr,
                      int D, int s, std::int64_t mult, std::vector<std::int64_t>& acc,
                      const std::vector<int>& dims) {
  std::vector<int> member(D);   // member slot assigned to each letter rank
  std::vector<bool> used(s + 1, false);
  std::vector<int> idx(S.size());
  auto leaf = [&]() {
    std::size_t flat = 0;
    for (std::size_t a = 0; a < S.size(); ++a) {
      int v = S[a].letter < 0 ? row[S[a].idx]
                              : row[fr.slot_col(member[letter_rank_of_attr[a]], S[a].idx)];
      flat = flat * dims[a] + v;
    }
    acc[flat] += mult;
  };
  auto rec = [&](auto&& self, int r) -> void {
    if (r == D) {
      leaf();
      return;
    }
    for (int m = 1; m <= s; ++m) {
      if (used[m]) continue;
      used[m] = true;
      member[r] = m;
      self(self, r + 1);
      used[m] = false;
    }
  };
  rec(rec, 0);
}

}  // namespace npm_detail

// NPM via the extension identity: per flattened row of size s, enumerate
// ordered D-tuples of distinct members for the D distinct letters, weight
// each match by (s-D)!/(s-o')! with o' = min(s,o), then scale by 1/W_s.
// Equivalent to counting over the fully materialized permutation relation.
inline Npm count_npm(const FlattenedRelation& fr, const std::vector<PrAttr>& S, int s, int o,
                     std::int64_t cell_cap = kDefaultCellCap) {
  std::vector<int> letters;
  for (const auto& a : S)
    if (a.letter >= 0) letters.push_back(a.letter);
  std::sort(letters.begin(), letters.end());
  letters.erase(std::unique(letters.begin(), letters.end()), letters.end());
  const int D = static_cast<int>(letters.size());
  if (D > o) throw DomainError("count_npm: " + std::to_string(D) + " letters exceed order " +
                               std::to_string(o));
  if (D > s) throw DomainError("count_npm: " + std::to_string(D) + " letters exceed group size " +
                               std::to_string(s));

  std::vector<int> dims = npm_dims(fr, S);
  if (cell_count(dims) > cell_cap) throw WidthExceeded("count_npm: table exceeds cell cap");

  std::vector<int> letter_rank_of_attr(S.size(), -1);
  for (std::size_t a = 0; a < S.size(); ++a)
    if (S[a].letter >= 0)
      letter_rank_of_attr[a] = static_cast<int>(
          std::lower_bound(letters.begin(), letters.end(), S[a].letter) - letters.begin());

  const int op = std::min(s, o);
  std::int64_t mult = 1;
  for (int k = s - op + 1; k <= s - D; ++k) mult *= k;  // (s-D)!/(s-o')!
  const std::int64_t W = permutation_weight(s, o);

  std::vector<std::int64_t> acc(static_cast<std::size_t>(cell_count(dims)), 0);
  std::int64_t n_s = 0;
  for (const auto& row : fr.rows) {
    if (fr.size_of(row) != s) continue;
    ++n_s;
    npm_detail::enumerate(row, fr, S, letter_rank_of_attr, D, s, mult, acc, dims);
  }

  Npm m;
  m.attrs = S;
  m.group_size = s;
  m.weight_denominator = W;
  m.total_ref = static_cast<double>(n_s);
  m.counts = Table(dims);
  for (std::size_t i = 0; i < acc.size(); ++i)
    m.counts[i] = static_cast<double>(acc[i]) / static_cast<double>(W);
  return m;
}

// Sums an NPM down to a subset of its attrs (in the order given). The total
// is preserved; per-cell variance grows by the collapse factor.
inline Npm rollup(const Npm& m, const std::vector<PrAttr>& S_sub) {
  std::vector<int> keep;
  for (const auto& a : S_sub) {
    auto it = std::find(m.attrs.begin(), m.attrs.end(), a);
    if (it == m.attrs.end()) throw SubsetError("rollup: attr not in marginal");
    keep.push_back(static_cast<int>(it - m.attrs.begin()));
  }
  Npm out;
  out.attrs = S_sub;
  out.group_size = m.group_size;
  out.weight_denominator = m.weight_denominator;
  out.total_ref = m.total_ref;
  out.counts = m.counts.rollup(keep);
  double factor = static_cast<double>(m.counts.size()) / static_cast<double>(out.counts.size());
  out.cell_variance = m.cell_variance * factor;
  return out;
}

// Store of noisy NPMs keyed by canonical attr set and group size. Inserting
// an already-present key keeps whichever table has the lower cell variance.
class NpmStore {
 public:
  struct Key {
    std::vector<PrAttr> attrs;
    int s;
    auto operator<=>(const Key&) const = default;
  };

  void insert(Npm m) {
    CanonicalSet c = canonicalize(m.attrs);
    std::vector<int> axis_of(c.attrs.size());
    for (std::size_t i = 0; i < c.perm.size(); ++i) axis_of[c.perm[i]] = static_cast<int>(i);
    m.counts = m.counts.permute_axes(axis_of);
    m.attrs = c.attrs;
    Key k{m.attrs, m.group_size};
    auto it = entries_.find(k);
    if (it == entries_.end() || m.cell_variance < it->second.cell_variance)
      entries_[std::move(k)] = std::move(m);
    cache_.clear();
  }

  const Npm* find(const std::vector<PrAttr>& S, int s) const {
    auto it = entries_.find(Key{canonicalize(S).attrs, s});
    return it == entries_.end() ? nullptr : &it->second;
  }

  const std::map<Key, Npm>& entries() const { return entries_; }
  std::size_t size() const { return entries_.size(); }

  // Concrete-slot table for an FR attribute set: relabels (and if necessary
  // first rolls up) a stored NPM whose letters cover the requested slots.
  const Table& instantiate(const std::vector<FrAttr>& S_fr, int s, int o) const {
    auto cit = cache_.find({S_fr, s});
    if (cit != cache_.end()) return cit->second;

    std::vector<int> slots;
    for (const auto& a : S_fr)
      if (a.slot > 0) slots.push_back(a.slot);
    std::sort(slots.begin(), slots.end());
    slots.erase(std::unique(slots.begin(), slots.end()), slots.end());
    if (static_cast<int>(slots.size()) > o)
      throw DomainError("instantiate: more distinct slots than the order");
    if (!slots.empty() && slots.back() > s)
      throw DomainError("instantiate: slot index exceeds group size");

    std::vector<PrAttr> S;
    for (const auto& a : S_fr) {
      if (a.slot == 0) {
        S.push_back({-1, a.idx});
      } else {
        int r = static_cast<int>(std::lower_bound(slots.begin(), slots.end(), a.slot) -
                                 slots.begin());
        S.push_back({r, a.idx});
      }
    }
    CanonicalSet c = canonicalize(S);

    Table tab;
    auto it = entries_.find(Key{c.attrs, s});
    if (it != entries_.end()) {
      tab = it->second.counts;
    } else {
      tab = rollup_from_superset(c.attrs, s);
    }
    // axis i of the result = position of S_fr[i] in the canonical list
    Table out = tab.permute_axes(c.perm);
    return cache_.emplace(CacheKey{S_fr, s}, std::move(out)).first->second;
  }

 private:
  struct CacheKey {
    std::vector<FrAttr> attrs;
    int s;
    auto operator<=>(const CacheKey&) const = default;
  };

  // Finds a stored NPM containing the wanted attrs under some injective
  // letter renaming and rolls it up. Smallest table wins.
  Table rollup_from_superset(const std::vector<PrAttr>& want, int s) const {
    std::vector<int> want_letters;
    for (const auto& a : want)
      if (a.letter >= 0) want_letters.push_back(a.letter);
    std::sort(want_letters.begin(), want_letters.end());
    want_letters.erase(std::unique(want_letters.begin(), want_letters.end()), want_letters.end());

    const Npm* best = nullptr;
    std::vector<int> best_keep;
    for (const auto& [key, npm] : entries_) {
      if (key.s != s || key.attrs.size() < want.size()) continue;
      if (best && npm.counts.size() >= best->counts.size()) continue;
      std::vector<int> have_letters;
      for (const auto& a : key.attrs)
        if (a.letter >= 0) have_letters.push_back(a.letter);
      std::sort(have_letters.begin(), have_letters.end());
      have_letters.erase(std::unique(have_letters.begin(), have_letters.end()),
                         have_letters.end());
      if (have_letters.size() < want_letters.size()) continue;

      // try every injective map of wanted letters into stored letters
      std::vector<int> sel(have_letters.size());
      for (std::size_t i = 0; i < sel.size(); ++i) sel[i] = static_cast<int>(i);
      std::vector<std::vector<int>> maps;
      std::sort(sel.begin(), sel.end());
      do {
        maps.emplace_back(sel.begin(), sel.begin() + want_letters.size());
      } while (std::next_permutation(sel.begin(), sel.end()));
      std::sort(maps.begin(), maps.end());
      maps.erase(std::unique(maps.begin(), maps.end()), maps.end());

      for (const auto& mp : maps) {
        std::vector<int> keep;
        bool ok = true;
        for (const auto& a : want) {
          PrAttr mapped = a;
          if (a.letter >= 0) {
            int r = static_cast<int>(
                std::lower_bound(want_letters.begin(), want_letters.end(), a.letter) -
                want_letters.begin());
            mapped.letter = have_letters[mp[r]];
          }
          auto pos = std::find(key.attrs.begin(), key.attrs.end(), mapped);
          if (pos == key.attrs.end()) {
            ok = false;
            break;
          }
          keep.push_back(static_cast<int>(pos - key.attrs.begin()));
        }
        if (ok) {
          best = &npm;
          best_keep = keep;
          break;
        }
      }
    }
    if (!best) throw MissingNPM("no stored marginal covers the requested attribute set");
    return best->counts.rollup(best_keep);
  }

  std::map<Key, Npm> entries_;
  mutable std::map<CacheKey, Table> cache_;
};

// Pairwise dependence score: half the L1 gap between the joint and the
// product of its singles, accumulated over group sizes where the pair exists
// and carries data.
inline double r_score(const FlattenedRelation& fr, PrAttr a1, PrAttr a2, int o) {
  if (a1 == a2) throw DomainError("r_score: identical attributes");
  int D = 0;
  if (a1.letter >= 0) ++D;
  if (a2.letter >= 0 && a2.letter != a1.letter) ++D;
  if (D > o) throw DomainError("r_score: pair needs more letters than the order");

  double r = 0;
  for (int s = 0; s <= fr.N; ++s) {
    if (fr.group_counts[s] <= 0 || D > s) continue;
    Npm pair = count_npm(fr, {a1, a2}, s, o);
    Npm m1 = rollup(pair, {a1});
    Npm m2 = rollup(pair, {a2});
    Table indep = Table::outer(m1.counts, m2.counts);
    indep.scale(1.0 / static_cast<double>(fr.group_counts[s]));
    r += 0.5 * pair.counts.l1_diff(indep);
  }
  return r;
}

inline Csv npm_to_csv(const FlattenedRelation& fr, const Npm& m) {
  Csv t;
  for (const auto& a : m.attrs) t.header.push_back(pr_attr_label(fr, a));
  t.header.push_back("count");
  std::vector<int> idx;
  for (std::size_t f = 0; f < m.counts.size(); ++f) {
    m.counts.unflatten(f, idx);
    std::vector<std::string> cells;
    for (int v : idx) cells.push_back(std::to_string(v));
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.9g", m.counts[f]);
    cells.push_back(buf);
    t.rows.push_back(std::move(cells));
  }
  return t;
}

}  // namespace permsyn
