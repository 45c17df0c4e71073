#pragma once
// Single-table synthesizer: noisy pairwise dependence scores pick a
// base-plus-growth set of marginals, an MRF is fit to the noisy tables, and
// rows fall out of its conditionals one attribute at a time.
//
// Two budget modes mirror SingleRelationPlan. A full run owns its row count
// and its pairwise scores; a marginals-only run inherits both from the caller
// and spends the whole share on structure. Queries touching only public
// attributes are charged at sensitivity zero and stay exact.

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
#include "permsyn/mrf.hpp"
#include "permsyn/privacy.hpp"
#include "permsyn/rng.hpp"
#include "permsyn/schema.hpp"
#include "permsyn/table.hpp"

namespace permsyn {

inline constexpr double kSqrt2OverPi = 0.7978845608028654;

// Row-coded dataset as the synthesizer sees it. row_weight scales every
// count (slot projections of permutation relations weight members by 1/s).
struct SrData {
  std::vector<AttributeSpec> attrs;
  std::vector<std::vector<int>> rows;
  double row_weight = 1.0;
  std::vector<bool> is_public;  // empty means all attributes private
  bool public_count = false;    // row count needs no noise

  bool attr_public(int i) const {
    return !is_public.empty() && is_public[static_cast<std::size_t>(i)];
  }
};

struct SrResult {
  double total = 0.0;  // clipped rounded noisy row count the model was fit to
  std::vector<std::vector<int>> cliques;        // sorted attr-index sets
  std::map<std::vector<int>, Table> marginals;  // noisy counts per clique
  Mrf model;
  bool has_model = false;
  std::vector<std::vector<int>> sampled;
};

namespace sr_detail {

inline void validate_sr_data(const SrData& d) {
  if (!d.is_public.empty() && d.is_public.size() != d.attrs.size())
    throw ConfigError("is_public mask length != attribute count");
  if (!(d.row_weight > 0.0)) throw ConfigError("row_weight must be positive");
  for (const auto& row : d.rows) {
    if (row.size() != d.attrs.size())
      throw DataError("row width != attribute count");
    for (std::size_t j = 0; j < row.size(); ++j) {
      if (row[j] < 0 || row[j] >= d.attrs[j].domain_size)
        throw DataError("value out of domain in column " + d.attrs[j].name);
    }
  }
}

inline Table count_marginal(const SrData& d, const std::vector<int>& S) {
  std::vector<int> dims;
  dims.reserve(S.size());
  for (int a : S) dims.push_back(d.attrs[static_cast<std::size_t>(a)].domain_size);
  Table t(dims);
  std::vector<int> idx(S.size());
  for (const auto& row : d.rows) {
    for (std::size_t j = 0; j < S.size(); ++j)
      idx[j] = row[static_cast<std::size_t>(S[j])];
    t.at(idx) += d.row_weight;
  }
  return t;
}

// Half the L1 gap between the joint and the product of its own margins.
inline double pair_score_from_counts(const Table& joint) {
  double n = joint.total();
  if (!(n > 0.0)) return 0.0;
  Table a = joint.rollup({0});
  Table b = joint.rollup({1});
  Table indep = Table::outer(a, b);
  indep.scale(1.0 / n);
  return 0.5 * joint.l1_diff(indep);
}

inline std::string idx_set_label(const SrData& d, const std::vector<int>& S) {
  std::string out;
  for (std::size_t j = 0; j < S.size(); ++j) {
    if (j) out += ",";
    out += d.attrs[static_cast<std::size_t>(S[j])].name;
  }
  return out;
}

}  // namespace sr_detail

// Generic weighted synthesizer over one coded table.
//   required     attr indices every selected marginal must contain (the FK
//                size column for household runs; empty for member runs)
//   ext_scores   marginals-only: caller-supplied noisy pair scores
//   total_hint   marginals-only: externally estimated row count
//   sample_count rows to emit; -1 means the rounded noisy count, 0 skips
// All ledger charges carry (group, cls) so parallel runs compose per class.
inline SrResult synthesize_single_relation(
    const SrData& data, const SingleRelationPlan& plan,
    const std::vector<int>& required,
    const std::function<double(int, int)>& ext_scores, double total_hint,
    std::int64_t sample_count, const SynthesisConfig& cfg, Ledger& ledger,
    KeyedRng& rng, const std::string& label, const std::string& group = {},
    const std::string& cls = {}, std::ostream* log = nullptr) {
  sr_detail::validate_sr_data(data);
  const int m = static_cast<int>(data.attrs.size());
  if (plan.n_attrs != m) throw ConfigError("plan attr count != data attr count");
  if (static_cast<std::size_t>(plan.n_required) != required.size())
    throw ConfigError("plan required count != required set size");
  if (plan.marginals_only && !ext_scores)
    throw ConfigError("marginals-only run needs external pair scores");
  for (int a : required)
    if (a < 0 || a >= m) throw ConfigError("required attr index out of range");

  const double tau = plan.tau;
  bool all_public = !data.is_public.empty();
  for (int i = 0; i < m && all_public; ++i) all_public = data.attr_public(i);
  auto query_delta = [&](const std::vector<int>& S, double sigma) {
    if (sigma == 0.0) return 0.0;
    for (int a : S)
      if (!data.attr_public(a)) return tau;
    return S.empty() ? tau : 0.0;
  };

  SrResult res;
  auto charge_scalar = [&](const std::string& lab, double v, double delta,
                           double sigma) {
    charge_and_noise(ledger, lab, delta, sigma, &v, 1, rng, group, cls);
    return v;
  };

  // Row count: owned in full mode, inherited in marginals-only mode.
  double n_raw;
  if (plan.marginals_only) {
    n_raw = total_hint;
  } else {
    double n_true = static_cast<double>(data.rows.size()) * data.row_weight;
    double delta = (data.public_count || plan.sigma_count == 0.0) ? 0.0 : tau;
    n_raw = charge_scalar(label + "/count", n_true, delta, plan.sigma_count);
  }
  res.total = std::max(0.0, std::floor(n_raw + 0.5));
  const double fit_total = std::max(1.0, res.total);

  if (m == 0) {
    std::int64_t want = sample_count < 0
                            ? static_cast<std::int64_t>(std::llround(res.total))
                            : sample_count;
    res.sampled.assign(static_cast<std::size_t>(std::max<std::int64_t>(0, want)),
                       std::vector<int>{});
    return res;
  }

  // Pairwise dependence scores over every attr pair, noisy in full mode.
  std::map<std::pair<int, int>, double> score;
  for (int i = 0; i < m; ++i) {
    for (int j = i + 1; j < m; ++j) {
      if (plan.marginals_only) {
        score[{i, j}] = ext_scores(i, j);
      } else {
        Table joint = sr_detail::count_marginal(data, {i, j});
        double true_s = sr_detail::pair_score_from_counts(joint);
        double delta = query_delta({i, j}, plan.sigma_r) == 0.0 ? 0.0 : 2.0 * tau;
        score[{i, j}] = charge_scalar(
            label + "/r:" + sr_detail::idx_set_label(data, {i, j}), true_s,
            delta, plan.sigma_r);
      }
    }
  }

  // Base structure: the required set plus its one-attr extensions, or all
  // unaries when nothing is required. Covers every attribute either way.
  std::vector<std::vector<int>> cliques;
  std::vector<int> R(required);
  std::sort(R.begin(), R.end());
  R.erase(std::unique(R.begin(), R.end()), R.end());
  if (!R.empty()) {
    cliques.push_back(R);
    for (int a = 0; a < m; ++a) {
      if (std::binary_search(R.begin(), R.end(), a)) continue;
      std::vector<int> c(R);
      c.push_back(a);
      std::sort(c.begin(), c.end());
      cliques.push_back(c);
    }
  } else {
    for (int a = 0; a < m; ++a) cliques.push_back({a});
  }
  if (static_cast<int>(cliques.size()) != plan.base_queries)
    throw NumericError("base clique count != planned base queries");

  auto query_marginal = [&](const std::vector<int>& S) {
    Table t = sr_detail::count_marginal(data, S);
    double delta = query_delta(S, plan.sigma_m);
    charge_and_noise(ledger, label + "/m:" + sr_detail::idx_set_label(data, S),
                     delta, plan.sigma_m, t, rng, group, cls);
    return t;
  };
  for (const auto& c : cliques) res.marginals.emplace(c, query_marginal(c));

  std::vector<FrAttr> vars;
  std::vector<int> doms;
  for (int a = 0; a < m; ++a) {
    vars.push_back(FrAttr{0, a});
    doms.push_back(data.attrs[static_cast<std::size_t>(a)].domain_size);
  }
  auto refit = [&]() {
    MrfStructure st;
    st.variables = vars;
    st.domains = doms;
    std::vector<Table> targets;
    for (const auto& c : cliques) {
      std::vector<FrAttr> cv;
      for (int a : c) cv.push_back(FrAttr{0, a});
      st.cliques.push_back(cv);
      targets.push_back(res.marginals.at(c));
    }
    EstimateOptions opt;
    opt.tol = cfg.ipf_tol;
    opt.max_sweeps = cfg.ipf_max_sweeps;
    opt.cell_cap = cfg.cell_cap;
    res.model = estimate(st, targets, fit_total, opt);
    res.has_model = true;
  };
  refit();

  // Growth pool: pair-seeded supersets of R, filtered by the signal floor
  // and by junction-tree feasibility against the current structure.
  struct Cand {
    double s;
    std::pair<int, int> pair;
    std::vector<int> set;
  };
  std::vector<Cand> pool;
  const double lam_m =
      cfg.lambda_useful * kSqrt2OverPi * (all_public ? 0.0 : plan.sigma_m);
  for (int i = 0; i < m; ++i) {
    for (int j = i + 1; j < m; ++j) {
      std::vector<int> c(R);
      c.push_back(i);
      c.push_back(j);
      std::sort(c.begin(), c.end());
      c.erase(std::unique(c.begin(), c.end()), c.end());
      if (std::find(cliques.begin(), cliques.end(), c) != cliques.end())
        continue;
      bool dup = false;
      for (const auto& p : pool) dup = dup || p.set == c;
      if (dup) continue;
      double cells = 1.0;
      for (int a : c) cells *= data.attrs[static_cast<std::size_t>(a)].domain_size;
      if (cells > static_cast<double>(cfg.cell_cap)) continue;
      if (res.total / cells < lam_m) continue;
      pool.push_back({score[{i, j}], {i, j}, c});
    }
  }
  std::stable_sort(pool.begin(), pool.end(), [](const Cand& a, const Cand& b) {
    if (a.s != b.s) return a.s > b.s;
    return a.pair < b.pair;
  });

  auto jt_feasible = [&](const std::vector<int>& c) {
    MrfStructure st;
    st.variables = vars;
    st.domains = doms;
    for (const auto& cl : cliques) {
      std::vector<FrAttr> cv;
      for (int a : cl) cv.push_back(FrAttr{0, a});
      st.cliques.push_back(cv);
    }
    std::vector<FrAttr> cv;
    for (int a : c) cv.push_back(FrAttr{0, a});
    st.cliques.push_back(cv);
    try {
      build_junction_tree(st, cfg.cell_cap);
      return true;
    } catch (const WidthExceeded&) {
      return false;
    }
  };

  const double forfeit_delta = all_public ? 0.0 : tau;
  for (int round = 0; round < plan.rounds; ++round) {
    std::vector<std::size_t> feasible;
    for (std::size_t p = 0; p < pool.size(); ++p)
      if (jt_feasible(pool[p].set)) feasible.push_back(p);
    int kk = std::min<int>(plan.k, static_cast<int>(feasible.size()));
    if (kk == 0) {
      for (int q = 0; q < plan.k; ++q)
        forfeit_charge(ledger, label + "/h", forfeit_delta, plan.sigma_h, rng,
                       group, cls);
      forfeit_charge(ledger, label + "/m", forfeit_delta, plan.sigma_m, rng,
                     group, cls);
      continue;
    }
    double best_h = 0.0;
    std::size_t best = feasible[0];
    for (int q = 0; q < kk; ++q) {
      const auto& cand = pool[feasible[static_cast<std::size_t>(q)]];
      Table truth = sr_detail::count_marginal(data, cand.set);
      std::vector<FrAttr> cv;
      for (int a : cand.set) cv.push_back(FrAttr{0, a});
      Table ref = res.model.marginal_of(cv);
      ref.scale(fit_total);
      double h = charge_scalar(
          label + "/h:" + sr_detail::idx_set_label(data, cand.set),
          truth.l1_diff(ref), query_delta(cand.set, plan.sigma_h), plan.sigma_h);
      if (q == 0 || h > best_h) {
        best_h = h;
        best = feasible[static_cast<std::size_t>(q)];
      }
    }
    for (int q = kk; q < plan.k; ++q)
      forfeit_charge(ledger, label + "/h", forfeit_delta, plan.sigma_h, rng,
                     group, cls);
    std::vector<int> win = pool[best].set;
    pool.erase(pool.begin() + static_cast<std::ptrdiff_t>(best));
    cliques.push_back(win);
    res.marginals.emplace(win, query_marginal(win));
    refit();
  }
  res.cliques = cliques;

  if (log) {
    *log << label << ": n=" << res.total << " cliques=" << cliques.size()
         << " sweeps=" << res.model.sweeps << " gap=" << res.model.final_gap
         << "\n";
  }

  // Rows fall out of the fitted model one attribute at a time, in schema
  // order, with conditionals memoized on the evidence prefix.
  std::int64_t want = sample_count < 0
                          ? static_cast<std::int64_t>(std::llround(res.total))
                          : sample_count;
  if (want > 0) {
    KeyedRng draw = rng.substream("sample");
    std::vector<std::map<std::vector<int>, std::vector<double>>> memo(
        static_cast<std::size_t>(m));
    res.sampled.reserve(static_cast<std::size_t>(want));
    for (std::int64_t r = 0; r < want; ++r) {
      std::vector<int> row(static_cast<std::size_t>(m), -1);
      for (int j = 0; j < m; ++j) {
        std::vector<int> prefix(row.begin(), row.begin() + j);
        auto it = memo[static_cast<std::size_t>(j)].find(prefix);
        if (it == memo[static_cast<std::size_t>(j)].end()) {
          std::map<FrAttr, int> ev;
          for (int l = 0; l < j; ++l) ev[FrAttr{0, l}] = row[static_cast<std::size_t>(l)];
          std::vector<double> p = res.model.conditional(FrAttr{0, j}, ev);
          it = memo[static_cast<std::size_t>(j)].emplace(prefix, std::move(p)).first;
        }
        const std::vector<double>& p = it->second;
        double u = draw.next_uniform();
        double acc = 0.0;
        int v = static_cast<int>(p.size()) - 1;
        for (std::size_t c = 0; c < p.size(); ++c) {
          acc += p[c];
          if (u <= acc) {
            v = static_cast<int>(c);
            break;
          }
        }
        row[static_cast<std::size_t>(j)] = v;
      }
      res.sampled.push_back(std::move(row));
    }
  }
  return res;
}

}  // namespace permsyn
