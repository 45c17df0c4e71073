#pragma once
// Whole-database synthesis: plans the budget, augments group-size
// attributes, synthesizes private relations parents-first, reconciles
// relations carrying several foreign keys, and reassembles a database over
// the original schemas. Public relations pass through verbatim.

#include <chrono>
#include <cmath>
#include <map>
#include <ostream>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "permsyn/errors.hpp"
#include "permsyn/flatten.hpp"
#include "permsyn/privacy.hpp"
#include "permsyn/schema.hpp"
#include "permsyn/single_relation.hpp"
#include "permsyn/synthesis.hpp"

namespace permsyn {

struct StageTiming {
  std::string stage;
  double seconds = 0.0;
};

struct SynthesisResult {
  Database synthetic;
  BudgetPlan plan;
  Ledger ledger{0.0};
  std::vector<StageTiming> timings;
  nlohmann::json manifest;
};

namespace orch_detail {

inline std::vector<int> size_attr_indices(const RelationSchema& s) {
  std::vector<int> idx;
  for (std::size_t i = 0; i < s.attributes.size(); ++i)
    if (is_size_attr(s.attributes[i].name)) idx.push_back(static_cast<int>(i));
  return idx;
}

// Sampled size-attribute codes below the declared group minimum are raised
// to it, keeping every synthetic group large enough to satisfy the schema.
inline void clamp_size_attrs(std::vector<std::vector<int>>& rows, const RelationSchema& aug,
                             const std::map<std::string, int>& size_floor) {
  for (std::size_t a = 0; a < aug.attributes.size(); ++a) {
    if (!is_size_attr(aug.attributes[a].name)) continue;
    auto it = size_floor.find(aug.name + "." + aug.attributes[a].name);
    const int lo = it == size_floor.end() ? 0 : it->second;
    if (lo <= 0) continue;
    for (auto& r : rows)
      if (r[a] < lo) r[a] = lo;
  }
}

}  // namespace orch_detail

// A multi-key relation reconciled to one tuple collection.
struct MergedMembers {
  std::vector<std::vector<int>> attrs;      // one row per pooled tuple
  std::vector<std::vector<int>> parent_of;  // [variant][tuple] -> household row
};

// The first variant fixes the tuple pool; each later variant keeps its own
// households and group sizes but fills them from that pool. An instance
// whose sampled values match an unclaimed pool tuple takes it (the
// pool-restricted conditional, where it has mass); unmatched instances take
// the remaining tuples in index order; tuples no instance claimed join the
// variant's smallest groups. Every tuple ends up with every foreign key.
inline MergedMembers merge_foreign_keys(const std::vector<const FlattenedRelation*>& variants) {
  if (variants.size() < 2)
    throw ConfigError("merge_foreign_keys: need at least two variants");
  MergedMembers out;
  out.parent_of.resize(variants.size());
  const FlattenedRelation& first = *variants[0];
  for (std::size_t h = 0; h < first.rows.size(); ++h) {
    const int s = first.size_of(first.rows[h]);
    for (int slot = 1; slot <= s; ++slot) {
      std::vector<int> vals(static_cast<std::size_t>(first.icols()));
      for (int a = 0; a < first.icols(); ++a)
        vals[static_cast<std::size_t>(a)] =
            first.rows[h][static_cast<std::size_t>(first.slot_col(slot, a))];
      out.attrs.push_back(std::move(vals));
      out.parent_of[0].push_back(static_cast<int>(h));
    }
  }
  const std::size_t P = out.attrs.size();

  for (std::size_t k = 1; k < variants.size(); ++k) {
    const FlattenedRelation& v = *variants[k];
    if (v.icols() != first.icols())
      throw ConfigError("merge_foreign_keys: variants disagree on member attributes");
    const std::size_t H = v.rows.size();
    if (H == 0 && P > 0)
      throw DataError("merge_foreign_keys: a variant has no households for the pool");

    std::vector<int> want(H, 0);
    long long total = 0;
    for (std::size_t h = 0; h < H; ++h) {
      want[h] = v.size_of(v.rows[h]);
      total += want[h];
    }
    // more instances than tuples: shed from the largest groups, sparing
    // groups already at the declared minimum while any other can give
    while (total > static_cast<long long>(P)) {
      int best = -1;
      for (int pass = 0; pass < 2 && best < 0; ++pass) {
        const int floor_sz = pass == 0 ? std::max(0, v.min_group_size) : 0;
        for (std::size_t h = 0; h < H; ++h)
          if (want[h] > floor_sz && (best < 0 || want[h] > want[static_cast<std::size_t>(best)]))
            best = static_cast<int>(h);
      }
      --want[static_cast<std::size_t>(best)];
      --total;
    }

    std::map<std::vector<int>, std::vector<std::size_t>> bucket;
    for (std::size_t t = P; t-- > 0;) bucket[out.attrs[t]].push_back(t);
    out.parent_of[k].assign(P, -1);
    std::vector<char> used(P, 0);
    std::vector<int> deferred;
    for (std::size_t h = 0; h < H; ++h) {
      for (int slot = 1; slot <= want[h]; ++slot) {
        std::vector<int> vals(static_cast<std::size_t>(v.icols()));
        for (int a = 0; a < v.icols(); ++a)
          vals[static_cast<std::size_t>(a)] =
              v.rows[h][static_cast<std::size_t>(v.slot_col(slot, a))];
        auto bit = bucket.find(vals);
        if (bit != bucket.end() && !bit->second.empty()) {
          std::size_t t = bit->second.back();
          bit->second.pop_back();
          used[t] = 1;
          out.parent_of[k][t] = static_cast<int>(h);
        } else {
          deferred.push_back(static_cast<int>(h));
        }
      }
    }
    std::size_t t = 0;
    for (int h : deferred) {
      while (t < P && used[t]) ++t;
      if (t >= P) throw NumericError("merge_foreign_keys: instance bookkeeping failed");
      used[t] = 1;
      out.parent_of[k][t] = h;
    }
    std::vector<long long> cnt(H, 0);
    for (std::size_t i = 0; i < P; ++i)
      if (out.parent_of[k][i] >= 0) ++cnt[static_cast<std::size_t>(out.parent_of[k][i])];
    for (std::size_t i = 0; i < P; ++i) {
      if (out.parent_of[k][i] >= 0) continue;
      int best = -1;
      for (std::size_t h = 0; h < H; ++h)
        if (cnt[h] < v.N && (best < 0 || cnt[h] < cnt[static_cast<std::size_t>(best)]))
          best = static_cast<int>(h);
      if (best < 0)
        throw DataError("merge_foreign_keys: pool exceeds the variant's total capacity");
      out.parent_of[k][i] = best;
      ++cnt[static_cast<std::size_t>(best)];
    }
  }
  return out;
}

inline SynthesisResult synthesize_database(const Database& db, double epsilon, double delta,
                                           const SynthesisConfig& cfg = {},
                                           std::ostream* log = nullptr) {
  db.validate_schema();
  db.validate_data();
  for (const auto& s : db.schemas) {
    for (const auto& a : s.attributes)
      if (is_size_attr(a.name))
        throw ConfigError(s.name + "." + a.name + ": the _size_ attribute prefix is reserved");
    if (s.privacy == PrivacyClass::Public)
      for (const auto& fk : s.foreign_keys)
        if (db.schema(fk.references).privacy != PrivacyClass::Public)
          throw ConfigError("public relation " + s.name + " references private " +
                            fk.references + "; its keys cannot be preserved");
  }

  Database work = db;
  std::map<std::string, int> size_floor;  // "<parent>.<size attr>" -> group minimum
  for (const auto& s : db.schemas) {
    if (s.privacy == PrivacyClass::Public) continue;
    for (const auto& fk : s.foreign_keys) {
      augment_size_attribute(work, s.name, fk.attribute);
      size_floor[fk.references + "." + size_attr_name(s.name, fk.attribute)] = fk.min_group_size;
    }
  }

  SynthesisResult res;
  res.plan = plan_budget(work, epsilon, delta, cfg);
  Ledger ledger(res.plan.budget);

  // synthetic rows per private relation, coded over its augmented attributes
  std::map<std::string, std::vector<std::vector<int>>> synth_rows;
  std::map<std::string, std::vector<FkResult>> fk_runs;
  std::map<std::string, MergedMembers> members;  // per fk relation, output order
  bool any_public_parent = false;

  auto timed = [&](const std::string& label, auto&& fn) {
    auto t0 = std::chrono::steady_clock::now();
    fn();
    double sec = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    res.timings.push_back({label, sec});
    if (log) *log << label << ": " << sec << "s\n";
  };

  for (const auto& sp : res.plan.singles) {
    timed(sp.label(), [&] {
      const RelationSchema& rs = work.schema(sp.relation);
      SrData d;
      d.attrs = rs.attributes;
      for (const auto& r : work.rows(sp.relation)) d.rows.push_back(r.attrs);
      std::vector<int> required = orch_detail::size_attr_indices(rs);
      KeyedRng rng(cfg.seed, sp.label());
      SrResult run = synthesize_single_relation(d, sp.run, required, {}, 0.0, -1, cfg, ledger,
                                                rng, sp.label(), {}, {}, log);
      orch_detail::clamp_size_attrs(run.sampled, rs, size_floor);
      synth_rows[sp.relation] = std::move(run.sampled);
    });
  }

  for (const auto& fp : res.plan.fks) {
    timed(fp.label(), [&] {
      FlattenedRelation fr = flatten(work, fp.relation, fp.fk_attribute);
      const bool parent_public = work.schema(fp.references).privacy == PrivacyClass::Public;
      any_public_parent = any_public_parent || parent_public;
      std::vector<std::vector<int>> parent_rows;
      bool sample_sizes = false;
      if (parent_public) {
        // verbatim public rows; the pipeline redraws their size column
        for (const auto& r : work.rows(fp.references)) parent_rows.push_back(r.attrs);
        sample_sizes = true;
      } else {
        auto it = synth_rows.find(fp.references);
        if (it == synth_rows.end())
          throw ConfigError(fp.label() + ": parent " + fp.references + " not yet synthesized");
        if (it->second.empty())
          throw DataError(fp.label() + ": synthetic parent " + fp.references +
                          " is empty; rerun with a larger budget");
        parent_rows = it->second;
      }
      fk_runs[fp.relation].push_back(
          synthesize_fk(fr, fp, cfg, parent_rows, parent_public, ledger, log, sample_sizes));

      // after the relation's last foreign key, fix its tuple collection so
      // any relation referencing it can synthesize against these rows
      const auto& runs = fk_runs[fp.relation];
      if (runs.size() == work.schema(fp.relation).foreign_keys.size()) {
        MergedMembers mm;
        if (runs.size() == 1) {
          const FlattenedRelation& syn = runs[0].synthetic;
          mm.parent_of.resize(1);
          for (std::size_t h = 0; h < syn.rows.size(); ++h) {
            const int s = syn.size_of(syn.rows[h]);
            for (int slot = 1; slot <= s; ++slot) {
              std::vector<int> vals(static_cast<std::size_t>(syn.icols()));
              for (int a = 0; a < syn.icols(); ++a)
                vals[static_cast<std::size_t>(a)] =
                    syn.rows[h][static_cast<std::size_t>(syn.slot_col(slot, a))];
              mm.attrs.push_back(std::move(vals));
              mm.parent_of[0].push_back(static_cast<int>(h));
            }
          }
        } else {
          std::vector<const FlattenedRelation*> vars;
          for (const auto& r : runs) vars.push_back(&r.synthetic);
          mm = merge_foreign_keys(vars);
        }
        orch_detail::clamp_size_attrs(mm.attrs, work.schema(fp.relation), size_floor);
        synth_rows[fp.relation] = mm.attrs;
        members[fp.relation] = std::move(mm);
      }
    });
  }

  // output database over the original schemas, parents assembled first
  res.synthetic.schemas = db.schemas;
  std::map<std::string, std::vector<std::string>> out_pks;
  for (const auto& s : db.schemas)
    if (s.privacy == PrivacyClass::Public) {
      res.synthetic.relations[s.name] = db.rows(s.name);
      std::vector<std::string> pks;
      for (const auto& r : db.rows(s.name)) pks.push_back(r.pk);
      out_pks[s.name] = std::move(pks);
    }
  for (const auto& sp : res.plan.singles) {
    const RelationSchema& orig = db.schema(sp.relation);
    const auto& srows = synth_rows.at(sp.relation);
    std::vector<Row> rows;
    std::vector<std::string> pks;
    rows.reserve(srows.size());
    for (std::size_t i = 0; i < srows.size(); ++i) {
      Row r;
      r.pk = std::to_string(i + 1);
      r.attrs.assign(srows[i].begin(), srows[i].begin() + static_cast<std::ptrdiff_t>(orig.attributes.size()));
      pks.push_back(r.pk);
      rows.push_back(std::move(r));
    }
    res.synthetic.relations[sp.relation] = std::move(rows);
    out_pks[sp.relation] = std::move(pks);
  }
  std::set<std::string> emitted;
  for (const auto& fp : res.plan.fks) {
    if (!emitted.insert(fp.relation).second) continue;
    const RelationSchema& orig = db.schema(fp.relation);
    const MergedMembers& mm = members.at(fp.relation);
    std::vector<Row> rows;
    std::vector<std::string> pks;
    rows.reserve(mm.attrs.size());
    for (std::size_t t = 0; t < mm.attrs.size(); ++t) {
      Row r;
      r.pk = std::to_string(t + 1);
      r.fks.resize(orig.foreign_keys.size());
      for (std::size_t k = 0; k < orig.foreign_keys.size(); ++k)
        r.fks[k] = out_pks.at(orig.foreign_keys[k].references)[static_cast<std::size_t>(mm.parent_of[k][t])];
      r.attrs.assign(mm.attrs[t].begin(), mm.attrs[t].begin() + static_cast<std::ptrdiff_t>(orig.attributes.size()));
      pks.push_back(r.pk);
      rows.push_back(std::move(r));
    }
    res.synthetic.relations[fp.relation] = std::move(rows);
    out_pks[fp.relation] = std::move(pks);
  }

  res.synthetic.validate_schema();
  res.synthetic.validate_data();

  const double realized = ledger.effective_total();
  const double planned = res.plan.planned_total();
  const double tol = 1e-9 * std::max(1.0, planned);
  if (realized > res.plan.budget + tol)
    throw NumericError("synthesize_database: spend exceeds the certified budget");
  if (!any_public_parent && std::fabs(realized - planned) > tol)
    throw NumericError("synthesize_database: realized spend differs from the plan");

  nlohmann::json jt = nlohmann::json::array();
  for (const auto& tm : res.timings)
    jt.push_back({{"stage", tm.stage}, {"seconds", tm.seconds}});
  res.manifest = nlohmann::json{
      {"epsilon", epsilon},
      {"delta", delta},
      {"gamma", res.plan.gamma},
      {"budget", res.plan.budget},
      {"planned_total", planned},
      {"realized_total", realized},
      {"plan", res.plan.to_json()},
      {"ledger", ledger.to_json()},
      {"config",
       {{"o", cfg.o},
        {"k", cfg.k},
        {"t2", cfg.t2},
        {"t1", cfg.t1},
        {"n_correlated", cfg.n_correlated},
        {"max_clique_attrs", cfg.max_clique_attrs},
        {"lambda_useful", cfg.lambda_useful},
        {"merge_lo", cfg.merge_lo},
        {"cell_cap", cfg.cell_cap},
        {"ipf_max_sweeps", cfg.ipf_max_sweeps},
        {"ipf_tol", cfg.ipf_tol},
        {"seed", cfg.seed},
        {"stage_weights", cfg.stage_weights},
        {"tau_override", cfg.tau_override}}},
      {"timings", std::move(jt)}};
  res.ledger = ledger;
  return res;
}

}  // namespace permsyn
