#pragma once
// Markov random fields over flattened-relation attributes: junction-tree
// construction, maximum-likelihood estimation against (noisy) marginal
// targets, and exact marginal/conditional queries.
//
// Estimation is multiplicative IPF on the junction tree. Noisy targets are
// generally mutually inconsistent, so the sweep loop keeps the best state
// seen and stops the first time the max per-clique L1 gap fails to improve;
// the accepted gap sequence is non-increasing by construction.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "permsyn/errors.hpp"
#include "permsyn/marginals.hpp"
#include "permsyn/table.hpp"

namespace permsyn {

struct MrfStructure {
  std::vector<FrAttr> variables;  // unique, ascending
  std::vector<int> domains;       // parallel to variables
  std::vector<std::vector<FrAttr>> cliques;

  int index_of(FrAttr a) const {
    for (std::size_t i = 0; i < variables.size(); ++i)
      if (variables[i] == a) return static_cast<int>(i);
    return -1;
  }

  void validate() const {
    if (variables.size() != domains.size())
      throw DomainError("structure: variables and domains differ in length");
    for (std::size_t i = 0; i < variables.size(); ++i) {
      if (domains[i] <= 0) throw DomainError("structure: non-positive domain");
      if (i > 0 && !(variables[i - 1] < variables[i]))
        throw DomainError("structure: variables not strictly ascending");
    }
    if (cliques.empty()) throw DomainError("structure: no cliques");
    std::vector<bool> covered(variables.size(), false);
    for (const auto& c : cliques) {
      if (c.empty()) throw DomainError("structure: empty clique");
      for (const auto& a : c) {
        int i = index_of(a);
        if (i < 0) throw DomainError("structure: clique attribute outside variables");
        covered[i] = true;
      }
    }
    for (bool b : covered)
      if (!b) throw DomainError("structure: variable in no clique");
  }
};

struct JtNode {
  std::vector<int> vars;  // variable indices, ascending
  Table potential;        // product over assigned clique factors
  Table belief;           // potential times all incoming messages
};

struct JunctionTree {
  std::vector<JtNode> nodes;
  std::vector<std::array<int, 2>> edges;
  std::vector<std::vector<int>> seps;  // separator variable indices per edge
};

namespace mrf_detail {

inline std::vector<int> table_dims(const MrfStructure& st, const std::vector<int>& vars) {
  std::vector<int> d;
  d.reserve(vars.size());
  for (int v : vars) d.push_back(st.domains[v]);
  return d;
}

// dst over dvars, src over svars (subset of dvars, any order): dst *= src
// broadcast over the axes src lacks.
inline void multiply_into(Table& dst, const std::vector<int>& dvars, const Table& src,
                          const std::vector<int>& svars) {
  std::vector<std::int64_t> sstride(svars.size(), 1);
  for (int i = static_cast<int>(svars.size()) - 2; i >= 0; --i)
    sstride[i] = sstride[i + 1] * src.dims()[i + 1];
  std::vector<std::int64_t> w(dvars.size(), 0);
  for (std::size_t a = 0; a < dvars.size(); ++a)
    for (std::size_t b = 0; b < svars.size(); ++b)
      if (dvars[a] == svars[b]) w[a] = sstride[b];
  std::vector<int> idx;
  for (std::size_t f = 0; f < dst.size(); ++f) {
    dst.unflatten(f, idx);
    std::int64_t g = 0;
    for (std::size_t a = 0; a < idx.size(); ++a) g += idx[a] * w[a];
    dst[f] *= src[static_cast<std::size_t>(g)];
  }
}

// project a table over vars onto keep (keep in any order, subset of vars)
inline Table project(const Table& t, const std::vector<int>& vars, const std::vector<int>& keep) {
  std::vector<int> pos;
  pos.reserve(keep.size());
  for (int k : keep) {
    int p = -1;
    for (std::size_t a = 0; a < vars.size(); ++a)
      if (vars[a] == k) p = static_cast<int>(a);
    if (p < 0) throw DomainError("project: kept variable absent");
    pos.push_back(p);
  }
  return t.rollup(pos);
}

inline void clamp_variable(Table& t, const std::vector<int>& vars, int var, int value) {
  std::vector<int> idx;
  for (std::size_t f = 0; f < t.size(); ++f) {
    t.unflatten(f, idx);
    for (std::size_t a = 0; a < vars.size(); ++a)
      if (vars[a] == var && idx[a] != value) t[f] = 0.0;
  }
}

// Shafer-Shenoy two-pass: belief_i = potential_i x product of incoming
// messages, message (u->v) = projection of potential_u x all other incoming.
inline void calibrate(JunctionTree& jt) {
  const int n = static_cast<int>(jt.nodes.size());
  std::vector<std::vector<std::pair<int, int>>> adj(n);  // (neighbor, edge)
  for (int e = 0; e < static_cast<int>(jt.edges.size()); ++e) {
    adj[jt.edges[e][0]].push_back({jt.edges[e][1], e});
    adj[jt.edges[e][1]].push_back({jt.edges[e][0], e});
  }
  std::map<std::pair<int, int>, Table> msg;
  std::function<void(int, int)> collect = [&](int u, int parent) {
    for (auto [v, e] : adj[u])
      if (v != parent) collect(v, u);
    if (parent >= 0) {
      Table prod = jt.nodes[u].potential;
      for (auto [v, e] : adj[u])
        if (v != parent)
          multiply_into(prod, jt.nodes[u].vars, msg.at({v, u}), jt.seps[e]);
      int eparent = -1;
      for (auto [v, e] : adj[u])
        if (v == parent) eparent = e;
      msg[{u, parent}] = project(prod, jt.nodes[u].vars, jt.seps[eparent]);
    }
  };
  std::function<void(int, int)> distribute = [&](int u, int parent) {
    for (auto [v, e] : adj[u]) {
      if (v == parent) continue;
      Table prod = jt.nodes[u].potential;
      for (auto [w, e2] : adj[u])
        if (w != v) multiply_into(prod, jt.nodes[u].vars, msg.at({w, u}), jt.seps[e2]);
      msg[{u, v}] = project(prod, jt.nodes[u].vars, jt.seps[e]);
      distribute(v, u);
    }
  };
  collect(0, -1);
  distribute(0, -1);
  for (int u = 0; u < n; ++u) {
    Table b = jt.nodes[u].potential;
    for (auto [v, e] : adj[u]) multiply_into(b, jt.nodes[u].vars, msg.at({v, u}), jt.seps[e]);
    jt.nodes[u].belief = std::move(b);
  }
}

}  // namespace mrf_detail

inline JunctionTree build_junction_tree(const MrfStructure& st,
                                        std::int64_t cell_cap = kDefaultCellCap) {
  st.validate();
  const int nv = static_cast<int>(st.variables.size());
  std::vector<std::vector<bool>> adj(nv, std::vector<bool>(nv, false));
  for (const auto& c : st.cliques)
    for (const auto& a : c)
      for (const auto& b : c) {
        int i = st.index_of(a), j = st.index_of(b);
        if (i != j) adj[i][j] = adj[j][i] = true;
      }

  // min-fill elimination, smallest index on ties
  std::vector<bool> gone(nv, false);
  std::vector<std::vector<int>> elim_cliques;
  for (int step = 0; step < nv; ++step) {
    int best = -1;
    long best_fill = -1;
    for (int v = 0; v < nv; ++v) {
      if (gone[v]) continue;
      std::vector<int> nb;
      for (int u = 0; u < nv; ++u)
        if (!gone[u] && u != v && adj[v][u]) nb.push_back(u);
      long fill = 0;
      for (std::size_t a = 0; a < nb.size(); ++a)
        for (std::size_t b = a + 1; b < nb.size(); ++b)
          if (!adj[nb[a]][nb[b]]) ++fill;
      if (best < 0 || fill < best_fill) {
        best = v;
        best_fill = fill;
      }
    }
    std::vector<int> cl{best};
    for (int u = 0; u < nv; ++u)
      if (!gone[u] && u != best && adj[best][u]) cl.push_back(u);
    std::sort(cl.begin(), cl.end());
    elim_cliques.push_back(cl);
    for (std::size_t a = 0; a < cl.size(); ++a)
      for (std::size_t b = a + 1; b < cl.size(); ++b)
        adj[cl[a]][cl[b]] = adj[cl[b]][cl[a]] = true;
    gone[best] = true;
  }

  // keep maximal elimination cliques only
  std::vector<std::vector<int>> maximal;
  for (const auto& c : elim_cliques) {
    bool contained = false;
    for (const auto& d : elim_cliques) {
      if (&c == &d || d.size() < c.size()) continue;
      if (d.size() == c.size() && d == c && &c > &d) {
        contained = true;  // duplicates keep the first copy
        break;
      }
      if (std::includes(d.begin(), d.end(), c.begin(), c.end()) && d != c) {
        contained = true;
        break;
      }
    }
    if (!contained) maximal.push_back(c);
  }

  JunctionTree jt;
  std::int64_t cells = 0;
  for (const auto& c : maximal) {
    JtNode node;
    node.vars = c;
    std::vector<int> dims = mrf_detail::table_dims(st, c);
    cells += cell_count(dims);
    if (cells > cell_cap) throw WidthExceeded("junction tree exceeds the cell cap");
    node.potential = Table(dims, 1.0);
    jt.nodes.push_back(std::move(node));
  }

  // maximum-weight spanning tree over separator sizes; zero-weight edges
  // stitch independent components so propagation sees one tree
  const int nc = static_cast<int>(jt.nodes.size());
  struct Cand {
    int w, i, j;
  };
  std::vector<Cand> cands;
  for (int i = 0; i < nc; ++i)
    for (int j = i + 1; j < nc; ++j) {
      std::vector<int> inter;
      std::set_intersection(jt.nodes[i].vars.begin(), jt.nodes[i].vars.end(),
                            jt.nodes[j].vars.begin(), jt.nodes[j].vars.end(),
                            std::back_inserter(inter));
      cands.push_back({static_cast<int>(inter.size()), i, j});
    }
  std::sort(cands.begin(), cands.end(), [](const Cand& a, const Cand& b) {
    if (a.w != b.w) return a.w > b.w;
    if (a.i != b.i) return a.i < b.i;
    return a.j < b.j;
  });
  std::vector<int> parent(nc);
  for (int i = 0; i < nc; ++i) parent[i] = i;
  std::function<int(int)> find = [&](int x) {
    return parent[x] == x ? x : parent[x] = find(parent[x]);
  };
  for (const auto& c : cands) {
    if (static_cast<int>(jt.edges.size()) == nc - 1) break;
    if (find(c.i) == find(c.j)) continue;
    parent[find(c.i)] = find(c.j);
    jt.edges.push_back({c.i, c.j});
    std::vector<int> inter;
    std::set_intersection(jt.nodes[c.i].vars.begin(), jt.nodes[c.i].vars.end(),
                          jt.nodes[c.j].vars.begin(), jt.nodes[c.j].vars.end(),
                          std::back_inserter(inter));
    jt.seps.push_back(std::move(inter));
  }

  // running intersection: the nodes holding any given variable must form a
  // connected subtree, or propagation would double-count it
  for (int v = 0; v < nv; ++v) {
    std::vector<int> holders;
    for (int i = 0; i < nc; ++i)
      if (std::find(jt.nodes[i].vars.begin(), jt.nodes[i].vars.end(), v) !=
          jt.nodes[i].vars.end())
        holders.push_back(i);
    if (holders.empty()) throw Error("junction tree lost a variable");
    std::set<int> seen{holders[0]};
    std::vector<int> queue{holders[0]};
    while (!queue.empty()) {
      int u = queue.back();
      queue.pop_back();
      for (std::size_t e = 0; e < jt.edges.size(); ++e) {
        if (std::find(jt.seps[e].begin(), jt.seps[e].end(), v) == jt.seps[e].end()) continue;
        for (int other : {jt.edges[e][0], jt.edges[e][1]}) {
          int self = other == jt.edges[e][0] ? jt.edges[e][1] : jt.edges[e][0];
          if (self == u && !seen.count(other)) {
            seen.insert(other);
            queue.push_back(other);
          }
        }
      }
    }
    for (int h : holders)
      if (!seen.count(h)) throw Error("junction tree violates running intersection");
  }

  // every model clique must land inside one node
  for (const auto& c : st.cliques) {
    std::vector<int> want;
    for (const auto& a : c) want.push_back(st.index_of(a));
    std::sort(want.begin(), want.end());
    bool hosted = false;
    for (const auto& n : jt.nodes)
      hosted = hosted || std::includes(n.vars.begin(), n.vars.end(), want.begin(), want.end());
    if (!hosted) throw Error("junction tree fails to host a clique");
  }
  return jt;
}

struct EstimateOptions {
  double tol = 1e-3;
  int max_sweeps = 2000;
  std::int64_t cell_cap = kDefaultCellCap;
};

class Mrf {
 public:
  MrfStructure structure;
  JunctionTree jt;
  int group_size = -1;
  int sweeps = 0;
  double final_gap = 0.0;
  bool converged = true;
  std::vector<double> gap_history;  // accepted per-sweep max L1 gaps

  // Recompute beliefs from potentials. Queries answer from beliefs, so call
  // this after any direct potential edit.
  void calibrate() { mrf_detail::calibrate(jt); }

  // Distribution over S in the given order. Variables outside the model get
  // independent uniform axes, so degenerate candidates stay well defined.
  Table marginal_of(const std::vector<FrAttr>& S) const {
    std::vector<int> covered;         // model variable indices, in S order
    std::vector<std::size_t> covpos;  // their positions within S
    for (std::size_t i = 0; i < S.size(); ++i) {
      int v = structure.index_of(S[i]);
      if (v >= 0) {
        covered.push_back(v);
        covpos.push_back(i);
      }
    }
    Table base = covered_marginal(covered);
    if (covered.size() == S.size()) return base;

    std::vector<int> dims;
    for (std::size_t i = 0; i < S.size(); ++i) {
      int v = structure.index_of(S[i]);
      dims.push_back(v >= 0 ? structure.domains[v] : domain_of(S[i]));
    }
    double uniform = 1.0;
    for (std::size_t i = 0; i < S.size(); ++i)
      if (structure.index_of(S[i]) < 0) uniform /= dims[i];
    Table out(dims);
    std::vector<int> idx, bidx(covered.size());
    for (std::size_t f = 0; f < out.size(); ++f) {
      out.unflatten(f, idx);
      for (std::size_t c = 0; c < covered.size(); ++c) bidx[c] = idx[covpos[c]];
      out[f] = base.at(bidx) * uniform;
    }
    return out;
  }

  // p(target | evidence), falling back to the unconditional marginal when
  // the evidence has zero mass under the model. Evidence on variables the
  // model does not hold is ignored; a target outside the model is uniform.
  std::vector<double> conditional(FrAttr target, const std::map<FrAttr, int>& evidence) const {
    int tv = structure.index_of(target);
    if (tv < 0) {
      int d = domain_of(target);
      return std::vector<double>(d, 1.0 / d);
    }
    if (evidence.count(target)) throw DomainError("conditional: target inside evidence");
    JunctionTree work = jt;
    bool any = false;
    for (const auto& [a, val] : evidence) {
      int v = structure.index_of(a);
      if (v < 0) continue;
      if (val < 0 || val >= structure.domains[v])
        throw DomainError("conditional: evidence value outside domain");
      for (auto& node : work.nodes)
        mrf_detail::clamp_variable(node.potential, node.vars, v, val);
      any = true;
    }
    if (any) mrf_detail::calibrate(work);
    const JunctionTree& use = any ? work : jt;
    Table marg = belief_marginal(use, {tv});
    double total = marg.total();
    if (!(total > 1e-300)) {
      Table fallback = marginal_of({target});
      return std::vector<double>(fallback.data(), fallback.data() + fallback.size());
    }
    marg.scale(1.0 / total);
    return std::vector<double>(marg.data(), marg.data() + marg.size());
  }

  nlohmann::json to_json() const {
    nlohmann::json vars = nlohmann::json::array();
    for (std::size_t i = 0; i < structure.variables.size(); ++i)
      vars.push_back({{"attr", fr_attr_label(structure.variables[i])},
                      {"domain", structure.domains[i]}});
    nlohmann::json cl = nlohmann::json::array();
    for (const auto& c : structure.cliques) {
      nlohmann::json one = nlohmann::json::array();
      for (const auto& a : c) one.push_back(fr_attr_label(a));
      cl.push_back(std::move(one));
    }
    nlohmann::json pots = nlohmann::json::array();
    for (const auto& n : jt.nodes) {
      nlohmann::json names = nlohmann::json::array();
      for (int v : n.vars) names.push_back(fr_attr_label(structure.variables[v]));
      pots.push_back({{"vars", std::move(names)},
                      {"exp_theta", std::vector<double>(n.potential.data(),
                                                        n.potential.data() + n.potential.size())}});
    }
    return {{"variables", std::move(vars)},
            {"cliques", std::move(cl)},
            {"potentials", std::move(pots)},
            {"group_size", group_size},
            {"sweeps", sweeps},
            {"final_gap", final_gap},
            {"converged", converged}};
  }

 private:
  int domain_of(FrAttr a) const {
    int v = structure.index_of(a);
    if (v >= 0) return structure.domains[v];
    throw DomainError("unknown attribute domain: " + fr_attr_label(a));
  }

  std::vector<int> var_dims(const std::vector<int>& vars) const {
    std::vector<int> d;
    for (int v : vars) d.push_back(structure.domains[v]);
    return d;
  }

  Table belief_marginal(const JunctionTree& tree, const std::vector<int>& covered) const {
    if (covered.empty()) return Table({}, 1.0);
    // fast path: one node holds all requested variables
    std::vector<int> sorted = covered;
    std::sort(sorted.begin(), sorted.end());
    for (const auto& n : tree.nodes) {
      if (n.belief.size() == 0) continue;
      if (std::includes(n.vars.begin(), n.vars.end(), sorted.begin(), sorted.end()))
        return mrf_detail::project(n.belief, n.vars, covered);
    }
    // variable elimination over the potentials otherwise
    struct Factor {
      std::vector<int> vars;
      Table t;
    };
    std::vector<Factor> factors;
    for (const auto& n : tree.nodes) factors.push_back({n.vars, n.potential});
    std::set<int> keep(covered.begin(), covered.end());
    std::set<int> all;
    for (const auto& f : factors)
      for (int v : f.vars) all.insert(v);
    for (int v : all) {
      if (keep.count(v)) continue;
      std::vector<Factor> rest;
      std::set<int> mv;
      for (auto& f : factors) {
        if (std::find(f.vars.begin(), f.vars.end(), v) != f.vars.end())
          for (int u : f.vars) mv.insert(u);
        else
          rest.push_back(std::move(f));
      }
      Factor merged;
      merged.vars.assign(mv.begin(), mv.end());
      merged.t = Table(var_dims(merged.vars), 1.0);
      for (const auto& f : factors)
        if (std::find(f.vars.begin(), f.vars.end(), v) != f.vars.end())
          mrf_detail::multiply_into(merged.t, merged.vars, f.t, f.vars);
      std::vector<int> keep_pos;
      for (std::size_t a = 0; a < merged.vars.size(); ++a)
        if (merged.vars[a] != v) keep_pos.push_back(static_cast<int>(a));
      Factor out;
      for (int u : merged.vars)
        if (u != v) out.vars.push_back(u);
      out.t = merged.t.rollup(keep_pos);
      rest.push_back(std::move(out));
      factors = std::move(rest);
    }
    Table result(var_dims(covered), 1.0);
    for (const auto& f : factors) mrf_detail::multiply_into(result, covered, f.t, f.vars);
    return result;
  }

  Table covered_marginal(const std::vector<int>& covered) const {
    Table m = belief_marginal(jt, covered);
    double total = m.total();
    if (!(total > 1e-300)) {
      // fully degenerate model slice: fall back to uniform
      for (std::size_t i = 0; i < m.size(); ++i) m[i] = 1.0;
      total = static_cast<double>(m.size());
    }
    m.scale(1.0 / total);
    return m;
  }

  friend Mrf estimate(const MrfStructure&, const std::vector<Table>&, double,
                      const EstimateOptions&);
};

inline Mrf estimate(const MrfStructure& st, const std::vector<Table>& targets, double total,
                    const EstimateOptions& opt = {}) {
  if (targets.size() != st.cliques.size())
    throw DomainError("estimate: one target per clique required");
  if (!(total > 0.0)) throw DomainError("estimate: total must be positive");
  Mrf m;
  m.structure = st;
  m.jt = build_junction_tree(st, opt.cell_cap);

  // preprocess targets into distributions
  std::vector<Table> q;
  std::vector<std::vector<int>> qvars;
  std::vector<int> host(st.cliques.size(), -1);
  for (std::size_t c = 0; c < st.cliques.size(); ++c) {
    std::vector<int> vars;
    for (const auto& a : st.cliques[c]) vars.push_back(st.index_of(a));
    std::sort(vars.begin(), vars.end());
    vars.erase(std::unique(vars.begin(), vars.end()), vars.end());
    std::vector<int> dims = mrf_detail::table_dims(st, vars);
    if (targets[c].dims() != dims)
      throw DomainError("estimate: target table shape mismatch on clique " + std::to_string(c));
    Table t = targets[c];
    t.clip_negative();
    t.rescale_total(1.0);
    q.push_back(std::move(t));
    qvars.push_back(vars);
    for (std::size_t n = 0; n < m.jt.nodes.size(); ++n)
      if (host[c] < 0 && std::includes(m.jt.nodes[n].vars.begin(), m.jt.nodes[n].vars.end(),
                                       vars.begin(), vars.end()))
        host[c] = static_cast<int>(n);
    if (host[c] < 0) throw Error("estimate: clique without a host node");
  }

  auto snapshot = [&]() {
    std::vector<Table> pots;
    for (const auto& n : m.jt.nodes) pots.push_back(n.potential);
    return pots;
  };
  auto restore = [&](const std::vector<Table>& pots) {
    for (std::size_t i = 0; i < pots.size(); ++i) m.jt.nodes[i].potential = pots[i];
  };
  auto sweep_gap = [&]() {
    mrf_detail::calibrate(m.jt);
    double g = 0.0;
    for (std::size_t c = 0; c < q.size(); ++c) {
      const JtNode& n = m.jt.nodes[host[c]];
      Table p = mrf_detail::project(n.belief, n.vars, qvars[c]);
      double tot = p.total();
      if (tot > 0.0) p.scale(1.0 / tot);
      g = std::max(g, p.l1_diff(q[c]));
    }
    return g;
  };

  double prev_gap = sweep_gap();
  std::vector<Table> best = snapshot();
  m.gap_history.push_back(prev_gap);
  for (int it = 0; it < opt.max_sweeps && prev_gap > opt.tol; ++it) {
    for (std::size_t c = 0; c < q.size(); ++c) {
      mrf_detail::calibrate(m.jt);
      const JtNode& n = m.jt.nodes[host[c]];
      Table p = mrf_detail::project(n.belief, n.vars, qvars[c]);
      double tot = p.total();
      if (tot > 0.0) p.scale(1.0 / tot);
      Table ratio = p;  // same dims as the target
      for (std::size_t i = 0; i < ratio.size(); ++i)
        ratio[i] = ratio[i] > 1e-300 ? q[c][i] / ratio[i] : 1.0;
      JtNode& hn = m.jt.nodes[host[c]];
      mrf_detail::multiply_into(hn.potential, hn.vars, ratio, qvars[c]);
      double ptot = hn.potential.total();
      if (ptot > 0.0) hn.potential.scale(hn.potential.size() / ptot);
    }
    double gap = sweep_gap();
    // demand strict progress: an oscillating or plateaued sweep (typical of
    // mutually inconsistent noisy targets) ends the fit at the best state
    if (gap > prev_gap - 1e-12) {
      restore(best);  // the accepted sequence stays non-increasing
      break;
    }
    prev_gap = gap;
    best = snapshot();
    m.gap_history.push_back(gap);
    ++m.sweeps;
  }
  m.final_gap = m.gap_history.back();
  m.converged = m.final_gap <= 1e-2;
  mrf_detail::calibrate(m.jt);
  return m;
}

// Total L1 gap between stored marginal targets and the models' expectation of
// them, summed over group sizes: targets hold counts at scale totals[s], the
// model marginal is scaled up to match.
inline double h_score(const std::vector<FrAttr>& S, const std::map<int, Table>& target_counts,
                      const std::map<int, const Mrf*>& models,
                      const std::map<int, double>& totals) {
  double h = 0.0;
  for (const auto& [s, counts] : target_counts) {
    auto mi = models.find(s);
    auto ti = totals.find(s);
    if (mi == models.end() || ti == totals.end()) continue;
    Table p = mi->second->marginal_of(S);
    p.scale(ti->second);
    h += counts.l1_diff(p);
  }
  return h;
}

}  // namespace permsyn
