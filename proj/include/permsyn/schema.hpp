#pragma once

#include <map>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "permsyn/errors.hpp"
#include "permsyn/io.hpp"

namespace permsyn {

enum class PrivacyClass { Primary, Secondary, Public };

struct AttributeSpec {
  std::string name;
  int domain_size = 1;  // codes 0..domain_size-1
  std::vector<double> bin_representatives;  // optional, one real per code
};

struct ForeignKeySpec {
  std::string attribute;   // column in the referencing relation
  std::string references;  // referenced relation (its primary key)
  int max_group_size = 0;  // public cap N on tuples per referenced key
  int min_group_size = 1;  // 0 admits empty groups
};

struct RelationSchema {
  std::string name;
  std::string primary_key;
  std::vector<AttributeSpec> attributes;  // excludes key columns
  std::vector<ForeignKeySpec> foreign_keys;
  PrivacyClass privacy = PrivacyClass::Public;

  int attr_index(std::string_view a) const {
    for (std::size_t i = 0; i < attributes.size(); ++i)
      if (attributes[i].name == a) return static_cast<int>(i);
    return -1;
  }
  const AttributeSpec& attr(std::string_view a) const {
    int i = attr_index(a);
    if (i < 0) throw SchemaError(name + ": no attribute '" + std::string(a) + "'");
    return attributes[i];
  }
  int fk_index(std::string_view column) const {
    for (std::size_t i = 0; i < foreign_keys.size(); ++i)
      if (foreign_keys[i].attribute == column) return static_cast<int>(i);
    return -1;
  }
};

// One tuple: primary key value, foreign key values aligned with
// schema.foreign_keys, attribute codes aligned with schema.attributes.
struct Row {
  std::string pk;
  std::vector<std::string> fks;
  std::vector<int> attrs;
};

struct Database {
  std::vector<RelationSchema> schemas;
  std::map<std::string, std::vector<Row>> relations;

  const RelationSchema* find_schema(std::string_view n) const {
    for (const auto& s : schemas)
      if (s.name == n) return &s;
    return nullptr;
  }
  RelationSchema& schema(std::string_view n) {
    for (auto& s : schemas)
      if (s.name == n) return s;
    throw SchemaError("no relation '" + std::string(n) + "'");
  }
  const RelationSchema& schema(std::string_view n) const {
    return const_cast<Database*>(this)->schema(n);
  }
  std::vector<Row>& rows(std::string_view n) {
    auto it = relations.find(std::string(n));
    if (it == relations.end()) throw SchemaError("no relation '" + std::string(n) + "'");
    return it->second;
  }
  const std::vector<Row>& rows(std::string_view n) const {
    return const_cast<Database*>(this)->rows(n);
  }

  // Name of the unique primary-private relation; empty if fully public.
  std::string primary_private_name() const {
    for (const auto& s : schemas)
      if (s.privacy == PrivacyClass::Primary) return s.name;
    return {};
  }

  void validate_schema() const;
  void validate_data() const;
};

// Size attributes are added by augment_size_attribute and recognized by name.
inline std::string size_attr_name(const std::string& referencing_relation,
                                  const std::string& fk_attribute) {
  return "_size_" + referencing_relation + "_" + fk_attribute;
}
inline bool is_size_attr(std::string_view name) { return name.rfind("_size_", 0) == 0; }

inline void Database::validate_schema() const {
  std::set<std::string> names;
  for (const auto& s : schemas) {
    if (!names.insert(s.name).second) throw SchemaError("duplicate relation '" + s.name + "'");
    std::set<std::string> cols{s.primary_key};
    for (const auto& a : s.attributes) {
      if (a.domain_size < 1) throw SchemaError(s.name + "." + a.name + ": domain_size < 1");
      if (!a.bin_representatives.empty() &&
          static_cast<int>(a.bin_representatives.size()) != a.domain_size)
        throw SchemaError(s.name + "." + a.name + ": bin_representatives size mismatch");
      if (!cols.insert(a.name).second)
        throw SchemaError(s.name + ": duplicate column '" + a.name + "'");
    }
    for (const auto& f : s.foreign_keys)
      if (!cols.insert(f.attribute).second)
        throw SchemaError(s.name + ": duplicate column '" + f.attribute + "'");
  }
  int n_primary = 0, n_private = 0;
  for (const auto& s : schemas) {
    if (s.privacy != PrivacyClass::Public) ++n_private;
    if (s.privacy == PrivacyClass::Primary) ++n_primary;
    for (const auto& f : s.foreign_keys)
      if (!find_schema(f.references))
        throw SchemaError(s.name + ": foreign key references unknown relation '" + f.references +
                          "'");
  }
  if (n_private > 0 && n_primary != 1)
    throw SchemaError("need exactly one primary-private relation, found " +
                      std::to_string(n_primary));

  // The graph of foreign keys between private relations must be acyclic.
  // Depth-first walk along child -> parent edges; a back edge is a cycle.
  std::map<std::string, int> state;  // 0 unseen, 1 on stack, 2 done
  auto dfs = [&](auto&& self, const RelationSchema& s) -> void {
    state[s.name] = 1;
    for (const auto& f : s.foreign_keys) {
      const RelationSchema* t = find_schema(f.references);
      if (t->privacy == PrivacyClass::Public || s.privacy == PrivacyClass::Public) continue;
      int st = state[t->name];
      if (st == 1) throw SchemaError("cycle in private foreign keys at '" + t->name + "'");
      if (st == 0) self(self, *t);
    }
    state[s.name] = 2;
  };
  for (const auto& s : schemas)
    if (s.privacy != PrivacyClass::Public && state[s.name] == 0) dfs(dfs, s);
}

inline void Database::validate_data() const {
  for (const auto& s : schemas) {
    auto it = relations.find(s.name);
    if (it == relations.end()) throw DataError("no data for relation '" + s.name + "'");
    const auto& rows = it->second;
    std::set<std::string> pks;
    for (const auto& r : rows) {
      if (!pks.insert(r.pk).second)
        throw IntegrityError(s.name + ": duplicate primary key '" + r.pk + "'");
      for (std::size_t a = 0; a < s.attributes.size(); ++a)
        if (r.attrs[a] < 0 || r.attrs[a] >= s.attributes[a].domain_size)
          throw IntegrityError(s.name + "." + s.attributes[a].name + ": code " +
                               std::to_string(r.attrs[a]) + " outside [0," +
                               std::to_string(s.attributes[a].domain_size) + ")");
    }
  }
  for (const auto& s : schemas) {
    for (std::size_t f = 0; f < s.foreign_keys.size(); ++f) {
      const auto& fk = s.foreign_keys[f];
      std::map<std::string, int> counts;
      for (const auto& pr : relations.at(fk.references)) counts[pr.pk] = 0;
      for (const auto& r : relations.at(s.name)) {
        auto it = counts.find(r.fks[f]);
        if (it == counts.end())
          throw IntegrityError(s.name + "." + fk.attribute + ": dangling reference '" + r.fks[f] +
                               "'");
        ++it->second;
      }
      for (const auto& [pk, c] : counts)
        if (c < fk.min_group_size)
          throw IntegrityError(fk.references + " key '" + pk + "' has " + std::to_string(c) + " " +
                               s.name + " tuples, below declared minimum " +
                               std::to_string(fk.min_group_size));
    }
  }
}

inline Database parse_schema(const nlohmann::json& j) {
  Database db;
  if (!j.contains("relations") || !j["relations"].is_array())
    throw ConfigError("schema: missing 'relations' array");
  for (const auto& jr : j["relations"]) {
    RelationSchema s;
    try {
      s.name = jr.at("name").get<std::string>();
      s.primary_key = jr.at("primary_key").get<std::string>();
      std::string p = jr.at("privacy").get<std::string>();
      if (p == "primary")
        s.privacy = PrivacyClass::Primary;
      else if (p == "secondary")
        s.privacy = PrivacyClass::Secondary;
      else if (p == "public")
        s.privacy = PrivacyClass::Public;
      else
        throw ConfigError(s.name + ": privacy must be primary|secondary|public, got '" + p + "'");
      for (const auto& ja : jr.value("attributes", nlohmann::json::array())) {
        AttributeSpec a;
        a.name = ja.at("name").get<std::string>();
        a.domain_size = ja.at("domain_size").get<int>();
        if (ja.contains("bin_representatives"))
          a.bin_representatives = ja["bin_representatives"].get<std::vector<double>>();
        s.attributes.push_back(std::move(a));
      }
      for (const auto& jf : jr.value("foreign_keys", nlohmann::json::array())) {
        ForeignKeySpec f;
        f.attribute = jf.at("attribute").get<std::string>();
        f.references = jf.at("references").get<std::string>();
        // Cap on the FK object, with a relation-level value as fallback.
        f.max_group_size = jf.value("max_group_size", jr.value("max_group_size", 0));
        f.min_group_size = jf.value("min_group_size", 1);
        if (f.min_group_size < 0 || (f.max_group_size && f.max_group_size < f.min_group_size))
          throw ConfigError(s.name + "." + f.attribute + ": bad group size bounds");
        s.foreign_keys.push_back(std::move(f));
      }
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError(std::string("schema: ") + e.what());
    }
    db.schemas.push_back(std::move(s));
  }
  db.validate_schema();
  return db;
}

// Inverse of parse_schema, so generated databases can be written back out
// as a schema file that load_database accepts.
inline nlohmann::json schema_to_json(const Database& db) {
  nlohmann::json out;
  out["relations"] = nlohmann::json::array();
  for (const auto& s : db.schemas) {
    nlohmann::json jr;
    jr["name"] = s.name;
    jr["primary_key"] = s.primary_key;
    jr["privacy"] = s.privacy == PrivacyClass::Primary     ? "primary"
                    : s.privacy == PrivacyClass::Secondary ? "secondary"
                                                           : "public";
    jr["attributes"] = nlohmann::json::array();
    for (const auto& a : s.attributes) {
      nlohmann::json ja;
      ja["name"] = a.name;
      ja["domain_size"] = a.domain_size;
      if (!a.bin_representatives.empty()) ja["bin_representatives"] = a.bin_representatives;
      jr["attributes"].push_back(std::move(ja));
    }
    if (!s.foreign_keys.empty()) {
      jr["foreign_keys"] = nlohmann::json::array();
      for (const auto& f : s.foreign_keys) {
        nlohmann::json jf;
        jf["attribute"] = f.attribute;
        jf["references"] = f.references;
        jf["max_group_size"] = f.max_group_size;
        jf["min_group_size"] = f.min_group_size;
        jr["foreign_keys"].push_back(std::move(jf));
      }
    }
    out["relations"].push_back(std::move(jr));
  }
  return out;
}

inline std::vector<Row> rows_from_csv(const Csv& t, const RelationSchema& s) {
  int pk_col = t.column(s.primary_key);
  if (pk_col < 0) throw DataError(s.name + ": data file missing key column '" + s.primary_key + "'");
  std::vector<int> fk_cols, attr_cols;
  for (const auto& f : s.foreign_keys) {
    int c = t.column(f.attribute);
    if (c < 0) throw DataError(s.name + ": data file missing column '" + f.attribute + "'");
    fk_cols.push_back(c);
  }
  for (const auto& a : s.attributes) {
    int c = t.column(a.name);
    if (c < 0) throw DataError(s.name + ": data file missing column '" + a.name + "'");
    attr_cols.push_back(c);
  }
  std::vector<Row> rows;
  rows.reserve(t.rows.size());
  for (const auto& cells : t.rows) {
    Row r;
    r.pk = cells[pk_col];
    for (int c : fk_cols) r.fks.push_back(cells[c]);
    for (std::size_t a = 0; a < attr_cols.size(); ++a)
      r.attrs.push_back(static_cast<int>(parse_code(cells[attr_cols[a]], s.name + "." + s.attributes[a].name)));
    rows.push_back(std::move(r));
  }
  return rows;
}

inline Csv rows_to_csv(const std::vector<Row>& rows, const RelationSchema& s) {
  Csv t;
  t.header.push_back(s.primary_key);
  for (const auto& f : s.foreign_keys) t.header.push_back(f.attribute);
  for (const auto& a : s.attributes) t.header.push_back(a.name);
  for (const auto& r : rows) {
    std::vector<std::string> cells;
    cells.push_back(r.pk);
    for (const auto& f : r.fks) cells.push_back(f);
    for (int v : r.attrs) cells.push_back(std::to_string(v));
    t.rows.push_back(std::move(cells));
  }
  return t;
}

inline Database load_database(const std::string& schema_file, const std::string& data_dir) {
  std::ifstream in(schema_file);
  if (!in) throw ConfigError("cannot open schema file " + schema_file);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("schema parse: ") + e.what());
  }
  Database db = parse_schema(j);
  for (const auto& s : db.schemas) {
    Csv t = read_csv(data_dir + "/" + s.name + ".csv");
    db.relations[s.name] = rows_from_csv(t, s);
  }
  db.validate_data();
  return db;
}

inline void save_database(const Database& db, const std::string& out_dir) {
  for (const auto& s : db.schemas)
    write_csv(out_dir + "/" + s.name + ".csv", rows_to_csv(db.relations.at(s.name), s));
}

// Adds the group-size attribute for one foreign key to the referenced
// relation: each parent tuple's value is the number of referencing tuples.
// Domain is 0..N so the attribute has domain_size N+1.
inline void augment_size_attribute(Database& db, const std::string& referencing_relation,
                                   const std::string& fk_attribute) {
  RelationSchema& child = db.schema(referencing_relation);
  int fi = child.fk_index(fk_attribute);
  if (fi < 0)
    throw SchemaError(referencing_relation + ": no foreign key '" + fk_attribute + "'");
  const ForeignKeySpec& fk = child.foreign_keys[fi];
  if (fk.max_group_size < 1)
    throw ConfigError(referencing_relation + "." + fk_attribute +
                      ": max_group_size must be declared in the schema");
  RelationSchema& parent = db.schema(fk.references);
  std::string aname = size_attr_name(referencing_relation, fk_attribute);
  if (parent.attr_index(aname) >= 0) return;  // already augmented

  std::map<std::string, int> counts;
  for (const auto& r : db.rows(fk.references)) counts[r.pk] = 0;
  for (const auto& r : db.rows(referencing_relation)) ++counts[r.fks[fi]];
  for (const auto& [pk, c] : counts)
    if (c > fk.max_group_size)
      throw CapExceeded(fk.references + " key '" + pk + "' has " + std::to_string(c) + " " +
                        referencing_relation + " tuples, above cap " +
                        std::to_string(fk.max_group_size));

  parent.attributes.push_back({aname, fk.max_group_size + 1, {}});
  for (auto& r : db.rows(fk.references)) r.attrs.push_back(counts[r.pk]);
}

}  // namespace permsyn
