#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "permsyn/schema.hpp"

namespace permsyn {

// A parent relation joined with all its referencing tuples, one row per
// parent. Slot j of a row holds the j-th referencing tuple's attributes
// (file order of the child relation); slots beyond the group size hold the
// NULL sentinel, which is each attribute's domain_size. A value of -1 marks
// a cell not yet sampled; only synthesis intermediates contain it.
struct FlattenedRelation {
  std::vector<AttributeSpec> household_attrs;  // parent attrs incl. the size attr
  int size_attr_index = -1;
  std::vector<AttributeSpec> indiv_attrs;  // child attr template, repeated per slot
  int N = 0;                               // maximum group size
  std::vector<std::vector<int>> rows;      // width = |H| + N*|I|
  std::vector<std::int64_t> group_counts;  // n_s, index 0..N

  // provenance, so decompose can rebuild relation schemas
  std::string household_name, individual_name;
  std::string household_pk = "id", individual_pk = "id";
  std::string fk_attribute;
  int min_group_size = 1;

  int hcols() const { return static_cast<int>(household_attrs.size()); }
  int icols() const { return static_cast<int>(indiv_attrs.size()); }
  int width() const { return hcols() + N * icols(); }
  int slot_col(int slot, int attr) const { return hcols() + (slot - 1) * icols() + attr; }
  int size_of(const std::vector<int>& row) const { return row[size_attr_index]; }
  int null_code(int attr) const { return indiv_attrs[attr].domain_size; }

  void validate() const {
    for (const auto& r : rows) {
      if (static_cast<int>(r.size()) != width())
        throw DataError("flattened row width mismatch");
      int s = size_of(r);
      if (s < 0 || s > N) throw DataError("group size outside [0,N]");
      for (int slot = 1; slot <= N; ++slot)
        for (int a = 0; a < icols(); ++a) {
          int v = r[slot_col(slot, a)];
          if (slot <= s) {
            if (v == null_code(a)) throw DataError("NULL inside a live slot");
          } else if (v != null_code(a)) {
            throw DataError("non-NULL beyond the group size");
          }
        }
    }
  }
};

inline std::vector<std::int64_t> count_group_sizes(const FlattenedRelation& fr) {
  std::vector<std::int64_t> n(fr.N + 1, 0);
  for (const auto& r : fr.rows) {
    int s = fr.size_of(r);
    if (s < 0 || s > fr.N) throw DataError("group size outside [0,N]");
    ++n[s];
  }
  return n;
}

inline FlattenedRelation flatten(const Database& db, const std::string& referencing_relation,
                                 const std::string& fk_attribute) {
  const RelationSchema& child = db.schema(referencing_relation);
  int fi = child.fk_index(fk_attribute);
  if (fi < 0)
    throw SchemaError(referencing_relation + ": no foreign key '" + fk_attribute + "'");
  const ForeignKeySpec& fk = child.foreign_keys[fi];
  const RelationSchema& parent = db.schema(fk.references);

  FlattenedRelation fr;
  fr.household_attrs = parent.attributes;
  fr.size_attr_index = parent.attr_index(size_attr_name(referencing_relation, fk_attribute));
  if (fr.size_attr_index < 0)
    throw SchemaError(parent.name + ": size attribute missing; run augment_size_attribute first");
  fr.indiv_attrs = child.attributes;
  fr.N = fk.max_group_size;
  fr.household_name = parent.name;
  fr.individual_name = child.name;
  fr.household_pk = parent.primary_key;
  fr.individual_pk = child.primary_key;
  fr.fk_attribute = fk_attribute;
  fr.min_group_size = fk.min_group_size;

  // Children grouped by parent key; within a group, file order decides slots.
  std::map<std::string, std::vector<const Row*>> groups;
  for (const auto& r : db.rows(referencing_relation)) groups[r.fks[fi]].push_back(&r);

  for (const auto& hr : db.rows(fk.references)) {
    std::vector<int> row(fr.width());
    for (int a = 0; a < fr.hcols(); ++a) row[a] = hr.attrs[a];
    auto git = groups.find(hr.pk);
    int s = git == groups.end() ? 0 : static_cast<int>(git->second.size());
    if (s != row[fr.size_attr_index])
      throw IntegrityError(parent.name + " key '" + hr.pk + "': size attribute " +
                           std::to_string(row[fr.size_attr_index]) + " but " + std::to_string(s) +
                           " referencing tuples");
    for (int slot = 1; slot <= fr.N; ++slot)
      for (int a = 0; a < fr.icols(); ++a)
        row[fr.slot_col(slot, a)] =
            slot <= s ? git->second[slot - 1]->attrs[a] : fr.null_code(a);
    fr.rows.push_back(std::move(row));
  }
  fr.group_counts = count_group_sizes(fr);
  return fr;
}

// Splits a fully sampled flattened relation back into parent and child
// relations with fresh sequential keys. Inverse of flatten up to key labels.
inline Database decompose(const FlattenedRelation& fr, const std::string& household_relation_name,
                          const std::string& individual_relation_name) {
  RelationSchema hs;
  hs.name = household_relation_name;
  hs.primary_key = fr.household_pk;
  hs.attributes = fr.household_attrs;
  hs.privacy = PrivacyClass::Primary;

  RelationSchema is;
  is.name = individual_relation_name;
  is.primary_key = fr.individual_pk;
  is.attributes = fr.indiv_attrs;
  is.foreign_keys.push_back({fr.fk_attribute, household_relation_name, fr.N, fr.min_group_size});
  is.privacy = PrivacyClass::Secondary;

  Database out;
  std::vector<Row> hrows, irows;
  std::int64_t next_i = 1;
  for (std::size_t h = 0; h < fr.rows.size(); ++h) {
    const auto& r = fr.rows[h];
    Row hr;
    hr.pk = std::to_string(h + 1);
    hr.attrs.assign(r.begin(), r.begin() + fr.hcols());
    int s = fr.size_of(r);
    for (int slot = 1; slot <= s; ++slot) {
      Row ir;
      ir.pk = std::to_string(next_i++);
      ir.fks.push_back(hr.pk);
      for (int a = 0; a < fr.icols(); ++a) {
        int v = r[fr.slot_col(slot, a)];
        if (v < 0 || v >= fr.indiv_attrs[a].domain_size)
          throw IncompleteRow(individual_relation_name + "." + fr.indiv_attrs[a].name +
                              ": unsampled value in a live slot");
        ir.attrs.push_back(v);
      }
      irows.push_back(std::move(ir));
    }
    hrows.push_back(std::move(hr));
  }
  out.schemas = {hs, is};
  out.relations[household_relation_name] = std::move(hrows);
  out.relations[individual_relation_name] = std::move(irows);
  out.validate_schema();
  out.validate_data();
  return out;
}

}  // namespace permsyn
