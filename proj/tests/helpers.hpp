#pragma once

#include <unistd.h>

#include <filesystem>
#include <fstream>
#include <string>

#include "permsyn/schema.hpp"

namespace testutil {

struct TempDir {
  std::string path;
  TempDir() {
    char buf[] = "/tmp/permsyn_test_XXXXXX";
    path = mkdtemp(buf);
  }
  ~TempDir() { std::filesystem::remove_all(path); }
  TempDir(const TempDir&) = delete;
  std::string file(const std::string& name) const { return path + "/" + name; }
};

// The running example: 9 individuals in 3 households of sizes 4, 3, 2.
// AGE codes sort the distinct ages: 10,12,25,30,35,40,55,60 -> 0..7.
// EMP/MAR: No=0 Yes=1. EDU: Low=0 Mid=1 High=2. OWN: No=0 Yes=1.
inline permsyn::Database make_census_db() {
  using namespace permsyn;
  RelationSchema h;
  h.name = "household";
  h.primary_key = "H-ID";
  h.attributes = {{"OWN", 2, {}}};
  h.privacy = PrivacyClass::Primary;

  RelationSchema ind;
  ind.name = "individual";
  ind.primary_key = "P-ID";
  ind.attributes = {{"AGE", 8, {}}, {"EMP", 2, {}}, {"EDU", 3, {}}, {"MAR", 2, {}}};
  ind.foreign_keys = {{"H-ID", "household", 4, 1}};
  ind.privacy = PrivacyClass::Secondary;

  Database db;
  db.schemas = {h, ind};
  db.relations["household"] = {
      {"h1", {}, {0}},
      {"h2", {}, {0}},
      {"h3", {}, {1}},
  };
  db.relations["individual"] = {
      {"i1", {"h1"}, {5, 1, 1, 1}},  // 40 Yes Mid  Yes
      {"i2", {"h1"}, {4, 1, 2, 1}},  // 35 Yes High Yes
      {"i3", {"h1"}, {1, 0, 0, 0}},  // 12 No  Low  No
      {"i4", {"h1"}, {0, 0, 0, 0}},  // 10 No  Low  No
      {"i5", {"h2"}, {6, 0, 2, 1}},  // 55 No  High Yes
      {"i6", {"h2"}, {7, 0, 1, 1}},  // 60 No  Mid  Yes
      {"i7", {"h2"}, {2, 1, 1, 0}},  // 25 Yes Mid  No
      {"i8", {"h3"}, {3, 1, 2, 1}},  // 30 Yes High Yes
      {"i9", {"h3"}, {2, 1, 2, 1}},  // 25 Yes High Yes
  };
  db.validate_schema();
  db.validate_data();
  return db;
}

inline const char* census_schema_json() {
  return R"({"relations":[
    {"name":"household","primary_key":"H-ID","privacy":"primary",
     "attributes":[{"name":"OWN","domain_size":2}]},
    {"name":"individual","primary_key":"P-ID","privacy":"secondary",
     "attributes":[{"name":"AGE","domain_size":8},{"name":"EMP","domain_size":2},
                   {"name":"EDU","domain_size":3},{"name":"MAR","domain_size":2}],
     "foreign_keys":[{"attribute":"H-ID","references":"household","max_group_size":4}]}
  ]})";
}

inline void write_census_files(const TempDir& dir) {
  using namespace permsyn;
  std::ofstream(dir.file("schema.json")) << census_schema_json();
  Database db = make_census_db();
  save_database(db, dir.path);
}

}  // namespace testutil
