#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <fstream>
#include <set>

#include "helpers.hpp"
#include "permsyn/flatten.hpp"
#include "permsyn/io.hpp"
#include "permsyn/rng.hpp"
#include "permsyn/schema.hpp"
#include "permsyn/table.hpp"

using namespace permsyn;
using testutil::TempDir;

TEST_CASE("table indexing round-trips", "[table]") {
  Table t({2, 3, 4});
  REQUIRE(t.size() == 24);
  std::vector<int> idx;
  for (std::size_t f = 0; f < t.size(); ++f) {
    t.unflatten(f, idx);
    REQUIRE(t.flat_index(idx) == f);
  }
  t.at({1, 2, 3}) = 7.0;
  REQUIRE(t[t.size() - 1] == 7.0);
}

TEST_CASE("table rollup sums out the right axes", "[table]") {
  Table t({2, 3, 2});
  std::vector<int> idx;
  for (std::size_t f = 0; f < t.size(); ++f) {
    t.unflatten(f, idx);
    t[f] = 100.0 * idx[0] + 10.0 * idx[1] + idx[2];
  }
  Table m = t.rollup({0, 2});
  REQUIRE(m.dims() == std::vector<int>{2, 2});
  // summing over axis 1: three terms with idx1 = 0,1,2
  REQUIRE(m.at({0, 0}) == (0 + 10 + 20));
  REQUIRE(m.at({1, 1}) == (101 + 111 + 121));
  REQUIRE(m.total() == Catch::Approx(t.total()));

  Table scalar = t.rollup({});
  REQUIRE(scalar.size() == 1);
  REQUIRE(scalar[0] == Catch::Approx(t.total()));

  Table p = t.permute_axes({2, 0, 1});
  REQUIRE(p.dims() == std::vector<int>{2, 2, 3});
  REQUIRE(p.at({1, 0, 2}) == t.at({0, 2, 1}));
  Table back = p.permute_axes({1, 2, 0});
  REQUIRE(back.l1_diff(t) == 0.0);
}

TEST_CASE("table outer product and rescale", "[table]") {
  Table a({2});
  a[0] = 1;
  a[1] = 3;
  Table b({3});
  b[0] = 2;
  b[1] = 0;
  b[2] = 5;
  Table o = Table::outer(a, b);
  REQUIRE(o.dims() == std::vector<int>{2, 3});
  REQUIRE(o.at({1, 2}) == 15.0);
  REQUIRE(o.at({0, 1}) == 0.0);

  Table z({2, 2});
  z.rescale_total(8.0);
  for (std::size_t i = 0; i < z.size(); ++i) REQUIRE(z[i] == 2.0);
  z.at({0, 0}) = -1;
  z.clip_negative();
  REQUIRE(z.at({0, 0}) == 0.0);
}

TEST_CASE("keyed rng is deterministic and label-separated", "[rng]") {
  KeyedRng a(42, "noise"), b(42, "noise"), c(42, "other"), d(43, "noise");
  std::vector<std::uint64_t> va, vb;
  for (int i = 0; i < 16; ++i) {
    va.push_back(a.next_u64());
    vb.push_back(b.next_u64());
  }
  REQUIRE(va == vb);
  REQUIRE(c.next_u64() != va[0]);
  REQUIRE(d.next_u64() != va[0]);

  KeyedRng s1 = KeyedRng(7, "root").substream("x");
  KeyedRng s2 = KeyedRng(7, "root").substream("x");
  REQUIRE(s1.next_u64() == s2.next_u64());
}

TEST_CASE("uniforms live strictly inside (0,1)", "[rng]") {
  KeyedRng r(1, "u");
  double lo = 1, hi = 0, sum = 0;
  const int n = 100000;
  for (int i = 0; i < n; ++i) {
    double u = r.next_uniform();
    REQUIRE(u > 0.0);
    REQUIRE(u < 1.0);
    lo = std::min(lo, u);
    hi = std::max(hi, u);
    sum += u;
  }
  REQUIRE(sum / n == Catch::Approx(0.5).margin(0.01));
  REQUIRE(lo < 0.01);
  REQUIRE(hi > 0.99);
}

TEST_CASE("inverse normal cdf matches known quantiles", "[rng]") {
  REQUIRE(std::fabs(inverse_normal_cdf(0.5)) < 1e-15);
  REQUIRE(inverse_normal_cdf(0.975) == Catch::Approx(1.959963984540054).epsilon(1e-12));
  REQUIRE(inverse_normal_cdf(0.025) == Catch::Approx(-1.959963984540054).epsilon(1e-12));
  REQUIRE(inverse_normal_cdf(0.841344746068543) == Catch::Approx(1.0).epsilon(1e-9));
  // round-trip through the forward cdf down to far tails; the upper-tail
  // symmetry check is limited by representing 1-p in a double, so it gets a
  // looser tolerance at the extremes
  for (double p : {1e-12, 1e-9, 1e-6, 1e-3, 0.05, 0.3, 0.5}) {
    double x = inverse_normal_cdf(p);
    REQUIRE(normal_cdf(x) == Catch::Approx(p).epsilon(1e-9));
    double tol = p < 1e-8 ? 1e-6 : 1e-9;
    REQUIRE(inverse_normal_cdf(1.0 - p) == Catch::Approx(-x).epsilon(tol));
  }
  REQUIRE_THROWS_AS(inverse_normal_cdf(0.0), NumericError);
  REQUIRE_THROWS_AS(inverse_normal_cdf(1.0), NumericError);
}

TEST_CASE("gaussian draws have the requested scale", "[rng]") {
  KeyedRng r(9, "g");
  REQUIRE(r.next_gaussian(0.0) == 0.0);
  const int n = 20000;
  double sum = 0, sumsq = 0;
  for (int i = 0; i < n; ++i) {
    double x = r.next_gaussian(2.0);
    sum += x;
    sumsq += x * x;
  }
  double mean = sum / n;
  double var = sumsq / n - mean * mean;
  REQUIRE(mean == Catch::Approx(0.0).margin(0.06));
  REQUIRE(var == Catch::Approx(4.0).margin(0.25));
}

TEST_CASE("csv round-trips with quoting", "[io]") {
  TempDir d;
  Csv t;
  t.header = {"k", "v"};
  t.rows = {{"a,b", "1"}, {"say \"hi\"", "2"}, {"line\nbreak", "3"}, {"plain", "4"}};
  write_csv(d.file("q.csv"), t);
  Csv u = read_csv(d.file("q.csv"));
  REQUIRE(u.header == t.header);
  REQUIRE(u.rows == t.rows);

  std::ofstream(d.file("bad.csv")) << "a,b\n1\n";
  REQUIRE_THROWS_AS(read_csv(d.file("bad.csv")), DataError);
  REQUIRE_THROWS_AS(read_csv(d.file("missing.csv")), DataError);
}

TEST_CASE("equal-width discretization", "[io]") {
  Csv t;
  t.header = {"id", "age"};
  int i = 0;
  for (double v : {10, 12, 25, 25, 25, 30, 35, 40, 55, 60})
    t.rows.push_back({std::to_string(++i), std::to_string(v)});

  SECTION("five bins over [10,60], max clamped into the last bin") {
    auto reps = discretize(t, "age", 5);
    std::vector<std::string> want = {"0", "0", "1", "1", "1", "2", "2", "3", "4", "4"};
    for (std::size_t r = 0; r < t.rows.size(); ++r) REQUIRE(t.rows[r][1] == want[r]);
    REQUIRE(reps == std::vector<double>{15, 25, 35, 45, 55});
  }
  SECTION("single bin collapses everything") {
    discretize(t, "age", 1);
    for (const auto& r : t.rows) REQUIRE(r[1] == "0");
  }
  SECTION("constant column") {
    for (auto& r : t.rows) r[1] = "7.5";
    auto reps = discretize(t, "age", 3);
    for (const auto& r : t.rows) REQUIRE(r[1] == "0");
    REQUIRE(reps[0] == 7.5);
  }
  SECTION("non-numeric cell") {
    t.rows[3][1] = "forty";
    REQUIRE_THROWS_AS(discretize(t, "age", 5), DataTypeError);
  }
}

TEST_CASE("schema json parses and validates", "[schema]") {
  Database db = parse_schema(nlohmann::json::parse(testutil::census_schema_json()));
  REQUIRE(db.schemas.size() == 2);
  const RelationSchema& ind = db.schema("individual");
  REQUIRE(ind.privacy == PrivacyClass::Secondary);
  REQUIRE(ind.attributes.size() == 4);
  REQUIRE(ind.attr("EDU").domain_size == 3);
  REQUIRE(ind.foreign_keys.size() == 1);
  REQUIRE(ind.foreign_keys[0].references == "household");
  REQUIRE(ind.foreign_keys[0].max_group_size == 4);
  REQUIRE(ind.foreign_keys[0].min_group_size == 1);
  REQUIRE(db.primary_private_name() == "household");
}

TEST_CASE("schema validation rejects bad structures", "[schema]") {
  auto parse = [](const std::string& body) {
    return parse_schema(nlohmann::json::parse(body));
  };
  // foreign key to a relation that does not exist
  REQUIRE_THROWS_AS(parse(R"({"relations":[
    {"name":"a","primary_key":"id","privacy":"primary",
     "foreign_keys":[{"attribute":"x","references":"ghost","max_group_size":2}]}]})"),
                    SchemaError);
  // duplicate column name
  REQUIRE_THROWS_AS(parse(R"({"relations":[
    {"name":"a","primary_key":"id","privacy":"primary",
     "attributes":[{"name":"x","domain_size":2},{"name":"x","domain_size":2}]}]})"),
                    SchemaError);
  // private relations need exactly one primary
  REQUIRE_THROWS_AS(parse(R"({"relations":[
    {"name":"a","primary_key":"id","privacy":"secondary"}]})"),
                    SchemaError);
  REQUIRE_THROWS_AS(parse(R"({"relations":[
    {"name":"a","primary_key":"id","privacy":"primary"},
    {"name":"b","primary_key":"id","privacy":"primary"}]})"),
                    SchemaError);
  // cycle through private foreign keys
  REQUIRE_THROWS_AS(parse(R"({"relations":[
    {"name":"a","primary_key":"id","privacy":"primary",
     "foreign_keys":[{"attribute":"fb","references":"b","max_group_size":2}]},
    {"name":"b","primary_key":"id","privacy":"secondary",
     "foreign_keys":[{"attribute":"fa","references":"a","max_group_size":2}]}]})"),
                    SchemaError);
  // unknown privacy string
  REQUIRE_THROWS_AS(parse(R"({"relations":[
    {"name":"a","primary_key":"id","privacy":"secret"}]})"),
                    ConfigError);
  // missing required field
  REQUIRE_THROWS_AS(parse(R"({"relations":[{"name":"a","privacy":"public"}]})"), ConfigError);
}

TEST_CASE("load_database reads the running example", "[schema]") {
  TempDir d;
  testutil::write_census_files(d);
  Database db = load_database(d.file("schema.json"), d.path);
  REQUIRE(db.rows("individual").size() == 9);
  REQUIRE(db.rows("household").size() == 3);
  REQUIRE(db.rows("individual")[4].attrs == std::vector<int>{6, 0, 2, 1});

  // determinism: loading the same files twice gives identical contents
  Database db2 = load_database(d.file("schema.json"), d.path);
  for (const auto& s : db.schemas) {
    const auto &r1 = db.rows(s.name), &r2 = db2.rows(s.name);
    REQUIRE(r1.size() == r2.size());
    for (std::size_t i = 0; i < r1.size(); ++i) {
      REQUIRE(r1[i].pk == r2[i].pk);
      REQUIRE(r1[i].fks == r2[i].fks);
      REQUIRE(r1[i].attrs == r2[i].attrs);
    }
  }
}

TEST_CASE("data validation catches integrity violations", "[schema]") {
  Database good = testutil::make_census_db();

  SECTION("dangling foreign key") {
    Database db = good;
    db.relations["individual"][0].fks[0] = "h7";
    REQUIRE_THROWS_AS(db.validate_data(), IntegrityError);
  }
  SECTION("attribute code out of range") {
    Database db = good;
    db.relations["individual"][2].attrs[2] = 3;  // EDU domain is 3
    REQUIRE_THROWS_AS(db.validate_data(), IntegrityError);
  }
  SECTION("duplicate primary key") {
    Database db = good;
    db.relations["household"][1].pk = "h1";
    REQUIRE_THROWS_AS(db.validate_data(), IntegrityError);
  }
  SECTION("empty group needs a declared minimum of zero") {
    Database db = good;
    db.relations["individual"].erase(db.relations["individual"].begin() + 7,
                                     db.relations["individual"].end());
    // h3 now has no members; default minimum is 1
    REQUIRE_THROWS_AS(db.validate_data(), IntegrityError);
    db.schemas[1].foreign_keys[0].min_group_size = 0;
    REQUIRE_NOTHROW(db.validate_data());
  }
}

TEST_CASE("size attribute augmentation", "[flatten]") {
  Database db = testutil::make_census_db();
  augment_size_attribute(db, "individual", "H-ID");
  const RelationSchema& h = db.schema("household");
  int si = h.attr_index(size_attr_name("individual", "H-ID"));
  REQUIRE(si == 1);
  REQUIRE(h.attributes[si].domain_size == 5);  // 0..4
  REQUIRE(db.rows("household")[0].attrs[si] == 4);
  REQUIRE(db.rows("household")[1].attrs[si] == 3);
  REQUIRE(db.rows("household")[2].attrs[si] == 2);

  // idempotent
  augment_size_attribute(db, "individual", "H-ID");
  REQUIRE(db.schema("household").attributes.size() == 2);

  SECTION("cap violation") {
    Database small = testutil::make_census_db();
    small.schemas[1].foreign_keys[0].max_group_size = 3;
    REQUIRE_THROWS_AS(augment_size_attribute(small, "individual", "H-ID"), CapExceeded);
  }
  SECTION("group with no referencing tuples gets size zero") {
    Database z = testutil::make_census_db();
    z.schemas[1].foreign_keys[0].min_group_size = 0;
    z.relations["household"].push_back({"h4", {}, {1}});
    augment_size_attribute(z, "individual", "H-ID");
    REQUIRE(z.rows("household")[3].attrs[1] == 0);
  }
}

TEST_CASE("flatten reproduces the worked example", "[flatten]") {
  Database db = testutil::make_census_db();
  augment_size_attribute(db, "individual", "H-ID");
  FlattenedRelation fr = flatten(db, "individual", "H-ID");
  REQUIRE(fr.N == 4);
  REQUIRE(fr.rows.size() == 3);
  REQUIRE_NOTHROW(fr.validate());

  // household 2: three members 55/60/25 in file order, fourth slot NULL
  const auto& r = fr.rows[1];
  REQUIRE(r[0] == 0);                    // OWN = No
  REQUIRE(fr.size_of(r) == 3);           // H.SIZE
  std::vector<int> slot1(r.begin() + fr.slot_col(1, 0), r.begin() + fr.slot_col(1, 0) + 4);
  std::vector<int> slot2(r.begin() + fr.slot_col(2, 0), r.begin() + fr.slot_col(2, 0) + 4);
  std::vector<int> slot3(r.begin() + fr.slot_col(3, 0), r.begin() + fr.slot_col(3, 0) + 4);
  std::vector<int> slot4(r.begin() + fr.slot_col(4, 0), r.begin() + fr.slot_col(4, 0) + 4);
  REQUIRE(slot1 == std::vector<int>{6, 0, 2, 1});
  REQUIRE(slot2 == std::vector<int>{7, 0, 1, 1});
  REQUIRE(slot3 == std::vector<int>{2, 1, 1, 0});
  REQUIRE(slot4 == std::vector<int>{8, 2, 3, 2});  // NULL sentinel = domain_size

  REQUIRE(fr.group_counts == std::vector<std::int64_t>{0, 0, 1, 1, 1});
  std::int64_t members = 0;
  for (int s = 0; s <= fr.N; ++s) members += s * fr.group_counts[s];
  REQUIRE(members == 9);
}

TEST_CASE("group size counting", "[flatten]") {
  FlattenedRelation fr;
  fr.household_attrs = {{"_size_x_f", 4, {}}};
  fr.size_attr_index = 0;
  fr.N = 3;
  REQUIRE(count_group_sizes(fr) == std::vector<std::int64_t>{0, 0, 0, 0});
  for (int i = 0; i < 5; ++i) fr.rows.push_back({2});
  REQUIRE(count_group_sizes(fr) == std::vector<std::int64_t>{0, 0, 5, 0});
}

TEST_CASE("decompose inverts flatten", "[flatten]") {
  Database db = testutil::make_census_db();
  augment_size_attribute(db, "individual", "H-ID");
  FlattenedRelation fr = flatten(db, "individual", "H-ID");
  Database back = decompose(fr, "household", "individual");

  REQUIRE(back.rows("household").size() == 3);
  REQUIRE(back.rows("individual").size() == 9);

  // attribute multisets survive the round trip (keys are renamed)
  auto multiset = [](const std::vector<Row>& rows) {
    std::multiset<std::vector<int>> m;
    for (const auto& r : rows) m.insert(r.attrs);
    return m;
  };
  auto strip_size = [&](std::vector<Row> rows) {
    for (auto& r : rows) r.attrs.pop_back();
    return rows;
  };
  REQUIRE(multiset(back.rows("individual")) == multiset(db.rows("individual")));
  REQUIRE(multiset(strip_size(back.rows("household"))) ==
          multiset(strip_size(db.rows("household"))));

  // flatten of the decomposition reproduces the flattened rows exactly
  FlattenedRelation fr2 = flatten(back, "individual", "H-ID");
  REQUIRE(fr2.rows == fr.rows);
  REQUIRE(fr2.group_counts == fr.group_counts);
}

TEST_CASE("decompose edge cases", "[flatten]") {
  Database db = testutil::make_census_db();
  augment_size_attribute(db, "individual", "H-ID");
  FlattenedRelation fr = flatten(db, "individual", "H-ID");

  SECTION("unsampled live cell") {
    fr.rows[1][fr.slot_col(2, 1)] = -1;
    REQUIRE_THROWS_AS(decompose(fr, "h", "i"), IncompleteRow);
  }
  SECTION("empty household decomposes to zero members") {
    fr.min_group_size = 0;
    std::vector<int> row(fr.width());
    row[0] = 1;
    row[fr.size_attr_index] = 0;
    for (int slot = 1; slot <= fr.N; ++slot)
      for (int a = 0; a < fr.icols(); ++a) row[fr.slot_col(slot, a)] = fr.null_code(a);
    fr.rows.push_back(row);
    Database out = decompose(fr, "h", "i");
    REQUIRE(out.rows("h").size() == 4);
    REQUIRE(out.rows("i").size() == 9);
  }
  SECTION("size attribute inconsistent with member count") {
    Database bad = testutil::make_census_db();
    augment_size_attribute(bad, "individual", "H-ID");
    bad.relations["household"][0].attrs[1] = 2;  // actually has 4 members
    REQUIRE_THROWS_AS(flatten(bad, "individual", "H-ID"), IntegrityError);
  }
}
