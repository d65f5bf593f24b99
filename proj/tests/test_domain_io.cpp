#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "odgen/domain.hpp"
#include "odgen/gravity.hpp"
#include "odgen/hist.hpp"
#include "odgen/io.hpp"
#include "odgen/text.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>
#include <set>

using namespace odgen;
namespace fs = std::filesystem;

namespace {

fs::path fresh_dir(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("odgen_test_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::string slurp(const fs::path& file) {
  std::ifstream in(file, std::ios::binary);
  REQUIRE(in.good());
  return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

void patch_file(const fs::path& file, const std::string& content) {
  std::ofstream out(file, std::ios::binary);
  out << content;
}

SyntheticAreaSpec small_spec(std::uint64_t seed, int n = 5, double noise = 0.0) {
  SyntheticAreaSpec spec;
  spec.area_id = "t" + std::to_string(seed);
  spec.n_regions = n;
  spec.seed = seed;
  spec.noise_level = noise;
  spec.gravity.scale = 0.01;
  spec.gravity.origin_exp = 1.0;
  spec.gravity.dest_exp = 1.0;
  spec.gravity.decay = 2.0;
  spec.gravity.decay_kind = DecayKind::Power;
  return spec;
}

}  // namespace

// ---------------------------------------------------------------------------
// text helpers
// ---------------------------------------------------------------------------

TEST_CASE("format_double emits shortest roundtrip representation") {
  CHECK(text::format_double(0.0) == "0");
  CHECK(text::format_double(1.0) == "1");
  CHECK(text::format_double(0.1) == "0.1");
  for (const double v : {0.1, 1.0 / 3.0, 1e300, 1e-300, 12345.6789, -2.5e-7}) {
    CHECK(text::parse_double(text::format_double(v)) == v);
  }
}

TEST_CASE("parse_double rejects junk") {
  CHECK_THROWS_AS(text::parse_double(""), std::invalid_argument);
  CHECK_THROWS_AS(text::parse_double("1.5x"), std::invalid_argument);
  CHECK_THROWS_AS(text::parse_double(" 1.5"), std::invalid_argument);
  CHECK_THROWS_AS(text::parse_long("2.5"), std::invalid_argument);
  CHECK_THROWS_AS(text::parse_long("-42"), std::invalid_argument);
  CHECK(text::parse_long("42") == 42);
}

TEST_CASE("split_csv_line keeps empty fields") {
  const auto fields = text::split_csv_line("a,,c");
  REQUIRE(fields.size() == 3);
  CHECK(fields[0] == "a");
  CHECK(fields[1] == "");
  CHECK(fields[2] == "c");
  CHECK(text::strip_cr("x\r") == "x");
}

// ---------------------------------------------------------------------------
// domain
// ---------------------------------------------------------------------------

TEST_CASE("distance matrix matches a brute-force loop") {
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> coord(0.0, 50.0);
  std::vector<std::pair<double, double>> pts;
  for (int i = 0; i < 9; ++i) pts.emplace_back(coord(rng), coord(rng));

  const Matrix d = compute_distance_matrix(pts);
  for (std::size_t i = 0; i < pts.size(); ++i) {
    for (std::size_t j = 0; j < pts.size(); ++j) {
      const double dx = pts[i].first - pts[j].first;
      const double dy = pts[i].second - pts[j].second;
      CHECK(d(static_cast<int>(i), static_cast<int>(j)) ==
            doctest::Approx(std::sqrt(dx * dx + dy * dy)).epsilon(1e-12));
    }
    CHECK(d(static_cast<int>(i), static_cast<int>(i)) == 0.0);
  }
  CHECK((d - d.transpose()).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("area validation catches duplicate region ids") {
  LoadedArea la = generate_synthetic_area(small_spec(1, 3));
  la.area.regions[1].region_id = la.area.regions[0].region_id;
  CHECK_THROWS_AS(la.area.validate(), InvalidInputError);
}

TEST_CASE("od validation report flags negative entries with coordinates") {
  LoadedArea la = generate_synthetic_area(small_spec(2, 3));
  la.od.flows(1, 2) = -4.0;
  const ODValidationReport report = validate_od_matrix(la.od.flows, la.area.n_regions());
  CHECK_FALSE(report.pass());
  bool found = false;
  for (const auto& check : report.checks) {
    if (!check.ok && check.detail.find("(1,2)") != std::string::npos) found = true;
  }
  CHECK(found);
}

TEST_CASE("build_area_graph rejects mismatched od size") {
  const LoadedArea la = generate_synthetic_area(small_spec(3, 4));
  ODMatrix wrong;
  wrong.flows = Matrix::Zero(3, 3);
  CHECK_THROWS_AS(build_area_graph(la.area, &wrong), InvalidInputError);
  const AttributedGraph g = build_area_graph(la.area, &la.od);
  CHECK(g.n_nodes() == 4);
  REQUIRE(g.edge_weights.has_value());
  CHECK(g.edge_weights->rows() == 4);
  CHECK(g.node_features.cols() == kRegionFeatureDims);
}

// ---------------------------------------------------------------------------
// histogram
// ---------------------------------------------------------------------------

TEST_CASE("log2 histogram separates zeros and clamps extremes") {
  const std::vector<double> values{0.0, 0.0, 1.0, 1.5, 2.0, 1e-9, 1e30};
  const Log2Histogram h = log2_histogram(values, 0, 10, 0.0);
  REQUIRE(h.n_bins() == 12);
  CHECK(h.mass[0] == doctest::Approx(2.0 / 7.0));           // zeros
  CHECK(h.mass[1] == doctest::Approx(3.0 / 7.0));           // [1,2): 1, 1.5 and clamped 1e-9
  CHECK(h.mass[2] == doctest::Approx(1.0 / 7.0));           // [2,4)
  CHECK(h.mass[11] == doctest::Approx(1.0 / 7.0));          // clamped overflow
  double total = 0.0;
  for (const double m : h.mass) total += m;
  CHECK(total == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(h.bin_lower(0) == 0.0);
  CHECK(h.bin_lower(1) == 1.0);
  CHECK(h.bin_lower(2) == 2.0);
}

TEST_CASE("log2 histogram rejects negative values") {
  const std::vector<double> values{-1.0};
  CHECK_THROWS_AS(log2_histogram(values, 0, 4, 0.0), std::invalid_argument);
}

// ---------------------------------------------------------------------------
// synthetic areas
// ---------------------------------------------------------------------------

TEST_CASE("noiseless synthetic flows equal the planted gravity prediction") {
  const SyntheticAreaSpec spec = small_spec(7, 6);
  const LoadedArea la = generate_synthetic_area(spec);
  const Vector masses = la.area.feature_column(0);
  const ODMatrix expected = gravity_predict(spec.gravity, masses, la.area.distances_km);
  CHECK((la.od.flows - expected.flows).cwiseAbs().maxCoeff() == 0.0);
  for (int i = 0; i < spec.n_regions; ++i) {
    CHECK(masses[i] >= spec.mass_range.first);
    CHECK(masses[i] <= spec.mass_range.second);
  }
}

TEST_CASE("synthetic generation is deterministic and noise changes flows") {
  const LoadedArea a = generate_synthetic_area(small_spec(9, 5));
  const LoadedArea b = generate_synthetic_area(small_spec(9, 5));
  CHECK((a.od.flows - b.od.flows).cwiseAbs().maxCoeff() == 0.0);
  CHECK(a.area.regions[0].centroid_x_km == b.area.regions[0].centroid_x_km);

  const LoadedArea noisy = generate_synthetic_area(small_spec(9, 5, 0.3));
  CHECK((a.od.flows - noisy.od.flows).cwiseAbs().maxCoeff() > 0.0);
  CHECK((noisy.od.flows.array() >= 0.0).all());
}

TEST_CASE("synthetic spec validation") {
  SyntheticAreaSpec spec = small_spec(1);
  spec.mass_range = {0.0, 10.0};
  CHECK_THROWS_AS(generate_synthetic_area(spec), InvalidInputError);
  spec = small_spec(1);
  spec.n_regions = 0;
  CHECK_THROWS_AS(generate_synthetic_area(spec), InvalidInputError);
}

// ---------------------------------------------------------------------------
// save / load roundtrip
// ---------------------------------------------------------------------------

TEST_CASE("area roundtrip is content-identical and byte-stable") {
  const fs::path dir = fresh_dir("roundtrip");
  const LoadedArea original = generate_synthetic_area(small_spec(21, 6, 0.2));
  const fs::path area_dir = dir / ("area_" + original.area.area_id);
  save_area(area_dir, original.area, &original.od);

  const LoadedArea loaded = load_area(area_dir);
  CHECK(loaded.area.area_id == original.area.area_id);
  REQUIRE(loaded.area.n_regions() == original.area.n_regions());
  for (int i = 0; i < loaded.area.n_regions(); ++i) {
    CHECK(loaded.area.regions[i].region_id == original.area.regions[i].region_id);
    CHECK(loaded.area.regions[i].centroid_x_km == original.area.regions[i].centroid_x_km);
    CHECK(loaded.area.regions[i].demographics == original.area.regions[i].demographics);
    CHECK(loaded.area.regions[i].poi_counts == original.area.regions[i].poi_counts);
  }
  CHECK((loaded.od.flows - original.od.flows).cwiseAbs().maxCoeff() == 0.0);
  CHECK((loaded.area.distances_km - original.area.distances_km).cwiseAbs().maxCoeff() == 0.0);

  const fs::path second_dir = dir / "copy";
  save_area(second_dir, loaded.area, &loaded.od);
  for (const char* name : {"meta.json", "features.csv", "centroids.csv", "od.csv"}) {
    CHECK(slurp(area_dir / name) == slurp(second_dir / name));
  }
}

TEST_CASE("explicit distances roundtrip through distances.csv") {
  const fs::path dir = fresh_dir("distances");
  LoadedArea la = generate_synthetic_area(small_spec(22, 4));
  la.area.distances_km(0, 1) = 99.5;  // symmetric override, not centroid-derived
  la.area.distances_km(1, 0) = 99.5;
  la.area.explicit_distances = true;
  const fs::path area_dir = dir / ("area_" + la.area.area_id);
  save_area(area_dir, la.area, &la.od);
  CHECK(fs::exists(area_dir / "distances.csv"));

  const LoadedArea loaded = load_area(area_dir);
  CHECK(loaded.area.explicit_distances);
  CHECK(loaded.area.distances_km(0, 1) == 99.5);
}

TEST_CASE("load errors name the offending file and location") {
  const fs::path dir = fresh_dir("malformed");
  const LoadedArea la = generate_synthetic_area(small_spec(23, 3));
  const fs::path area_dir = dir / ("area_" + la.area.area_id);

  SUBCASE("bad features header") {
    save_area(area_dir, la.area, &la.od);
    std::string content = slurp(area_dir / "features.csv");
    patch_file(area_dir / "features.csv", "region_id,bogus\n" + content);
    CHECK_THROWS_WITH_AS(load_area(area_dir),
                         doctest::Contains("features.csv:1"), LoadError);
  }
  SUBCASE("negative flow names the pair") {
    save_area(area_dir, la.area, &la.od);
    patch_file(area_dir / "od.csv",
               "origin_id,destination_id,flow\nr000,r001,-3\n");
    try {
      load_area(area_dir);
      FAIL("expected LoadError");
    } catch (const LoadError& e) {
      const std::string what = e.what();
      CHECK(what.find("od.csv") != std::string::npos);
      CHECK(what.find("r000") != std::string::npos);
      CHECK(what.find("r001") != std::string::npos);
    }
  }
  SUBCASE("unknown region in od.csv") {
    save_area(area_dir, la.area, &la.od);
    patch_file(area_dir / "od.csv", "origin_id,destination_id,flow\nnope,r001,3\n");
    CHECK_THROWS_WITH_AS(load_area(area_dir), doctest::Contains("nope"), LoadError);
  }
  SUBCASE("duplicate od pair") {
    save_area(area_dir, la.area, &la.od);
    patch_file(area_dir / "od.csv",
               "origin_id,destination_id,flow\nr000,r001,3\nr000,r001,4\n");
    CHECK_THROWS_WITH_AS(load_area(area_dir), doctest::Contains("duplicate"), LoadError);
  }
  SUBCASE("meta region count mismatch") {
    save_area(area_dir, la.area, &la.od);
    patch_file(area_dir / "meta.json",
               "{\"area_id\": \"" + la.area.area_id + "\", \"n_regions\": 7, \"units\": \"km\"}\n");
    CHECK_THROWS_AS(load_area(area_dir), LoadError);
  }
  SUBCASE("malformed number names the line") {
    save_area(area_dir, la.area, &la.od);
    patch_file(area_dir / "centroids.csv", "region_id,x_km,y_km\nr000,abc,1\nr001,0,0\nr002,0,0\n");
    CHECK_THROWS_WITH_AS(load_area(area_dir),
                         doctest::Contains("centroids.csv:2"), LoadError);
  }
  SUBCASE("missing file") {
    save_area(area_dir, la.area, &la.od);
    fs::remove(area_dir / "od.csv");
    CHECK_THROWS_AS(load_area(area_dir), LoadError);
    fs::remove(area_dir / "centroids.csv");
    CHECK_THROWS_AS(load_area_features(area_dir), LoadError);
  }
  SUBCASE("invalid meta json") {
    save_area(area_dir, la.area, &la.od);
    patch_file(area_dir / "meta.json", "{not json");
    CHECK_THROWS_WITH_AS(load_area(area_dir), doctest::Contains("meta.json"), LoadError);
  }
}

// ---------------------------------------------------------------------------
// corpus index and split
// ---------------------------------------------------------------------------

TEST_CASE("index_corpus lists areas sorted and validates naming") {
  const fs::path dir = fresh_dir("index");
  for (const std::uint64_t seed : {31, 30}) {
    const LoadedArea la = generate_synthetic_area(small_spec(seed, 4));
    save_area(dir / ("area_" + la.area.area_id), la.area, &la.od);
  }
  fs::create_directories(dir / "not_an_area");

  const auto index = index_corpus(dir);
  REQUIRE(index.size() == 2);
  CHECK(index[0].area_id == "t30");
  CHECK(index[1].area_id == "t31");
  CHECK(index[0].n_regions == 4);
  CHECK(find_area(index, "t31") != nullptr);
  CHECK(find_area(index, "missing") == nullptr);

  fs::rename(dir / "area_t30", dir / "area_renamed");
  CHECK_THROWS_WITH_AS(index_corpus(dir), doctest::Contains("does not match"), LoadError);
}

TEST_CASE("split is deterministic, partitions, and sends remainders to train") {
  std::vector<AreaIndexEntry> areas;
  for (int i = 0; i < 10; ++i) {
    AreaIndexEntry e;
    e.area_id = "a" + std::to_string(i);
    e.n_regions = 4 + i;
    areas.push_back(e);
  }

  const CorpusSplit s1 = split_corpus(areas, {0.8, 0.1, 0.1}, 5);
  const CorpusSplit s2 = split_corpus(areas, {0.8, 0.1, 0.1}, 5);
  CHECK(s1.train == s2.train);
  CHECK(s1.val == s2.val);
  CHECK(s1.test == s2.test);
  CHECK(s1.train.size() == 8);
  CHECK(s1.val.size() == 1);
  CHECK(s1.test.size() == 1);

  std::set<std::string> all;
  for (const auto& part : {s1.train, s1.val, s1.test})
    for (const auto& id : part) CHECK(all.insert(id).second);
  CHECK(all.size() == areas.size());

  // 7 areas at 0.8/0.1/0.1: floors are 5/0/0, remainder of 2 goes to train.
  areas.resize(7);
  const CorpusSplit s3 = split_corpus(areas, {0.8, 0.1, 0.1}, 5);
  CHECK(s3.train.size() == 7);
  CHECK(s3.val.empty());
  CHECK(s3.test.empty());

  const CorpusSplit s4 = split_corpus(areas, {0.8, 0.1, 0.1}, 6);
  CHECK(s4.train != s3.train);  // different seed, different order
}

TEST_CASE("split filter restricts by region count and label") {
  std::vector<AreaIndexEntry> areas;
  for (int i = 0; i < 6; ++i) {
    AreaIndexEntry e;
    e.area_id = "a" + std::to_string(i);
    e.n_regions = 4 + i;  // 4..9
    areas.push_back(e);
  }
  SplitFilter filter;
  filter.min_regions = 5;
  filter.max_regions = 8;
  const CorpusSplit split = split_corpus(areas, {1.0, 0.0, 0.0}, 1, filter);
  CHECK(split.train.size() == 4);

  SplitFilter label_filter;
  label_filter.labels = std::set<std::string>{"mono"};
  label_filter.label_of = {{"a0", "mono"}, {"a1", "poly"}, {"a2", "mono"}};
  const CorpusSplit labeled = split_corpus(areas, {1.0, 0.0, 0.0}, 1, label_filter);
  CHECK(labeled.train.size() == 2);
}

TEST_CASE("split ratios must sum to one") {
  std::vector<AreaIndexEntry> areas(3);
  areas[0].area_id = "x";
  areas[1].area_id = "y";
  areas[2].area_id = "z";
  CHECK_THROWS_AS(split_corpus(areas, {0.5, 0.2, 0.2}, 1), InvalidInputError);
}

TEST_CASE("split file roundtrip") {
  const fs::path dir = fresh_dir("splitio");
  CorpusSplit split;
  split.seed = 9;
  split.ratios = {0.6, 0.2, 0.2};
  split.train = {"a", "b"};
  split.val = {"c"};
  split.test = {"d"};
  save_split(dir / "split.json", split);
  const CorpusSplit loaded = load_split(dir / "split.json");
  CHECK(loaded.seed == 9);
  CHECK(loaded.train == split.train);
  CHECK(loaded.subset("val") == split.val);
  CHECK_THROWS_AS(loaded.subset("bogus"), InvalidInputError);
}

// ---------------------------------------------------------------------------
// feature scaler
// ---------------------------------------------------------------------------

TEST_CASE("feature scaler z-scores pooled training regions") {
  const LoadedArea a = generate_synthetic_area(small_spec(41, 5));
  const LoadedArea b = generate_synthetic_area(small_spec(42, 7));
  const FeatureScaler scaler = FeatureScaler::fit({&a.area, &b.area});

  Matrix pooled(12, kRegionFeatureDims);
  pooled.topRows(5) = a.area.feature_matrix();
  pooled.bottomRows(7) = b.area.feature_matrix();
  const Matrix scaled = scaler.apply(pooled);
  for (int c = 0; c < kRegionFeatureDims; ++c) {
    CHECK(scaled.col(c).mean() == doctest::Approx(0.0).epsilon(1e-9));
    const double var = (scaled.col(c).array() - scaled.col(c).mean()).square().mean();
    CHECK(var == doctest::Approx(1.0).epsilon(1e-9));
  }

  const Matrix recovered = scaler.invert(scaled);
  CHECK((recovered - pooled).cwiseAbs().maxCoeff() < 1e-9);
}

TEST_CASE("constant feature columns scale to exactly zero") {
  LoadedArea a = generate_synthetic_area(small_spec(43, 4));
  for (auto& r : a.area.regions) r.demographics[5] = 3.25;
  const FeatureScaler scaler = FeatureScaler::fit({&a.area});
  const Matrix scaled = scaler.apply(a.area);
  CHECK(scaled.col(5).cwiseAbs().maxCoeff() == 0.0);
  CHECK(scaler.std[5] == 1.0);
}

// ---------------------------------------------------------------------------
// corpus stats
// ---------------------------------------------------------------------------

TEST_CASE("stats hand fixture: weighted trip distance") {
  LoadedArea la = generate_synthetic_area(small_spec(51, 2));
  la.area.distances_km << 0.0, 5.0, 5.0, 0.0;
  la.od.flows << 0.0, 2.0, 0.0, 0.0;
  const CorpusStats stats = corpus_stats({la});
  REQUIRE(stats.per_area.size() == 1);
  REQUIRE(stats.per_area[0].avg_trip_distance_km.has_value());
  CHECK(*stats.per_area[0].avg_trip_distance_km == doctest::Approx(5.0));
  // inflows (0,2): population variance 1; outflows (2,0): variance 1
  CHECK(stats.per_area[0].inflow_variance == doctest::Approx(1.0));
  CHECK(stats.per_area[0].outflow_variance == doctest::Approx(1.0));
}

TEST_CASE("stats mark all-zero areas as undefined") {
  LoadedArea la = generate_synthetic_area(small_spec(52, 3));
  la.od.flows.setZero();
  LoadedArea other = generate_synthetic_area(small_spec(53, 4));
  const CorpusStats stats = corpus_stats({la, other});
  CHECK(stats.n_areas_without_flow == 1);
  CHECK_FALSE(stats.per_area[0].avg_trip_distance_km.has_value());
  CHECK(stats.per_area[1].avg_trip_distance_km.has_value());
  CHECK(stats.region_count_hist.at(3) == 1);
  CHECK(stats.region_count_hist.at(4) == 1);

  double total = 0.0;
  for (const double m : stats.edge_weight_hist.mass) total += m;
  CHECK(total == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("stats json writer emits parseable output") {
  const fs::path dir = fresh_dir("stats");
  const LoadedArea la = generate_synthetic_area(small_spec(54, 4));
  const CorpusStats stats = corpus_stats({la});
  save_stats_json(dir / "stats.json", stats);
  const std::string content = slurp(dir / "stats.json");
  CHECK(content.find("\"n_areas\": 1") != std::string::npos);
  CHECK(content.find("edge_weight_hist") != std::string::npos);
}
