#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>

#include "iocc/binary_io.hpp"
#include "iocc/data.hpp"

using namespace iocc;
namespace fs = std::filesystem;

namespace {

fs::path tmp(const std::string &name) {
  auto dir = fs::temp_directory_path() / "iocc_test_data";
  fs::create_directories(dir);
  return dir / name;
}

EmbeddingDataset small() {
  EmbeddingDataset ds;
  ds.X = Matrix(4, 2);
  for (std::size_t i = 0; i < 8; ++i) ds.X.flat()[i] = 0.1 * static_cast<double>(i) - 0.3;
  ds.K = 2;
  return ds;
}

} // namespace

TEST_CASE("minimal binary file without views") {
  const auto ds = small();
  save_dataset(ds, tmp("min.ioccds"));
  const auto back = load_dataset(tmp("min.ioccds"));
  CHECK(back.n() == 4);
  CHECK(back.d() == 2);
  CHECK(back.K == 2);
  CHECK_FALSE(back.views.has_value());
  CHECK_FALSE(back.y_true.has_value());
  CHECK(back == ds);
}

TEST_CASE("label section shorter than the header is a parse error naming the section") {
  ByteWriter w;
  w.magic("IOCCDS01");
  for (std::uint64_t v : {4, 2, 2, 2}) w.u64(v); // n, d, K, flags = labels
  w.matrix(small().X);
  for (std::uint32_t v : {0u, 1u, 0u}) w.u32(v);
  write_file(tmp("short.ioccds"), w.bytes());
  try {
    load_dataset(tmp("short.ioccds"));
    FAIL("expected a parse error");
  } catch (const ParseError &e) {
    const std::string msg = e.what();
    CHECK(msg.find("labels") != std::string::npos);
    CHECK(msg.find("byte offset") != std::string::npos);
  }
}

TEST_CASE("bad magic and out-of-range labels are rejected") {
  ByteWriter w;
  w.magic("NOTADATA");
  write_file(tmp("magic.ioccds"), w.bytes());
  CHECK_THROWS_AS(load_dataset(tmp("magic.ioccds")), ParseError);

  ByteWriter v;
  v.magic("IOCCDS01");
  for (std::uint64_t x : {4, 2, 2, 2}) v.u64(x);
  v.matrix(small().X);
  for (std::uint32_t x : {0u, 1u, 0u, 7u}) v.u32(x);
  v.u64(0);
  write_file(tmp("label.ioccds"), v.bytes());
  CHECK_THROWS_AS(load_dataset(tmp("label.ioccds")), ParseError);
}

TEST_CASE("round trip is bit-exact in both formats") {
  SyntheticSpec spec;
  spec.K = 3;
  spec.n = 60;
  spec.d = 5;
  spec.seed = 11;
  auto ds = generate_synthetic(spec);
  ds.views = make_views(ds.X, 0.3, 5);
  save_dataset(ds, tmp("rt.ioccds"));
  CHECK(load_dataset(tmp("rt.ioccds")) == ds);
  save_dataset(ds, tmp("rt.jsonl"));
  CHECK(load_dataset(tmp("rt.jsonl")) == ds);
}

TEST_CASE("jsonl records with ids, vectors and labels") {
  {
    std::ofstream out(tmp("hand.jsonl"));
    out << R"({"id": 1, "vector": [1.0, 2.0], "label": 1})" << '\n'
        << R"({"id": 0, "vector": [0.5, -1.0], "label": 0, "labeled": true})" << '\n';
  }
  const auto ds = load_dataset(tmp("hand.jsonl"));
  CHECK(ds.n() == 2);
  CHECK(ds.K == 2);
  CHECK(ds.X(0, 0) == 0.5);
  CHECK(ds.X(1, 1) == 2.0);
  CHECK(ds.labeled_idx == std::vector<std::size_t>{0});
  {
    std::ofstream out(tmp("ragged.jsonl"));
    out << R"({"id": 0, "vector": [1.0, 2.0]})" << '\n' << R"({"id": 1, "vector": [1.0]})" << '\n';
  }
  CHECK_THROWS_AS(load_dataset(tmp("ragged.jsonl")), ParseError);
}

TEST_CASE("dataset invariants") {
  auto ds = small();
  ds.labeled_idx = {1};
  CHECK_THROWS_AS(ds.validate(), ConfigError); // labeled without y_true
  ds.y_true = Labels{0, 1, 0, 1};
  CHECK_NOTHROW(ds.validate());
  ds.labeled_idx = {1, 1};
  CHECK_THROWS_AS(ds.validate(), ConfigError);
  ds.labeled_idx = {4};
  CHECK_THROWS_AS(ds.validate(), ConfigError);
  ds.labeled_idx = {0};
  ds.views = ViewPair{Matrix(4, 3), Matrix(4, 3)};
  CHECK_THROWS_AS(ds.validate(), ShapeError);
  CHECK(small().unlabeled_idx() == std::vector<std::size_t>{0, 1, 2, 3});
}

TEST_CASE("cluster sizes") {
  CHECK(cluster_sizes(2, 110, 10.0) == std::vector<std::size_t>{100, 10});
  for (int K : {1, 3, 7}) {
    for (std::size_t n : {std::size_t(7), std::size_t(100), std::size_t(2001)}) {
      if (n < static_cast<std::size_t>(K)) continue;
      const auto s = cluster_sizes(K, n, 1.0);
      const auto [lo, hi] = std::minmax_element(s.begin(), s.end());
      CHECK(*hi - *lo <= 1);
      std::size_t total = 0;
      for (auto v : s) total += v;
      CHECK(total == n);
    }
  }
  const auto s = cluster_sizes(6, 2000, 10.0);
  CHECK(static_cast<double>(s.front()) / static_cast<double>(s.back()) == doctest::Approx(10.0).epsilon(0.05));
  CHECK_THROWS_AS(cluster_sizes(3, 2, 1.0), ConfigError);
  CHECK_THROWS_AS(cluster_sizes(2, 10, 0.5), ConfigError);
}

TEST_CASE("synthetic generation") {
  SyntheticSpec one;
  one.K = 1;
  one.n = 10;
  one.d = 2;
  one.noise_sigma = 0.0;
  const auto ds1 = generate_synthetic(one);
  for (std::size_t i = 1; i < 10; ++i) CHECK(ds1.X.row(i)[0] == ds1.X.row(0)[0]);
  CHECK(std::hypot(ds1.X(0, 0), ds1.X(0, 1)) == doctest::Approx(one.center_separation));

  SyntheticSpec spec;
  spec.seed = 7;
  const auto a = generate_synthetic(spec), b = generate_synthetic(spec);
  CHECK(a == b);
  CHECK(a.n() == 2000);
  CHECK(a.labeled_idx.size() == 20); // 1% of 500 in each of 4 clusters
  std::vector<int> per(4, 0);
  for (auto i : a.labeled_idx) ++per[(*a.y_true)[i]];
  CHECK(per == std::vector<int>{5, 5, 5, 5});

  SyntheticSpec imb;
  imb.K = 2;
  imb.n = 110;
  imb.d = 4;
  imb.imbalance_ratio = 10.0;
  const auto c = generate_synthetic(imb);
  std::vector<int> count(2, 0);
  for (int y : *c.y_true) ++count[y];
  std::sort(count.begin(), count.end());
  CHECK(count == std::vector<int>{10, 100});
  CHECK(c.labeled_idx.size() == 2); // n/K <= 100: one per cluster

  SyntheticSpec bad;
  bad.K = 8;
  bad.d = 1;
  CHECK_THROWS_AS(generate_synthetic(bad), ConfigError);
}

TEST_CASE("views") {
  const Matrix X = small().X;
  const auto same = make_views(X, 0.0, 3);
  CHECK(same.first == X);
  CHECK(same.second == X);
  CHECK(make_views(X, 0.5, 9) == make_views(X, 0.5, 9));
  const Matrix big(1000, 100, 1.0);
  const auto v = make_views(big, 0.2, 4);
  double s = 0, s2 = 0;
  for (std::size_t i = 0; i < big.size(); ++i) {
    const double e = v.first.flat()[i] - 1.0;
    s += e;
    s2 += e * e;
  }
  const double n = static_cast<double>(big.size());
  const double var = s2 / n - (s / n) * (s / n);
  CHECK(std::abs(var - 0.04) / 0.04 < 0.02);
}

TEST_CASE("batch sampling") {
  auto ds = small();
  ds.y_true = Labels{0, 1, 1, 1};
  ds.labeled_idx = {0};
  ds.K = 2;
  ds.X = Matrix(4, 2, 0.0);
  for (std::size_t i = 0; i < 4; ++i) ds.X(i, 0) = static_cast<double>(i);
  Rng rng(1);
  const auto b = sample_batch(ds, 15, 200, rng, 0.0);
  CHECK(b.xl.rows() == 15);
  CHECK(b.xu.rows() == 200);
  CHECK(b.xu1.rows() == 200);
  for (auto i : b.l_idx) CHECK(i == 0);
  for (auto i : b.u_idx) CHECK(i != 0);
  for (int y : b.yl) CHECK(y == 0);

  Rng r1(5), r2(5);
  const auto x = sample_batch(ds, 3, 10, r1, 0.1), y = sample_batch(ds, 3, 10, r2, 0.1);
  CHECK(x.xu1 == y.xu1);
  CHECK(x.u_idx == y.u_idx);

  // single labeled and single unlabeled sample: repeated rows
  auto tiny = ds;
  tiny.X = Matrix(2, 2, 1.0);
  tiny.y_true = Labels{0, 1};
  const auto t = sample_batch(tiny, 15, 200, rng, 0.0);
  for (auto i : t.u_idx) CHECK(i == 1);

  // frequency of each unlabeled index over 10^4 draws
  Rng fr(3);
  std::vector<int> freq(4, 0);
  for (int it = 0; it < 50; ++it) {
    for (auto i : sample_batch(ds, 1, 200, fr, 0.0).u_idx) ++freq[i];
  }
  const double p = 1.0 / 3.0, n = 10000, sd = std::sqrt(n * p * (1 - p));
  for (int i = 1; i < 4; ++i) CHECK(std::abs(freq[i] - n * p) <= 3 * sd);

  auto none = ds;
  none.labeled_idx.clear();
  CHECK_THROWS_AS(sample_batch(none, 1, 1, rng, 0.0), ConfigError);
}
