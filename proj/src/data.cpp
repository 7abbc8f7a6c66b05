#include "iocc/data.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <numeric>
#include <set>
#include <string>

#include "json.hpp"

#include "iocc/binary_io.hpp"

namespace iocc {

static_assert(std::endian::native == std::endian::little, "binary formats assume a little-endian host");

namespace {

constexpr char kDatasetMagic[] = "IOCCDS01";
constexpr std::uint64_t kFlagViews = 1;
constexpr std::uint64_t kFlagLabels = 2;

bool is_jsonl(const std::filesystem::path &p) {
  const auto ext = p.extension().string();
  return ext == ".jsonl" || ext == ".ndjson";
}

EmbeddingDataset load_binary(const std::filesystem::path &path) {
  ByteReader in(read_file(path), path.string());
  in.expect_magic(kDatasetMagic, "header");
  EmbeddingDataset ds;
  const auto n = in.u64("header.n");
  const auto d = in.u64("header.d");
  const auto K = in.u64("header.K");
  const auto flags = in.u64("header.flags");
  if (flags & ~(kFlagViews | kFlagLabels)) in.fail("header.flags", "unknown flag bits");
  if (K == 0 || K > (1u << 30)) in.fail("header.K", "K must be in [1, 2^30]");
  ds.K = static_cast<int>(K);

  ds.X = in.matrix(n, d, "X");
  if (flags & kFlagViews) {
    ViewPair v;
    v.first = in.matrix(n, d, "view1");
    v.second = in.matrix(n, d, "view2");
    ds.views = std::move(v);
  }
  if (flags & kFlagLabels) {
    Labels y(n);
    for (std::size_t i = 0; i < n; ++i) {
      const auto v = in.u32("labels");
      if (v >= K) in.fail("labels", "label " + std::to_string(v) + " >= K=" + std::to_string(K));
      y[i] = static_cast<int>(v);
    }
    ds.y_true = std::move(y);
  }
  const auto m = in.u64("labeled_idx.count");
  if (m > n) in.fail("labeled_idx.count", "count exceeds n");
  ds.labeled_idx.resize(m);
  for (auto &idx : ds.labeled_idx) idx = in.u64("labeled_idx");
  if (!in.at_end()) in.fail("trailer", "unexpected trailing bytes");
  try {
    ds.validate();
  } catch (const Error &e) {
    throw ParseError(path.string() + ": " + e.what());
  }
  return ds;
}

void save_binary(const EmbeddingDataset &ds, const std::filesystem::path &path) {
  ByteWriter out;
  out.magic(kDatasetMagic);
  out.u64(ds.n());
  out.u64(ds.d());
  out.u64(static_cast<std::uint64_t>(ds.K));
  out.u64((ds.views ? kFlagViews : 0) | (ds.y_true ? kFlagLabels : 0));
  out.matrix(ds.X);
  if (ds.views) {
    out.matrix(ds.views->first);
    out.matrix(ds.views->second);
  }
  if (ds.y_true) {
    for (int v : *ds.y_true) out.u32(static_cast<std::uint32_t>(v));
  }
  out.u64(ds.labeled_idx.size());
  for (auto idx : ds.labeled_idx) out.u64(idx);
  write_file(path, out.bytes());
}

std::vector<double> json_vector(const nlohmann::json &j, const std::string &where) {
  if (!j.is_array()) throw ParseError(where + ": expected an array of numbers");
  std::vector<double> v;
  v.reserve(j.size());
  for (const auto &x : j) {
    if (!x.is_number()) throw ParseError(where + ": non-numeric entry");
    v.push_back(x.get<double>());
  }
  return v;
}

// One record per line: {"id", "vector", optional "label", "labeled",
// "view1", "view2"}. An optional line {"K": k} fixes the cluster count.
EmbeddingDataset load_jsonl(const std::filesystem::path &path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open " + path.string());

  struct Record {
    std::vector<double> x, v1, v2;
    std::optional<int> label;
    bool labeled = false;
  };
  std::vector<std::optional<Record>> rows;
  std::optional<int> K;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const std::string where = path.string() + ":" + std::to_string(lineno);
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception &e) {
      throw ParseError(where + ": " + e.what());
    }
    if (!j.is_object()) throw ParseError(where + ": expected an object");
    if (!j.contains("vector")) {
      if (!j.contains("K") || !j["K"].is_number_integer()) throw ParseError(where + ": record without vector or K");
      K = j["K"].get<int>();
      continue;
    }
    if (!j.contains("id") || !j["id"].is_number_unsigned()) throw ParseError(where + ": missing non-negative id");
    const auto id = j["id"].get<std::size_t>();
    Record r;
    r.x = json_vector(j["vector"], where + " vector");
    if (j.contains("label") && !j["label"].is_null()) {
      if (!j["label"].is_number_integer() || j["label"].get<int>() < 0) throw ParseError(where + ": bad label");
      r.label = j["label"].get<int>();
    }
    r.labeled = j.value("labeled", false);
    if (j.contains("view1") != j.contains("view2")) throw ParseError(where + ": view1/view2 must come together");
    if (j.contains("view1")) {
      r.v1 = json_vector(j["view1"], where + " view1");
      r.v2 = json_vector(j["view2"], where + " view2");
    }
    if (id >= rows.size()) rows.resize(id + 1);
    if (rows[id]) throw ParseError(where + ": duplicate id " + std::to_string(id));
    rows[id] = std::move(r);
  }
  if (rows.empty()) throw ParseError(path.string() + ": no records");

  const std::size_t n = rows.size();
  for (std::size_t i = 0; i < n; ++i) {
    if (!rows[i]) throw ParseError(path.string() + ": ids are not contiguous, missing " + std::to_string(i));
  }
  const std::size_t d = rows[0]->x.size();
  const bool has_views = !rows[0]->v1.empty();
  const bool has_labels = rows[0]->label.has_value();

  EmbeddingDataset ds;
  ds.X = Matrix(n, d);
  if (has_views) ds.views = ViewPair{Matrix(n, d), Matrix(n, d)};
  if (has_labels) ds.y_true = Labels(n);
  int max_label = -1;
  for (std::size_t i = 0; i < n; ++i) {
    const auto &r = *rows[i];
    const std::string where = path.string() + " id " + std::to_string(i);
    if (r.x.size() != d) throw ParseError(where + ": vector length differs from first record");
    if (has_views != !r.v1.empty()) throw ParseError(where + ": views present on some records only");
    if (has_labels != r.label.has_value()) throw ParseError(where + ": labels present on some records only");
    std::copy(r.x.begin(), r.x.end(), ds.X.row(i).begin());
    if (has_views) {
      if (r.v1.size() != d || r.v2.size() != d) throw ParseError(where + ": view length mismatch");
      std::copy(r.v1.begin(), r.v1.end(), ds.views->first.row(i).begin());
      std::copy(r.v2.begin(), r.v2.end(), ds.views->second.row(i).begin());
    }
    if (has_labels) {
      (*ds.y_true)[i] = *r.label;
      max_label = std::max(max_label, *r.label);
    }
    if (r.labeled) ds.labeled_idx.push_back(i);
  }
  ds.K = K ? *K : max_label + 1;
  if (ds.K <= 0) throw ParseError(path.string() + ": cannot infer K (no labels and no K record)");
  try {
    ds.validate();
  } catch (const Error &e) {
    throw ParseError(path.string() + ": " + e.what());
  }
  return ds;
}

void save_jsonl(const EmbeddingDataset &ds, const std::filesystem::path &path) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  out << nlohmann::json{{"K", ds.K}}.dump() << '\n';
  std::vector<bool> labeled(ds.n(), false);
  for (auto i : ds.labeled_idx) labeled[i] = true;
  for (std::size_t i = 0; i < ds.n(); ++i) {
    nlohmann::json j;
    j["id"] = i;
    auto r = ds.X.row(i);
    j["vector"] = std::vector<double>(r.begin(), r.end());
    if (ds.y_true) j["label"] = (*ds.y_true)[i];
    if (labeled[i]) j["labeled"] = true;
    if (ds.views) {
      auto a = ds.views->first.row(i);
      auto b = ds.views->second.row(i);
      j["view1"] = std::vector<double>(a.begin(), a.end());
      j["view2"] = std::vector<double>(b.begin(), b.end());
    }
    out << j.dump() << '\n';
  }
  if (!out) throw Error("write failed: " + path.string());
}

} // namespace

std::vector<std::size_t> EmbeddingDataset::unlabeled_idx() const {
  std::vector<bool> is_labeled(n(), false);
  for (auto i : labeled_idx) is_labeled[i] = true;
  std::vector<std::size_t> out;
  out.reserve(n() - labeled_idx.size());
  for (std::size_t i = 0; i < n(); ++i) {
    if (!is_labeled[i]) out.push_back(i);
  }
  return out;
}

void EmbeddingDataset::validate() const {
  if (K < 1) throw ConfigError("dataset: K must be >= 1");
  if (views) {
    if (!views->first.same_shape(X) || !views->second.same_shape(X)) {
      throw ShapeError("dataset: views must have the same shape as X");
    }
  }
  if (y_true) {
    if (y_true->size() != n()) throw ShapeError("dataset: label count differs from row count");
    for (int v : *y_true) {
      if (v < 0 || v >= K) throw ConfigError("dataset: label " + std::to_string(v) + " outside [0, K)");
    }
  }
  std::set<std::size_t> seen;
  for (auto i : labeled_idx) {
    if (i >= n()) throw ConfigError("dataset: labeled index " + std::to_string(i) + " out of range");
    if (!seen.insert(i).second) throw ConfigError("dataset: duplicate labeled index " + std::to_string(i));
  }
  if (!labeled_idx.empty() && !y_true) throw ConfigError("dataset: labeled samples require y_true");
}

EmbeddingDataset load_dataset(const std::filesystem::path &path) {
  return is_jsonl(path) ? load_jsonl(path) : load_binary(path);
}

void save_dataset(const EmbeddingDataset &ds, const std::filesystem::path &path) {
  ds.validate();
  is_jsonl(path) ? save_jsonl(ds, path) : save_binary(ds, path);
}

std::vector<std::size_t> cluster_sizes(int K, std::size_t n, double ratio) {
  if (K < 1) throw ConfigError("cluster_sizes: K must be >= 1");
  if (n < static_cast<std::size_t>(K)) throw ConfigError("cluster_sizes: n must be >= K");
  if (!(ratio >= 1.0)) throw ConfigError("cluster_sizes: imbalance ratio must be >= 1");
  std::vector<double> w(K, 1.0);
  for (int k = 1; k < K; ++k) w[k] = std::pow(ratio, -static_cast<double>(k) / (K - 1));
  const double total = std::accumulate(w.begin(), w.end(), 0.0);

  std::vector<std::size_t> sizes(K);
  std::vector<std::pair<double, int>> rem;
  std::size_t assigned = 0;
  for (int k = 0; k < K; ++k) {
    const double exact = static_cast<double>(n) * w[k] / total;
    sizes[k] = std::max<std::size_t>(1, static_cast<std::size_t>(std::floor(exact)));
    assigned += sizes[k];
    rem.emplace_back(exact - std::floor(exact), k);
  }
  // Largest remainder; ties go to the lower cluster id.
  std::stable_sort(rem.begin(), rem.end(), [](auto a, auto b) { return a.first > b.first; });
  for (std::size_t r = 0; assigned < n; r = (r + 1) % rem.size(), ++assigned) ++sizes[rem[r].second];
  while (assigned > n) {
    auto it = std::max_element(sizes.begin(), sizes.end());
    --*it;
    --assigned;
  }
  return sizes;
}

std::vector<std::size_t> choose_labeled(const Labels &y, int K, Rng &rng) {
  std::vector<std::vector<std::size_t>> members(K);
  for (std::size_t i = 0; i < y.size(); ++i) members[y[i]].push_back(i);
  const bool percent = static_cast<double>(y.size()) / K > 100.0;
  std::vector<std::size_t> out;
  for (auto &m : members) {
    if (m.empty()) continue;
    std::shuffle(m.begin(), m.end(), rng);
    std::size_t take = 1;
    if (percent) take = std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(0.01 * m.size())));
    out.insert(out.end(), m.begin(), m.begin() + std::min(take, m.size()));
  }
  std::sort(out.begin(), out.end());
  return out;
}

EmbeddingDataset generate_synthetic(const SyntheticSpec &spec) {
  if (spec.K < 1) throw ConfigError("synthetic: K must be >= 1");
  if (spec.n < static_cast<std::size_t>(spec.K)) throw ConfigError("synthetic: n must be >= K");
  if (spec.d < 1) throw ConfigError("synthetic: d must be >= 1");
  if (spec.noise_sigma < 0 || spec.center_separation < 0) throw ConfigError("synthetic: negative scale");

  Rng rng(spec.seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  auto sizes = cluster_sizes(spec.K, spec.n, spec.imbalance_ratio);

  // Cluster means on well-spread random directions.
  Matrix dirs(spec.K, spec.d);
  for (int k = 0; k < spec.K; ++k) {
    bool placed = false;
    for (int attempt = 0; attempt < 1000 && !placed; ++attempt) {
      auto r = dirs.row(k);
      double s = 0.0;
      for (auto &v : r) {
        v = normal(rng);
        s += v * v;
      }
      s = std::sqrt(s);
      if (s == 0.0) continue;
      for (auto &v : r) v /= s;
      placed = true;
      for (int o = 0; o < k && placed; ++o) {
        double dot = 0.0;
        for (std::size_t p = 0; p < spec.d; ++p) dot += r[p] * dirs(o, p);
        if (dot >= 0.5) placed = false;
      }
    }
    if (!placed) {
      throw ConfigError("synthetic: could not place " + std::to_string(spec.K) + " well-separated centers in d=" +
                        std::to_string(spec.d) + " after 1000 tries");
    }
  }

  Labels y;
  y.reserve(spec.n);
  for (int k = 0; k < spec.K; ++k) y.insert(y.end(), sizes[k], k);
  std::shuffle(y.begin(), y.end(), rng);

  EmbeddingDataset ds;
  ds.K = spec.K;
  ds.X = Matrix(spec.n, spec.d);
  for (std::size_t i = 0; i < spec.n; ++i) {
    auto r = ds.X.row(i);
    for (std::size_t p = 0; p < spec.d; ++p) {
      const double noise = normal(rng);
      r[p] = spec.center_separation * dirs(y[i], p) + spec.noise_sigma * noise;
    }
  }
  ds.labeled_idx = choose_labeled(y, spec.K, rng);
  ds.y_true = std::move(y);
  return ds;
}

ViewPair make_views(const Matrix &X, double sigma_aug, std::uint64_t seed) {
  if (sigma_aug < 0) throw ConfigError("make_views: sigma_aug must be >= 0");
  ViewPair v{X, X};
  if (sigma_aug == 0.0) return v;
  Rng rng(seed);
  std::normal_distribution<double> normal(0.0, sigma_aug);
  for (auto &x : v.first.flat()) x += normal(rng);
  for (auto &x : v.second.flat()) x += normal(rng);
  return v;
}

double default_view_sigma(const Matrix &X) {
  if (X.rows() == 0) return 0.0;
  double total = 0.0;
  for (std::size_t i = 0; i < X.rows(); ++i) {
    double s = 0.0;
    for (double v : X.row(i)) s += v * v;
    total += std::sqrt(s);
  }
  return 0.05 * total / static_cast<double>(X.rows());
}

Batch sample_batch(const EmbeddingDataset &ds, std::size_t B, std::size_t mu_B, Rng &rng, double sigma_aug) {
  if (ds.labeled_idx.empty()) throw ConfigError("sample_batch: the labeled pool is empty");
  if (!ds.y_true) throw ConfigError("sample_batch: labels are required for the labeled pool");
  const auto pool_u = ds.unlabeled_idx();
  if (pool_u.empty()) throw ConfigError("sample_batch: the unlabeled pool is empty");

  Batch b;
  std::uniform_int_distribution<std::size_t> pick_l(0, ds.labeled_idx.size() - 1);
  std::uniform_int_distribution<std::size_t> pick_u(0, pool_u.size() - 1);
  b.l_idx.resize(B);
  for (auto &i : b.l_idx) i = ds.labeled_idx[pick_l(rng)];
  b.u_idx.resize(mu_B);
  for (auto &i : b.u_idx) i = pool_u[pick_u(rng)];

  b.xl = gather_rows(ds.X, b.l_idx);
  b.xu = gather_rows(ds.X, b.u_idx);
  b.yl.resize(B);
  for (std::size_t r = 0; r < B; ++r) b.yl[r] = (*ds.y_true)[b.l_idx[r]];

  if (ds.views) {
    b.xl1 = gather_rows(ds.views->first, b.l_idx);
    b.xl2 = gather_rows(ds.views->second, b.l_idx);
    b.xu1 = gather_rows(ds.views->first, b.u_idx);
    b.xu2 = gather_rows(ds.views->second, b.u_idx);
  } else {
    const auto seed_l = rng();
    const auto seed_u = rng();
    auto vl = make_views(b.xl, sigma_aug, seed_l);
    auto vu = make_views(b.xu, sigma_aug, seed_u);
    b.xl1 = std::move(vl.first);
    b.xl2 = std::move(vl.second);
    b.xu1 = std::move(vu.first);
    b.xu2 = std::move(vu.second);
  }
  return b;
}

} // namespace iocc
