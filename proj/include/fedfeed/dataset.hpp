#pragma once

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <tuple>
#include <vector>

#include "fedfeed/errors.hpp"
#include "fedfeed/rng.hpp"

namespace fedfeed {

struct Example {
  std::int64_t id = 0;
  std::vector<double> features;
  int gold_label = 0;

  bool operator==(const Example&) const = default;
};

struct Dataset {
  std::vector<Example> examples;
  int num_classes = 2;
  int dim = 1;

  std::size_t size() const noexcept { return examples.size(); }
  bool empty() const noexcept { return examples.empty(); }

  bool operator==(const Dataset&) const = default;
};

struct SplitSpec {
  double k = 0.01;
  double v = 0.2;
  bool stratified = true;
};

struct Splits {
  Dataset seed;        // D_s
  Dataset validation;  // D_v
  Dataset unlabeled;   // D_u
};

struct ClientPartition {
  int client_id = 0;
  Dataset data;
};

enum class PartitionMode { uniform_class, dirichlet };

struct PartitionSpec {
  PartitionMode mode = PartitionMode::uniform_class;
  double dirichlet_beta = 100.0;
};

/// Throws ShapeError when an example breaks the dataset invariants.
inline void validate(const Dataset& ds) {
  if (ds.num_classes < 1 || ds.dim < 1) throw ShapeError("dataset needs dim >= 1 and classes >= 1");
  std::set<std::int64_t> ids;
  for (const auto& ex : ds.examples) {
    if (static_cast<int>(ex.features.size()) != ds.dim)
      throw ShapeError("example " + std::to_string(ex.id) + " has wrong dimension");
    if (ex.gold_label < 0 || ex.gold_label >= ds.num_classes)
      throw ShapeError("example " + std::to_string(ex.id) + " label out of range");
    for (double f : ex.features)
      if (!std::isfinite(f)) throw ShapeError("example " + std::to_string(ex.id) + " has non-finite feature");
    if (!ids.insert(ex.id).second) throw ShapeError("duplicate id " + std::to_string(ex.id));
  }
}

inline std::vector<std::size_t> class_histogram(const Dataset& ds) {
  std::vector<std::size_t> h(static_cast<std::size_t>(ds.num_classes), 0);
  for (const auto& ex : ds.examples) ++h[static_cast<std::size_t>(ex.gold_label)];
  return h;
}

inline Dataset empty_like(const Dataset& ds) { return Dataset{{}, ds.num_classes, ds.dim}; }

/// Class centroids with pairwise distance >= class_sep. When C <= d they are
/// scaled simplex vertices (exactly class_sep apart); otherwise random
/// directions rescaled so the closest pair sits at class_sep.
inline std::vector<std::vector<double>> synthetic_centroids(int d, int C, double class_sep, Rng& rng) {
  std::vector<std::vector<double>> centroids(static_cast<std::size_t>(C), std::vector<double>(d, 0.0));
  if (C <= d) {
    const double scale = class_sep / std::sqrt(2.0);
    for (int c = 0; c < C; ++c) centroids[c][c] = scale;
    return centroids;
  }
  for (auto& mu : centroids)
    for (auto& x : mu) x = standard_normal(rng);
  double min_dist = INFINITY;
  for (int a = 0; a < C; ++a)
    for (int b = a + 1; b < C; ++b) {
      double s = 0.0;
      for (int j = 0; j < d; ++j) s += (centroids[a][j] - centroids[b][j]) * (centroids[a][j] - centroids[b][j]);
      min_dist = std::min(min_dist, std::sqrt(s));
    }
  const double scale = min_dist > 0.0 ? class_sep / min_dist : 0.0;
  for (auto& mu : centroids)
    for (auto& x : mu) x *= scale;
  return centroids;
}

/// Isotropic unit-variance Gaussian clusters. Example i gets label i mod C,
/// so any contiguous block of rows is balanced within one per class.
inline Dataset generate_synthetic(std::size_t n, int d, int C, double class_sep, std::uint64_t seed) {
  if (d < 1) throw ConfigError("generate_synthetic: dim must be >= 1");
  if (C < 2) throw ConfigError("generate_synthetic: classes must be >= 2");
  if (!(class_sep >= 0.0) || !std::isfinite(class_sep)) throw ConfigError("generate_synthetic: class_sep must be >= 0");
  Rng rng = make_rng(seed, Stream::data, 0);
  const auto centroids = synthetic_centroids(d, C, class_sep, rng);
  Rng sample_rng = make_rng(seed, Stream::data, 1);
  Dataset ds{{}, C, d};
  ds.examples.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    Example ex;
    ex.id = static_cast<std::int64_t>(i);
    ex.gold_label = static_cast<int>(i % static_cast<std::size_t>(C));
    ex.features.resize(static_cast<std::size_t>(d));
    for (int j = 0; j < d; ++j) ex.features[j] = centroids[ex.gold_label][j] + standard_normal(sample_rng);
    ds.examples.push_back(std::move(ex));
  }
  return ds;
}

namespace detail {

/// Largest-remainder apportionment of `total` over buckets with real quotas.
inline std::vector<std::size_t> apportion(const std::vector<double>& quotas, std::size_t total,
                                          const std::vector<std::size_t>& caps) {
  std::vector<std::size_t> out(quotas.size(), 0);
  std::size_t assigned = 0;
  std::vector<std::pair<double, std::size_t>> remainders;
  for (std::size_t i = 0; i < quotas.size(); ++i) {
    out[i] = std::min(caps[i], static_cast<std::size_t>(std::floor(quotas[i])));
    assigned += out[i];
    remainders.emplace_back(quotas[i] - std::floor(quotas[i]), i);
  }
  std::stable_sort(remainders.begin(), remainders.end(),
                   [](const auto& a, const auto& b) { return a.first > b.first; });
  // Remainder passes; cycle until total is met or every bucket is at its cap.
  while (assigned < total) {
    bool progressed = false;
    for (const auto& [rem, i] : remainders) {
      if (assigned >= total) break;
      if (out[i] < caps[i]) {
        ++out[i];
        ++assigned;
        progressed = true;
      }
    }
    if (!progressed) break;
  }
  return out;
}

inline void sort_by_original_order(std::vector<Example>& exs, const std::map<std::int64_t, std::size_t>& pos) {
  std::sort(exs.begin(), exs.end(), [&](const Example& a, const Example& b) { return pos.at(a.id) < pos.at(b.id); });
}

}  // namespace detail

/// Three disjoint splits covering the input. |D_s| = round(k n) is fixed
/// first, then |D_v| = round(v n); D_u takes the remainder. Splits keep the
/// input's row order.
inline Splits split(const Dataset& ds, const SplitSpec& spec, std::uint64_t seed) {
  if (ds.empty()) throw SplitError("split: dataset is empty");
  if (!(spec.k > 0.0 && spec.k < 1.0) || !(spec.v > 0.0 && spec.v < 1.0) || spec.k + spec.v >= 1.0)
    throw ConfigError("split: need k, v in (0,1) with k + v < 1");
  const std::size_t n = ds.size();
  const auto n_seed = static_cast<std::size_t>(std::llround(spec.k * static_cast<double>(n)));
  const auto n_val =
      std::min(n - n_seed, static_cast<std::size_t>(std::llround(spec.v * static_cast<double>(n))));
  Rng rng = make_rng(seed, Stream::split);

  std::map<std::int64_t, std::size_t> pos;
  for (std::size_t i = 0; i < n; ++i) pos[ds.examples[i].id] = i;

  Splits out{empty_like(ds), empty_like(ds), empty_like(ds)};
  if (!spec.stratified) {
    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    shuffle(order, rng);
    for (std::size_t r = 0; r < n; ++r) {
      const auto& ex = ds.examples[order[r]];
      if (r < n_seed)
        out.seed.examples.push_back(ex);
      else if (r < n_seed + n_val)
        out.validation.examples.push_back(ex);
      else
        out.unlabeled.examples.push_back(ex);
    }
  } else {
    if (spec.k * static_cast<double>(n) < static_cast<double>(ds.num_classes))
      throw SplitError("split: k*|D_t| < C, cannot place one seed example per class");
    std::vector<std::vector<std::size_t>> by_class(static_cast<std::size_t>(ds.num_classes));
    for (std::size_t i = 0; i < n; ++i) by_class[ds.examples[i].gold_label].push_back(i);
    for (auto& members : by_class) shuffle(members, rng);

    const double frac_n = static_cast<double>(n);
    std::vector<double> quota_s, quota_v;
    std::vector<std::size_t> caps;
    for (const auto& members : by_class) {
      quota_s.push_back(static_cast<double>(n_seed) * static_cast<double>(members.size()) / frac_n);
      caps.push_back(members.size());
    }
    const auto take_s = detail::apportion(quota_s, n_seed, caps);
    for (std::size_t c = 0; c < by_class.size(); ++c) {
      quota_v.push_back(static_cast<double>(n_val) * static_cast<double>(by_class[c].size()) / frac_n);
      caps[c] = by_class[c].size() - take_s[c];
    }
    const auto take_v = detail::apportion(quota_v, n_val, caps);
    for (std::size_t c = 0; c < by_class.size(); ++c) {
      const auto& members = by_class[c];
      for (std::size_t r = 0; r < members.size(); ++r) {
        const auto& ex = ds.examples[members[r]];
        if (r < take_s[c])
          out.seed.examples.push_back(ex);
        else if (r < take_s[c] + take_v[c])
          out.validation.examples.push_back(ex);
        else
          out.unlabeled.examples.push_back(ex);
      }
    }
  }
  detail::sort_by_original_order(out.seed.examples, pos);
  detail::sort_by_original_order(out.validation.examples, pos);
  detail::sort_by_original_order(out.unlabeled.examples, pos);
  return out;
}

/// N disjoint partitions covering D_u.
///
/// uniform_class deals each class's (shuffled) examples round-robin with a
/// dealer position carried across classes, so per-class counts differ by at
/// most one between clients and so do the totals. dirichlet splits every
/// class over clients with proportions drawn from Dir(beta, ..., beta).
inline std::vector<ClientPartition> partition_clients(const Dataset& unlabeled, int num_clients,
                                                      const PartitionSpec& spec, std::uint64_t seed) {
  if (num_clients < 1) throw PartitionError("partition_clients: need N >= 1");
  if (static_cast<std::size_t>(num_clients) > unlabeled.size())
    throw PartitionError("partition_clients: N=" + std::to_string(num_clients) + " exceeds |D_u|=" +
                         std::to_string(unlabeled.size()));
  if (spec.mode == PartitionMode::dirichlet && !(spec.dirichlet_beta > 0.0))
    throw ConfigError("partition_clients: dirichlet beta must be > 0");

  Rng rng = make_rng(seed, Stream::partition);
  const auto N = static_cast<std::size_t>(num_clients);
  std::vector<ClientPartition> parts(N);
  for (std::size_t c = 0; c < N; ++c) parts[c] = ClientPartition{static_cast<int>(c), empty_like(unlabeled)};

  std::vector<std::vector<std::size_t>> by_class(static_cast<std::size_t>(unlabeled.num_classes));
  for (std::size_t i = 0; i < unlabeled.size(); ++i) by_class[unlabeled.examples[i].gold_label].push_back(i);
  for (auto& members : by_class) shuffle(members, rng);

  std::vector<std::vector<std::size_t>> assigned(N);
  if (spec.mode == PartitionMode::uniform_class) {
    std::size_t dealer = 0;
    for (const auto& members : by_class)
      for (std::size_t idx : members) assigned[dealer++ % N].push_back(idx);
  } else {
    for (const auto& members : by_class) {
      std::vector<double> props(N);
      double total = 0.0;
      for (auto& p : props) total += (p = gamma_sample(rng, spec.dirichlet_beta));
      std::vector<double> quotas(N);
      for (std::size_t c = 0; c < N; ++c) quotas[c] = props[c] / total * static_cast<double>(members.size());
      const auto counts = detail::apportion(quotas, members.size(), std::vector<std::size_t>(N, members.size()));
      std::size_t r = 0;
      for (std::size_t c = 0; c < N; ++c)
        for (std::size_t j = 0; j < counts[c]; ++j) assigned[c].push_back(members[r++]);
    }
  }
  for (std::size_t c = 0; c < N; ++c) {
    auto& idx = assigned[c];
    std::sort(idx.begin(), idx.end());
    for (std::size_t i : idx) parts[c].data.examples.push_back(unlabeled.examples[i]);
  }
  return parts;
}

namespace detail {

inline std::vector<std::string_view> split_fields(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  for (;;) {
    const auto comma = line.find(',', start);
    out.push_back(line.substr(start, comma == std::string_view::npos ? std::string_view::npos : comma - start));
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return out;
}

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

template <typename T>
bool parse_number(std::string_view s, T& out) {
  s = trim(s);
  if (s.empty()) return false;
  if (s.front() == '+') s.remove_prefix(1);
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
  return ec == std::errc{} && ptr == s.data() + s.size();
}

inline std::string format_double(double x) {
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof buf, x);
  return std::string(buf, res.ptr);
}

}  // namespace detail

/// Reads `id,f0,...,f{d-1},label`. With num_classes unset, C is inferred as
/// max(label) + 1 (at least 2).
inline Dataset load_csv(const std::string& path, std::optional<int> num_classes = std::nullopt) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open " + path, 0);
  std::string line;
  if (!std::getline(in, line)) throw ParseError("missing header", 1);
  const auto header = detail::split_fields(line);
  if (header.size() < 3 || detail::trim(header.front()) != "id" || detail::trim(header.back()) != "label")
    throw ParseError("header must be id,f0,...,f{d-1},label", 1);
  const int d = static_cast<int>(header.size()) - 2;
  for (int j = 0; j < d; ++j)
    if (detail::trim(header[j + 1]) != "f" + std::to_string(j))
      throw ParseError("header column " + std::to_string(j + 1) + " must be f" + std::to_string(j), 1);

  Dataset ds{{}, num_classes.value_or(2), d};
  std::set<std::int64_t> ids;
  int max_label = -1;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (detail::trim(line).empty()) continue;
    const auto fields = detail::split_fields(line);
    if (static_cast<int>(fields.size()) != d + 2)
      throw ParseError("expected " + std::to_string(d + 2) + " fields, got " + std::to_string(fields.size()), lineno);
    Example ex;
    if (!detail::parse_number(fields[0], ex.id)) throw ParseError("bad id", lineno);
    if (!ids.insert(ex.id).second) throw ParseError("duplicate id " + std::to_string(ex.id), lineno);
    ex.features.resize(static_cast<std::size_t>(d));
    for (int j = 0; j < d; ++j) {
      if (!detail::parse_number(fields[j + 1], ex.features[j]) || !std::isfinite(ex.features[j]))
        throw ParseError("bad feature f" + std::to_string(j), lineno);
    }
    if (!detail::parse_number(fields.back(), ex.gold_label) || ex.gold_label < 0)
      throw ParseError("bad label", lineno);
    if (num_classes && ex.gold_label >= *num_classes)
      throw ParseError("label " + std::to_string(ex.gold_label) + " out of range for C=" + std::to_string(*num_classes),
                       lineno);
    max_label = std::max(max_label, ex.gold_label);
    ds.examples.push_back(std::move(ex));
  }
  if (!num_classes) ds.num_classes = std::max(2, max_label + 1);
  return ds;
}

inline void write_csv(const Dataset& ds, const std::string& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw ConfigError("cannot write " + path);
  out << "id";
  for (int j = 0; j < ds.dim; ++j) out << ",f" << j;
  out << ",label\n";
  for (const auto& ex : ds.examples) {
    out << ex.id;
    for (double f : ex.features) out << ',' << detail::format_double(f);
    out << ',' << ex.gold_label << '\n';
  }
}

}  // namespace fedfeed
