#include "mplnbc/colgroup.hpp"

#include <algorithm>
#include <limits>
#include <numeric>

#include "mplnbc/error.hpp"
#include "mplnbc/textio.hpp"

namespace mpln::colgroup {

Linkage parse_linkage(std::string_view name) {
  if (name == "average") return Linkage::average;
  if (name == "complete") return Linkage::complete;
  if (name == "single") return Linkage::single;
  throw Error(ErrorCode::invalid_argument, "unknown linkage '" + std::string(name) + "'");
}

std::string_view to_string(Linkage linkage) noexcept {
  switch (linkage) {
    case Linkage::average: return "average";
    case Linkage::complete: return "complete";
    case Linkage::single: return "single";
  }
  return "average";
}

DistanceMatrix distance_matrix(const SymMatrix& w) {
  const SymMatrix r = linalg::corr_from_cov(w);
  DistanceMatrix dist = (1.0 - r.array().square()).max(0.0).matrix();
  dist.diagonal().setZero();
  return dist;
}

Dendrogram agglomerate(const DistanceMatrix& dist, Linkage linkage) {
  const auto d = static_cast<std::size_t>(dist.rows());
  if (d == 0 || dist.cols() != dist.rows()) throw Error(ErrorCode::invalid_argument, "distance matrix must be square and nonempty");
  Dendrogram out;
  out.leaves = d;
  out.merges.reserve(d - 1);

  // Slot-indexed working state; a slot dies when its cluster is merged away.
  Eigen::MatrixXd between = dist;
  std::vector<int> id(d);
  std::vector<int> smallest_member(d);
  std::vector<double> size(d, 1.0);
  std::vector<bool> alive(d, true);
  std::iota(id.begin(), id.end(), 0);
  std::iota(smallest_member.begin(), smallest_member.end(), 0);

  for (std::size_t step = 0; step + 1 < d; ++step) {
    std::size_t best_a = d;
    std::size_t best_b = d;
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t a = 0; a < d; ++a) {
      if (!alive[a]) continue;
      for (std::size_t b = a + 1; b < d; ++b) {
        if (!alive[b]) continue;
        const double v = between(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(b));
        bool take = v < best;
        if (!take && v == best && best_a < d) {
          auto key = [&](std::size_t x, std::size_t y) {
            return std::minmax(smallest_member[x], smallest_member[y]);
          };
          take = key(a, b) < key(best_a, best_b);
        }
        if (take) {
          best = v;
          best_a = a;
          best_b = b;
        }
      }
    }
    // Survivor slot is best_a; fold best_b into it.
    for (std::size_t c = 0; c < d; ++c) {
      if (!alive[c] || c == best_a || c == best_b) continue;
      const auto ia = static_cast<Eigen::Index>(best_a);
      const auto ib = static_cast<Eigen::Index>(best_b);
      const auto ic = static_cast<Eigen::Index>(c);
      double updated = 0.0;
      switch (linkage) {
        case Linkage::single: updated = std::min(between(ia, ic), between(ib, ic)); break;
        case Linkage::complete: updated = std::max(between(ia, ic), between(ib, ic)); break;
        case Linkage::average:
          updated = (size[best_a] * between(ia, ic) + size[best_b] * between(ib, ic)) / (size[best_a] + size[best_b]);
          break;
      }
      between(ia, ic) = updated;
      between(ic, ia) = updated;
    }
    out.merges.push_back({std::min(id[best_a], id[best_b]), std::max(id[best_a], id[best_b]), best});
    id[best_a] = static_cast<int>(d + step);
    size[best_a] += size[best_b];
    smallest_member[best_a] = std::min(smallest_member[best_a], smallest_member[best_b]);
    alive[best_b] = false;
  }
  return out;
}

ColumnPartition cut(const Dendrogram& dendro, std::size_t k) {
  const auto d = dendro.leaves;
  if (k < 1 || k > d) throw Error(ErrorCode::invalid_argument, "cut needs 1 <= k <= d");
  std::vector<int> parent(d);
  std::iota(parent.begin(), parent.end(), 0);
  auto find = [&](int x) {
    while (parent[static_cast<std::size_t>(x)] != x) {
      parent[static_cast<std::size_t>(x)] = parent[static_cast<std::size_t>(parent[static_cast<std::size_t>(x)])];
      x = parent[static_cast<std::size_t>(x)];
    }
    return x;
  };
  // Any leaf of a cluster stands in for it.
  std::vector<int> leaf_of(d + dendro.merges.size());
  std::iota(leaf_of.begin(), leaf_of.begin() + static_cast<std::ptrdiff_t>(d), 0);
  for (std::size_t t = 0; t < dendro.merges.size(); ++t) leaf_of[d + t] = leaf_of[static_cast<std::size_t>(dendro.merges[t].first)];
  for (std::size_t t = 0; t < d - k; ++t) {
    const auto& m = dendro.merges[t];
    const int ra = find(leaf_of[static_cast<std::size_t>(m.first)]);
    const int rb = find(leaf_of[static_cast<std::size_t>(m.second)]);
    parent[static_cast<std::size_t>(std::max(ra, rb))] = std::min(ra, rb);
  }
  std::vector<int> label_of_root(d, -1);
  std::vector<int> assign(d);
  int next = 0;
  for (std::size_t j = 0; j < d; ++j) {
    auto& label = label_of_root[static_cast<std::size_t>(find(static_cast<int>(j)))];
    if (label < 0) label = next++;
    assign[j] = label;
  }
  return ColumnPartition(std::move(assign));
}

SymMatrix block_project(const SymMatrix& w, const ColumnPartition& part) {
  if (static_cast<std::size_t>(w.rows()) != part.d()) throw Error(ErrorCode::dimension_mismatch, "partition does not match matrix");
  SymMatrix out = SymMatrix::Zero(w.rows(), w.cols());
  for (Eigen::Index a = 0; a < w.rows(); ++a) {
    for (Eigen::Index b = 0; b < w.cols(); ++b) {
      if (part[static_cast<std::size_t>(a)] == part[static_cast<std::size_t>(b)]) out(a, b) = w(a, b);
    }
  }
  return out;
}

double silhouette(const DistanceMatrix& dist, const ColumnPartition& part, SingletonRule rule) {
  const auto d = part.d();
  if (static_cast<std::size_t>(dist.rows()) != d) throw Error(ErrorCode::dimension_mismatch, "partition does not match distances");
  const auto k = part.K();
  if (k < 2) return 0.0;
  const auto sizes = part.block_sizes();
  double total = 0.0;
  // Running means stay exact when all distances to a group are equal.
  std::vector<double> mean_to(k);
  std::vector<std::size_t> seen(k);
  for (std::size_t x = 0; x < d; ++x) {
    std::fill(mean_to.begin(), mean_to.end(), 0.0);
    std::fill(seen.begin(), seen.end(), 0);
    for (std::size_t y = 0; y < d; ++y) {
      if (y == x) continue;
      const auto c = static_cast<std::size_t>(part[y]);
      ++seen[c];
      mean_to[c] += (dist(static_cast<Eigen::Index>(x), static_cast<Eigen::Index>(y)) - mean_to[c]) / static_cast<double>(seen[c]);
    }
    const auto own = static_cast<std::size_t>(part[x]);
    if (sizes[own] == 1 && rule == SingletonRule::zero_score) continue;
    const double a = mean_to[own];
    double b = std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < k; ++c) {
      if (c != own) b = std::min(b, mean_to[c]);
    }
    const double denom = std::max(a, b);
    if (denom > 0.0) total += (b - a) / denom;
  }
  return total / static_cast<double>(d);
}

KSelection select_k_silhouette(const DistanceMatrix& dist, const Dendrogram& dendro, std::size_t k_max, SingletonRule rule) {
  if (k_max < 2 || k_max > dendro.leaves) throw Error(ErrorCode::invalid_argument, "k_max must lie in 2..d");
  if (static_cast<std::size_t>(dist.rows()) != dendro.leaves) throw Error(ErrorCode::dimension_mismatch, "dendrogram does not match distances");
  KSelection out;
  out.scores[1] = 0.0;
  out.k = 1;
  out.partition = cut(dendro, 1);
  double best = 0.0;
  for (std::size_t k = 2; k <= k_max; ++k) {
    auto part = cut(dendro, k);
    const double score = silhouette(dist, part, rule);
    out.scores[k] = score;
    if (score > best) {
      best = score;
      out.k = k;
      out.partition = std::move(part);
    }
  }
  return out;
}

std::string dendrogram_csv(const Dendrogram& dendro) {
  std::string out = "step,first,second,height\n";
  for (std::size_t t = 0; t < dendro.merges.size(); ++t) {
    const auto& m = dendro.merges[t];
    out += std::to_string(t + 1) + "," + std::to_string(m.first) + "," + std::to_string(m.second) + "," +
           textio::format_double(m.height) + "\n";
  }
  return out;
}

}  // namespace mpln::colgroup
