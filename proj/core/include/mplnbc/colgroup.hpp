#pragma once

#include <cstddef>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Core>

#include "mplnbc/model.hpp"

namespace mpln::colgroup {

enum class Linkage { average, complete, single };

Linkage parse_linkage(std::string_view name);
std::string_view to_string(Linkage linkage) noexcept;

/// Symmetric, zero diagonal, entries in [0, 1].
using DistanceMatrix = Eigen::MatrixXd;

/// One agglomeration step. Leaves are ids 0..d-1; the cluster created by
/// merge t gets id d + t. `first` is always the smaller id.
struct Merge {
  int first = 0;
  int second = 0;
  double height = 0.0;
};

struct Dendrogram {
  std::size_t leaves = 0;
  std::vector<Merge> merges;  // leaves - 1 entries
};

/// 1 - corr(x_a, x_b)^2 from a covariance-like matrix.
DistanceMatrix distance_matrix(const SymMatrix& w);

/// Classical agglomerative clustering with Lance-Williams updates. Among equal
/// distances the pair whose smallest member variables are lexicographically
/// smallest merges first.
Dendrogram agglomerate(const DistanceMatrix& dist, Linkage linkage);

/// Partition into exactly k groups by undoing the last k - 1 merges; labels in
/// order of first occurrence.
ColumnPartition cut(const Dendrogram& dendro, std::size_t k);

/// Keeps within-group entries of w and writes exact zeros elsewhere.
SymMatrix block_project(const SymMatrix& w, const ColumnPartition& part);

/// How a variable that forms a group on its own is scored.
enum class SingletonRule {
  zero_cohesion,  // a(X) = 0, so the point scores 1 whenever b(X) > 0
  zero_score,     // s(X) = 0 (Rousseeuw)
};

/// Mean over all variables of (b - a) / max(a, b). A partition with a single
/// group scores 0.
double silhouette(const DistanceMatrix& dist, const ColumnPartition& part,
                  SingletonRule rule = SingletonRule::zero_score);

struct KSelection {
  std::size_t k = 1;
  std::map<std::size_t, double> scores;  // k -> average silhouette, k = 1 scored 0
  ColumnPartition partition;
};

/// Scores the cuts k = 2..k_max and returns the best; ties go to the smaller k.
KSelection select_k_silhouette(const DistanceMatrix& dist, const Dendrogram& dendro, std::size_t k_max,
                               SingletonRule rule = SingletonRule::zero_score);

/// "step,first,second,height" rows for external plotting (1-based step).
std::string dendrogram_csv(const Dendrogram& dendro);

}  // namespace mpln::colgroup
