// SPDX-License-Identifier: Apache-2.0
//
// Reports: pairwise adapter similarity, storage accounting and
// reconstruction error of merged bundles against the original updates.
// Each report serializes to JSON under a fixed top-level key.
#pragma once

#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "hydra/adapter.hpp"
#include "hydra/errors.hpp"
#include "hydra/numeric.hpp"

namespace hydra {

using nlohmann::json;

// ---------------------------------------------------------------------------
// Similarity
// ---------------------------------------------------------------------------

struct SlotSimilarity {
  SlotKey key;
  Matrix a;  // K x K pairwise MAE between A matrices
  Matrix b;  // same for B
  double mean_a = 0.0;  // mean over off-diagonal pairs
  double mean_b = 0.0;
};

struct SimilarityReport {
  std::vector<SlotSimilarity> slots;
  double grand_mean_a = 0.0;
  double grand_mean_b = 0.0;
};

namespace detail {

inline Matrix pairwise_mae(const std::vector<Matrix>& xs) {
  const std::size_t K = xs.size();
  Matrix out(K, K);
  for (std::size_t i = 0; i < K; ++i)
    for (std::size_t j = i + 1; j < K; ++j) out(i, j) = out(j, i) = distance(xs[i], xs[j], DistanceKind::MAE);
  return out;
}

inline double off_diagonal_mean(const Matrix& m) {
  const std::size_t K = m.rows();
  if (K < 2) return 0.0;
  double acc = 0.0;
  for (std::size_t i = 0; i < K; ++i)
    for (std::size_t j = 0; j < K; ++j)
      if (i != j) acc += m(i, j);
  return acc / static_cast<double>(K * (K - 1));
}

inline json matrix_json(const Matrix& m) {
  json rows = json::array();
  for (std::size_t r = 0; r < m.rows(); ++r) {
    json row = json::array();
    for (std::size_t c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
    rows.push_back(std::move(row));
  }
  return rows;
}

}  // namespace detail

/// Entry (i, j) is MAE(X_i, X_j) for X in {A, B}. VeRA collections compare
/// lambda_d (as A) and lambda_b (as B).
inline SimilarityReport pairwise_similarity(const AdapterCollection& c) {
  c.validate();
  const bool vera = c.kind() == AdapterKind::VeRA;
  SimilarityReport rep;
  for (const auto& key : c.slots()) {
    std::vector<Matrix> as, bs;
    for (std::size_t t = 0; t < c.task_count(); ++t) {
      if (vera) {
        as.push_back(c.vera(t, key).lambda_d);
        bs.push_back(c.vera(t, key).lambda_b);
      } else {
        as.push_back(c.lora(t, key).A);
        bs.push_back(c.lora(t, key).B);
      }
    }
    SlotSimilarity s{key, detail::pairwise_mae(as), detail::pairwise_mae(bs)};
    s.mean_a = detail::off_diagonal_mean(s.a);
    s.mean_b = detail::off_diagonal_mean(s.b);
    rep.grand_mean_a += s.mean_a;
    rep.grand_mean_b += s.mean_b;
    rep.slots.push_back(std::move(s));
  }
  rep.grand_mean_a /= static_cast<double>(rep.slots.size());
  rep.grand_mean_b /= static_cast<double>(rep.slots.size());
  return rep;
}

inline json to_json(const SimilarityReport& r) {
  json a = json::object(), b = json::object(), ma = json::object(), mb = json::object();
  for (const auto& s : r.slots) {
    a[s.key.str()] = detail::matrix_json(s.a);
    b[s.key.str()] = detail::matrix_json(s.b);
    ma[s.key.str()] = s.mean_a;
    mb[s.key.str()] = s.mean_b;
  }
  return {{"similarity",
           {{"A", a}, {"B", b}, {"mean_A", ma}, {"mean_B", mb}, {"grand_mean_A", r.grand_mean_a},
            {"grand_mean_B", r.grand_mean_b}}}};
}

// ---------------------------------------------------------------------------
// Storage
// ---------------------------------------------------------------------------

/// 100 * (M r d + r k) / (K r (d + k)): merged vs individually stored LoRAs.
inline double storage_ratio(std::size_t K, std::size_t M, std::size_t r, std::size_t d, std::size_t k) {
  if (K == 0 || M == 0 || r == 0 || d == 0 || k == 0) throw ParameterError("storage_ratio: arguments must be positive");
  const double merged = static_cast<double>(M * r * d + r * k);
  const double original = static_cast<double>(K * r * (d + k));
  return 100.0 * merged / original;
}

struct StorageReport {
  std::size_t original_params = 0;
  std::size_t merged_params = 0;
  double ratio_percent = 0.0;
};

inline StorageReport storage_report(const AdapterCollection& original, const MergedBundle& merged) {
  StorageReport r;
  r.original_params = original_param_count(original);
  r.merged_params = merged.storage_params();
  r.ratio_percent = 100.0 * static_cast<double>(r.merged_params) / static_cast<double>(r.original_params);
  return r;
}

inline json to_json(const StorageReport& r) {
  return {{"storage",
           {{"original_params", r.original_params}, {"merged_params", r.merged_params},
            {"ratio_percent", r.ratio_percent}}}};
}

// ---------------------------------------------------------------------------
// Reconstruction
// ---------------------------------------------------------------------------

struct ReconEntry {
  std::string task;
  SlotKey key;
  double mae = 0.0;
  double fro = 0.0;
};

struct ReconReport {
  std::vector<ReconEntry> entries;  // task-major, slots in sorted order
  std::map<std::string, std::pair<double, double>> per_task;  // task -> (mean MAE, mean FRO)
  double grand_mean_mae = 0.0;
  double grand_mean_fro = 0.0;
};

/// Compares each task's original update with the update the bundle serves
/// for it: the single merged adapter for baselines, B'_{assignment(i)} A'
/// for HydraOpt bundles.
inline ReconReport reconstruction_report(const AdapterCollection& original, const MergedBundle& merged) {
  original.validate();
  merged.validate();
  if (merged.tasks != original.tasks()) throw ValidationError("bundle tasks do not match the collection");
  for (const auto& key : original.slots())
    if (!merged.slots.count(key)) throw ValidationError("bundle is missing slot " + key.str());
  if (merged.slots.size() != original.slots().size())
    throw ValidationError("bundle has slots the collection does not");

  ReconReport rep;
  const std::size_t K = original.task_count();
  for (std::size_t t = 0; t < K; ++t) {
    double task_mae = 0.0, task_fro = 0.0;
    for (const auto& key : original.slots()) {
      const Matrix target = delta_weight(original.at(t, key));
      const Matrix pred = merged.prediction(t, key);
      if (!pred.same_shape(target))
        throw ValidationError("bundle slot " + key.str() + " has the wrong shape " + pred.shape());
      ReconEntry e{original.tasks()[t], key, distance(target, pred, DistanceKind::MAE),
                   distance(target, pred, DistanceKind::FRO)};
      task_mae += e.mae;
      task_fro += e.fro;
      rep.entries.push_back(std::move(e));
    }
    const double n = static_cast<double>(original.slots().size());
    rep.per_task[original.tasks()[t]] = {task_mae / n, task_fro / n};
  }
  for (const auto& e : rep.entries) {
    rep.grand_mean_mae += e.mae;
    rep.grand_mean_fro += e.fro;
  }
  rep.grand_mean_mae /= static_cast<double>(rep.entries.size());
  rep.grand_mean_fro /= static_cast<double>(rep.entries.size());
  return rep;
}

inline json to_json(const ReconReport& r) {
  json entries = json::array();
  for (const auto& e : r.entries)
    entries.push_back({{"task", e.task}, {"slot", e.key.str()}, {"mae", e.mae}, {"fro", e.fro}});
  json per_task = json::object();
  for (const auto& [task, v] : r.per_task) per_task[task] = {{"mae", v.first}, {"fro", v.second}};
  return {{"recon",
           {{"entries", entries}, {"per_task", per_task}, {"grand_mean_mae", r.grand_mean_mae},
            {"grand_mean_fro", r.grand_mean_fro}}}};
}

}  // namespace hydra
