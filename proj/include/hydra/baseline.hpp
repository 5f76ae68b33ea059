// SPDX-License-Identifier: Apache-2.0
//
// Data-free baseline merges: task arithmetic (uniform mean), TIES
// (trim / elect sign / disjoint mean), DARE (drop and rescale, then mean)
// and DARE followed by TIES.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "hydra/adapter.hpp"
#include "hydra/errors.hpp"
#include "hydra/numeric.hpp"
#include "hydra/parallel.hpp"

namespace hydra {

enum class BaselineMethod { TA, TIES, DARE, DARE_TIES };
enum class MergeTarget { PER_MATRIX, A_ONLY };

inline std::string to_string(BaselineMethod m) {
  switch (m) {
    case BaselineMethod::TA: return "ta";
    case BaselineMethod::TIES: return "ties";
    case BaselineMethod::DARE: return "dare";
    case BaselineMethod::DARE_TIES: return "dare-ties";
  }
  return "?";
}

struct BaselineConfig {
  BaselineMethod method = BaselineMethod::TA;
  double ties_density = 0.2;
  double dare_drop_p = 0.9;
  std::uint64_t seed = 0;
  MergeTarget target = MergeTarget::PER_MATRIX;
  /// Global multiplier on every merged tensor.
  double scale = 1.0;

  void validate() const {
    if (!(ties_density > 0.0 && ties_density <= 1.0))
      throw ParameterError("ties density must lie in (0, 1]");
    if (!(dare_drop_p >= 0.0 && dare_drop_p < 1.0))
      throw ParameterError("DARE drop probability must lie in [0, 1)");
    if (!std::isfinite(scale)) throw ParameterError("merge scale must be finite");
  }
};

namespace detail {

inline void require_mergeable(std::span<const Matrix> tensors, const char* op) {
  if (tensors.empty()) throw ParameterError(std::string(op) + ": at least one tensor required");
  for (const auto& t : tensors) Matrix::require_same_shape(tensors.front(), t, op);
}

/// Mean of `values` that is independent of their order and exact when all
/// values are equal: sort, then accumulate a running mean.
inline double order_free_mean(std::vector<double>& values) {
  std::sort(values.begin(), values.end());
  double mean = 0.0;
  for (std::size_t i = 0; i < values.size(); ++i)
    mean += (values[i] - mean) / static_cast<double>(i + 1);
  return mean;
}

}  // namespace detail

inline Matrix merge_ta(std::span<const Matrix> tensors) {
  detail::require_mergeable(tensors, "merge_ta");
  Matrix out(tensors.front().rows(), tensors.front().cols());
  std::vector<double> column(tensors.size());
  for (std::size_t e = 0; e < out.size(); ++e) {
    for (std::size_t i = 0; i < tensors.size(); ++i) column[i] = tensors[i][e];
    out[e] = detail::order_free_mean(column);
  }
  return out;
}

/// Number of entries TIES keeps: ceil(density * n), with a relative guard so
/// that e.g. density = 2/3 on n = 3 keeps exactly 2.
inline std::size_t ties_keep_count(double density, std::size_t n) {
  const double raw = density * static_cast<double>(n);
  const auto keep = static_cast<std::size_t>(std::ceil(raw - 1e-9 * std::max(1.0, raw)));
  return std::clamp<std::size_t>(keep, 0, n);
}

inline Matrix ties_trim(const Matrix& t, double density) {
  if (!(density > 0.0 && density <= 1.0)) throw ParameterError("ties_trim: density must lie in (0, 1]");
  const std::size_t keep = ties_keep_count(density, t.size());
  if (keep == t.size()) return t;
  std::vector<std::size_t> order(t.size());
  std::iota(order.begin(), order.end(), 0);
  // Larger magnitude first; at equal magnitude the lower flat index wins.
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return std::abs(t[a]) > std::abs(t[b]); });
  Matrix out(t.rows(), t.cols());
  for (std::size_t i = 0; i < keep; ++i) out[order[i]] = t[order[i]];
  return out;
}

inline Matrix ties_merge(std::span<const Matrix> tensors, double density) {
  detail::require_mergeable(tensors, "ties_merge");
  std::vector<Matrix> trimmed;
  trimmed.reserve(tensors.size());
  for (const auto& t : tensors) trimmed.push_back(ties_trim(t, density));

  Matrix out(tensors.front().rows(), tensors.front().cols());
  std::vector<double> aligned;
  for (std::size_t e = 0; e < out.size(); ++e) {
    double mass = 0.0;
    for (const auto& t : trimmed) mass += t[e];
    const double elected = detail::sign(mass);
    if (elected == 0.0) continue;
    aligned.clear();
    for (const auto& t : trimmed)
      if (detail::sign(t[e]) == elected) aligned.push_back(t[e]);
    if (!aligned.empty()) out[e] = detail::order_free_mean(aligned);
  }
  return out;
}

/// Drops each entry with probability p (one uniform draw per entry, flat
/// index order) and rescales survivors by 1 / (1 - p).
inline Matrix dare_transform(const Matrix& t, double p, Rng& rng) {
  if (!(p >= 0.0 && p < 1.0)) throw ParameterError("dare_transform: p must lie in [0, 1)");
  const double rescale = 1.0 / (1.0 - p);
  Matrix out(t.rows(), t.cols());
  for (std::size_t e = 0; e < t.size(); ++e) out[e] = rng.uniform() < p ? 0.0 : t[e] * rescale;
  return out;
}

namespace detail {

inline std::vector<Matrix> dare_all(std::span<const Matrix> tensors, double p, Rng& rng) {
  std::vector<Matrix> out;
  out.reserve(tensors.size());
  for (const auto& t : tensors) out.push_back(dare_transform(t, p, rng));
  return out;
}

}  // namespace detail

inline Matrix merge_dare(std::span<const Matrix> tensors, double p, Rng& rng) {
  detail::require_mergeable(tensors, "merge_dare");
  return merge_ta(detail::dare_all(tensors, p, rng));
}

inline Matrix merge_dare_ties(std::span<const Matrix> tensors, double p, double density, Rng& rng) {
  detail::require_mergeable(tensors, "merge_dare_ties");
  return ties_merge(detail::dare_all(tensors, p, rng), density);
}

/// Merges K tensors with the configured method; `rng` is only consumed by
/// the DARE variants.
inline Matrix merge_tensors(std::span<const Matrix> tensors, const BaselineConfig& cfg, Rng& rng) {
  Matrix out;
  switch (cfg.method) {
    case BaselineMethod::TA: out = merge_ta(tensors); break;
    case BaselineMethod::TIES: out = ties_merge(tensors, cfg.ties_density); break;
    case BaselineMethod::DARE: out = merge_dare(tensors, cfg.dare_drop_p, rng); break;
    case BaselineMethod::DARE_TIES:
      out = merge_dare_ties(tensors, cfg.dare_drop_p, cfg.ties_density, rng);
      break;
  }
  if (cfg.scale != 1.0) out *= cfg.scale;
  return out;
}

/// Per-slot stream: seed ^ stable_hash("<layer>.<slot>").
inline Rng slot_rng(std::uint64_t seed, const SlotKey& key) { return Rng(seed ^ stable_hash(key.str())); }

inline std::string baseline_method_name(const BaselineConfig& cfg) {
  return to_string(cfg.method) + (cfg.target == MergeTarget::A_ONLY ? "+a-only" : "");
}

/// Merges every slot of a collection. PER_MATRIX merges the A and the B
/// matrices independently into one adapter per slot; A_ONLY merges only the
/// A matrices and keeps each task's own B. For VeRA, lambda_d plays the role
/// of A and lambda_b the role of B.
inline MergedBundle merge_collection(const AdapterCollection& c, const BaselineConfig& cfg,
                                     std::size_t jobs = 1) {
  cfg.validate();
  c.validate();
  const bool vera = c.kind() == AdapterKind::VeRA;
  const std::size_t K = c.task_count();
  const auto& slots = c.slots();

  std::vector<BundleSlot> merged(slots.size());
  parallel_for(slots.size(), jobs, [&](std::size_t s) {
    const SlotKey& key = slots[s];
    Rng rng = slot_rng(cfg.seed, key);
    std::vector<Matrix> as, bs;
    VeraAdapter first;
    for (std::size_t t = 0; t < K; ++t) {
      if (vera) {
        const auto& v = c.vera(t, key);
        if (t == 0) first = v;
        as.push_back(v.lambda_d);
        bs.push_back(v.lambda_b);
      } else {
        const auto& l = c.lora(t, key);
        as.push_back(l.A);
        bs.push_back(l.B);
      }
    }
    Matrix a = merge_tensors(as, cfg, rng);
    std::vector<Matrix> b_out;
    std::vector<std::size_t> assignment(K, 0);
    if (cfg.target == MergeTarget::PER_MATRIX) {
      b_out.push_back(merge_tensors(bs, cfg, rng));
    } else {
      b_out = std::move(bs);
      std::iota(assignment.begin(), assignment.end(), 0);
    }
    if (vera) {
      merged[s] = VeraBundleSlot{first.shared_B, first.shared_A, std::move(a), std::move(b_out),
                                 std::move(assignment)};
    } else {
      merged[s] = LoraBundleSlot{std::move(a), std::move(b_out), std::move(assignment)};
    }
  });

  MergedBundle out;
  out.method = baseline_method_name(cfg);
  out.tasks = c.tasks();
  for (std::size_t s = 0; s < slots.size(); ++s) out.slots.emplace(slots[s], std::move(merged[s]));
  return out;
}

}  // namespace hydra
