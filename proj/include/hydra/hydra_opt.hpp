// SPDX-License-Identifier: Apache-2.0
//
// HydraOpt merging: approximate K task updates delta_W_i = B_i A_i with one
// shared A' and M cluster matrices B'_j,
//
//   loss = sum_i f(B_i A_i, sum_j w_ij B'_j A'),   w_i = softmax(C_i / T),
//
// trained by full-batch AdamW. When M == K the routing logits are dropped
// and task i is matched to B'_i directly. After training every task keeps the
// argmax cluster of its logit row and C is discarded.
//
// The VeRA variant learns a shared lambda_d' and per-cluster lambda_b'_j
// against frozen B, A with the same routing.
//
// Only adapter tensors enter these functions; no task data is involved.
#pragma once

#include <chrono>
#include <cstdint>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "hydra/adapter.hpp"
#include "hydra/baseline.hpp"
#include "hydra/errors.hpp"
#include "hydra/numeric.hpp"

namespace hydra {

enum class InitScheme { MEAN_A_COPY_B, RANDOM };

struct HydraConfig {
  std::size_t clusters = 1;  // M
  double temperature = 0.1;
  std::size_t epochs = 1000;
  double learning_rate = 5e-5;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  double weight_decay = 0.0;
  DistanceKind distance = DistanceKind::MAE;
  std::uint64_t seed = 0;
  InitScheme init = InitScheme::MEAN_A_COPY_B;

  void validate(std::size_t task_count) const {
    if (clusters == 0) throw ParameterError("number of clusters M must be >= 1");
    if (clusters > task_count)
      throw ParameterError("number of clusters M=" + std::to_string(clusters) +
                           " exceeds task count K=" + std::to_string(task_count));
    if (!(temperature > 0.0)) throw ParameterError("temperature must be > 0");
    if (!(learning_rate > 0.0)) throw ParameterError("learning rate must be > 0");
    if (!(adam_beta1 >= 0.0 && adam_beta1 < 1.0) || !(adam_beta2 >= 0.0 && adam_beta2 < 1.0))
      throw ParameterError("Adam betas must lie in [0, 1)");
    if (!(adam_eps > 0.0)) throw ParameterError("Adam epsilon must be > 0");
    if (!(weight_decay >= 0.0)) throw ParameterError("weight decay must be >= 0");
  }
};

struct AdamMoments {
  Matrix m;
  Matrix v;

  static AdamMoments zeros_like(const Matrix& p) { return {Matrix(p.rows(), p.cols()), Matrix(p.rows(), p.cols())}; }
  friend bool operator==(const AdamMoments&, const AdamMoments&) = default;
};

/// One AdamW update with bias correction at 1-based step t:
/// theta -= lr * (m_hat / (sqrt(v_hat) + eps) + weight_decay * theta).
inline void adamw_update(Matrix& theta, AdamMoments& mom, const Matrix& grad, const HydraConfig& cfg,
                         std::uint64_t t) {
  Matrix::require_same_shape(theta, grad, "adamw_update");
  const double b1 = cfg.adam_beta1, b2 = cfg.adam_beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(t));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(t));
  for (std::size_t i = 0; i < theta.size(); ++i) {
    const double g = grad[i];
    mom.m[i] = b1 * mom.m[i] + (1.0 - b1) * g;
    mom.v[i] = b2 * mom.v[i] + (1.0 - b2) * g * g;
    const double m_hat = mom.m[i] / c1;
    const double v_hat = mom.v[i] / c2;
    theta[i] -= cfg.learning_rate * (m_hat / (std::sqrt(v_hat) + cfg.adam_eps) + cfg.weight_decay * theta[i]);
  }
}

struct LossValue {
  double total = 0.0;
  std::vector<double> per_task;
};

struct TrainTrace {
  std::vector<double> losses;  // loss before each update
  double final_loss = 0.0;     // loss of the returned state
  double wall_seconds = 0.0;
};

namespace detail {

/// Loss and its gradients with respect to each cluster prediction P_j and
/// the routing logits, shared by the LoRA and VeRA parameterizations.
struct RoutedEval {
  LossValue loss;
  std::vector<Matrix> cluster_grads;  // H_j = sum_i w_ij G_i
  std::optional<Matrix> logit_grad;   // K x M
};

inline RoutedEval evaluate_routed(std::span<const Matrix> targets, std::span<const Matrix> predictions,
                                  const std::optional<Matrix>& logits, const HydraConfig& cfg,
                                  bool with_grads) {
  const std::size_t K = targets.size(), M = predictions.size();
  if (!logits && M != K) throw ModeError("one-B-per-task mode requires M == K");
  if (logits && (logits->rows() != K || logits->cols() != M))
    throw DimensionError("routing logits " + logits->shape() + " do not match K x M");

  std::optional<Matrix> w;
  if (logits) w = softmax_rows(*logits, cfg.temperature);

  RoutedEval out;
  out.loss.per_task.resize(K);
  if (with_grads) {
    out.cluster_grads.assign(M, Matrix(predictions.front().rows(), predictions.front().cols()));
    if (logits) out.logit_grad = Matrix(K, M);
  }
  for (std::size_t i = 0; i < K; ++i) {
    Matrix pred;
    if (w) {
      pred = Matrix(targets[i].rows(), targets[i].cols());
      for (std::size_t j = 0; j < M; ++j) pred.add_scaled(predictions[j], (*w)(i, j));
    } else {
      pred = predictions[i];
    }
    out.loss.per_task[i] = distance(targets[i], pred, cfg.distance);
    out.loss.total += out.loss.per_task[i];
    if (!with_grads) continue;

    const Matrix G = distance_grad(targets[i], pred, cfg.distance);
    if (!w) {
      out.cluster_grads[i] += G;
      continue;
    }
    std::vector<double> g(M);
    double g_bar = 0.0;
    for (std::size_t j = 0; j < M; ++j) {
      out.cluster_grads[j].add_scaled(G, (*w)(i, j));
      g[j] = dot(G, predictions[j]);
      g_bar += (*w)(i, j) * g[j];
    }
    for (std::size_t m = 0; m < M; ++m)
      (*out.logit_grad)(i, m) = (*w)(i, m) / cfg.temperature * (g[m] - g_bar);
  }
  return out;
}

inline std::vector<Matrix> target_deltas(std::span<const LowRankAdapter> targets) {
  std::vector<Matrix> out;
  out.reserve(targets.size());
  for (const auto& t : targets) out.push_back(delta_weight(t));
  return out;
}

inline void require_consistent(std::span<const LowRankAdapter> targets) {
  if (targets.empty()) throw ParameterError("at least one target adapter required");
  for (const auto& t : targets) {
    t.validate();
    if (!t.A.same_shape(targets.front().A) || !t.B.same_shape(targets.front().B))
      throw DimensionError("target adapters have inconsistent shapes");
  }
}

inline std::vector<std::size_t> argmax_rows(const Matrix& logits) {
  std::vector<std::size_t> out(logits.rows());
  for (std::size_t i = 0; i < logits.rows(); ++i) {
    std::size_t best = 0;
    for (std::size_t j = 1; j < logits.cols(); ++j)
      if (logits(i, j) > logits(i, best)) best = j;
    out[i] = best;
  }
  return out;
}

template <typename Clock = std::chrono::steady_clock>
double seconds_since(typename Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

}  // namespace detail

// ---------------------------------------------------------------------------
// LoRA
// ---------------------------------------------------------------------------

struct HydraState {
  Matrix A;                  // r x k, shared
  std::vector<Matrix> Bs;    // M matrices, d x r
  std::optional<Matrix> C;   // K x M routing logits; absent when M == K
  AdamMoments A_moments;
  std::vector<AdamMoments> B_moments;
  std::optional<AdamMoments> C_moments;
  std::uint64_t step = 0;

  bool routed() const noexcept { return C.has_value(); }
  std::size_t clusters() const noexcept { return Bs.size(); }

  std::vector<Matrix> cluster_predictions() const {
    std::vector<Matrix> out;
    out.reserve(Bs.size());
    for (const auto& b : Bs) out.push_back(matmul(b, A));
    return out;
  }

  friend bool operator==(const HydraState&, const HydraState&) = default;
};

struct HydraGradients {
  Matrix A;
  std::vector<Matrix> Bs;
  std::optional<Matrix> C;
};

inline HydraState init_state(std::span<const LowRankAdapter> targets, const HydraConfig& cfg, Rng& rng) {
  detail::require_consistent(targets);
  cfg.validate(targets.size());
  const std::size_t K = targets.size(), M = cfg.clusters;
  const std::size_t d = targets.front().out_dim(), r = targets.front().rank(), k = targets.front().in_dim();

  HydraState s;
  if (cfg.init == InitScheme::MEAN_A_COPY_B) {
    std::vector<Matrix> as;
    for (const auto& t : targets) as.push_back(t.A);
    s.A = merge_ta(as);
    for (std::size_t j = 0; j < M; ++j) s.Bs.push_back(targets[j].B);
  } else {
    s.A = gaussian_sample(rng, r, k, 0.0, 0.02);
    for (std::size_t j = 0; j < M; ++j) s.Bs.push_back(gaussian_sample(rng, d, r, 0.0, 0.02));
  }
  if (M != K) s.C = gaussian_sample(rng, K, M, 0.0, 1.0);

  s.A_moments = AdamMoments::zeros_like(s.A);
  for (const auto& b : s.Bs) s.B_moments.push_back(AdamMoments::zeros_like(b));
  if (s.C) s.C_moments = AdamMoments::zeros_like(*s.C);
  return s;
}

namespace detail {

inline std::pair<LossValue, HydraGradients> evaluate_lora(const HydraState& s, std::span<const Matrix> deltas,
                                                          const HydraConfig& cfg, bool with_grads) {
  const auto preds = s.cluster_predictions();
  RoutedEval ev = evaluate_routed(deltas, preds, s.C, cfg, with_grads);
  HydraGradients g;
  if (with_grads) {
    g.A = Matrix(s.A.rows(), s.A.cols());
    const Matrix At = s.A.transpose();
    for (std::size_t j = 0; j < s.Bs.size(); ++j) {
      g.A += matmul(s.Bs[j].transpose(), ev.cluster_grads[j]);
      g.Bs.push_back(matmul(ev.cluster_grads[j], At));
    }
    g.C = std::move(ev.logit_grad);
  }
  return {std::move(ev.loss), std::move(g)};
}

}  // namespace detail

/// Routed objective; needs routing logits in the state.
inline LossValue loss_eq1(const HydraState& s, std::span<const LowRankAdapter> targets, const HydraConfig& cfg) {
  if (!s.routed()) throw ModeError("loss_eq1 requires routing logits (M < K mode)");
  return detail::evaluate_lora(s, detail::target_deltas(targets), cfg, false).first;
}

/// One B'_i per task; needs M == K.
inline LossValue loss_eq2(const HydraState& s, std::span<const LowRankAdapter> targets, const HydraConfig& cfg) {
  if (s.clusters() != targets.size())
    throw ModeError("loss_eq2 requires M == K (got M=" + std::to_string(s.clusters()) +
                    ", K=" + std::to_string(targets.size()) + ")");
  HydraState unrouted = s;
  unrouted.C.reset();
  return detail::evaluate_lora(unrouted, detail::target_deltas(targets), cfg, false).first;
}

/// Whichever objective the state's mode selects.
inline LossValue hydra_loss(const HydraState& s, std::span<const LowRankAdapter> targets, const HydraConfig& cfg) {
  return s.routed() ? loss_eq1(s, targets, cfg) : loss_eq2(s, targets, cfg);
}

inline HydraGradients gradients(const HydraState& s, std::span<const LowRankAdapter> targets,
                                const HydraConfig& cfg) {
  return detail::evaluate_lora(s, detail::target_deltas(targets), cfg, true).second;
}

inline void adamw_step(HydraState& s, const HydraGradients& g, const HydraConfig& cfg) {
  const std::uint64_t t = ++s.step;
  adamw_update(s.A, s.A_moments, g.A, cfg, t);
  for (std::size_t j = 0; j < s.Bs.size(); ++j) adamw_update(s.Bs[j], s.B_moments[j], g.Bs[j], cfg, t);
  if (s.C) {
    if (!g.C) throw ModeError("adamw_step: routed state needs a logit gradient");
    adamw_update(*s.C, *s.C_moments, *g.C, cfg, t);
  }
}

inline std::pair<HydraState, TrainTrace> train(std::span<const LowRankAdapter> targets, const HydraConfig& cfg,
                                               Rng& rng) {
  const auto start = std::chrono::steady_clock::now();
  HydraState s = init_state(targets, cfg, rng);
  const auto deltas = detail::target_deltas(targets);
  TrainTrace trace;
  trace.losses.reserve(cfg.epochs);
  for (std::size_t e = 0; e < cfg.epochs; ++e) {
    auto [loss, grads] = detail::evaluate_lora(s, deltas, cfg, true);
    trace.losses.push_back(loss.total);
    adamw_step(s, grads, cfg);
  }
  trace.final_loss = detail::evaluate_lora(s, deltas, cfg, false).first.total;
  trace.wall_seconds = detail::seconds_since(start);
  return {std::move(s), std::move(trace)};
}

/// Cluster used by each task: argmax of its logit row (lowest index on
/// ties), or the identity when M == K.
inline std::vector<std::size_t> assign_tasks(const HydraState& s, std::size_t task_count) {
  if (!s.routed()) {
    std::vector<std::size_t> id(task_count);
    std::iota(id.begin(), id.end(), 0);
    return id;
  }
  return detail::argmax_rows(*s.C);
}

/// Storage-ready slot: A', the M matrices B'_j and the assignment. The
/// routing logits are not carried over.
inline LoraBundleSlot export_bundle(const HydraState& s, std::vector<std::size_t> assignment) {
  for (std::size_t a : assignment)
    if (a >= s.clusters()) throw ValidationError("assignment index out of range");
  return LoraBundleSlot{s.A, s.Bs, std::move(assignment)};
}

// ---------------------------------------------------------------------------
// VeRA
// ---------------------------------------------------------------------------

struct VeraHydraState {
  Matrix shared_B;              // frozen, d x r
  Matrix shared_A;              // frozen, r x k
  Matrix lambda_d;              // r x 1, shared across tasks
  std::vector<Matrix> lambda_bs;  // M vectors, d x 1
  std::optional<Matrix> C;
  AdamMoments lambda_d_moments;
  std::vector<AdamMoments> lambda_b_moments;
  std::optional<AdamMoments> C_moments;
  std::uint64_t step = 0;

  bool routed() const noexcept { return C.has_value(); }
  std::size_t clusters() const noexcept { return lambda_bs.size(); }

  std::vector<Matrix> cluster_predictions() const {
    const Matrix inner = scale_rows(lambda_d, shared_A);
    std::vector<Matrix> out;
    for (const auto& lb : lambda_bs) out.push_back(matmul(scale_rows(lb, shared_B), inner));
    return out;
  }

  friend bool operator==(const VeraHydraState&, const VeraHydraState&) = default;
};

struct VeraGradients {
  Matrix lambda_d;
  std::vector<Matrix> lambda_bs;
  std::optional<Matrix> C;
};

namespace detail {

inline void require_shared_frozen(std::span<const VeraAdapter> targets) {
  if (targets.empty()) throw ParameterError("at least one target adapter required");
  for (const auto& t : targets) {
    t.validate();
    if (!(t.shared_A == targets.front().shared_A) || !(t.shared_B == targets.front().shared_B))
      throw ValidationError("VeRA targets must share identical frozen matrices");
    if (!t.lambda_b.same_shape(targets.front().lambda_b) || !t.lambda_d.same_shape(targets.front().lambda_d))
      throw DimensionError("VeRA targets have inconsistent shapes");
  }
}

inline std::vector<Matrix> target_deltas(std::span<const VeraAdapter> targets) {
  std::vector<Matrix> out;
  for (const auto& t : targets) out.push_back(delta_weight(t));
  return out;
}

inline std::pair<LossValue, VeraGradients> evaluate_vera(const VeraHydraState& s, std::span<const Matrix> deltas,
                                                         const HydraConfig& cfg, bool with_grads) {
  const auto preds = s.cluster_predictions();
  RoutedEval ev = evaluate_routed(deltas, preds, s.C, cfg, with_grads);
  VeraGradients g;
  if (!with_grads) return {std::move(ev.loss), std::move(g)};

  // P_j = diag(lb_j) B diag(ld) A
  //   dL/dlb_j[p] = sum_q H_j[p,q] (B diag(ld) A)[p,q]
  //   dL/dld[s]   = sum_j sum_{p,q} H_j[p,q] lb_j[p] B[p,s] A[s,q]
  const std::size_t d = s.shared_B.rows(), r = s.shared_B.cols();
  const Matrix base = matmul(s.shared_B, scale_rows(s.lambda_d, s.shared_A));
  const Matrix At = s.shared_A.transpose();
  g.lambda_d = Matrix(r, 1);
  for (std::size_t j = 0; j < s.lambda_bs.size(); ++j) {
    const Matrix& H = ev.cluster_grads[j];
    Matrix glb(d, 1);
    for (std::size_t p = 0; p < d; ++p) {
      double acc = 0.0;
      for (std::size_t q = 0; q < H.cols(); ++q) acc += H(p, q) * base(p, q);
      glb[p] = acc;
    }
    g.lambda_bs.push_back(std::move(glb));
    const Matrix HAt = matmul(scale_rows(s.lambda_bs[j], H), At);  // d x r
    for (std::size_t c = 0; c < r; ++c) {
      double acc = 0.0;
      for (std::size_t p = 0; p < d; ++p) acc += s.shared_B(p, c) * HAt(p, c);
      g.lambda_d[c] += acc;
    }
  }
  g.C = std::move(ev.logit_grad);
  return {std::move(ev.loss), std::move(g)};
}

}  // namespace detail

inline VeraHydraState init_vera_state(std::span<const VeraAdapter> targets, const HydraConfig& cfg, Rng& rng) {
  detail::require_shared_frozen(targets);
  cfg.validate(targets.size());
  const std::size_t K = targets.size(), M = cfg.clusters;
  const auto& first = targets.front();

  VeraHydraState s;
  s.shared_B = first.shared_B;
  s.shared_A = first.shared_A;
  if (cfg.init == InitScheme::MEAN_A_COPY_B) {
    std::vector<Matrix> lds;
    for (const auto& t : targets) lds.push_back(t.lambda_d);
    s.lambda_d = merge_ta(lds);
    for (std::size_t j = 0; j < M; ++j) s.lambda_bs.push_back(targets[j].lambda_b);
  } else {
    s.lambda_d = gaussian_sample(rng, first.lambda_d.rows(), 1, 0.0, 0.02);
    for (std::size_t j = 0; j < M; ++j)
      s.lambda_bs.push_back(gaussian_sample(rng, first.lambda_b.rows(), 1, 0.0, 0.02));
  }
  if (M != K) s.C = gaussian_sample(rng, K, M, 0.0, 1.0);

  s.lambda_d_moments = AdamMoments::zeros_like(s.lambda_d);
  for (const auto& b : s.lambda_bs) s.lambda_b_moments.push_back(AdamMoments::zeros_like(b));
  if (s.C) s.C_moments = AdamMoments::zeros_like(*s.C);
  return s;
}

inline LossValue vera_loss(const VeraHydraState& s, std::span<const VeraAdapter> targets, const HydraConfig& cfg) {
  return detail::evaluate_vera(s, detail::target_deltas(targets), cfg, false).first;
}

inline VeraGradients vera_gradients(const VeraHydraState& s, std::span<const VeraAdapter> targets,
                                    const HydraConfig& cfg) {
  return detail::evaluate_vera(s, detail::target_deltas(targets), cfg, true).second;
}

inline void adamw_step(VeraHydraState& s, const VeraGradients& g, const HydraConfig& cfg) {
  const std::uint64_t t = ++s.step;
  adamw_update(s.lambda_d, s.lambda_d_moments, g.lambda_d, cfg, t);
  for (std::size_t j = 0; j < s.lambda_bs.size(); ++j)
    adamw_update(s.lambda_bs[j], s.lambda_b_moments[j], g.lambda_bs[j], cfg, t);
  if (s.C) {
    if (!g.C) throw ModeError("adamw_step: routed state needs a logit gradient");
    adamw_update(*s.C, *s.C_moments, *g.C, cfg, t);
  }
}

inline std::pair<VeraHydraState, TrainTrace> train_vera(std::span<const VeraAdapter> targets,
                                                        const HydraConfig& cfg, Rng& rng) {
  const auto start = std::chrono::steady_clock::now();
  VeraHydraState s = init_vera_state(targets, cfg, rng);
  const auto deltas = detail::target_deltas(targets);
  TrainTrace trace;
  trace.losses.reserve(cfg.epochs);
  for (std::size_t e = 0; e < cfg.epochs; ++e) {
    auto [loss, grads] = detail::evaluate_vera(s, deltas, cfg, true);
    trace.losses.push_back(loss.total);
    adamw_step(s, grads, cfg);
  }
  trace.final_loss = detail::evaluate_vera(s, deltas, cfg, false).first.total;
  trace.wall_seconds = detail::seconds_since(start);
  return {std::move(s), std::move(trace)};
}

inline std::vector<std::size_t> assign_tasks(const VeraHydraState& s, std::size_t task_count) {
  if (!s.routed()) {
    std::vector<std::size_t> id(task_count);
    std::iota(id.begin(), id.end(), 0);
    return id;
  }
  return detail::argmax_rows(*s.C);
}

inline VeraBundleSlot export_bundle(const VeraHydraState& s, std::vector<std::size_t> assignment) {
  for (std::size_t a : assignment)
    if (a >= s.clusters()) throw ValidationError("assignment index out of range");
  return VeraBundleSlot{s.shared_B, s.shared_A, s.lambda_d, s.lambda_bs, std::move(assignment)};
}

// ---------------------------------------------------------------------------
// Whole collections
// ---------------------------------------------------------------------------

struct SlotTrainResult {
  SlotKey key;
  double initial_loss = 0.0;
  double final_loss = 0.0;
  std::vector<double> losses;
};

struct HydraMergeResult {
  MergedBundle bundle;
  std::vector<SlotTrainResult> slots;

  double final_loss() const {
    double s = 0.0;
    for (const auto& r : slots) s += r.final_loss;
    return s;
  }
};

/// Replaces every slot's assignment with the per-task majority cluster over
/// all slots (lowest index on ties). All slots must have the same M.
inline void globalize_assignments(MergedBundle& b) {
  if (b.slots.empty()) return;
  std::size_t M = 0;
  std::vector<std::vector<std::size_t>> votes;
  for (auto& [key, slot] : b.slots) {
    std::visit(
        [&](auto& x) {
          std::size_t m = 0;
          if constexpr (std::is_same_v<std::decay_t<decltype(x)>, LoraBundleSlot>) m = x.Bs.size();
          else m = x.lambda_bs.size();
          if (M == 0) {
            M = m;
            votes.assign(b.tasks.size(), std::vector<std::size_t>(M, 0));
          }
          if (m != M) throw ValidationError("cannot globalize assignments across slots with different M");
          for (std::size_t t = 0; t < b.tasks.size(); ++t) ++votes[t][x.assignment[t]];
        },
        slot);
  }
  std::vector<std::size_t> global(b.tasks.size());
  for (std::size_t t = 0; t < b.tasks.size(); ++t) {
    std::size_t best = 0;
    for (std::size_t j = 1; j < M; ++j)
      if (votes[t][j] > votes[t][best]) best = j;
    global[t] = best;
  }
  for (auto& [key, slot] : b.slots) std::visit([&](auto& x) { x.assignment = global; }, slot);
}

/// Trains one independent HydraOpt problem per slot. Slot s draws from
/// Rng(cfg.seed ^ stable_hash(slot key)), so results do not depend on `jobs`.
inline HydraMergeResult hydra_merge_collection(const AdapterCollection& c, const HydraConfig& cfg,
                                               std::size_t jobs = 1) {
  c.validate();
  cfg.validate(c.task_count());
  const bool vera = c.kind() == AdapterKind::VeRA;
  const auto& slots = c.slots();
  const std::size_t K = c.task_count();

  std::vector<BundleSlot> merged(slots.size());
  std::vector<SlotTrainResult> results(slots.size());
  parallel_for(slots.size(), jobs, [&](std::size_t s) {
    const SlotKey& key = slots[s];
    Rng rng = slot_rng(cfg.seed, key);
    TrainTrace trace;
    if (vera) {
      const auto targets = c.slot_adapters<VeraAdapter>(key);
      auto [state, tr] = train_vera(targets, cfg, rng);
      merged[s] = export_bundle(state, assign_tasks(state, K));
      trace = std::move(tr);
    } else {
      const auto targets = c.slot_adapters<LowRankAdapter>(key);
      auto [state, tr] = train(targets, cfg, rng);
      merged[s] = export_bundle(state, assign_tasks(state, K));
      trace = std::move(tr);
    }
    results[s].key = key;
    results[s].final_loss = trace.final_loss;
    results[s].initial_loss = trace.losses.empty() ? trace.final_loss : trace.losses.front();
    results[s].losses = std::move(trace.losses);
  });

  HydraMergeResult out;
  out.bundle.method = "hydraopt";
  out.bundle.tasks = c.tasks();
  for (std::size_t s = 0; s < slots.size(); ++s) out.bundle.slots.emplace(slots[s], std::move(merged[s]));
  out.slots = std::move(results);
  return out;
}

}  // namespace hydra
