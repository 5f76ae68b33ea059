// SPDX-License-Identifier: Apache-2.0
//
// Finite-difference verification of the HydraOpt analytic gradients on
// random small instances, for every distance kind and both the LoRA and
// VeRA parameterizations.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "hydra/hydra_opt.hpp"
#include "hydra/numeric.hpp"

namespace hydra::gradcheck {

struct Options {
  std::size_t instances = 20;
  std::size_t d = 8, k = 8, r = 2, tasks = 3;
  std::vector<std::size_t> cluster_counts{2, 3};
  double step = 1e-5;
  double tolerance = 1e-5;
  double min_residual = 1e-3;
  std::uint64_t seed = 0;
};

struct CaseResult {
  std::string model;  // "lora" or "vera"
  DistanceKind kind = DistanceKind::MAE;
  std::size_t clusters = 0;
  std::size_t instance = 0;
  std::string tensor;
  double rel_error = 0.0;
};

struct Report {
  std::vector<CaseResult> cases;
  double max_rel_error = 0.0;
  double tolerance = 0.0;
  bool passed = true;
};

/// ||a - n||_inf / max(||a||_inf, ||n||_inf, 1e-8).
inline double relative_error(const Matrix& analytic, const Matrix& numeric) {
  double diff = 0.0, scale = 1e-8;
  for (std::size_t i = 0; i < analytic.size(); ++i) {
    diff = std::max(diff, std::abs(analytic[i] - numeric[i]));
    scale = std::max({scale, std::abs(analytic[i]), std::abs(numeric[i])});
  }
  return diff / scale;
}

namespace detail {

/// Smallest |target - prediction| entry over all tasks, with routing applied.
inline double min_residual(const std::vector<Matrix>& targets, const std::vector<Matrix>& preds,
                           const std::optional<Matrix>& C, double temperature) {
  std::optional<Matrix> w;
  if (C) w = softmax_rows(*C, temperature);
  double lo = INFINITY;
  for (std::size_t i = 0; i < targets.size(); ++i) {
    Matrix y(targets[i].rows(), targets[i].cols());
    if (w) {
      for (std::size_t j = 0; j < preds.size(); ++j) y.add_scaled(preds[j], (*w)(i, j));
    } else {
      y = preds[i];
    }
    for (std::size_t e = 0; e < y.size(); ++e) lo = std::min(lo, std::abs(targets[i][e] - y[e]));
  }
  return lo;
}

}  // namespace detail

inline Report run(const Options& opt) {
  Report rep;
  rep.tolerance = opt.tolerance;
  Rng rng(opt.seed);
  auto record = [&](CaseResult c) {
    rep.max_rel_error = std::max(rep.max_rel_error, c.rel_error);
    if (!(c.rel_error <= opt.tolerance)) rep.passed = false;
    rep.cases.push_back(std::move(c));
  };

  for (DistanceKind kind : {DistanceKind::MAE, DistanceKind::MSE, DistanceKind::FRO, DistanceKind::COS}) {
    for (std::size_t M : opt.cluster_counts) {
      HydraConfig cfg;
      cfg.clusters = M;
      cfg.distance = kind;
      for (std::size_t inst = 0; inst < opt.instances; ++inst) {
        // LoRA: resample until every residual clears the kink margin.
        std::vector<LowRankAdapter> targets;
        HydraState s;
        for (;;) {
          targets.clear();
          for (std::size_t t = 0; t < opt.tasks; ++t)
            targets.push_back({gaussian_sample(rng, opt.d, opt.r, 0, 1), gaussian_sample(rng, opt.r, opt.k, 0, 1)});
          s = HydraState{};
          s.A = gaussian_sample(rng, opt.r, opt.k, 0, 1);
          s.Bs.clear();
          for (std::size_t j = 0; j < M; ++j) s.Bs.push_back(gaussian_sample(rng, opt.d, opt.r, 0, 1));
          // Logits on the temperature scale: saturated routing weights push
          // gradients below the finite-difference noise floor.
          if (M != opt.tasks) s.C = gaussian_sample(rng, opt.tasks, M, 0, cfg.temperature);
          std::vector<Matrix> deltas;
          for (const auto& t : targets) deltas.push_back(delta_weight(t));
          if (detail::min_residual(deltas, s.cluster_predictions(), s.C, cfg.temperature) > opt.min_residual) break;
        }
        const HydraGradients g = gradients(s, targets, cfg);
        auto loss = [&](const HydraState& st) { return hydra_loss(st, targets, cfg).total; };
        auto check = [&](const std::string& name, Matrix& param, const Matrix& analytic) {
          const Matrix saved = param;
          const Matrix numeric = finite_diff(
              [&](const Matrix& p) {
                param = p;
                return loss(s);
              },
              saved, opt.step);
          param = saved;
          record({"lora", kind, M, inst, name, relative_error(analytic, numeric)});
        };
        check("A", s.A, g.A);
        for (std::size_t j = 0; j < M; ++j) check("B." + std::to_string(j), s.Bs[j], g.Bs[j]);
        if (s.C) check("C", *s.C, *g.C);

        // VeRA
        std::vector<VeraAdapter> vtargets;
        VeraHydraState vs;
        for (;;) {
          vtargets.clear();
          const Matrix sb = gaussian_sample(rng, opt.d, opt.r, 0, 1);
          const Matrix sa = gaussian_sample(rng, opt.r, opt.k, 0, 1);
          for (std::size_t t = 0; t < opt.tasks; ++t)
            vtargets.push_back({gaussian_sample(rng, opt.d, 1, 0, 1), gaussian_sample(rng, opt.r, 1, 0, 1), sb, sa});
          vs = VeraHydraState{};
          vs.shared_B = sb;
          vs.shared_A = sa;
          vs.lambda_d = gaussian_sample(rng, opt.r, 1, 0, 1);
          for (std::size_t j = 0; j < M; ++j) vs.lambda_bs.push_back(gaussian_sample(rng, opt.d, 1, 0, 1));
          if (M != opt.tasks) vs.C = gaussian_sample(rng, opt.tasks, M, 0, cfg.temperature);
          std::vector<Matrix> deltas;
          for (const auto& t : vtargets) deltas.push_back(delta_weight(t));
          if (detail::min_residual(deltas, vs.cluster_predictions(), vs.C, cfg.temperature) > opt.min_residual) break;
        }
        const VeraGradients vg = vera_gradients(vs, vtargets, cfg);
        auto vcheck = [&](const std::string& name, Matrix& param, const Matrix& analytic) {
          const Matrix saved = param;
          const Matrix numeric = finite_diff(
              [&](const Matrix& p) {
                param = p;
                return vera_loss(vs, vtargets, cfg).total;
              },
              saved, opt.step);
          param = saved;
          record({"vera", kind, M, inst, name, relative_error(analytic, numeric)});
        };
        vcheck("lambda_d", vs.lambda_d, vg.lambda_d);
        for (std::size_t j = 0; j < M; ++j) vcheck("lambda_b." + std::to_string(j), vs.lambda_bs[j], vg.lambda_bs[j]);
        if (vs.C) vcheck("C", *vs.C, *vg.C);
      }
    }
  }
  return rep;
}

inline nlohmann::json to_json(const Report& r) {
  nlohmann::json failures = nlohmann::json::array();
  for (const auto& c : r.cases) {
    if (c.rel_error <= r.tolerance) continue;
    failures.push_back({{"model", c.model}, {"distance", std::string(to_string(c.kind))}, {"M", c.clusters},
                        {"instance", c.instance}, {"tensor", c.tensor}, {"rel_error", c.rel_error}});
  }
  return {{"grad_check",
           {{"passed", r.passed}, {"cases", r.cases.size()}, {"max_rel_error", r.max_rel_error},
            {"failures", failures}}}};
}

}  // namespace hydra::gradcheck
