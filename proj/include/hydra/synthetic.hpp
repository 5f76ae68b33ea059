// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cstdint>
#include <string>
#include <vector>

#include "hydra/adapter.hpp"
#include "hydra/errors.hpp"
#include "hydra/numeric.hpp"

namespace hydra {

/// Desk-scale adapter collection with a shared A* per slot (each task's A is
/// A* plus N(0, a_noise) noise) and independent per-task B ~ N(0, b_scale).
/// Small a_noise reproduces "similar A, distinct B".
struct SynthSpec {
  std::size_t tasks = 5;
  std::size_t layers = 1;
  std::vector<std::string> slot_names{"q", "v"};
  std::size_t d = 16;
  std::size_t k = 16;
  std::size_t r = 4;
  double a_noise = 0.05;
  double b_scale = 1.0;
  std::uint64_t seed = 0;

  void validate() const {
    if (tasks == 0) throw ParameterError("synthetic: at least one task required");
    if (layers == 0 || slot_names.empty()) throw ParameterError("synthetic: at least one slot required");
    if (d == 0 || k == 0 || r == 0 || r > std::min(d, k)) throw ParameterError("synthetic: need 1 <= r <= min(d, k)");
    if (!(a_noise >= 0.0) || !(b_scale >= 0.0)) throw ParameterError("synthetic: noise scales must be >= 0");
  }

  std::vector<std::string> task_ids() const {
    std::vector<std::string> ids;
    for (std::size_t t = 0; t < tasks; ++t) ids.push_back("t" + std::to_string(t + 1));
    return ids;
  }

  std::vector<SlotKey> slot_keys() const {
    std::vector<SlotKey> keys;
    for (std::size_t l = 0; l < layers; ++l)
      for (const auto& s : slot_names) keys.push_back({static_cast<std::uint32_t>(l), s});
    std::sort(keys.begin(), keys.end());
    keys.erase(std::unique(keys.begin(), keys.end()), keys.end());
    return keys;
  }
};

/// Draw order per slot (slots in sorted order): A*, then for each task its A
/// noise followed by its B.
inline AdapterCollection generate(const SynthSpec& spec) {
  spec.validate();
  Rng rng(spec.seed);
  AdapterCollection c(spec.task_ids(), spec.slot_keys());
  for (const auto& key : c.slots()) {
    const Matrix shared_A = gaussian_sample(rng, spec.r, spec.k, 0.0, 1.0);
    for (std::size_t t = 0; t < spec.tasks; ++t) {
      Matrix A = shared_A + gaussian_sample(rng, spec.r, spec.k, 0.0, spec.a_noise);
      Matrix B = gaussian_sample(rng, spec.d, spec.r, 0.0, spec.b_scale);
      c.set(t, key, LowRankAdapter{std::move(B), std::move(A)});
    }
  }
  return c;
}

/// VeRA counterpart: frozen shared B, A ~ N(0, 1) per slot; lambda_d is a
/// shared draw plus N(0, a_noise) noise per task; lambda_b ~ N(0, b_scale).
inline AdapterCollection generate_vera(const SynthSpec& spec) {
  spec.validate();
  Rng rng(spec.seed);
  AdapterCollection c(spec.task_ids(), spec.slot_keys());
  for (const auto& key : c.slots()) {
    const Matrix shared_B = gaussian_sample(rng, spec.d, spec.r, 0.0, 1.0);
    const Matrix shared_A = gaussian_sample(rng, spec.r, spec.k, 0.0, 1.0);
    const Matrix lambda_d = gaussian_sample(rng, spec.r, 1, 0.0, 1.0);
    for (std::size_t t = 0; t < spec.tasks; ++t) {
      Matrix ld = lambda_d + gaussian_sample(rng, spec.r, 1, 0.0, spec.a_noise);
      Matrix lb = gaussian_sample(rng, spec.d, 1, 0.0, spec.b_scale);
      c.set(t, key, VeraAdapter{std::move(lb), std::move(ld), shared_B, shared_A});
    }
  }
  return c;
}

}  // namespace hydra
