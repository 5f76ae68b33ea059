// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <map>
#include <string>
#include <type_traits>
#include <variant>
#include <vector>

#include "hydra/errors.hpp"
#include "hydra/numeric.hpp"

namespace hydra {

/// One task's LoRA pair for one weight slot; delta W = B * A.
struct LowRankAdapter {
  Matrix B;  // d x r
  Matrix A;  // r x k

  std::size_t rank() const noexcept { return A.rows(); }
  std::size_t out_dim() const noexcept { return B.rows(); }
  std::size_t in_dim() const noexcept { return A.cols(); }

  void validate() const {
    if (B.cols() != A.rows())
      throw ValidationError("LoRA B " + B.shape() + " and A " + A.shape() + " disagree on rank");
    if (rank() == 0 || rank() > std::min(out_dim(), in_dim()))
      throw ValidationError("LoRA rank " + std::to_string(rank()) + " exceeds min(d, k)");
  }

  friend bool operator==(const LowRankAdapter&, const LowRankAdapter&) = default;
};

/// VeRA: delta W = diag(lambda_b) * shared_B * diag(lambda_d) * shared_A, with
/// shared_B / shared_A frozen and identical across tasks.
struct VeraAdapter {
  Matrix lambda_b;  // d x 1
  Matrix lambda_d;  // r x 1
  Matrix shared_B;  // d x r
  Matrix shared_A;  // r x k

  std::size_t rank() const noexcept { return shared_A.rows(); }

  void validate() const {
    if (lambda_b.cols() != 1 || lambda_d.cols() != 1)
      throw ValidationError("VeRA scaling vectors must be n x 1");
    if (shared_B.cols() != shared_A.rows() || shared_A.rows() != lambda_d.rows())
      throw ValidationError("VeRA rank mismatch between shared_B, shared_A and lambda_d");
    if (lambda_b.rows() != shared_B.rows())
      throw ValidationError("VeRA lambda_b length does not match shared_B rows");
  }

  friend bool operator==(const VeraAdapter&, const VeraAdapter&) = default;
};

using Adapter = std::variant<LowRankAdapter, VeraAdapter>;

enum class AdapterKind { LoRA, VeRA };

inline Matrix delta_weight(const LowRankAdapter& a) { return matmul(a.B, a.A); }

inline Matrix delta_weight(const VeraAdapter& a) {
  return matmul(scale_rows(a.lambda_b, a.shared_B), scale_rows(a.lambda_d, a.shared_A));
}

inline Matrix delta_weight(const Adapter& a) {
  return std::visit([](const auto& x) { return delta_weight(x); }, a);
}

/// (layer, projection) position of an adapted weight.
struct SlotKey {
  std::uint32_t layer = 0;
  std::string slot;

  /// "<layer>.<slot>", the form used in archive assignment maps.
  std::string str() const { return std::to_string(layer) + "." + slot; }

  friend auto operator<=>(const SlotKey&, const SlotKey&) = default;
};

/// Parses the "<layer>.<slot>" form.
inline SlotKey parse_slot_key(const std::string& s) {
  const auto dot = s.find('.');
  if (dot == std::string::npos || dot == 0 || dot + 1 == s.size())
    throw ValidationError("malformed slot key '" + s + "'");
  SlotKey key;
  try {
    std::size_t used = 0;
    const unsigned long layer = std::stoul(s.substr(0, dot), &used);
    if (used != dot) throw std::invalid_argument("layer");
    key.layer = static_cast<std::uint32_t>(layer);
  } catch (const std::exception&) {
    throw ValidationError("malformed slot key '" + s + "'");
  }
  key.slot = s.substr(dot + 1);
  return key;
}

/// K tasks x slots of adapters, homogeneous in kind and per-slot shape.
class AdapterCollection {
 public:
  AdapterCollection() = default;
  /// Slots are kept in sorted (layer, name) order.
  AdapterCollection(std::vector<std::string> tasks, std::vector<SlotKey> slots)
      : tasks_(std::move(tasks)), slots_(std::move(slots)) {
    std::sort(slots_.begin(), slots_.end());
  }

  const std::vector<std::string>& tasks() const noexcept { return tasks_; }
  const std::vector<SlotKey>& slots() const noexcept { return slots_; }
  std::size_t task_count() const noexcept { return tasks_.size(); }

  void set(std::size_t task, const SlotKey& slot, Adapter a) {
    table_[{task, slot}] = std::move(a);
  }

  const Adapter& at(std::size_t task, const SlotKey& slot) const {
    auto it = table_.find({task, slot});
    if (it == table_.end())
      throw ValidationError("missing adapter for task '" + task_name(task) + "' slot " + slot.str());
    return it->second;
  }

  const LowRankAdapter& lora(std::size_t task, const SlotKey& slot) const {
    const auto* p = std::get_if<LowRankAdapter>(&at(task, slot));
    if (!p) throw ValidationError("slot " + slot.str() + " does not hold a LoRA adapter");
    return *p;
  }

  const VeraAdapter& vera(std::size_t task, const SlotKey& slot) const {
    const auto* p = std::get_if<VeraAdapter>(&at(task, slot));
    if (!p) throw ValidationError("slot " + slot.str() + " does not hold a VeRA adapter");
    return *p;
  }

  /// All K adapters of one slot, in task order.
  template <typename T>
  std::vector<T> slot_adapters(const SlotKey& slot) const {
    std::vector<T> out;
    out.reserve(tasks_.size());
    for (std::size_t t = 0; t < tasks_.size(); ++t) {
      const auto* p = std::get_if<T>(&at(t, slot));
      if (!p) throw ValidationError("slot " + slot.str() + " holds a different adapter kind");
      out.push_back(*p);
    }
    return out;
  }

  AdapterKind kind() const {
    validate();
    return std::holds_alternative<LowRankAdapter>(table_.begin()->second) ? AdapterKind::LoRA
                                                                          : AdapterKind::VeRA;
  }

  /// Checks every collection invariant; throws ValidationError naming the
  /// offending slot or key.
  void validate() const {
    if (tasks_.empty()) throw ValidationError("collection has no tasks (K >= 1 required)");
    if (slots_.empty()) throw ValidationError("collection has no slots");
    for (std::size_t i = 0; i < slots_.size(); ++i)
      for (std::size_t j = i + 1; j < slots_.size(); ++j)
        if (slots_[i] == slots_[j]) throw ValidationError("duplicate slot " + slots_[i].str());
    for (std::size_t i = 0; i < tasks_.size(); ++i)
      for (std::size_t j = i + 1; j < tasks_.size(); ++j)
        if (tasks_[i] == tasks_[j]) throw ValidationError("duplicate task id '" + tasks_[i] + "'");
    if (table_.size() != tasks_.size() * slots_.size())
      throw ValidationError("collection table has entries outside its task x slot grid");

    const std::size_t kind_index = at(0, slots_.front()).index();
    for (const auto& slot : slots_) {
      const Adapter& ref = at(0, slot);
      for (std::size_t t = 0; t < tasks_.size(); ++t) {
        const Adapter& a = at(t, slot);
        if (a.index() != kind_index)
          throw ValidationError("mixed adapter kinds in collection (slot " + slot.str() + ")");
        std::visit([](const auto& x) { x.validate(); }, a);
        if (!same_shape(ref, a))
          throw ValidationError("inconsistent adapter shapes across tasks in slot " + slot.str());
      }
    }
  }

  friend bool operator==(const AdapterCollection&, const AdapterCollection&) = default;

 private:
  std::string task_name(std::size_t t) const {
    return t < tasks_.size() ? tasks_[t] : "#" + std::to_string(t);
  }

  static bool same_shape(const Adapter& a, const Adapter& b) {
    if (const auto* x = std::get_if<LowRankAdapter>(&a)) {
      const auto& y = std::get<LowRankAdapter>(b);
      return x->A.same_shape(y.A) && x->B.same_shape(y.B);
    }
    const auto& x = std::get<VeraAdapter>(a);
    const auto& y = std::get<VeraAdapter>(b);
    return x.lambda_b.same_shape(y.lambda_b) && x.lambda_d.same_shape(y.lambda_d) &&
           x.shared_A.same_shape(y.shared_A) && x.shared_B.same_shape(y.shared_B);
  }

  std::vector<std::string> tasks_;
  std::vector<SlotKey> slots_;
  std::map<std::pair<std::size_t, SlotKey>, Adapter> table_;
};

// ---------------------------------------------------------------------------
// Merged bundles
// ---------------------------------------------------------------------------

/// One merged LoRA slot: a shared A and one or more B matrices. Each task
/// uses Bs[assignment[task]]. A per-matrix baseline has a single B.
struct LoraBundleSlot {
  Matrix A;
  std::vector<Matrix> Bs;
  std::vector<std::size_t> assignment;

  std::size_t param_count() const {
    std::size_t n = A.size();
    for (const auto& b : Bs) n += b.size();
    return n;
  }

  Matrix prediction(std::size_t task) const { return matmul(Bs.at(assignment.at(task)), A); }

  friend bool operator==(const LoraBundleSlot&, const LoraBundleSlot&) = default;
};

/// One merged VeRA slot: frozen shared matrices, a shared lambda_d and one or
/// more lambda_b vectors selected per task. Only the lambdas count as storage.
struct VeraBundleSlot {
  Matrix shared_B;
  Matrix shared_A;
  Matrix lambda_d;
  std::vector<Matrix> lambda_bs;
  std::vector<std::size_t> assignment;

  std::size_t param_count() const {
    std::size_t n = lambda_d.size();
    for (const auto& b : lambda_bs) n += b.size();
    return n;
  }

  Matrix prediction(std::size_t task) const {
    return delta_weight(
        VeraAdapter{lambda_bs.at(assignment.at(task)), lambda_d, shared_B, shared_A});
  }

  friend bool operator==(const VeraBundleSlot&, const VeraBundleSlot&) = default;
};

using BundleSlot = std::variant<LoraBundleSlot, VeraBundleSlot>;

struct MergedBundle {
  std::string method;
  std::vector<std::string> tasks;
  std::map<SlotKey, BundleSlot> slots;

  std::size_t storage_params() const {
    std::size_t n = 0;
    for (const auto& [key, s] : slots) n += std::visit([](const auto& x) { return x.param_count(); }, s);
    return n;
  }

  Matrix prediction(std::size_t task, const SlotKey& key) const {
    auto it = slots.find(key);
    if (it == slots.end()) throw ValidationError("bundle has no slot " + key.str());
    return std::visit([&](const auto& x) { return x.prediction(task); }, it->second);
  }

  void validate() const {
    if (tasks.empty()) throw ValidationError("bundle has no tasks (K >= 1 required)");
    for (const auto& [key, s] : slots) {
      std::visit(
          [&](const auto& x) {
            std::size_t m = 0;
            if constexpr (std::is_same_v<std::decay_t<decltype(x)>, LoraBundleSlot>) m = x.Bs.size();
            else m = x.lambda_bs.size();
            if (m == 0) throw ValidationError("bundle slot " + key.str() + " has no B matrices");
            if (x.assignment.size() != tasks.size())
              throw ValidationError("bundle slot " + key.str() + " assigns the wrong number of tasks");
            for (std::size_t a : x.assignment)
              if (a >= m) throw ValidationError("bundle slot " + key.str() + " assignment out of range");
          },
          s);
    }
  }

  friend bool operator==(const MergedBundle&, const MergedBundle&) = default;
};

/// Parameters needed to store every adapter of the collection individually.
inline std::size_t original_param_count(const AdapterCollection& c) {
  std::size_t n = 0;
  for (const auto& slot : c.slots()) {
    for (std::size_t t = 0; t < c.task_count(); ++t) {
      const Adapter& a = c.at(t, slot);
      if (const auto* l = std::get_if<LowRankAdapter>(&a)) n += l->A.size() + l->B.size();
      else {
        const auto& v = std::get<VeraAdapter>(a);
        n += v.lambda_b.size() + v.lambda_d.size();
      }
    }
  }
  return n;
}

}  // namespace hydra
