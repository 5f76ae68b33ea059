// SPDX-License-Identifier: Apache-2.0
//
// LRTA v1 tensor archive.
//
//   bytes [0, 8)        u64 little-endian N, length of the manifest
//   bytes [8, 8 + N)    UTF-8 JSON manifest
//   bytes [8 + N, end)  row-major little-endian f32 payloads, no padding
//
// Manifest:
//   { "version": 1,
//     "tensors": { name: {"shape": [rows, cols], "offset": o, "nbytes": n} },
//     "meta": { "kind": "lora" | "vera" | "bundle", "tasks": [...],
//               "method": str,                       (bundles only)
//               "assignment": {task: {"<layer>.<slot>": j}} } }   (bundles only)
//
// Offsets are relative to the start of the payload section. Tensors are laid
// out in ascending name order, and the JSON is emitted with sorted keys and no
// whitespace, so equal inputs give byte-identical files. Vectors are n x 1.
//
// Tensor names:
//   task.<id>.layer.<n>.<slot>.{A,B}               LoRA adapters
//   task.<id>.layer.<n>.<slot>.{lambda_b,lambda_d} VeRA scaling vectors
//   shared.layer.<n>.<slot>.{A,B}                  VeRA frozen matrices
//   merged.layer.<n>.<slot>.A, ...B.<j>            merged LoRA slot
//   merged.layer.<n>.<slot>.lambda_d, ...lambda_b.<j>   merged VeRA slot
#pragma once

#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "hydra/adapter.hpp"
#include "hydra/errors.hpp"
#include "hydra/numeric.hpp"

namespace hydra::archive {

using Bytes = std::vector<std::uint8_t>;
using json = nlohmann::json;

namespace detail {

inline void put_u32_le(Bytes& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

inline std::uint32_t get_u32_le(const std::uint8_t* p) {
  return std::uint32_t(p[0]) | std::uint32_t(p[1]) << 8 | std::uint32_t(p[2]) << 16 |
         std::uint32_t(p[3]) << 24;
}

inline std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> parts;
  std::size_t start = 0;
  for (;;) {
    const auto pos = s.find(sep, start);
    parts.push_back(s.substr(start, pos - start));
    if (pos == std::string::npos) break;
    start = pos + 1;
  }
  return parts;
}

inline void check_name_part(const std::string& part, const char* what) {
  if (part.empty() || part.find('.') != std::string::npos)
    throw ValidationError(std::string(what) + " '" + part + "' must be non-empty and contain no '.'");
}

inline std::string slot_prefix(const SlotKey& k) {
  return "layer." + std::to_string(k.layer) + "." + k.slot;
}

/// Name -> tensor map that serializes itself into LRTA bytes.
class Writer {
 public:
  void add(const std::string& name, const Matrix& m) {
    if (!tensors_.emplace(name, &m).second) throw ValidationError("duplicate tensor '" + name + "'");
  }

  Bytes finish(json meta) const {
    json manifest;
    manifest["version"] = 1;
    manifest["tensors"] = json::object();
    std::size_t offset = 0;
    for (const auto& [name, m] : tensors_) {
      const std::size_t nbytes = m->size() * 4;
      manifest["tensors"][name] = {{"shape", {m->rows(), m->cols()}}, {"offset", offset}, {"nbytes", nbytes}};
      offset += nbytes;
    }
    manifest["meta"] = std::move(meta);
    const std::string header = manifest.dump();

    Bytes out;
    out.reserve(8 + header.size() + offset);
    const std::uint64_t n = header.size();
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(n >> (8 * i)));
    out.insert(out.end(), header.begin(), header.end());
    for (const auto& [name, m] : tensors_) {
      for (double v : m->flat()) put_u32_le(out, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
    }
    return out;
  }

 private:
  std::map<std::string, const Matrix*> tensors_;
};

/// Parsed manifest plus widened tensors.
struct Parsed {
  json meta;
  std::map<std::string, Matrix> tensors;

  Matrix take(const std::string& name) {
    auto it = tensors.find(name);
    if (it == tensors.end()) throw ValidationError("missing tensor '" + name + "'");
    Matrix m = std::move(it->second);
    tensors.erase(it);
    return m;
  }
};

inline Parsed parse(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 8) throw FormatError("file shorter than the 8-byte header length", bytes.size());
  std::uint64_t n = 0;
  for (int i = 0; i < 8; ++i) n |= std::uint64_t(bytes[i]) << (8 * i);
  if (n > bytes.size() - 8) throw FormatError("manifest length exceeds file size", 0);

  json manifest;
  try {
    manifest = json::parse(bytes.begin() + 8, bytes.begin() + 8 + static_cast<std::ptrdiff_t>(n));
  } catch (const json::parse_error& e) {
    throw FormatError(std::string("manifest is not valid JSON: ") + e.what(), 8 + (e.byte > 0 ? e.byte - 1 : 0));
  }

  Parsed out;
  const std::size_t payload = 8 + n;
  const std::size_t payload_len = bytes.size() - payload;
  try {
    if (manifest.at("version").get<int>() != 1) throw FormatError("unsupported archive version", 8);
    out.meta = manifest.at("meta");
    for (const auto& [name, t] : manifest.at("tensors").items()) {
      const auto shape = t.at("shape").get<std::vector<std::size_t>>();
      const auto offset = t.at("offset").get<std::size_t>();
      const auto nbytes = t.at("nbytes").get<std::size_t>();
      if (shape.size() != 2 || shape[0] == 0 || shape[1] == 0)
        throw FormatError("tensor '" + name + "' has an invalid shape", 8);
      if (nbytes != shape[0] * shape[1] * 4)
        throw FormatError("tensor '" + name + "' nbytes does not match its shape", 8);
      if (offset > payload_len || nbytes > payload_len - offset)
        throw FormatError("tensor '" + name + "' payload is truncated", payload + std::min(offset, payload_len));
      Matrix m(shape[0], shape[1]);
      const std::uint8_t* p = bytes.data() + payload + offset;
      for (std::size_t i = 0; i < m.size(); ++i) {
        const float f = std::bit_cast<float>(get_u32_le(p + 4 * i));
        if (!std::isfinite(f))
          throw FormatError("tensor '" + name + "' holds a non-finite value", payload + offset + 4 * i);
        m[i] = f;
      }
      out.tensors.emplace(name, std::move(m));
    }
  } catch (const json::exception& e) {
    throw FormatError(std::string("malformed manifest: ") + e.what(), 8);
  }
  return out;
}

inline std::vector<std::string> meta_tasks(const json& meta) {
  try {
    auto tasks = meta.at("tasks").get<std::vector<std::string>>();
    if (tasks.empty()) throw FormatError("archive lists no tasks (K >= 1 required)", 8);
    return tasks;
  } catch (const json::exception& e) {
    throw FormatError(std::string("malformed meta.tasks: ") + e.what(), 8);
  }
}

inline std::size_t parse_index(const std::string& s, const std::string& name) {
  if (s.empty() || s.find_first_not_of("0123456789") != std::string::npos)
    throw ValidationError("tensor '" + name + "' has a malformed index");
  return std::stoul(s);
}

inline SlotKey slot_from_parts(const std::string& layer, const std::string& slot, const std::string& name) {
  return SlotKey{static_cast<std::uint32_t>(parse_index(layer, name)), slot};
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Encoding
// ---------------------------------------------------------------------------

inline Bytes encode(const AdapterCollection& c) {
  if (c.task_count() == 0) throw FormatError("cannot write an empty collection (K >= 1 required)");
  c.validate();
  for (const auto& t : c.tasks()) detail::check_name_part(t, "task id");
  for (const auto& s : c.slots()) detail::check_name_part(s.slot, "slot name");

  const bool vera = c.kind() == AdapterKind::VeRA;
  detail::Writer w;
  for (const auto& slot : c.slots()) {
    const std::string sp = detail::slot_prefix(slot);
    for (std::size_t t = 0; t < c.task_count(); ++t) {
      const std::string prefix = "task." + c.tasks()[t] + "." + sp + ".";
      if (vera) {
        const auto& v = c.vera(t, slot);
        w.add(prefix + "lambda_b", v.lambda_b);
        w.add(prefix + "lambda_d", v.lambda_d);
      } else {
        const auto& l = c.lora(t, slot);
        w.add(prefix + "A", l.A);
        w.add(prefix + "B", l.B);
      }
    }
    if (vera) {
      const auto& v0 = c.vera(0, slot);
      for (std::size_t t = 1; t < c.task_count(); ++t) {
        const auto& v = c.vera(t, slot);
        if (!(v.shared_A == v0.shared_A) || !(v.shared_B == v0.shared_B))
          throw ValidationError("VeRA frozen matrices differ across tasks in slot " + slot.str());
      }
      w.add("shared." + sp + ".A", v0.shared_A);
      w.add("shared." + sp + ".B", v0.shared_B);
    }
  }
  return w.finish({{"kind", vera ? "vera" : "lora"}, {"tasks", c.tasks()}});
}

inline Bytes encode(const MergedBundle& b) {
  if (b.tasks.empty()) throw FormatError("cannot write a bundle with no tasks (K >= 1 required)");
  b.validate();
  for (const auto& t : b.tasks) detail::check_name_part(t, "task id");

  detail::Writer w;
  json assignment = json::object();
  for (const auto& t : b.tasks) assignment[t] = json::object();
  for (const auto& [key, slot] : b.slots) {
    detail::check_name_part(key.slot, "slot name");
    const std::string sp = "merged." + detail::slot_prefix(key) + ".";
    const std::vector<std::size_t>* assign = nullptr;
    if (const auto* l = std::get_if<LoraBundleSlot>(&slot)) {
      w.add(sp + "A", l->A);
      for (std::size_t j = 0; j < l->Bs.size(); ++j) w.add(sp + "B." + std::to_string(j), l->Bs[j]);
      assign = &l->assignment;
    } else {
      const auto& v = std::get<VeraBundleSlot>(slot);
      w.add(sp + "lambda_d", v.lambda_d);
      for (std::size_t j = 0; j < v.lambda_bs.size(); ++j)
        w.add(sp + "lambda_b." + std::to_string(j), v.lambda_bs[j]);
      w.add("shared." + detail::slot_prefix(key) + ".A", v.shared_A);
      w.add("shared." + detail::slot_prefix(key) + ".B", v.shared_B);
      assign = &v.assignment;
    }
    for (std::size_t t = 0; t < b.tasks.size(); ++t) assignment[b.tasks[t]][key.str()] = (*assign)[t];
  }
  return w.finish({{"kind", "bundle"}, {"tasks", b.tasks}, {"method", b.method}, {"assignment", assignment}});
}

// ---------------------------------------------------------------------------
// Decoding
// ---------------------------------------------------------------------------

inline std::string archive_kind(std::span<const std::uint8_t> bytes) {
  auto parsed = detail::parse(bytes);
  try {
    return parsed.meta.at("kind").get<std::string>();
  } catch (const json::exception& e) {
    throw FormatError(std::string("malformed meta.kind: ") + e.what(), 8);
  }
}

inline AdapterCollection decode_collection(std::span<const std::uint8_t> bytes) {
  auto parsed = detail::parse(bytes);
  std::string kind;
  try {
    kind = parsed.meta.at("kind").get<std::string>();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("malformed meta.kind: ") + e.what(), 8);
  }
  if (kind != "lora" && kind != "vera")
    throw FormatError("archive kind '" + kind + "' is not an adapter collection", 8);
  const bool vera = kind == "vera";
  const auto tasks = detail::meta_tasks(parsed.meta);

  std::map<std::string, std::size_t> task_index;
  for (std::size_t i = 0; i < tasks.size(); ++i)
    if (!task_index.emplace(tasks[i], i).second) throw ValidationError("duplicate task id '" + tasks[i] + "'");

  std::set<SlotKey> slot_set;
  for (const auto& [name, m] : parsed.tensors) {
    const auto parts = detail::split(name, '.');
    if (parts.size() == 6 && parts[0] == "task" && parts[2] == "layer") {
      if (!task_index.count(parts[1])) throw ValidationError("tensor '" + name + "' names an unknown task");
      slot_set.insert(detail::slot_from_parts(parts[3], parts[4], name));
    } else if (!(vera && parts.size() == 5 && parts[0] == "shared" && parts[1] == "layer")) {
      throw ValidationError("unexpected tensor '" + name + "' in " + kind + " archive");
    }
  }
  if (slot_set.empty()) throw ValidationError("archive holds no adapter tensors");

  AdapterCollection c(tasks, {slot_set.begin(), slot_set.end()});
  for (const auto& slot : c.slots()) {
    const std::string sp = detail::slot_prefix(slot);
    std::optional<Matrix> shared_A, shared_B;
    if (vera) {
      shared_A = parsed.take("shared." + sp + ".A");
      shared_B = parsed.take("shared." + sp + ".B");
    }
    for (std::size_t t = 0; t < tasks.size(); ++t) {
      const std::string prefix = "task." + tasks[t] + "." + sp + ".";
      if (vera) {
        c.set(t, slot, VeraAdapter{parsed.take(prefix + "lambda_b"), parsed.take(prefix + "lambda_d"),
                                   *shared_B, *shared_A});
      } else {
        Matrix A = parsed.take(prefix + "A");
        Matrix B = parsed.take(prefix + "B");
        c.set(t, slot, LowRankAdapter{std::move(B), std::move(A)});
      }
    }
  }
  if (!parsed.tensors.empty())
    throw ValidationError("unexpected tensor '" + parsed.tensors.begin()->first + "'");
  c.validate();
  return c;
}

inline MergedBundle decode_bundle(std::span<const std::uint8_t> bytes) {
  auto parsed = detail::parse(bytes);
  MergedBundle b;
  json assignment;
  try {
    if (parsed.meta.at("kind").get<std::string>() != "bundle")
      throw FormatError("archive is not a merged bundle", 8);
    b.method = parsed.meta.at("method").get<std::string>();
    assignment = parsed.meta.at("assignment");
  } catch (const json::exception& e) {
    throw FormatError(std::string("malformed bundle meta: ") + e.what(), 8);
  }
  b.tasks = detail::meta_tasks(parsed.meta);

  // slot -> (is_vera, number of B / lambda_b tensors)
  std::map<SlotKey, std::pair<bool, std::size_t>> layout;
  for (const auto& [name, m] : parsed.tensors) {
    const auto parts = detail::split(name, '.');
    if (parts.size() < 5 || parts[1] != "layer") throw ValidationError("unexpected tensor '" + name + "'");
    const SlotKey key = detail::slot_from_parts(parts[2], parts[3], name);
    if (parts[0] == "shared") continue;
    if (parts[0] != "merged") throw ValidationError("unexpected tensor '" + name + "'");
    auto& [is_vera, count] = layout[key];
    if (parts.size() == 6 && (parts[4] == "B" || parts[4] == "lambda_b")) {
      is_vera = parts[4] == "lambda_b";
      count = std::max(count, detail::parse_index(parts[5], name) + 1);
    } else if (parts.size() == 5 && parts[4] == "lambda_d") {
      is_vera = true;
    } else if (!(parts.size() == 5 && parts[4] == "A")) {
      throw ValidationError("unexpected tensor '" + name + "'");
    }
  }

  for (const auto& [key, info] : layout) {
    const auto [is_vera, count] = info;
    const std::string sp = "merged." + detail::slot_prefix(key) + ".";
    std::vector<std::size_t> assign(b.tasks.size());
    for (std::size_t t = 0; t < b.tasks.size(); ++t) {
      try {
        assign[t] = assignment.at(b.tasks[t]).at(key.str()).get<std::size_t>();
      } catch (const json::exception&) {
        throw ValidationError("bundle assignment missing for task '" + b.tasks[t] + "' slot " + key.str());
      }
    }
    if (is_vera) {
      VeraBundleSlot s;
      s.lambda_d = parsed.take(sp + "lambda_d");
      for (std::size_t j = 0; j < count; ++j) s.lambda_bs.push_back(parsed.take(sp + "lambda_b." + std::to_string(j)));
      s.shared_A = parsed.take("shared." + detail::slot_prefix(key) + ".A");
      s.shared_B = parsed.take("shared." + detail::slot_prefix(key) + ".B");
      s.assignment = std::move(assign);
      b.slots.emplace(key, std::move(s));
    } else {
      LoraBundleSlot s;
      s.A = parsed.take(sp + "A");
      for (std::size_t j = 0; j < count; ++j) s.Bs.push_back(parsed.take(sp + "B." + std::to_string(j)));
      s.assignment = std::move(assign);
      b.slots.emplace(key, std::move(s));
    }
  }
  if (!parsed.tensors.empty())
    throw ValidationError("unexpected tensor '" + parsed.tensors.begin()->first + "'");
  b.validate();
  return b;
}

// ---------------------------------------------------------------------------
// Files
// ---------------------------------------------------------------------------

inline Bytes read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "' for reading");
  Bytes data((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (in.bad()) throw IoError("failed reading '" + path.string() + "'");
  return data;
}

inline void write_file(const std::filesystem::path& path, const Bytes& data) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  out.write(reinterpret_cast<const char*>(data.data()), static_cast<std::streamsize>(data.size()));
  if (!out) throw IoError("failed writing '" + path.string() + "'");
}

}  // namespace hydra::archive

namespace hydra {

inline AdapterCollection read_archive(const std::filesystem::path& path) {
  return archive::decode_collection(archive::read_file(path));
}

inline MergedBundle read_bundle(const std::filesystem::path& path) {
  return archive::decode_bundle(archive::read_file(path));
}

inline void write_archive(const AdapterCollection& c, const std::filesystem::path& path) {
  archive::write_file(path, archive::encode(c));
}

inline void write_archive(const MergedBundle& b, const std::filesystem::path& path) {
  archive::write_file(path, archive::encode(b));
}

}  // namespace hydra
