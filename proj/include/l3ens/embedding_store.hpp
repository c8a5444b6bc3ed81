#pragma once

#include <bit>
#include <cmath>
#include <cstring>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <nlohmann/json.hpp>

#include "l3ens/dataset.hpp"
#include "l3ens/digest.hpp"
#include "l3ens/error.hpp"
#include "l3ens/io.hpp"
#include "l3ens/text.hpp"

namespace l3ens {

// Dense frozen-encoder output, one row per example id. Immutable once built.
class EmbeddingMatrix {
 public:
  EmbeddingMatrix() = default;

  EmbeddingMatrix(std::string source_name, std::size_t dim, std::vector<std::string> ids,
                  std::vector<float> rows)
      : source_name_(std::move(source_name)), dim_(dim), ids_(std::move(ids)),
        rows_(std::move(rows)) {
    if (dim_ == 0) throw Error(ErrorCode::DimZero, "embedding matrix '" + source_name_ + "' has dim 0");
    if (rows_.size() != ids_.size() * dim_) {
      throw Error(ErrorCode::ShapeMismatch,
                  "embedding matrix '" + source_name_ + "': " + std::to_string(ids_.size()) +
                      " ids but " + std::to_string(rows_.size()) + " values at dim " +
                      std::to_string(dim_));
    }
    index_.reserve(ids_.size());
    for (std::size_t i = 0; i < ids_.size(); ++i) {
      if (!index_.emplace(ids_[i], i).second) {
        throw Error(ErrorCode::DuplicateId,
                    "embedding matrix '" + source_name_ + "': duplicate id '" + ids_[i] + "'");
      }
    }
    for (std::size_t i = 0; i < rows_.size(); ++i) {
      if (!std::isfinite(rows_[i])) {
        throw Error(ErrorCode::NonFiniteValue, "embedding matrix '" + source_name_ +
                                                   "': non-finite value in row " +
                                                   std::to_string(i / dim_));
      }
    }
  }

  const std::string& source_name() const { return source_name_; }
  std::size_t dim() const { return dim_; }
  std::size_t count() const { return ids_.size(); }
  const std::vector<std::string>& ids() const { return ids_; }
  std::span<const float> values() const { return rows_; }

  std::span<const float> row(std::size_t i) const {
    return std::span<const float>(rows_).subspan(i * dim_, dim_);
  }

  std::optional<std::size_t> find(std::string_view id) const {
    auto it = index_.find(std::string(id));
    if (it == index_.end()) return std::nullopt;
    return it->second;
  }

  // Bit-exact equality (NaN cannot occur, so float == is bitwise except ±0).
  friend bool operator==(const EmbeddingMatrix& a, const EmbeddingMatrix& b) {
    if (a.source_name_ != b.source_name_ || a.dim_ != b.dim_ || a.ids_ != b.ids_ ||
        a.rows_.size() != b.rows_.size()) {
      return false;
    }
    for (std::size_t i = 0; i < a.rows_.size(); ++i) {
      if (std::bit_cast<std::uint32_t>(a.rows_[i]) != std::bit_cast<std::uint32_t>(b.rows_[i])) {
        return false;
      }
    }
    return true;
  }

 private:
  std::string source_name_;
  std::size_t dim_ = 1;
  std::vector<std::string> ids_;
  std::vector<float> rows_;
  std::unordered_map<std::string, std::size_t> index_;
};

struct EmbeddingManifest {
  std::string source_name;
  std::string dataset_name;
  std::string split_name;
  std::size_t dim = 0;
  std::size_t count = 0;
  std::vector<std::string> ids;
  std::string content_digest;

  nlohmann::ordered_json to_json() const {
    nlohmann::ordered_json j;
    j["source_name"] = source_name;
    j["dataset_name"] = dataset_name;
    j["split_name"] = split_name;
    j["dim"] = dim;
    j["count"] = count;
    j["ids"] = ids;
    j["content_digest"] = content_digest;
    return j;
  }
};

namespace l3em {
inline constexpr char kMagic[4] = {'L', '3', 'E', 'M'};
inline constexpr std::uint32_t kVersion = 1;
// magic(4) + version(4) + dim(4) + count(8)
inline constexpr std::size_t kHeaderBytes = 20;

inline std::filesystem::path manifest_path(const std::filesystem::path& path) {
  auto m = path;
  m += ".manifest.json";
  return m;
}

inline std::vector<std::byte> encode(const EmbeddingMatrix& m) {
  std::vector<std::byte> out;
  out.reserve(kHeaderBytes + 4 * m.values().size());
  for (char c : kMagic) out.push_back(static_cast<std::byte>(c));
  io::put_u32(out, kVersion);
  io::put_u32(out, static_cast<std::uint32_t>(m.dim()));
  io::put_u64(out, static_cast<std::uint64_t>(m.count()));
  for (float v : m.values()) io::put_f32(out, v);
  return out;
}
}  // namespace l3em

struct StoreOptions {
  std::string dataset_name;
  std::string split_name;
};

// Writes the L3EM binary and its <path>.manifest.json sidecar.
inline EmbeddingManifest store_embeddings(const EmbeddingMatrix& m,
                                          const std::filesystem::path& path,
                                          const StoreOptions& opts = {}) {
  const auto bytes = l3em::encode(m);
  EmbeddingManifest manifest{m.source_name(), opts.dataset_name, opts.split_name, m.dim(),
                             m.count(),       m.ids(),           sha256_hex(bytes)};
  io::write_atomic(path, bytes);
  io::write_atomic(l3em::manifest_path(path), manifest.to_json().dump(2) + "\n");
  return manifest;
}

inline EmbeddingManifest read_manifest(const std::filesystem::path& path) {
  const auto mpath = l3em::manifest_path(path);
  if (!std::filesystem::exists(mpath)) {
    throw Error(ErrorCode::IoFailure, "manifest sidecar missing: " + mpath.string());
  }
  EmbeddingManifest m;
  try {
    const auto j = nlohmann::json::parse(io::read_text(mpath));
    m.source_name = j.at("source_name").get<std::string>();
    m.dataset_name = j.value("dataset_name", "");
    m.split_name = j.value("split_name", "");
    m.dim = j.at("dim").get<std::size_t>();
    m.count = j.at("count").get<std::size_t>();
    m.ids = j.at("ids").get<std::vector<std::string>>();
    m.content_digest = j.at("content_digest").get<std::string>();
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::ParseError, mpath.string() + ": " + e.what());
  }
  return m;
}

// Validates header, manifest agreement and digest before decoding any value.
inline EmbeddingMatrix load_embeddings(const std::filesystem::path& path,
                                       EmbeddingManifest* manifest_out = nullptr) {
  const auto file = path.string();
  const auto bytes = io::read_file(path);
  const auto manifest = read_manifest(path);
  const std::span<const std::byte> buf(bytes);

  if (buf.size() < l3em::kHeaderBytes) {
    if (buf.size() < 4 || std::memcmp(buf.data(), l3em::kMagic, 4) != 0) {
      throw Error(ErrorCode::BadMagic, file + " at byte 0: not an L3EM file");
    }
    throw Error(ErrorCode::Truncated, file + ": header truncated at byte " + std::to_string(buf.size()));
  }
  if (std::memcmp(buf.data(), l3em::kMagic, 4) != 0) {
    throw Error(ErrorCode::BadMagic, file + " at byte 0: expected \"L3EM\"");
  }
  const auto version = io::get_u32(buf, 4);
  if (version != l3em::kVersion) {
    throw Error(ErrorCode::VersionMismatch, file + " at byte 4: version " + std::to_string(version) +
                                                ", expected " + std::to_string(l3em::kVersion));
  }
  const std::size_t dim = io::get_u32(buf, 8);
  if (dim == 0) throw Error(ErrorCode::DimZero, file + " at byte 8: dim is 0");
  const std::uint64_t count = io::get_u64(buf, 12);

  if (manifest.dim != dim || manifest.count != count || manifest.ids.size() != count) {
    throw Error(ErrorCode::ManifestMismatch,
                file + ": header says dim=" + std::to_string(dim) + " count=" + std::to_string(count) +
                    ", manifest says dim=" + std::to_string(manifest.dim) +
                    " count=" + std::to_string(manifest.count) +
                    " ids=" + std::to_string(manifest.ids.size()));
  }
  const std::size_t expected = l3em::kHeaderBytes + 4 * dim * count;
  if (buf.size() != expected) {
    throw Error(ErrorCode::Truncated, file + ": expected " + std::to_string(expected) +
                                          " bytes, found " + std::to_string(buf.size()));
  }
  if (sha256_hex(buf) != manifest.content_digest) {
    throw Error(ErrorCode::DigestMismatch, file + ": SHA-256 does not match manifest content_digest");
  }

  std::vector<float> rows(dim * count);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const std::size_t off = l3em::kHeaderBytes + 4 * i;
    rows[i] = io::get_f32(buf, off);
    if (!std::isfinite(rows[i])) {
      throw Error(ErrorCode::NonFiniteValue, file + ": non-finite value in row " +
                                                 std::to_string(i / dim) + " at byte " +
                                                 std::to_string(off));
    }
  }
  if (manifest_out) *manifest_out = manifest;
  try {
    return EmbeddingMatrix(manifest.source_name, dim, manifest.ids, std::move(rows));
  } catch (const Error& e) {
    throw Error(e.code(), file + ": " + e.what());
  }
}

// Feature-hashing encoder: each lowercased token adds ±1 at a hashed index;
// rows are L2-normalized unless empty.
inline std::vector<float> hash_encode_text(std::string_view text, std::size_t dim,
                                           std::uint64_t seed) {
  std::vector<double> acc(dim, 0.0);
  for (const auto& tok : tokenize(text)) {
    const auto h = seeded_hash(tok, seed);
    acc[(h >> 1) % dim] += (h & 1) ? 1.0 : -1.0;
  }
  double norm2 = 0.0;
  for (double v : acc) norm2 += v * v;
  std::vector<float> row(dim, 0.0f);
  if (norm2 > 0.0) {
    const double inv = 1.0 / std::sqrt(norm2);
    for (std::size_t i = 0; i < dim; ++i) row[i] = static_cast<float>(acc[i] * inv);
  }
  return row;
}

inline EmbeddingMatrix hash_encode(std::span<const std::string> texts, std::size_t dim,
                                   std::uint64_t seed, std::vector<std::string> ids = {},
                                   std::string source_name = {}) {
  if (dim == 0) throw Error(ErrorCode::DimZero, "hash_encode: dim must be >= 1");
  if (ids.empty()) {
    ids.reserve(texts.size());
    for (std::size_t i = 0; i < texts.size(); ++i) ids.push_back(std::to_string(i));
  }
  if (ids.size() != texts.size()) {
    throw Error(ErrorCode::ShapeMismatch, "hash_encode: ids and texts differ in length");
  }
  if (source_name.empty()) {
    source_name = "hash-d" + std::to_string(dim) + "-s" + std::to_string(seed);
  }
  std::vector<float> rows;
  rows.reserve(texts.size() * dim);
  for (const auto& t : texts) {
    const auto r = hash_encode_text(t, dim, seed);
    rows.insert(rows.end(), r.begin(), r.end());
  }
  return EmbeddingMatrix(std::move(source_name), dim, std::move(ids), std::move(rows));
}

// Encodes every example of a dataset, ids in dataset order.
inline EmbeddingMatrix hash_encode(const TaskDataset& ds, std::size_t dim, std::uint64_t seed,
                                   std::string source_name = {}) {
  std::vector<std::string> texts, ids;
  for (const auto& ex : ds.examples) {
    texts.push_back(ex.text());
    ids.push_back(ex.id);
  }
  return hash_encode(texts, dim, seed, std::move(ids), std::move(source_name));
}

// Labeled rows in a fixed order, owned, widened to double for the heads.
struct AlignedSet {
  std::size_t dim = 0;
  std::vector<std::string> ids;
  std::vector<double> features;  // ids.size() x dim, row-major
  std::vector<double> targets;

  std::size_t size() const { return ids.size(); }
  bool empty() const { return ids.empty(); }
  std::span<const double> row(std::size_t i) const {
    return std::span<const double>(features).subspan(i * dim, dim);
  }
};

// Rows for exactly `ids`, in that order; every missing id is reported.
inline AlignedSet align(const TaskDataset& dataset, std::span<const std::string> ids,
                        const EmbeddingMatrix& matrix) {
  const auto ex_index = dataset.index();
  AlignedSet out;
  out.dim = matrix.dim();
  out.ids.assign(ids.begin(), ids.end());
  out.features.reserve(ids.size() * matrix.dim());
  out.targets.reserve(ids.size());
  std::vector<std::string> missing;
  for (const auto& id : ids) {
    const auto ex = ex_index.find(id);
    if (ex == ex_index.end()) {
      throw Error(ErrorCode::InvalidDataset, "id '" + id + "' is not in dataset " + dataset.name);
    }
    const auto r = matrix.find(id);
    if (!r) {
      missing.push_back(id);
      continue;
    }
    for (float v : matrix.row(*r)) out.features.push_back(v);
    out.targets.push_back(dataset.examples[ex->second].label);
  }
  if (!missing.empty()) {
    std::string list;
    for (const auto& id : missing) list += (list.empty() ? "" : ", ") + id;
    throw Error(ErrorCode::MissingEmbedding, "source '" + matrix.source_name() + "' lacks " +
                                                 std::to_string(missing.size()) + " id(s) of dataset " +
                                                 dataset.name + ": " + list);
  }
  return out;
}

inline AlignedSet align(const TaskDataset& dataset, const EmbeddingMatrix& matrix) {
  std::vector<std::string> ids;
  for (const auto& ex : dataset.examples) ids.push_back(ex.id);
  return align(dataset, ids, matrix);
}

inline AlignedSet align(const TaskDataset& dataset, Split split, const EmbeddingMatrix& matrix) {
  return align(dataset, dataset.split(split), matrix);
}

}  // namespace l3ens
