#pragma once

// Exact cosine-similarity nearest-neighbour search.
//
// Vectors are L2-normalised when the index is built, so a search is a dot
// product against every stored row followed by a partial sort. Ties are broken
// by ascending doc_id (then modality) so results never depend on insertion
// order.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "reag/core.hpp"

namespace reag {

class EmbeddingVector {
 public:
  EmbeddingVector() = default;

  explicit EmbeddingVector(std::vector<double> values) : values_(std::move(values)) {
    if (values_.empty()) throw DataError("embedding vector must have dim > 0");
    for (double v : values_)
      if (!std::isfinite(v)) throw DataError("embedding vector contains a non-finite entry");
  }

  std::size_t dim() const { return values_.size(); }
  std::span<const double> values() const { return values_; }
  double operator[](std::size_t i) const { return values_[i]; }

  double norm() const {
    double s = 0.0;
    for (double v : values_) s += v * v;
    return std::sqrt(s);
  }

  bool operator==(const EmbeddingVector&) const = default;

 private:
  std::vector<double> values_;
};

enum class ModalityTag { metadata, image };

inline std::string_view to_string(ModalityTag m) { return m == ModalityTag::metadata ? "metadata" : "image"; }

inline ModalityTag parse_modality_tag(std::string_view s) {
  if (s == "metadata") return ModalityTag::metadata;
  if (s == "image") return ModalityTag::image;
  throw DataError("unknown modality tag '" + std::string(s) + "'");
}

// Which stored modality a query searches against.
inline ModalityTag searched_modality(RetrievalModality m) {
  return m == RetrievalModality::image_to_text ? ModalityTag::metadata : ModalityTag::image;
}

struct IndexEntry {
  std::string doc_id;
  EmbeddingVector vector;
  ModalityTag modality = ModalityTag::metadata;
};

inline double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

inline double cosine(const EmbeddingVector& a, const EmbeddingVector& b) {
  if (a.dim() != b.dim())
    throw DataError("cosine: dimension mismatch (" + std::to_string(a.dim()) + " vs " + std::to_string(b.dim()) + ")");
  const double na = a.norm();
  const double nb = b.norm();
  if (na == 0.0 || nb == 0.0) throw DataError("cosine: zero-norm vector");
  return std::clamp(dot(a.values(), b.values()) / (na * nb), -1.0, 1.0);
}

// Anything that answers top-k queries. Lets callers substitute instrumented or
// approximate indexes.
class SearchIndex {
 public:
  virtual ~SearchIndex() = default;
  virtual std::size_t size() const = 0;
  virtual std::size_t dim() const = 0;
  virtual std::vector<RetrievalHit> search(const EmbeddingVector& query, int k,
                                           std::optional<ModalityTag> modality = std::nullopt,
                                           Stage stage = Stage::coarse) const = 0;
};

class VectorIndex final : public SearchIndex {
 public:
  VectorIndex() = default;

  static VectorIndex build(std::vector<IndexEntry> entries) {
    VectorIndex index;
    std::set<std::pair<std::string, ModalityTag>> keys;
    for (auto& e : entries) {
      if (index.dim_ == 0) index.dim_ = e.vector.dim();
      if (e.vector.dim() != index.dim_)
        throw DataError("index: entry '" + e.doc_id + "' has dim " + std::to_string(e.vector.dim()) +
                        ", expected " + std::to_string(index.dim_));
      if (!keys.emplace(e.doc_id, e.modality).second)
        throw DataError("index: duplicate entry for ('" + e.doc_id + "', " + std::string(to_string(e.modality)) + ")");
      const double n = e.vector.norm();
      if (n == 0.0) throw DataError("index: entry '" + e.doc_id + "' has a zero-norm vector");
      for (double v : e.vector.values()) index.data_.push_back(v / n);
      index.rows_.push_back({std::move(e.doc_id), e.modality});
    }
    return index;
  }

  std::size_t size() const override { return rows_.size(); }
  std::size_t dim() const override { return dim_; }

  std::vector<RetrievalHit> search(const EmbeddingVector& query, int k,
                                   std::optional<ModalityTag> modality = std::nullopt,
                                   Stage stage = Stage::coarse) const override {
    if (rows_.empty() || k <= 0) return {};
    if (query.dim() != dim_)
      throw DataError("search: query dim " + std::to_string(query.dim()) + " does not match index dim " +
                      std::to_string(dim_));
    const double qn = query.norm();
    if (qn == 0.0) throw DataError("search: zero-norm query");
    std::vector<double> q(query.values().begin(), query.values().end());
    for (double& v : q) v /= qn;

    struct Scored {
      double score;
      std::size_t row;
    };
    std::vector<Scored> scored;
    scored.reserve(rows_.size());
    for (std::size_t r = 0; r < rows_.size(); ++r) {
      if (modality && rows_[r].modality != *modality) continue;
      scored.push_back({dot(row(r), q), r});
    }
    auto better = [this](const Scored& a, const Scored& b) {
      if (a.score != b.score) return a.score > b.score;
      if (rows_[a.row].doc_id != rows_[b.row].doc_id) return rows_[a.row].doc_id < rows_[b.row].doc_id;
      return rows_[a.row].modality < rows_[b.row].modality;
    };
    const auto n = std::min<std::size_t>(static_cast<std::size_t>(k), scored.size());
    std::partial_sort(scored.begin(), scored.begin() + static_cast<std::ptrdiff_t>(n), scored.end(), better);

    std::vector<RetrievalHit> hits;
    hits.reserve(n);
    for (std::size_t i = 0; i < n; ++i) hits.push_back({rows_[scored[i].row].doc_id, scored[i].score, stage});
    return hits;
  }

  std::span<const double> row(std::size_t r) const { return {data_.data() + r * dim_, dim_}; }
  const std::string& doc_id(std::size_t r) const { return rows_[r].doc_id; }
  ModalityTag modality(std::size_t r) const { return rows_[r].modality; }

  // Binary layout, little-endian: u64 dim, u64 count, then count*dim f64
  // (normalised rows). The JSON sidecar at `path + ".json"` maps each row to
  // (doc_id, modality_tag).
  void save(const std::string& path) const {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot write index file '" + path + "'");
    write_u64(out, dim_);
    write_u64(out, rows_.size());
    for (double v : data_) {
      std::uint64_t bits;
      std::memcpy(&bits, &v, sizeof bits);
      write_u64(out, bits);
    }
    json rows = json::array();
    for (const auto& r : rows_) rows.push_back({{"doc_id", r.doc_id}, {"modality_tag", to_string(r.modality)}});
    std::ofstream side(path + ".json", std::ios::trunc);
    if (!side) throw DataError("cannot write index sidecar '" + path + ".json'");
    side << json{{"dim", dim_}, {"count", rows_.size()}, {"rows", rows}}.dump(1) << '\n';
  }

  static VectorIndex load(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open index file '" + path + "'");
    std::ifstream side(path + ".json");
    if (!side) throw DataError("cannot open index sidecar '" + path + ".json'");
    VectorIndex index;
    index.dim_ = read_u64(in);
    const auto count = read_u64(in);
    index.data_.resize(index.dim_ * count);
    for (auto& v : index.data_) {
      const std::uint64_t bits = read_u64(in);
      std::memcpy(&v, &bits, sizeof v);
    }
    json meta;
    try {
      meta = json::parse(side);
    } catch (const json::exception& e) {
      throw DataError("malformed index sidecar: " + std::string(e.what()));
    }
    const auto& rows = meta.at("rows");
    if (rows.size() != count || meta.value("dim", std::size_t{0}) != index.dim_)
      throw DataError("index sidecar does not match binary header");
    for (const auto& r : rows)
      index.rows_.push_back({r.at("doc_id").get<std::string>(), parse_modality_tag(r.at("modality_tag").get<std::string>())});
    return index;
  }

 private:
  struct Row {
    std::string doc_id;
    ModalityTag modality;
  };

  static void write_u64(std::ostream& out, std::uint64_t v) {
    unsigned char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
    out.write(reinterpret_cast<const char*>(b), 8);
  }

  static std::uint64_t read_u64(std::istream& in) {
    unsigned char b[8];
    if (!in.read(reinterpret_cast<char*>(b), 8)) throw DataError("truncated index file");
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
    return v;
  }

  std::size_t dim_ = 0;
  std::vector<double> data_;
  std::vector<Row> rows_;
};

}  // namespace reag
