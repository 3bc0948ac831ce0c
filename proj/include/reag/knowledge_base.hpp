#pragma once

#include <cstddef>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "reag/core.hpp"

namespace reag {

// Immutable collection of documents keyed by doc_id. Document order is the
// ingestion order and is preserved.
class KnowledgeBase {
 public:
  KnowledgeBase() = default;

  explicit KnowledgeBase(std::vector<Document> docs) : docs_(std::move(docs)) {
    by_id_.reserve(docs_.size());
    for (std::size_t i = 0; i < docs_.size(); ++i) {
      validate(docs_[i]);
      if (!by_id_.emplace(docs_[i].doc_id, i).second)
        throw DataError("duplicate doc_id '" + docs_[i].doc_id + "'");
    }
  }

  const std::vector<Document>& documents() const { return docs_; }
  std::size_t size() const { return docs_.size(); }
  bool empty() const { return docs_.empty(); }

  const Document* find(const std::string& doc_id) const {
    auto it = by_id_.find(doc_id);
    return it == by_id_.end() ? nullptr : &docs_[it->second];
  }

  const Document& at(const std::string& doc_id) const {
    if (const auto* d = find(doc_id)) return *d;
    throw DataError("unknown doc_id '" + doc_id + "'");
  }

  std::size_t passage_count() const {
    std::size_t n = 0;
    for (const auto& d : docs_) n += d.passages.size();
    return n;
  }

 private:
  std::vector<Document> docs_;
  std::unordered_map<std::string, std::size_t> by_id_;
};

}  // namespace reag
