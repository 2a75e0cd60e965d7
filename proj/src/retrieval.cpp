#include "viewalign/retrieval.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <json.hpp>
#include <set>
#include <sstream>

#include "viewalign/errors.hpp"

namespace viewalign::retrieval {

namespace {

using nlohmann::json;

constexpr int kIndexVersion = 1;

std::string joined_or_none(const std::vector<std::string>& items) {
  std::string out;
  for (const auto& s : items) {
    if (s.empty()) continue;
    if (!out.empty()) out += ", ";
    out += s;
  }
  return out.empty() ? "none" : out;
}

std::string or_none(const std::string& s) { return s.empty() ? "none" : s; }

// Similarities equal to 1e-9 count as ties, so rounding noise in the dot
// product never overrides the id order.
long long tie_key(double similarity) { return std::llround(similarity * 1e9); }

bool by_similarity(const ScoredEntry& a, const ScoredEntry& b) {
  const long long ka = tie_key(a.similarity);
  const long long kb = tie_key(b.similarity);
  if (ka != kb) return ka > kb;
  return a.id < b.id;
}

GalleryEntry entry_from_json(const json& j) {
  if (!j.is_object()) throw Error(ErrorCode::kInvalidFile, "record is not a JSON object");
  GalleryEntry e;
  if (!j.contains("id") || !j["id"].is_string() || j["id"].get<std::string>().empty()) {
    throw Error(ErrorCode::kInvalidFile, "record without a string id");
  }
  e.id = j["id"].get<std::string>();
  try {
    e.description = j.value("description", "");
    e.objects = j.value("objects", std::vector<std::string>{});
    e.metadata = j.value("metadata", "");
    e.people_count = j.value("people_count", 0);
    e.image_path = j.value("image_path", "");
  } catch (const json::exception& ex) {
    throw Error(ErrorCode::kInvalidFile, "record " + e.id + ": " + ex.what());
  }
  if (e.people_count < 0) throw Error(ErrorCode::kInvalidFile, "record " + e.id + ": negative people_count");
  return e;
}

json entry_to_json(const GalleryEntry& e) {
  json j;
  j["id"] = e.id;
  j["description"] = e.description;
  j["objects"] = e.objects;
  j["metadata"] = e.metadata;
  j["people_count"] = e.people_count;
  j["image_path"] = e.image_path;
  return j;
}

}  // namespace

void UserPrompt::validate() const {
  if (std::all_of(query.begin(), query.end(), [](unsigned char c) { return std::isspace(c); })) {
    throw Error(ErrorCode::kInvalidArgument, "query must not be empty");
  }
  if (people_count && *people_count < 0) {
    throw Error(ErrorCode::kInvalidArgument, "people_count must be >= 0");
  }
}

void RetrievalConfig::validate() const {
  if (m_star < 1 || m_star > m) throw Error(ErrorCode::kInvalidArgument, "need 1 <= m_star <= m");
}

std::string build_caption(const GalleryEntry& e) {
  return "Description: " + or_none(e.description) + ". Objects: " + joined_or_none(e.objects) +
         ". Metadata: " + or_none(e.metadata) + ". People: " + std::to_string(e.people_count) + ".";
}

std::string prompt_text(const UserPrompt& p) {
  return "Query: " + or_none(p.query) + ". Objects: " + joined_or_none(p.detected_objects) +
         ". People: " + (p.people_count ? std::to_string(*p.people_count) : std::string("none")) + ".";
}

std::vector<std::string> tokenize(const std::string& text) {
  std::vector<std::string> out;
  std::string cur;
  for (unsigned char c : text) {
    if (std::isalnum(c)) {
      cur += static_cast<char>(std::tolower(c));
    } else if (!cur.empty()) {
      out.push_back(std::move(cur));
      cur.clear();
    }
  }
  if (!cur.empty()) out.push_back(std::move(cur));
  return out;
}

HashingEmbedder::HashingEmbedder(int dimension) : dim_(dimension) {
  if (dimension < 1) throw Error(ErrorCode::kInvalidArgument, "embedding dimension must be >= 1");
}

std::string HashingEmbedder::name() const { return "hashing-bow-" + std::to_string(dim_); }

Eigen::VectorXd HashingEmbedder::embed(const std::string& text) const {
  Eigen::VectorXd v = Eigen::VectorXd::Zero(dim_);
  for (const std::string& tok : tokenize(text)) {
    std::uint64_t h = 14695981039346656037ULL;
    for (unsigned char c : tok) {
      h ^= c;
      h *= 1099511628211ULL;
    }
    v[static_cast<Eigen::Index>(h % static_cast<std::uint64_t>(dim_))] += 1.0;
  }
  const double n = v.norm();
  if (n == 0.0) throw Error(ErrorCode::kEmbedderFailure, "text has no tokens");
  return v / n;
}

EmbeddingIndex EmbeddingIndex::assemble(std::vector<GalleryEntry> entries,
                                        std::vector<Eigen::VectorXd> vectors, std::string embedder,
                                        int dim) {
  EmbeddingIndex idx;
  idx.embedder_ = std::move(embedder);
  idx.dim_ = dim;
  idx.matrix_.resize(static_cast<Eigen::Index>(entries.size()), dim);
  for (std::size_t i = 0; i < entries.size(); ++i) {
    if (!idx.by_id_.emplace(entries[i].id, i).second) {
      throw Error(ErrorCode::kDuplicateId, "duplicate gallery id " + entries[i].id);
    }
    idx.matrix_.row(static_cast<Eigen::Index>(i)) = vectors[i].transpose();
    idx.captions_.push_back(build_caption(entries[i]));
    idx.embedded_.push_back({entries[i].id, std::move(vectors[i])});
  }
  idx.entries_ = std::move(entries);
  return idx;
}

EmbeddingIndex EmbeddingIndex::build(std::vector<GalleryEntry> entries, const TextEmbedder& embedder) {
  std::set<std::string> seen;
  for (const auto& e : entries) {
    if (!seen.insert(e.id).second) throw Error(ErrorCode::kDuplicateId, "duplicate gallery id " + e.id);
    if (e.people_count < 0) throw Error(ErrorCode::kInvalidArgument, "entry " + e.id + ": negative people_count");
  }
  const int dim = embedder.dimension();
  std::vector<Eigen::VectorXd> vectors;
  vectors.reserve(entries.size());
  for (const auto& e : entries) {
    Eigen::VectorXd v;
    try {
      v = embedder.embed(build_caption(e));
    } catch (const std::exception& ex) {
      throw Error(ErrorCode::kEmbedderFailure, "entry " + e.id + ": " + ex.what());
    }
    if (v.size() != dim || !v.allFinite() || v.norm() == 0.0) {
      throw Error(ErrorCode::kEmbedderFailure, "entry " + e.id + ": embedder returned an invalid vector");
    }
    vectors.push_back(v / v.norm());
  }
  return assemble(std::move(entries), std::move(vectors), embedder.name(), dim);
}

const GalleryEntry& EmbeddingIndex::entry(const std::string& id) const {
  const auto it = by_id_.find(id);
  if (it == by_id_.end()) throw Error(ErrorCode::kInvalidArgument, "unknown entry id " + id);
  return entries_[it->second];
}

const std::string& EmbeddingIndex::caption(const std::string& id) const {
  entry(id);
  return captions_[by_id_.at(id)];
}

std::vector<ScoredEntry> EmbeddingIndex::top_m(const Eigen::VectorXd& query, int m) const {
  if (empty()) throw Error(ErrorCode::kEmptyIndex, "index has no entries");
  if (query.size() != dim_) throw Error(ErrorCode::kDimensionMismatch, "query embedding dimension");
  if (m < 1) throw Error(ErrorCode::kInvalidArgument, "m must be >= 1");
  const double qn = query.norm();
  if (!(qn > 0.0)) throw Error(ErrorCode::kInvalidArgument, "query embedding has zero norm");
  const Eigen::VectorXd sims = matrix_ * (query / qn);
  std::vector<ScoredEntry> all(entries_.size());
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = {entries_[i].id, sims[static_cast<Eigen::Index>(i)]};
  const std::size_t keep = std::min(all.size(), static_cast<std::size_t>(m));
  std::partial_sort(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(keep), all.end(), by_similarity);
  all.resize(keep);
  return all;
}

void EmbeddingIndex::save(std::ostream& out) const {
  json j;
  j["format"] = "viewalign-index";
  j["version"] = kIndexVersion;
  j["embedder"] = embedder_;
  j["dimension"] = dim_;
  j["entries"] = json::array();
  for (std::size_t i = 0; i < entries_.size(); ++i) {
    json e = entry_to_json(entries_[i]);
    e["embedding"] = std::vector<double>(embedded_[i].embedding.data(),
                                         embedded_[i].embedding.data() + embedded_[i].embedding.size());
    j["entries"].push_back(std::move(e));
  }
  out << j.dump() << "\n";
  if (!out) throw Error(ErrorCode::kInvalidFile, "failed to write index");
}

EmbeddingIndex EmbeddingIndex::load(std::istream& in) {
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kInvalidFile, std::string("index is not valid JSON: ") + e.what());
  }
  try {
    if (j.at("format") != "viewalign-index" || j.at("version") != kIndexVersion) {
      throw Error(ErrorCode::kInvalidFile, "unsupported index format");
    }
    const int dim = j.at("dimension").get<int>();
    std::vector<GalleryEntry> entries;
    std::vector<Eigen::VectorXd> vectors;
    for (const json& e : j.at("entries")) {
      entries.push_back(entry_from_json(e));
      const auto v = e.at("embedding").get<std::vector<double>>();
      if (static_cast<int>(v.size()) != dim) {
        throw Error(ErrorCode::kInvalidFile, "entry " + entries.back().id + ": embedding dimension");
      }
      Eigen::VectorXd x = Eigen::Map<const Eigen::VectorXd>(v.data(), dim);
      if (!x.allFinite() || std::abs(x.norm() - 1.0) > 1e-6) {
        throw Error(ErrorCode::kInvalidFile, "entry " + entries.back().id + ": embedding not unit norm");
      }
      vectors.push_back(std::move(x));
    }
    return assemble(std::move(entries), std::move(vectors), j.at("embedder").get<std::string>(), dim);
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kInvalidFile, std::string("malformed index: ") + e.what());
  }
}

void EmbeddingIndex::save(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::kInvalidFile, "cannot open " + path.string());
  save(out);
}

EmbeddingIndex EmbeddingIndex::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::kInvalidFile, "cannot open " + path.string());
  return load(in);
}

EmbeddingIndex index_gallery(std::vector<GalleryEntry> entries, const TextEmbedder& embedder) {
  return EmbeddingIndex::build(std::move(entries), embedder);
}

std::vector<ScoredEntry> coarse_retrieve(const UserPrompt& prompt, const EmbeddingIndex& index,
                                         const TextEmbedder& embedder, const RetrievalConfig& cfg) {
  prompt.validate();
  cfg.validate();
  if (index.empty()) throw Error(ErrorCode::kEmptyIndex, "index has no entries");
  if (embedder.name() != index.embedder_name()) {
    throw Error(ErrorCode::kInvalidArgument,
                "index was built with " + index.embedder_name() + ", not " + embedder.name());
  }
  return index.top_m(embedder.embed(prompt_text(prompt)), cfg.m);
}

RankerResponse MockRanker::rank(const RankerRequest& request) const {
  static const std::set<std::string> labels = {"description", "objects", "metadata", "people",
                                               "query", "none"};
  std::set<std::string> keywords;
  for (const auto& t : tokenize(request.prompt.query)) keywords.insert(t);
  for (const auto& o : request.prompt.detected_objects) {
    for (const auto& t : tokenize(o)) keywords.insert(t);
  }
  for (const auto& l : labels) keywords.erase(l);

  struct Scored {
    const Candidate* c;
    std::vector<std::string> matched;
  };
  std::vector<Scored> scored;
  for (const Candidate& c : request.candidates) {
    const auto toks = tokenize(c.caption);
    const std::set<std::string> words(toks.begin(), toks.end());
    Scored s{&c, {}};
    for (const auto& k : keywords) {
      if (words.count(k)) s.matched.push_back(k);
    }
    scored.push_back(std::move(s));
  }
  std::stable_sort(scored.begin(), scored.end(), [](const Scored& a, const Scored& b) {
    if (a.matched.size() != b.matched.size()) return a.matched.size() > b.matched.size();
    return a.c->id < b.c->id;
  });
  RankerResponse out;
  const std::size_t n = std::min(scored.size(), static_cast<std::size_t>(std::max(0, request.m_star)));
  std::ostringstream why;
  for (std::size_t i = 0; i < n; ++i) {
    out.ids.push_back(scored[i].c->id);
    if (i) why << " ";
    why << scored[i].c->id << " matches ";
    if (scored[i].matched.empty()) why << "no keywords";
    for (std::size_t k = 0; k < scored[i].matched.size(); ++k) {
      why << (k ? ", " : "") << scored[i].matched[k];
    }
    why << ".";
  }
  out.explanation = why.str();
  return out;
}

Suggestion rerank(const UserPrompt& prompt, const std::vector<Candidate>& candidates,
                  const Ranker& ranker, const RetrievalConfig& cfg, int retries) {
  prompt.validate();
  cfg.validate();
  if (candidates.empty()) throw Error(ErrorCode::kEmptyInput, "no candidates to rerank");
  if (static_cast<int>(candidates.size()) > cfg.m) {
    throw Error(ErrorCode::kInvalidArgument, "more than m candidates for the ranker");
  }
  std::set<std::string> allowed;
  for (const auto& c : candidates) {
    if (!allowed.insert(c.id).second) throw Error(ErrorCode::kDuplicateId, "duplicate candidate " + c.id);
  }
  RankerRequest req{prompt, prompt_text(prompt), candidates, cfg.m_star};
  const std::size_t want = std::min(candidates.size(), static_cast<std::size_t>(cfg.m_star));

  Suggestion out;
  for (int attempt = 0;; ++attempt) {
    out.attempts = attempt + 1;
    try {
      RankerResponse r = ranker.rank(req);
      std::set<std::string> seen;
      for (const auto& id : r.ids) {
        if (!allowed.count(id)) throw Error(ErrorCode::kRankerProtocolError, "ranker returned unknown id " + id);
        if (!seen.insert(id).second) throw Error(ErrorCode::kRankerProtocolError, "ranker repeated id " + id);
      }
      if (r.ids.size() != want) {
        throw Error(ErrorCode::kRankerProtocolError, "ranker returned " + std::to_string(r.ids.size()) +
                                                         " ids, expected " + std::to_string(want));
      }
      out.ids = std::move(r.ids);
      out.explanation = std::move(r.explanation);
      return out;
    } catch (const Error& e) {
      const bool ranker_error =
          e.code() == ErrorCode::kRankerProtocolError || e.code() == ErrorCode::kRankerUnavailable;
      if (!ranker_error || attempt >= retries) throw;
    }
  }
}

SuggestResult suggest(const UserPrompt& prompt, const EmbeddingIndex& index,
                      const TextEmbedder& embedder, const Ranker& ranker,
                      const RetrievalConfig& cfg, int retries) {
  SuggestResult out;
  out.shortlist = coarse_retrieve(prompt, index, embedder, cfg);
  std::vector<Candidate> candidates;
  for (const auto& s : out.shortlist) candidates.push_back({s.id, index.caption(s.id)});
  out.suggestion = rerank(prompt, candidates, ranker, cfg, retries);
  return out;
}

std::vector<GalleryEntry> read_manifest(std::istream& in) {
  std::vector<GalleryEntry> out;
  std::set<std::string> seen;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (std::all_of(line.begin(), line.end(), [](unsigned char c) { return std::isspace(c); })) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception&) {
      throw Error(ErrorCode::kInvalidFile, "line " + std::to_string(line_no) + ": not valid JSON");
    }
    std::string id = j.is_object() && j.contains("id") && j["id"].is_string() ? j["id"].get<std::string>() : "";
    try {
      GalleryEntry e = entry_from_json(j);
      if (!seen.insert(e.id).second) throw Error(ErrorCode::kDuplicateId, "duplicate id " + e.id);
      out.push_back(std::move(e));
    } catch (const Error& e) {
      throw Error(e.code() == ErrorCode::kDuplicateId ? e.code() : ErrorCode::kInvalidFile,
                  "line " + std::to_string(line_no) + (id.empty() ? "" : " (id " + id + ")") + ": " +
                      e.detail());
    }
  }
  return out;
}

std::vector<GalleryEntry> load_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::kInvalidFile, "cannot open " + path.string());
  return read_manifest(in);
}

void write_manifest(std::ostream& out, const std::vector<GalleryEntry>& entries) {
  for (const auto& e : entries) out << entry_to_json(e).dump() << "\n";
}

}  // namespace viewalign::retrieval
