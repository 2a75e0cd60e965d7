#pragma once

#include <Eigen/Core>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

namespace viewalign::retrieval {

struct GalleryEntry {
  std::string id;
  std::string description;
  std::vector<std::string> objects;
  std::string metadata;
  int people_count = 0;
  std::string image_path;
};

struct EmbeddedEntry {
  std::string entry_id;
  Eigen::VectorXd embedding;  // unit norm
};

struct UserPrompt {
  std::string query;
  std::vector<std::string> detected_objects;
  std::optional<int> people_count;

  void validate() const;
};

struct RetrievalConfig {
  int m = 16;       // coarse shortlist size
  int m_star = 3;   // final suggestions

  void validate() const;
};

// "Description: {d}. Objects: {a, b}. Metadata: {m}. People: {n}." with
// empty fields rendered as "none".
std::string build_caption(const GalleryEntry& entry);
// "Query: {q}. Objects: {a, b}. People: {n}." with the same empty-field rule.
std::string prompt_text(const UserPrompt& prompt);

// Lowercase ASCII alphanumeric runs.
std::vector<std::string> tokenize(const std::string& text);

class TextEmbedder {
 public:
  virtual ~TextEmbedder() = default;
  virtual std::string name() const = 0;
  virtual int dimension() const = 0;
  virtual Eigen::VectorXd embed(const std::string& text) const = 0;
};

// Token counts hashed (FNV-1a, 64-bit) into buckets, unit-normalized.
class HashingEmbedder : public TextEmbedder {
 public:
  explicit HashingEmbedder(int dimension = 256);
  std::string name() const override;
  int dimension() const override { return dim_; }
  Eigen::VectorXd embed(const std::string& text) const override;

 private:
  int dim_;
};

struct ScoredEntry {
  std::string id;
  double similarity = 0.0;
};

// Immutable after construction; all queries are const.
class EmbeddingIndex {
 public:
  EmbeddingIndex() = default;
  // Throws DuplicateId, or EmbedderFailure naming the offending entry.
  static EmbeddingIndex build(std::vector<GalleryEntry> entries, const TextEmbedder& embedder);

  std::size_t size() const { return entries_.size(); }
  bool empty() const { return entries_.empty(); }
  int dimension() const { return dim_; }
  const std::string& embedder_name() const { return embedder_; }
  const std::vector<GalleryEntry>& entries() const { return entries_; }
  const std::vector<EmbeddedEntry>& embeddings() const { return embedded_; }
  const GalleryEntry& entry(const std::string& id) const;
  const std::string& caption(const std::string& id) const;

  // Exact top-m by cosine similarity, descending, ties by id.
  std::vector<ScoredEntry> top_m(const Eigen::VectorXd& query, int m) const;

  void save(std::ostream& out) const;
  static EmbeddingIndex load(std::istream& in);
  void save(const std::filesystem::path& path) const;
  static EmbeddingIndex load(const std::filesystem::path& path);

 private:
  static EmbeddingIndex assemble(std::vector<GalleryEntry> entries,
                                 std::vector<Eigen::VectorXd> vectors, std::string embedder, int dim);

  std::string embedder_;
  int dim_ = 0;
  std::vector<GalleryEntry> entries_;
  std::vector<std::string> captions_;
  std::vector<EmbeddedEntry> embedded_;
  Eigen::MatrixXd matrix_;  // one unit embedding per row
  std::unordered_map<std::string, std::size_t> by_id_;
};

EmbeddingIndex index_gallery(std::vector<GalleryEntry> entries, const TextEmbedder& embedder);

// Throws EmptyIndex.
std::vector<ScoredEntry> coarse_retrieve(const UserPrompt& prompt, const EmbeddingIndex& index,
                                         const TextEmbedder& embedder, const RetrievalConfig& cfg);

struct Candidate {
  std::string id;
  std::string caption;
};

struct RankerRequest {
  UserPrompt prompt;
  std::string prompt_text;
  std::vector<Candidate> candidates;
  int m_star = 3;
};

struct RankerResponse {
  std::vector<std::string> ids;
  std::string explanation;
};

class Ranker {
 public:
  virtual ~Ranker() = default;
  // Throws RankerUnavailable on transport failure and RankerProtocolError
  // on a malformed reply.
  virtual RankerResponse rank(const RankerRequest& request) const = 0;
};

// Deterministic keyword-overlap ranker: the score of a caption is the number
// of distinct query and object keywords it contains; ties go to the lower id.
class MockRanker : public Ranker {
 public:
  RankerResponse rank(const RankerRequest& request) const override;
};

struct HttpRankerOptions {
  std::string url;
  std::string api_key;
  double timeout_seconds = 30.0;
};

// POSTs {"prompt", "m_star", "candidates": [{"id", "caption"}]} as JSON and
// expects {"ids": [...], "explanation": "..."} back.
class HttpRanker : public Ranker {
 public:
  explicit HttpRanker(HttpRankerOptions options);
  // Reads RANKER_URL and RANKER_API_KEY; throws RankerUnavailable if the URL is unset.
  static HttpRanker from_environment(double timeout_seconds = 30.0);
  RankerResponse rank(const RankerRequest& request) const override;

 private:
  HttpRankerOptions options_;
  std::string origin_;
  std::string path_;
};

struct Suggestion {
  std::vector<std::string> ids;
  std::string explanation;
  int attempts = 0;
};

// Sends the candidates (at most cfg.m) in one request and validates the
// reply: ids must be distinct candidates, min(m_star, |candidates|) of them.
// A failed attempt is retried `retries` times before the last error escapes.
Suggestion rerank(const UserPrompt& prompt, const std::vector<Candidate>& candidates,
                  const Ranker& ranker, const RetrievalConfig& cfg, int retries = 1);

struct SuggestResult {
  std::vector<ScoredEntry> shortlist;
  Suggestion suggestion;
};

SuggestResult suggest(const UserPrompt& prompt, const EmbeddingIndex& index,
                      const TextEmbedder& embedder, const Ranker& ranker,
                      const RetrievalConfig& cfg, int retries = 1);

// JSON Lines: one object per entry with id, description, objects, metadata,
// people_count and image_path. Blank lines are skipped.
std::vector<GalleryEntry> read_manifest(std::istream& in);
std::vector<GalleryEntry> load_manifest(const std::filesystem::path& path);
void write_manifest(std::ostream& out, const std::vector<GalleryEntry>& entries);

}  // namespace viewalign::retrieval
