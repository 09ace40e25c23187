#pragma once

// Topic representations: term counting, class-based TF-IDF, MMR keyword
// diversification, centroids, word clouds and the intertopic map.

#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "topicscope/common.hpp"
#include "topicscope/embed.hpp"

namespace topicscope::topics {

/// Lowercased maximal runs of letters or digits of length >= 2. Bytes >= 0x80
/// count as letters so UTF-8 words stay whole.
std::vector<std::string> tokenize(std::string_view text);

/// Sparse rows; each row holds (column, value) pairs sorted by column.
struct SparseRows {
  std::size_t cols = 0;
  std::vector<std::vector<std::pair<std::size_t, double>>> rows;

  double at(std::size_t r, std::size_t c) const;
  std::vector<double> dense_row(std::size_t r) const;
};

struct Vocabulary {
  std::vector<std::string> terms;  // sorted; position = column index
  std::map<std::string, std::size_t> index;
  std::vector<std::size_t> document_frequency;
  /// One row per topic id 0..T-1; noise documents are not counted here.
  SparseRows class_counts;

  std::size_t size() const { return terms.size(); }
};

/// Row t of class_counts aggregates documents labelled t. Terms seen only in
/// noise documents still enter the vocabulary.
Vocabulary count_vectorize(const std::vector<std::string>& documents, std::span<const int> labels,
                           const std::vector<std::string>& stopwords = {});

/// tf = count / class total (sqrt when reduce_frequent_words), idf = log(1 + A / f)
/// with A the mean class total and f the term's count over all classes.
SparseRows class_tf_idf(const SparseRows& class_counts, bool reduce_frequent_words);

struct TermWeight {
  std::string term;
  double weight = 0.0;
  bool operator==(const TermWeight&) const = default;
};

/// Per row, the k highest weights over the whole vocabulary (zeros included),
/// ties in alphabetical order.
std::vector<std::vector<TermWeight>> top_terms(const SparseRows& weights, const Vocabulary& vocab, std::size_t k);

/// Indices of the greedily selected candidates, in selection order.
std::vector<std::size_t> mmr_diversify(const Matrix& candidate_vectors, std::span<const double> topic_vector,
                                       double lambda, std::size_t k);

struct Centroids {
  Matrix centroid;          // T x embedding dim
  Matrix reduced_centroid;  // T x reduced dim
  std::vector<std::size_t> sizes;
  std::vector<double> spread;  // mean member distance to the reduced centroid
};

Centroids topic_centroids(const Matrix& embeddings, const Matrix& reduced, std::span<const int> labels,
                          std::size_t n_topics);

/// exp(-d / s): d is the distance to the reduced centroid, s the topic spread
/// (floored at 1e-12). A proxy, not a calibrated probability.
double assignment_probability(std::span<const double> reduced_point, std::span<const double> reduced_centroid,
                              double spread);

struct TopicRepresentation {
  int topic_id = 0;
  std::vector<TermWeight> top_terms;
  std::vector<TermWeight> mmr_terms;  // weight = cosine relevance to the topic vector
  std::size_t size = 0;
  std::vector<double> centroid;
  std::vector<double> reduced_centroid;
  double spread = 0.0;
};

/// Top-k c-TF-IDF terms scaled so the largest weight is 1.
std::vector<TermWeight> wordcloud_export(const TopicRepresentation& topic, std::size_t k);

struct MapPoint {
  int topic_id = 0;
  double x = 0.0;
  double y = 0.0;
  std::size_t size = 0;
};

/// Two-dimensional layout of the topic centroids (n_neighbors = min(15, T - 1),
/// fixed seed).
std::vector<MapPoint> intertopic_map(const Matrix& centroids, std::span<const std::size_t> sizes,
                                     std::uint64_t seed = 42);

struct RepresentationConfig {
  std::size_t top_n = 30;  // stored c-TF-IDF terms; also the MMR candidate pool
  std::size_t mmr_k = 10;
  double mmr_lambda = 0.7;
  bool reduce_frequent_words = true;
  std::vector<std::string> stopwords;

  void validate() const;
};

nlohmann::json to_json(const RepresentationConfig& c);
RepresentationConfig representation_config_from_json(const nlohmann::json& j);

struct TopicModel {
  std::vector<int> labels;
  std::vector<TopicRepresentation> topics;
  Vocabulary vocabulary;
  SparseRows weights;
  std::vector<std::string> document_ids;
  std::string provider_fingerprint;
  std::string config_fingerprint;

  std::size_t n_topics() const { return topics.size(); }
};

/// Renumbers valid labels 0..T-1 by cluster size descending (ties by old label);
/// noise stays -1.
std::vector<int> relabel_by_size(std::span<const int> labels);

/// Builds every representation. `provider` embeds the candidate terms and the
/// joined candidate list that serves as the MMR topic vector.
TopicModel build_topic_model(const std::vector<std::string>& texts, std::span<const int> labels,
                             const Matrix& embeddings, const Matrix& reduced,
                             const std::vector<std::string>& document_ids, embed::Provider& provider,
                             const RepresentationConfig& config);

void save_topic_model(const std::filesystem::path& dir, const TopicModel& model);
TopicModel load_topic_model(const std::filesystem::path& dir);

nlohmann::json to_json(const TopicRepresentation& r);
TopicRepresentation topic_representation_from_json(const nlohmann::json& j);

}  // namespace topicscope::topics
