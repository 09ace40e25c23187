#include "topicscope/topics.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <numeric>
#include <set>

#include "topicscope/io.hpp"
#include "topicscope/manifold.hpp"

namespace topicscope::topics {

using nlohmann::json;

namespace {

bool word_byte(unsigned char c) { return std::isalnum(c) || c >= 0x80; }

}  // namespace

std::vector<std::string> tokenize(std::string_view text) {
  std::vector<std::string> out;
  std::string cur;
  auto flush = [&] {
    if (cur.size() >= 2) out.push_back(cur);
    cur.clear();
  };
  for (const char ch : text) {
    const auto c = static_cast<unsigned char>(ch);
    if (word_byte(c)) {
      cur.push_back(c < 0x80 ? static_cast<char>(std::tolower(c)) : ch);
    } else {
      flush();
    }
  }
  flush();
  return out;
}

double SparseRows::at(std::size_t r, std::size_t c) const {
  const auto& row = rows.at(r);
  auto it = std::lower_bound(row.begin(), row.end(), c, [](const auto& e, std::size_t col) { return e.first < col; });
  return it != row.end() && it->first == c ? it->second : 0.0;
}

std::vector<double> SparseRows::dense_row(std::size_t r) const {
  std::vector<double> out(cols, 0.0);
  for (const auto& [c, v] : rows.at(r)) out[c] = v;
  return out;
}

Vocabulary count_vectorize(const std::vector<std::string>& documents, std::span<const int> labels,
                           const std::vector<std::string>& stopwords) {
  if (documents.empty()) throw InvalidArgument("cannot vectorize an empty document list");
  if (documents.size() != labels.size()) throw InvalidArgument("documents and labels differ in length");
  const std::set<std::string> stop(stopwords.begin(), stopwords.end());

  std::vector<std::vector<std::string>> tokens(documents.size());
  std::set<std::string> terms;
  for (std::size_t d = 0; d < documents.size(); ++d) {
    for (auto& t : tokenize(documents[d])) {
      if (stop.count(t)) continue;
      terms.insert(t);
      tokens[d].push_back(std::move(t));
    }
  }

  Vocabulary v;
  v.terms.assign(terms.begin(), terms.end());
  for (std::size_t i = 0; i < v.terms.size(); ++i) v.index.emplace(v.terms[i], i);
  v.document_frequency.assign(v.terms.size(), 0);

  int max_label = -1;
  for (const int l : labels) max_label = std::max(max_label, l);
  std::vector<std::map<std::size_t, double>> acc(static_cast<std::size_t>(max_label + 1));
  for (std::size_t d = 0; d < documents.size(); ++d) {
    std::set<std::size_t> seen;
    for (const auto& t : tokens[d]) {
      const std::size_t col = v.index.at(t);
      if (seen.insert(col).second) ++v.document_frequency[col];
      if (labels[d] >= 0) acc[static_cast<std::size_t>(labels[d])][col] += 1.0;
    }
  }
  v.class_counts.cols = v.terms.size();
  for (auto& row : acc) v.class_counts.rows.emplace_back(row.begin(), row.end());
  return v;
}

SparseRows class_tf_idf(const SparseRows& counts, bool reduce_frequent_words) {
  if (counts.rows.empty()) throw InvalidArgument("c-TF-IDF needs at least one class");
  std::vector<double> class_total(counts.rows.size(), 0.0);
  std::vector<double> term_total(counts.cols, 0.0);
  for (std::size_t r = 0; r < counts.rows.size(); ++r) {
    for (const auto& [c, v] : counts.rows[r]) {
      if (v < 0.0) throw InvalidArgument("term counts must be non-negative");
      class_total[r] += v;
      term_total[c] += v;
    }
  }
  const double avg = std::accumulate(class_total.begin(), class_total.end(), 0.0) / static_cast<double>(class_total.size());
  SparseRows out;
  out.cols = counts.cols;
  out.rows.resize(counts.rows.size());
  for (std::size_t r = 0; r < counts.rows.size(); ++r) {
    if (class_total[r] <= 0.0) continue;
    for (const auto& [c, v] : counts.rows[r]) {
      if (v == 0.0) continue;
      double tf = v / class_total[r];
      if (reduce_frequent_words) tf = std::sqrt(tf);
      out.rows[r].emplace_back(c, tf * std::log(1.0 + avg / term_total[c]));
    }
  }
  return out;
}

std::vector<std::vector<TermWeight>> top_terms(const SparseRows& weights, const Vocabulary& vocab, std::size_t k) {
  if (k < 1) throw InvalidArgument("k must be >= 1");
  if (weights.cols != vocab.size()) throw InvalidArgument("weights do not match the vocabulary");
  std::vector<std::vector<TermWeight>> out;
  for (std::size_t r = 0; r < weights.rows.size(); ++r) {
    const auto dense = weights.dense_row(r);
    // terms are sorted, so a stable sort on weight keeps ties alphabetical
    std::vector<std::size_t> order(dense.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return dense[a] > dense[b]; });
    auto& row = out.emplace_back();
    for (std::size_t i = 0; i < std::min(k, order.size()); ++i) row.push_back({vocab.terms[order[i]], dense[order[i]]});
  }
  return out;
}

std::vector<std::size_t> mmr_diversify(const Matrix& candidates, std::span<const double> topic_vector, double lambda,
                                       std::size_t k) {
  if (!(lambda >= 0.0 && lambda <= 1.0)) throw InvalidArgument("lambda must lie in [0, 1]");
  if (k > candidates.rows()) throw InvalidArgument("k exceeds the number of candidates");
  if (candidates.rows() > 0 && candidates.cols() != topic_vector.size()) {
    throw InvalidArgument("candidate and topic vectors differ in dimension");
  }
  const std::size_t n = candidates.rows();
  std::vector<double> relevance(n);
  for (std::size_t i = 0; i < n; ++i) relevance[i] = cosine(candidates.row(i), topic_vector);

  std::vector<std::size_t> selected;
  std::vector<bool> taken(n, false);
  std::vector<double> redundancy(n, -std::numeric_limits<double>::infinity());
  while (selected.size() < k) {
    std::size_t best = n;
    double best_score = -std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < n; ++i) {
      if (taken[i]) continue;
      const double score =
          selected.empty() ? relevance[i] : lambda * relevance[i] - (1.0 - lambda) * redundancy[i];
      if (best == n || score > best_score) {
        best = i;
        best_score = score;
      }
    }
    taken[best] = true;
    selected.push_back(best);
    for (std::size_t i = 0; i < n; ++i) {
      if (!taken[i]) redundancy[i] = std::max(redundancy[i], cosine(candidates.row(i), candidates.row(best)));
    }
  }
  return selected;
}

Centroids topic_centroids(const Matrix& embeddings, const Matrix& reduced, std::span<const int> labels,
                          std::size_t n_topics) {
  if (embeddings.rows() != labels.size() || reduced.rows() != labels.size()) {
    throw InvalidArgument("embeddings, reduced points and labels differ in length");
  }
  Centroids c;
  c.centroid = Matrix(n_topics, embeddings.cols());
  c.reduced_centroid = Matrix(n_topics, reduced.cols());
  c.sizes.assign(n_topics, 0);
  c.spread.assign(n_topics, 0.0);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0) continue;
    const auto t = static_cast<std::size_t>(labels[i]);
    if (t >= n_topics) throw InvalidArgument("label exceeds the topic count");
    ++c.sizes[t];
    for (std::size_t j = 0; j < embeddings.cols(); ++j) c.centroid(t, j) += embeddings(i, j);
    for (std::size_t j = 0; j < reduced.cols(); ++j) c.reduced_centroid(t, j) += reduced(i, j);
  }
  for (std::size_t t = 0; t < n_topics; ++t) {
    if (c.sizes[t] == 0) throw InvalidArgument("topic " + std::to_string(t) + " has no members");
    const double s = static_cast<double>(c.sizes[t]);
    for (std::size_t j = 0; j < embeddings.cols(); ++j) c.centroid(t, j) /= s;
    for (std::size_t j = 0; j < reduced.cols(); ++j) c.reduced_centroid(t, j) /= s;
  }
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0) continue;
    const auto t = static_cast<std::size_t>(labels[i]);
    c.spread[t] += euclidean(reduced.row(i), c.reduced_centroid.row(t));
  }
  for (std::size_t t = 0; t < n_topics; ++t) c.spread[t] /= static_cast<double>(c.sizes[t]);
  return c;
}

double assignment_probability(std::span<const double> point, std::span<const double> centroid, double spread) {
  const double d = euclidean(point, centroid);
  return std::clamp(std::exp(-d / std::max(spread, 1e-12)), 0.0, 1.0);
}

std::vector<TermWeight> wordcloud_export(const TopicRepresentation& topic, std::size_t k) {
  std::vector<TermWeight> out(topic.top_terms.begin(),
                              topic.top_terms.begin() + static_cast<std::ptrdiff_t>(std::min(k, topic.top_terms.size())));
  double top = 0.0;
  for (const auto& t : out) top = std::max(top, t.weight);
  for (auto& t : out) t.weight = top > 0.0 ? t.weight / top : 0.0;
  return out;
}

std::vector<MapPoint> intertopic_map(const Matrix& centroids, std::span<const std::size_t> sizes, std::uint64_t seed) {
  const std::size_t t = centroids.rows();
  if (t < 2) throw InvalidArgument("the intertopic map needs at least two topics");
  if (sizes.size() != t) throw InvalidArgument("sizes and centroids differ in length");
  manifold::ManifoldConfig cfg;
  cfg.n_components = 2;
  cfg.n_neighbors = std::min<std::size_t>(15, t - 1);
  cfg.seed = seed;
  // the low-level steps accept a single neighbour, which two topics need
  const auto knn = manifold::knn_graph(centroids, cfg.n_neighbors, cfg.metric);
  const Matrix layout = manifold::optimize_layout(manifold::fuzzy_graph(knn), cfg);
  std::vector<MapPoint> out;
  for (std::size_t i = 0; i < t; ++i) out.push_back({static_cast<int>(i), layout(i, 0), layout(i, 1), sizes[i]});
  return out;
}

void RepresentationConfig::validate() const {
  if (top_n < 1) throw InvalidArgument("top_n must be >= 1");
  if (!(mmr_lambda >= 0.0 && mmr_lambda <= 1.0)) throw InvalidArgument("mmr_lambda must lie in [0, 1]");
}

json to_json(const RepresentationConfig& c) {
  return {{"top_n", c.top_n},
          {"mmr_k", c.mmr_k},
          {"mmr_lambda", c.mmr_lambda},
          {"reduce_frequent_words", c.reduce_frequent_words},
          {"stopwords", c.stopwords}};
}

RepresentationConfig representation_config_from_json(const json& j) {
  RepresentationConfig c;
  c.top_n = j.value("top_n", c.top_n);
  c.mmr_k = j.value("mmr_k", c.mmr_k);
  c.mmr_lambda = j.value("mmr_lambda", c.mmr_lambda);
  c.reduce_frequent_words = j.value("reduce_frequent_words", c.reduce_frequent_words);
  c.stopwords = j.value("stopwords", c.stopwords);
  c.validate();
  return c;
}

std::vector<int> relabel_by_size(std::span<const int> labels) {
  std::map<int, std::size_t> sizes;
  for (const int l : labels) {
    if (l >= 0) ++sizes[l];
  }
  std::vector<std::pair<int, std::size_t>> order(sizes.begin(), sizes.end());
  std::stable_sort(order.begin(), order.end(), [](const auto& a, const auto& b) { return a.second > b.second; });
  std::map<int, int> remap;
  for (std::size_t i = 0; i < order.size(); ++i) remap[order[i].first] = static_cast<int>(i);
  std::vector<int> out(labels.size());
  for (std::size_t i = 0; i < labels.size(); ++i) out[i] = labels[i] < 0 ? -1 : remap[labels[i]];
  return out;
}

TopicModel build_topic_model(const std::vector<std::string>& texts, std::span<const int> labels,
                             const Matrix& embeddings, const Matrix& reduced,
                             const std::vector<std::string>& document_ids, embed::Provider& provider,
                             const RepresentationConfig& config) {
  config.validate();
  if (document_ids.size() != texts.size()) throw InvalidArgument("document ids and texts differ in length");
  TopicModel m;
  m.labels.assign(labels.begin(), labels.end());
  m.document_ids = document_ids;
  m.provider_fingerprint = provider.fingerprint();
  m.vocabulary = count_vectorize(texts, labels, config.stopwords);
  m.weights = class_tf_idf(m.vocabulary.class_counts, config.reduce_frequent_words);
  const std::size_t n_topics = m.vocabulary.class_counts.rows.size();
  const Centroids cent = topic_centroids(embeddings, reduced, labels, n_topics);
  const auto ranked = top_terms(m.weights, m.vocabulary, config.top_n);

  for (std::size_t t = 0; t < n_topics; ++t) {
    TopicRepresentation rep;
    rep.topic_id = static_cast<int>(t);
    rep.top_terms = ranked[t];
    rep.size = cent.sizes[t];
    auto c = cent.centroid.row(t);
    rep.centroid.assign(c.begin(), c.end());
    auto rc = cent.reduced_centroid.row(t);
    rep.reduced_centroid.assign(rc.begin(), rc.end());
    rep.spread = cent.spread[t];

    std::vector<std::string> candidates;
    for (const auto& tw : rep.top_terms) {
      if (tw.weight > 0.0) candidates.push_back(tw.term);
    }
    const std::size_t k = std::min(config.mmr_k, candidates.size());
    if (k > 0) {
      std::string joined;
      for (const auto& c2 : candidates) joined += (joined.empty() ? "" : " ") + c2;
      const auto topic_vec = embed::embed_query(joined, provider);
      const auto vecs = embed::embed_texts(candidates, candidates, provider);
      for (const auto i : mmr_diversify(vecs.values, topic_vec, config.mmr_lambda, k)) {
        rep.mmr_terms.push_back({candidates[i], cosine(vecs.values.row(i), topic_vec)});
      }
    }
    m.topics.push_back(std::move(rep));
  }
  m.config_fingerprint = io::text_fingerprint(to_json(config).dump());
  return m;
}

json to_json(const TopicRepresentation& r) {
  auto terms = [](const std::vector<TermWeight>& v) {
    json a = json::array();
    for (const auto& t : v) a.push_back({{"term", t.term}, {"weight", t.weight}});
    return a;
  };
  return {{"topic_id", r.topic_id},
          {"size", r.size},
          {"top_terms", terms(r.top_terms)},
          {"mmr_terms", terms(r.mmr_terms)},
          {"centroid", r.centroid},
          {"reduced_centroid", r.reduced_centroid},
          {"spread", r.spread}};
}

TopicRepresentation topic_representation_from_json(const json& j) {
  auto terms = [](const json& a) {
    std::vector<TermWeight> v;
    for (const auto& t : a) v.push_back({t.at("term").get<std::string>(), t.at("weight").get<double>()});
    return v;
  };
  TopicRepresentation r;
  r.topic_id = j.at("topic_id").get<int>();
  r.size = j.at("size").get<std::size_t>();
  r.top_terms = terms(j.at("top_terms"));
  r.mmr_terms = terms(j.at("mmr_terms"));
  r.centroid = j.at("centroid").get<std::vector<double>>();
  r.reduced_centroid = j.at("reduced_centroid").get<std::vector<double>>();
  r.spread = j.at("spread").get<double>();
  return r;
}

namespace {

// (u32 row, u32 col, f64 value) little-endian triplets
std::string pack_triplets(const SparseRows& s) {
  std::string out;
  auto put = [&](const void* p, std::size_t n) { out.append(static_cast<const char*>(p), n); };
  for (std::size_t r = 0; r < s.rows.size(); ++r) {
    for (const auto& [c, v] : s.rows[r]) {
      const auto r32 = static_cast<std::uint32_t>(r), c32 = static_cast<std::uint32_t>(c);
      put(&r32, 4);
      put(&c32, 4);
      put(&v, 8);
    }
  }
  return out;
}

SparseRows unpack_triplets(const std::string& bytes, std::size_t rows, std::size_t cols) {
  if (bytes.size() % 16 != 0) throw std::runtime_error("corrupt sparse triplet file");
  SparseRows s;
  s.cols = cols;
  s.rows.resize(rows);
  for (std::size_t off = 0; off < bytes.size(); off += 16) {
    std::uint32_t r = 0, c = 0;
    double v = 0.0;
    std::memcpy(&r, bytes.data() + off, 4);
    std::memcpy(&c, bytes.data() + off + 4, 4);
    std::memcpy(&v, bytes.data() + off + 8, 8);
    if (r >= rows || c >= cols) throw std::runtime_error("sparse triplet out of range");
    s.rows[r].emplace_back(c, v);
  }
  for (auto& row : s.rows) std::sort(row.begin(), row.end());
  return s;
}

}  // namespace

void save_topic_model(const std::filesystem::path& dir, const TopicModel& model) {
  std::filesystem::create_directories(dir);
  json vocab = {{"terms", model.vocabulary.terms},
                {"document_frequency", model.vocabulary.document_frequency},
                {"n_classes", model.vocabulary.class_counts.rows.size()}};
  io::write_json_atomic(dir / "vocabulary.json", vocab, -1);
  io::write_file_atomic(dir / "class_counts.bin", pack_triplets(model.vocabulary.class_counts));
  io::write_file_atomic(dir / "weights.bin", pack_triplets(model.weights));
  json reps = json::array();
  for (const auto& r : model.topics) reps.push_back(to_json(r));
  io::write_json_atomic(dir / "representations.json", reps);
  io::write_i32(dir / "labels.i32", model.labels);
  io::write_json_atomic(dir / "topic_model.json", {{"document_ids", model.document_ids},
                                                   {"provider_fingerprint", model.provider_fingerprint},
                                                   {"config_fingerprint", model.config_fingerprint},
                                                   {"n_topics", model.n_topics()}});
}

TopicModel load_topic_model(const std::filesystem::path& dir) {
  TopicModel m;
  const json meta = io::read_json(dir / "topic_model.json");
  m.document_ids = meta.at("document_ids").get<std::vector<std::string>>();
  m.provider_fingerprint = meta.at("provider_fingerprint").get<std::string>();
  m.config_fingerprint = meta.at("config_fingerprint").get<std::string>();
  const json vocab = io::read_json(dir / "vocabulary.json");
  m.vocabulary.terms = vocab.at("terms").get<std::vector<std::string>>();
  for (std::size_t i = 0; i < m.vocabulary.terms.size(); ++i) m.vocabulary.index.emplace(m.vocabulary.terms[i], i);
  m.vocabulary.document_frequency = vocab.at("document_frequency").get<std::vector<std::size_t>>();
  const auto n_classes = vocab.at("n_classes").get<std::size_t>();
  m.vocabulary.class_counts = unpack_triplets(io::read_file(dir / "class_counts.bin"), n_classes, m.vocabulary.size());
  m.weights = unpack_triplets(io::read_file(dir / "weights.bin"), n_classes, m.vocabulary.size());
  for (const auto& r : io::read_json(dir / "representations.json")) m.topics.push_back(topic_representation_from_json(r));
  m.labels = io::read_i32(dir / "labels.i32");
  if (m.labels.size() != m.document_ids.size()) throw std::runtime_error("topic model labels and ids differ in length");
  return m;
}

}  // namespace topicscope::topics
