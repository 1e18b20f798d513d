#pragma once

#include <cstdint>
#include <map>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include <Eigen/Dense>

namespace ance {

using RowMatrixXd = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using RowMatrixXf = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// Dense embedding; always double internally, float32 only at serialization
// boundaries.
using Embedding = Eigen::VectorXd;

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Bad flags, bad parameter combinations, malformed CLI input.
struct ConfigError : Error {
  using Error::Error;
};

// Missing files, malformed lines, violated data invariants.
struct DataError : Error {
  using Error::Error;
};

// Non-finite values, divergence.
struct NumericError : Error {
  using Error::Error;
};

struct Document {
  std::string id;
  std::string text;
  std::string parent_id;  // empty when the doc is not a passage
};

struct Query {
  std::string id;
  std::string text;
};

struct Corpus {
  std::vector<Document> docs;
  std::unordered_map<std::string, std::size_t> index_of;

  void add(Document d);
  const Document& at(const std::string& id) const;
  bool contains(const std::string& id) const { return index_of.count(id) > 0; }
  std::size_t size() const { return docs.size(); }
};

// Graded relevance labels keyed by (query id, doc id). Unjudged pairs are
// distinct from grade 0.
struct Judgments {
  std::map<std::string, std::map<std::string, int>> grades;

  void set(const std::string& qid, const std::string& did, int grade);
  // -1 when the pair is unjudged.
  int grade(const std::string& qid, const std::string& did) const;
  bool is_relevant(const std::string& qid, const std::string& did) const {
    return grade(qid, did) > 0;
  }
  // Sorted doc ids with grade > 0; empty when the query is unjudged.
  std::vector<std::string> relevant_docs(const std::string& qid) const;
  bool has_query(const std::string& qid) const { return grades.count(qid) > 0; }
};

// Sparse bag of hashed features, entries sorted by index, counts > 0.
struct FeatureVector {
  std::uint32_t dim = 0;
  std::vector<std::pair<std::uint32_t, double>> entries;
};

struct ScoredDoc {
  std::string id;
  double score = 0.0;
};

}  // namespace ance
