#pragma once

#include <array>
#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "stanceforge/corpus.hpp"
#include "stanceforge/embed_io.hpp"

namespace stanceforge {

enum class LogBase { Natural, Base2 };

std::string_view to_string(LogBase base);
LogBase parse_log_base(std::string_view name);

// Lowercases, splits on Unicode whitespace and strips leading/trailing
// punctuation from each token. Tokens that are pure punctuation vanish.
std::vector<std::string> tokenize(std::string_view text);

// Shannon entropy of the token frequency distribution. Throws
// ValidationError when the text has no tokens.
double word_entropy(std::string_view text, LogBase base = LogBase::Natural);

struct EntropyRow {
  std::string range;  // "min", "0-25%", ..., "max"
  double mean_entropy = 0.0;
  double mean_length = 0.0;  // tokens
};

struct EntropySummary {
  LogBase log_base = LogBase::Natural;
  std::size_t total = 0;
  std::array<EntropyRow, 6> rows;  // min, four quarters, max
  double q1 = 0.0, q3 = 0.0;       // entropy quartiles used by the outlier rule
  std::size_t outlier_count = 0;   // outside [q1 - 1.5 IQR, q3 + 1.5 IQR]
};

EntropySummary entropy_summary(const Corpus& corpus, LogBase base = LogBase::Natural);
std::string format_entropy_summary(const EntropySummary& summary);

struct ClassAlignment {
  std::vector<double> real_centroid;
  std::vector<double> synth_centroid;
  double centroid_cosine = 0.0;
  double cross_cosine = 0.0;  // cosine(real centroid, synth centroid of the other class)
};

// Centroids are means of unit-normalized embeddings, so the report does
// not depend on per-vector scale.
struct AlignmentReport {
  std::array<ClassAlignment, 2> per_class;  // indexed by StanceLabel value
  double cross_class_margin = 0.0;
};

AlignmentReport alignment_report(const EmbeddingSet& real, const std::map<std::string, StanceLabel>& real_labels,
                                 const EmbeddingSet& synth, const std::map<std::string, StanceLabel>& synth_labels);
std::string format_alignment_report(const AlignmentReport& report);

struct Projection {
  std::array<std::vector<double>, 2> axes;  // orthonormal principal directions
  std::vector<double> mean;
  std::vector<std::string> ids;
  std::vector<std::array<double, 2>> coords;
};

inline constexpr int kPowerIterations = 100;
inline constexpr double kPowerTolerance = 1e-9;
inline constexpr std::size_t kPowerBlock = 10;  // oversampled block width

// Centered projection onto the top-2 principal directions, found by block
// power iteration on the covariance from a fixed start block, with
// Rayleigh-Ritz extraction of the leading pair.
Projection project_2d(const EmbeddingSet& set);
std::string format_projection_csv(const Projection& projection);

// Scatter of synthetic points colored by class with the real class
// centroids as markers, both in the plane of project_2d(real + synth).
std::string render_alignment_svg(const EmbeddingSet& real, const std::map<std::string, StanceLabel>& real_labels,
                                 const EmbeddingSet& synth, const std::map<std::string, StanceLabel>& synth_labels);

}  // namespace stanceforge
