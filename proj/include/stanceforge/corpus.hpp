#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace stanceforge {

// Stance labels. Serialized as the bare integer.
enum class StanceLabel : int { Against = 0, Favor = 1 };

enum class Origin { Real, Synthetic };

std::string_view to_string(StanceLabel label);
std::string_view to_string(Origin origin);

// Parses "favor"/"against"/"1"/"0" (case-insensitive); throws ValidationError.
StanceLabel parse_stance(std::string_view text);
StanceLabel stance_from_int(long long value);

struct Comment {
  std::string id;
  std::string question_id;
  std::string text;
  std::optional<StanceLabel> label;
  Origin origin = Origin::Real;

  bool operator==(const Comment&) const = default;
};

// Comments for one question, in file order.
struct Corpus {
  std::string question_id;
  std::string question_text;
  std::vector<Comment> comments;

  std::size_t size() const { return comments.size(); }
  // Index of the comment with `id`, or nullopt.
  std::optional<std::size_t> find(std::string_view id) const;
  std::map<std::string, StanceLabel> labels() const;
};

// A balanced, fully labeled synthetic corpus: m/2 Favor then m/2 Against.
struct SyntheticCorpus {
  Corpus base;
  std::size_t m = 0;
};

// Train/test partition of one corpus under one seed. Both id lists follow
// corpus order.
struct SplitPlan {
  std::string question_id;
  std::uint64_t seed = 0;
  std::vector<std::string> train_ids;
  std::vector<std::string> test_ids;

  bool operator==(const SplitPlan&) const = default;
};

// Corpus JSONL. Throws ValidationError naming the offending line or id, or
// IoError when the file cannot be read.
Corpus load_corpus(const std::filesystem::path& path);
Corpus parse_corpus(std::string_view jsonl, const std::string& source = "<memory>");
void save_corpus(const Corpus& corpus, const std::filesystem::path& path);
std::string format_corpus(const std::vector<Comment>& comments);
std::string format_comment(const Comment& comment);

// Checks the Corpus invariants (non-empty ids and text, unique ids, shared
// question id).
void validate_corpus(const Corpus& corpus);

SyntheticCorpus build_synthetic_corpus(const std::string& question_id,
                                       const std::vector<Comment>& favor,
                                       const std::vector<Comment>& against);

// Id given to the index-th synthetic comment of a question.
std::string synthetic_id(std::string_view question_id, std::size_t index);

// Balanced prefix of a synthetic corpus: the first m/2 Favor and first m/2
// Against comments in corpus order. m must be even and available.
SyntheticCorpus take_balanced(const Corpus& synthetic, std::size_t m);

// Generation prompt for a question and stance.
std::string make_prompt(std::string_view question_text, StanceLabel stance);

// Train share numerator/denominator: |train| = floor(3N/5).
inline constexpr std::size_t kTrainNumerator = 3;
inline constexpr std::size_t kTrainDenominator = 5;
std::size_t train_size(std::size_t n);

SplitPlan split_corpus(const Corpus& corpus, std::uint64_t seed);

SplitPlan load_split(const std::filesystem::path& path);
void save_split(const SplitPlan& plan, const std::filesystem::path& path);

// Pairs question i with the synthetic corpus of question (i + offset) mod n.
std::map<std::string, SyntheticCorpus> misalign_pairing(
    const std::vector<std::string>& question_ids,
    const std::map<std::string, SyntheticCorpus>& synthetic_corpora, std::size_t offset);

// Small file helpers shared by every module.
std::string read_file(const std::filesystem::path& path);
// Writes to a sibling temp file and renames over `path`.
void write_file_atomic(const std::filesystem::path& path, std::string_view contents);

}  // namespace stanceforge
