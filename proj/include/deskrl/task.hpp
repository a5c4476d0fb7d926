#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace deskrl {

// ---- vocabulary ----
//
// Fixed token layout. Indices 0..17 are structural; everything above is filler.
// The box tokens delimit the answer span a completion is scored on.
struct Vocabulary {
  static constexpr int kEos = 0;
  static constexpr int kBoxOpen = 1;
  static constexpr int kBoxClose = 2;
  static constexpr int kDigit0 = 3;  // digits occupy 3..12
  static constexpr int kPlus = 13;
  static constexpr int kMinus = 14;
  static constexpr int kTimes = 15;
  static constexpr int kMod = 16;
  static constexpr int kEquals = 17;
  static constexpr int kFirstFiller = 18;

  std::vector<std::string> tokens;

  int size() const { return static_cast<int>(tokens.size()); }
  static bool is_digit(int t) { return t >= kDigit0 && t < kDigit0 + 10; }
  static int digit_token(int d) { return kDigit0 + d; }      // d in [0,9]
  static int digit_value(int t) { return t - kDigit0; }
};

// filler_count >= 0; total size is 18 + filler_count (>= 16 enforced).
Vocabulary make_vocabulary(int filler_count = 14);

// ---- prompts ----

struct Prompt {
  std::int64_t id = 0;
  int difficulty = 1;
  int modulus = 7;
  std::vector<int> tokens;  // digits(a) op digits(b) mod digits(m) '='; no EOS
  int ground_truth = 0;     // canonical answer in [0, modulus)
};

// Supported difficulties are 1..3 with moduli 7, 11, 13.
int modulus_for_difficulty(int difficulty);

// Deterministic content map: a=(3+s) mod m, b=(4+floor(s/m)) mod m,
// op=floor(s/m^2) mod 3 cycling +,-,*. Seeds 0..3m^2-1 cover every
// (a,b,op) combination exactly once; larger seeds repeat content under
// a fresh id. id = seed*8 + difficulty.
Prompt generate_prompt(std::uint64_t seed, int difficulty);

// ---- answers ----

struct ExtractedAnswer {
  bool parseable = false;
  std::int64_t value = 0;  // canonical integer; meaningful only when parseable
};

// Parseable iff the sequence holds exactly one well-formed span
// BOX_OPEN digit+ BOX_CLOSE. Value is the digit string as an integer
// (leading zeros stripped). Total: never throws on valid token indices.
ExtractedAnswer extract_answer(const std::vector<int>& tokens, const Vocabulary& v);

// Both parseable and equal canonical value. Unparseable matches nothing,
// including another unparseable.
bool answers_equivalent(const ExtractedAnswer& a, const ExtractedAnswer& b);

// ---- prompt feature buckets ----
//
// Dense enumeration of prompt content over a difficulty range: one bucket per
// distinct (difficulty, op, a, b). The policy's context map conditions on this.
class PromptBucketer {
 public:
  PromptBucketer(int difficulty_min, int difficulty_max);

  int num_buckets() const { return total_; }
  int difficulty_min() const { return lo_; }
  int difficulty_max() const { return hi_; }

  // Parses operands back out of the token sequence; rejects malformed prompts
  // and difficulties outside the configured range.
  int bucket(const std::vector<int>& prompt_tokens, const Vocabulary& v) const;
  int bucket(const Prompt& p, const Vocabulary& v) const { return bucket(p.tokens, v); }

  struct Decoded {
    int difficulty;
    int op;  // 0:+ 1:- 2:*
    int a;
    int b;
    int modulus;
    int answer;  // canonical
  };
  Decoded decode(int bucket_id) const;

 private:
  int lo_;
  int hi_;
  int total_;
  std::vector<int> offset_;  // per difficulty in range
};

// ---- prompt set files ----
// Line-delimited records: id, difficulty, tokens, ground_truth, modulus.
void write_prompt_set(const std::string& path, const std::vector<Prompt>& prompts);
std::vector<Prompt> read_prompt_set(const std::string& path);

}  // namespace deskrl
