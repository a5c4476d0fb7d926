#include "deskrl/task.hpp"

#include <fstream>

#include <json.hpp>

#include "deskrl/errors.hpp"

namespace deskrl {

using nlohmann::json;

Vocabulary make_vocabulary(int filler_count) {
  if (filler_count < 0) throw ValidationError("filler_count must be >= 0");
  Vocabulary v;
  v.tokens = {"<eos>", "[", "]", "0", "1", "2", "3", "4", "5",
              "6",     "7", "8", "9", "+", "-", "*", "mod", "="};
  static const char* kFillers[] = {"so",  "then", "we",  "see",  "let",  "thus", "and",
                                   "note", "take", "get", "by",  "now",  "also", "hence"};
  for (int i = 0; i < filler_count; ++i) {
    if (i < 14) {
      v.tokens.push_back(kFillers[i]);
    } else {
      v.tokens.push_back("w" + std::to_string(i));
    }
  }
  if (v.size() < 16) throw ValidationError("vocabulary must hold at least 16 tokens");
  return v;
}

int modulus_for_difficulty(int difficulty) {
  switch (difficulty) {
    case 1: return 7;
    case 2: return 11;
    case 3: return 13;
    default: throw ValidationError("difficulty out of range [1,3]: " + std::to_string(difficulty));
  }
}

namespace {

void append_digits(std::vector<int>* out, int value) {
  // values here are < 100
  if (value >= 10) out->push_back(Vocabulary::digit_token(value / 10));
  out->push_back(Vocabulary::digit_token(value % 10));
}

int eval_op(int op, int a, int b, int m) {
  long long r = 0;
  switch (op) {
    case 0: r = a + b; break;
    case 1: r = a - b; break;
    case 2: r = static_cast<long long>(a) * b; break;
    default: throw ValidationError("bad op");
  }
  r %= m;
  if (r < 0) r += m;
  return static_cast<int>(r);
}

}  // namespace

Prompt generate_prompt(std::uint64_t seed, int difficulty) {
  const int m = modulus_for_difficulty(difficulty);
  const auto mm = static_cast<std::uint64_t>(m);
  Prompt p;
  p.id = static_cast<std::int64_t>(seed) * 8 + difficulty;
  p.difficulty = difficulty;
  p.modulus = m;
  const int a = static_cast<int>((3 + seed) % mm);
  const int b = static_cast<int>((4 + seed / mm) % mm);
  const int op = static_cast<int>((seed / (mm * mm)) % 3);
  p.ground_truth = eval_op(op, a, b, m);
  append_digits(&p.tokens, a);
  p.tokens.push_back(Vocabulary::kPlus + op);
  append_digits(&p.tokens, b);
  p.tokens.push_back(Vocabulary::kMod);
  append_digits(&p.tokens, m);
  p.tokens.push_back(Vocabulary::kEquals);
  return p;
}

ExtractedAnswer extract_answer(const std::vector<int>& tokens, const Vocabulary& v) {
  (void)v;
  ExtractedAnswer out;
  int spans = 0;
  std::int64_t value = 0;
  std::size_t i = 0;
  while (i < tokens.size()) {
    if (tokens[i] != Vocabulary::kBoxOpen) {
      ++i;
      continue;
    }
    std::size_t j = i + 1;
    std::int64_t val = 0;
    int digits = 0;
    while (j < tokens.size() && Vocabulary::is_digit(tokens[j])) {
      // saturate absurdly long digit strings instead of overflowing
      if (digits < 18) val = val * 10 + Vocabulary::digit_value(tokens[j]);
      ++digits;
      ++j;
    }
    if (digits >= 1 && j < tokens.size() && tokens[j] == Vocabulary::kBoxClose) {
      ++spans;
      value = val;
      i = j + 1;
    } else {
      ++i;
    }
  }
  if (spans == 1) {
    out.parseable = true;
    out.value = value;
  }
  return out;
}

bool answers_equivalent(const ExtractedAnswer& a, const ExtractedAnswer& b) {
  return a.parseable && b.parseable && a.value == b.value;
}

PromptBucketer::PromptBucketer(int difficulty_min, int difficulty_max)
    : lo_(difficulty_min), hi_(difficulty_max) {
  if (lo_ > hi_) throw ValidationError("difficulty_min > difficulty_max");
  modulus_for_difficulty(lo_);
  modulus_for_difficulty(hi_);
  total_ = 0;
  for (int d = lo_; d <= hi_; ++d) {
    offset_.push_back(total_);
    const int m = modulus_for_difficulty(d);
    total_ += 3 * m * m;
  }
}

int PromptBucketer::bucket(const std::vector<int>& prompt_tokens, const Vocabulary& v) const {
  (void)v;
  // parse digits(a) op digits(b) MOD digits(m) '='
  std::size_t i = 0;
  auto read_number = [&](const char* what) {
    int n = 0;
    int digits = 0;
    while (i < prompt_tokens.size() && Vocabulary::is_digit(prompt_tokens[i])) {
      n = n * 10 + Vocabulary::digit_value(prompt_tokens[i]);
      ++digits;
      ++i;
      if (digits > 2) throw ValidationError(std::string("prompt operand too long: ") + what);
    }
    if (digits == 0) throw ValidationError(std::string("prompt missing number: ") + what);
    return n;
  };
  const int a = read_number("a");
  if (i >= prompt_tokens.size()) throw ValidationError("prompt missing operator");
  const int op_tok = prompt_tokens[i++];
  if (op_tok < Vocabulary::kPlus || op_tok > Vocabulary::kTimes)
    throw ValidationError("prompt missing operator");
  const int op = op_tok - Vocabulary::kPlus;
  const int b = read_number("b");
  if (i >= prompt_tokens.size() || prompt_tokens[i++] != Vocabulary::kMod)
    throw ValidationError("prompt missing modulus keyword");
  const int m = read_number("m");
  if (i >= prompt_tokens.size() || prompt_tokens[i++] != Vocabulary::kEquals)
    throw ValidationError("prompt missing trailing equals");
  if (i != prompt_tokens.size()) throw ValidationError("trailing tokens after prompt");

  int d = 0;
  for (int cand = lo_; cand <= hi_; ++cand) {
    if (modulus_for_difficulty(cand) == m) {
      d = cand;
      break;
    }
  }
  if (d == 0) throw ValidationError("prompt modulus outside configured difficulty range");
  if (a >= m || b >= m) throw ValidationError("prompt operand not reduced mod m");
  return offset_[d - lo_] + (op * m + a) * m + b;
}

PromptBucketer::Decoded PromptBucketer::decode(int bucket_id) const {
  if (bucket_id < 0 || bucket_id >= total_) throw ValidationError("bucket id out of range");
  int d = lo_;
  while (d < hi_ && bucket_id >= offset_[d - lo_ + 1]) ++d;
  int rem = bucket_id - offset_[d - lo_];
  const int m = modulus_for_difficulty(d);
  Decoded out;
  out.difficulty = d;
  out.modulus = m;
  out.b = rem % m;
  rem /= m;
  out.a = rem % m;
  out.op = rem / m;
  out.answer = eval_op(out.op, out.a, out.b, m);
  return out;
}

void write_prompt_set(const std::string& path, const std::vector<Prompt>& prompts) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw IoError("cannot open for writing: " + path);
  for (const auto& p : prompts) {
    json j = {{"id", p.id},
              {"difficulty", p.difficulty},
              {"modulus", p.modulus},
              {"tokens", p.tokens},
              {"ground_truth", p.ground_truth}};
    f << j.dump() << '\n';
  }
  if (!f) throw IoError("write failed: " + path);
}

std::vector<Prompt> read_prompt_set(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot open: " + path);
  std::vector<Prompt> out;
  std::string line;
  int lineno = 0;
  while (std::getline(f, line)) {
    ++lineno;
    if (line.empty()) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception& e) {
      throw IoError("bad prompt record at line " + std::to_string(lineno) + ": " + e.what());
    }
    Prompt p;
    try {
      p.id = j.at("id").get<std::int64_t>();
      p.difficulty = j.at("difficulty").get<int>();
      p.modulus = j.at("modulus").get<int>();
      p.tokens = j.at("tokens").get<std::vector<int>>();
      p.ground_truth = j.at("ground_truth").get<int>();
    } catch (const json::exception& e) {
      throw IoError("bad prompt record at line " + std::to_string(lineno) + ": " + e.what());
    }
    if (modulus_for_difficulty(p.difficulty) != p.modulus)
      throw ValidationError("prompt " + std::to_string(p.id) + ": modulus/difficulty mismatch");
    if (p.ground_truth < 0 || p.ground_truth >= p.modulus)
      throw ValidationError("prompt " + std::to_string(p.id) + ": ground truth not canonical");
    if (p.tokens.empty())
      throw ValidationError("prompt " + std::to_string(p.id) + ": empty token sequence");
    out.push_back(std::move(p));
  }
  return out;
}

}  // namespace deskrl
