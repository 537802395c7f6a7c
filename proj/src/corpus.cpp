// Copyright 2026 The privkd Authors
// SPDX-License-Identifier: Apache-2.0

#include "privkd/corpus.hpp"

#include <unicode/normalizer2.h>
#include <unicode/unistr.h>

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "privkd/errors.hpp"
#include "privkd/params.hpp"
#include "privkd/rng.hpp"

namespace privkd::corpus {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

bool is_space(char c) { return std::isspace(static_cast<unsigned char>(c)) != 0; }
bool is_alpha(char c) { return std::isalpha(static_cast<unsigned char>(c)) != 0; }
bool is_alnum(char c) { return std::isalnum(static_cast<unsigned char>(c)) != 0; }

bool is_email_local(char c) { return is_alnum(c) || c == '.' || c == '_' || c == '%' || c == '+' || c == '-'; }
bool is_email_domain(char c) { return is_alnum(c) || c == '.' || c == '-'; }

/// Length of the e-mail domain starting at `pos`, or 0 if it is not one.
std::size_t email_domain_length(std::string_view s, std::size_t pos) {
  std::size_t end = pos;
  while (end < s.size() && is_email_domain(s[end])) ++end;
  while (end > pos && (s[end - 1] == '.' || s[end - 1] == '-')) --end;
  const std::string_view domain = s.substr(pos, end - pos);
  const auto dot = domain.rfind('.');
  if (dot == std::string_view::npos || dot == 0) return 0;
  const std::string_view tld = domain.substr(dot + 1);
  if (tld.size() < 2 || !std::all_of(tld.begin(), tld.end(), is_alpha)) return 0;
  return end - pos;
}

std::string remove_emails(std::string_view s) {
  std::string out;
  out.reserve(s.size());
  std::size_t i = 0;
  while (i < s.size()) {
    const auto at = s.find('@', i);
    if (at == std::string_view::npos) {
      out.append(s.substr(i));
      break;
    }
    std::size_t start = at;
    while (start > i && is_email_local(s[start - 1])) --start;
    const std::size_t domain = email_domain_length(s, at + 1);
    if (start == at || domain == 0) {
      out.append(s.substr(i, at + 1 - i));
      i = at + 1;
      continue;
    }
    std::size_t end = at + 1 + domain;
    if (start > i && s[start - 1] == '<' && end < s.size() && s[end] == '>') {
      --start;
      ++end;
    }
    out.append(s.substr(i, start - i));
    out.push_back(' ');
    i = end;
  }
  return out;
}

bool is_header_line(std::string_view line) {
  if (line.empty() || !is_alpha(line[0])) return false;
  std::size_t i = 1;
  while (i < line.size() && (is_alnum(line[i]) || line[i] == '-')) ++i;
  return i < line.size() && line[i] == ':';
}

bool is_blank(std::string_view line) { return std::all_of(line.begin(), line.end(), is_space); }

std::vector<std::string_view> split_lines(std::string_view s) {
  std::vector<std::string_view> lines;
  std::size_t start = 0;
  while (start <= s.size()) {
    const auto nl = s.find('\n', start);
    if (nl == std::string_view::npos) {
      lines.push_back(s.substr(start));
      break;
    }
    lines.push_back(s.substr(start, nl - start));
    start = nl + 1;
  }
  return lines;
}

std::vector<std::string> split_tab(const std::string& line) {
  std::vector<std::string> cols;
  std::stringstream ss(line);
  std::string col;
  while (std::getline(ss, col, '\t')) cols.push_back(col);
  if (!line.empty() && line.back() == '\t') cols.emplace_back();
  return cols;
}

/// Byte offset of the `cp`-th code point of a UTF-8 string.
std::size_t byte_offset_of_codepoint(std::string_view s, std::size_t cp) {
  std::size_t count = 0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if ((static_cast<unsigned char>(s[i]) & 0xC0) == 0x80) continue;
    if (count == cp) return i;
    ++count;
  }
  if (count == cp) return s.size();
  return std::string_view::npos;
}

std::vector<fs::path> sorted_entries(const fs::path& dir, bool directories) {
  std::vector<fs::path> out;
  for (const auto& e : fs::directory_iterator(dir))
    if (directories ? e.is_directory() : e.is_regular_file()) out.push_back(e.path());
  std::sort(out.begin(), out.end());
  return out;
}

void require_dir(const fs::path& p) {
  if (!fs::is_directory(p)) throw IoError("missing corpus directory: " + p.string());
}

void require_file(const fs::path& p) {
  if (!fs::is_regular_file(p)) throw IoError("missing corpus file: " + p.string());
}

/// Fills prompt fields; returns false when the prompt is empty.
bool finish_sample(TextSample& s, DatasetKind kind) {
  const std::string clean = normalize_whitespace(s.clean_text);
  if (clean.empty()) return false;
  try {
    Prompt p = build_prompt(s, kind);
    s.prompt_text = std::move(p.text);
    s.prompt_truncated = p.truncated;
  } catch (const PreconditionError&) {
    return false;
  }
  return true;
}

void warn_rejected(std::string_view corpus, std::size_t n) {
  if (n > 0) fmt::print(stderr, "warning: {}: rejected {} sample(s) with an empty prompt\n", corpus, n);
}

Dataset load_imdb(const fs::path& root) {
  Dataset ds;
  ds.name = "imdb";
  ds.kind = DatasetKind::imdb;
  ds.num_classes = 2;
  ds.class_names = {"neg", "pos"};
  std::size_t rejected = 0;
  for (const char* split : {"train", "test"}) {
    for (int label = 0; label < 2; ++label) {
      const fs::path dir = root / split / ds.class_names[label];
      require_dir(dir);
      for (const auto& file : sorted_entries(dir, false)) {
        if (file.extension() != ".txt") continue;
        TextSample s;
        s.id = fmt::format("{}-{}-{}", split, ds.class_names[label], file.stem().string());
        s.raw_text = read_file(file);
        s.clean_text = strip_html(nfc(s.raw_text));
        s.label = label;
        if (!finish_sample(s, ds.kind)) {
          ++rejected;
          continue;
        }
        (std::string_view(split) == "train" ? ds.train : ds.test).push_back(std::move(s));
      }
    }
  }
  warn_rejected("imdb", rejected);

  // Seeded 10% validation carve-out of the training set.
  std::vector<std::size_t> order(ds.train.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  Rng rng(kImdbValSeed);
  rng.shuffle(order);
  const auto n_val = static_cast<std::size_t>(std::llround(0.1 * static_cast<double>(ds.train.size())));
  std::vector<bool> is_val(ds.train.size(), false);
  for (std::size_t i = 0; i < n_val; ++i) is_val[order[i]] = true;
  std::vector<TextSample> train;
  for (std::size_t i = 0; i < ds.train.size(); ++i)
    (is_val[i] ? ds.val : train).push_back(std::move(ds.train[i]));
  ds.train = std::move(train);
  return ds;
}

Dataset load_newsgroups(const fs::path& root) {
  require_dir(root);
  Dataset ds;
  ds.name = "20newsgroups";
  ds.kind = DatasetKind::newsgroups;
  std::vector<TextSample> all;
  for (const auto& category : sorted_entries(root, true)) {
    const int label = static_cast<int>(ds.class_names.size());
    ds.class_names.push_back(category.filename().string());
    for (const auto& file : sorted_entries(category, false)) {
      TextSample s;
      s.id = fmt::format("{}-{}", category.filename().string(), file.filename().string());
      s.raw_text = read_file(file);
      s.clean_text = clean_newsgroup(nfc(s.raw_text));
      s.label = label;
      all.push_back(std::move(s));
    }
  }
  ds.num_classes = static_cast<int>(ds.class_names.size());
  if (ds.num_classes == 0) throw IoError("no category directories under " + root.string());

  // Fixed-seed partition; the published sizes are reproduced exactly for the
  // full 18,828-document release and proportionally otherwise.
  const SplitSizes ref = *published_split_sizes(DatasetKind::newsgroups);
  const double total_ref = static_cast<double>(ref.train + ref.val + ref.test);
  const std::size_t n = all.size();
  const auto n_test = static_cast<std::size_t>(std::llround(static_cast<double>(n) * ref.test / total_ref));
  const auto n_val = static_cast<std::size_t>(std::llround(static_cast<double>(n) * ref.val / total_ref));
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  Rng rng(kNewsgroupsSplitSeed);
  rng.shuffle(order);
  std::vector<Split> assign(n, Split::train);
  for (std::size_t i = 0; i < n_test && i < n; ++i) assign[order[i]] = Split::test;
  for (std::size_t i = n_test; i < n_test + n_val && i < n; ++i) assign[order[i]] = Split::val;

  std::size_t rejected = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (!finish_sample(all[i], ds.kind)) {
      ++rejected;
      continue;
    }
    ds.split(assign[i]).push_back(std::move(all[i]));
  }
  warn_rejected("20newsgroups", rejected);
  return ds;
}

std::vector<TextSample> load_cwi_file(const fs::path& file, const std::string& split, DatasetKind kind,
                                      std::size_t& rejected) {
  require_file(file);
  std::ifstream in(file, std::ios::binary);
  std::vector<TextSample> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto cols = split_tab(line);
    if (cols.size() < 10)
      throw CorruptAnnotation(fmt::format("{}:{}: expected at least 10 columns, found {}", file.string(), line_no,
                                          cols.size()));
    const std::string& sentence = cols[1];
    std::size_t cp_start = 0, cp_end = 0;
    int label = 0;
    try {
      cp_start = std::stoul(cols[2]);
      cp_end = std::stoul(cols[3]);
      label = std::stoi(cols[9]);
    } catch (const std::exception&) {
      throw CorruptAnnotation(fmt::format("{}:{}: non-numeric offsets or label", file.string(), line_no));
    }
    const std::size_t b_start = byte_offset_of_codepoint(sentence, cp_start);
    const std::size_t b_end = byte_offset_of_codepoint(sentence, cp_end);
    if (b_start == std::string::npos || b_end == std::string::npos || b_start >= b_end)
      throw CorruptAnnotation(fmt::format("{}:{}: target span [{}, {}) is invalid", file.string(), line_no, cp_start,
                                          cp_end));
    if (sentence.substr(b_start, b_end - b_start) != cols[4])
      throw CorruptAnnotation(
          fmt::format("{}:{}: span text does not match target '{}'", file.string(), line_no, cols[4]));
    if (label != 0 && label != 1)
      throw CorruptAnnotation(fmt::format("{}:{}: binary label must be 0 or 1", file.string(), line_no));

    // Normalise the three pieces separately so the span stays aligned.
    const std::string pre = nfc(sentence.substr(0, b_start));
    const std::string mid = nfc(sentence.substr(b_start, b_end - b_start));
    const std::string post = nfc(sentence.substr(b_end));
    TextSample s;
    s.id = fmt::format("{}-{:06d}", split, line_no);
    s.raw_text = sentence;
    s.clean_text = pre + mid + post;
    s.target_span = Span{pre.size(), pre.size() + mid.size()};
    s.label = label;
    if (!finish_sample(s, kind)) {
      ++rejected;
      continue;
    }
    out.push_back(std::move(s));
  }
  return out;
}

Dataset load_cwi(const fs::path& root, DatasetKind kind) {
  const std::string prefix = kind == DatasetKind::english_news ? "News" : "WikiNews";
  Dataset ds;
  ds.name = kind == DatasetKind::english_news ? "english_news" : "english_wikinews";
  ds.kind = kind;
  ds.num_classes = 2;
  ds.class_names = {"simple", "complex"};
  std::size_t rejected = 0;
  ds.train = load_cwi_file(root / (prefix + "_Train.tsv"), "train", kind, rejected);
  ds.val = load_cwi_file(root / (prefix + "_Dev.tsv"), "val", kind, rejected);
  ds.test = load_cwi_file(root / (prefix + "_Test.tsv"), "test", kind, rejected);
  warn_rejected(ds.name, rejected);
  return ds;
}

json sample_to_json(const TextSample& s, Split split) {
  json j = {{"id", s.id},
            {"split", to_string(split)},
            {"raw_text", s.raw_text},
            {"clean_text", s.clean_text},
            {"prompt_text", s.prompt_text},
            {"label", s.label},
            {"prompt_truncated", s.prompt_truncated}};
  j["span"] = s.target_span ? json::array({s.target_span->start, s.target_span->end}) : json(nullptr);
  return j;
}

}  // namespace

// -- enums -------------------------------------------------------------------

std::string to_string(DatasetKind kind) {
  switch (kind) {
    case DatasetKind::imdb:
      return "imdb";
    case DatasetKind::newsgroups:
      return "20newsgroups";
    case DatasetKind::english_news:
      return "english_news";
    case DatasetKind::english_wikinews:
      return "english_wikinews";
    case DatasetKind::manifest:
      return "manifest";
    case DatasetKind::synthetic:
      return "synthetic";
  }
  return "?";
}

DatasetKind parse_dataset_kind(std::string_view name) {
  for (auto k : {DatasetKind::imdb, DatasetKind::newsgroups, DatasetKind::english_news, DatasetKind::english_wikinews,
                 DatasetKind::manifest, DatasetKind::synthetic})
    if (to_string(k) == name) return k;
  throw ConfigError(fmt::format("unknown dataset kind '{}'", name));
}

bool is_complex_word_task(DatasetKind kind) {
  return kind == DatasetKind::english_news || kind == DatasetKind::english_wikinews;
}

std::string to_string(Split split) {
  switch (split) {
    case Split::train:
      return "train";
    case Split::val:
      return "val";
    case Split::test:
      return "test";
  }
  return "?";
}

Split parse_split(std::string_view name) {
  if (name == "train") return Split::train;
  if (name == "val") return Split::val;
  if (name == "test") return Split::test;
  throw SchemaError(fmt::format("unknown split '{}'", name));
}

std::optional<SplitSizes> published_split_sizes(DatasetKind kind) {
  switch (kind) {
    case DatasetKind::imdb:
      return SplitSizes{22500, 2500, 25000};
    case DatasetKind::newsgroups:
      return SplitSizes{11353, 1261, 6214};
    case DatasetKind::english_news:
      return SplitSizes{14002, 1764, 2095};
    case DatasetKind::english_wikinews:
      return SplitSizes{7746, 870, 1287};
    default:
      return std::nullopt;
  }
}

// -- dataset -------------------------------------------------------------------

const std::vector<TextSample>& Dataset::split(Split s) const {
  switch (s) {
    case Split::train:
      return train;
    case Split::val:
      return val;
    case Split::test:
      return test;
  }
  return train;
}

std::vector<TextSample>& Dataset::split(Split s) {
  return const_cast<std::vector<TextSample>&>(static_cast<const Dataset&>(*this).split(s));
}

void Dataset::validate() const {
  if (num_classes < 2) throw SchemaError(fmt::format("dataset '{}' declares {} classes", name, num_classes));
  if (!class_names.empty() && static_cast<int>(class_names.size()) != num_classes)
    throw SchemaError("class_names does not match num_classes");
  std::set<std::string> ids;
  for (Split s : {Split::train, Split::val, Split::test}) {
    for (const auto& sample : split(s)) {
      if (sample.label < 0 || sample.label >= num_classes)
        throw SchemaError(fmt::format("sample '{}' has label {} outside [0, {})", sample.id, sample.label, num_classes));
      if (sample.target_span) {
        const auto& sp = *sample.target_span;
        if (sp.start >= sp.end || sp.end > sample.clean_text.size())
          throw SchemaError(fmt::format("sample '{}' has an invalid target span", sample.id));
      }
      if (sample.prompt_text.empty()) throw SchemaError(fmt::format("sample '{}' has an empty prompt", sample.id));
      if (!ids.insert(sample.id).second) throw SchemaError(fmt::format("sample id '{}' is not unique", sample.id));
    }
  }
  std::vector<bool> seen(static_cast<std::size_t>(num_classes), false);
  for (const auto& s : train) seen[static_cast<std::size_t>(s.label)] = true;
  for (int c = 0; c < num_classes; ++c)
    if (!seen[static_cast<std::size_t>(c)])
      throw SchemaError(fmt::format("class {} never appears in the training split", c));
}

// -- text processing -----------------------------------------------------------

std::string normalize_whitespace(std::string_view text) {
  std::string out;
  out.reserve(text.size());
  bool pending = false;
  for (char c : text) {
    if (is_space(c)) {
      pending = !out.empty();
      continue;
    }
    if (pending) out.push_back(' ');
    pending = false;
    out.push_back(c);
  }
  return out;
}

std::string nfc(std::string_view text) {
  UErrorCode status = U_ZERO_ERROR;
  const icu::Normalizer2* norm = icu::Normalizer2::getNFCInstance(status);
  if (U_FAILURE(status)) throw Error("ICU NFC normalizer unavailable");
  const icu::UnicodeString in = icu::UnicodeString::fromUTF8(icu::StringPiece(text.data(), static_cast<int32_t>(text.size())));
  if (norm->isNormalized(in, status) && U_SUCCESS(status)) {
    std::string out;
    in.toUTF8String(out);
    return out;
  }
  status = U_ZERO_ERROR;
  const icu::UnicodeString normalized = norm->normalize(in, status);
  if (U_FAILURE(status)) throw Error("NFC normalization failed");
  std::string out;
  normalized.toUTF8String(out);
  return out;
}

std::string strip_html(std::string_view text) {
  std::string out;
  out.reserve(text.size());
  std::size_t i = 0;
  while (i < text.size()) {
    if (text[i] == '<' && i + 1 < text.size()) {
      std::size_t j = i + 1;
      if (text[j] == '/') ++j;
      const bool opens_tag = j < text.size() && (is_alpha(text[j]) || (text[j] == '!' && j == i + 1));
      if (opens_tag) {
        std::size_t k = j;
        while (k < text.size() && text[k] != '>' && text[k] != '<') ++k;
        if (k < text.size() && text[k] == '>') {
          out.push_back(' ');
          i = k + 1;
          continue;
        }
      }
    }
    out.push_back(text[i++]);
  }
  return normalize_whitespace(out);
}

std::string clean_newsgroup(std::string_view document) {
  std::string_view body = document;
  if (document.find('\n') != std::string_view::npos) {
    const auto lines = split_lines(document);
    std::size_t i = 0;
    if (!lines.empty() && is_header_line(lines[0])) {
      while (i < lines.size()) {
        const auto& l = lines[i];
        if (is_header_line(l) || (i > 0 && !l.empty() && (l[0] == ' ' || l[0] == '\t') && !is_blank(l))) {
          ++i;
          continue;
        }
        break;
      }
      std::size_t consumed = 0;
      for (std::size_t k = 0; k < i; ++k) consumed += lines[k].size() + 1;
      body = consumed >= document.size() ? std::string_view{} : document.substr(consumed);
    }
  }
  return normalize_whitespace(remove_emails(body));
}

std::string mark_target(std::string_view sentence, Span span, std::string_view marker) {
  if (span.start >= span.end || span.end > sentence.size())
    throw CorruptAnnotation(
        fmt::format("target span [{}, {}) invalid for a sentence of {} bytes", span.start, span.end, sentence.size()));
  const std::string pre = normalize_whitespace(sentence.substr(0, span.start));
  const std::string mid = normalize_whitespace(sentence.substr(span.start, span.end - span.start));
  const std::string post = normalize_whitespace(sentence.substr(span.end));
  std::string out;
  for (std::string_view part : {std::string_view(pre), marker, std::string_view(mid), marker, std::string_view(post)}) {
    if (part.empty()) continue;
    if (!out.empty()) out.push_back(' ');
    out.append(part);
  }
  return out;
}

std::string unmark_target(std::string_view text, std::string_view marker) {
  std::string out;
  std::istringstream ss{std::string(text)};
  std::string word;
  while (ss >> word) {
    if (word == marker) continue;
    if (!out.empty()) out.push_back(' ');
    out += word;
  }
  return out;
}

std::string model_input(const TextSample& sample, DatasetKind kind) {
  if (is_complex_word_task(kind) && sample.target_span) return mark_target(sample.clean_text, *sample.target_span);
  return sample.clean_text;
}

Prompt build_prompt(const TextSample& sample, DatasetKind kind, std::size_t budget) {
  std::string source;
  if (is_complex_word_task(kind)) {
    if (!sample.target_span) throw PreconditionError("complex-word sample '" + sample.id + "' has no target span");
    const auto& sp = *sample.target_span;
    if (sp.start >= sp.end || sp.end > sample.clean_text.size())
      throw CorruptAnnotation("sample '" + sample.id + "' has an invalid target span");
    source = sample.clean_text.substr(sp.start, sp.end - sp.start);
  } else {
    source = sample.clean_text;
  }
  std::istringstream ss(source);
  Prompt p;
  std::string word;
  std::size_t n = 0;
  while (ss >> word) {
    if (n == budget) {
      p.truncated = true;
      break;
    }
    if (n > 0) p.text.push_back(' ');
    p.text += word;
    ++n;
  }
  if (p.text.empty()) throw PreconditionError("sample '" + sample.id + "' yields an empty prompt");
  return p;
}

// -- loading -------------------------------------------------------------------

Dataset load_dataset(const fs::path& source, DatasetKind kind) {
  if (!fs::exists(source)) throw IoError("dataset source does not exist: " + source.string());
  Dataset ds;
  switch (kind) {
    case DatasetKind::imdb:
      ds = load_imdb(source);
      break;
    case DatasetKind::newsgroups:
      ds = load_newsgroups(source);
      break;
    case DatasetKind::english_news:
    case DatasetKind::english_wikinews:
      ds = load_cwi(source, kind);
      break;
    case DatasetKind::manifest:
      return import_manifest(source);
    case DatasetKind::synthetic:
      throw ConfigError("synthetic datasets are generated, not loaded");
  }
  ds.validate();
  return ds;
}

void export_manifest(const Dataset& ds, const fs::path& path) {
  std::string out;
  const json header = {{"format", "privkd-manifest"},
                       {"version", 1},
                       {"name", ds.name},
                       {"kind", to_string(ds.kind)},
                       {"num_classes", ds.num_classes},
                       {"class_names", ds.class_names},
                       {"prompt_budget", kPromptBudget}};
  out += header.dump() + "\n";
  for (Split s : {Split::train, Split::val, Split::test})
    for (const auto& sample : ds.split(s)) out += sample_to_json(sample, s).dump() + "\n";
  write_file_atomic(path, out);
}

Dataset import_manifest(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open manifest: " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw SchemaError("manifest is empty: " + path.string());
  Dataset ds;
  try {
    const json header = json::parse(line);
    if (header.value("format", "") != "privkd-manifest" || header.value("version", 0) != 1)
      throw SchemaError("not a version-1 manifest: " + path.string());
    ds.name = header.at("name").get<std::string>();
    ds.kind = parse_dataset_kind(header.at("kind").get<std::string>());
    ds.num_classes = header.at("num_classes").get<int>();
    ds.class_names = header.at("class_names").get<std::vector<std::string>>();
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
      ++line_no;
      if (line.empty()) continue;
      const json r = json::parse(line);
      TextSample s;
      s.id = r.at("id").get<std::string>();
      s.raw_text = r.at("raw_text").get<std::string>();
      s.clean_text = r.at("clean_text").get<std::string>();
      s.prompt_text = r.at("prompt_text").get<std::string>();
      s.label = r.at("label").get<int>();
      s.prompt_truncated = r.value("prompt_truncated", false);
      if (!r.at("span").is_null()) {
        const auto sp = r.at("span").get<std::vector<std::size_t>>();
        if (sp.size() != 2) throw SchemaError(fmt::format("{}:{}: span must have two offsets", path.string(), line_no));
        s.target_span = Span{sp[0], sp[1]};
      }
      ds.split(parse_split(r.at("split").get<std::string>())).push_back(std::move(s));
    }
  } catch (const json::exception& e) {
    throw SchemaError("malformed manifest " + path.string() + ": " + e.what());
  } catch (const ConfigError& e) {
    throw SchemaError(e.what());
  }
  ds.validate();
  return ds;
}

}  // namespace privkd::corpus
