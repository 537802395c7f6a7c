// Copyright 2026 The privkd Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace privkd::corpus {

enum class DatasetKind { imdb, newsgroups, english_news, english_wikinews, manifest, synthetic };

std::string to_string(DatasetKind kind);
DatasetKind parse_dataset_kind(std::string_view name);
bool is_complex_word_task(DatasetKind kind);

enum class Split { train, val, test };

std::string to_string(Split split);
Split parse_split(std::string_view name);

/// Byte offsets [start, end) into a UTF-8 string.
struct Span {
  std::size_t start = 0;
  std::size_t end = 0;

  friend bool operator==(const Span&, const Span&) = default;
};

struct TextSample {
  std::string id;
  std::string raw_text;
  std::string clean_text;
  std::string prompt_text;
  int label = 0;
  std::optional<Span> target_span;
  bool prompt_truncated = false;

  friend bool operator==(const TextSample&, const TextSample&) = default;
};

struct Dataset {
  std::string name;
  DatasetKind kind = DatasetKind::manifest;
  int num_classes = 0;
  std::vector<std::string> class_names;
  std::vector<TextSample> train;
  std::vector<TextSample> val;
  std::vector<TextSample> test;

  const std::vector<TextSample>& split(Split s) const;
  std::vector<TextSample>& split(Split s);
  std::size_t size() const { return train.size() + val.size() + test.size(); }

  /// Throws SchemaError when a sample or split invariant is violated: labels
  /// in range, valid spans, non-empty prompts, disjoint split ids, and every
  /// class present in train.
  void validate() const;

  friend bool operator==(const Dataset&, const Dataset&) = default;
};

/// Maximum number of whitespace tokens kept in a generation prompt.
inline constexpr std::size_t kPromptBudget = 256;
/// Seed of the 10% IMDB validation carve-out.
inline constexpr std::uint64_t kImdbValSeed = 20230917;
/// Seed of the 20 Newsgroups train/val/test partition.
inline constexpr std::uint64_t kNewsgroupsSplitSeed = 18828;

std::string normalize_whitespace(std::string_view text);
/// Unicode NFC; invalid UTF-8 sequences are replaced by U+FFFD.
std::string nfc(std::string_view text);

/// Replaces every `<tag ...>` / `</tag>` / `<!...>` with a space, then collapses whitespace.
std::string strip_html(std::string_view text);

/// Drops the leading `Key: value` header block (terminated by a blank line or
/// the end of the document) and inline e-mail addresses, then collapses
/// whitespace. Single-line documents carry no header block.
std::string clean_newsgroup(std::string_view document);

/// Inserts `marker`, space-delimited, before and after `span` of `sentence`.
/// Throws CorruptAnnotation for an empty, inverted or out-of-range span.
std::string mark_target(std::string_view sentence, Span span, std::string_view marker = "[SEP]");
/// Removes every whitespace-delimited `marker` and collapses whitespace.
std::string unmark_target(std::string_view text, std::string_view marker = "[SEP]");

/// Text fed to the classifiers: the marked sentence for complex-word tasks,
/// clean_text otherwise.
std::string model_input(const TextSample& sample, DatasetKind kind);

struct Prompt {
  std::string text;
  bool truncated = false;
};

/// Generation prompt: the target phrase for complex-word tasks, clean_text for
/// every other kind; truncated to `budget` whitespace tokens. Throws
/// PreconditionError when the result is empty.
Prompt build_prompt(const TextSample& sample, DatasetKind kind, std::size_t budget = kPromptBudget);

/// Reads the public distribution of a corpus:
///   imdb              <root>/{train,test}/{neg,pos}/*.txt
///   newsgroups        <root>/<category>/<document>   (20news-18828 layout)
///   english_news      <root>/News_{Train,Dev,Test}.tsv
///   english_wikinews  <root>/WikiNews_{Train,Dev,Test}.tsv
///   manifest          a manifest file written by export_manifest
Dataset load_dataset(const std::filesystem::path& source, DatasetKind kind);

/// Line-delimited JSON: one header object, then one record per sample.
void export_manifest(const Dataset& dataset, const std::filesystem::path& path);
Dataset import_manifest(const std::filesystem::path& path);

/// Published split cardinalities (train, val, test) of the public corpora.
struct SplitSizes {
  std::size_t train, val, test;
};
std::optional<SplitSizes> published_split_sizes(DatasetKind kind);

}  // namespace privkd::corpus
