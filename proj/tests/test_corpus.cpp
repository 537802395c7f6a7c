// Copyright 2026 The privkd Authors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <cctype>
#include <cstdlib>
#include <filesystem>
#include <fstream>

#include "privkd/corpus.hpp"
#include "privkd/errors.hpp"
#include "privkd/params.hpp"
#include "support/support.hpp"

using namespace privkd;
using namespace privkd::corpus;
namespace fs = std::filesystem;

namespace {

void write(const fs::path& p, const std::string& text) {
  fs::create_directories(p.parent_path());
  std::ofstream(p, std::ios::binary) << text;
}

/// Offsets count code points, as in the published files.
std::string cwi_line(const std::string& id, const std::string& sentence, std::size_t start, std::size_t end,
                     const std::string& target, int label) {
  return id + "\t" + sentence + "\t" + std::to_string(start) + "\t" + std::to_string(end) + "\t" + target +
         "\t10\t10\t0\t0\t" + std::to_string(label) + "\t0\n";
}

const std::vector<std::string> kHtmlFixtures{
    "Great movie!<br /><br />Loved it", "no tags here", "", "<p>a</p><p>b</p>", "x <!-- note --> y",
    "<i>italic</i>  and   <b>bold</b>"};

const std::vector<std::string> kNewsFixtures{
    "From: a@b.com\nSubject: cars\n\nI saw a V8 engine", "plain body only", "From: a@b.com\nSubject: x\n\n",
    "Organization: none\nLines: 3\n\nmail me at joe@example.org please", ""};

}  // namespace

TEST_SUITE("corpus") {
  TEST_CASE("strip_html fixtures") {
    CHECK(strip_html("Great movie!<br /><br />Loved it") == "Great movie! Loved it");
    CHECK(strip_html("no tags here") == "no tags here");
    CHECK(strip_html("") == "");
    CHECK(strip_html("<p>a</p><p>b</p>") == "a b");
  }

  TEST_CASE("clean_newsgroup fixtures") {
    CHECK(clean_newsgroup("From: a@b.com\nSubject: cars\n\nI saw a V8 engine") == "I saw a V8 engine");
    CHECK(clean_newsgroup("plain body only") == "plain body only");
    CHECK(clean_newsgroup("From: a@b.com\nSubject: x\n\n") == "");
    CHECK(clean_newsgroup("Organization: none\nLines: 3\n\nmail me at joe@example.org please") ==
          "mail me at please");
  }

  TEST_CASE("mark_target fixtures") {
    const std::string s = "The adjudication was swift";
    CHECK(mark_target(s, {4, 16}) == "The [SEP] adjudication [SEP] was swift");
    CHECK(mark_target(s, {0, s.size()}) == "[SEP] The adjudication was swift [SEP]");
    CHECK_THROWS_AS(mark_target(s, {5, 3}), CorruptAnnotation);
    CHECK_THROWS_AS(mark_target(s, {4, 4}), CorruptAnnotation);
    CHECK_THROWS_AS(mark_target(s, {4, 100}), CorruptAnnotation);
  }

  TEST_CASE("preprocessing is idempotent") {
    for (const auto& x : kHtmlFixtures) CHECK(strip_html(strip_html(x)) == strip_html(x));
    for (const auto& x : kNewsFixtures) CHECK(clean_newsgroup(clean_newsgroup(x)) == clean_newsgroup(x));
  }

  TEST_CASE("unmark inverts mark_target on word-aligned spans") {
    Rng rng(1);
    const std::string s = "  A  sentence with   several words, punctuation and\tspaces ";
    std::vector<std::size_t> starts, ends;
    for (std::size_t i = 0; i < s.size(); ++i) {
      const bool ws = std::isspace(static_cast<unsigned char>(s[i])) != 0;
      if (!ws && (i == 0 || std::isspace(static_cast<unsigned char>(s[i - 1])))) starts.push_back(i);
      if (!ws && (i + 1 == s.size() || std::isspace(static_cast<unsigned char>(s[i + 1])))) ends.push_back(i + 1);
    }
    for (int i = 0; i < 100; ++i) {
      const std::size_t w = rng.below(starts.size());
      const std::size_t v = w + rng.below(ends.size() - w);
      CHECK(unmark_target(mark_target(s, {starts[w], ends[v]})) == normalize_whitespace(s));
    }
  }

  TEST_CASE("nfc composes and repairs") {
    CHECK(nfc("e\xcc\x81") == "\xc3\xa9");
    CHECK(nfc("ok") == "ok");
    CHECK(nfc("bad\xff") == "bad\xef\xbf\xbd");
  }

  TEST_CASE("build_prompt") {
    TextSample cwi{.id = "a", .clean_text = "The adjudication was swift", .label = 1, .target_span = Span{4, 16}};
    CHECK(build_prompt(cwi, DatasetKind::english_news).text == "adjudication");
    CHECK(model_input(cwi, DatasetKind::english_news) == "The [SEP] adjudication [SEP] was swift");
    TextSample review{.id = "b", .clean_text = strip_html("Great movie!<br /><br />Loved it")};
    CHECK(build_prompt(review, DatasetKind::imdb).text == "Great movie! Loved it");
    TextSample news{.id = "c", .clean_text = clean_newsgroup("From: a@b.com\nSubject: cars\n\nI saw a V8 engine")};
    CHECK(build_prompt(news, DatasetKind::newsgroups).text == "I saw a V8 engine");
    std::string long_text;
    for (int i = 0; i < 300; ++i) long_text += "w ";
    TextSample big{.id = "d", .clean_text = long_text};
    const auto p = build_prompt(big, DatasetKind::imdb);
    CHECK(p.truncated);
    CHECK(p.text.size() == 2 * kPromptBudget - 1);
    TextSample empty{.id = "e", .clean_text = ""};
    CHECK_THROWS_AS(build_prompt(empty, DatasetKind::imdb), PreconditionError);
  }

  TEST_CASE("manifest round trip is lossless") {
    testing::TempDir dir("manifest");
    Dataset ds = testing::toy_dataset(6, 2, 2, 3);
    ds.kind = DatasetKind::english_news;
    ds.train[0].clean_text = "The adjudication was swift";
    ds.train[0].target_span = Span{4, 16};
    ds.train[0].prompt_text = "adjudication";
    ds.train[1].raw_text = "Caf\xc3\xa9 \"quoted\"\nnewline";
    ds.train[1].prompt_truncated = true;
    export_manifest(ds, dir / "m.jsonl");
    const Dataset back = import_manifest(dir / "m.jsonl");
    CHECK(back == ds);
    CHECK(load_dataset(dir / "m.jsonl", DatasetKind::manifest) == ds);
  }

  TEST_CASE("manifest import rejects schema violations") {
    testing::TempDir dir("manifest-bad");
    Dataset ds = testing::toy_dataset(4, 2, 2, 4);
    ds.train[0].label = ds.num_classes;
    export_manifest(ds, dir / "bad.jsonl");
    CHECK_THROWS_AS(import_manifest(dir / "bad.jsonl"), SchemaError);

    Dataset empty;
    empty.name = "empty";
    export_manifest(empty, dir / "empty.jsonl");
    CHECK(fs::file_size(dir / "empty.jsonl") > 0);
    CHECK_THROWS_AS(import_manifest(dir / "empty.jsonl"), SchemaError);

    write(dir / "junk.jsonl", "{not json\n");
    CHECK_THROWS_AS(import_manifest(dir / "junk.jsonl"), SchemaError);
    CHECK_THROWS_AS(import_manifest(dir / "missing.jsonl"), IoError);
  }

  TEST_CASE("dataset validation") {
    Dataset ds = testing::toy_dataset(4, 2, 2, 5);
    CHECK_NOTHROW(ds.validate());
    Dataset dup = ds;
    dup.val[0].id = dup.train[0].id;
    CHECK_THROWS_AS(dup.validate(), SchemaError);
    Dataset missing = ds;
    for (auto& s : missing.train) s.label = 0;
    CHECK_THROWS_AS(missing.validate(), SchemaError);
    Dataset bad_span = ds;
    bad_span.train[0].target_span = Span{3, 2};
    CHECK_THROWS_AS(bad_span.validate(), SchemaError);
  }

  TEST_CASE("imdb layout loader") {
    testing::TempDir dir("imdb");
    for (const char* split : {"train", "test"})
      for (const char* label : {"neg", "pos"})
        for (int i = 0; i < 10; ++i)
          write(dir.path() / split / label / (std::to_string(i) + "_7.txt"),
                std::string(label) + " review " + std::to_string(i) + "<br />end");
    write(dir.path() / "train" / "pos" / "99_1.txt", "<br /><br />");
    const Dataset ds = load_dataset(dir.path(), DatasetKind::imdb);
    CHECK(ds.train.size() == 18);
    CHECK(ds.val.size() == 2);
    CHECK(ds.test.size() == 20);
    CHECK(ds.test[0].clean_text.find('<') == std::string::npos);
    CHECK(load_dataset(dir.path(), DatasetKind::imdb) == ds);
  }

  TEST_CASE("newsgroups layout loader") {
    testing::TempDir dir("ng");
    for (const char* cat : {"rec.autos", "sci.space"})
      for (int i = 0; i < 30; ++i)
        write(dir.path() / cat / std::to_string(1000 + i),
              "From: x@y.z\nSubject: s\n\nbody " + std::string(cat) + " " + std::to_string(i));
    const Dataset ds = load_dataset(dir.path(), DatasetKind::newsgroups);
    CHECK(ds.num_classes == 2);
    CHECK(ds.size() == 60);
    for (const auto& s : ds.train) CHECK(s.clean_text.rfind("body ", 0) == 0);
  }

  TEST_CASE("complex-word loader") {
    testing::TempDir dir("cwi");
    const std::string s1 = "The adjudication was swift";
    const std::string s2 = "A caf\xc3\xa9 opened nearby";
    std::string rows = cwi_line("1", s1, 4, 16, "adjudication", 1) + cwi_line("2", s1, 21, 26, "swift", 0);
    write(dir / "News_Train.tsv", rows);
    write(dir / "News_Dev.tsv", cwi_line("3", s2, 2, 6, "caf\xc3\xa9", 1));
    write(dir / "News_Test.tsv", cwi_line("4", s2, 7, 13, "opened", 0));
    const Dataset ds = load_dataset(dir.path(), DatasetKind::english_news);
    REQUIRE(ds.train.size() == 2);
    CHECK(model_input(ds.train[0], ds.kind) == "The [SEP] adjudication [SEP] was swift");
    CHECK(ds.train[0].prompt_text == "adjudication");
    CHECK(ds.val[0].prompt_text == "caf\xc3\xa9");
    write(dir / "News_Train.tsv", cwi_line("1", s1, 4, 16, "adjudication", 1) + "1\t" + s1 + "\t5\t3\tx\t1\t1\t0\t0\t1\t0\n");
    CHECK_THROWS_AS(load_dataset(dir.path(), DatasetKind::english_news), CorruptAnnotation);
    CHECK_THROWS_AS(load_dataset(dir / "absent", DatasetKind::english_news), IoError);
  }

  TEST_CASE("published split cardinalities") {
    const auto check = [](DatasetKind kind, std::size_t tr, std::size_t va, std::size_t te) {
      const auto s = published_split_sizes(kind);
      REQUIRE(s.has_value());
      CHECK(s->train == tr);
      CHECK(s->val == va);
      CHECK(s->test == te);
    };
    check(DatasetKind::imdb, 22500, 2500, 25000);
    check(DatasetKind::newsgroups, 11353, 1261, 6214);
    check(DatasetKind::english_news, 14002, 1764, 2095);
    check(DatasetKind::english_wikinews, 7746, 870, 1287);
  }

  TEST_CASE("public corpora match published split sizes") {
    const char* root = std::getenv("PRIVKD_CORPORA");
    const std::vector<std::pair<DatasetKind, std::string>> corpora{{DatasetKind::imdb, "aclImdb"},
                                                                   {DatasetKind::newsgroups, "20news-18828"},
                                                                   {DatasetKind::english_news, "cwi"},
                                                                   {DatasetKind::english_wikinews, "cwi"}};
    for (const auto& [kind, sub] : corpora) {
      const fs::path dir = root != nullptr ? fs::path(root) / sub : fs::path();
      if (root == nullptr || !fs::exists(dir)) {
        MESSAGE("warning: skipped " << to_string(kind) << " split check; set PRIVKD_CORPORA to a directory holding "
                                    << sub);
        continue;
      }
      const Dataset ds = load_dataset(dir, kind);
      const auto s = *published_split_sizes(kind);
      CHECK(ds.train.size() == s.train);
      CHECK(ds.val.size() == s.val);
      CHECK(ds.test.size() == s.test);
    }
  }
}
