// Copyright 2026 The privkd Authors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <chrono>
#include <filesystem>
#include <fstream>

#include <fmt/format.h>

#include "privkd/errors.hpp"
#include "privkd/genimage.hpp"
#include "privkd/params.hpp"
#include "support/support.hpp"

using namespace privkd;
using namespace std::chrono_literals;
namespace fs = std::filesystem;

namespace {

using Script = std::vector<testing::StubServer::Reply>;

std::string pixel_digest(const Image& img) {
  const std::string_view bytes(reinterpret_cast<const char*>(img.pixels.data()), img.pixels.size());
  return fmt::format("{:016x}", fnv1a64(bytes));
}

/// Mock backend that fails for selected prompts.
class FlakyBackend : public gen::MockBackend {
 public:
  explicit FlakyBackend(std::string bad) : bad_(std::move(bad)) {}
  Image generate(const std::string& prompt, std::uint64_t seed, gen::ImageSize size) override {
    if (prompt == bad_) throw BackendError("scripted failure");
    return MockBackend::generate(prompt, seed, size);
  }

 private:
  std::string bad_;
};

corpus::Dataset five_samples() {
  corpus::Dataset ds = testing::toy_dataset(3, 1, 1, 1);
  for (auto* split : {&ds.train, &ds.val, &ds.test})
    for (auto& s : *split) s.prompt_text = "prompt for " + s.id;
  return ds;
}

gen::RemoteConfig stub_config(const testing::StubServer& stub, gen::RetryPolicy retry = {}) {
  gen::RemoteConfig cfg;
  cfg.url = stub.url();
  cfg.timeout = 2000ms;
  cfg.retry = retry;
  return cfg;
}

struct SleepLog {
  std::vector<long> delays;
  gen::Sleeper sleeper() {
    return [this](std::chrono::milliseconds d) { delays.push_back(static_cast<long>(d.count())); };
  }
};

}  // namespace

TEST_SUITE("genimage") {
  TEST_CASE("mock output is a pure function of its inputs") {
    const gen::ImageSize size{64, 48};
    const Image a = gen::render_mock("a red car", 1, size);
    const Image b = gen::render_mock("a red car", 1, size);
    CHECK(a == b);
    CHECK(a.height == 64);
    CHECK(a.width == 48);
    CHECK(a != gen::render_mock("a red car", 2, size));
    CHECK(a != gen::render_mock("a blue car", 1, size));
    CHECK(encode_png(a, "x") == encode_png(b, "x"));
  }

  TEST_CASE("mock output matches the frozen golden digest") {
    CHECK(pixel_digest(gen::render_mock("a red car", 1, {64, 64})) == "bf5687a5e97fd09b");
    CHECK(pixel_digest(gen::render_mock("a red car", 2, {32, 32})) == "31a2720be911d34a");
  }

  TEST_CASE("mock_generate validates and fingerprints") {
    CHECK_THROWS_AS(gen::mock_generate("", 1, {8, 8}), PreconditionError);
    const auto g = gen::mock_generate("a red car", 1, {8, 8});
    gen::MockBackend mock;
    CHECK(g.fingerprint == gen::fingerprint(mock, "a red car", 1, {8, 8}));
    CHECK(g.fingerprint != gen::fingerprint(mock, "a red car", 2, {8, 8}));
    CHECK(g.fingerprint != gen::fingerprint(mock, "a red car", 1, {8, 16}));
  }

  TEST_CASE("retry policy schedule") {
    const gen::RetryPolicy p;
    CHECK(p.delay_after(1) == 1000ms);
    CHECK(p.delay_after(2) == 2000ms);
    CHECK(p.delay_after(3) == 4000ms);
    CHECK(p.delay_after(4) == 8000ms);
  }

  TEST_CASE("cache hit, miss and corruption") {
    testing::TempDir dir("cache");
    const auto g = gen::mock_generate("a red car", 1, {16, 16});
    gen::GeneratedImage stored = g;
    stored.sample_id = "train/1";
    CHECK_FALSE(gen::cache_lookup("train/1", g.fingerprint, dir.path()).has_value());
    gen::cache_store(stored, dir.path());
    CHECK(gen::cache_file_name("train/1").find('/') == std::string::npos);
    const auto hit = gen::cache_lookup("train/1", g.fingerprint, dir.path());
    REQUIRE(hit.has_value());
    CHECK(hit->image == g.image);
    CHECK_FALSE(gen::cache_lookup("train/1", "other", dir.path()).has_value());
    CHECK_FALSE(gen::cache_lookup("train/1", g.fingerprint, dir / "nope").has_value());

    const fs::path file = dir / gen::cache_file_name("train/1");
    const std::string bytes = read_file(file);
    write_file_atomic(file, bytes.substr(0, bytes.size() / 2));
    CHECK_THROWS_AS(gen::cache_lookup("train/1", g.fingerprint, dir.path()), IntegrityError);
  }

  TEST_CASE("generate_all covers every sample and reuses the cache") {
    testing::TempDir dir("genall");
    const auto ds = five_samples();
    gen::MockBackend mock;
    const gen::GenerateOptions opt{.seed = 3, .size = {16, 16}, .workers = 2};
    const auto index = gen::generate_all(ds, mock, dir.path(), opt);
    CHECK(index.size() == 5);
    CHECK(mock.calls() == 5);
    for (const auto& s : ds.test) CHECK(index.entries.at(s.id).split == corpus::Split::test);

    gen::MockBackend warm;
    const auto again = gen::generate_all(ds, warm, dir.path(), opt);
    CHECK(warm.calls() == 0);
    CHECK(again == index);

    const fs::path index_file = gen::dataset_cache_dir(dir.path(), ds.name) / "index.json";
    CHECK(gen::ImageIndex::load(index_file) == index);
    const auto images = gen::load_images(index, dir.path());
    CHECK(images.size() == 5);
    CHECK(images.at(ds.train[0].id) == gen::render_mock(ds.train[0].prompt_text, 3, {16, 16}));

    gen::MockBackend reseeded;
    gen::generate_all(ds, reseeded, dir.path(), {.seed = 4, .size = {16, 16}});
    CHECK(reseeded.calls() == 5);
  }

  TEST_CASE("load_images rejects a swapped file") {
    testing::TempDir dir("swap");
    const auto ds = five_samples();
    gen::MockBackend mock;
    const auto index = gen::generate_all(ds, mock, dir.path(), {.seed = 1, .size = {8, 8}});
    const fs::path base = gen::dataset_cache_dir(dir.path(), ds.name);
    fs::copy_file(base / index.entries.at(ds.train[0].id).path, base / index.entries.at(ds.train[1].id).path,
                  fs::copy_options::overwrite_existing);
    CHECK_THROWS_AS(gen::load_images(index, dir.path()), IntegrityError);
  }

  TEST_CASE("partial failure persists the successful entries") {
    testing::TempDir dir("partial");
    const auto ds = five_samples();
    const std::string bad_id = ds.train[1].id;
    FlakyBackend flaky(ds.train[1].prompt_text);
    try {
      gen::generate_all(ds, flaky, dir.path(), {.seed = 1, .size = {8, 8}});
      FAIL("expected GenerationFailed");
    } catch (const GenerationFailed& e) {
      CHECK(e.failed_ids() == std::vector<std::string>{bad_id});
      CHECK(std::string(e.what()).find(bad_id) != std::string::npos);
    }
    const auto index = gen::ImageIndex::load(gen::dataset_cache_dir(dir.path(), ds.name) / "index.json");
    CHECK(index.size() == 4);
    CHECK_FALSE(index.contains(bad_id));
  }

  TEST_CASE("remote: healthy server") {
    testing::StubServer stub(Script{{}});
    SleepLog log;
    const auto r = gen::remote_generate("a red car", 7, {24, 16}, stub_config(stub), log.sleeper());
    CHECK(r.attempts == 1);
    CHECK(r.image == gen::render_mock("a red car", 7, {24, 16}));
    CHECK(log.delays.empty());
    const auto body = nlohmann::json::parse(stub.bodies().at(0));
    CHECK(body["prompt"] == "a red car");
    CHECK(body["seed"] == 7);
    CHECK(body["width"] == 16);
    CHECK(body["height"] == 24);
    CHECK(body.contains("model"));
  }

  TEST_CASE("remote: transient errors are retried") {
    testing::StubServer stub(Script{{.status = 503}, {.status = 503}, {.status = 200}});
    SleepLog log;
    const auto r = gen::remote_generate("p", 1, {8, 8}, stub_config(stub), log.sleeper());
    CHECK(r.attempts == 3);
    CHECK(stub.requests() == 3);
    CHECK(log.delays == std::vector<long>{1000, 2000});
  }

  TEST_CASE("remote: persistent failure exhausts the attempts") {
    testing::StubServer stub(Script{{.status = 500}});
    SleepLog log;
    CHECK_THROWS_AS(gen::remote_generate("p", 1, {8, 8}, stub_config(stub), log.sleeper()), BackendError);
    CHECK(stub.requests() == 5);
    CHECK(log.delays == std::vector<long>{1000, 2000, 4000, 8000});
  }

  TEST_CASE("remote: backoff really waits") {
    testing::StubServer stub(Script{{.status = 429}});
    const gen::RetryPolicy fast{.max_attempts = 4, .base = 20ms, .factor = 2.0};
    const auto t0 = std::chrono::steady_clock::now();
    CHECK_THROWS_AS(gen::remote_generate("p", 1, {8, 8}, stub_config(stub, fast)), BackendError);
    const auto elapsed = std::chrono::steady_clock::now() - t0;
    CHECK(stub.requests() == 4);
    CHECK(elapsed >= 140ms);
    CHECK(elapsed < 5000ms);
  }

  TEST_CASE("remote: slow responses time out and are retried") {
    testing::StubServer stub(Script{{.delay = 600ms}, {}});
    auto cfg = stub_config(stub, {.max_attempts = 2, .base = 1ms, .factor = 1.0});
    cfg.timeout = 200ms;
    SleepLog log;
    const auto r = gen::remote_generate("p", 1, {8, 8}, cfg, log.sleeper());
    CHECK(r.attempts == 2);
    CHECK(log.delays.size() == 1);

    testing::StubServer slow(Script{{.delay = 600ms}});
    auto cfg2 = stub_config(slow, {.max_attempts = 2, .base = 1ms, .factor = 1.0});
    cfg2.timeout = 200ms;
    CHECK_THROWS_AS(gen::remote_generate("p", 1, {8, 8}, cfg2, log.sleeper()), BackendError);
  }

  TEST_CASE("remote: client errors fail immediately") {
    testing::StubServer stub(Script{{.status = 404}});
    SleepLog log;
    CHECK_THROWS_AS(gen::remote_generate("p", 1, {8, 8}, stub_config(stub), log.sleeper()), BackendError);
    CHECK(stub.requests() == 1);
    CHECK(log.delays.empty());
  }

  TEST_CASE("remote: malformed payloads are protocol errors") {
    testing::StubServer stub(Script{{.status = 200, .png = false, .body = "definitely not a png"}});
    SleepLog log;
    CHECK_THROWS_AS(gen::remote_generate("p", 1, {8, 8}, stub_config(stub), log.sleeper()), ProtocolError);
    CHECK(stub.requests() == 1);

    testing::StubServer wrong(Script{{.status = 200, .png = false, .body = encode_png(Image(4, 4))}});
    CHECK_THROWS_AS(gen::remote_generate("p", 1, {8, 8}, stub_config(wrong), log.sleeper()), ProtocolError);
  }

  TEST_CASE("remote: unreachable server") {
    gen::RemoteConfig cfg;
    cfg.url = "http://127.0.0.1:1";
    cfg.timeout = 200ms;
    cfg.retry = {.max_attempts = 2, .base = 1ms, .factor = 1.0};
    SleepLog log;
    CHECK_THROWS_AS(gen::remote_generate("p", 1, {8, 8}, cfg, log.sleeper()), BackendError);
    CHECK(log.delays.size() == 1);
  }

  TEST_CASE("remote: partial failure across a dataset") {
    testing::TempDir dir("remote-partial");
    const auto ds = five_samples();
    testing::StubServer stub(Script{{}});
    stub.fail_prompt(ds.val[0].prompt_text);
    SleepLog log;
    gen::RemoteBackend backend(stub_config(stub, {.max_attempts = 2, .base = 1ms, .factor = 1.0}), log.sleeper());
    try {
      gen::generate_all(ds, backend, dir.path(), {.seed = 1, .size = {8, 8}});
      FAIL("expected GenerationFailed");
    } catch (const GenerationFailed& e) {
      CHECK(e.failed_ids() == std::vector<std::string>{ds.val[0].id});
    }
    const auto index = gen::ImageIndex::load(gen::dataset_cache_dir(dir.path(), ds.name) / "index.json");
    CHECK(index.size() == 4);
    CHECK(stub.requests() == 6);
  }

  TEST_CASE("remote backend version tracks settings") {
    gen::RemoteConfig a;
    a.url = "http://127.0.0.1:9";
    gen::RemoteConfig b = a;
    b.settings = {{"steps", 30}};
    CHECK(gen::RemoteBackend(a).version() != gen::RemoteBackend(b).version());
    CHECK_THROWS_AS(gen::RemoteBackend(gen::RemoteConfig{}), ConfigError);
  }
}
