// Copyright 2026 The privkd Authors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <cmath>
#include <fstream>
#include <limits>

#include "privkd/errors.hpp"
#include "privkd/harness.hpp"
#include "privkd/trainer.hpp"
#include "support/support.hpp"

using namespace privkd;
using train::TrainConfig;

namespace {

struct Toy {
  harness::SyntheticTask task;
  arch::Tokenizer tok;
  arch::TeacherSpec teacher;
  arch::ClassifierSpec text;
  arch::ClassifierSpec image;
  TrainConfig cfg;
};

Toy make_toy(std::uint64_t seed, double q = 0.9) {
  harness::SyntheticTaskSpec spec;
  spec.num_classes = 2;
  spec.vocab_size = 24;
  spec.length = 8;
  spec.epsilon = 0.4;
  spec.q = q;
  spec.n_train = 60;
  spec.n_val = 20;
  spec.n_test = 20;
  spec.image_size = 8;
  Toy t;
  t.task = harness::make_synthetic_task(spec, seed);
  std::vector<std::string> texts;
  for (const auto& s : t.task.dataset.train) texts.push_back(s.clean_text);
  t.tok = arch::Tokenizer::build(texts);
  t.teacher = testing::tiny_teacher(t.tok.size(), 2);
  t.text = testing::tiny_text_classifier(t.tok.size(), 2);
  t.image = testing::tiny_image_classifier(2);
  t.cfg.lr0 = 3e-3;
  t.cfg.epochs = 4;
  t.cfg.seed = seed;
  return t;
}

ParameterStore init_for(const arch::ClassifierSpec& spec, std::uint64_t seed) {
  return init_weights(arch::classifier_shapes(spec), InitScheme::xavier, seed);
}

ParameterStore init_for(const arch::TeacherSpec& spec, std::uint64_t seed) {
  return init_weights(arch::teacher_shapes(spec), InitScheme::xavier, seed);
}

}  // namespace

TEST_SUITE("trainer") {
  TEST_CASE("learning-rate schedule endpoints") {
    const TrainConfig cfg;
    CHECK(train::lr_at(0, 1000, cfg) == 5e-5);
    CHECK(train::lr_at(1000, 1000, cfg) == 0.0);
    CHECK(train::lr_at(500, 1000, cfg) == doctest::Approx(2.5e-5).epsilon(1e-15));
    CHECK_THROWS_AS(train::lr_at(-1, 1000, cfg), PreconditionError);
    CHECK_THROWS_AS(train::lr_at(1001, 1000, cfg), PreconditionError);
    CHECK(train::steps_per_epoch(30, 14) == 3);
    CHECK(train::steps_per_epoch(28, 14) == 2);
    CHECK(train::steps_per_epoch(1, 14) == 1);
  }

  TEST_CASE("recorded epoch learning rates follow the per-step schedule") {
    Toy t = make_toy(1);
    t.task.dataset.train.resize(30);
    t.cfg.epochs = 2;
    t.cfg.batch_size = 14;
    const auto m = train::train_unimodal(t.text, t.tok, init_for(t.text, 1), t.task.dataset, nullptr, t.cfg);
    REQUIRE(m.history.size() == 2);
    CHECK(m.history[0].lr == t.cfg.lr0);
    CHECK(m.history[1].lr == doctest::Approx(t.cfg.lr0 * (1.0 - 3.0 / 6.0)).epsilon(1e-15));
  }

  TEST_CASE("AdamW first step against hand arithmetic") {
    TrainConfig cfg;
    ParameterStore p;
    ag::Matrix w(1, 2);
    w << 0.5, -2.0;
    p.insert("w", w);
    p.at("w").grad = ag::Matrix(1, 2);
    p.at("w").grad << 0.1, -3.0;
    train::AdamW opt(cfg);
    opt.step(p, 0.01);
    CHECK(opt.steps() == 1);
    // First step: bias-corrected moments reduce to g and g^2.
    for (int j = 0; j < 2; ++j) {
      const double g = j == 0 ? 0.1 : -3.0;
      const double w0 = j == 0 ? 0.5 : -2.0;
      const double expect = w0 - 0.01 * (g / (std::abs(g) + 1e-8) + 0.01 * w0);
      CHECK(p.at("w").value(0, j) == doctest::Approx(expect).epsilon(1e-12));
    }
  }

  TEST_CASE("config validation and json") {
    TrainConfig c;
    CHECK_NOTHROW(c.validate());
    c.lr0 = 0;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c = {};
    c.epochs = 0;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    CHECK(train::train_config_from_json(train::to_json(TrainConfig{})).batch_size == 14);
    CHECK_THROWS_AS(train::train_config_from_json({{"learning_rate", 1}}), ConfigError);
  }

  TEST_CASE("select_epoch picks the earliest maximum") {
    std::vector<train::EpochMetrics> h(4);
    for (int i = 0; i < 4; ++i) h[static_cast<std::size_t>(i)].epoch = i + 1;
    h[0].val_accuracy = 0.5;
    h[1].val_accuracy = 0.8;
    h[2].val_accuracy = 0.8;
    h[3].val_accuracy = 0.7;
    CHECK(train::select_epoch(h) == 2);
    CHECK_THROWS_AS(train::select_epoch(std::vector<train::EpochMetrics>{}), PreconditionError);
  }

  TEST_CASE("training reduces train cross-entropy") {
    Toy t = make_toy(2);
    t.cfg.epochs = 10;
    train::TrainedModel before;
    before.kind = train::ModelKind::text_classifier;
    before.spec = t.text;
    before.tokenizer = t.tok;
    before.weights = init_for(t.text, 5);
    const double initial = train::evaluate_detailed(before, t.task.dataset.train).mean_ce;
    const auto m = train::train_unimodal(t.text, t.tok, init_for(t.text, 5), t.task.dataset, nullptr, t.cfg);
    REQUIRE(m.history.size() == 10);
    CHECK(m.history.back().ce_hard < initial);
    CHECK(train::evaluate_detailed(m, t.task.dataset.train).mean_ce < initial);
    CHECK(m.selected_epoch == train::select_epoch(m.history));
  }

  TEST_CASE("reruns reproduce the metric history and weights") {
    Toy t = make_toy(3);
    testing::TempDir dir("rerun");
    const auto a = train::train_teacher(t.teacher, t.tok, init_for(t.teacher, 1), t.task.dataset, t.task.images,
                                        t.cfg, {dir / "a.jsonl"});
    const auto b = train::train_teacher(t.teacher, t.tok, init_for(t.teacher, 1), t.task.dataset, t.task.images,
                                        t.cfg, {dir / "b.jsonl"});
    CHECK(a.history == b.history);
    CHECK(a.weights == b.weights);
    CHECK(read_file(dir / "a.jsonl") == read_file(dir / "b.jsonl"));
    std::ifstream in(dir / "a.jsonl");
    int lines = 0;
    for (std::string line; std::getline(in, line);) {
      CHECK(nlohmann::json::parse(line).contains("val_accuracy"));
      ++lines;
    }
    CHECK(lines == t.cfg.epochs);
  }

  TEST_CASE("a missing image is a precondition error") {
    Toy t = make_toy(4);
    gen::ImageStore partial = t.task.images;
    partial.erase(t.task.dataset.train[3].id);
    CHECK_THROWS_AS(train::train_teacher(t.teacher, t.tok, init_for(t.teacher, 1), t.task.dataset, partial, t.cfg),
                    PreconditionError);
    CHECK_THROWS_AS(train::train_unimodal(t.image, t.tok, init_for(t.image, 1), t.task.dataset, nullptr, t.cfg),
                    PreconditionError);
  }

  TEST_CASE("distillation leaves the teacher untouched") {
    Toy t = make_toy(5);
    const auto teacher =
        train::train_teacher(t.teacher, t.tok, init_for(t.teacher, 1), t.task.dataset, t.task.images, t.cfg);
    const std::string digest = teacher.weights.digest();
    const ParameterStore copy = teacher.weights;
    const auto student = train::distill_student(t.text, t.tok, init_for(t.text, 2), teacher, t.task.dataset,
                                                t.task.images, t.cfg, distill::DistillConfig{});
    CHECK(teacher.weights.digest() == digest);
    CHECK(teacher.weights == copy);
    CHECK(student.distill.has_value());
    CHECK(student.history.size() == static_cast<std::size_t>(t.cfg.epochs));
    CHECK(student.history[0].emb_sqdist > 0.0);
  }

  TEST_CASE("alpha = beta = 0 distillation equals the baseline bit for bit") {
    Toy t = make_toy(6);
    const auto teacher =
        train::train_teacher(t.teacher, t.tok, init_for(t.teacher, 1), t.task.dataset, t.task.images, t.cfg);
    distill::DistillConfig none;
    none.alpha = 0;
    none.beta = 0;
    const auto student =
        train::distill_student(t.text, t.tok, init_for(t.text, 2), teacher, t.task.dataset, t.task.images, t.cfg, none);
    const auto baseline = train::train_unimodal(t.text, t.tok, init_for(t.text, 2), t.task.dataset, nullptr, t.cfg);
    CHECK(student.weights == baseline.weights);
    REQUIRE(student.history.size() == baseline.history.size());
    for (std::size_t e = 0; e < student.history.size(); ++e) {
      CHECK(student.history[e].loss == baseline.history[e].loss);
      CHECK(student.history[e].ce_hard == baseline.history[e].ce_hard);
      CHECK(student.history[e].val_accuracy == baseline.history[e].val_accuracy);
    }
  }

  TEST_CASE("distillation rejects incompatible models") {
    Toy t = make_toy(7);
    t.cfg.epochs = 1;
    const auto teacher =
        train::train_teacher(t.teacher, t.tok, init_for(t.teacher, 1), t.task.dataset, t.task.images, t.cfg);
    arch::ClassifierSpec wide = t.text;
    wide.d_e = t.text.d_e + 1;
    CHECK_THROWS_AS(train::distill_student(wide, t.tok, init_for(wide, 1), teacher, t.task.dataset, t.task.images,
                                           t.cfg, {}),
                    PreconditionError);
    CHECK_THROWS_AS(train::distill_student(t.image, t.tok, init_for(t.image, 1), teacher, t.task.dataset,
                                           t.task.images, t.cfg, {}),
                    PreconditionError);
  }

  TEST_CASE("the image classifier ignores the text") {
    Toy t = make_toy(8);
    const auto m =
        train::train_unimodal(t.image, t.tok, init_for(t.image, 3), t.task.dataset, &t.task.images, t.cfg);
    auto shuffled = t.task.dataset.test;
    Rng rng(1);
    for (std::size_t i = shuffled.size(); i > 1; --i) std::swap(shuffled[i - 1].clean_text, shuffled[rng.below(i)].clean_text);
    CHECK(train::evaluate_detailed(m, shuffled, &t.task.images).predictions ==
          train::evaluate_detailed(m, t.task.dataset.test, &t.task.images).predictions);
  }

  TEST_CASE("non-finite losses stop training") {
    Toy t = make_toy(9);
    auto init = init_for(t.text, 1);
    init.at("head.out.w").value(0, 0) = std::numeric_limits<double>::quiet_NaN();
    CHECK_THROWS_AS(train::train_unimodal(t.text, t.tok, std::move(init), t.task.dataset, nullptr, t.cfg),
                    TrainingError);
  }

  TEST_CASE("evaluation") {
    Toy t = make_toy(10);
    t.cfg.epochs = 2;
    const auto m = train::train_unimodal(t.text, t.tok, init_for(t.text, 1), t.task.dataset, nullptr, t.cfg);
    CHECK_THROWS_AS(train::evaluate(m, std::span<const corpus::TextSample>{}), PreconditionError);
    const auto ev = train::evaluate_detailed(m, t.task.dataset.test);
    std::size_t correct = 0;
    for (std::size_t i = 0; i < ev.predictions.size(); ++i)
      correct += ev.predictions[i] == t.task.dataset.test[i].label ? 1 : 0;
    CHECK(ev.accuracy == static_cast<double>(correct) / static_cast<double>(t.task.dataset.test.size()));
    const auto out = train::predict(m, t.task.dataset.test);
    CHECK(out.logits.rows() == static_cast<Eigen::Index>(t.task.dataset.test.size()));
    CHECK(out.embeddings.cols() == t.text.d_e);
  }

  TEST_CASE("model files round trip") {
    Toy t = make_toy(11);
    t.cfg.epochs = 2;
    testing::TempDir dir("model");
    const auto teacher =
        train::train_teacher(t.teacher, t.tok, init_for(t.teacher, 1), t.task.dataset, t.task.images, t.cfg);
    train::save_model(teacher, dir / "t.ckpt");
    const auto back = train::load_model(dir / "t.ckpt");
    CHECK(back.kind == train::ModelKind::teacher);
    CHECK(back.weights == teacher.weights);
    CHECK(back.history == teacher.history);
    CHECK(back.selected_epoch == teacher.selected_epoch);
    CHECK(train::evaluate(back, t.task.dataset.test, &t.task.images) ==
          train::evaluate(teacher, t.task.dataset.test, &t.task.images));
    save_checkpoint(dir / "plain.ckpt", teacher.weights);
    CHECK_THROWS_AS(train::load_model(dir / "plain.ckpt"), SchemaError);
  }
}
