// Copyright 2026 The privkd Authors
// SPDX-License-Identifier: Apache-2.0

#include "support.hpp"

#include <algorithm>
#include <cmath>

#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "privkd/genimage.hpp"
#include "privkd/image.hpp"
#include "privkd/params.hpp"

#include <httplib.h>

namespace privkd::testing {

namespace fs = std::filesystem;
using ag::Matrix;

TempDir::TempDir(const std::string& tag) {
  static std::atomic<int> counter{0};
  const auto stamp = std::chrono::steady_clock::now().time_since_epoch().count();
  path_ = fs::temp_directory_path() / fmt::format("privkd-{}-{}-{}", tag, stamp, counter++);
  fs::create_directories(path_);
}

TempDir::~TempDir() {
  std::error_code ec;
  fs::remove_all(path_, ec);
}

double relative_error(const Eigen::VectorXd& a, const Eigen::VectorXd& b, double floor) {
  const double scale = std::max(a.norm(), b.norm());
  if (scale < floor) return 0.0;
  return (a - b).norm() / scale;
}

Eigen::VectorXd numeric_gradient(const std::function<double(const Eigen::VectorXd&)>& f, Eigen::VectorXd x,
                                 double h) {
  Eigen::VectorXd g(x.size());
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    const double keep = x(i);
    x(i) = keep + h;
    const double up = f(x);
    x(i) = keep - h;
    const double down = f(x);
    x(i) = keep;
    g(i) = (up - down) / (2.0 * h);
  }
  return g;
}

namespace {

Eigen::VectorXd normal_vector(Rng& rng, Eigen::Index n, double scale = 1.0) {
  Eigen::VectorXd v(n);
  for (Eigen::Index i = 0; i < n; ++i) v(i) = scale * rng.normal();
  return v;
}

Eigen::VectorXd random_distribution(Rng& rng, Eigen::Index k) {
  return distill::softmax(normal_vector(rng, k, 2.0));
}

void record(GradCheck& gc, double err, const std::string& where) {
  if (err > gc.worst || gc.worst_where.empty()) {
    if (err >= gc.worst) {
      gc.worst = err;
      gc.worst_where = where;
    }
  }
}

}  // namespace

GradCheck check_kd_gradients(int n, std::uint64_t seed) {
  Rng rng(seed);
  GradCheck gc;
  for (int inst = 0; inst < n; ++inst) {
    const auto k = static_cast<Eigen::Index>(2 + rng.below(5));
    const auto d = static_cast<Eigen::Index>(1 + rng.below(8));
    distill::DistillConfig cfg;
    cfg.alpha = 5.0 * rng.uniform();
    cfg.beta = 5.0 * rng.uniform();
    cfg.tau = 0.5 + 9.5 * rng.uniform();
    cfg.soften_student = rng.below(2) == 1;
    cfg.normalize_sqdist = rng.below(2) == 1;
    // Hard targets are one-hot in training; soft label vectors exercise the general formula.
    const Eigen::VectorXd y = rng.below(2) == 1
                                  ? distill::one_hot(static_cast<int>(rng.below(static_cast<std::uint64_t>(k))),
                                                     static_cast<int>(k))
                                  : random_distribution(rng, k);
    const Eigen::VectorXd tl = normal_vector(rng, k, 3.0);
    const Eigen::VectorXd te = normal_vector(rng, d);
    const Eigen::VectorXd sl = normal_vector(rng, k, 3.0);
    const Eigen::VectorXd se = normal_vector(rng, d);

    const distill::KdResult r = distill::kd_loss(y, tl, te, sl, se, cfg);
    const Eigen::VectorXd g_logits = numeric_gradient(
        [&](const Eigen::VectorXd& x) { return distill::kd_loss(y, tl, te, x, se, cfg).loss.total; }, sl);
    const Eigen::VectorXd g_emb = numeric_gradient(
        [&](const Eigen::VectorXd& x) { return distill::kd_loss(y, tl, te, sl, x, cfg).loss.total; }, se);
    record(gc, relative_error(r.d_logits, g_logits), fmt::format("instance {} logits", inst));
    record(gc, relative_error(r.d_embedding, g_emb), fmt::format("instance {} embedding", inst));
    ++gc.instances;
  }
  return gc;
}

arch::TeacherSpec tiny_teacher(int vocab, int k) {
  arch::TeacherSpec s;
  s.text = {.kind = arch::EncoderKind::toy_text, .d_model = 8, .depth = 1, .heads = 2, .vocab_size = vocab,
            .max_len = 8};
  s.image = {.kind = arch::EncoderKind::toy_image, .d_model = 8, .depth = 1, .heads = 2, .image_size = 8,
             .patch = 4};
  s.fusion_heads = 2;
  s.d_e = 4;
  s.num_classes = k;
  return s;
}

arch::ClassifierSpec tiny_text_classifier(int vocab, int k) {
  const arch::TeacherSpec t = tiny_teacher(vocab, k);
  return {t.text, t.d_e, k};
}

arch::ClassifierSpec tiny_image_classifier(int k) {
  const arch::TeacherSpec t = tiny_teacher(4, k);
  return {t.image, t.d_e, k};
}

arch::TeacherSpec random_tiny_teacher(Rng& rng) {
  const int heads = 1 + static_cast<int>(rng.below(3));
  const int d_model = heads * (2 + static_cast<int>(rng.below(4)));
  const int patch = 2 + static_cast<int>(rng.below(3));
  arch::TeacherSpec s;
  s.text = {.kind = arch::EncoderKind::toy_text, .d_model = d_model, .depth = 1 + static_cast<int>(rng.below(2)),
            .heads = heads, .vocab_size = 10 + static_cast<int>(rng.below(20)),
            .max_len = 4 + static_cast<int>(rng.below(8))};
  s.image = {.kind = arch::EncoderKind::toy_image, .d_model = d_model, .depth = 1, .heads = heads,
             .image_size = patch * (1 + static_cast<int>(rng.below(3))), .patch = patch};
  s.fusion_heads = heads;
  s.d_e = 2 + static_cast<int>(rng.below(6));
  s.num_classes = 2 + static_cast<int>(rng.below(5));
  return s;
}

InvariantReport check_architecture_invariants(int trials, std::uint64_t seed) {
  Rng rng(seed);
  InvariantReport r;
  for (int trial = 0; trial < trials; ++trial) {
    const arch::TeacherSpec spec = random_tiny_teacher(rng);
    const arch::ClassifierSpec student{spec.text, spec.d_e, spec.num_classes};
    const ParameterStore tw = init_weights(arch::teacher_shapes(spec), InitScheme::xavier, rng.next());
    const ParameterStore sw = init_weights(arch::classifier_shapes(student), InitScheme::xavier, rng.next());
    ++r.configs;

    const int batch = 1 + static_cast<int>(rng.below(4));
    std::vector<std::vector<int>> ids(static_cast<std::size_t>(batch));
    std::vector<Matrix> patches;
    for (auto& seq : ids) {
      const int len = static_cast<int>(rng.below(static_cast<std::uint64_t>(spec.text.max_len) + 4));
      for (int t = 0; t < len; ++t)
        seq.push_back(static_cast<int>(rng.below(static_cast<std::uint64_t>(spec.text.vocab_size))));
      patches.push_back(arch::image_patches(random_image(rng, 3 + static_cast<int>(rng.below(20)),
                                                         3 + static_cast<int>(rng.below(20))),
                                            spec.image));
    }
    ag::Tape tape;
    const arch::Binding bind{tape, tw};
    const arch::SeqBatch text = arch::text_encoder(bind, "text", spec.text, ids);
    const arch::SeqBatch image = arch::image_encoder(bind, "image", spec.image, patches);
    const arch::FusedSequence fused = arch::fusion_sequence(bind, "fusion", text, image);
    const Matrix& mod = tw.at("fusion.modality").value;
    if (fused.seq.x.rows() != text.x.rows() + image.x.rows()) ++r.fused_length;
    for (std::size_t b = 0; b < ids.size(); ++b) {
      const auto& seg = fused.seq.segments[b];
      const auto& ts = text.segments[b];
      const auto& is = image.segments[b];
      const auto expected_text = std::min<Eigen::Index>(static_cast<Eigen::Index>(ids[b].size()), spec.text.max_len) + 1;
      if (seg.length != ts.length + is.length || ts.length != expected_text ||
          is.length != spec.image.num_patches() + 1)
        ++r.fused_length;
      const bool cls_ok = fused.text_cls[b] == seg.offset && fused.image_cls[b] == seg.offset + ts.length &&
                          fused.seq.x.value().row(seg.offset) == text.x.value().row(ts.offset) + mod.row(0) &&
                          fused.seq.x.value().row(seg.offset + ts.length) == image.x.value().row(is.offset) + mod.row(1);
      if (!cls_ok) ++r.cls_tracking;
    }

    const Image img = random_image(rng, 4 + static_cast<int>(rng.below(20)), 4 + static_cast<int>(rng.below(20)));
    const arch::Prediction tp = arch::teacher_forward(ids[0], img, spec, tw);
    const arch::Prediction sp = arch::student_forward(ids[0], student, sw);
    for (const auto* p : {&tp, &sp}) {
      const double err = std::abs(p->probs.sum() - 1.0);
      r.worst_prob_error = std::max(r.worst_prob_error, err);
      if (err > 1e-6 || p->probs.minCoeff() < 0.0 || p->probs.size() != spec.num_classes) ++r.normalisation;
    }
    if (tp.embedding.size() != sp.embedding.size() || tp.embedding.size() != spec.d_e) ++r.embedding_dim;
  }
  return r;
}

Image random_image(Rng& rng, int h, int w) {
  Image img(h, w);
  for (auto& p : img.pixels) p = static_cast<std::uint8_t>(rng.below(256));
  return img;
}

GradCheck check_forward_gradients(ForwardKind kind, int n, std::uint64_t seed, int entries) {
  Rng rng(seed);
  GradCheck gc;
  const double h = 1e-5;
  for (int inst = 0; inst < n; ++inst) {
    const int k = 2 + static_cast<int>(rng.below(3));
    const int vocab = 10 + static_cast<int>(rng.below(6));
    const arch::TeacherSpec ts = tiny_teacher(vocab, k);
    const arch::ClassifierSpec text_cs = tiny_text_classifier(vocab, k);
    const arch::ClassifierSpec image_cs = tiny_image_classifier(k);
    const std::vector<ParamShape> shapes = kind == ForwardKind::teacher          ? arch::teacher_shapes(ts)
                                           : kind == ForwardKind::text_classifier ? arch::classifier_shapes(text_cs)
                                                                                  : arch::classifier_shapes(image_cs);
    ParameterStore w = init_weights(shapes, InitScheme::xavier, rng.next());
    // Non-trivial biases and norm gains so every path carries signal.
    for (auto& [name, p] : w)
      for (Eigen::Index i = 0; i < p.value.size(); ++i) p.value.data()[i] += 0.1 * rng.normal();

    const int batch = 1 + static_cast<int>(rng.below(3));
    std::vector<std::vector<int>> ids(static_cast<std::size_t>(batch));
    std::vector<Matrix> patches;
    for (auto& seq : ids) {
      const int len = static_cast<int>(rng.below(7));
      for (int t = 0; t < len; ++t) seq.push_back(static_cast<int>(rng.below(static_cast<std::uint64_t>(vocab))));
    }
    for (int b = 0; b < batch; ++b) patches.push_back(arch::image_patches(random_image(rng, 8, 8), ts.image));

    const int d_e = ts.d_e;
    Matrix r1(batch, k), r2(batch, d_e);
    for (Eigen::Index i = 0; i < r1.size(); ++i) r1.data()[i] = rng.normal();
    for (Eigen::Index i = 0; i < r2.size(); ++i) r2.data()[i] = rng.normal();

    auto forward = [&](const arch::Binding& bd) {
      switch (kind) {
        case ForwardKind::teacher: return arch::teacher_batch(bd, ts, ids, patches);
        case ForwardKind::text_classifier: return arch::classifier_batch(bd, text_cs, ids, patches);
        case ForwardKind::image_classifier: break;
      }
      return arch::classifier_batch(bd, image_cs, ids, patches);
    };
    auto scalar = [&]() {
      ag::Tape tape;
      const arch::Binding bd{tape, w, nullptr};
      const arch::BatchOutput out = forward(bd);
      return r1.cwiseProduct(out.logits.value()).sum() + r2.cwiseProduct(out.embedding.value()).sum();
    };

    w.zero_grad();
    {
      ag::Tape tape;
      const arch::Binding bd{tape, w, &w};
      const arch::BatchOutput out = forward(bd);
      std::vector<std::pair<ag::Var, Matrix>> seeds{{out.logits, r1}, {out.embedding, r2}};
      tape.backward(seeds);
    }

    for (auto& [name, p] : w) {
      const Eigen::Index count = std::min<Eigen::Index>(entries, p.value.size());
      Eigen::VectorXd analytic(count), numeric(count);
      for (Eigen::Index e = 0; e < count; ++e) {
        const auto idx = static_cast<Eigen::Index>(rng.below(static_cast<std::uint64_t>(p.value.size())));
        double& x = p.value.data()[idx];
        const double keep = x;
        x = keep + h;
        const double up = scalar();
        x = keep - h;
        const double down = scalar();
        x = keep;
        analytic(e) = p.grad.size() == 0 ? 0.0 : p.grad.data()[idx];
        numeric(e) = (up - down) / (2.0 * h);
      }
      record(gc, relative_error(analytic, numeric, 1e-7), fmt::format("instance {} {}", inst, name));
    }
    ++gc.instances;
  }
  return gc;
}

corpus::Dataset toy_dataset(std::size_t n_train, std::size_t n_val, std::size_t n_test, std::uint64_t seed) {
  static const char* const kWords[2][4] = {{"sunny", "bright", "warm", "clear"}, {"rainy", "dark", "cold", "grey"}};
  static const char* const kFiller[4] = {"the", "day", "was", "very"};
  Rng rng(seed);
  corpus::Dataset ds;
  ds.name = "toy";
  ds.kind = corpus::DatasetKind::synthetic;
  ds.num_classes = 2;
  ds.class_names = {"fair", "foul"};
  const std::pair<corpus::Split, std::size_t> splits[] = {
      {corpus::Split::train, n_train}, {corpus::Split::val, n_val}, {corpus::Split::test, n_test}};
  for (const auto& [split, n] : splits) {
    for (std::size_t i = 0; i < n; ++i) {
      corpus::TextSample s;
      s.id = fmt::format("toy-{}-{}", corpus::to_string(split), i);
      s.label = static_cast<int>(i % 2);
      std::string text;
      for (int t = 0; t < 5; ++t) {
        if (t > 0) text += ' ';
        text += rng.below(3) == 0 ? kFiller[rng.below(4)] : kWords[s.label][rng.below(4)];
      }
      s.raw_text = s.clean_text = s.prompt_text = text;
      ds.split(split).push_back(std::move(s));
    }
  }
  return ds;
}

// -- stub server --------------------------------------------------------------------

struct StubServer::Impl {
  httplib::Server server;
  std::thread thread;
  int port = 0;
  std::vector<Reply> script;
  mutable std::mutex mu;
  std::vector<std::string> bodies;
  std::vector<std::string> failing;
};

StubServer::StubServer(std::vector<Reply> script) : impl_(std::make_unique<Impl>()) {
  if (script.empty()) script.push_back({});
  impl_->script = std::move(script);
  impl_->server.Post("/generate", [this](const httplib::Request& req, httplib::Response& res) {
    const int n = requests_++;
    Reply reply;
    bool fail = false;
    {
      std::lock_guard lock(impl_->mu);
      impl_->bodies.push_back(req.body);
      reply = impl_->script[std::min<std::size_t>(static_cast<std::size_t>(n), impl_->script.size() - 1)];
      const auto j = nlohmann::json::parse(req.body, nullptr, false);
      if (!j.is_discarded() && j.contains("prompt"))
        fail = std::find(impl_->failing.begin(), impl_->failing.end(), j["prompt"].get<std::string>()) !=
               impl_->failing.end();
    }
    if (reply.delay.count() > 0) std::this_thread::sleep_for(reply.delay);
    if (fail) {
      res.status = 500;
      res.set_content("scripted failure", "text/plain");
      return;
    }
    res.status = reply.status;
    if (reply.status != 200) {
      res.set_content("unavailable", "text/plain");
      return;
    }
    if (!reply.png) {
      res.set_content(reply.body, "image/png");
      return;
    }
    const auto j = nlohmann::json::parse(req.body);
    const gen::ImageSize size{j.at("height").get<int>(), j.at("width").get<int>()};
    const Image img = gen::render_mock(j.at("prompt").get<std::string>(), j.at("seed").get<std::uint64_t>(), size);
    res.set_content(encode_png(img, ""), "image/png");
  });
  impl_->port = impl_->server.bind_to_any_port("127.0.0.1");
  impl_->thread = std::thread([this] { impl_->server.listen_after_bind(); });
  impl_->server.wait_until_ready();
}

StubServer::~StubServer() {
  impl_->server.stop();
  if (impl_->thread.joinable()) impl_->thread.join();
}

std::string StubServer::url() const { return fmt::format("http://127.0.0.1:{}", impl_->port); }

std::vector<std::string> StubServer::bodies() const {
  std::lock_guard lock(impl_->mu);
  return impl_->bodies;
}

void StubServer::fail_prompt(const std::string& prompt) {
  std::lock_guard lock(impl_->mu);
  impl_->failing.push_back(prompt);
}

}  // namespace privkd::testing
