// Copyright 2026 The privkd Authors
// SPDX-License-Identifier: Apache-2.0

#include "privkd/architectures.hpp"

#include <algorithm>
#include <cctype>
#include <map>

#include <fmt/format.h>

#include "privkd/errors.hpp"

namespace privkd::arch {

namespace {

std::string kind_name(EncoderKind k) {
  switch (k) {
    case EncoderKind::toy_text:
      return "toy-text";
    case EncoderKind::toy_image:
      return "toy-image";
    case EncoderKind::external_adapter:
      return "external-adapter";
  }
  return "?";
}

EncoderKind parse_kind(const std::string& s) {
  if (s == "toy-text") return EncoderKind::toy_text;
  if (s == "toy-image") return EncoderKind::toy_image;
  if (s == "external-adapter") return EncoderKind::external_adapter;
  throw ConfigError("unknown encoder kind '" + s + "'");
}

void append_block_shapes(std::vector<ParamShape>& out, const std::string& p, int d, int ffn_mult) {
  const int h = d * ffn_mult;
  out.push_back({p + ".ln1.g", 1, d, InitKind::ones});
  out.push_back({p + ".ln1.b", 1, d, InitKind::zeros});
  out.push_back({p + ".attn.qkv.w", d, 3 * d});
  out.push_back({p + ".attn.qkv.b", 1, 3 * d, InitKind::zeros});
  out.push_back({p + ".attn.out.w", d, d});
  out.push_back({p + ".attn.out.b", 1, d, InitKind::zeros});
  out.push_back({p + ".ln2.g", 1, d, InitKind::ones});
  out.push_back({p + ".ln2.b", 1, d, InitKind::zeros});
  out.push_back({p + ".ffn.up.w", d, h});
  out.push_back({p + ".ffn.up.b", 1, h, InitKind::zeros});
  out.push_back({p + ".ffn.down.w", h, d});
  out.push_back({p + ".ffn.down.b", 1, d, InitKind::zeros});
}

void append_head_shapes(std::vector<ParamShape>& out, int in, int d_e, int k) {
  out.push_back({"head.hidden.w", in, d_e});
  out.push_back({"head.hidden.b", 1, d_e, InitKind::zeros});
  out.push_back({"head.out.w", d_e, k});
  out.push_back({"head.out.b", 1, k, InitKind::zeros});
}

ag::Var layer_norm_named(const Binding& w, const std::string& p, const ag::Var& x) {
  return ag::layer_norm(x, w(p + ".g"), w(p + ".b"));
}

ag::Var linear_named(const Binding& w, const std::string& p, const ag::Var& x) {
  return ag::linear(x, w(p + ".w"), w(p + ".b"));
}

std::vector<ag::Segment> pack(std::span<const Eigen::Index> lengths) {
  std::vector<ag::Segment> segs;
  segs.reserve(lengths.size());
  Eigen::Index offset = 0;
  for (Eigen::Index len : lengths) {
    segs.push_back({offset, len});
    offset += len;
  }
  return segs;
}

Vector row_vector(const Matrix& m, Eigen::Index r) { return m.row(r).transpose(); }

Prediction to_prediction(const BatchOutput& out) {
  Prediction p;
  p.logits = row_vector(out.logits.value(), 0);
  p.probs = row_vector(softmax_rows(out.logits.value()), 0);
  p.embedding = row_vector(out.embedding.value(), 0);
  return p;
}

void require_toy(const EncoderSpec& spec, EncoderKind expected) {
  if (spec.kind == EncoderKind::external_adapter)
    throw ConfigError("external encoder adapter '" + spec.adapter +
                      "' has no in-process implementation; supply precomputed weights through a toy encoder");
  if (spec.kind != expected) throw PreconditionError("encoder spec has kind " + kind_name(spec.kind));
}

}  // namespace

// -- specs -------------------------------------------------------------------

void EncoderSpec::validate() const {
  if (d_model <= 0 || depth < 0 || heads <= 0 || ffn_mult <= 0)
    throw ConfigError("encoder dimensions must be positive");
  if (d_model % heads != 0) throw ConfigError(fmt::format("d_model {} not divisible by heads {}", d_model, heads));
  switch (kind) {
    case EncoderKind::toy_text:
      if (max_len <= 0) throw ConfigError("text encoder max_len must be positive");
      break;
    case EncoderKind::toy_image:
      if (patch <= 0 || image_size <= 0 || image_size % patch != 0)
        throw ConfigError(fmt::format("image_size {} must be a positive multiple of patch {}", image_size, patch));
      break;
    case EncoderKind::external_adapter:
      if (adapter.empty()) throw ConfigError("external-adapter encoder needs an adapter name");
      break;
  }
}

void TeacherSpec::validate() const {
  text.validate();
  image.validate();
  if (text.kind != EncoderKind::toy_text && text.kind != EncoderKind::external_adapter)
    throw ConfigError("teacher text encoder must be a text encoder");
  if (image.kind != EncoderKind::toy_image && image.kind != EncoderKind::external_adapter)
    throw ConfigError("teacher image encoder must be an image encoder");
  if (text.d_model != image.d_model) throw ConfigError("text and image encoders must share d_model");
  if (fusion_heads <= 0 || text.d_model % fusion_heads != 0)
    throw ConfigError(fmt::format("d_model {} not divisible by fusion heads {}", text.d_model, fusion_heads));
  if (d_e <= 0 || num_classes < 2) throw ConfigError("teacher head needs d_e > 0 and at least two classes");
}

void ClassifierSpec::validate() const {
  encoder.validate();
  if (d_e <= 0 || num_classes < 2) throw ConfigError("classifier head needs d_e > 0 and at least two classes");
}

// -- tokenizer ---------------------------------------------------------------

Tokenizer::Tokenizer() : vocab_{"[PAD]", "[UNK]", "[CLS]", "[SEP]"} {
  for (int i = 0; i < static_cast<int>(vocab_.size()); ++i) index_.emplace(vocab_[i], i);
}

std::vector<std::string> Tokenizer::split(std::string_view text) {
  std::vector<std::string> out;
  std::string word;
  auto flush = [&] {
    if (!word.empty()) out.push_back(std::move(word));
    word.clear();
  };
  for (std::size_t i = 0; i < text.size();) {
    const auto c = static_cast<unsigned char>(text[i]);
    if (c == '[' && i + 5 <= text.size()) {
      std::string head(text.substr(i, 5));
      std::transform(head.begin(), head.end(), head.begin(), [](unsigned char ch) { return std::toupper(ch); });
      if (head == "[SEP]") {
        flush();
        out.emplace_back("[SEP]");
        i += 5;
        continue;
      }
    }
    if (c >= 0x80 || std::isalnum(c)) {
      word.push_back(static_cast<char>(c < 0x80 ? std::tolower(c) : c));
    } else if (std::isspace(c) || !std::isprint(c)) {
      flush();
    } else {
      flush();
      out.emplace_back(1, static_cast<char>(c));
    }
    ++i;
  }
  flush();
  return out;
}

Tokenizer Tokenizer::build(std::span<const std::string> texts, std::size_t max_vocab) {
  std::map<std::string, std::size_t> counts;
  for (const auto& t : texts)
    for (auto& tok : split(t))
      if (tok != "[SEP]") ++counts[tok];
  std::vector<std::pair<std::string, std::size_t>> ranked(counts.begin(), counts.end());
  std::stable_sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) { return a.second > b.second; });
  Tokenizer tok;
  for (const auto& [word, n] : ranked) {
    if (tok.vocab_.size() >= max_vocab) break;
    tok.index_.emplace(word, static_cast<int>(tok.vocab_.size()));
    tok.vocab_.push_back(word);
  }
  return tok;
}

std::vector<int> Tokenizer::encode(std::string_view text, int max_len) const {
  std::vector<int> ids;
  for (const auto& tok : split(text)) {
    if (static_cast<int>(ids.size()) >= max_len) break;
    auto it = index_.find(tok);
    ids.push_back(it == index_.end() ? kUnk : it->second);
  }
  return ids;
}

nlohmann::json Tokenizer::to_json() const { return {{"vocab", vocab_}}; }

Tokenizer Tokenizer::from_json(const nlohmann::json& j) {
  Tokenizer tok;
  const auto vocab = j.at("vocab").get<std::vector<std::string>>();
  if (vocab.size() < 4 || vocab[0] != "[PAD]" || vocab[1] != "[UNK]" || vocab[2] != "[CLS]" || vocab[3] != "[SEP]")
    throw SchemaError("tokenizer vocabulary lacks the special tokens");
  tok.vocab_ = vocab;
  tok.index_.clear();
  for (int i = 0; i < static_cast<int>(vocab.size()); ++i) tok.index_.emplace(vocab[i], i);
  return tok;
}

// -- parameter layout ----------------------------------------------------------

std::vector<ParamShape> encoder_shapes(const std::string& prefix, const EncoderSpec& spec) {
  spec.validate();
  std::vector<ParamShape> out;
  const int d = spec.d_model;
  if (spec.kind == EncoderKind::toy_text) {
    if (spec.vocab_size <= 0) throw ConfigError("text encoder vocab_size must be set");
    out.push_back({prefix + ".tok_emb", spec.vocab_size, d});
    out.push_back({prefix + ".pos_emb", spec.max_len + 1, d});
  } else if (spec.kind == EncoderKind::toy_image) {
    out.push_back({prefix + ".patch_proj.w", spec.patch_dim(), d});
    out.push_back({prefix + ".patch_proj.b", 1, d, InitKind::zeros});
    out.push_back({prefix + ".cls", 1, d});
    out.push_back({prefix + ".pos_emb", spec.num_patches() + 1, d});
  } else {
    require_toy(spec, EncoderKind::toy_text);
  }
  for (int i = 0; i < spec.depth; ++i) append_block_shapes(out, fmt::format("{}.block{}", prefix, i), d, spec.ffn_mult);
  out.push_back({prefix + ".ln_f.g", 1, d, InitKind::ones});
  out.push_back({prefix + ".ln_f.b", 1, d, InitKind::zeros});
  return out;
}

std::vector<ParamShape> teacher_shapes(const TeacherSpec& spec) {
  spec.validate();
  auto out = encoder_shapes("text", spec.text);
  auto img = encoder_shapes("image", spec.image);
  out.insert(out.end(), img.begin(), img.end());
  const int d = spec.text.d_model;
  out.push_back({"fusion.modality", 2, d});
  append_block_shapes(out, "fusion.block", d, spec.text.ffn_mult);
  out.push_back({"fusion.ln_f.g", 1, d, InitKind::ones});
  out.push_back({"fusion.ln_f.b", 1, d, InitKind::zeros});
  append_head_shapes(out, 2 * d, spec.d_e, spec.num_classes);
  return out;
}

std::vector<ParamShape> classifier_shapes(const ClassifierSpec& spec) {
  spec.validate();
  const std::string prefix = spec.modality() == Modality::image ? "image" : "text";
  auto out = encoder_shapes(prefix, spec.encoder);
  append_head_shapes(out, spec.encoder.d_model, spec.d_e, spec.num_classes);
  return out;
}

// -- graph construction --------------------------------------------------------

ag::Var Binding::operator()(const std::string& name) const {
  if (trainable != nullptr) return tape.param(trainable->at(name));
  return tape.frozen(params.at(name));
}

std::vector<Eigen::Index> SeqBatch::cls_rows() const {
  std::vector<Eigen::Index> rows;
  rows.reserve(segments.size());
  for (const auto& s : segments) rows.push_back(s.offset);
  return rows;
}

Matrix image_patches(const Image& image, const EncoderSpec& spec) {
  if (image.empty()) throw PreconditionError("image has zero size");
  const Image img = resize(image, spec.image_size, spec.image_size);
  const int grid = spec.image_size / spec.patch;
  Matrix out(spec.num_patches(), spec.patch_dim());
  for (int py = 0; py < grid; ++py)
    for (int px = 0; px < grid; ++px) {
      const Eigen::Index row = py * grid + px;
      Eigen::Index col = 0;
      for (int y = 0; y < spec.patch; ++y)
        for (int x = 0; x < spec.patch; ++x)
          for (int c = 0; c < 3; ++c)
            out(row, col++) = img.at(py * spec.patch + y, px * spec.patch + x, c) / 255.0 - 0.5;
    }
  return out;
}

SeqBatch transformer_block(const Binding& w, const std::string& p, int heads, const SeqBatch& in) {
  ag::Var h = layer_norm_named(w, p + ".ln1", in.x);
  h = linear_named(w, p + ".attn.qkv", h);
  h = ag::segment_attention(h, in.segments, heads);
  h = linear_named(w, p + ".attn.out", h);
  ag::Var x = ag::add(in.x, h);
  ag::Var f = layer_norm_named(w, p + ".ln2", x);
  f = ag::gelu(linear_named(w, p + ".ffn.up", f));
  f = linear_named(w, p + ".ffn.down", f);
  return {ag::add(x, f), in.segments};
}

namespace {

SeqBatch run_blocks(const Binding& w, const std::string& prefix, const EncoderSpec& spec, SeqBatch x) {
  for (int i = 0; i < spec.depth; ++i) x = transformer_block(w, fmt::format("{}.block{}", prefix, i), spec.heads, x);
  x.x = layer_norm_named(w, prefix + ".ln_f", x.x);
  return x;
}

}  // namespace

SeqBatch text_encoder(const Binding& w, const std::string& prefix, const EncoderSpec& spec,
                      std::span<const std::vector<int>> ids) {
  require_toy(spec, EncoderKind::toy_text);
  std::vector<Eigen::Index> tokens, positions, lengths;
  for (const auto& seq : ids) {
    const auto n = std::min<std::size_t>(seq.size(), static_cast<std::size_t>(spec.max_len));
    tokens.push_back(Tokenizer::kCls);
    positions.push_back(0);
    for (std::size_t i = 0; i < n; ++i) {
      if (seq[i] < 0 || seq[i] >= spec.vocab_size)
        throw PreconditionError(fmt::format("token id {} outside vocabulary of {}", seq[i], spec.vocab_size));
      tokens.push_back(seq[i]);
      positions.push_back(static_cast<Eigen::Index>(i + 1));
    }
    lengths.push_back(static_cast<Eigen::Index>(n + 1));
  }
  ag::Var x = ag::add(ag::gather_rows(w(prefix + ".tok_emb"), std::move(tokens)),
                      ag::gather_rows(w(prefix + ".pos_emb"), std::move(positions)));
  return run_blocks(w, prefix, spec, {x, pack(lengths)});
}

SeqBatch image_encoder(const Binding& w, const std::string& prefix, const EncoderSpec& spec,
                       std::span<const Matrix> patches) {
  require_toy(spec, EncoderKind::toy_image);
  const Eigen::Index per = spec.num_patches();
  Matrix stacked(per * static_cast<Eigen::Index>(patches.size()), spec.patch_dim());
  for (std::size_t s = 0; s < patches.size(); ++s) {
    if (patches[s].rows() != per || patches[s].cols() != spec.patch_dim())
      throw PreconditionError("patch matrix does not match the image encoder spec");
    stacked.middleRows(static_cast<Eigen::Index>(s) * per, per) = patches[s];
  }
  ag::Var proj = linear_named(w, prefix + ".patch_proj", w.tape.constant(std::move(stacked)));
  ag::Var with_cls = ag::concat_rows(w(prefix + ".cls"), proj);

  std::vector<Eigen::Index> rows, positions, lengths;
  for (std::size_t s = 0; s < patches.size(); ++s) {
    rows.push_back(0);
    positions.push_back(0);
    for (Eigen::Index i = 0; i < per; ++i) {
      rows.push_back(1 + static_cast<Eigen::Index>(s) * per + i);
      positions.push_back(i + 1);
    }
    lengths.push_back(per + 1);
  }
  ag::Var x = ag::add(ag::gather_rows(with_cls, std::move(rows)),
                      ag::gather_rows(w(prefix + ".pos_emb"), std::move(positions)));
  return run_blocks(w, prefix, spec, {x, pack(lengths)});
}

FusedSequence fusion_sequence(const Binding& w, const std::string& prefix, const SeqBatch& text,
                              const SeqBatch& image) {
  if (text.segments.size() != image.segments.size())
    throw PreconditionError("fusion needs one image sequence per text sequence");
  if (text.x.cols() != image.x.cols())
    throw PreconditionError(fmt::format("fusion d_model mismatch: text {} vs image {}", text.x.cols(), image.x.cols()));

  const Eigen::Index image_base = text.x.rows();
  FusedSequence out;
  std::vector<Eigen::Index> rows, modality, lengths;
  Eigen::Index offset = 0;
  for (std::size_t s = 0; s < text.segments.size(); ++s) {
    const auto& ts = text.segments[s];
    const auto& is = image.segments[s];
    out.text_cls.push_back(offset);
    out.image_cls.push_back(offset + ts.length);
    for (Eigen::Index i = 0; i < ts.length; ++i) {
      rows.push_back(ts.offset + i);
      modality.push_back(0);
    }
    for (Eigen::Index i = 0; i < is.length; ++i) {
      rows.push_back(image_base + is.offset + i);
      modality.push_back(1);
    }
    lengths.push_back(ts.length + is.length);
    offset += ts.length + is.length;
  }
  ag::Var joined = ag::gather_rows(ag::concat_rows(text.x, image.x), std::move(rows));
  joined = ag::add(joined, ag::gather_rows(w(prefix + ".modality"), std::move(modality)));
  out.seq = {joined, pack(lengths)};
  return out;
}

std::pair<ag::Var, ag::Var> fusion_block(const Binding& w, const std::string& prefix, int heads, const SeqBatch& text,
                                         const SeqBatch& image) {
  FusedSequence joined = fusion_sequence(w, prefix, text, image);
  SeqBatch fused = transformer_block(w, prefix + ".block", heads, joined.seq);
  ag::Var out = layer_norm_named(w, prefix + ".ln_f", fused.x);
  return {ag::gather_rows(out, std::move(joined.text_cls)), ag::gather_rows(out, std::move(joined.image_cls))};
}

namespace {

BatchOutput head(const Binding& w, const ag::Var& features) {
  ag::Var e = ag::gelu(linear_named(w, "head.hidden", features));
  return {linear_named(w, "head.out", e), e};
}

}  // namespace

BatchOutput teacher_batch(const Binding& w, const TeacherSpec& spec, std::span<const std::vector<int>> ids,
                          std::span<const Matrix> patches) {
  if (ids.size() != patches.size()) throw PreconditionError("teacher needs one image per text sample");
  SeqBatch text = text_encoder(w, "text", spec.text, ids);
  SeqBatch image = image_encoder(w, "image", spec.image, patches);
  auto [u_cls, v_cls] = fusion_block(w, "fusion", spec.fusion_heads, text, image);
  return head(w, ag::concat_cols(u_cls, v_cls));
}

BatchOutput classifier_batch(const Binding& w, const ClassifierSpec& spec, std::span<const std::vector<int>> ids,
                             std::span<const Matrix> patches) {
  SeqBatch enc = spec.modality() == Modality::image ? image_encoder(w, "image", spec.encoder, patches)
                                                    : text_encoder(w, "text", spec.encoder, ids);
  return head(w, ag::gather_rows(enc.x, enc.cls_rows()));
}

// -- single-sample API ---------------------------------------------------------

TokenSequence encode_text(std::span<const int> ids, const EncoderSpec& spec, const ParameterStore& weights,
                          const std::string& prefix) {
  ag::Tape tape;
  const Binding w{tape, weights};
  const std::vector<int> one(ids.begin(), ids.end());
  SeqBatch out = text_encoder(w, prefix, spec, std::span(&one, 1));
  return {out.x.value(), 0, Modality::text};
}

TokenSequence encode_image(const Image& image, const EncoderSpec& spec, const ParameterStore& weights,
                           const std::string& prefix) {
  ag::Tape tape;
  const Binding w{tape, weights};
  const Matrix patches = image_patches(image, spec);
  SeqBatch out = image_encoder(w, prefix, spec, std::span(&patches, 1));
  return {out.x.value(), 0, Modality::image};
}

std::pair<Vector, Vector> fuse(const TokenSequence& text, const TokenSequence& image, int heads,
                               const ParameterStore& weights, const std::string& prefix) {
  if (text.embeddings.cols() != image.embeddings.cols())
    throw PreconditionError(fmt::format("fusion d_model mismatch: text {} vs image {}", text.embeddings.cols(),
                                        image.embeddings.cols()));
  if (text.cls_index != 0 || image.cls_index != 0)
    throw PreconditionError("fusion expects the classification token at index 0");
  ag::Tape tape;
  const Binding w{tape, weights};
  SeqBatch t{tape.constant(text.embeddings), {{0, text.embeddings.rows()}}};
  SeqBatch i{tape.constant(image.embeddings), {{0, image.embeddings.rows()}}};
  auto [u, v] = fusion_block(w, prefix, heads, t, i);
  return {row_vector(u.value(), 0), row_vector(v.value(), 0)};
}

Prediction teacher_forward(std::span<const int> ids, const Image& image, const TeacherSpec& spec,
                           const ParameterStore& weights) {
  ag::Tape tape;
  const Binding w{tape, weights};
  const std::vector<int> one(ids.begin(), ids.end());
  const Matrix patches = image_patches(image, spec.image);
  return to_prediction(teacher_batch(w, spec, std::span(&one, 1), std::span(&patches, 1)));
}

Prediction student_forward(std::span<const int> ids, const ClassifierSpec& spec, const ParameterStore& weights) {
  if (spec.modality() != Modality::text) throw PreconditionError("student must be a text classifier");
  ag::Tape tape;
  const Binding w{tape, weights};
  const std::vector<int> one(ids.begin(), ids.end());
  return to_prediction(classifier_batch(w, spec, std::span(&one, 1), {}));
}

Prediction image_classifier_forward(const Image& image, const ClassifierSpec& spec, const ParameterStore& weights) {
  if (spec.modality() != Modality::image) throw PreconditionError("expected an image classifier");
  ag::Tape tape;
  const Binding w{tape, weights};
  const Matrix patches = image_patches(image, spec.encoder);
  return to_prediction(classifier_batch(w, spec, {}, std::span(&patches, 1)));
}

Matrix softmax_rows(const Matrix& logits) {
  Matrix out(logits.rows(), logits.cols());
  for (Eigen::Index r = 0; r < logits.rows(); ++r) {
    const double m = logits.row(r).maxCoeff();
    out.row(r) = (logits.row(r).array() - m).exp();
    out.row(r) /= out.row(r).sum();
  }
  return out;
}

// -- json ----------------------------------------------------------------------

nlohmann::json to_json(const EncoderSpec& s) {
  nlohmann::json j = {{"kind", kind_name(s.kind)}, {"d_model", s.d_model}, {"depth", s.depth},
                      {"heads", s.heads},          {"ffn_mult", s.ffn_mult}};
  if (s.kind == EncoderKind::toy_text) {
    j["vocab_size"] = s.vocab_size;
    j["max_len"] = s.max_len;
  } else if (s.kind == EncoderKind::toy_image) {
    j["image_size"] = s.image_size;
    j["patch"] = s.patch;
  } else {
    j["adapter"] = s.adapter;
  }
  return j;
}

EncoderSpec encoder_spec_from_json(const nlohmann::json& j, EncoderKind default_kind) {
  static const std::vector<std::string> allowed = {"kind",       "d_model", "depth", "heads",      "ffn_mult",
                                                   "vocab_size", "max_len", "patch", "image_size", "adapter"};
  for (const auto& [key, value] : j.items())
    if (std::find(allowed.begin(), allowed.end(), key) == allowed.end())
      throw ConfigError("unknown encoder key '" + key + "'");
  EncoderSpec s;
  s.kind = j.contains("kind") ? parse_kind(j.at("kind").get<std::string>()) : default_kind;
  s.d_model = j.value("d_model", s.d_model);
  s.depth = j.value("depth", s.depth);
  s.heads = j.value("heads", s.heads);
  s.ffn_mult = j.value("ffn_mult", s.ffn_mult);
  s.vocab_size = j.value("vocab_size", s.vocab_size);
  s.max_len = j.value("max_len", s.max_len);
  s.image_size = j.value("image_size", s.image_size);
  s.patch = j.value("patch", s.patch);
  s.adapter = j.value("adapter", s.adapter);
  s.validate();
  return s;
}

nlohmann::json to_json(const TeacherSpec& s) {
  return {{"text", to_json(s.text)},
          {"image", to_json(s.image)},
          {"fusion_heads", s.fusion_heads},
          {"d_e", s.d_e},
          {"num_classes", s.num_classes}};
}

TeacherSpec teacher_spec_from_json(const nlohmann::json& j) {
  TeacherSpec s;
  s.text = encoder_spec_from_json(j.at("text"), EncoderKind::toy_text);
  s.image = encoder_spec_from_json(j.at("image"), EncoderKind::toy_image);
  s.fusion_heads = j.at("fusion_heads").get<int>();
  s.d_e = j.at("d_e").get<int>();
  s.num_classes = j.at("num_classes").get<int>();
  s.validate();
  return s;
}

nlohmann::json to_json(const ClassifierSpec& s) {
  return {{"encoder", to_json(s.encoder)}, {"d_e", s.d_e}, {"num_classes", s.num_classes}};
}

ClassifierSpec classifier_spec_from_json(const nlohmann::json& j) {
  ClassifierSpec s;
  s.encoder = encoder_spec_from_json(j.at("encoder"), EncoderKind::toy_text);
  s.d_e = j.at("d_e").get<int>();
  s.num_classes = j.at("num_classes").get<int>();
  s.validate();
  return s;
}

}  // namespace privkd::arch
