// Copyright 2026 The privkd Authors
// SPDX-License-Identifier: Apache-2.0
//
// Network structure of the multimodal teacher and the text-only student.
//
//   text ids  -> TextEncoder  --+
//                                 concat + modality embedding -> FusionBlock
//   image     -> ImageEncoder --+      -> [U_cls ; V_cls] -> MLP(d_e) -> logits
//
//   text ids  -> TextEncoder -> cls -> MLP(d_e) -> logits        (student)
//
// All encoders use pre-normalised transformer blocks with a x4 feed-forward
// expansion and learned positional embeddings; every sequence carries its
// classification token at row 0 of its segment.

#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "privkd/autograd.hpp"
#include "privkd/image.hpp"
#include "privkd/params.hpp"

namespace privkd::arch {

using ag::Matrix;
using ag::Vector;

enum class Modality { text, image };
enum class EncoderKind { toy_text, toy_image, external_adapter };

struct EncoderSpec {
  EncoderKind kind = EncoderKind::toy_text;
  int d_model = 32;
  int depth = 2;
  int heads = 4;
  int ffn_mult = 4;
  // text
  int vocab_size = 0;
  int max_len = 64;
  // image
  int image_size = 32;
  int patch = 8;
  // external-adapter
  std::string adapter;

  void validate() const;
  int num_patches() const { return (image_size / patch) * (image_size / patch); }
  int patch_dim() const { return patch * patch * 3; }
};

struct TokenSequence {
  Matrix embeddings;
  int cls_index = 0;
  Modality modality = Modality::text;
};

struct TeacherSpec {
  EncoderSpec text;
  EncoderSpec image{.kind = EncoderKind::toy_image};
  int fusion_heads = 8;
  int d_e = 16;
  int num_classes = 2;

  void validate() const;
};

/// Single-encoder classifier: the student, the text baseline and the
/// image-only reference model.
struct ClassifierSpec {
  EncoderSpec encoder;
  int d_e = 16;
  int num_classes = 2;

  void validate() const;
  Modality modality() const { return encoder.kind == EncoderKind::toy_image ? Modality::image : Modality::text; }
};

struct Prediction {
  Vector logits;
  Vector probs;
  Vector embedding;
};

/// Batched model output: one row per sample.
struct BatchOutput {
  ag::Var logits;
  ag::Var embedding;
};

// -- tokenizer ---------------------------------------------------------------

/// Lower-cased word-level tokenizer. Words are maximal runs of letters,
/// digits and non-ASCII bytes; every other printable character is its own
/// token. "[SEP]" is recognised as the separator special.
class Tokenizer {
 public:
  static constexpr int kPad = 0;
  static constexpr int kUnk = 1;
  static constexpr int kCls = 2;
  static constexpr int kSep = 3;

  Tokenizer();

  /// Vocabulary of every token seen in `texts` (most frequent first, ties by
  /// lexicographic order), capped at `max_vocab` entries including specials.
  static Tokenizer build(std::span<const std::string> texts, std::size_t max_vocab = 30000);

  static std::vector<std::string> split(std::string_view text);

  /// Token ids without the classification token, truncated to `max_len`.
  std::vector<int> encode(std::string_view text, int max_len) const;

  int size() const { return static_cast<int>(vocab_.size()); }
  const std::vector<std::string>& vocab() const { return vocab_; }

  nlohmann::json to_json() const;
  static Tokenizer from_json(const nlohmann::json& j);

 private:
  std::vector<std::string> vocab_;
  std::unordered_map<std::string, int> index_;
};

// -- parameter layout ----------------------------------------------------------

std::vector<ParamShape> encoder_shapes(const std::string& prefix, const EncoderSpec& spec);
std::vector<ParamShape> teacher_shapes(const TeacherSpec& spec);
std::vector<ParamShape> classifier_shapes(const ClassifierSpec& spec);

// -- batched graph construction ----------------------------------------------

/// Resolves parameter names to tape leaves. Gradients flow only when
/// `trainable` is set (it must point at `params`).
struct Binding {
  ag::Tape& tape;
  const ParameterStore& params;
  ParameterStore* trainable = nullptr;

  ag::Var operator()(const std::string& name) const;
};

/// Several sequences packed along rows; each segment starts with its CLS row.
struct SeqBatch {
  ag::Var x;
  std::vector<ag::Segment> segments;

  std::vector<Eigen::Index> cls_rows() const;
};

/// Image resized to the encoder resolution, scaled to [-0.5, 0.5] and cut into
/// row-major patches (num_patches × patch_dim).
Matrix image_patches(const Image& image, const EncoderSpec& spec);

SeqBatch text_encoder(const Binding& w, const std::string& prefix, const EncoderSpec& spec,
                      std::span<const std::vector<int>> ids);
SeqBatch image_encoder(const Binding& w, const std::string& prefix, const EncoderSpec& spec,
                       std::span<const Matrix> patches);
SeqBatch transformer_block(const Binding& w, const std::string& prefix, int heads, const SeqBatch& in);

/// Per-sample concatenation [text ; image] with modality embeddings added.
struct FusedSequence {
  SeqBatch seq;
  std::vector<Eigen::Index> text_cls;   ///< row of each sample's text CLS
  std::vector<Eigen::Index> image_cls;  ///< row of each sample's image CLS
};

FusedSequence fusion_sequence(const Binding& w, const std::string& prefix, const SeqBatch& text,
                              const SeqBatch& image);

/// Cross-modal fusion of per-sample text and image sequences. Returns the
/// post-block classification vectors of each modality (batch × d_model each).
std::pair<ag::Var, ag::Var> fusion_block(const Binding& w, const std::string& prefix, int heads,
                                         const SeqBatch& text, const SeqBatch& image);

BatchOutput teacher_batch(const Binding& w, const TeacherSpec& spec, std::span<const std::vector<int>> ids,
                          std::span<const Matrix> patches);
BatchOutput classifier_batch(const Binding& w, const ClassifierSpec& spec, std::span<const std::vector<int>> ids,
                             std::span<const Matrix> patches);

// -- single-sample API ---------------------------------------------------------

TokenSequence encode_text(std::span<const int> ids, const EncoderSpec& spec, const ParameterStore& weights,
                          const std::string& prefix = "text");
TokenSequence encode_image(const Image& image, const EncoderSpec& spec, const ParameterStore& weights,
                           const std::string& prefix = "image");
/// Returns (U_cls, V_cls).
std::pair<Vector, Vector> fuse(const TokenSequence& text, const TokenSequence& image, int heads,
                               const ParameterStore& weights, const std::string& prefix = "fusion");

Prediction teacher_forward(std::span<const int> ids, const Image& image, const TeacherSpec& spec,
                           const ParameterStore& weights);
Prediction student_forward(std::span<const int> ids, const ClassifierSpec& spec, const ParameterStore& weights);
Prediction image_classifier_forward(const Image& image, const ClassifierSpec& spec, const ParameterStore& weights);

/// Row-wise softmax of a batch of logits.
Matrix softmax_rows(const Matrix& logits);

// -- json ----------------------------------------------------------------------

nlohmann::json to_json(const EncoderSpec& spec);
EncoderSpec encoder_spec_from_json(const nlohmann::json& j, EncoderKind default_kind);
nlohmann::json to_json(const TeacherSpec& spec);
TeacherSpec teacher_spec_from_json(const nlohmann::json& j);
nlohmann::json to_json(const ClassifierSpec& spec);
ClassifierSpec classifier_spec_from_json(const nlohmann::json& j);

}  // namespace privkd::arch
