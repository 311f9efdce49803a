// include/ssikit/corpus.h

// Copyright 2026  The ssikit Authors

// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//  http://www.apache.org/licenses/LICENSE-2.0
//
// THIS CODE IS PROVIDED *AS IS* BASIS, WITHOUT WARRANTIES OR CONDITIONS OF ANY
// KIND, EITHER EXPRESS OR IMPLIED, INCLUDING WITHOUT LIMITATION ANY IMPLIED
// WARRANTIES OR CONDITIONS OF TITLE, FITNESS FOR A PARTICULAR PURPOSE,
// MERCHANTABLITY OR NON-INFRINGEMENT.
// See the Apache 2 License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "ssikit/core.h"

namespace ssikit::corpus {

enum class Modality { kUltrasound, kVideo };
enum class SpeakingMode { kModal, kSilent, kWhispered };
enum class Split { kTrain, kValidation, kTest };

std::string ToString(Modality m);
std::string ToString(SpeakingMode m);
std::string ToString(Split s);
SpeakingMode ParseMode(const std::string& s);
Split ParseSplit(const std::string& s);

// Time-ordered grid of equally sized frames.
struct FrameSequence {
  Modality modality = Modality::kUltrasound;
  double fps = 80.0;
  std::vector<Grid> frames;

  int height() const { return frames.empty() ? 0 : int(frames[0].rows()); }
  int width() const { return frames.empty() ? 0 : int(frames[0].cols()); }
  std::size_t size() const { return frames.size(); }
  void Validate() const;
};

// ---- ARTF frame container -------------------------------------------------
//
// 16-byte header: "ARTF", u8 dtype (0 = u8, 1 = f32 LE), u16 height,
// u16 width, u32 n_frames, 3 reserved bytes; then row-major frames.
// u8 payloads map to [0, 1] intensities as value / 255.

enum class PixelType : std::uint8_t { kU8 = 0, kF32 = 1 };

struct ArtfHeader {
  PixelType dtype = PixelType::kF32;
  std::uint16_t height = 0;
  std::uint16_t width = 0;
  std::uint32_t n_frames = 0;
};

inline constexpr std::size_t kArtfHeaderBytes = 16;

ArtfHeader ReadArtfHeader(const std::filesystem::path& path);
FrameSequence ReadFrames(const std::filesystem::path& path,
                         Modality modality = Modality::kUltrasound,
                         double fps = 80.0);
void WriteFrames(const std::filesystem::path& path, const FrameSequence& seq,
                 PixelType dtype);

/// Feature files reuse the container with dtype f32, height 1, width = dim.
FeatureMatrix ReadFeatures(const std::filesystem::path& path);
void WriteFeatures(const std::filesystem::path& path,
                   const FeatureMatrix& feats);

std::vector<std::uint16_t> ReadLabels(const std::filesystem::path& path);
void WriteLabels(const std::filesystem::path& path,
                 const std::vector<std::uint16_t>& labels);

// Frame payload that is read from disk on first access. Thread-safe.
class FrameSource {
 public:
  FrameSource(std::filesystem::path path, Modality modality, double fps,
              std::uint32_t n_frames);
  explicit FrameSource(FrameSequence in_memory);

  const FrameSequence& Get() const;
  bool loaded() const;
  const std::filesystem::path& path() const { return path_; }
  std::uint32_t n_frames() const { return n_frames_; }

 private:
  std::filesystem::path path_;
  Modality modality_;
  double fps_;
  std::uint32_t n_frames_;
  mutable std::once_flag once_;
  mutable std::optional<FrameSequence> data_;
};

struct UtteranceRecord {
  std::string utt_id;
  std::string speaker_id;
  std::string session_id;
  SpeakingMode mode = SpeakingMode::kModal;
  std::vector<std::string> prompt;  // word sequence
  int syllable_count = 1;
  double duration = 0.0;            // seconds
  Split split = Split::kTrain;
  std::string ult_path;             // as written in the manifest
  std::string vid_path;
  std::string labels_path;
  std::shared_ptr<const FrameSource> ultrasound;
  std::shared_ptr<const FrameSource> video;
  std::optional<std::vector<std::uint16_t>> phone_labels;

  std::string PromptText() const;
};

struct Manifest {
  std::vector<std::string> phones;
  std::vector<UtteranceRecord> records;
  double ult_fps = 80.0;
  double vid_fps = 60.0;
  std::filesystem::path base_dir;

  /// Throws DataError on invariant violations (label lengths, durations,
  /// train/test prompt overlap).
  void Validate() const;
  std::set<std::string> PromptsWithSplit(Split split) const;
};

Manifest LoadManifest(const std::filesystem::path& path);
void SaveManifest(const std::filesystem::path& path, const Manifest& manifest);

/// Field-wise equality of metadata and labels (payloads compared by path).
bool StructurallyEqual(const Manifest& a, const Manifest& b);

// ---- preprocessing ---------------------------------------------------------

/// Bilinear resampling with corner-aligned sample positions; a single output
/// row/column samples the input centre.
template <typename Derived>
GridT<typename Derived::Scalar> ResizeBilinear(
    const Eigen::MatrixBase<Derived>& in, int out_h, int out_w) {
  using Scalar = typename Derived::Scalar;
  if (in.rows() == 0 || in.cols() == 0)
    throw DataError("ResizeBilinear: zero-sized input frame");
  if (out_h < 1 || out_w < 1)
    throw DataError("ResizeBilinear: output size must be >= 1");
  const Eigen::Index h = in.rows(), w = in.cols();
  auto position = [](int i, int n_out, Eigen::Index n_in) {
    if (n_out == 1) return 0.5 * double(n_in - 1);
    return double(i) * double(n_in - 1) / double(n_out - 1);
  };
  GridT<Scalar> out(out_h, out_w);
  for (int r = 0; r < out_h; ++r) {
    double y = position(r, out_h, h);
    Eigen::Index y0 = std::min<Eigen::Index>(Eigen::Index(y), h - 1);
    Eigen::Index y1 = std::min<Eigen::Index>(y0 + 1, h - 1);
    double fy = y - double(y0);
    for (int c = 0; c < out_w; ++c) {
      double x = position(c, out_w, w);
      Eigen::Index x0 = std::min<Eigen::Index>(Eigen::Index(x), w - 1);
      Eigen::Index x1 = std::min<Eigen::Index>(x0 + 1, w - 1);
      double fx = x - double(x0);
      double top = (1 - fx) * double(in(y0, x0)) + fx * double(in(y0, x1));
      double bot = (1 - fx) * double(in(y1, x0)) + fx * double(in(y1, x1));
      out(r, c) = Scalar((1 - fy) * top + fy * bot);
    }
  }
  return out;
}

/// Centred crop; odd margins drop the extra row/column at the bottom/right.
template <typename Derived>
GridT<typename Derived::Scalar> CropCenter(const Eigen::MatrixBase<Derived>& in,
                                           int out_h, int out_w) {
  if (out_h < 1 || out_w < 1 || out_h > in.rows() || out_w > in.cols())
    throw DataError("CropCenter: output larger than input");
  const Eigen::Index top = (in.rows() - out_h) / 2;
  const Eigen::Index left = (in.cols() - out_w) / 2;
  return in.block(top, left, out_h, out_w);
}

/// Global intensity statistics fitted on the training split.
struct Normalizer {
  double mean = 0.0;
  double stddev = 1.0;

  static Normalizer Fit(const std::vector<const FrameSequence*>& training);
  Grid Apply(const Grid& frame) const;
  FrameSequence Apply(const FrameSequence& seq) const;
};

/// Resize (and crop, for video) every frame of a sequence.
struct PreprocessConfig {
  int out_h = 64;
  int out_w = 128;
  int video_resize_h = 120;
  int video_resize_w = 160;
};
FrameSequence Preprocess(const FrameSequence& seq, const PreprocessConfig& cfg);

/// Nearest-timestamp resampling of a sequence onto another timeline.
FrameSequence ResampleNearest(const FrameSequence& seq, double target_fps,
                              std::size_t target_count);

// ---- windowing -------------------------------------------------------------

inline constexpr std::array<int, 7> kWindowOffsets = {-12, -8, -4, 0,
                                                      4,   8,  12};

struct WindowSample {
  std::array<int, 7> channels{};  // source frame indices, clamped
  int anchor_index = 0;
  std::optional<int> label;
};

std::vector<WindowSample> WindowSamples(
    std::size_t n_frames,
    const std::optional<std::vector<std::uint16_t>>& labels = std::nullopt);

// ---- splitting -------------------------------------------------------------

struct SplitOptions {
  double validation_ratio = 0.1;
  std::uint64_t seed = 0;
};

/// Tags test records by prompt membership and divides the rest into
/// train/validation. Throws DataError when no training record remains.
std::vector<UtteranceRecord> SplitPromptDisjoint(
    std::vector<UtteranceRecord> records,
    const std::set<std::string>& test_prompts, const SplitOptions& options);

}  // namespace ssikit::corpus
