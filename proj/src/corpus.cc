// src/corpus.cc

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

#include "ssikit/corpus.h"

#include <algorithm>
#include <cstring>
#include <fstream>
#include <map>
#include <numeric>
#include <sstream>

#include <nlohmann/json.hpp>

namespace ssikit::corpus {

namespace fs = std::filesystem;
using nlohmann::json;

std::string ToString(Modality m) {
  return m == Modality::kUltrasound ? "ultrasound" : "video";
}

std::string ToString(SpeakingMode m) {
  switch (m) {
    case SpeakingMode::kModal: return "modal";
    case SpeakingMode::kSilent: return "silent";
    case SpeakingMode::kWhispered: return "whispered";
  }
  return "modal";
}

std::string ToString(Split s) {
  switch (s) {
    case Split::kTrain: return "train";
    case Split::kValidation: return "validation";
    case Split::kTest: return "test";
  }
  return "train";
}

SpeakingMode ParseMode(const std::string& s) {
  if (s == "modal") return SpeakingMode::kModal;
  if (s == "silent") return SpeakingMode::kSilent;
  if (s == "whispered") return SpeakingMode::kWhispered;
  throw DataError("unknown speaking mode '" + s + "'");
}

Split ParseSplit(const std::string& s) {
  if (s == "train") return Split::kTrain;
  if (s == "validation") return Split::kValidation;
  if (s == "test") return Split::kTest;
  throw DataError("unknown split '" + s + "'");
}

void FrameSequence::Validate() const {
  if (frames.empty()) throw DataError("FrameSequence: no frames");
  if (!(fps > 0)) throw DataError("FrameSequence: fps must be positive");
  for (const auto& f : frames)
    if (f.rows() != frames[0].rows() || f.cols() != frames[0].cols())
      throw DataError("FrameSequence: inconsistent frame shapes");
}

// ---- binary I/O ------------------------------------------------------------

namespace {

template <typename T>
void PutLe(std::string& buf, T v) {
  for (std::size_t i = 0; i < sizeof(T); ++i)
    buf.push_back(char((static_cast<std::uint64_t>(v) >> (8 * i)) & 0xFF));
}

template <typename T>
T GetLe(const unsigned char* p) {
  std::uint64_t v = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i)
    v |= std::uint64_t(p[i]) << (8 * i);
  return static_cast<T>(v);
}

void PutF32(std::string& buf, float f) {
  std::uint32_t bits;
  std::memcpy(&bits, &f, 4);
  PutLe<std::uint32_t>(buf, bits);
}

float GetF32(const unsigned char* p) {
  std::uint32_t bits = GetLe<std::uint32_t>(p);
  float f;
  std::memcpy(&f, &bits, 4);
  return f;
}

std::string ReadAll(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open '" + path.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void WriteAll(const fs::path& path, const std::string& data) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write '" + path.string() + "'");
  out.write(data.data(), std::streamsize(data.size()));
  if (!out) throw DataError("write failed for '" + path.string() + "'");
}

ArtfHeader ParseHeader(const unsigned char* p, const std::string& where) {
  if (std::memcmp(p, "ARTF", 4) != 0)
    throw DataError(where + ": bad magic (expected ARTF)");
  ArtfHeader h;
  if (p[4] > 1) throw DataError(where + ": unknown dtype code");
  h.dtype = static_cast<PixelType>(p[4]);
  h.height = GetLe<std::uint16_t>(p + 5);
  h.width = GetLe<std::uint16_t>(p + 7);
  h.n_frames = GetLe<std::uint32_t>(p + 9);
  return h;
}

std::string EncodeHeader(const ArtfHeader& h) {
  std::string buf = "ARTF";
  buf.push_back(char(h.dtype));
  PutLe<std::uint16_t>(buf, h.height);
  PutLe<std::uint16_t>(buf, h.width);
  PutLe<std::uint32_t>(buf, h.n_frames);
  buf.append(kArtfHeaderBytes - buf.size(), '\0');
  return buf;
}

std::size_t PixelBytes(PixelType t) { return t == PixelType::kU8 ? 1 : 4; }

}  // namespace

ArtfHeader ReadArtfHeader(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("missing frame file '" + path.string() + "'");
  unsigned char buf[kArtfHeaderBytes];
  in.read(reinterpret_cast<char*>(buf), kArtfHeaderBytes);
  if (in.gcount() != std::streamsize(kArtfHeaderBytes))
    throw DataError(path.string() + ": truncated header");
  return ParseHeader(buf, path.string());
}

FrameSequence ReadFrames(const fs::path& path, Modality modality, double fps) {
  const std::string data = ReadAll(path);
  if (data.size() < kArtfHeaderBytes)
    throw DataError(path.string() + ": truncated header");
  const auto* p = reinterpret_cast<const unsigned char*>(data.data());
  ArtfHeader h = ParseHeader(p, path.string());
  const std::size_t px = std::size_t(h.height) * h.width;
  const std::size_t need = kArtfHeaderBytes + px * h.n_frames * PixelBytes(h.dtype);
  if (data.size() != need)
    throw DataError(path.string() + ": payload size does not match header");
  FrameSequence seq;
  seq.modality = modality;
  seq.fps = fps;
  seq.frames.reserve(h.n_frames);
  p += kArtfHeaderBytes;
  for (std::uint32_t f = 0; f < h.n_frames; ++f) {
    Grid g(h.height, h.width);
    for (std::size_t i = 0; i < px; ++i) {
      if (h.dtype == PixelType::kU8) {
        g.data()[i] = float(p[i]) / 255.0f;
      } else {
        g.data()[i] = GetF32(p + 4 * i);
      }
    }
    p += px * PixelBytes(h.dtype);
    seq.frames.push_back(std::move(g));
  }
  return seq;
}

void WriteFrames(const fs::path& path, const FrameSequence& seq,
                 PixelType dtype) {
  seq.Validate();
  if (seq.height() > 0xFFFF || seq.width() > 0xFFFF)
    throw DataError("WriteFrames: frame too large for ARTF");
  ArtfHeader h{dtype, std::uint16_t(seq.height()), std::uint16_t(seq.width()),
               std::uint32_t(seq.size())};
  std::string buf = EncodeHeader(h);
  const std::size_t px = std::size_t(h.height) * h.width;
  buf.reserve(buf.size() + px * seq.size() * PixelBytes(dtype));
  for (const auto& g : seq.frames) {
    for (std::size_t i = 0; i < px; ++i) {
      float v = g.data()[i];
      if (dtype == PixelType::kU8) {
        float q = std::clamp(v, 0.0f, 1.0f) * 255.0f;
        buf.push_back(char(static_cast<unsigned char>(std::lround(q))));
      } else {
        PutF32(buf, v);
      }
    }
  }
  WriteAll(path, buf);
}

FeatureMatrix ReadFeatures(const fs::path& path) {
  FrameSequence seq = ReadFrames(path);
  if (seq.height() != 1 && !seq.frames.empty())
    throw DataError(path.string() + ": feature file must have height 1");
  FeatureMatrix m(seq.size(), seq.width());
  for (std::size_t t = 0; t < seq.size(); ++t)
    m.row(Eigen::Index(t)) = seq.frames[t].row(0).cast<double>();
  return m;
}

void WriteFeatures(const fs::path& path, const FeatureMatrix& feats) {
  FrameSequence seq;
  seq.fps = 1.0;
  for (Eigen::Index t = 0; t < feats.rows(); ++t)
    seq.frames.push_back(feats.row(t).cast<float>());
  WriteFrames(path, seq, PixelType::kF32);
}

std::vector<std::uint16_t> ReadLabels(const fs::path& path) {
  const std::string data = ReadAll(path);
  if (data.size() % 2 != 0)
    throw DataError(path.string() + ": odd byte count in label file");
  std::vector<std::uint16_t> labels(data.size() / 2);
  const auto* p = reinterpret_cast<const unsigned char*>(data.data());
  for (std::size_t i = 0; i < labels.size(); ++i)
    labels[i] = GetLe<std::uint16_t>(p + 2 * i);
  return labels;
}

void WriteLabels(const fs::path& path,
                 const std::vector<std::uint16_t>& labels) {
  std::string buf;
  buf.reserve(labels.size() * 2);
  for (auto l : labels) PutLe<std::uint16_t>(buf, l);
  WriteAll(path, buf);
}

// ---- lazy payloads ---------------------------------------------------------

FrameSource::FrameSource(fs::path path, Modality modality, double fps,
                         std::uint32_t n_frames)
    : path_(std::move(path)), modality_(modality), fps_(fps),
      n_frames_(n_frames) {}

FrameSource::FrameSource(FrameSequence in_memory)
    : modality_(in_memory.modality), fps_(in_memory.fps),
      n_frames_(std::uint32_t(in_memory.size())) {
  std::call_once(once_, [&] { data_ = std::move(in_memory); });
}

const FrameSequence& FrameSource::Get() const {
  std::call_once(once_, [&] { data_ = ReadFrames(path_, modality_, fps_); });
  return *data_;
}

bool FrameSource::loaded() const { return data_.has_value(); }

// ---- manifest --------------------------------------------------------------

std::string UtteranceRecord::PromptText() const {
  std::string s;
  for (std::size_t i = 0; i < prompt.size(); ++i) {
    if (i) s += ' ';
    s += prompt[i];
  }
  return s;
}

std::set<std::string> Manifest::PromptsWithSplit(Split split) const {
  std::set<std::string> out;
  for (const auto& r : records)
    if (r.split == split) out.insert(r.PromptText());
  return out;
}

void Manifest::Validate() const {
  std::set<std::string> ids;
  for (const auto& r : records) {
    const std::string where = "record '" + r.utt_id + "'";
    if (!ids.insert(r.utt_id).second)
      throw DataError(where + ": duplicate id");
    if (!(r.duration > 0)) throw DataError(where + ": duration must be > 0");
    if (r.syllable_count < 1)
      throw DataError(where + ": syllable count must be >= 1");
    if (r.phone_labels && r.ultrasound &&
        r.phone_labels->size() != r.ultrasound->n_frames())
      throw DataError(where + ": phone label length " +
                      std::to_string(r.phone_labels->size()) +
                      " does not match frame count " +
                      std::to_string(r.ultrasound->n_frames()));
    if (r.phone_labels)
      for (auto l : *r.phone_labels)
        if (l >= phones.size())
          throw DataError(where + ": phone label out of inventory range");
  }
  auto train = PromptsWithSplit(Split::kTrain);
  for (const auto& p : PromptsWithSplit(Split::kTest))
    if (train.count(p))
      throw DataError("prompt '" + p + "' occurs in both train and test");
}

namespace {

template <typename T>
T Field(const json& rec, const char* key, std::size_t index) {
  auto it = rec.find(key);
  if (it == rec.end())
    throw DataError("manifest record " + std::to_string(index) +
                    ": missing field '" + key + "'");
  try {
    return it->get<T>();
  } catch (const json::exception& e) {
    throw DataError("manifest record " + std::to_string(index) + ", field '" +
                    key + "': " + e.what());
  }
}

std::vector<std::string> SplitWords(const std::string& s) {
  std::vector<std::string> out;
  std::istringstream ss(s);
  std::string w;
  while (ss >> w) out.push_back(w);
  return out;
}

}  // namespace

Manifest LoadManifest(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open manifest '" + path.string() + "'");
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::parse_error& e) {
    throw DataError(path.string() + ": " + e.what());
  }
  Manifest m;
  m.base_dir = path.parent_path();
  if (!doc.contains("phones") || !doc["phones"].is_array())
    throw DataError(path.string() + ": missing 'phones' array");
  if (!doc.contains("records") || !doc["records"].is_array())
    throw DataError(path.string() + ": missing 'records' array");
  m.phones = doc["phones"].get<std::vector<std::string>>();
  m.ult_fps = doc.value("ult_fps", 80.0);
  m.vid_fps = doc.value("vid_fps", 60.0);
  std::size_t index = 0;
  for (const auto& rj : doc["records"]) {
    UtteranceRecord r;
    r.utt_id = Field<std::string>(rj, "id", index);
    r.speaker_id = Field<std::string>(rj, "speaker", index);
    r.session_id = Field<std::string>(rj, "session", index);
    r.mode = ParseMode(Field<std::string>(rj, "mode", index));
    r.prompt = SplitWords(Field<std::string>(rj, "prompt", index));
    r.syllable_count = Field<int>(rj, "syllables", index);
    r.duration = Field<double>(rj, "duration_s", index);
    r.ult_path = Field<std::string>(rj, "ult_path", index);
    r.vid_path = Field<std::string>(rj, "vid_path", index);
    r.labels_path = Field<std::string>(rj, "labels_path", index);
    r.split = ParseSplit(Field<std::string>(rj, "split", index));
    if (!r.ult_path.empty()) {
      fs::path p = m.base_dir / r.ult_path;
      ArtfHeader h = ReadArtfHeader(p);
      r.ultrasound = std::make_shared<FrameSource>(p, Modality::kUltrasound,
                                                   m.ult_fps, h.n_frames);
    }
    if (!r.vid_path.empty()) {
      fs::path p = m.base_dir / r.vid_path;
      ArtfHeader h = ReadArtfHeader(p);
      r.video = std::make_shared<FrameSource>(p, Modality::kVideo, m.vid_fps,
                                              h.n_frames);
    }
    if (!r.labels_path.empty())
      r.phone_labels = ReadLabels(m.base_dir / r.labels_path);
    m.records.push_back(std::move(r));
    ++index;
  }
  m.Validate();
  return m;
}

void SaveManifest(const fs::path& path, const Manifest& manifest) {
  json doc;
  doc["phones"] = manifest.phones;
  doc["ult_fps"] = manifest.ult_fps;
  doc["vid_fps"] = manifest.vid_fps;
  json recs = json::array();
  for (const auto& r : manifest.records) {
    recs.push_back({{"id", r.utt_id},
                    {"speaker", r.speaker_id},
                    {"session", r.session_id},
                    {"mode", ToString(r.mode)},
                    {"prompt", r.PromptText()},
                    {"syllables", r.syllable_count},
                    {"duration_s", r.duration},
                    {"ult_path", r.ult_path},
                    {"vid_path", r.vid_path},
                    {"labels_path", r.labels_path},
                    {"split", ToString(r.split)}});
  }
  doc["records"] = std::move(recs);
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw DataError("cannot write manifest '" + path.string() + "'");
  out << doc.dump(1) << '\n';
}

bool StructurallyEqual(const Manifest& a, const Manifest& b) {
  if (a.phones != b.phones || a.records.size() != b.records.size()) return false;
  if (a.ult_fps != b.ult_fps || a.vid_fps != b.vid_fps) return false;
  for (std::size_t i = 0; i < a.records.size(); ++i) {
    const auto& x = a.records[i];
    const auto& y = b.records[i];
    if (x.utt_id != y.utt_id || x.speaker_id != y.speaker_id ||
        x.session_id != y.session_id || x.mode != y.mode ||
        x.prompt != y.prompt || x.syllable_count != y.syllable_count ||
        x.duration != y.duration || x.split != y.split ||
        x.ult_path != y.ult_path || x.vid_path != y.vid_path ||
        x.labels_path != y.labels_path || x.phone_labels != y.phone_labels)
      return false;
  }
  return true;
}

// ---- preprocessing ---------------------------------------------------------

Normalizer Normalizer::Fit(const std::vector<const FrameSequence*>& training) {
  long double sum = 0, n = 0;
  for (const auto* seq : training)
    for (const auto& f : seq->frames) {
      sum += f.cast<long double>().sum();
      n += f.size();
    }
  if (n == 0) throw DataError("Normalizer: empty training set");
  const long double mean = sum / n;
  long double ss = 0;
  for (const auto* seq : training)
    for (const auto& f : seq->frames)
      ss += (f.cast<long double>().array() - mean).square().sum();
  const long double var = ss / n;
  if (!(var > 0)) throw DataError("Normalizer: training set has zero variance");
  return {double(mean), double(std::sqrt(var))};
}

Grid Normalizer::Apply(const Grid& frame) const {
  return ((frame.cast<double>().array() - mean) / stddev).cast<float>().matrix();
}

FrameSequence Normalizer::Apply(const FrameSequence& seq) const {
  FrameSequence out;
  out.modality = seq.modality;
  out.fps = seq.fps;
  out.frames.reserve(seq.size());
  for (const auto& f : seq.frames) out.frames.push_back(Apply(f));
  return out;
}

FrameSequence Preprocess(const FrameSequence& seq, const PreprocessConfig& cfg) {
  FrameSequence out;
  out.modality = seq.modality;
  out.fps = seq.fps;
  out.frames.reserve(seq.size());
  for (const auto& f : seq.frames) {
    if (seq.modality == Modality::kVideo) {
      Grid r = (f.rows() == cfg.video_resize_h && f.cols() == cfg.video_resize_w)
                   ? f
                   : ResizeBilinear(f, cfg.video_resize_h, cfg.video_resize_w);
      out.frames.push_back(CropCenter(r, cfg.out_h, cfg.out_w));
    } else if (f.rows() == cfg.out_h && f.cols() == cfg.out_w) {
      out.frames.push_back(f);
    } else {
      out.frames.push_back(ResizeBilinear(f, cfg.out_h, cfg.out_w));
    }
  }
  return out;
}

FrameSequence ResampleNearest(const FrameSequence& seq, double target_fps,
                              std::size_t target_count) {
  seq.Validate();
  FrameSequence out;
  out.modality = seq.modality;
  out.fps = target_fps;
  out.frames.reserve(target_count);
  for (std::size_t i = 0; i < target_count; ++i) {
    double t = double(i) / target_fps;
    auto j = static_cast<long>(std::lround(t * seq.fps));
    j = std::clamp<long>(j, 0, long(seq.size()) - 1);
    out.frames.push_back(seq.frames[std::size_t(j)]);
  }
  return out;
}

// ---- windowing -------------------------------------------------------------

std::vector<WindowSample> WindowSamples(
    std::size_t n_frames, const std::optional<std::vector<std::uint16_t>>& labels) {
  if (n_frames == 0) throw DataError("WindowSamples: empty sequence");
  if (labels && labels->size() != n_frames)
    throw DataError("WindowSamples: label count does not match frame count");
  std::vector<WindowSample> out(n_frames);
  const int last = int(n_frames) - 1;
  for (int a = 0; a <= last; ++a) {
    auto& s = out[std::size_t(a)];
    s.anchor_index = a;
    for (std::size_t c = 0; c < kWindowOffsets.size(); ++c)
      s.channels[c] = std::clamp(a + kWindowOffsets[c], 0, last);
    if (labels) s.label = (*labels)[std::size_t(a)];
  }
  return out;
}

// ---- splitting -------------------------------------------------------------

std::vector<UtteranceRecord> SplitPromptDisjoint(
    std::vector<UtteranceRecord> records,
    const std::set<std::string>& test_prompts, const SplitOptions& options) {
  if (test_prompts.empty())
    throw DataError("SplitPromptDisjoint: empty test prompt set");
  std::vector<std::size_t> rest;
  for (std::size_t i = 0; i < records.size(); ++i) {
    if (test_prompts.count(records[i].PromptText())) {
      records[i].split = Split::kTest;
    } else {
      rest.push_back(i);
    }
  }
  Rng rng(options.seed);
  for (std::size_t i = rest.size(); i > 1; --i)
    std::swap(rest[i - 1], rest[UniformIndex(rng, i)]);
  const auto n_val = std::size_t(
      std::lround(options.validation_ratio * double(rest.size())));
  if (n_val >= rest.size())
    throw DataError("SplitPromptDisjoint: no training records remain");
  for (std::size_t k = 0; k < rest.size(); ++k)
    records[rest[k]].split = k < n_val ? Split::kValidation : Split::kTrain;
  return records;
}

}  // namespace ssikit::corpus
