#pragma once

#include <array>
#include <bit>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <optional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "slideprog/core.hpp"
#include "slideprog/image.hpp"
#include "slideprog/patching.hpp"

namespace slideprog {

inline constexpr std::size_t kFeatureDim = 512;

struct FeatureVector {
  std::vector<float> values;
  Magnification magnification = Magnification::x20;
  PatchRef patch_ref;
  friend bool operator==(const FeatureVector&, const FeatureVector&) = default;
};

/// Multi-scale feature: per-magnification blocks of 512 in declared order.
struct ConcatFeature {
  std::vector<float> values;
  std::vector<Magnification> magnifications;
  PatchRef patch_ref;
  friend bool operator==(const ConcatFeature&, const ConcatFeature&) = default;
};

/// Frozen feature extractor for one magnification. Implementations are immutable.
class Embedder {
 public:
  virtual ~Embedder() = default;
  virtual Magnification magnification() const = 0;
  virtual std::int64_t patch_size() const = 0;
  virtual std::vector<float> features(const RgbImage& patch) const = 0;
};

inline FeatureVector embed_patch(const Embedder& embedder, const RgbImage& patch, PatchRef ref = {}) {
  if (patch.width() != embedder.patch_size() || patch.height() != embedder.patch_size())
    throw ValidationError("embed_patch: expected " + std::to_string(embedder.patch_size()) + "x" +
                          std::to_string(embedder.patch_size()) + " patch, got " + std::to_string(patch.width()) +
                          "x" + std::to_string(patch.height()));
  FeatureVector out{embedder.features(patch), embedder.magnification(), std::move(ref)};
  if (out.values.size() != kFeatureDim) throw StageError("embedder returned a non-512 vector");
  return out;
}

/// Reference embedder: the patch is area-resampled to 32x32; per-channel means,
/// per-channel variances and an 8x8x3 grid of block means (198 statistics) are
/// mapped to 512 dimensions by a fixed Gaussian projection seeded by
/// (seed, magnification), with outputs scaled to unit order by kGain.
class ReferenceEmbedder final : public Embedder {
 public:
  static constexpr double kGain = 4.0;
  static constexpr std::int64_t kThumb = 32;
  static constexpr std::int64_t kGrid = 8;
  static constexpr std::size_t kRawDim = 3 + 3 + kGrid * kGrid * 3;

  ReferenceEmbedder(std::uint64_t seed, Magnification m, std::int64_t patch_size = 224)
      : magnification_(m), patch_size_(patch_size), projection_(kFeatureDim * kRawDim) {
    Rng rng(derive_seed(seed, "reference-embedder/" + magnification_label(m)));
    const double scale = kGain / std::sqrt(static_cast<double>(kRawDim));
    for (double& w : projection_) w = rng.normal() * scale;
  }

  Magnification magnification() const override { return magnification_; }
  std::int64_t patch_size() const override { return patch_size_; }

  static std::array<double, kRawDim> raw_statistics(const RgbImage& patch) {
    const std::vector<double> thumb = area_resample_planar(patch, kThumb, kThumb);
    std::array<double, kRawDim> raw{};
    constexpr std::int64_t plane = kThumb * kThumb;
    constexpr std::int64_t block = kThumb / kGrid;
    for (int c = 0; c < 3; ++c) {
      const double* p = thumb.data() + c * plane;
      double sum = 0.0;
      for (std::int64_t i = 0; i < plane; ++i) sum += p[i];
      const double mean = sum / plane;
      double ss = 0.0;
      for (std::int64_t i = 0; i < plane; ++i) ss += (p[i] - mean) * (p[i] - mean);
      raw[c] = mean / 255.0 - 0.5;
      raw[3 + c] = 16.0 * ss / plane / (255.0 * 255.0);
      for (std::int64_t by = 0; by < kGrid; ++by)
        for (std::int64_t bx = 0; bx < kGrid; ++bx) {
          double s = 0.0;
          for (std::int64_t y = 0; y < block; ++y)
            for (std::int64_t x = 0; x < block; ++x) s += p[(by * block + y) * kThumb + bx * block + x];
          raw[6 + (c * kGrid + by) * kGrid + bx] = s / (block * block) / 255.0 - 0.5;
        }
    }
    return raw;
  }

  std::vector<float> features(const RgbImage& patch) const override {
    const auto raw = raw_statistics(patch);
    std::vector<float> out(kFeatureDim);
    for (std::size_t i = 0; i < kFeatureDim; ++i) {
      const double* row = projection_.data() + i * kRawDim;
      double acc = 0.0;
      for (std::size_t j = 0; j < kRawDim; ++j) acc += row[j] * raw[j];
      out[i] = static_cast<float>(acc);
    }
    return out;
  }

 private:
  Magnification magnification_;
  std::int64_t patch_size_;
  std::vector<double> projection_;  // kFeatureDim x kRawDim, row-major
};

/// One reference embedder per magnification, each with its own projection.
inline std::vector<std::shared_ptr<const Embedder>> make_reference_embedders(
    std::uint64_t seed, const std::vector<Magnification>& mags, std::int64_t patch_size) {
  std::vector<std::shared_ptr<const Embedder>> out;
  for (Magnification m : mags) out.push_back(std::make_shared<ReferenceEmbedder>(seed, m, patch_size));
  return out;
}

/// Block concatenation in the order given. A single part passes through unchanged.
inline ConcatFeature concat_features(std::span<const FeatureVector> parts) {
  if (parts.empty()) throw ValidationError("concat_features: no parts");
  ConcatFeature out;
  out.patch_ref = parts.front().patch_ref;
  out.values.reserve(parts.size() * kFeatureDim);
  for (const FeatureVector& part : parts) {
    if (!(part.patch_ref == out.patch_ref))
      throw ValidationError("concat_features: mismatched patch_ref " + describe(part.patch_ref) + " vs " +
                            describe(out.patch_ref));
    if (std::find(out.magnifications.begin(), out.magnifications.end(), part.magnification) != out.magnifications.end())
      throw ValidationError("concat_features: duplicate magnification " + magnification_label(part.magnification));
    out.magnifications.push_back(part.magnification);
    out.values.insert(out.values.end(), part.values.begin(), part.values.end());
  }
  return out;
}

// Embedding file (little endian):
//   "SPEB" | u32 version | u32 mag_count | f32 magnification[mag_count] | u64 record_count
//   record: u32 id_len | id bytes | i64 center_x_20 | i64 center_y_20 | per magnification: u32 dim | f32[dim]

struct EmbeddingTable {
  std::vector<Magnification> magnifications;
  std::map<PatchRef, std::vector<FeatureVector>> records;  // vectors in magnification order

  /// Concatenated feature for a patch, or nullopt if the patch is absent.
  std::optional<ConcatFeature> concat(const PatchRef& ref) const {
    const auto it = records.find(ref);
    if (it == records.end()) return std::nullopt;
    return concat_features(it->second);
  }

  struct Resolution {
    std::vector<ConcatFeature> features;
    std::vector<PatchRef> missing;
  };

  Resolution resolve(const DatasetManifest& manifest) const {
    Resolution out;
    for (const auto& entry : manifest.entries) {
      auto feature = concat(ref_of(entry));
      if (feature)
        out.features.push_back(std::move(*feature));
      else
        out.missing.push_back(ref_of(entry));
    }
    return out;
  }

  friend bool operator==(const EmbeddingTable&, const EmbeddingTable&) = default;
};

namespace detail {

inline void put_u32(std::ostream& out, std::uint32_t v) {
  const unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                              static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
  out.write(reinterpret_cast<const char*>(b), 4);
}
inline void put_u64(std::ostream& out, std::uint64_t v) {
  put_u32(out, static_cast<std::uint32_t>(v));
  put_u32(out, static_cast<std::uint32_t>(v >> 32));
}
inline void put_f32(std::ostream& out, float f) { put_u32(out, std::bit_cast<std::uint32_t>(f)); }
inline void put_f64(std::ostream& out, double f) { put_u64(out, std::bit_cast<std::uint64_t>(f)); }

inline std::uint32_t get_u32(std::istream& in) {
  unsigned char b[4];
  if (!in.read(reinterpret_cast<char*>(b), 4)) throw StageError("unexpected end of binary file");
  return static_cast<std::uint32_t>(b[0]) | static_cast<std::uint32_t>(b[1]) << 8 |
         static_cast<std::uint32_t>(b[2]) << 16 | static_cast<std::uint32_t>(b[3]) << 24;
}
inline std::uint64_t get_u64(std::istream& in) {
  const std::uint64_t lo = get_u32(in);
  return lo | static_cast<std::uint64_t>(get_u32(in)) << 32;
}
inline float get_f32(std::istream& in) { return std::bit_cast<float>(get_u32(in)); }
inline double get_f64(std::istream& in) { return std::bit_cast<double>(get_u64(in)); }

inline void put_string(std::ostream& out, const std::string& s) {
  put_u32(out, static_cast<std::uint32_t>(s.size()));
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
}
inline std::string get_string(std::istream& in) {
  const std::uint32_t n = get_u32(in);
  if (n > (1u << 20)) throw StageError("implausible string length in binary file");
  std::string s(n, '\0');
  if (!in.read(s.data(), n)) throw StageError("unexpected end of binary file");
  return s;
}

}  // namespace detail

inline void write_embeddings(const std::filesystem::path& path, const EmbeddingTable& table) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw StageError("cannot write " + path.string());
  out.write("SPEB", 4);
  detail::put_u32(out, 1);
  detail::put_u32(out, static_cast<std::uint32_t>(table.magnifications.size()));
  for (Magnification m : table.magnifications) detail::put_f32(out, static_cast<float>(value_of(m)));
  detail::put_u64(out, table.records.size());
  for (const auto& [ref, vectors] : table.records) {
    detail::put_string(out, ref.slide_id);
    detail::put_u64(out, static_cast<std::uint64_t>(ref.center_20x.x));
    detail::put_u64(out, static_cast<std::uint64_t>(ref.center_20x.y));
    for (const FeatureVector& v : vectors) {
      detail::put_u32(out, static_cast<std::uint32_t>(v.values.size()));
      for (float f : v.values) detail::put_f32(out, f);
    }
  }
  if (!out) throw StageError("error writing " + path.string());
}

inline EmbeddingTable import_embeddings(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw StageError("cannot read embeddings " + path.string());
  char magic[4];
  if (!in.read(magic, 4) || std::memcmp(magic, "SPEB", 4) != 0) throw StageError(path.string() + ": bad magic");
  const std::uint32_t version = detail::get_u32(in);
  if (version != 1) throw StageError(path.string() + ": unsupported version " + std::to_string(version));
  EmbeddingTable table;
  const std::uint32_t mag_count = detail::get_u32(in);
  for (std::uint32_t i = 0; i < mag_count; ++i) table.magnifications.push_back(magnification_from(detail::get_f32(in)));
  const std::uint64_t count = detail::get_u64(in);
  for (std::uint64_t r = 0; r < count; ++r) {
    PatchRef ref;
    ref.slide_id = detail::get_string(in);
    ref.center_20x.x = static_cast<std::int64_t>(detail::get_u64(in));
    ref.center_20x.y = static_cast<std::int64_t>(detail::get_u64(in));
    std::vector<FeatureVector> vectors;
    for (Magnification m : table.magnifications) {
      const std::uint32_t dim = detail::get_u32(in);
      if (dim != kFeatureDim)
        throw StageError("embedding record " + describe(ref) + " at " + magnification_label(m) + "x has length " +
                         std::to_string(dim) + ", expected 512");
      FeatureVector v{std::vector<float>(dim), m, ref};
      for (float& f : v.values) f = detail::get_f32(in);
      vectors.push_back(std::move(v));
    }
    table.records.emplace(std::move(ref), std::move(vectors));
  }
  return table;
}

/// Debug export: slide_id,center_x_20,center_y_20,magnification,f0..f511
inline void export_embeddings_csv(const std::filesystem::path& path, const EmbeddingTable& table) {
  std::ofstream out(path);
  out << "slide_id,center_x_20,center_y_20,magnification";
  for (std::size_t i = 0; i < kFeatureDim; ++i) out << ",f" << i;
  out << '\n' << std::setprecision(9);
  for (const auto& [ref, vectors] : table.records)
    for (const FeatureVector& v : vectors) {
      out << ref.slide_id << ',' << ref.center_20x.x << ',' << ref.center_20x.y << ','
          << magnification_label(v.magnification);
      for (float f : v.values) out << ',' << f;
      out << '\n';
    }
}

}  // namespace slideprog
