// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "wid/image_io.hpp"
#include "wid/tensor.hpp"

namespace wid {

// ---------------------------------------------------------------------------
// Manifest records. One word image per record; closed-set splits.

enum class Split { train, test };

struct SampleRecord {
  std::string image_path;  // as written in the manifest (may be relative)
  int writer_id = 0;
  std::string page_id;
  Split split = Split::train;
};

namespace detail {

inline std::string trim(const std::string& s) {
  std::size_t b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  std::size_t e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

inline std::string dirname_of(const std::string& path) {
  const std::size_t slash = path.find_last_of('/');
  return slash == std::string::npos ? std::string(".") : path.substr(0, slash);
}

}  // namespace detail

// Resolves a manifest-relative image path against the manifest's directory,
// so a corpus directory can be moved wholesale.
inline std::string resolve_image_path(const std::string& manifest_path,
                                      const std::string& image_path) {
  if (!image_path.empty() && image_path[0] == '/') return image_path;
  return detail::dirname_of(manifest_path) + "/" + image_path;
}

// Format: `image_path, writer_id, page_id, split` per line, `#` comments,
// whitespace trimmed per field, duplicate image paths rejected. Validates the
// closed-set property: every writer seen in test must also appear in train.
inline std::vector<SampleRecord> load_manifest(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot open manifest: " + path);

  std::vector<SampleRecord> records;
  std::set<std::string> seen_paths;
  std::set<int> train_writers, test_writers;

  std::string line;
  int lineno = 0;
  while (std::getline(f, line)) {
    ++lineno;
    auto fail = [&](const std::string& what) -> ParseError {
      return ParseError(path + ":" + std::to_string(lineno) + ": " + what);
    };
    const std::string stripped = detail::trim(line);
    if (stripped.empty() || stripped[0] == '#') continue;

    std::vector<std::string> fields;
    std::size_t start = 0;
    while (true) {
      const std::size_t comma = stripped.find(',', start);
      fields.push_back(detail::trim(stripped.substr(
          start, comma == std::string::npos ? std::string::npos : comma - start)));
      if (comma == std::string::npos) break;
      start = comma + 1;
    }
    if (fields.size() != 4)
      throw fail("expected 4 fields `image_path, writer_id, page_id, split`, got " +
                 std::to_string(fields.size()));

    SampleRecord rec;
    rec.image_path = fields[0];
    if (rec.image_path.empty()) throw fail("empty image_path");
    if (!seen_paths.insert(rec.image_path).second)
      throw fail("duplicate image_path '" + rec.image_path + "'");

    try {
      std::size_t used = 0;
      rec.writer_id = std::stoi(fields[1], &used);
      if (used != fields[1].size()) throw std::invalid_argument("trailing junk");
    } catch (const std::exception&) {
      throw fail("writer_id is not an integer: '" + fields[1] + "'");
    }
    if (rec.writer_id < 0) throw fail("writer_id must be non-negative");

    rec.page_id = fields[2];
    if (rec.page_id.empty()) throw fail("empty page_id");

    if (fields[3] == "train")
      rec.split = Split::train;
    else if (fields[3] == "test")
      rec.split = Split::test;
    else
      throw fail("split must be train|test, got '" + fields[3] + "'");

    (rec.split == Split::train ? train_writers : test_writers).insert(rec.writer_id);
    records.push_back(std::move(rec));
  }

  for (int w : test_writers)
    if (!train_writers.count(w))
      throw ValueError(path + ": writer " + std::to_string(w) +
                       " appears only in the test split (closed-set identification "
                       "requires every test writer in train)");
  return records;
}

// ---------------------------------------------------------------------------
// Preprocessing: aspect-preserving resize into a 64x128 canvas, white padding.

inline constexpr std::int64_t kWordH = 64;
inline constexpr std::int64_t kWordW = 128;

// Bilinear, half-pixel centers, edge-clamped; scale s = min(64/H, 128/W) on
// both axes, content block centered, remainder exactly 1.0 (white).
template <typename T>
Tensor<T> preprocess(const GrayImage& img) {
  if (img.height <= 0 || img.width <= 0 ||
      img.pixels.size() != static_cast<std::size_t>(img.height * img.width))
    throw ValueError("preprocess: empty image");

  const double s = std::min(static_cast<double>(kWordH) / static_cast<double>(img.height),
                            static_cast<double>(kWordW) / static_cast<double>(img.width));
  const std::int64_t out_h =
      std::min<std::int64_t>(kWordH, std::llround(s * static_cast<double>(img.height)));
  const std::int64_t out_w =
      std::min<std::int64_t>(kWordW, std::llround(s * static_cast<double>(img.width)));
  const std::int64_t y0 = (kWordH - out_h) / 2;
  const std::int64_t x0 = (kWordW - out_w) / 2;

  Tensor<T> word = Tensor<T>::filled({1, kWordH, kWordW}, T(1));
  T* dst = word.data();
  const double sy = static_cast<double>(img.height) / static_cast<double>(out_h);
  const double sx = static_cast<double>(img.width) / static_cast<double>(out_w);
  for (std::int64_t y = 0; y < out_h; ++y) {
    double fy = (static_cast<double>(y) + 0.5) * sy - 0.5;
    fy = std::min(std::max(fy, 0.0), static_cast<double>(img.height - 1));
    const std::int64_t ylo = std::min<std::int64_t>(static_cast<std::int64_t>(fy),
                                                    img.height - 1);
    const std::int64_t yhi = std::min<std::int64_t>(ylo + 1, img.height - 1);
    const double wy = fy - static_cast<double>(ylo);
    for (std::int64_t x = 0; x < out_w; ++x) {
      double fx = (static_cast<double>(x) + 0.5) * sx - 0.5;
      fx = std::min(std::max(fx, 0.0), static_cast<double>(img.width - 1));
      const std::int64_t xlo = std::min<std::int64_t>(static_cast<std::int64_t>(fx),
                                                      img.width - 1);
      const std::int64_t xhi = std::min<std::int64_t>(xlo + 1, img.width - 1);
      const double wx = fx - static_cast<double>(xlo);
      const double v00 = img.at(ylo, xlo), v01 = img.at(ylo, xhi);
      const double v10 = img.at(yhi, xlo), v11 = img.at(yhi, xhi);
      const double v = (1.0 - wy) * ((1.0 - wx) * v00 + wx * v01) +
                       wy * ((1.0 - wx) * v10 + wx * v11);
      dst[(y0 + y) * kWordW + (x0 + x)] = static_cast<T>(v / 255.0);
    }
  }
  return word;
}

// Five square 64x64 windows at horizontal offsets {0,16,32,48,64}; each an
// exact copy of the source columns (data-side counterpart of the network's
// differentiable patch views).
template <typename T>
std::array<Tensor<T>, 5> extract_patches(const Tensor<T>& word) {
  if (word.rank() != 3 || word.dim(0) != 1 || word.dim(1) != kWordH || word.dim(2) != kWordW)
    throw DimensionError("extract_patches expects [1,64,128], got " + shape_str(word.shape()));
  std::array<Tensor<T>, 5> out;
  const T* src = word.data();
  for (std::int64_t p = 0; p < 5; ++p) {
    const std::int64_t off = p * 16;
    out[static_cast<std::size_t>(p)] = Tensor<T>::zeros({1, kWordH, kWordH});
    T* dst = out[static_cast<std::size_t>(p)].data();
    for (std::int64_t y = 0; y < kWordH; ++y)
      std::copy(src + y * kWordW + off, src + y * kWordW + off + kWordH, dst + y * kWordH);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Batching. Order is a pure function of (seed, epoch); the last short batch
// is kept so every record is visited exactly once per epoch.

inline std::vector<std::vector<std::size_t>> iterate_batches(std::size_t num_records,
                                                             std::int64_t batch_size,
                                                             std::uint64_t seed,
                                                             std::uint64_t epoch = 0) {
  if (batch_size < 1) throw ValueError("batch_size must be >= 1");
  std::vector<std::size_t> order(num_records);
  for (std::size_t i = 0; i < num_records; ++i) order[i] = i;
  Rng rng(mix64(seed, 0xBA7C4ULL, epoch));
  rng.shuffle(order);

  std::vector<std::vector<std::size_t>> batches;
  for (std::size_t start = 0; start < num_records;
       start += static_cast<std::size_t>(batch_size)) {
    const std::size_t end =
        std::min(num_records, start + static_cast<std::size_t>(batch_size));
    batches.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(start),
                         order.begin() + static_cast<std::ptrdiff_t>(end));
  }
  return batches;
}

// ---------------------------------------------------------------------------
// In-memory dataset: all word images preprocessed up front (corpora here are
// desk-scale), writer ids mapped to dense class indices by sorted order.

template <typename T>
struct WordDataset {
  std::vector<SampleRecord> records;
  std::vector<Tensor<T>> images;       // aligned with records, each [1,64,128]
  std::vector<std::int64_t> labels;    // aligned with records, class indices
  std::vector<int> writer_ids;         // class index -> writer id (sorted)
  std::vector<std::size_t> train_indices, test_indices;

  std::int64_t num_classes() const { return static_cast<std::int64_t>(writer_ids.size()); }

  int writer_of_class(std::int64_t cls) const {
    return writer_ids[static_cast<std::size_t>(cls)];
  }
};

template <typename T>
WordDataset<T> load_dataset(const std::string& manifest_path) {
  WordDataset<T> ds;
  ds.records = load_manifest(manifest_path);

  std::set<int> ids;
  for (const auto& r : ds.records) ids.insert(r.writer_id);
  ds.writer_ids.assign(ids.begin(), ids.end());
  std::map<int, std::int64_t> class_of;
  for (std::size_t i = 0; i < ds.writer_ids.size(); ++i)
    class_of[ds.writer_ids[i]] = static_cast<std::int64_t>(i);

  ds.images.reserve(ds.records.size());
  ds.labels.reserve(ds.records.size());
  for (std::size_t i = 0; i < ds.records.size(); ++i) {
    const auto& r = ds.records[i];
    const GrayImage img = read_png_gray8(resolve_image_path(manifest_path, r.image_path));
    ds.images.push_back(preprocess<T>(img));
    ds.labels.push_back(class_of[r.writer_id]);
    (r.split == Split::train ? ds.train_indices : ds.test_indices).push_back(i);
  }
  return ds;
}

// Stacks word tensors [1,64,128] into a batch [N,1,64,128].
template <typename T>
Tensor<T> stack_words(const std::vector<Tensor<T>>& images,
                      const std::vector<std::size_t>& indices) {
  if (indices.empty()) throw ValueError("stack_words: empty batch");
  const std::int64_t N = static_cast<std::int64_t>(indices.size());
  const std::int64_t hw = kWordH * kWordW;
  Tensor<T> batch = Tensor<T>::zeros({N, 1, kWordH, kWordW});
  T* dst = batch.data();
  for (std::int64_t n = 0; n < N; ++n) {
    const Tensor<T>& img = images[indices[static_cast<std::size_t>(n)]];
    if (img.numel() != hw)
      throw DimensionError("stack_words: image " + std::to_string(n) + " has shape " +
                           shape_str(img.shape()));
    std::copy(img.data(), img.data() + hw, dst + n * hw);
  }
  return batch;
}

}  // namespace wid
