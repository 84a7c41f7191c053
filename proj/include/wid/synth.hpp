// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <string>
#include <vector>

#include "wid/image_io.hpp"

namespace wid {

// ---------------------------------------------------------------------------
// Synthetic handwriting-like corpus. Each "writer" is a parameterized stroke
// style; words are sequences of pseudo-glyphs shared across writers, so the
// identity signal lives in HOW strokes are drawn (slant, thickness, curvature,
// ink, spacing, baseline wobble), not in WHAT is written.

struct WriterStyle {
  double slant;       // x-shear per pixel above the baseline
  double thickness;   // stroke radius, px
  double curvature;   // control-point perturbation magnitude, px
  double ink;         // stroke gray level (0 = black)
  double spacing;     // gap between glyph boxes, px
  double wobble_amp;  // baseline sinusoid amplitude, px
  double wobble_freq;
};

namespace detail {

inline double frac(double v) { return v - std::floor(v); }

// Low-discrepancy placement keeps styles spread apart for any writer count;
// the seeded jitter keeps distinct corpora distinct.
inline double style_param(int writer, int dim, double lo, double hi, Rng& jitter) {
  static const double kPhi[7] = {0.6180339887498949, 0.7548776662466927, 0.8191725133961645,
                                 0.5698402909980532, 0.6710436067037893, 0.7428373861222368,
                                 0.8812714616335696};
  double u = frac(kPhi[dim] * static_cast<double>(writer + 1)) +
             0.06 * (jitter.uniform() - 0.5);
  u = std::min(std::max(u, 0.0), 1.0);
  return lo + u * (hi - lo);
}

inline WriterStyle writer_style(std::uint64_t seed, int writer) {
  Rng jitter(mix64(seed, 0x57E1EULL, static_cast<std::uint64_t>(writer)));
  WriterStyle s;
  s.slant = style_param(writer, 0, -0.45, 0.45, jitter);
  s.thickness = style_param(writer, 1, 0.7, 2.8, jitter);
  s.curvature = style_param(writer, 2, 0.0, 2.5, jitter);
  s.ink = style_param(writer, 3, 0.0, 90.0, jitter);
  s.spacing = style_param(writer, 4, 1.0, 6.0, jitter);
  s.wobble_amp = style_param(writer, 5, 0.0, 3.0, jitter);
  s.wobble_freq = style_param(writer, 6, 0.05, 0.25, jitter);
  return s;
}

struct Pt {
  double x, y;
};

// A glyph is 2-4 quadratic Beziers with coordinates in the unit box.
struct Glyph {
  std::vector<std::array<Pt, 3>> strokes;
};

inline constexpr int kAlphabetSize = 24;

inline Glyph make_glyph(std::uint64_t seed, int id) {
  Rng rng(mix64(seed, 0x617F4ULL, static_cast<std::uint64_t>(id)));
  Glyph g;
  const int n = 2 + static_cast<int>(rng.below(3));
  for (int k = 0; k < n; ++k) {
    std::array<Pt, 3> b;
    for (auto& p : b) p = {rng.uniform(), rng.uniform()};
    // Ensure a visible extent: push endpoints toward opposite corners of the box.
    b[0].x *= 0.5;
    b[2].x = 1.0 - 0.5 * b[2].x;
    g.strokes.push_back(b);
  }
  return g;
}

// Stamps an antialiased disk, darkening only (ink over page).
inline void stamp(GrayImage& img, double cx, double cy, double r, double ink) {
  const std::int64_t x0 = std::max<std::int64_t>(0, static_cast<std::int64_t>(cx - r - 1));
  const std::int64_t x1 =
      std::min<std::int64_t>(img.width - 1, static_cast<std::int64_t>(cx + r + 1));
  const std::int64_t y0 = std::max<std::int64_t>(0, static_cast<std::int64_t>(cy - r - 1));
  const std::int64_t y1 =
      std::min<std::int64_t>(img.height - 1, static_cast<std::int64_t>(cy + r + 1));
  for (std::int64_t y = y0; y <= y1; ++y) {
    for (std::int64_t x = x0; x <= x1; ++x) {
      const double d = std::hypot(static_cast<double>(x) - cx, static_cast<double>(y) - cy);
      double v;
      if (d <= r - 0.5)
        v = ink;
      else if (d >= r + 0.5)
        continue;
      else  // soft 1px edge
        v = ink + (255.0 - ink) * (d - (r - 0.5));
      const auto q = static_cast<std::uint8_t>(std::min(std::max(v, 0.0), 255.0));
      if (q < img.at(y, x)) img.at(y, x) = q;
    }
  }
}

}  // namespace detail

// Renders one pseudo-word for (writer, page, word). Canvas size itself varies
// per word so the preprocessing path (resize + padding) is genuinely exercised.
inline GrayImage render_word(std::uint64_t seed, int writer, int page, int word) {
  const WriterStyle st = detail::writer_style(seed, writer);
  Rng rng(mix64(mix64(seed, 0x50A6EULL, static_cast<std::uint64_t>(writer)),
                static_cast<std::uint64_t>(page), static_cast<std::uint64_t>(word)));

  GrayImage img;
  img.height = 48 + static_cast<std::int64_t>(rng.below(17));   // 48..64
  img.width = 100 + static_cast<std::int64_t>(rng.below(29));   // 100..128
  img.pixels.assign(static_cast<std::size_t>(img.height * img.width), 255);

  const int n_glyphs = 3 + static_cast<int>(rng.below(5));  // 3..7
  const double margin = 6.0;
  const double usable =
      static_cast<double>(img.width) - 2.0 * margin - st.spacing * (n_glyphs - 1);
  const double gw = std::max(4.0, usable / n_glyphs);
  const double gh = 0.55 * static_cast<double>(img.height);
  const double baseline = 0.5 * static_cast<double>(img.height) + gh / 2.0;
  const double phase = rng.uniform(0.0, 6.283185307179586);

  double gx = margin;
  for (int gi = 0; gi < n_glyphs; ++gi) {
    const detail::Glyph glyph =
        detail::make_glyph(seed, static_cast<int>(rng.below(detail::kAlphabetSize)));
    const double wob = st.wobble_amp * std::sin(st.wobble_freq * gx + phase);
    for (const auto& stroke : glyph.strokes) {
      // Map unit-box control points into the glyph box, then perturb by the
      // writer's curvature magnitude (midpoint most, endpoints least).
      detail::Pt p[3];
      for (int k = 0; k < 3; ++k) {
        p[k].x = gx + stroke[static_cast<std::size_t>(k)].x * gw;
        p[k].y = baseline - stroke[static_cast<std::size_t>(k)].y * gh + wob;
        const double mag = (k == 1 ? 1.0 : 0.4) * st.curvature;
        p[k].x += mag * rng.normal();
        p[k].y += mag * rng.normal();
      }
      const int steps = 72;
      for (int i = 0; i <= steps; ++i) {
        const double t = static_cast<double>(i) / steps;
        const double u = 1.0 - t;
        double x = u * u * p[0].x + 2 * u * t * p[1].x + t * t * p[2].x;
        const double y = u * u * p[0].y + 2 * u * t * p[1].y + t * t * p[2].y;
        x += st.slant * (baseline - y);  // shear about the baseline
        detail::stamp(img, x, y, st.thickness, st.ink);
      }
    }
    gx += gw + st.spacing;
  }
  return img;
}

// Writes images/ + manifest.csv under out_dir and returns the manifest path.
// Pages 0..ceil(P/2)-1 are train, the rest test; regeneration with the same
// arguments is byte-identical.
inline std::string generate_synthetic_corpus(const std::string& out_dir, int num_writers,
                                             int words_per_page, int pages_per_writer,
                                             std::uint64_t seed) {
  if (num_writers < 2) throw ValueError("generate_synthetic_corpus: need >= 2 writers");
  if (words_per_page < 1 || pages_per_writer < 1)
    throw ValueError("generate_synthetic_corpus: need >= 1 word per page and >= 1 page");

  namespace fs = std::filesystem;
  fs::create_directories(fs::path(out_dir) / "images");

  const int train_pages = (pages_per_writer + 1) / 2;
  const std::string manifest_path = (fs::path(out_dir) / "manifest.csv").string();
  std::ofstream manifest(manifest_path, std::ios::trunc);
  if (!manifest) throw IoError("cannot open for writing: " + manifest_path);
  manifest << "# synthetic corpus: writers=" << num_writers << " words_per_page="
           << words_per_page << " pages_per_writer=" << pages_per_writer << " seed=" << seed
           << "\n";

  char name[64];
  for (int w = 0; w < num_writers; ++w) {
    for (int p = 0; p < pages_per_writer; ++p) {
      for (int i = 0; i < words_per_page; ++i) {
        std::snprintf(name, sizeof(name), "images/w%03d_p%02d_i%03d.png", w, p, i);
        write_png_gray8((fs::path(out_dir) / name).string(), render_word(seed, w, p, i));
        manifest << name << ", " << w << ", w" << w << "_p" << p << ", "
                 << (p < train_pages ? "train" : "test") << "\n";
      }
    }
  }
  manifest.flush();
  if (!manifest) throw IoError("short write: " + manifest_path);
  return manifest_path;
}

}  // namespace wid
