#include "geocaps/data.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <set>

#include "geocaps/error.hpp"

namespace geocaps {

namespace {

namespace fs = std::filesystem;

float sig(float t) { return 1.0f / (1.0f + std::exp(-t)); }

// Per-blob color anchors; the latent mixes between the two tables.
constexpr float kPaletteA[4][3] = {{0.90f, 0.20f, 0.20f},
                                   {0.20f, 0.85f, 0.30f},
                                   {0.95f, 0.80f, 0.20f},
                                   {0.30f, 0.40f, 0.95f}};
constexpr float kPaletteB[4][3] = {{0.60f, 0.10f, 0.70f},
                                   {0.10f, 0.70f, 0.80f},
                                   {0.80f, 0.40f, 0.10f},
                                   {0.75f, 0.75f, 0.75f}};

struct BlobParams {
  float cx, cy, radius, mix;
  int palette;
};

// Both views place the same latent-determined blobs (shared x, related y,
// shared colors) but render them in distinct styles: filled discs in a band
// over a sky gradient for the ground view, rings over a flat textured canvas
// for the overhead view.
void render_ground(const std::vector<float>& z, int s, Rng& noise, double noise_std,
                   float* out) {
  const int blobs = std::max(1, static_cast<int>(z.size()) / 4);
  const float fs = static_cast<float>(s - 1);
  for (int y = 0; y < s; ++y) {
    const float t = static_cast<float>(y) / fs;
    const float base[3] = {0.55f - 0.25f * t, 0.65f - 0.35f * t, 0.90f - 0.70f * t};
    for (int x = 0; x < s; ++x) {
      for (int c = 0; c < 3; ++c) out[(c * s + y) * s + x] = base[c];
    }
  }
  for (int b = 0; b < blobs; ++b) {
    const auto zat = [&](int k) { return z[static_cast<std::size_t>((4 * b + k) % static_cast<int>(z.size()))]; };
    BlobParams p;
    p.cx = sig(zat(0)) * fs;
    p.cy = (0.30f + 0.60f * sig(zat(1))) * fs;
    p.radius = (0.08f + 0.30f * sig(zat(2))) * fs;
    p.mix = sig(zat(3));
    p.palette = b % 4;
    const float inv = 1.0f / (2.0f * p.radius * p.radius);
    for (int y = 0; y < s; ++y) {
      for (int x = 0; x < s; ++x) {
        const float dx = static_cast<float>(x) - p.cx;
        const float dy = static_cast<float>(y) - p.cy;
        const float w = 0.9f * std::exp(-(dx * dx + dy * dy) * inv);
        if (w < 1e-4f) continue;
        for (int c = 0; c < 3; ++c) {
          const float col = (1.0f - p.mix) * kPaletteA[p.palette][c] +
                            p.mix * kPaletteB[p.palette][c];
          out[(c * s + y) * s + x] += w * col;
        }
      }
    }
  }
  for (int i = 0; i < 3 * s * s; ++i) {
    float v = out[i] + static_cast<float>(noise.normal(0.0, noise_std));
    out[i] = std::clamp(v, 0.0f, 1.0f);
  }
}

void render_satellite(const std::vector<float>& z, int s, Rng& noise, double noise_std,
                      float* out) {
  const int blobs = std::max(1, static_cast<int>(z.size()) / 4);
  const float fs = static_cast<float>(s - 1);
  for (int y = 0; y < s; ++y) {
    for (int x = 0; x < s; ++x) {
      const float checker = ((x / 8 + y / 8) % 2 == 0) ? 0.04f : 0.0f;
      out[(0 * s + y) * s + x] = 0.30f + checker;
      out[(1 * s + y) * s + x] = 0.42f + checker;
      out[(2 * s + y) * s + x] = 0.25f + checker;
    }
  }
  for (int b = 0; b < blobs; ++b) {
    const auto zat = [&](int k) { return z[static_cast<std::size_t>((4 * b + k) % static_cast<int>(z.size()))]; };
    BlobParams p;
    // same x as the ground view, full-range y, ring style
    p.cx = sig(zat(0)) * fs;
    p.cy = sig(zat(1)) * fs;
    p.radius = (0.06f + 0.22f * sig(zat(2))) * fs;
    p.mix = sig(zat(3));
    p.palette = b % 4;
    const float ring_width = std::max(0.35f * p.radius, 0.75f);
    const float inv = 1.0f / (2.0f * ring_width * ring_width);
    for (int y = 0; y < s; ++y) {
      for (int x = 0; x < s; ++x) {
        const float dx = static_cast<float>(x) - p.cx;
        const float dy = static_cast<float>(y) - p.cy;
        const float d = std::sqrt(dx * dx + dy * dy) - p.radius;
        const float w = 0.9f * std::exp(-d * d * inv);
        if (w < 1e-4f) continue;
        for (int c = 0; c < 3; ++c) {
          const float col = (1.0f - p.mix) * kPaletteA[p.palette][c] +
                            p.mix * kPaletteB[p.palette][c];
          out[(c * s + y) * s + x] += w * col;
        }
      }
    }
  }
  for (int i = 0; i < 3 * s * s; ++i) {
    float v = out[i] + static_cast<float>(noise.normal(0.0, noise_std));
    out[i] = std::clamp(v, 0.0f, 1.0f);
  }
}

Tensor<float> image_to_tensor(const ImageU8& img) {
  Tensor<float> t = Tensor<float>::zeros({3, img.height, img.width});
  float* p = t.raw();
  const Index plane = static_cast<Index>(img.height) * img.width;
  for (Index i = 0; i < plane; ++i) {
    p[0 * plane + i] = static_cast<float>(img.rgb[static_cast<std::size_t>(i) * 3 + 0]) / 255.0f;
    p[1 * plane + i] = static_cast<float>(img.rgb[static_cast<std::size_t>(i) * 3 + 1]) / 255.0f;
    p[2 * plane + i] = static_cast<float>(img.rgb[static_cast<std::size_t>(i) * 3 + 2]) / 255.0f;
  }
  return t;
}

std::vector<std::string> png_names(const fs::path& dir) {
  if (!fs::is_directory(dir)) {
    throw DataError("missing directory: " + dir.string());
  }
  std::vector<std::string> names;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (entry.is_regular_file() && entry.path().extension() == ".png") {
      names.push_back(entry.path().filename().string());
    }
  }
  std::sort(names.begin(), names.end());
  return names;
}

}  // namespace

PairDataset generate_synthetic_pairs(const SyntheticSpec& spec) {
  if (spec.n_locations < 2) {
    throw ConfigError("synthetic dataset needs at least 2 locations");
  }
  if (spec.image_size < 16) {
    throw ConfigError("image_size " + std::to_string(spec.image_size) +
                      " too small for the blob renderer (needs >= 16)");
  }
  if (spec.latent_dim < 1) throw ConfigError("latent_dim must be >= 1");

  // Latents and per-location noise seeds come off the master stream in id
  // order; rendering is then free to run in parallel.
  Rng master(spec.seed);
  std::vector<std::vector<float>> latents(static_cast<std::size_t>(spec.n_locations));
  std::vector<std::uint64_t> noise_seeds(static_cast<std::size_t>(spec.n_locations));
  for (int i = 0; i < spec.n_locations; ++i) {
    auto& z = latents[static_cast<std::size_t>(i)];
    z.resize(static_cast<std::size_t>(spec.latent_dim));
    for (auto& v : z) v = static_cast<float>(master.normal());
    noise_seeds[static_cast<std::size_t>(i)] = master.next_u64();
  }

  PairDataset ds;
  ds.image_size = spec.image_size;
  ds.pairs.resize(static_cast<std::size_t>(spec.n_locations));
  parallel_for(spec.n_locations, [&](std::int64_t i) {
    const auto& z = latents[static_cast<std::size_t>(i)];
    Rng noise(noise_seeds[static_cast<std::size_t>(i)]);
    LocationPair& pair = ds.pairs[static_cast<std::size_t>(i)];
    pair.location_id = static_cast<int>(i);
    pair.ground = Tensor<float>::zeros({3, spec.image_size, spec.image_size});
    pair.satellite = Tensor<float>::zeros({3, spec.image_size, spec.image_size});
    render_ground(z, spec.image_size, noise, spec.noise_std, pair.ground.raw());
    render_satellite(z, spec.image_size, noise, spec.noise_std, pair.satellite.raw());
  });
  ds.stats = compute_channel_stats(ds);
  return ds;
}

PairDataset load_image_directory(const std::string& root) {
  const fs::path base(root);
  const auto ground_names = png_names(base / "ground");
  const auto satellite_names = png_names(base / "satellite");

  const std::set<std::string> gset(ground_names.begin(), ground_names.end());
  const std::set<std::string> sset(satellite_names.begin(), satellite_names.end());
  for (const auto& n : ground_names) {
    if (!sset.count(n)) {
      throw DataError("unmatched file: ground/" + n + " has no satellite counterpart");
    }
  }
  for (const auto& n : satellite_names) {
    if (!gset.count(n)) {
      throw DataError("unmatched file: satellite/" + n + " has no ground counterpart");
    }
  }
  if (ground_names.empty()) {
    throw DataError("no pairs found in " + root);
  }

  PairDataset ds;
  int id = 0;
  for (const auto& n : ground_names) {
    const ImageU8 g = read_png((base / "ground" / n).string());
    const ImageU8 s = read_png((base / "satellite" / n).string());
    if (g.width != g.height || s.width != s.height || g.width != s.width) {
      throw DataError("images must be square and equally sized: " + n);
    }
    if (ds.image_size == 0) {
      ds.image_size = g.width;
    } else if (g.width != ds.image_size) {
      throw DataError("image size mismatch at " + n + ": expected " +
                      std::to_string(ds.image_size) + ", got " + std::to_string(g.width));
    }
    ds.pairs.push_back({id++, image_to_tensor(g), image_to_tensor(s)});
  }
  ds.stats = compute_channel_stats(ds);
  return ds;
}

ChannelStats compute_channel_stats(const PairDataset& dataset) {
  ChannelStats stats;
  const Index plane = static_cast<Index>(dataset.image_size) * dataset.image_size;
  for (int c = 0; c < 3; ++c) {
    double sum = 0.0, sq = 0.0;
    std::int64_t count = 0;
    for (const auto& pair : dataset.pairs) {
      for (const Tensor<float>* img : {&pair.ground, &pair.satellite}) {
        const float* p = img->data() + c * plane;
        for (Index i = 0; i < plane; ++i) {
          sum += p[i];
          sq += static_cast<double>(p[i]) * p[i];
          ++count;
        }
      }
    }
    const double mean = sum / static_cast<double>(count);
    const double var = std::max(sq / static_cast<double>(count) - mean * mean, 0.0);
    stats.mean[static_cast<std::size_t>(c)] = static_cast<float>(mean);
    stats.std[static_cast<std::size_t>(c)] =
        static_cast<float>(std::max(std::sqrt(var), 1e-6));
  }
  return stats;
}

std::pair<PairDataset, PairDataset> split_by_location(PairDataset dataset,
                                                      double train_fraction) {
  const int n = static_cast<int>(dataset.pairs.size());
  const int n_train = static_cast<int>(std::floor(n * train_fraction));
  if (n_train < 2 || n_train >= n) {
    throw DataError("split of " + std::to_string(n) + " pairs at fraction " +
                    std::to_string(train_fraction) + " leaves a degenerate side");
  }
  PairDataset train, test;
  train.image_size = test.image_size = dataset.image_size;
  train.pairs.assign(dataset.pairs.begin(), dataset.pairs.begin() + n_train);
  test.pairs.assign(dataset.pairs.begin() + n_train, dataset.pairs.end());
  train.stats = compute_channel_stats(train);
  test.stats = train.stats;  // held-out data is standardized with train statistics
  return {std::move(train), std::move(test)};
}

}  // namespace geocaps
