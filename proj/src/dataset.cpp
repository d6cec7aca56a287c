// Copyright 2026 The mobiletl Authors
// SPDX-License-Identifier: Apache-2.0

#include <algorithm>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <random>

#include "mobiletl/trainer.hpp"

namespace mobiletl {

namespace {

constexpr char kMagic[4] = {'T', 'L', 'D', 'S'};
constexpr std::uint32_t kVersion = 1;

template <class T>
void put(std::string& out, T v) {
  unsigned char b[sizeof(T)];
  std::memcpy(b, &v, sizeof(T));  // host is little endian
  out.append(reinterpret_cast<const char*>(b), sizeof(T));
}

template <class T>
T take(const std::string& in, std::size_t& pos) {
  if (pos + sizeof(T) > in.size()) throw FormatError("dataset truncated");
  T v;
  std::memcpy(&v, in.data() + pos, sizeof(T));
  pos += sizeof(T);
  return v;
}

}  // namespace

Dataset load_tlds(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open dataset '" + path + "'");
  const std::string in((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  if (in.size() < 4 || std::memcmp(in.data(), kMagic, 4) != 0) {
    throw FormatError("'" + path + "' is not a TLDS dataset");
  }
  std::size_t pos = 4;
  if (const auto v = take<std::uint32_t>(in, pos); v != kVersion) {
    throw FormatError("unsupported TLDS version " + std::to_string(v));
  }
  Dataset ds;
  ds.count = take<std::uint32_t>(in, pos);
  ds.channels = take<std::uint32_t>(in, pos);
  ds.height = take<std::uint32_t>(in, pos);
  ds.width = take<std::uint32_t>(in, pos);
  ds.num_classes = take<std::uint32_t>(in, pos);
  ds.source = path;
  if (ds.channels < 1 || ds.height < 1 || ds.width < 1 || ds.num_classes < 1) {
    throw FormatError("TLDS header has a zero dimension");
  }
  const auto per = static_cast<std::size_t>(ds.sample_size());
  const std::size_t need = static_cast<std::size_t>(ds.count) * (2 + 4 * per);
  if (in.size() - pos < need) throw FormatError("dataset truncated");
  if (in.size() - pos > need) throw FormatError("trailing bytes after dataset samples");
  ds.labels.resize(static_cast<std::size_t>(ds.count));
  ds.pixels.resize(static_cast<std::size_t>(ds.count) * per);
  for (std::int64_t i = 0; i < ds.count; ++i) {
    const auto label = take<std::uint16_t>(in, pos);
    if (label >= ds.num_classes) {
      throw FormatError("sample " + std::to_string(i) + " has label " + std::to_string(label) +
                        " outside [0, " + std::to_string(ds.num_classes) + ")");
    }
    ds.labels[static_cast<std::size_t>(i)] = label;
    std::memcpy(ds.pixels.data() + static_cast<std::size_t>(i) * per, in.data() + pos, 4 * per);
    pos += 4 * per;
  }
  return ds;
}

void save_tlds(const Dataset& ds, const std::string& path) {
  std::string out(kMagic, 4);
  put<std::uint32_t>(out, kVersion);
  for (auto v : {ds.count, ds.channels, ds.height, ds.width, ds.num_classes}) {
    put<std::uint32_t>(out, static_cast<std::uint32_t>(v));
  }
  const auto per = static_cast<std::size_t>(ds.sample_size());
  for (std::int64_t i = 0; i < ds.count; ++i) {
    put<std::uint16_t>(out, ds.labels[static_cast<std::size_t>(i)]);
    out.append(reinterpret_cast<const char*>(ds.pixels.data() + static_cast<std::size_t>(i) * per),
               4 * per);
  }
  const std::string tmp = path + ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("cannot write dataset '" + path + "'");
    f.write(out.data(), static_cast<std::streamsize>(out.size()));
    if (!f) throw IoError("short write to '" + tmp + "'");
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw IoError("cannot move dataset into place: " + ec.message());
}

Dataset synthetic_blobs(std::int64_t n, std::int64_t classes, std::uint64_t seed,
                        std::int64_t channels, std::int64_t height, std::int64_t width) {
  if (n < 0) throw ValueError("sample count must be >= 0");
  if (classes < 1 || classes > 65535) throw ValueError("class count must be in [1, 65535]");
  if (channels < 1 || height < 1 || width < 1) throw ValueError("image dims must be >= 1");
  Dataset ds{n, channels, height, width, classes, {}, {}, {}};
  ds.source = "synthetic:" + std::to_string(n) + "," + std::to_string(classes) + "," +
              std::to_string(seed);
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> noise(0.0, 0.5);

  // Each class owns a bump centre and a per-channel amplitude sign pattern.
  struct Blob {
    double cy, cx;
    std::vector<double> amp;
  };
  std::vector<Blob> blobs;
  for (std::int64_t c = 0; c < classes; ++c) {
    Blob b;
    b.cy = (0.2 + 0.6 * unit(rng)) * static_cast<double>(height - 1);
    b.cx = (0.2 + 0.6 * unit(rng)) * static_cast<double>(width - 1);
    for (std::int64_t ch = 0; ch < channels; ++ch) b.amp.push_back(unit(rng) < 0.5 ? -2.0 : 2.0);
    blobs.push_back(std::move(b));
  }
  const double sigma = 0.18 * static_cast<double>(std::max(height, width));
  const auto per = static_cast<std::size_t>(ds.sample_size());
  ds.labels.resize(static_cast<std::size_t>(n));
  ds.pixels.resize(static_cast<std::size_t>(n) * per);
  for (std::int64_t i = 0; i < n; ++i) {
    const auto label = static_cast<std::uint16_t>(i % classes);
    ds.labels[static_cast<std::size_t>(i)] = label;
    const Blob& b = blobs[label];
    float* px = ds.pixels.data() + static_cast<std::size_t>(i) * per;
    for (std::int64_t ch = 0; ch < channels; ++ch) {
      for (std::int64_t y = 0; y < height; ++y) {
        for (std::int64_t x = 0; x < width; ++x) {
          const double dy = static_cast<double>(y) - b.cy;
          const double dx = static_cast<double>(x) - b.cx;
          const double bump = b.amp[static_cast<std::size_t>(ch)] *
                              std::exp(-(dy * dy + dx * dx) / (2.0 * sigma * sigma));
          *px++ = static_cast<float>(bump + noise(rng));
        }
      }
    }
  }
  return ds;
}

Split split_dataset(const Dataset& ds, std::uint64_t seed) {
  std::vector<std::int64_t> idx(static_cast<std::size_t>(ds.count));
  std::iota(idx.begin(), idx.end(), 0);
  std::mt19937_64 rng(seed ^ 0x5157u);
  std::shuffle(idx.begin(), idx.end(), rng);
  const auto n_train = static_cast<std::size_t>(std::llround(0.8 * static_cast<double>(ds.count)));
  Split s;
  s.train.assign(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(n_train));
  s.eval.assign(idx.begin() + static_cast<std::ptrdiff_t>(n_train), idx.end());
  return s;
}

Batch make_batch(const Dataset& ds, const std::vector<std::int64_t>& indices, DType dtype) {
  if (indices.empty()) throw ValueError("empty batch");
  const auto per = ds.sample_size();
  Batch b;
  b.x = Tensor({static_cast<std::int64_t>(indices.size()), ds.channels, ds.height, ds.width},
               dtype);
  std::int64_t o = 0;
  for (auto i : indices) {
    if (i < 0 || i >= ds.count) throw ValueError("sample index out of range");
    const float* src = ds.pixels.data() + i * per;
    for (std::int64_t k = 0; k < per; ++k) b.x.set(o++, src[k]);
    b.labels.push_back(ds.labels[static_cast<std::size_t>(i)]);
  }
  return b;
}

}  // namespace mobiletl
