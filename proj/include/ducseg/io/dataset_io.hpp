#pragma once

// On-disk dataset layout:
//
//   DIR/manifest.txt     first line "classes=K", then one "image label" pair
//                        of paths relative to DIR per line
//   DIR/images/NNNN.png  8-bit RGB
//   DIR/labels/NNNN.png  8-bit single-channel class indices

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "ducseg/augment.hpp"
#include "ducseg/errors.hpp"
#include "ducseg/io/png.hpp"

namespace ducseg::io {

namespace fs = std::filesystem;

inline constexpr const char* kManifestName = "manifest.txt";

struct ManifestEntry {
  std::string image;
  std::string label;
};

struct Manifest {
  int num_classes = 0;
  std::vector<ManifestEntry> entries;
};

inline Manifest read_manifest(const fs::path& dir) {
  const fs::path path = dir / kManifestName;
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open manifest " + path.string());
  Manifest m;
  std::string line;
  if (!std::getline(in, line) || line.rfind("classes=", 0) != 0) {
    throw FormatError(path.string() + ": first line must be classes=K");
  }
  try {
    std::size_t used = 0;
    m.num_classes = std::stoi(line.substr(8), &used);
    if (used != line.size() - 8) throw std::invalid_argument("trailing characters");
  } catch (const std::exception&) {
    throw FormatError(path.string() + ": bad class count '" + line.substr(8) + "'");
  }
  if (m.num_classes < 2 || m.num_classes > 255) {
    throw FormatError(path.string() + ": class count must be in [2, 255]");
  }
  int lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::istringstream ls(line);
    ManifestEntry e;
    std::string extra;
    if (!(ls >> e.image >> e.label) || (ls >> extra)) {
      throw FormatError(path.string() + ":" + std::to_string(lineno) +
                        ": expected two paths, got '" + line + "'");
    }
    m.entries.push_back(std::move(e));
  }
  return m;
}

inline void write_manifest(const fs::path& dir, const Manifest& m) {
  std::ofstream out(dir / kManifestName, std::ios::binary);
  if (!out) throw FormatError("cannot write manifest in " + dir.string());
  out << "classes=" << m.num_classes << '\n';
  for (const auto& e : m.entries) out << e.image << ' ' << e.label << '\n';
  if (!out) throw FormatError("error writing manifest in " + dir.string());
}

template <Real T = double>
Sample<T> read_sample(const fs::path& dir, const ManifestEntry& e, int num_classes) {
  Sample<T> s{raster_to_tensor<T>(read_png_rgb((dir / e.image).string())),
              raster_to_labels(read_png_index((dir / e.label).string()))};
  if (s.image.h() != s.label.h || s.image.w() != s.label.w) {
    throw FormatError(e.image + " and " + e.label + " differ in size");
  }
  for (auto v : s.label.data) {
    if (v >= num_classes && v != s.label.ignore_index) {
      throw FormatError(e.label + ": label value " + std::to_string(v) + " not below classes=" +
                        std::to_string(num_classes));
    }
  }
  return s;
}

template <Real T = double>
struct Dataset {
  int num_classes = 0;
  std::vector<Sample<T>> samples;
};

template <Real T = double>
Dataset<T> read_dataset(const fs::path& dir) {
  const Manifest m = read_manifest(dir);
  Dataset<T> d{m.num_classes, {}};
  d.samples.reserve(m.entries.size());
  for (const auto& e : m.entries) d.samples.push_back(read_sample<T>(dir, e, m.num_classes));
  return d;
}

/// Writes images/NNNN.png, labels/NNNN.png and the manifest.
template <Real T>
void write_dataset(const fs::path& dir, const std::vector<Sample<T>>& samples, int num_classes) {
  std::error_code ec;
  fs::create_directories(dir / "images", ec);
  if (!ec) fs::create_directories(dir / "labels", ec);
  if (ec) throw FormatError("cannot create " + dir.string() + ": " + ec.message());
  Manifest m{num_classes, {}};
  for (std::size_t i = 0; i < samples.size(); ++i) {
    char name[32];
    std::snprintf(name, sizeof name, "%04zu.png", i);
    ManifestEntry e{std::string("images/") + name, std::string("labels/") + name};
    write_png((dir / e.image).string(), tensor_to_raster(samples[i].image));
    write_png((dir / e.label).string(), labels_to_raster(samples[i].label));
    m.entries.push_back(std::move(e));
  }
  write_manifest(dir, m);
}

}  // namespace ducseg::io
