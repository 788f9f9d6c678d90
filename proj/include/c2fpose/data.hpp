#pragma once

#include <filesystem>
#include <fstream>
#include <map>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "c2fpose/clustering.hpp"
#include "c2fpose/image.hpp"
#include "c2fpose/pose.hpp"

namespace c2fpose {

struct SceneInfo {
  int dataset_id = 0;
  std::string name;
};

struct LabeledSample {
  std::string image_path;
  Pose<double> pose;  // quaternion unit canonical after ingestion
  int scene_id = 0;   // dense in [0, N)
  int dataset_id = 0;
  std::string split;  // "train" or "test"
};

struct Dataset {
  std::vector<LabeledSample> samples;
  std::vector<SceneInfo> scenes;  // dense scene id -> origin
  int num_scenes() const { return static_cast<int>(scenes.size()); }
};

/// Manifest rows: dataset_id scene_name split image_path x y z qw qx qy qz,
/// whitespace-separated. Scene ids are assigned densely in order of first
/// appearance of each (dataset_id, scene_name) pair; relative image paths
/// resolve against the manifest's directory.
inline Dataset load_dataset(const std::string& manifest_path) {
  std::ifstream in(manifest_path);
  if (!in) throw IoError("cannot open manifest: " + manifest_path);
  const auto base = std::filesystem::path(manifest_path).parent_path();

  Dataset ds;
  std::map<std::pair<int, std::string>, int> scene_ids;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto where = [&] { return manifest_path + ":" + std::to_string(line_no); };
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    std::istringstream row(line);
    LabeledSample s;
    std::string scene_name;
    double x, y, z, qw, qx, qy, qz;
    if (!(row >> s.dataset_id >> scene_name >> s.split >> s.image_path >> x >> y >> z >> qw >>
          qx >> qy >> qz)) {
      throw ParseError(where() + ": expected 11 fields "
                       "(dataset_id scene split image x y z qw qx qy qz)");
    }
    std::string extra;
    if (row >> extra) throw ParseError(where() + ": trailing content: " + extra);
    if (s.split != "train" && s.split != "test") {
      throw ParseError(where() + ": split must be train or test, got " + s.split);
    }
    const Quaternion<double> q{qw, qx, qy, qz};
    if (!q.coeffs().allFinite() || !(q.norm() > 0.0)) {
      throw DataError(where() + ": quaternion is not normalizable");
    }
    s.pose = make_pose<double>(Vec3<double>(x, y, z), q);

    const auto key = std::make_pair(s.dataset_id, scene_name);
    auto it = scene_ids.find(key);
    if (it == scene_ids.end()) {
      it = scene_ids.emplace(key, ds.num_scenes()).first;
      ds.scenes.push_back({s.dataset_id, scene_name});
    }
    s.scene_id = it->second;

    std::filesystem::path p(s.image_path);
    if (p.is_relative()) s.image_path = (base / p).string();
    ds.samples.push_back(std::move(s));
  }
  return ds;
}

inline void write_manifest(const std::string& path, const Dataset& ds) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write manifest: " + path);
  for (const auto& s : ds.samples) {
    const auto& q = s.pose.orientation;
    out << s.dataset_id << ' ' << ds.scenes.at(s.scene_id).name << ' ' << s.split << ' '
        << s.image_path;
    for (double v : {s.pose.position[0], s.pose.position[1], s.pose.position[2], q.w, q.x, q.y,
                     q.z}) {
      out << ' ' << detail::format_sig9(v);
    }
    out << '\n';
  }
  if (!out) throw IoError("write failed: " + path);
}

/// Sidecar recording the dense scene-id mapping: dense_id dataset_id name.
inline void write_scene_mapping(const std::string& path, const Dataset& ds) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write scene mapping: " + path);
  for (int i = 0; i < ds.num_scenes(); ++i) {
    out << i << ' ' << ds.scenes[i].dataset_id << ' ' << ds.scenes[i].name << '\n';
  }
}

/// Concatenates datasets, offsetting scene ids so they stay dense and
/// disjoint; every sample is preserved exactly once.
inline Dataset merge_datasets(const std::vector<Dataset>& parts) {
  if (parts.empty()) throw EmptyInputError("merge_datasets: no datasets");
  Dataset merged;
  for (const auto& part : parts) {
    const int offset = merged.num_scenes();
    for (const auto& info : part.scenes) merged.scenes.push_back(info);
    for (LabeledSample s : part.samples) {
      s.scene_id += offset;
      merged.samples.push_back(std::move(s));
    }
  }
  return merged;
}

struct AugmentationConfig {
  int resize_short = 256;
  int crop = 224;
  double brightness = 0.2;
  double contrast = 0.2;
  double saturation = 0.2;

  void validate() const {
    if (crop < 1) throw ConfigError("crop size must be >= 1");
    if (resize_short < crop) throw ConfigError("crop must not exceed the resize target");
    if (brightness < 0 || contrast < 0 || saturation < 0) {
      throw ConfigError("jitter ranges must be non-negative");
    }
  }
};

/// Train: resize short edge, random crop, photometric jitter (rng draws in
/// that fixed order). Test: resize short edge, center crop, no rng.
inline Image<double> augment(const Image<double>& img, const AugmentationConfig& cfg,
                             bool train, std::mt19937_64* rng) {
  cfg.validate();
  Image<double> resized = resize_short_edge(img, cfg.resize_short);
  if (!train) return center_crop(resized, cfg.crop);
  if (!rng) throw ConfigError("train-mode augmentation requires an rng");

  std::uniform_int_distribution<int> dt(0, resized.h - cfg.crop);
  std::uniform_int_distribution<int> dl(0, resized.w - cfg.crop);
  const int top = dt(*rng);
  const int left = dl(*rng);
  Image<double> cropped = crop(resized, top, left, cfg.crop);

  auto jitter = [&](double range) {
    std::uniform_real_distribution<double> u(1.0 - range, 1.0 + range);
    return u(*rng);
  };
  const double b = jitter(cfg.brightness);
  const double c = jitter(cfg.contrast);
  const double s = jitter(cfg.saturation);
  return adjust_colors(cropped, b, c, s);
}

/// Synthetic scene geometry: scene s draws positions uniformly from a box of
/// half-extent kSyntheticHalfExtent centered at synthetic_scene_center(s);
/// boxes are pairwise disjoint.
inline constexpr double kSyntheticHalfExtent = 2.0;

inline Vec3<double> synthetic_scene_center(int scene) {
  return Vec3<double>(8.0 * scene, 0.0, 0.0);
}

inline double synthetic_box_diagonal() {
  return 2.0 * kSyntheticHalfExtent * std::sqrt(3.0);
}

namespace detail {

/// Appearance encodes the pose injectively: six sinusoidal gratings (two per
/// channel, horizontal and vertical) carry the normalized position and the
/// quaternion vector part as phase offsets, all within (-pi, pi); the base
/// frequency separates scenes visually.
inline Image<double> render_synthetic(int scene, const Vec3<double>& pos,
                                      const Quaternion<double>& q, int size) {
  const Vec3<double> rel = (pos - synthetic_scene_center(scene)) / kSyntheticHalfExtent;
  const double phases[6] = {2.0 * rel[0], 2.0 * rel[1],  2.0 * rel[2],
                            2.8 * q.x,    2.8 * q.y,     2.8 * q.z};
  const double f = 2.0 + scene;
  const double tau = 2.0 * M_PI;

  Image<double> img;
  img.h = img.w = size;
  img.c = 3;
  img.pixels.resize(Eigen::Index(size) * size, 3);
  for (int i = 0; i < size; ++i) {
    const double v = double(i) / (size - 1);
    for (int j = 0; j < size; ++j) {
      const double u = double(j) / (size - 1);
      for (int ch = 0; ch < 3; ++ch) {
        const double fc = f + 0.5 * ch;
        img.pixels(Eigen::Index(i) * size + j, ch) =
            0.5 + 0.25 * std::sin(tau * fc * u + phases[2 * ch]) +
            0.25 * std::sin(tau * fc * v + phases[2 * ch + 1]);
      }
    }
  }
  return img;
}

}  // namespace detail

/// Writes images/, manifest.txt, and scene_mapping.txt under out_dir and
/// returns the dataset as loaded back from the manifest, so callers see
/// exactly what a later run would. Byte-deterministic for a fixed seed.
inline Dataset generate_synthetic(int num_scenes, int per_scene, int image_size,
                                  std::uint64_t seed, const std::string& out_dir) {
  if (num_scenes < 1 || per_scene < 1) throw ConfigError("counts must be >= 1");
  if (image_size < 2) throw ConfigError("image_size must be >= 2");
  namespace fs = std::filesystem;
  fs::create_directories(fs::path(out_dir) / "images");

  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> box(-kSyntheticHalfExtent, kSyntheticHalfExtent);
  std::uniform_real_distribution<double> angle(0.0, 25.0 * M_PI / 180.0);
  std::normal_distribution<double> g(0.0, 1.0);

  Dataset ds;
  for (int s = 0; s < num_scenes; ++s) {
    ds.scenes.push_back({0, "scene" + std::to_string(s)});
    const Vec3<double> base_axis(std::cos(0.7 * s), std::sin(0.7 * s), 0.5);
    const Quaternion<double> base = from_axis_angle(base_axis, 12.5 * M_PI / 180.0);
    for (int i = 0; i < per_scene; ++i) {
      LabeledSample sample;
      sample.scene_id = s;
      sample.dataset_id = 0;
      sample.split = "train";

      const Vec3<double> pos =
          synthetic_scene_center(s) + Vec3<double>(box(rng), box(rng), box(rng));
      Vec3<double> axis(g(rng), g(rng), g(rng));
      if (axis.norm() < 1e-9) axis = Vec3<double>(1, 0, 0);
      const Quaternion<double> q =
          normalize_canonical(base * from_axis_angle(axis, angle(rng)));
      sample.pose = {pos, q};

      const std::string name =
          "s" + std::to_string(s) + "_i" + std::to_string(i) + ".ppm";
      write_ppm((fs::path(out_dir) / "images" / name).string(),
                detail::render_synthetic(s, pos, q, image_size));
      sample.image_path = "images/" + name;  // relative; resolved on load
      ds.samples.push_back(std::move(sample));
    }
  }
  const std::string manifest = (fs::path(out_dir) / "manifest.txt").string();
  write_manifest(manifest, ds);
  write_scene_mapping((fs::path(out_dir) / "scene_mapping.txt").string(), ds);
  return load_dataset(manifest);
}

}  // namespace c2fpose
