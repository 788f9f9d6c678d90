#pragma once

#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "c2fpose/errors.hpp"
#include "c2fpose/kmeans.hpp"
#include "c2fpose/pose.hpp"

namespace c2fpose {

template <typename S>
struct CentroidSet {
  int scene_id{0};
  std::uint64_t seed{0};
  MatX<S> position_centroids;     // K_x x 3, meters
  MatX<S> orientation_centroids;  // K_q x 4, unit canonical quaternions (w,x,y,z)

  int kx() const { return static_cast<int>(position_centroids.rows()); }
  int kq() const { return static_cast<int>(orientation_centroids.rows()); }
};

struct CentroidLabels {
  int sample_id{0};
  int position_label{0};
  int orientation_label{0};
};

namespace detail {

/// Canonical text form of one scalar: 9 significant digits.
template <typename S>
std::string format_sig9(S v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.9g", static_cast<double>(v));
  return buf;
}

/// Snap a value to its canonical 9-digit text representation so that any
/// serialized centroid set reloads to bit-identical values.
template <typename S>
S quantize_sig9(S v) {
  return static_cast<S>(std::strtod(format_sig9(v).c_str(), nullptr));
}

template <typename S>
void quantize_sig9(MatX<S>& m) {
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = quantize_sig9(m.data()[i]);
}

inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t salt) {
  // splitmix64 step; decorrelates the per-scene / per-branch streams.
  std::uint64_t z = seed + salt * 0x9e3779b97f4a7c15ull;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

}  // namespace detail

/// Cluster each scene's positions (R^3) and canonicalized orientations (R^4,
/// centroids renormalized to unit canonical quaternions). Deterministic for a
/// fixed seed, independent of scene iteration order.
template <typename S>
std::map<int, CentroidSet<S>> build_centroid_sets(const std::vector<int>& scene_ids,
                                                  const std::vector<Pose<S>>& poses, int k_x,
                                                  int k_q, std::uint64_t seed) {
  if (scene_ids.size() != poses.size()) {
    throw EmptyInputError("build_centroid_sets: scene_ids/poses size mismatch");
  }
  if (poses.empty()) throw EmptyInputError("build_centroid_sets: empty dataset");
  if (k_x < 1 || k_q < 1) throw ConfigError("build_centroid_sets: K_x and K_q must be >= 1");

  std::map<int, std::vector<int>> by_scene;
  for (std::size_t i = 0; i < scene_ids.size(); ++i) by_scene[scene_ids[i]].push_back(int(i));

  std::map<int, CentroidSet<S>> sets;
  for (const auto& [scene, idx] : by_scene) {
    const int n = static_cast<int>(idx.size());
    if (n < std::max(k_x, k_q)) {
      throw InsufficientPointsError("scene " + std::to_string(scene) + " has " +
                                    std::to_string(n) + " samples, needs >= " +
                                    std::to_string(std::max(k_x, k_q)));
    }
    MatX<S> pos(n, 3), quat(n, 4);
    for (int r = 0; r < n; ++r) {
      pos.row(r) = poses[idx[r]].position.transpose();
      quat.row(r) = normalize_canonical(poses[idx[r]].orientation).coeffs().transpose();
    }

    CentroidSet<S> set;
    set.scene_id = scene;
    set.seed = seed;
    set.position_centroids =
        kmeans<S>(pos, k_x, detail::mix_seed(seed, 2 * std::uint64_t(scene))).centroids;
    set.orientation_centroids =
        kmeans<S>(quat, k_q, detail::mix_seed(seed, 2 * std::uint64_t(scene) + 1)).centroids;
    for (int r = 0; r < k_q; ++r) {
      Quaternion<S> q{set.orientation_centroids(r, 0), set.orientation_centroids(r, 1),
                      set.orientation_centroids(r, 2), set.orientation_centroids(r, 3)};
      set.orientation_centroids.row(r) = normalize_canonical(q).coeffs().transpose();
    }
    detail::quantize_sig9(set.position_centroids);
    detail::quantize_sig9(set.orientation_centroids);
    sets.emplace(scene, std::move(set));
  }
  return sets;
}

/// Nearest centroid per sample; Euclidean in R^3 for positions, Euclidean in
/// R^4 on the canonicalized quaternion for orientations. Ties -> lowest index.
template <typename S>
std::vector<CentroidLabels> assign_labels(const std::vector<int>& scene_ids,
                                          const std::vector<Pose<S>>& poses,
                                          const std::map<int, CentroidSet<S>>& sets) {
  if (scene_ids.size() != poses.size()) {
    throw EmptyInputError("assign_labels: scene_ids/poses size mismatch");
  }
  std::vector<CentroidLabels> labels;
  labels.reserve(poses.size());
  for (std::size_t i = 0; i < poses.size(); ++i) {
    const auto it = sets.find(scene_ids[i]);
    if (it == sets.end()) {
      throw MissingCentroidsError("no centroid set for scene " + std::to_string(scene_ids[i]));
    }
    const CentroidSet<S>& set = it->second;
    CentroidLabels lab;
    lab.sample_id = static_cast<int>(i);
    lab.position_label =
        detail::nearest_centroid<S>(set.position_centroids, VecX<S>(poses[i].position));
    const Vec4<S> qc = normalize_canonical(poses[i].orientation).coeffs();
    lab.orientation_label = detail::nearest_centroid<S>(set.orientation_centroids, VecX<S>(qc));
    labels.push_back(lab);
  }
  return labels;
}

/// Plain-text centroid file: per scene one header line
///   scene_id K_x K_q seed
/// followed by K_x position rows (3 reals) and K_q quaternion rows (4 reals),
/// all at 9 significant digits. Scenes in ascending id order.
template <typename S>
std::string format_centroid_sets(const std::map<int, CentroidSet<S>>& sets) {
  std::ostringstream out;
  for (const auto& [scene, set] : sets) {
    out << scene << ' ' << set.kx() << ' ' << set.kq() << ' ' << set.seed << '\n';
    for (int r = 0; r < set.kx(); ++r) {
      out << detail::format_sig9(set.position_centroids(r, 0)) << ' '
          << detail::format_sig9(set.position_centroids(r, 1)) << ' '
          << detail::format_sig9(set.position_centroids(r, 2)) << '\n';
    }
    for (int r = 0; r < set.kq(); ++r) {
      out << detail::format_sig9(set.orientation_centroids(r, 0)) << ' '
          << detail::format_sig9(set.orientation_centroids(r, 1)) << ' '
          << detail::format_sig9(set.orientation_centroids(r, 2)) << ' '
          << detail::format_sig9(set.orientation_centroids(r, 3)) << '\n';
    }
  }
  return out.str();
}

template <typename S>
void save_centroid_sets(const std::map<int, CentroidSet<S>>& sets, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write centroid file: " + path);
  out << format_centroid_sets(sets);
  if (!out) throw IoError("write failed: " + path);
}

template <typename S>
std::map<int, CentroidSet<S>> parse_centroid_sets(std::istream& in, const std::string& origin) {
  std::map<int, CentroidSet<S>> sets;
  std::string line;
  int line_no = 0;
  auto fail = [&](const std::string& what) {
    throw ParseError(origin + ":" + std::to_string(line_no) + ": " + what);
  };
  auto next_line = [&](const char* what) {
    if (!std::getline(in, line)) fail(std::string("unexpected end of file, expected ") + what);
    ++line_no;
  };
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r\n") == std::string::npos) continue;
    std::istringstream head(line);
    CentroidSet<S> set;
    int kx = 0, kq = 0;
    if (!(head >> set.scene_id >> kx >> kq >> set.seed)) fail("bad scene header");
    if (kx < 1 || kq < 1) fail("K_x and K_q must be >= 1");
    if (sets.count(set.scene_id)) fail("duplicate scene " + std::to_string(set.scene_id));
    set.position_centroids.resize(kx, 3);
    set.orientation_centroids.resize(kq, 4);
    for (int r = 0; r < kx; ++r) {
      next_line("position centroid row");
      std::istringstream row(line);
      double x, y, z;
      if (!(row >> x >> y >> z)) fail("bad position centroid row");
      set.position_centroids.row(r) << S(x), S(y), S(z);
    }
    for (int r = 0; r < kq; ++r) {
      next_line("orientation centroid row");
      std::istringstream row(line);
      double w, x, y, z;
      if (!(row >> w >> x >> y >> z)) fail("bad orientation centroid row");
      Quaternion<S> q{S(w), S(x), S(y), S(z)};
      if (std::abs(q.norm() - S(1)) > S(1e-6)) fail("orientation centroid not unit norm");
      const Quaternion<S> canon = canonicalize(q);
      if (canon.w != q.w || canon.x != q.x || canon.y != q.y || canon.z != q.z) {
        fail("orientation centroid not canonical sign");
      }
      set.orientation_centroids.row(r) << q.w, q.x, q.y, q.z;
    }
    sets.emplace(set.scene_id, std::move(set));
  }
  if (sets.empty()) throw ParseError(origin + ": no centroid records");
  return sets;
}

template <typename S>
std::map<int, CentroidSet<S>> load_centroid_sets(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open centroid file: " + path);
  return parse_centroid_sets<S>(in, path);
}

}  // namespace c2fpose
