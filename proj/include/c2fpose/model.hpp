#pragma once

#include <json.hpp>

#include <fstream>
#include <map>
#include <numeric>
#include <string>
#include <vector>

#include "c2fpose/backbone.hpp"
#include "c2fpose/clustering.hpp"
#include "c2fpose/image.hpp"
#include "c2fpose/nn.hpp"

namespace c2fpose {

struct ModelConfig {
  int num_scenes = 1;     // N
  int token_dim = 256;    // C_d
  int layers = 6;         // L, encoder and decoder depth
  int heads = 4;
  int mlp_hidden = 256;   // C_h
  double dropout = 0.1;   // train mode only
  int k_x = 1;
  int k_q = 1;
  int head_hidden = 1024;
  std::string backbone = "full";

  void validate() const {
    if (num_scenes < 1) throw ConfigError("num_scenes must be >= 1");
    if (token_dim < 2 || token_dim % 2 != 0) throw ConfigError("token_dim must be even and >= 2");
    if (heads < 1 || token_dim % heads != 0) throw ConfigError("heads must divide token_dim");
    if (layers < 0) throw ConfigError("layers must be >= 0");
    if (mlp_hidden < 1) throw ConfigError("mlp_hidden must be >= 1");
    if (dropout < 0.0 || dropout >= 1.0) throw ConfigError("dropout must be in [0, 1)");
    if (k_x < 1 || k_q < 1) throw ConfigError("k_x and k_q must be >= 1");
    if (head_hidden < 1) throw ConfigError("head_hidden must be >= 1");
    BackboneSpec::preset(backbone);  // throws on unknown name
  }

  nlohmann::json to_json() const {
    return {{"num_scenes", num_scenes}, {"token_dim", token_dim},   {"layers", layers},
            {"heads", heads},           {"mlp_hidden", mlp_hidden}, {"dropout", dropout},
            {"k_x", k_x},               {"k_q", k_q},               {"head_hidden", head_hidden},
            {"backbone", backbone}};
  }
  static ModelConfig from_json(const nlohmann::json& j) {
    ModelConfig c;
    c.num_scenes = j.at("num_scenes").get<int>();
    c.token_dim = j.at("token_dim").get<int>();
    c.layers = j.at("layers").get<int>();
    c.heads = j.at("heads").get<int>();
    c.mlp_hidden = j.at("mlp_hidden").get<int>();
    c.dropout = j.at("dropout").get<double>();
    c.k_x = j.at("k_x").get<int>();
    c.k_q = j.at("k_q").get<int>();
    c.head_hidden = j.at("head_hidden").get<int>();
    c.backbone = j.at("backbone").get<std::string>();
    return c;
  }
};

/// Per-scene centroids cast to the model scalar type, indexed by dense scene
/// id; validated against the model configuration.
template <typename S>
struct CentroidTable {
  std::vector<MatX<S>> position;     // per scene: K_x x 3
  std::vector<MatX<S>> orientation;  // per scene: K_q x 4
  int num_scenes() const { return static_cast<int>(position.size()); }
};

template <typename S, typename T>
CentroidTable<S> make_centroid_table(const std::map<int, CentroidSet<T>>& sets,
                                     const ModelConfig& cfg) {
  CentroidTable<S> table;
  for (int scene = 0; scene < cfg.num_scenes; ++scene) {
    auto it = sets.find(scene);
    if (it == sets.end()) {
      throw MissingCentroidsError("no centroid set for scene " + std::to_string(scene));
    }
    if (it->second.kx() != cfg.k_x || it->second.kq() != cfg.k_q) {
      throw ConfigError("centroid set for scene " + std::to_string(scene) +
                        " has K=(" + std::to_string(it->second.kx()) + "," +
                        std::to_string(it->second.kq()) + "), model expects (" +
                        std::to_string(cfg.k_x) + "," + std::to_string(cfg.k_q) + ")");
    }
    table.position.push_back(it->second.position_centroids.template cast<S>());
    table.orientation.push_back(it->second.orientation_centroids.template cast<S>());
  }
  return table;
}

/// Argmax with lowest-index tie-breaking, or the forced index when given.
template <typename S>
int select_scene(const MatX<S>& log_probs_row, int forced_index) {
  const int n = static_cast<int>(log_probs_row.size());
  if (forced_index >= 0) {
    if (forced_index >= n) throw ConfigError("forced index out of range");
    return forced_index;
  }
  int best = 0;
  for (int i = 1; i < n; ++i) {
    if (log_probs_row(0, i) > log_probs_row(0, best)) best = i;
  }
  return best;
}

struct ForwardOptions {
  bool train = false;
  int forced_scene = -1;
  int forced_kx = -1;
  int forced_kq = -1;
  std::mt19937_64* dropout_rng = nullptr;  // consulted only in train mode
  bool capture_attention = false;
};

template <typename S>
struct ModelOutput {
  ad::NodePtr<S> scene_log_probs;  // 1 x N
  ad::NodePtr<S> cx_log_probs;     // 1 x K_x (selected scene's head)
  ad::NodePtr<S> cq_log_probs;     // 1 x K_q
  ad::NodePtr<S> position;         // 1 x 3, centroid + residual
  ad::NodePtr<S> quaternion;       // 1 x 4, centroid + residual, pre-normalization
  ad::NodePtr<S> residual_x;       // 1 x 3
  ad::NodePtr<S> residual_q;       // 1 x 4
  int scene = 0, kx = 0, kq = 0;   // selected indices
  MatX<S> z_fused;                 // N x 2C_d
  Pose<double> pose;               // reported pose (orientation normalized, canonical)

  std::vector<nn::AttnCapture<S>> enc_x_attn, enc_q_attn;  // per layer
  std::vector<nn::AttnCapture<S>> dec_x_attn, dec_q_attn;  // per layer, cross-attention
  VecX<S> scene_mass;  // per-scene response: softmax of the scene logits
};

template <typename S>
struct AttentionMaps {
  std::vector<MatX<S>> encoder_x, encoder_q;  // per layer, upsampled to input size
  std::vector<MatX<S>> decoder_x, decoder_q;  // per scene (last layer), H_a x W_a
  VecX<S> scene_mass;
  std::vector<int> ranking;  // scene ids, strongest first
};

template <typename S>
class PoseModel {
 public:
  PoseModel(const ModelConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
    cfg_.validate();
    std::mt19937_64 rng(seed);
    const int d = cfg_.token_dim;
    backbone_ = Backbone<S>(store_, BackboneSpec::preset(cfg_.backbone), rng);
    proj_x_ = nn::Linear<S>(store_, "proj_x", backbone_.tap_x().c, d, rng);
    proj_q_ = nn::Linear<S>(store_, "proj_q", backbone_.tap_q().c, d, rng);
    pe_x_u_ = &store_.create("pe_x.eu", nn::gaussian<S>(backbone_.tap_x().w, d / 2, 0.02, rng));
    pe_x_v_ = &store_.create("pe_x.ev", nn::gaussian<S>(backbone_.tap_x().h, d / 2, 0.02, rng));
    pe_q_u_ = &store_.create("pe_q.eu", nn::gaussian<S>(backbone_.tap_q().w, d / 2, 0.02, rng));
    pe_q_v_ = &store_.create("pe_q.ev", nn::gaussian<S>(backbone_.tap_q().h, d / 2, 0.02, rng));
    enc_x_ = nn::Encoder<S>(store_, "enc_x", cfg_.layers, d, cfg_.heads, cfg_.mlp_hidden, rng);
    enc_q_ = nn::Encoder<S>(store_, "enc_q", cfg_.layers, d, cfg_.heads, cfg_.mlp_hidden, rng);
    dec_x_ = nn::Decoder<S>(store_, "dec_x", cfg_.layers, d, cfg_.heads, cfg_.mlp_hidden, rng);
    dec_q_ = nn::Decoder<S>(store_, "dec_q", cfg_.layers, d, cfg_.heads, cfg_.mlp_hidden, rng);
    queries_x_ = &store_.create("queries_x", nn::gaussian<S>(cfg_.num_scenes, d, 0.02, rng));
    queries_q_ = &store_.create("queries_q", nn::gaussian<S>(cfg_.num_scenes, d, 0.02, rng));
    scene_cls_ = nn::Linear<S>(store_, "scene_cls", 2 * d, 1, rng);
    for (int i = 0; i < cfg_.num_scenes; ++i) {
      cls_x_.emplace_back(store_, "cls_x.s" + std::to_string(i), d, cfg_.k_x, rng);
      cls_q_.emplace_back(store_, "cls_q.s" + std::to_string(i), d, cfg_.k_q, rng);
    }
    head_x_ = nn::Mlp<S>(store_, "head_x", d, cfg_.head_hidden, 3, rng);
    head_q_ = nn::Mlp<S>(store_, "head_q", d, cfg_.head_hidden, 4, rng);
  }

  const ModelConfig& config() const { return cfg_; }
  ad::ParamStore<S>& store() { return store_; }
  const ad::ParamStore<S>& store() const { return store_; }
  const Backbone<S>& backbone() const { return backbone_; }

  /// image: (input_h*input_w) x 3 in [0,1]. The caller owns the LeafCache so
  /// a batch of forwards can share one set of leaves.
  ModelOutput<S> forward(nn::LeafCache<S>& cache, const MatX<S>& image,
                         const CentroidTable<S>& table, const ForwardOptions& opts) const {
    if (table.num_scenes() != cfg_.num_scenes) {
      throw ConfigError("centroid table covers " + std::to_string(table.num_scenes()) +
                        " scenes, model has " + std::to_string(cfg_.num_scenes));
    }
    if (opts.train && (opts.forced_scene < 0 || opts.forced_kx < 0 || opts.forced_kq < 0)) {
      throw ConfigError("train-mode forward requires forced scene and centroid indices");
    }
    const double p = opts.train ? cfg_.dropout : 0.0;
    std::mt19937_64* rng = opts.train ? opts.dropout_rng : nullptr;

    ModelOutput<S> out;
    auto maps = backbone_.forward(cache, ad::constant<S>(image));

    auto pos_x = positional_encoding(cache, backbone_.tap_x(), *pe_x_u_, *pe_x_v_);
    auto pos_q = positional_encoding(cache, backbone_.tap_q(), *pe_q_u_, *pe_q_v_);
    auto z0_x = ad::add(proj_x_.forward(cache, maps.a_x), pos_x);
    auto z0_q = ad::add(proj_q_.forward(cache, maps.a_q), pos_q);

    auto* ecx = opts.capture_attention ? &out.enc_x_attn : nullptr;
    auto* ecq = opts.capture_attention ? &out.enc_q_attn : nullptr;
    auto mem_x = enc_x_.forward(cache, z0_x, pos_x, p, rng, ecx);
    auto mem_q = enc_q_.forward(cache, z0_q, pos_q, p, rng, ecq);

    auto* dcx = opts.capture_attention ? &out.dec_x_attn : nullptr;
    auto* dcq = opts.capture_attention ? &out.dec_q_attn : nullptr;
    auto X = dec_x_.forward(cache, cache.get(*queries_x_), mem_x, pos_x, p, rng, dcx);
    auto Q = dec_q_.forward(cache, cache.get(*queries_q_), mem_q, pos_q, p, rng, dcq);

    auto z_fused = ad::hcat(X, Q);  // N x 2C_d
    out.z_fused = z_fused->value;
    out.scene_log_probs =
        ad::log_softmax_rows(ad::transpose(scene_cls_.forward(cache, z_fused)));
    out.scene_mass = out.scene_log_probs->value.row(0).array().exp().transpose();

    out.scene = select_scene(out.scene_log_probs->value, opts.forced_scene);
    auto x_sel = ad::gather_rows(X, std::vector<int>{out.scene});
    auto q_sel = ad::gather_rows(Q, std::vector<int>{out.scene});

    out.cx_log_probs = ad::log_softmax_rows(cls_x_[out.scene].forward(cache, x_sel));
    out.cq_log_probs = ad::log_softmax_rows(cls_q_[out.scene].forward(cache, q_sel));
    out.kx = select_scene(out.cx_log_probs->value, opts.forced_kx);
    out.kq = select_scene(out.cq_log_probs->value, opts.forced_kq);

    out.residual_x = head_x_.forward(cache, x_sel);
    out.residual_q = head_q_.forward(cache, q_sel);
    out.position = ad::add(out.residual_x,
                           ad::constant<S>(table.position[out.scene].row(out.kx)));
    out.quaternion = ad::add(out.residual_q,
                             ad::constant<S>(table.orientation[out.scene].row(out.kq)));

    const Vec3<double> xd = out.position->value.row(0).template cast<double>().transpose();
    const MatX<double> qd = out.quaternion->value.template cast<double>();
    out.pose = make_pose<double>(xd, Quaternion<double>{qd(0, 0), qd(0, 1), qd(0, 2), qd(0, 3)});
    return out;
  }

  ModelOutput<S> forward(const MatX<S>& image, const CentroidTable<S>& table,
                         const ForwardOptions& opts) const {
    nn::LeafCache<S> cache;
    return forward(cache, image, table, opts);
  }

  /// Inference-only attention study: per-layer encoder maps (head-averaged,
  /// query-averaged, upsampled to input size) and per-scene decoder response
  /// maps — last-layer cross-attention weights scaled by each scene's softmax
  /// response, so a map's total mass is that scene's response and the ranking
  /// (strongest first) follows from summing over each map.
  AttentionMaps<S> extract_attention(const MatX<S>& image, const CentroidTable<S>& table) const {
    ad::NoGradGuard off;
    ForwardOptions opts;
    opts.capture_attention = true;
    auto out = forward(image, table, opts);

    AttentionMaps<S> maps;
    const auto& spec = backbone_.spec();
    auto encoder_grid = [&](const nn::AttnCapture<S>& cap, const TapShape& tap) {
      const Eigen::Matrix<S, 1, Eigen::Dynamic> mean = cap.weights.colwise().mean();
      MatX<S> grid(tap.h, tap.w);
      for (int i = 0; i < tap.h; ++i) {
        for (int j = 0; j < tap.w; ++j) grid(i, j) = mean(i * tap.w + j);
      }
      return bilinear_resize_grid(grid, spec.input_h, spec.input_w);
    };
    for (const auto& cap : out.enc_x_attn) maps.encoder_x.push_back(encoder_grid(cap, backbone_.tap_x()));
    for (const auto& cap : out.enc_q_attn) maps.encoder_q.push_back(encoder_grid(cap, backbone_.tap_q()));

    auto decoder_grids = [&](const nn::AttnCapture<S>& cap, const TapShape& tap,
                             std::vector<MatX<S>>& dst) {
      for (int s = 0; s < cfg_.num_scenes; ++s) {
        MatX<S> grid(tap.h, tap.w);
        for (int i = 0; i < tap.h; ++i) {
          for (int j = 0; j < tap.w; ++j) {
            grid(i, j) = cap.weights(s, i * tap.w + j) * out.scene_mass[s];
          }
        }
        dst.push_back(std::move(grid));
      }
    };
    decoder_grids(out.dec_x_attn.back(), backbone_.tap_x(), maps.decoder_x);
    decoder_grids(out.dec_q_attn.back(), backbone_.tap_q(), maps.decoder_q);

    maps.scene_mass = out.scene_mass;
    maps.ranking.resize(cfg_.num_scenes);
    std::iota(maps.ranking.begin(), maps.ranking.end(), 0);
    std::stable_sort(maps.ranking.begin(), maps.ranking.end(),
                     [&](int a, int b) { return maps.scene_mass[a] > maps.scene_mass[b]; });
    return maps;
  }

 private:
  ad::NodePtr<S> positional_encoding(nn::LeafCache<S>& cache, const TapShape& tap,
                                     ad::Param<S>& eu, ad::Param<S>& ev) const {
    std::vector<int> js, is;
    js.reserve(tap.tokens());
    is.reserve(tap.tokens());
    for (int i = 0; i < tap.h; ++i) {
      for (int j = 0; j < tap.w; ++j) {
        js.push_back(j);
        is.push_back(i);
      }
    }
    return ad::hcat(ad::gather_rows(cache.get(eu), std::move(js)),
                    ad::gather_rows(cache.get(ev), std::move(is)));
  }

  ModelConfig cfg_;
  ad::ParamStore<S> store_;
  Backbone<S> backbone_;
  nn::Linear<S> proj_x_, proj_q_;
  ad::Param<S>*pe_x_u_ = nullptr, *pe_x_v_ = nullptr, *pe_q_u_ = nullptr, *pe_q_v_ = nullptr;
  nn::Encoder<S> enc_x_, enc_q_;
  nn::Decoder<S> dec_x_, dec_q_;
  ad::Param<S>*queries_x_ = nullptr, *queries_q_ = nullptr;
  nn::Linear<S> scene_cls_;
  std::vector<nn::Linear<S>> cls_x_, cls_q_;
  nn::Mlp<S> head_x_, head_q_;
};

/// Closed-form parameter count for a configuration; must match the store of
/// a freshly built model exactly.
inline Eigen::Index expected_param_count(const ModelConfig& cfg) {
  const Eigen::Index d = cfg.token_dim;
  const Eigen::Index ch = cfg.mlp_hidden;
  const auto spec = BackboneSpec::preset(cfg.backbone);
  Eigen::Index n = Backbone<double>::param_count(spec);

  TapShape tap_x, tap_q;
  int h = spec.input_h, w = spec.input_w;
  for (const auto& cs : spec.convs) {
    const int ho = detail::conv_out(h, cs.kernel, cs.stride, cs.pad);
    const int wo = detail::conv_out(w, cs.kernel, cs.stride, cs.pad);
    if (cs.tap == 1) {
      tap_q = {ho, wo, cs.out_ch};
    } else if (cs.tap == 2) {
      tap_x = {ho, wo, cs.out_ch};
    } else {
      h = ho;
      w = wo;
    }
  }

  n += Eigen::Index(tap_x.c) * d + d;  // proj_x
  n += Eigen::Index(tap_q.c) * d + d;  // proj_q
  n += Eigen::Index(tap_x.w + tap_x.h + tap_q.w + tap_q.h) * (d / 2);  // PE tables

  const Eigen::Index linear = d * d + d;
  const Eigen::Index attn = 4 * linear;
  const Eigen::Index ln = 2 * d;
  const Eigen::Index mlp = d * ch + ch + ch * d + d;
  const Eigen::Index enc_layer = attn + 2 * ln + mlp;
  const Eigen::Index dec_layer = 2 * attn + 3 * ln + mlp;
  n += 2 * (cfg.layers * enc_layer + ln);  // encoders + final LN
  n += 2 * (cfg.layers * dec_layer + ln);  // decoders + final LN

  n += 2 * Eigen::Index(cfg.num_scenes) * d;  // queries
  n += 2 * d + 1;                             // scene classifier
  n += Eigen::Index(cfg.num_scenes) * ((d + 1) * cfg.k_x + (d + 1) * cfg.k_q);
  n += (d * cfg.head_hidden + cfg.head_hidden) * 2;  // head fc1, both branches
  n += Eigen::Index(cfg.head_hidden) * 3 + 3 + Eigen::Index(cfg.head_hidden) * 4 + 4;
  return n;
}

/// Checkpoint: magic, little-endian u64 header length, JSON header (version,
/// config, centroid provenance, parameter manifest), then raw float64 values
/// in registration order (Eigen column-major within each tensor).
struct CheckpointMeta {
  std::uint64_t centroid_seed = 0;
  std::uint64_t centroid_hash = 0;
};

namespace detail {
inline constexpr char kCheckpointMagic[8] = {'C', '2', 'F', 'P', 'C', 'K', 'P', 'T'};
}

template <typename S>
void save_checkpoint(const std::string& path, const PoseModel<S>& model,
                     const CheckpointMeta& meta) {
  nlohmann::json header;
  header["version"] = 1;
  header["config"] = model.config().to_json();
  header["centroid_seed"] = meta.centroid_seed;
  header["centroid_hash"] = meta.centroid_hash;
  nlohmann::json params = nlohmann::json::array();
  for (const auto& p : model.store().all()) {
    params.push_back({{"name", p->name}, {"rows", p->value.rows()}, {"cols", p->value.cols()}});
  }
  header["params"] = std::move(params);
  const std::string htext = header.dump();

  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write checkpoint: " + path);
  out.write(detail::kCheckpointMagic, sizeof(detail::kCheckpointMagic));
  const std::uint64_t hlen = htext.size();
  out.write(reinterpret_cast<const char*>(&hlen), sizeof(hlen));
  out.write(htext.data(), static_cast<std::streamsize>(htext.size()));
  for (const auto& p : model.store().all()) {
    if constexpr (std::is_same_v<S, double>) {
      out.write(reinterpret_cast<const char*>(p->value.data()),
                static_cast<std::streamsize>(sizeof(double) * p->value.size()));
    } else {
      const MatX<double> as_double = p->value.template cast<double>();
      out.write(reinterpret_cast<const char*>(as_double.data()),
                static_cast<std::streamsize>(sizeof(double) * as_double.size()));
    }
  }
  if (!out) throw IoError("write failed: " + path);
}

template <typename S>
struct LoadedCheckpoint {
  ModelConfig config;
  CheckpointMeta meta;
  std::shared_ptr<PoseModel<S>> model;
};

template <typename S>
LoadedCheckpoint<S> load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint: " + path);
  char magic[8];
  in.read(magic, sizeof(magic));
  if (in.gcount() != sizeof(magic) ||
      !std::equal(magic, magic + 8, detail::kCheckpointMagic)) {
    throw ParseError(path + ": not a checkpoint file");
  }
  std::uint64_t hlen = 0;
  in.read(reinterpret_cast<char*>(&hlen), sizeof(hlen));
  if (!in || hlen == 0 || hlen > (1u << 26)) throw ParseError(path + ": bad header length");
  std::string htext(hlen, '\0');
  in.read(htext.data(), static_cast<std::streamsize>(hlen));
  if (!in) throw ParseError(path + ": truncated header");

  nlohmann::json header;
  try {
    header = nlohmann::json::parse(htext);
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(path + ": header is not valid JSON: " + e.what());
  }
  if (header.at("version").get<int>() != 1) {
    throw ParseError(path + ": unsupported checkpoint version");
  }

  LoadedCheckpoint<S> loaded;
  loaded.config = ModelConfig::from_json(header.at("config"));
  loaded.meta.centroid_seed = header.at("centroid_seed").get<std::uint64_t>();
  loaded.meta.centroid_hash = header.at("centroid_hash").get<std::uint64_t>();
  loaded.model = std::make_shared<PoseModel<S>>(loaded.config, 0);

  const auto& manifest = header.at("params");
  const auto& params = loaded.model->store().all();
  if (manifest.size() != params.size()) {
    throw ParseError(path + ": parameter manifest does not match architecture");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto& entry = manifest[i];
    if (entry.at("name").get<std::string>() != params[i]->name ||
        entry.at("rows").get<Eigen::Index>() != params[i]->value.rows() ||
        entry.at("cols").get<Eigen::Index>() != params[i]->value.cols()) {
      throw ParseError(path + ": parameter mismatch at " + params[i]->name);
    }
    MatX<double> buf(params[i]->value.rows(), params[i]->value.cols());
    in.read(reinterpret_cast<char*>(buf.data()),
            static_cast<std::streamsize>(sizeof(double) * buf.size()));
    if (!in) throw ParseError(path + ": truncated parameter data at " + params[i]->name);
    params[i]->value = buf.cast<S>();
  }
  return loaded;
}

}  // namespace c2fpose
