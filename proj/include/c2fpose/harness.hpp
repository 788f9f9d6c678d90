#pragma once

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <numeric>
#include <ostream>
#include <random>
#include <sstream>

#include "c2fpose/data.hpp"
#include "c2fpose/hash.hpp"
#include "c2fpose/loss.hpp"

namespace c2fpose {

struct TrainConfig {
  int epochs = 0;
  int batch_size = 8;
  double lr = 1e-4;
  int halve_every = 0;  // epochs between halvings; 0 disables the schedule
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-10;
  std::uint64_t seed = 0;
  int k_x = 1;
  int k_q = 1;
  int checkpoint_interval = 0;  // epochs; 0 = final checkpoint only
  double grad_clip = 0.0;       // global-norm threshold; 0 disables
  AugmentationConfig augment;
  std::string out_dir = ".";

  void validate() const {
    if (epochs < 0) throw ConfigError("epochs must be >= 0");
    if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
    if (!(lr > 0)) throw ConfigError("lr must be positive");
    if (beta1 < 0 || beta1 >= 1 || beta2 < 0 || beta2 >= 1) {
      throw ConfigError("betas must be in [0, 1)");
    }
    if (!(eps > 0)) throw ConfigError("eps must be positive");
    if (halve_every < 0 || checkpoint_interval < 0) {
      throw ConfigError("schedule intervals must be >= 0");
    }
    if (grad_clip < 0) throw ConfigError("grad_clip must be >= 0");
    augment.validate();
  }
};

/// Adam with bias correction; moment buffers allocate lazily on first touch.
template <typename S>
class Adam {
 public:
  Adam(double beta1, double beta2, double eps) : b1_(beta1), b2_(beta2), eps_(eps) {}

  void step(const std::vector<ad::Param<S>*>& params, double lr) {
    ++t_;
    const S bc1 = S(1) - S(std::pow(b1_, double(t_)));
    const S bc2 = S(1) - S(std::pow(b2_, double(t_)));
    for (ad::Param<S>* p : params) {
      if (p->m.size() == 0) {
        p->m = MatX<S>::Zero(p->value.rows(), p->value.cols());
        p->v = MatX<S>::Zero(p->value.rows(), p->value.cols());
      }
      p->m = S(b1_) * p->m + S(1 - b1_) * p->grad;
      p->v = (S(b2_) * p->v.array() + S(1 - b2_) * p->grad.array().square()).matrix();
      p->value.array() -=
          S(lr) * (p->m.array() / bc1) / ((p->v.array() / bc2).sqrt() + S(eps_));
    }
  }

  long long steps() const { return t_; }

 private:
  double b1_, b2_, eps_;
  long long t_ = 0;
};

/// Scales all gradients so their global L2 norm does not exceed `limit`.
template <typename S>
void clip_gradients(const std::vector<ad::Param<S>*>& params, double limit) {
  S sq{0};
  for (const ad::Param<S>* p : params) sq += p->grad.squaredNorm();
  const S norm = std::sqrt(sq);
  if (norm > S(limit)) {
    const S factor = S(limit) / norm;
    for (ad::Param<S>* p : params) p->grad *= factor;
  }
}

struct TrainResult {
  std::vector<double> loss_history;  // per-step batch-mean total
  std::vector<double> lr_schedule;   // effective lr per epoch
  std::string final_checkpoint;
  int steps = 0;
  int epochs_run = 0;
};

namespace detail {

template <typename S>
std::vector<ad::Param<S>*> trainable_params(PoseModel<S>& model, LossParams<S>& loss_params) {
  std::vector<ad::Param<S>*> params;
  for (const auto& p : model.store().all()) params.push_back(p.get());
  for (ad::Param<S>* p : loss_params.params()) params.push_back(p);
  return params;
}

template <typename S>
CheckpointMeta centroid_meta(const std::map<int, CentroidSet<S>>& sets) {
  CheckpointMeta meta;
  if (!sets.empty()) meta.centroid_seed = sets.begin()->second.seed;
  meta.centroid_hash = fnv1a64(format_centroid_sets(sets));
  return meta;
}

}  // namespace detail

/// Runs Adam over the model parameters and loss balance terms jointly with
/// teacher-forced routing. Emits one log line per step (epoch, step, total,
/// L_x, L_q, the three NLL terms, s_x, s_q), periodic checkpoints, and a
/// final checkpoint; with zero epochs the final checkpoint equals the
/// initialization. `stop_after_epoch` may end training early.
template <typename S>
TrainResult train(PoseModel<S>& model, LossParams<S>& loss_params, const Dataset& dataset,
                  const std::map<int, CentroidSet<double>>& centroid_sets,
                  const TrainConfig& cfg, std::ostream& log,
                  const std::function<bool(int)>& stop_after_epoch = {}) {
  cfg.validate();
  if (dataset.samples.empty()) throw EmptyInputError("train: empty dataset");
  const ModelConfig& mc = model.config();
  if (cfg.k_x != mc.k_x || cfg.k_q != mc.k_q) {
    throw ConfigError("train config K=(" + std::to_string(cfg.k_x) + "," +
                      std::to_string(cfg.k_q) + ") does not match model K=(" +
                      std::to_string(mc.k_x) + "," + std::to_string(mc.k_q) + ")");
  }
  const auto& spec = model.backbone().spec();
  if (cfg.augment.crop != spec.input_h || spec.input_h != spec.input_w) {
    throw ConfigError("augmentation crop " + std::to_string(cfg.augment.crop) +
                      " does not match model input " + std::to_string(spec.input_h));
  }
  for (const auto& s : dataset.samples) {
    if (s.scene_id < 0 || s.scene_id >= mc.num_scenes) {
      throw ConfigError("sample scene id " + std::to_string(s.scene_id) +
                        " outside model range of " + std::to_string(mc.num_scenes));
    }
  }
  const CentroidTable<S> table = make_centroid_table<S>(centroid_sets, mc);
  const CheckpointMeta meta = detail::centroid_meta(centroid_sets);

  std::vector<int> scene_ids;
  std::vector<Pose<double>> poses;
  for (const auto& s : dataset.samples) {
    scene_ids.push_back(s.scene_id);
    poses.push_back(s.pose);
  }
  const std::vector<CentroidLabels> labels = assign_labels(scene_ids, poses, centroid_sets);

  std::vector<Image<double>> images;
  images.reserve(dataset.samples.size());
  for (const auto& s : dataset.samples) images.push_back(read_ppm<double>(s.image_path));

  std::mt19937_64 rng(cfg.seed);
  Adam<S> adam(cfg.beta1, cfg.beta2, cfg.eps);
  const auto params = detail::trainable_params(model, loss_params);

  namespace fs = std::filesystem;
  fs::create_directories(cfg.out_dir);
  const auto checkpoint_path = [&](const std::string& tag) {
    return (fs::path(cfg.out_dir) / ("checkpoint_" + tag + ".bin")).string();
  };

  TrainResult result;
  std::vector<int> order(dataset.samples.size());
  std::iota(order.begin(), order.end(), 0);

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const double lr =
        cfg.halve_every > 0 ? cfg.lr / std::pow(2.0, epoch / cfg.halve_every) : cfg.lr;
    result.lr_schedule.push_back(lr);
    std::shuffle(order.begin(), order.end(), rng);

    for (std::size_t at = 0; at < order.size(); at += std::size_t(cfg.batch_size)) {
      const std::size_t batch_end = std::min(order.size(), at + std::size_t(cfg.batch_size));
      const S batch_n = S(double(batch_end - at));

      model.store().zero_grads();
      loss_params.s_x.grad.setZero();
      loss_params.s_q.grad.setZero();

      nn::LeafCache<S> cache;
      ad::NodePtr<S> batch_sum;
      double mean_lx = 0, mean_lq = 0, mean_ns = 0, mean_nx = 0, mean_nq = 0;
      for (std::size_t b = at; b < batch_end; ++b) {
        const int i = order[b];
        const LabeledSample& sample = dataset.samples[i];
        const Image<double> aug = augment(images[i], cfg.augment, true, &rng);
        const MatX<S> pixels = aug.pixels.template cast<S>();

        ForwardOptions opts;
        opts.train = true;
        opts.forced_scene = sample.scene_id;
        opts.forced_kx = labels[i].position_label;
        opts.forced_kq = labels[i].orientation_label;
        opts.dropout_rng = &rng;

        SupervisionTarget<S> target;
        target.position = sample.pose.position.template cast<S>();
        const Vec4<double>& q = sample.pose.orientation.coeffs();
        target.orientation = Quaternion<S>{S(q[0]), S(q[1]), S(q[2]), S(q[3])};
        target.scene = sample.scene_id;
        target.kx = labels[i].position_label;
        target.kq = labels[i].orientation_label;

        auto out = model.forward(cache, pixels, table, opts);
        auto breakdown = multi_scene_loss(cache, out, target, loss_params);
        batch_sum = batch_sum ? ad::add(batch_sum, breakdown.total) : breakdown.total;
        mean_lx += double(breakdown.l_x) / double(batch_n);
        mean_lq += double(breakdown.l_q) / double(batch_n);
        mean_ns += double(breakdown.nll_scene) / double(batch_n);
        mean_nx += double(breakdown.nll_cx) / double(batch_n);
        mean_nq += double(breakdown.nll_cq) / double(batch_n);
      }
      auto total = ad::scale(batch_sum, S(1) / batch_n);
      ad::backward(total);
      if (cfg.grad_clip > 0) clip_gradients<S>(params, cfg.grad_clip);

      log << "epoch " << epoch << " step " << result.steps << " total "
          << double(total->value(0, 0)) << " l_x " << mean_lx << " l_q " << mean_lq
          << " nll_s " << mean_ns << " nll_cx " << mean_nx << " nll_cq " << mean_nq << " s_x "
          << double(loss_params.s_x.value(0, 0)) << " s_q "
          << double(loss_params.s_q.value(0, 0)) << "\n";
      result.loss_history.push_back(double(total->value(0, 0)));

      adam.step(params, lr);
      ++result.steps;
    }
    result.epochs_run = epoch + 1;
    if (cfg.checkpoint_interval > 0 && (epoch + 1) % cfg.checkpoint_interval == 0) {
      save_checkpoint(checkpoint_path("epoch_" + std::to_string(epoch + 1)), model, meta);
    }
    if (stop_after_epoch && stop_after_epoch(epoch + 1)) break;
  }

  result.final_checkpoint = checkpoint_path("final");
  save_checkpoint(result.final_checkpoint, model, meta);
  return result;
}

struct SceneEval {
  int scene_id = 0;
  int count = 0;
  double median_pos = 0;  // meters
  double median_ori = 0;  // degrees
  double scene_acc = 0;
  double kx_acc = 0;
  double kq_acc = 0;
};

struct EvalReport {
  std::vector<SceneEval> scenes;   // scenes with at least one sample
  std::vector<int> empty_scenes;   // model scenes with no samples (warning rows)
  double avg_median_pos = 0;
  double avg_median_ori = 0;
  double scene_accuracy = 0;
  double kx_accuracy = 0;
  double kq_accuracy = 0;
  int total = 0;

  std::string to_text() const {
    std::ostringstream out;
    for (const auto& s : scenes) {
      out << "scene " << s.scene_id << " count " << s.count << " median_pos_m "
          << detail::format_sig9(s.median_pos) << " median_ori_deg "
          << detail::format_sig9(s.median_ori) << " scene_acc " << detail::format_sig9(s.scene_acc)
          << " kx_acc " << detail::format_sig9(s.kx_acc) << " kq_acc "
          << detail::format_sig9(s.kq_acc) << "\n";
    }
    for (int id : empty_scenes) out << "excluded_scene " << id << " no_samples\n";
    out << "average median_pos_m " << detail::format_sig9(avg_median_pos) << " median_ori_deg "
        << detail::format_sig9(avg_median_ori) << "\n";
    out << "accuracy scene " << detail::format_sig9(scene_accuracy) << " kx "
        << detail::format_sig9(kx_accuracy) << " kq " << detail::format_sig9(kq_accuracy) << "\n";
    out << "samples " << total << "\n";
    return out.str();
  }
};

/// Inference-mode evaluation: per-scene lower medians of position/orientation
/// error, macro-averages across scenes, and classification accuracies. A
/// centroid prediction counts as correct only when the scene was also right.
template <typename S>
EvalReport evaluate(const PoseModel<S>& model, const Dataset& dataset,
                    const std::map<int, CentroidSet<double>>& centroid_sets,
                    const AugmentationConfig& aug) {
  aug.validate();
  const ModelConfig& mc = model.config();
  const CentroidTable<S> table = make_centroid_table<S>(centroid_sets, mc);
  const auto& spec = model.backbone().spec();
  if (aug.crop != spec.input_h) {
    throw ConfigError("augmentation crop " + std::to_string(aug.crop) +
                      " does not match model input " + std::to_string(spec.input_h));
  }

  std::vector<int> scene_ids;
  std::vector<Pose<double>> poses;
  for (const auto& s : dataset.samples) {
    if (s.scene_id < 0 || s.scene_id >= mc.num_scenes) {
      throw ConfigError("sample scene id " + std::to_string(s.scene_id) +
                        " outside model range of " + std::to_string(mc.num_scenes));
    }
    scene_ids.push_back(s.scene_id);
    poses.push_back(s.pose);
  }
  const std::vector<CentroidLabels> labels = assign_labels(scene_ids, poses, centroid_sets);

  ad::NoGradGuard off;
  std::vector<std::vector<PoseError<double>>> errors(mc.num_scenes);
  std::vector<std::array<int, 3>> hits(mc.num_scenes, {0, 0, 0});
  for (std::size_t i = 0; i < dataset.samples.size(); ++i) {
    const LabeledSample& sample = dataset.samples[i];
    const Image<double> img = augment(read_ppm<double>(sample.image_path), aug, false, nullptr);
    const auto out = model.forward(img.pixels.template cast<S>(), table, {});

    PoseError<double> err;
    err.position_err = position_error(out.pose.position, sample.pose.position);
    err.orientation_err = orientation_error_deg(out.pose.orientation, sample.pose.orientation);
    errors[sample.scene_id].push_back(err);

    const bool scene_ok = out.scene == sample.scene_id;
    hits[sample.scene_id][0] += scene_ok;
    hits[sample.scene_id][1] += scene_ok && out.kx == labels[i].position_label;
    hits[sample.scene_id][2] += scene_ok && out.kq == labels[i].orientation_label;
  }

  EvalReport report;
  int scene_hits = 0, kx_hits = 0, kq_hits = 0;
  for (int sc = 0; sc < mc.num_scenes; ++sc) {
    if (errors[sc].empty()) {
      report.empty_scenes.push_back(sc);
      continue;
    }
    SceneEval row;
    row.scene_id = sc;
    row.count = static_cast<int>(errors[sc].size());
    const PoseError<double> med = median_errors(errors[sc]);
    row.median_pos = med.position_err;
    row.median_ori = med.orientation_err;
    row.scene_acc = double(hits[sc][0]) / row.count;
    row.kx_acc = double(hits[sc][1]) / row.count;
    row.kq_acc = double(hits[sc][2]) / row.count;
    report.scenes.push_back(row);

    report.total += row.count;
    scene_hits += hits[sc][0];
    kx_hits += hits[sc][1];
    kq_hits += hits[sc][2];
    report.avg_median_pos += row.median_pos;
    report.avg_median_ori += row.median_ori;
  }
  if (report.scenes.empty()) throw EmptyInputError("evaluate: no samples");
  report.avg_median_pos /= double(report.scenes.size());
  report.avg_median_ori /= double(report.scenes.size());
  report.scene_accuracy = double(scene_hits) / report.total;
  report.kx_accuracy = double(kx_hits) / report.total;
  report.kq_accuracy = double(kq_hits) / report.total;
  return report;
}

struct BenchRow {
  int num_scenes = 0;
  double mean_ms = 0;
  Eigen::Index param_count = 0;
  std::size_t param_bytes = 0;
};

/// Instantiates untrained models for each scene count and times inference
/// forwards (one warmup, then `trials` timed runs).
template <typename S>
std::vector<BenchRow> bench_scaling(ModelConfig base, const std::vector<int>& scene_counts,
                                    int trials, std::uint64_t seed = 1) {
  if (trials < 1) throw ConfigError("bench_scaling: trials must be >= 1");
  std::vector<BenchRow> rows;
  for (int n : scene_counts) {
    if (n < 1) throw ConfigError("bench_scaling: scene counts must be >= 1");
    ModelConfig cfg = base;
    cfg.num_scenes = n;
    PoseModel<S> model(cfg, seed);

    std::mt19937_64 rng(seed + 7);
    std::normal_distribution<double> g(0.0, 1.0);
    CentroidTable<S> table;
    for (int sc = 0; sc < n; ++sc) {
      MatX<S> pos(cfg.k_x, 3), ori(cfg.k_q, 4);
      for (Eigen::Index i = 0; i < pos.size(); ++i) pos.data()[i] = S(g(rng));
      for (int r = 0; r < cfg.k_q; ++r) {
        Quaternion<double> q{g(rng), g(rng), g(rng), g(rng)};
        ori.row(r) = normalize_canonical(q).coeffs().template cast<S>().transpose();
      }
      table.position.push_back(std::move(pos));
      table.orientation.push_back(std::move(ori));
    }
    const auto& spec = model.backbone().spec();
    MatX<S> img(Eigen::Index(spec.input_h) * spec.input_w, spec.input_ch);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (Eigen::Index i = 0; i < img.size(); ++i) img.data()[i] = S(u(rng));

    ad::NoGradGuard off;
    model.forward(img, table, {});  // warmup
    const auto start = std::chrono::steady_clock::now();
    for (int t = 0; t < trials; ++t) model.forward(img, table, {});
    const auto end = std::chrono::steady_clock::now();

    BenchRow row;
    row.num_scenes = n;
    row.mean_ms = std::chrono::duration<double, std::milli>(end - start).count() / trials;
    row.param_count = model.store().scalar_count();
    row.param_bytes = std::size_t(row.param_count) * sizeof(S);
    rows.push_back(row);
  }
  return rows;
}

inline std::string bench_table(const std::vector<BenchRow>& rows) {
  std::ostringstream out;
  out << "num_scenes\tmean_forward_ms\tparam_count\tparam_bytes\n";
  for (const auto& r : rows) {
    out << r.num_scenes << '\t' << detail::format_sig9(r.mean_ms) << '\t' << r.param_count
        << '\t' << r.param_bytes << '\n';
  }
  return out.str();
}

namespace detail {

template <typename S>
MatX<S> normalize_range(const MatX<S>& m, S lo, S hi) {
  if (!(hi > lo)) return MatX<S>::Zero(m.rows(), m.cols());
  return ((m.array() - lo) / (hi - lo)).matrix();
}

template <typename S>
MatX<S> min_max_normalize(const MatX<S>& m) {
  return normalize_range(m, m.minCoeff(), m.maxCoeff());
}

}  // namespace detail

/// Writes last-layer encoder heatmaps (both branches, upsampled to the input
/// size) and per-scene position-branch decoder response maps for each image,
/// plus a ranking report ordered by each map's total response mass. Returns
/// the written file paths; heatmaps are normalized into [0,1] — encoder maps
/// per map, decoder maps jointly per image so relative scene strength shows.
template <typename S>
std::vector<std::string> export_attention(const PoseModel<S>& model,
                                          const CentroidTable<S>& table,
                                          const std::vector<Image<double>>& images,
                                          const AugmentationConfig& aug,
                                          const std::string& out_dir) {
  namespace fs = std::filesystem;
  fs::create_directories(out_dir);
  std::vector<std::string> written;
  std::ostringstream ranking_report;
  for (std::size_t i = 0; i < images.size(); ++i) {
    const Image<double> img = augment(images[i], aug, false, nullptr);
    const auto maps = model.extract_attention(img.pixels.template cast<S>(), table);
    const std::string stem = "image" + std::to_string(i);

    const auto emit = [&](const std::string& name, const MatX<S>& grid) {
      const std::string path = (fs::path(out_dir) / (stem + "_" + name + ".pgm")).string();
      write_pgm(path, grid);
      written.push_back(path);
    };
    emit("encoder_x", detail::min_max_normalize(maps.encoder_x.back()));
    emit("encoder_q", detail::min_max_normalize(maps.encoder_q.back()));
    S dec_lo = std::numeric_limits<S>::infinity(), dec_hi = -dec_lo;
    for (const auto& g : maps.decoder_x) {
      dec_lo = std::min(dec_lo, g.minCoeff());
      dec_hi = std::max(dec_hi, g.maxCoeff());
    }
    for (int sc = 0; sc < int(maps.decoder_x.size()); ++sc) {
      emit("decoder_s" + std::to_string(sc),
           detail::normalize_range(maps.decoder_x[sc], dec_lo, dec_hi));
    }

    ranking_report << "image " << i << " ranking";
    for (int id : maps.ranking) ranking_report << ' ' << id;
    ranking_report << " mass";
    for (Eigen::Index r = 0; r < maps.scene_mass.size(); ++r) {
      ranking_report << ' ' << detail::format_sig9(double(maps.scene_mass[r]));
    }
    ranking_report << '\n';
  }
  const std::string report_path = (fs::path(out_dir) / "ranking.txt").string();
  std::ofstream out(report_path);
  if (!out) throw IoError("cannot write ranking report: " + report_path);
  out << ranking_report.str();
  written.push_back(report_path);
  return written;
}

}  // namespace c2fpose
