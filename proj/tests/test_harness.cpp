#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>

#include "c2fpose/harness.hpp"

using namespace c2fpose;
namespace fs = std::filesystem;

namespace {

struct TmpDir {
  fs::path path;
  explicit TmpDir(const std::string& name) : path(fs::path("tmp_" + name)) {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TmpDir() { fs::remove_all(path); }
  std::string file(const std::string& name) const { return (path / name).string(); }
};

std::string read_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE(bool(in));
  return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

ModelConfig tiny_config(int scenes, int kx, int kq, int layers) {
  ModelConfig cfg;
  cfg.num_scenes = scenes;
  cfg.token_dim = 16;
  cfg.layers = layers;
  cfg.heads = 2;
  cfg.mlp_hidden = 24;
  cfg.dropout = 0.0;
  cfg.k_x = kx;
  cfg.k_q = kq;
  cfg.head_hidden = 32;
  cfg.backbone = "tiny";
  return cfg;
}

AugmentationConfig identity_augment() {
  AugmentationConfig aug;
  aug.resize_short = 24;
  aug.crop = 24;
  aug.brightness = 0.0;
  aug.contrast = 0.0;
  aug.saturation = 0.0;
  return aug;
}

struct SynthTask {
  Dataset dataset;
  std::map<int, CentroidSet<double>> sets;
};

SynthTask make_task(const TmpDir& dir, int scenes, int per_scene, int kx, int kq,
                    std::uint64_t seed) {
  SynthTask task;
  task.dataset = generate_synthetic(scenes, per_scene, 24, seed, dir.file("data"));
  std::vector<int> ids;
  std::vector<Pose<double>> poses;
  for (const auto& s : task.dataset.samples) {
    ids.push_back(s.scene_id);
    poses.push_back(s.pose);
  }
  task.sets = build_centroid_sets(ids, poses, kx, kq, seed + 1);
  return task;
}

TrainConfig base_train_config(const std::string& out_dir, int kx, int kq) {
  TrainConfig cfg;
  cfg.k_x = kx;
  cfg.k_q = kq;
  cfg.augment = identity_augment();
  cfg.out_dir = out_dir;
  return cfg;
}

double window_mean(const std::vector<double>& v, std::size_t start, std::size_t len) {
  return std::accumulate(v.begin() + start, v.begin() + start + len, 0.0) / double(len);
}

}  // namespace

TEST_CASE("train config validation") {
  TrainConfig cfg;
  CHECK_NOTHROW(cfg.validate());
  auto reject = [](auto mutate) {
    TrainConfig c;
    mutate(c);
    CHECK_THROWS_AS(c.validate(), ConfigError);
  };
  reject([](TrainConfig& c) { c.epochs = -1; });
  reject([](TrainConfig& c) { c.batch_size = 0; });
  reject([](TrainConfig& c) { c.lr = 0.0; });
  reject([](TrainConfig& c) { c.beta1 = 1.0; });
  reject([](TrainConfig& c) { c.beta2 = -0.1; });
  reject([](TrainConfig& c) { c.eps = 0.0; });
  reject([](TrainConfig& c) { c.halve_every = -2; });
  reject([](TrainConfig& c) { c.checkpoint_interval = -1; });
  reject([](TrainConfig& c) { c.grad_clip = -0.5; });
  reject([](TrainConfig& c) { c.augment.crop = 0; });
}

TEST_CASE("adam matches the closed form update") {
  ad::Param<double> p("p", (MatX<double>(1, 2) << 1.0, -2.0).finished());
  const MatX<double> g = (MatX<double>(1, 2) << 0.5, -0.25).finished();
  const double lr = 0.1, eps = 1e-10;
  Adam<double> adam(0.9, 0.999, eps);

  p.grad = g;
  adam.step({&p}, lr);
  // After one step both bias-corrected moments reduce to g and g^2.
  for (int j = 0; j < 2; ++j) {
    const double expect = (j == 0 ? 1.0 : -2.0) - lr * g(0, j) / (std::abs(g(0, j)) + eps);
    CHECK(p.value(0, j) == doctest::Approx(expect).epsilon(1e-14));
  }

  // A constant gradient keeps the corrected moments at g and g^2 forever.
  const MatX<double> after_one = p.value;
  p.grad = g;
  adam.step({&p}, lr);
  for (int j = 0; j < 2; ++j) {
    const double expect = after_one(0, j) - lr * g(0, j) / (std::abs(g(0, j)) + eps);
    CHECK(p.value(0, j) == doctest::Approx(expect).epsilon(1e-12));
  }
  CHECK(adam.steps() == 2);
}

TEST_CASE("gradient clipping rescales to the global norm limit") {
  ad::Param<double> a("a", MatX<double>::Zero(1, 2));
  ad::Param<double> b("b", MatX<double>::Zero(1, 1));
  a.grad << 3.0, 0.0;
  b.grad << 4.0;  // global norm 5
  clip_gradients<double>({&a, &b}, 2.5);
  CHECK(a.grad(0, 0) == doctest::Approx(1.5).epsilon(1e-12));
  CHECK(b.grad(0, 0) == doctest::Approx(2.0).epsilon(1e-12));
  const double norm = std::sqrt(a.grad.squaredNorm() + b.grad.squaredNorm());
  CHECK(norm == doctest::Approx(2.5).epsilon(1e-12));

  const MatX<double> keep_a = a.grad, keep_b = b.grad;
  clip_gradients<double>({&a, &b}, 100.0);
  CHECK(a.grad == keep_a);
  CHECK(b.grad == keep_b);
}

TEST_CASE("zero epochs leaves the checkpoint at initialization") {
  TmpDir dir("harness_zero_epochs");
  SynthTask task = make_task(dir, 2, 3, 1, 1, 5);
  ModelConfig mc = tiny_config(2, 1, 1, 1);
  PoseModel<double> model(mc, 77);
  LossParams<double> loss_params;
  TrainConfig cfg = base_train_config(dir.file("run"), 1, 1);
  cfg.epochs = 0;

  std::ostringstream log;
  TrainResult result = train(model, loss_params, task.dataset, task.sets, cfg, log);
  CHECK(result.steps == 0);
  CHECK(result.loss_history.empty());
  CHECK(result.lr_schedule.empty());
  CHECK(result.epochs_run == 0);
  CHECK(log.str().empty());

  auto loaded = load_checkpoint<double>(result.final_checkpoint);
  PoseModel<double> fresh(mc, 77);
  const auto& lp = loaded.model->store().all();
  const auto& fp = fresh.store().all();
  REQUIRE(lp.size() == fp.size());
  for (std::size_t i = 0; i < lp.size(); ++i) {
    CHECK(lp[i]->name == fp[i]->name);
    CHECK(lp[i]->value == fp[i]->value);
  }
}

TEST_CASE("learning rate schedule halves at epoch intervals and stop callback ends early") {
  TmpDir dir("harness_schedule");
  SynthTask task = make_task(dir, 1, 2, 1, 1, 9);
  ModelConfig mc = tiny_config(1, 1, 1, 1);
  mc.token_dim = 8;
  mc.mlp_hidden = 8;
  mc.head_hidden = 8;
  PoseModel<double> model(mc, 3);
  LossParams<double> loss_params;
  TrainConfig cfg = base_train_config(dir.file("run"), 1, 1);
  cfg.epochs = 5;
  cfg.halve_every = 2;

  std::ostringstream log;
  TrainResult result = train(model, loss_params, task.dataset, task.sets, cfg, log);
  REQUIRE(result.lr_schedule.size() == 5);
  CHECK(result.lr_schedule[0] == cfg.lr);
  CHECK(result.lr_schedule[1] == cfg.lr);
  CHECK(result.lr_schedule[2] == cfg.lr / 2);
  CHECK(result.lr_schedule[3] == cfg.lr / 2);
  CHECK(result.lr_schedule[4] == cfg.lr / 4);
  CHECK(result.steps == 5);  // 2 samples, batch 8 -> one step per epoch
  CHECK(result.epochs_run == 5);

  PoseModel<double> model2(mc, 3);
  LossParams<double> loss_params2;
  cfg.out_dir = dir.file("run_stop");
  std::ostringstream log2;
  TrainResult stopped = train(model2, loss_params2, task.dataset, task.sets, cfg, log2,
                              [](int epoch) { return epoch >= 3; });
  CHECK(stopped.epochs_run == 3);
  CHECK(stopped.lr_schedule.size() == 3);
  CHECK(fs::exists(stopped.final_checkpoint));
}

TEST_CASE("step zero loss matches the uniform classifier baseline") {
  TmpDir dir("harness_step0");
  SynthTask task = make_task(dir, 3, 6, 2, 2, 11);
  ModelConfig mc = tiny_config(3, 2, 2, 1);

  // Measure L_p at initialization on unaugmented images (the train-mode
  // pipeline is the identity here: resize 24 -> crop 24, zero jitter).
  double lp_init = 0.0;
  {
    PoseModel<double> probe(mc, 42);
    LossParams<double> lp;
    const CentroidTable<double> table = make_centroid_table<double>(task.sets, mc);
    std::vector<int> ids;
    std::vector<Pose<double>> poses;
    for (const auto& s : task.dataset.samples) {
      ids.push_back(s.scene_id);
      poses.push_back(s.pose);
    }
    const auto labels = assign_labels(ids, poses, task.sets);
    for (std::size_t i = 0; i < task.dataset.samples.size(); ++i) {
      const auto& sample = task.dataset.samples[i];
      const Image<double> img = read_ppm<double>(sample.image_path);
      nn::LeafCache<double> cache;
      ForwardOptions opts;
      opts.train = true;
      opts.forced_scene = sample.scene_id;
      opts.forced_kx = labels[i].position_label;
      opts.forced_kq = labels[i].orientation_label;
      auto out = probe.forward(cache, img.pixels, table, opts);
      SupervisionTarget<double> target;
      target.position = sample.pose.position;
      target.orientation = sample.pose.orientation;
      target.scene = sample.scene_id;
      target.kx = labels[i].position_label;
      target.kq = labels[i].orientation_label;
      lp_init += multi_scene_loss(cache, out, target, lp).l_p;
    }
    lp_init /= double(task.dataset.samples.size());
  }

  PoseModel<double> model(mc, 42);
  LossParams<double> loss_params;
  TrainConfig cfg = base_train_config(dir.file("run"), 2, 2);
  cfg.epochs = 1;
  cfg.batch_size = 18;  // whole dataset in one step
  std::ostringstream log;
  TrainResult result = train(model, loss_params, task.dataset, task.sets, cfg, log);
  REQUIRE(result.loss_history.size() == 1);

  const double expect = std::log(3.0) + 2.0 * std::log(2.0) + lp_init;
  CHECK(std::abs(result.loss_history[0] - expect) <= 0.20 * expect);

  const std::string line = log.str();
  CHECK(line.rfind("epoch 0 step 0 total ", 0) == 0);
  CHECK(line.find(" s_x 0 s_q -3") != std::string::npos);
}

TEST_CASE("training is deterministic for a fixed seed") {
  TmpDir dir("harness_determinism");
  SynthTask task = make_task(dir, 2, 4, 1, 1, 21);
  ModelConfig mc = tiny_config(2, 1, 1, 1);

  auto run = [&](std::uint64_t train_seed, const std::string& out) {
    PoseModel<double> model(mc, 8);
    LossParams<double> loss_params;
    TrainConfig cfg = base_train_config(dir.file(out), 1, 1);
    cfg.epochs = 2;
    cfg.batch_size = 4;
    cfg.seed = train_seed;
    std::ostringstream log;
    return train(model, loss_params, task.dataset, task.sets, cfg, log);
  };

  TrainResult a = run(7, "a");
  TrainResult b = run(7, "b");
  REQUIRE(a.loss_history.size() == b.loss_history.size());
  for (std::size_t i = 0; i < a.loss_history.size(); ++i) {
    CHECK(a.loss_history[i] == b.loss_history[i]);
  }
  CHECK(read_bytes(a.final_checkpoint) == read_bytes(b.final_checkpoint));

  TrainResult c = run(8, "c");
  bool any_diff = false;
  for (std::size_t i = 0; i < a.loss_history.size(); ++i) {
    any_diff = any_diff || a.loss_history[i] != c.loss_history[i];
  }
  CHECK(any_diff);
}

TEST_CASE("smoothed training loss does not increase and interval checkpoints appear") {
  TmpDir dir("harness_descent");
  SynthTask task = make_task(dir, 2, 8, 1, 1, 31);
  ModelConfig mc = tiny_config(2, 1, 1, 1);
  PoseModel<double> model(mc, 13);
  LossParams<double> loss_params;
  TrainConfig cfg = base_train_config(dir.file("run"), 1, 1);
  cfg.epochs = 30;  // 16 samples, batch 8 -> 60 steps
  cfg.lr = 5e-4;
  cfg.checkpoint_interval = 15;

  std::ostringstream log;
  TrainResult result = train(model, loss_params, task.dataset, task.sets, cfg, log);
  REQUIRE(result.loss_history.size() == 60);

  const double w0 = window_mean(result.loss_history, 0, 20);
  const double w1 = window_mean(result.loss_history, 20, 20);
  const double w2 = window_mean(result.loss_history, 40, 20);
  CHECK(w1 <= w0 * 1.02);
  CHECK(w2 <= w1 * 1.02);
  CHECK(w2 < w0);

  CHECK(fs::exists(dir.file("run/checkpoint_epoch_15.bin")));
  CHECK(fs::exists(dir.file("run/checkpoint_epoch_30.bin")));
  CHECK(fs::exists(dir.file("run/checkpoint_final.bin")));
  // No updates happen between the last interval checkpoint and the final one.
  CHECK(read_bytes(dir.file("run/checkpoint_epoch_30.bin")) ==
        read_bytes(dir.file("run/checkpoint_final.bin")));

  const std::string text = log.str();
  CHECK(std::count(text.begin(), text.end(), '\n') == 60);
}

TEST_CASE("checkpoint round trip reproduces the evaluation report") {
  TmpDir dir("harness_roundtrip");
  SynthTask task = make_task(dir, 2, 4, 1, 1, 41);
  ModelConfig mc = tiny_config(2, 1, 1, 1);
  PoseModel<double> model(mc, 19);
  LossParams<double> loss_params;
  TrainConfig cfg = base_train_config(dir.file("run"), 1, 1);
  cfg.epochs = 2;
  std::ostringstream log;
  TrainResult result = train(model, loss_params, task.dataset, task.sets, cfg, log);

  const AugmentationConfig aug = identity_augment();
  const EvalReport direct = evaluate(model, task.dataset, task.sets, aug);
  auto loaded = load_checkpoint<double>(result.final_checkpoint);
  const EvalReport reloaded = evaluate(*loaded.model, task.dataset, task.sets, aug);
  CHECK(direct.to_text() == reloaded.to_text());

  const EvalReport again = evaluate(model, task.dataset, task.sets, aug);
  CHECK(direct.to_text() == again.to_text());
  CHECK(loaded.meta.centroid_hash == fnv1a64(format_centroid_sets(task.sets)));
}

TEST_CASE("evaluate scores a constant scene predictor at chance") {
  TmpDir dir("harness_constant");
  SynthTask task = make_task(dir, 4, 3, 1, 1, 51);
  ModelConfig mc = tiny_config(4, 1, 1, 1);
  PoseModel<double> model(mc, 23);
  // Identical queries force uniform scene log-probabilities; the argmax tie
  // always resolves to scene 0.
  auto& qx = model.store().at("queries_x").value;
  auto& qq = model.store().at("queries_q").value;
  for (int r = 1; r < qx.rows(); ++r) qx.row(r) = qx.row(0);
  for (int r = 1; r < qq.rows(); ++r) qq.row(r) = qq.row(0);

  const EvalReport report = evaluate(model, task.dataset, task.sets, identity_augment());
  CHECK(report.total == 12);
  CHECK(report.scene_accuracy == 0.25);
  CHECK(report.kx_accuracy == 0.25);  // gated on the scene being right, K=1
  CHECK(report.kq_accuracy == 0.25);
  REQUIRE(report.scenes.size() == 4);
  CHECK(report.scenes[0].scene_acc == 1.0);
  CHECK(report.scenes[1].scene_acc == 0.0);
  CHECK(report.scenes[0].kx_acc == 1.0);
  CHECK(report.scenes[1].kx_acc == 0.0);

  double mean_pos = 0, mean_ori = 0;
  for (const auto& row : report.scenes) {
    mean_pos += row.median_pos;
    mean_ori += row.median_ori;
  }
  CHECK(report.avg_median_pos == doctest::Approx(mean_pos / 4).epsilon(1e-15));
  CHECK(report.avg_median_ori == doctest::Approx(mean_ori / 4).epsilon(1e-15));
}

TEST_CASE("evaluate is exact for a perfect constant-pose model") {
  TmpDir dir("harness_perfect");
  fs::create_directories(dir.file("images"));
  std::mt19937_64 rng(61);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::ostringstream manifest;
  for (int i = 0; i < 5; ++i) {
    Image<double> img;
    img.h = img.w = 24;
    img.c = 3;
    img.pixels.resize(24 * 24, 3);
    for (Eigen::Index k = 0; k < img.pixels.size(); ++k) img.pixels.data()[k] = u(rng);
    const std::string name = "images/p" + std::to_string(i) + ".ppm";
    write_ppm(dir.file(name), img);
    manifest << "0 room train " << name << " 1.5 -0.25 8 1 0 0 0\n";
  }
  std::ofstream(dir.file("manifest.txt")) << manifest.str();
  Dataset dataset = load_dataset(dir.file("manifest.txt"));

  std::vector<int> ids(5, 0);
  std::vector<Pose<double>> poses(5, dataset.samples[0].pose);
  auto sets = build_centroid_sets(ids, poses, 1, 1, 3);

  ModelConfig mc = tiny_config(1, 1, 1, 1);
  PoseModel<double> model(mc, 29);
  model.store().at("head_x.fc2.w").value.setZero();
  model.store().at("head_x.fc2.b").value.setZero();
  model.store().at("head_q.fc2.w").value.setZero();
  model.store().at("head_q.fc2.b").value.setZero();

  const EvalReport report = evaluate(model, dataset, sets, identity_augment());
  REQUIRE(report.scenes.size() == 1);
  CHECK(report.scenes[0].median_pos == 0.0);
  CHECK(report.scenes[0].median_ori == 0.0);
  CHECK(report.scene_accuracy == 1.0);
  CHECK(report.kx_accuracy == 1.0);
  CHECK(report.kq_accuracy == 1.0);
  CHECK(report.avg_median_pos == 0.0);
  CHECK(report.avg_median_ori == 0.0);
}

TEST_CASE("evaluate excludes model scenes without samples and warns") {
  TmpDir dir("harness_empty_scene");
  SynthTask task = make_task(dir, 5, 2, 1, 1, 71);
  Dataset filtered = task.dataset;
  filtered.samples.erase(std::remove_if(filtered.samples.begin(), filtered.samples.end(),
                                        [](const LabeledSample& s) { return s.scene_id == 4; }),
                         filtered.samples.end());

  ModelConfig mc = tiny_config(5, 1, 1, 1);
  PoseModel<double> model(mc, 37);
  const EvalReport report = evaluate(model, filtered, task.sets, identity_augment());
  REQUIRE(report.empty_scenes.size() == 1);
  CHECK(report.empty_scenes[0] == 4);
  CHECK(report.scenes.size() == 4);
  CHECK(report.total == 8);
  CHECK(report.to_text().find("excluded_scene 4 no_samples") != std::string::npos);
}

TEST_CASE("train surfaces configuration mismatches before the first step") {
  TmpDir dir("harness_mismatch");
  SynthTask task = make_task(dir, 2, 2, 2, 1, 81);
  ModelConfig mc = tiny_config(2, 2, 1, 1);
  PoseModel<double> model(mc, 43);
  LossParams<double> loss_params;
  std::ostringstream log;

  TrainConfig wrong_k = base_train_config(dir.file("run"), 1, 1);
  wrong_k.epochs = 1;
  CHECK_THROWS_AS(train(model, loss_params, task.dataset, task.sets, wrong_k, log), ConfigError);

  TrainConfig wrong_crop = base_train_config(dir.file("run"), 2, 1);
  wrong_crop.epochs = 1;
  wrong_crop.augment.crop = 32;
  wrong_crop.augment.resize_short = 32;
  CHECK_THROWS_AS(train(model, loss_params, task.dataset, task.sets, wrong_crop, log),
                  ConfigError);

  ModelConfig small = tiny_config(1, 2, 1, 1);
  PoseModel<double> small_model(small, 43);
  TrainConfig ok = base_train_config(dir.file("run"), 2, 1);
  ok.epochs = 1;
  CHECK_THROWS_AS(train(small_model, loss_params, task.dataset, task.sets, ok, log),
                  ConfigError);

  Dataset empty;
  CHECK_THROWS_AS(train(model, loss_params, empty, task.sets, ok, log), EmptyInputError);

  CHECK_THROWS_AS(evaluate(model, task.dataset, task.sets, AugmentationConfig{}), ConfigError);
}

TEST_CASE("bench scaling reports requested scene counts with exact parameter sizes") {
  ModelConfig base = tiny_config(1, 1, 1, 1);
  const auto rows = bench_scaling<double>(base, {1, 3}, 2);
  REQUIRE(rows.size() == 2);
  CHECK(rows[0].num_scenes == 1);
  CHECK(rows[1].num_scenes == 3);
  for (const auto& row : rows) {
    ModelConfig cfg = base;
    cfg.num_scenes = row.num_scenes;
    CHECK(row.param_count == expected_param_count(cfg));
    CHECK(row.param_bytes == std::size_t(row.param_count) * sizeof(double));
    CHECK(row.mean_ms > 0.0);
  }
  CHECK(rows[1].param_count > rows[0].param_count);

  CHECK_THROWS_AS(bench_scaling<double>(base, {2}, 0), ConfigError);
  CHECK_THROWS_AS(bench_scaling<double>(base, {0}, 1), ConfigError);
}

TEST_CASE("bench table renders delimited rows") {
  BenchRow row;
  row.num_scenes = 4;
  row.mean_ms = 1.5;
  row.param_count = 10;
  row.param_bytes = 80;
  CHECK(bench_table({row}) ==
        "num_scenes\tmean_forward_ms\tparam_count\tparam_bytes\n4\t1.5\t10\t80\n");
}

TEST_CASE("export attention writes heatmaps and a ranking permutation") {
  TmpDir dir("harness_attend");
  ModelConfig mc = tiny_config(3, 1, 1, 2);
  PoseModel<double> model(mc, 53);

  std::mt19937_64 rng(54);
  std::normal_distribution<double> g(0.0, 1.0);
  CentroidTable<double> table;
  for (int sc = 0; sc < 3; ++sc) {
    MatX<double> pos(1, 3), ori(1, 4);
    pos << g(rng), g(rng), g(rng);
    Quaternion<double> q{g(rng), g(rng), g(rng), g(rng)};
    ori = normalize_canonical(q).coeffs().transpose();
    table.position.push_back(pos);
    table.orientation.push_back(ori);
  }

  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<Image<double>> images;
  for (int i = 0; i < 2; ++i) {
    Image<double> img;
    img.h = img.w = 32;
    img.c = 3;
    img.pixels.resize(32 * 32, 3);
    for (Eigen::Index k = 0; k < img.pixels.size(); ++k) img.pixels.data()[k] = u(rng);
    images.push_back(img);
  }

  const auto written =
      export_attention(model, table, images, identity_augment(), dir.file("maps"));
  CHECK(written.size() == 2 * (3 + 2) + 1);  // N decoder + 2 encoder maps per image + ranking
  for (int i = 0; i < 2; ++i) {
    const std::string stem = dir.file("maps/image" + std::to_string(i));
    CHECK(fs::exists(stem + "_encoder_x.pgm"));
    CHECK(fs::exists(stem + "_encoder_q.pgm"));
    for (int sc = 0; sc < 3; ++sc) {
      CHECK(fs::exists(stem + "_decoder_s" + std::to_string(sc) + ".pgm"));
    }
  }

  const MatX<double> enc = read_pgm<double>(dir.file("maps/image0_encoder_x.pgm"));
  CHECK(enc.rows() == 24);  // upsampled to the model input size
  CHECK(enc.cols() == 24);
  CHECK(enc.minCoeff() == 0.0);  // min-max normalized
  CHECK(enc.maxCoeff() == 1.0);
  const MatX<double> dec = read_pgm<double>(dir.file("maps/image0_decoder_s0.pgm"));
  CHECK(dec.rows() == 6);  // raw activation-map resolution
  CHECK(dec.cols() == 6);
  CHECK(dec.minCoeff() >= 0.0);
  CHECK(dec.maxCoeff() <= 1.0);

  std::ifstream ranking(dir.file("maps/ranking.txt"));
  REQUIRE(bool(ranking));
  std::string line;
  int lines = 0;
  while (std::getline(ranking, line)) {
    std::istringstream row(line);
    std::string word;
    int idx;
    row >> word >> idx >> word;
    REQUIRE(word == "ranking");
    std::vector<int> ids(3);
    row >> ids[0] >> ids[1] >> ids[2];
    std::vector<int> sorted = ids;
    std::sort(sorted.begin(), sorted.end());
    CHECK(sorted == std::vector<int>{0, 1, 2});
    row >> word;
    REQUIRE(word == "mass");
    std::vector<double> mass(3);  // reported in scene-id order
    row >> mass[0] >> mass[1] >> mass[2];
    CHECK(mass[ids[0]] >= mass[ids[1]]);
    CHECK(mass[ids[1]] >= mass[ids[2]]);
    ++lines;
  }
  CHECK(lines == 2);
}
