// pcdesc command-line interface. Tabular output is comma-separated with a
// header row; exit codes: 0 ok, 2 configuration, 3 parse, 4 numeric,
// 5 insufficient data.
#include "pcdesc/config.hpp"
#include "pcdesc/error.hpp"
#include "pcdesc/gradcheck.hpp"
#include "pcdesc/io.hpp"
#include "pcdesc/pipeline.hpp"
#include "pcdesc/scene.hpp"
#include "pcdesc/trainer.hpp"

#include <CLI11.hpp>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include <charconv>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <sstream>

namespace fs = std::filesystem;
using namespace pcdesc;

namespace {

std::string num(double v) {
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, end);
}

std::string hex(std::uint64_t v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

PipelineConfig config_from(const std::string& path) { return path.empty() ? PipelineConfig{} : load_config(path); }

struct Dataset {
  std::vector<io::ManifestEntry> entries;
  std::vector<PointCloud> clouds;
};

Dataset load_dataset(const fs::path& dir) {
  const fs::path manifest = dir / "manifest.csv";
  require(fs::exists(manifest), ErrorCode::Io, "dataset manifest not found: " + manifest.string());
  Dataset d;
  d.entries = io::load_manifest(manifest);
  require(!d.entries.empty(), ErrorCode::Configuration, "dataset manifest lists no clouds: " + manifest.string());
  for (const auto& e : d.entries) d.clouds.push_back(io::load_cloud(dir / e.file));
  return d;
}

std::string loss_log(const std::vector<train::StepRecord>& h, bool local) {
  std::ostringstream os;
  os << (local ? "step,epoch,lr,loss,desc,det,asr,skipped\n" : "step,epoch,lr,loss\n");
  for (const auto& r : h) {
    os << r.step << ',' << r.epoch << ',' << num(r.lr) << ',' << num(r.loss);
    if (local) os << ',' << num(r.desc) << ',' << num(r.det) << ',' << num(r.asr) << ',' << r.skipped;
    os << '\n';
  }
  return os.str();
}

fs::path checkpoint_path(const fs::path& out, int step) {
  fs::path p = out;
  p.replace_extension(".step" + std::to_string(step) + out.extension().string());
  return p;
}

std::vector<double> parse_list(const std::string& s, const char* what) {
  std::vector<double> out;
  std::stringstream ss(s);
  for (std::string item; std::getline(ss, item, ',');) {
    double v = 0.0;
    auto [end, ec] = std::from_chars(item.data(), item.data() + item.size(), v);
    require(ec == std::errc() && end == item.data() + item.size(), ErrorCode::Configuration,
            std::string("invalid ") + what + " value '" + item + "'");
    out.push_back(v);
  }
  require(!out.empty(), ErrorCode::Configuration, std::string("empty ") + what + " list");
  return out;
}

int cmd_synth(int count, int points, std::uint64_t seed, const std::string& out_dir, double spacing, double jitter) {
  require(count >= 1 && points >= 1, ErrorCode::Configuration, "synth: count and points must be >= 1");
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  require(!ec && fs::is_directory(out_dir), ErrorCode::Io, "cannot create output directory " + out_dir);
  const auto places = make_synthetic_places(static_cast<std::size_t>(count), static_cast<std::size_t>(points), seed,
                                            spacing, jitter);
  std::vector<io::ManifestEntry> manifest;
  for (const auto& p : places) {
    const std::string file = p.id + ".dhpc";
    io::save_cloud(fs::path(out_dir) / file, p.cloud);
    manifest.push_back({p.id, file, p.position.x(), p.position.y()});
  }
  const std::string text = io::encode_manifest(manifest);
  io::write_text(fs::path(out_dir) / "manifest.csv", text);
  std::cout << text;
  return 0;
}

int cmd_train_local(const std::string& cfg_path, const std::string& data, const std::string& out,
                    const std::string& log_path, const std::string& init) {
  const PipelineConfig cfg = config_from(cfg_path);
  const Dataset ds = load_dataset(data);
  nn::ModelParams<float> model =
      init.empty() ? nn::init_model<float>(cfg.arch, derive_seed(cfg.train.seed, 0x1417)) : io::load_model(init);
  const fs::path outp(out);
  auto ckpt = [&](int step, const nn::ModelParams<float>& m) { io::save_model(checkpoint_path(outp, step), m); };
  const auto hist = train::train_local(model, ds.clouds, cfg.train, cfg.loss, train::Checkpoint<float>(ckpt));
  io::save_model(outp, model);
  const std::string log = loss_log(hist, true);
  io::write_text(log_path.empty() ? fs::path(out + ".log.csv") : fs::path(log_path), log);
  std::cout << "steps,initial_loss,final_loss,model_hash\n"
            << hist.size() << ',' << (hist.empty() ? "nan" : num(hist.front().loss)) << ','
            << (hist.empty() ? "nan" : num(hist.back().loss)) << ',' << hex(nn::parameter_hash(model)) << '\n';
  return 0;
}

int cmd_train_global(const std::string& cfg_path, const std::string& data, const std::string& phase1,
                     const std::string& out, const std::string& log_path) {
  const PipelineConfig cfg = config_from(cfg_path);
  require(!phase1.empty() && fs::exists(phase1), ErrorCode::Configuration,
          "train-global requires an existing phase-1 model (--model): '" + phase1 + "'");
  nn::ModelParams<float> model = io::load_model(phase1);
  if (!cfg_path.empty()) {
    nn::ArchConfig a = cfg.arch;
    a.aggregate_points = model.arch.aggregate_points;
    require(a == model.arch, ErrorCode::Configuration, "config [arch] differs from the architecture stored in " + phase1);
    model.arch.aggregate_points = cfg.arch.aggregate_points;
  }
  const Dataset ds = load_dataset(data);
  std::vector<PlaceSample> places;
  for (std::size_t i = 0; i < ds.clouds.size(); ++i)
    places.push_back({ds.entries[i].id, ds.clouds[i], Eigen::Vector2d(ds.entries[i].x, ds.entries[i].y)});
  const std::uint64_t before = nn::parameter_hash(model, "encoder.");
  const fs::path outp(out);
  auto ckpt = [&](int step, const nn::ModelParams<float>& m) { io::save_model(checkpoint_path(outp, step), m); };
  const auto hist = train::train_global(model, places, cfg.global, cfg.loss, train::Checkpoint<float>(ckpt));
  const std::uint64_t after = nn::parameter_hash(model, "encoder.");
  io::save_model(outp, model);
  std::string log = loss_log(hist, false);
  io::write_text(log_path.empty() ? fs::path(out + ".log.csv") : fs::path(log_path), log);
  std::cout << "steps,initial_loss,final_loss,encoder_hash_before,encoder_hash_after,encoder_frozen\n"
            << hist.size() << ',' << (hist.empty() ? "nan" : num(hist.front().loss)) << ','
            << (hist.empty() ? "nan" : num(hist.back().loss)) << ',' << hex(before) << ',' << hex(after) << ','
            << (before == after ? "true" : "false") << '\n';
  return 0;
}

int cmd_extract(const std::string& cfg_path, const std::string& model_path, const std::string& cloud_path,
                std::optional<int> keypoints, std::optional<double> nms, const std::string& prefix) {
  PipelineConfig cfg = config_from(cfg_path);
  if (keypoints) cfg.eval.keypoints = *keypoints;
  if (nms) cfg.eval.nms_radius = *nms;
  cfg.eval.validate();
  const auto model = io::load_model(model_path);
  const PointCloud cloud = io::load_cloud(cloud_path);
  const pipeline::Features f = pipeline::compute_features(model, cloud, cfg.eval);

  std::ostringstream local;
  local << "index,saliency";
  for (Eigen::Index c = 0; c < f.ex.x.cols(); ++c) local << ",x" << c;
  local << '\n';
  for (Eigen::Index i = 0; i < f.ex.x.rows(); ++i) {
    local << i << ',' << num(f.ex.saliency(i, 0));
    for (Eigen::Index c = 0; c < f.ex.x.cols(); ++c) local << ',' << num(f.ex.x(i, c));
    local << '\n';
  }
  std::ostringstream kps;
  kps << "rank,index,score,x,y,z\n";
  for (std::size_t r = 0; r < f.keypoints.size(); ++r) {
    const auto& k = f.keypoints[r];
    const Point3& p = cloud[k.index];
    kps << r << ',' << k.index << ',' << num(k.score) << ',' << num(p.x()) << ',' << num(p.y()) << ',' << num(p.z()) << '\n';
  }
  std::ostringstream glob;
  for (Eigen::Index c = 0; c < f.ex.global.cols(); ++c) glob << (c ? "," : "") << 'g' << c;
  glob << '\n';
  for (Eigen::Index c = 0; c < f.ex.global.cols(); ++c) glob << (c ? "," : "") << num(f.ex.global(0, c));
  glob << '\n';
  io::write_text(prefix + ".local.csv", local.str());
  io::write_text(prefix + ".keypoints.csv", kps.str());
  io::write_text(prefix + ".global.csv", glob.str());
  std::cout << "points,descriptor_dim,keypoints,global_dim,degenerate\n"
            << cloud.size() << ',' << f.ex.x.cols() << ',' << f.keypoints.size() << ',' << f.ex.global.cols() << ','
            << (f.ex.degenerate ? "true" : "false") << '\n';
  return 0;
}

int cmd_register(const std::string& cfg_path, const std::string& model_path, const std::string& a_path,
                 const std::string& b_path, std::optional<double> truth_yaw, const std::string& truth_t,
                 std::optional<std::uint64_t> seed, std::optional<int> keypoints, std::optional<double> nms,
                 const std::string& mode) {
  PipelineConfig cfg = config_from(cfg_path);
  if (keypoints) cfg.eval.keypoints = *keypoints;
  if (nms) cfg.eval.nms_radius = *nms;
  if (!mode.empty()) cfg.eval.match_mode = reg::match_mode_from_string(mode);
  cfg.eval.validate();
  std::optional<RigidTransform> truth;
  if (truth_yaw || !truth_t.empty()) {
    Eigen::Vector3d t = Eigen::Vector3d::Zero();
    if (!truth_t.empty()) {
      const auto v = parse_list(truth_t, "translation");
      require(v.size() == 3, ErrorCode::Configuration, "--truth-t expects x,y,z");
      t = Eigen::Vector3d(v[0], v[1], v[2]);
    }
    truth = RigidTransform::from_yaw_deg(truth_yaw.value_or(0.0), t);
  }
  const auto model = io::load_model(model_path);
  const PointCloud A = io::load_cloud(a_path), B = io::load_cloud(b_path);
  const auto fa = pipeline::compute_features(model, A, cfg.eval), fb = pipeline::compute_features(model, B, cfg.eval);
  const auto o = pipeline::register_pair(fa, A, fb, B, cfg.eval, seed.value_or(cfg.eval.seed), truth);
  const auto& T = o.result.transform;
  std::cout << "matches,inliers,iterations,converged,rte,rre,success,r00,r01,r02,r10,r11,r12,r20,r21,r22,tx,ty,tz\n";
  std::cout << o.matches << ',' << o.result.inliers << ',' << o.result.iterations << ','
            << (o.result.converged ? "true" : "false") << ',' << (o.error ? num(o.error->rte) : "nan") << ','
            << (o.error ? num(o.error->rre) : "nan") << ',' << (o.success ? (*o.success ? "true" : "false") : "nan");
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c) std::cout << ',' << num(T.rotation(r, c));
  for (int d = 0; d < 3; ++d) std::cout << ',' << num(T.translation(d));
  std::cout << '\n';
  return 0;
}

int cmd_eval(const std::string& cfg_path, const std::string& model_path, const std::string& data,
             const std::string& task, const std::string& noise, const std::string& rotation,
             const std::string& downsample, const std::string& curve_path) {
  const PipelineConfig cfg = config_from(cfg_path);
  require(task == "repeatability" || task == "registration" || task == "retrieval", ErrorCode::Configuration,
          "unknown eval task '" + task + "' (repeatability|registration|retrieval)");
  const auto model = io::load_model(model_path);
  const Dataset ds = load_dataset(data);
  const std::vector<double> noises = noise.empty() ? std::vector<double>{cfg.eval.sigma} : parse_list(noise, "noise");
  std::vector<std::optional<double>> rotations;
  if (rotation.empty()) rotations.push_back(std::nullopt);
  else
    for (double r : parse_list(rotation, "rotation")) rotations.push_back(r);
  const std::vector<double> downs = downsample.empty() ? std::vector<double>{1.0} : parse_list(downsample, "downsample");

  std::vector<pipeline::Place> places;
  if (task == "retrieval")
    for (std::size_t i = 0; i < ds.clouds.size(); ++i)
      places.push_back({ds.entries[i].id, ds.clouds[i], Eigen::Vector3d(ds.entries[i].x, ds.entries[i].y, 0.0)});

  std::ostringstream curves;
  if (task == "repeatability") std::cout << "task,noise,rotation,downsample,pairs,repeatability\n";
  if (task == "registration")
    std::cout << "task,noise,rotation,downsample,pairs,success_rate,mean_rte,mean_rre,mean_iterations,repeatability\n";
  if (task == "retrieval") {
    std::cout << "task,noise,rotation,downsample,queries,database,recall_at_1,recall_at_1pct\n";
    curves << "noise,rotation,downsample,n,recall\n";
  }
  for (double s : noises)
    for (const auto& r : rotations)
      for (double a : downs) {
        const pipeline::Perturbation p{r, s, a};
        const std::string key = num(s) + ',' + (r ? num(*r) : std::string("uniform")) + ',' + num(a);
        if (task == "repeatability") {
          const auto row = pipeline::evaluate_repeatability(model, ds.clouds, p, cfg.eval);
          std::cout << task << ',' << key << ',' << row.pairs << ',' << num(row.mean) << '\n';
        } else if (task == "registration") {
          const auto row = pipeline::evaluate_registration(model, ds.clouds, p, cfg.eval);
          std::cout << task << ',' << key << ',' << row.pairs << ',' << num(row.success_rate) << ',' << num(row.mean_rte)
                    << ',' << num(row.mean_rre) << ',' << num(row.mean_iterations) << ','
                    << num(row.mean_repeatability) << '\n';
        } else {
          const auto row = pipeline::evaluate_retrieval(model, places, p, cfg.eval);
          std::cout << task << ',' << key << ',' << row.queries << ',' << row.database << ',' << num(row.recall_at_1)
                    << ',' << num(row.recall_at_1pct) << '\n';
          for (std::size_t n = 0; n < row.curve.size(); ++n) curves << key << ',' << n + 1 << ',' << num(row.curve[n]) << '\n';
        }
      }
  if (!curve_path.empty() && task == "retrieval") io::write_text(curve_path, curves.str());
  return 0;
}

int cmd_gradcheck(std::uint64_t seed, double h, double tol) {
  gradcheck::Options opt;
  opt.seed = seed;
  opt.h = h;
  opt.tolerance = tol;
  const auto reports = gradcheck::run_all(opt);
  std::cout << "block,parameter,entries,max_rel_error,status\n";
  for (const auto& r : reports)
    std::cout << r.block << ',' << r.parameter << ',' << r.entries << ',' << num(r.max_rel_error) << ','
              << (r.passed ? "pass" : "FAIL") << '\n';
  if (!gradcheck::all_passed(reports)) fail(ErrorCode::NumericError, "gradient check failed");
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  // stdout carries the CSV tables; diagnostics go to stderr.
  spdlog::set_default_logger(spdlog::stderr_color_st("pcdesc"));
  CLI::App app{"pcdesc: local and global 3D descriptors, training and evaluation"};
  app.require_subcommand(1);
  std::string cfg_path;
  int status = 0;

  auto* synth = app.add_subcommand("synth", "generate synthetic scenes with planted positions");
  int count = 20, points = 1024;
  std::uint64_t seed = 1;
  std::string out_dir;
  double spacing = 100.0, jitter = 5.0;
  synth->add_option("--count", count, "number of scenes")->capture_default_str();
  synth->add_option("--points", points, "points per scene")->capture_default_str();
  synth->add_option("--seed", seed, "random seed")->capture_default_str();
  synth->add_option("--spacing", spacing, "grid spacing of planted positions (m)")->capture_default_str();
  synth->add_option("--jitter", jitter, "position jitter (m)")->capture_default_str();
  synth->add_option("--out", out_dir, "output directory")->required();

  auto* tl = app.add_subcommand("train-local", "phase 1: encoder + detector");
  std::string data, out, log_path, init, model_path;
  tl->add_option("--config", cfg_path, "config file");
  tl->add_option("--data", data, "dataset directory with manifest.csv")->required();
  tl->add_option("--out", out, "output model file")->required();
  tl->add_option("--log", log_path, "loss log CSV (default <out>.log.csv)");
  tl->add_option("--init", init, "start from this model instead of a fresh one");

  auto* tg = app.add_subcommand("train-global", "phase 2: attention + NetVLAD with a frozen encoder");
  tg->add_option("--config", cfg_path, "config file");
  tg->add_option("--data", data, "dataset directory with manifest.csv")->required();
  tg->add_option("--model", model_path, "phase-1 model");
  tg->add_option("--out", out, "output model file")->required();
  tg->add_option("--log", log_path, "loss log CSV (default <out>.log.csv)");

  auto* ex = app.add_subcommand("extract", "descriptors, saliency, keypoints and global descriptor");
  std::string cloud_path, prefix;
  std::optional<int> keypoints;
  std::optional<double> nms;
  ex->add_option("--config", cfg_path, "config file");
  ex->add_option("--model", model_path, "model file")->required();
  ex->add_option("--cloud", cloud_path, "point cloud (.dhpc or .xyz)")->required();
  ex->add_option("--keypoints", keypoints, "number of keypoints");
  ex->add_option("--nms", nms, "non-maximum suppression radius (m)");
  ex->add_option("--out", prefix, "output prefix")->required();

  auto* rg = app.add_subcommand("register", "estimate the rigid transform mapping cloud A onto cloud B");
  std::string a_path, b_path, truth_t, mode;
  std::optional<double> truth_yaw;
  std::optional<std::uint64_t> rseed;
  rg->add_option("--config", cfg_path, "config file");
  rg->add_option("--model", model_path, "model file")->required();
  rg->add_option("--a", a_path, "source cloud")->required();
  rg->add_option("--b", b_path, "target cloud")->required();
  rg->add_option("--truth-yaw", truth_yaw, "ground-truth yaw (deg) for RTE/RRE");
  rg->add_option("--truth-t", truth_t, "ground-truth translation x,y,z (m)");
  rg->add_option("--seed", rseed, "RANSAC seed (default eval.seed)");
  rg->add_option("--keypoints", keypoints, "number of keypoints");
  rg->add_option("--nms", nms, "non-maximum suppression radius (m)");
  rg->add_option("--mode", mode, "matching mode: nn or mutual");

  auto* ev = app.add_subcommand("eval", "metric tables with noise / rotation / downsampling sweeps");
  std::string task, noise, rotation, downsample, curve_path;
  ev->add_option("--config", cfg_path, "config file");
  ev->add_option("--model", model_path, "model file")->required();
  ev->add_option("--data", data, "dataset directory with manifest.csv")->required();
  ev->add_option("--task", task, "repeatability | registration | retrieval")->required();
  ev->add_option("--noise", noise, "comma-separated noise sigmas (m)");
  ev->add_option("--rotation", rotation, "comma-separated fixed yaw angles (deg)");
  ev->add_option("--downsample", downsample, "comma-separated factors alpha >= 1 (keeps N/alpha points)");
  ev->add_option("--curve", curve_path, "retrieval only: write the top-N recall curve CSV here");

  auto* gc = app.add_subcommand("gradcheck", "finite-difference check of every layer and loss");
  double h = 1e-5, tol = 1e-4;
  gc->add_option("--seed", seed, "random seed")->capture_default_str();
  gc->add_option("--step", h, "central difference step")->capture_default_str();
  gc->add_option("--tolerance", tol, "max relative error")->capture_default_str();

  auto* df = app.add_subcommand("defaults", "print the default configuration file");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  try {
    if (*synth) status = cmd_synth(count, points, seed, out_dir, spacing, jitter);
    else if (*tl) status = cmd_train_local(cfg_path, data, out, log_path, init);
    else if (*tg) status = cmd_train_global(cfg_path, data, model_path, out, log_path);
    else if (*ex) status = cmd_extract(cfg_path, model_path, cloud_path, keypoints, nms, prefix);
    else if (*rg) status = cmd_register(cfg_path, model_path, a_path, b_path, truth_yaw, truth_t, rseed, keypoints, nms, mode);
    else if (*ev) status = cmd_eval(cfg_path, model_path, data, task, noise, rotation, downsample, curve_path);
    else if (*gc) status = cmd_gradcheck(seed, h, tol);
    else if (*df) std::cout << format_config(PipelineConfig{});
  } catch (const Error& e) {
    spdlog::error("{}: {}", to_string(e.code()), e.what());
    return exit_code(e.code());
  } catch (const std::exception& e) {
    spdlog::error("{}", e.what());
    return 1;
  }
  return status;
}
