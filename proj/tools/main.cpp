// Command-line entry point: reproducible dataset generation, training,
// sweeps and calibration studies with JSON configs and CSV outputs.
//
// Exit codes: 0 success, 2 configuration error, 3 numerical failure.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "calbound/bounds.hpp"
#include "calbound/calibration.hpp"
#include "calbound/csv.hpp"
#include "calbound/error.hpp"
#include "calbound/experiments.hpp"
#include "calbound/model.hpp"
#include "calbound/rng.hpp"
#include "calbound/synthdata.hpp"
#include "calbound/trainer.hpp"

namespace {

using calbound::DenseMatrix;
using nlohmann::json;
namespace fs = std::filesystem;
namespace cb = calbound;

struct CommonOptions {
  std::string config_path;
  std::string out_dir = "calbound_out";
  std::optional<std::uint64_t> seed;
  std::size_t jobs = 1;
  bool small = false;
};

std::uint64_t resolve_seed(const CommonOptions& opts, const json& config) {
  if (opts.seed) return *opts.seed;
  if (config.contains("seed")) return config.at("seed").get<std::uint64_t>();
  if (const char* env = std::getenv("CALBOUND_SEED")) return std::stoull(env);
  return 0;
}

json load_config(const std::string& path) {
  if (path.empty()) return json::object();
  std::ifstream in(path);
  if (!in) throw cb::InvalidSpec("cannot open config file " + path);
  json j;
  in >> j;
  if (!j.is_object()) throw cb::InvalidSpec("config root must be a JSON object");
  return j;
}

void merge_shift_spec(cb::synthdata::ShiftSpec& spec, const json& j) {
  if (!j.contains("shift_spec")) return;
  const json& s = j.at("shift_spec");
  if (s.contains("total_dims")) spec.total_dims = s.at("total_dims").get<std::size_t>();
  if (s.contains("block1_dims")) spec.block1_dims = s.at("block1_dims").get<std::size_t>();
  if (s.contains("block2_dims")) spec.block2_dims = s.at("block2_dims").get<std::size_t>();
  if (s.contains("noise_dims")) spec.noise_dims = s.at("noise_dims").get<std::size_t>();
  if (s.contains("label_flip_rate")) spec.label_flip_rate = s.at("label_flip_rate").get<double>();
  if (s.contains("ood_mean_shift")) spec.ood_mean_shift = s.at("ood_mean_shift").get<double>();
  if (s.contains("ood_scale")) spec.ood_scale = s.at("ood_scale").get<double>();
  if (s.contains("class_separation"))
    spec.class_separation = s.at("class_separation").get<double>();
  if (s.contains("n_id_train")) spec.sizes.id_train = s.at("n_id_train").get<std::size_t>();
  if (s.contains("n_id_test")) spec.sizes.id_test = s.at("n_id_test").get<std::size_t>();
  if (s.contains("n_ood_test")) spec.sizes.ood_test = s.at("n_ood_test").get<std::size_t>();
}

void merge_train_config(cb::trainer::TrainConfig& cfg, const json& j) {
  if (j.contains("learning_rate")) cfg.learning_rate = j.at("learning_rate").get<double>();
  if (j.contains("epochs")) cfg.epochs = j.at("epochs").get<std::size_t>();
  if (j.contains("batch_size")) cfg.batch_size = j.at("batch_size").get<std::size_t>();
  if (j.contains("lambda_oc")) cfg.lambda_oc = j.at("lambda_oc").get<double>();
  if (j.contains("lambda_sd")) cfg.lambda_sd = j.at("lambda_sd").get<double>();
  if (j.contains("lambda_svd")) cfg.lambda_svd = j.at("lambda_svd").get<double>();
  if (j.contains("base_loss"))
    cfg.base_loss = j.at("base_loss").get<std::string>() == "mse" ? cb::losses::BaseLoss::mse
                                                                  : cb::losses::BaseLoss::bce;
  if (j.contains("label_smoothing")) cfg.label_smoothing = j.at("label_smoothing").get<double>();
  if (j.contains("sd_mode"))
    cfg.sd_mode = j.at("sd_mode").get<std::string>() == "ema" ? cb::trainer::SdMode::ema
                                                              : cb::trainer::SdMode::ban;
  if (j.contains("optimizer"))
    cfg.optimizer = j.at("optimizer").get<std::string>() == "sgd"
                        ? cb::trainer::Optimizer::sgd
                        : cb::trainer::Optimizer::sgd_momentum;
  if (j.contains("momentum")) cfg.momentum = j.at("momentum").get<double>();
  if (j.contains("weight_decay")) cfg.weight_decay = j.at("weight_decay").get<double>();
  if (j.contains("ema_alpha_start")) cfg.ema.alpha_start = j.at("ema_alpha_start").get<double>();
  if (j.contains("ema_alpha_target"))
    cfg.ema.alpha_target = j.at("ema_alpha_target").get<double>();
  if (j.contains("ema_warmup_fraction"))
    cfg.ema.warmup_fraction = j.at("ema_warmup_fraction").get<double>();
  if (j.contains("ema_update_every"))
    cfg.ema.update_every = j.at("ema_update_every").get<std::size_t>();
}

void write_run_manifest(const fs::path& out_dir, const std::string& command, const json& echo) {
  json manifest;
  manifest["command"] = command;
  manifest["version"] = cb::experiments::kVersionTag;
  manifest["config"] = echo;
  fs::create_directories(out_dir);
  std::ofstream out(out_dir / "manifest.json", std::ios::binary);
  out << manifest.dump(2) << "\n";
}

int cmd_gen_data(const CommonOptions& opts) {
  const json config = load_config(opts.config_path);
  cb::synthdata::ShiftSpec spec =
      opts.small ? cb::synthdata::ShiftSpec::small_profile(0) : cb::synthdata::ShiftSpec{};
  merge_shift_spec(spec, config);
  spec.seed = resolve_seed(opts, config);
  spec.validate();  // no partial files on a malformed spec

  const cb::synthdata::ShiftedDataset data = cb::synthdata::generate(spec);
  const fs::path out_dir(opts.out_dir);
  cb::synthdata::save_dataset(data, spec, out_dir);
  write_run_manifest(out_dir, "gen-data",
                     json::parse(cb::synthdata::spec_to_json_string(spec)));
  std::cout << "wrote dataset (" << spec.sizes.id_train << "/" << spec.sizes.id_test << "/"
            << spec.sizes.ood_test << " samples, " << spec.total_dims << " dims) to "
            << out_dir.string() << "\n";
  return 0;
}

int cmd_train(const CommonOptions& opts, double lambda_oc, double lambda_sd,
              const std::string& data_dir) {
  const json config = load_config(opts.config_path);
  const std::uint64_t seed = resolve_seed(opts, config);

  cb::synthdata::ShiftSpec spec =
      opts.small ? cb::synthdata::ShiftSpec::small_profile(0) : cb::synthdata::ShiftSpec{};
  merge_shift_spec(spec, config);

  cb::trainer::TrainConfig cfg;
  merge_train_config(cfg, config);
  if (lambda_oc >= 0.0) cfg.lambda_oc = lambda_oc;
  if (lambda_sd >= 0.0) cfg.lambda_sd = lambda_sd;
  cfg.seed = cb::derive_seed(seed, 0x5452414EULL);
  cfg.validate();

  cb::synthdata::ShiftedDataset data;
  if (!data_dir.empty()) {
    auto loaded = cb::synthdata::load_dataset(data_dir);
    data = std::move(loaded.first);
    spec = loaded.second;
  } else {
    spec.seed = cb::derive_seed(seed, 0x44415441ULL);
    data = cb::synthdata::generate(spec);
  }

  cb::model::MlpShape shape{spec.total_dims, 64, 32};
  if (config.contains("hidden1")) shape.hidden1 = config.at("hidden1").get<std::size_t>();
  if (config.contains("hidden2")) shape.hidden2 = config.at("hidden2").get<std::size_t>();
  const std::size_t n_bins =
      config.contains("n_bins") ? config.at("n_bins").get<std::size_t>() : 15;

  cb::trainer::MlpTrainResult trained;
  if (cfg.sd_mode == cb::trainer::SdMode::ban && cfg.lambda_sd > 0.0) {
    cb::trainer::MlpTrainResult gen1 = cb::trainer::ban_generation(cfg, data, shape, nullptr, 1);
    trained = cb::trainer::ban_generation(cfg, data, shape, &gen1.params, 2);
  } else {
    trained = cb::trainer::train_mlp(cfg, data, shape, nullptr);
  }

  const fs::path out_dir(opts.out_dir);
  fs::create_directories(out_dir);
  {
    std::ofstream out(out_dir / "checkpoint.json", std::ios::binary);
    out << cb::model::mlp_to_json(trained.params);
  }
  if (cfg.lambda_sd > 0.0) {
    std::ofstream out(out_dir / "teacher_checkpoint.json", std::ios::binary);
    out << cb::model::mlp_to_json(trained.teacher);
  }

  std::vector<std::string> history_rows;
  for (std::size_t e = 0; e < trained.history.epochs.size(); ++e) {
    const auto& st = trained.history.epochs[e];
    auto comp = [&](const char* key) {
      const auto it = st.components.find(key);
      return cb::csv::format_double(it == st.components.end() ? 0.0 : it->second);
    };
    history_rows.push_back(cb::csv::join_row(
        {std::to_string(e + 1), cb::csv::format_double(st.loss), comp("base"), comp("oc"),
         comp("sd"), cb::csv::format_double(st.id_train_ece),
         cb::csv::format_double(st.id_test_ece), cb::csv::format_double(st.id_test_accuracy),
         cb::csv::format_double(st.sigma_min)}));
  }
  cb::csv::write_file(out_dir / "history.csv",
                      "epoch,loss,base,oc,sd,id_train_ece,id_test_ece,id_test_accuracy,sigma_min",
                      history_rows);

  const cb::bounds::BoundReport report = cb::bounds::evaluate_bound_sides(
      cb::bounds::make_mlp_eval(trained.params), data, n_bins);
  cb::csv::write_file(
      out_dir / "bound_report.csv",
      "sigma_min,sigma_min_raw,inv_sigma_term,id_cal_proxy,id_ece,id_accuracy,ood_mse,ood_ece,"
      "ood_accuracy,ood_sharpness,lhs_cal,lhs_cls",
      {cb::csv::join_row(
          {cb::csv::format_double(report.sigma_min), cb::csv::format_double(report.sigma_min_raw),
           cb::csv::format_double(report.inv_sigma_term),
           cb::csv::format_double(report.id_cal_proxy), cb::csv::format_double(report.id_ece),
           cb::csv::format_double(report.id_accuracy), cb::csv::format_double(report.ood_mse),
           cb::csv::format_double(report.ood_ece), cb::csv::format_double(report.ood_accuracy),
           cb::csv::format_double(report.ood_sharpness), cb::csv::format_double(report.lhs_cal),
           cb::csv::format_double(report.lhs_cls)})});

  json echo;
  echo["seed"] = seed;
  echo["train"] = json::parse(cb::experiments::train_config_to_json(cfg));
  echo["shift_spec"] = json::parse(cb::synthdata::spec_to_json_string(spec));
  echo["data_dir"] = data_dir;
  echo["n_bins"] = n_bins;
  echo["hidden1"] = shape.hidden1;
  echo["hidden2"] = shape.hidden2;
  echo["regime"] = cfg.lambda_oc > 0.0 ? (cfg.lambda_sd > 0.0 ? "oc+sd" : "oc")
                                       : (cfg.lambda_sd > 0.0 ? "sd" : "baseline");
  write_run_manifest(out_dir, "train", echo);
  std::cout << "trained model: id_ece=" << report.id_ece << " ood_ece=" << report.ood_ece
            << " sigma_min=" << report.sigma_min << "\n";
  return 0;
}

int cmd_sweep(const CommonOptions& opts) {
  const json config = load_config(opts.config_path);
  const std::uint64_t seed = resolve_seed(opts, config);
  cb::experiments::SweepSpec spec = opts.small ? cb::experiments::SweepSpec::small(seed)
                                               : cb::experiments::SweepSpec::defaults(seed);
  merge_shift_spec(spec.shift_spec, config);
  merge_train_config(spec.base_config, config);
  if (config.contains("lambda_oc_grid"))
    spec.lambda_oc_grid = config.at("lambda_oc_grid").get<std::vector<double>>();
  if (config.contains("lambda_sd_grid"))
    spec.lambda_sd_grid = config.at("lambda_sd_grid").get<std::vector<double>>();
  if (config.contains("seeds")) spec.seeds = config.at("seeds").get<std::vector<std::uint64_t>>();
  if (config.contains("sweep_sd_mode"))
    spec.sd_mode = config.at("sweep_sd_mode").get<std::string>() == "ema"
                       ? cb::trainer::SdMode::ema
                       : cb::trainer::SdMode::ban;
  if (config.contains("aggregator"))
    spec.aggregator =
        cb::experiments::aggregator_from_name(config.at("aggregator").get<std::string>());
  if (config.contains("n_bins")) spec.n_bins = config.at("n_bins").get<std::size_t>();
  spec.shape.inputs = spec.shift_spec.total_dims;
  spec.jobs = opts.jobs;

  const auto result = cb::experiments::run_bound_sweep(spec, opts.out_dir);
  std::cout << "sweep rows=" << result.rows.size()
            << " r(rhs,ood_ece)=" << result.correlations.r_rhs_ood_ece
            << " r(rhs,ood_mse)=" << result.correlations.r_rhs_ood_mse << "\n";
  return 0;
}

int cmd_ablation(const CommonOptions& opts) {
  const json config = load_config(opts.config_path);
  const std::uint64_t seed = resolve_seed(opts, config);
  cb::experiments::AblationSpec spec = opts.small ? cb::experiments::AblationSpec::small(seed)
                                                  : cb::experiments::AblationSpec::defaults(seed);
  merge_shift_spec(spec.shift_spec, config);
  merge_train_config(spec.base_config, config);
  if (config.contains("lambda_oc")) spec.lambda_oc = config.at("lambda_oc").get<double>();
  if (config.contains("lambda_sd")) spec.lambda_sd = config.at("lambda_sd").get<double>();
  if (config.contains("seeds")) spec.seeds = config.at("seeds").get<std::vector<std::uint64_t>>();
  spec.shape.inputs = spec.shift_spec.total_dims;
  spec.jobs = opts.jobs;

  const auto result = cb::experiments::run_ablation(spec, opts.out_dir);
  for (const auto& r : result.regimes) {
    std::cout << r.regime << ": sigma_min=" << r.sigma_min_mean << " id_ece=" << r.id_ece_mean
              << " ood_mse=" << r.ood_mse_mean << " ood_ece=" << r.ood_ece_mean << "\n";
  }
  return 0;
}

int cmd_spectrum(const CommonOptions& opts, std::size_t k) {
  const json config = load_config(opts.config_path);
  const std::uint64_t seed = resolve_seed(opts, config);
  cb::experiments::SpectrumSpec spec = opts.small ? cb::experiments::SpectrumSpec::small(seed)
                                                  : cb::experiments::SpectrumSpec::defaults(seed);
  spec.config.seed = seed;
  merge_shift_spec(spec.shift_spec, config);
  merge_train_config(spec.config, config);
  if (k > 0) spec.k = k;
  if (config.contains("projection_rank"))
    spec.projection_rank = config.at("projection_rank").get<std::size_t>();

  const auto result = cb::experiments::run_spectrum_study(spec, opts.out_dir);
  std::cout << "spectrum rows=" << result.constrained.size()
            << " frob_unconstrained=" << result.frob_gap_unconstrained
            << " frob_constrained=" << result.frob_gap_constrained << "\n";
  return 0;
}

int cmd_posthoc(const CommonOptions& opts) {
  const json config = load_config(opts.config_path);
  const std::uint64_t seed = resolve_seed(opts, config);
  cb::experiments::PosthocSpec spec = opts.small ? cb::experiments::PosthocSpec::small(seed)
                                                 : cb::experiments::PosthocSpec::defaults(seed);
  merge_shift_spec(spec.shift_spec, config);
  merge_train_config(spec.base_config, config);
  if (config.contains("lambda_sd")) spec.lambda_sd = config.at("lambda_sd").get<double>();
  if (config.contains("ls_epsilon")) spec.ls_epsilon = config.at("ls_epsilon").get<double>();
  if (config.contains("seeds")) spec.seeds = config.at("seeds").get<std::vector<std::uint64_t>>();
  spec.shape.inputs = spec.shift_spec.total_dims;
  spec.jobs = opts.jobs;

  const auto result = cb::experiments::run_posthoc_suite(spec, opts.out_dir);
  std::cout << "posthoc rows=" << result.rows.size() << "\n";
  return 0;
}

int cmd_calibrate(const CommonOptions& opts, const std::string& checkpoint_path,
                  const std::string& data_dir) {
  const json config = load_config(opts.config_path);
  const std::size_t n_bins =
      config.contains("n_bins") ? config.at("n_bins").get<std::size_t>() : 15;

  const cb::model::MlpParams params =
      cb::model::mlp_from_json(cb::csv::read_file(checkpoint_path));
  auto [data, spec] = cb::synthdata::load_dataset(data_dir);
  if (spec.total_dims != params.w1.rows())
    throw cb::SchemaMismatch("checkpoint input width vs dataset dims");

  const std::vector<double> logits = cb::model::mlp_logits(params, data.id_test.features);
  const cb::calibration::TemperatureFit fit = cb::calibration::fit_temperature(
      logits, data.id_test.labels, cb::calibration::default_temperature_grid(), n_bins);

  std::vector<double> probs(logits.size());
  for (std::size_t i = 0; i < logits.size(); ++i)
    probs[i] = 1.0 / (1.0 + std::exp(-logits[i]));
  std::vector<double> conf;
  std::vector<int> correct;
  cb::calibration::confidence_correctness(probs, data.id_test.labels, conf, correct);
  const auto bins = cb::calibration::reliability_bins(conf, correct, n_bins);

  const fs::path out_dir(opts.out_dir);
  fs::create_directories(out_dir);
  cb::calibration::save_reliability_csv(out_dir / "reliability.csv", bins);

  json report;
  report["tau"] = fit.tau;
  report["ece_before"] = fit.raw_ece;
  report["ece_after"] = fit.scaled_ece;
  report["n_bins"] = n_bins;
  {
    std::ofstream out(out_dir / "calibration.json", std::ios::binary);
    out << report.dump(2) << "\n";
  }
  json echo;
  echo["checkpoint"] = checkpoint_path;
  echo["data_dir"] = data_dir;
  echo["n_bins"] = n_bins;
  write_run_manifest(out_dir, "calibrate", echo);
  std::cout << "tau=" << fit.tau << " ece_before=" << fit.raw_ece
            << " ece_after=" << fit.scaled_ece << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"synthetic covariate-shift calibration laboratory"};
  app.require_subcommand(1);

  CommonOptions opts;
  std::uint64_t seed_flag = 0;
  bool seed_given = false;

  auto add_common = [&](CLI::App* cmd) {
    cmd->add_option("--config", opts.config_path, "JSON config file");
    cmd->add_option("--out", opts.out_dir, "output directory");
    cmd->add_option("--seed", seed_flag, "base seed")->each([&](const std::string&) {
      seed_given = true;
    });
    cmd->add_option("--jobs", opts.jobs, "worker count for sweep cells");
    cmd->add_flag("--small", opts.small, "small profile (d=100, N=1000)");
  };

  auto* gen = app.add_subcommand("gen-data", "generate the synthetic shifted dataset");
  add_common(gen);

  auto* train = app.add_subcommand("train", "train one model and evaluate the bound sides");
  add_common(train);
  double lambda_oc = -1.0, lambda_sd = -1.0;
  std::string data_dir;
  train->add_option("--lambda-oc", lambda_oc, "orthogonality constraint strength");
  train->add_option("--lambda-sd", lambda_sd, "self-distillation strength");
  train->add_option("--data", data_dir, "load dataset from a gen-data directory");

  auto* sweep = app.add_subcommand("sweep", "coefficient-grid sweep with bound evaluation");
  add_common(sweep);

  auto* ablation = app.add_subcommand("ablation", "four-regime comparison");
  add_common(ablation);

  auto* spectrum = app.add_subcommand("spectrum", "singular-spectrum comparison");
  add_common(spectrum);
  std::size_t k = 0;
  spectrum->add_option("--k", k, "number of trailing singular values");

  auto* posthoc = app.add_subcommand("posthoc", "post-hoc adjustment comparison");
  add_common(posthoc);

  auto* calibrate = app.add_subcommand("calibrate", "reliability table + temperature fit");
  add_common(calibrate);
  std::string checkpoint_path;
  std::string cal_data_dir;
  calibrate->add_option("--checkpoint", checkpoint_path, "checkpoint JSON")->required();
  calibrate->add_option("--data", cal_data_dir, "gen-data directory")->required();

  CLI11_PARSE(app, argc, argv);
  if (seed_given) opts.seed = seed_flag;

  try {
    if (gen->parsed()) return cmd_gen_data(opts);
    if (train->parsed()) return cmd_train(opts, lambda_oc, lambda_sd, data_dir);
    if (sweep->parsed()) return cmd_sweep(opts);
    if (ablation->parsed()) return cmd_ablation(opts);
    if (spectrum->parsed()) return cmd_spectrum(opts, k);
    if (posthoc->parsed()) return cmd_posthoc(opts);
    if (calibrate->parsed()) return cmd_calibrate(opts, checkpoint_path, cal_data_dir);
  } catch (const cb::InvalidSpec& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const cb::SchemaMismatch& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const nlohmann::json::exception& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const cb::DivergenceDetected& e) {
    std::cerr << "numerical failure: " << e.what() << "\n";
    return 3;
  } catch (const cb::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  }
  return 0;
}
