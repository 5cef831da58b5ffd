// Command-line front end: config-driven training (density estimation,
// variational inference, conditional density estimation) plus model
// evaluation, sampling, and density-grid export.
//
// Exit codes: 0 success, 2 config/usage error, 3 numeric failure.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "diflab/diflab.hpp"

namespace dl = diflab;
using nlohmann::json;

namespace {

json read_json_file(const std::string& path) {
  std::ifstream in(path);
  dl::check(in.good(), "cannot open config file: " + path);
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw std::invalid_argument("invalid JSON in " + path + ": " + e.what());
  }
  return j;
}

std::string config_hash(const json& j) {
  std::string s = j.dump();
  std::uint64_t h = 14695981039346656037ULL;  // FNV-1a
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%016llx",
                static_cast<unsigned long long>(h));
  return buf;
}

void write_json_file(const std::string& path, const json& j) {
  std::ofstream out(path);
  dl::check(out.good(), "cannot write file: " + path);
  out << j.dump(2) << "\n";
}

// ---------------------------------------------------------------------------
// Config parsing with field-path error messages

const json& require_field(const json& j, const char* key,
                          const std::string& path) {
  dl::check(j.is_object() && j.contains(key), path + "." + key + ": required");
  return j[key];
}

dl::TrainConfig parse_train(const json& t, const std::string& path,
                            const std::vector<std::string>& allowed) {
  dl::check(t.is_object(), path + ": must be an object");
  dl::TrainConfig cfg;
  std::string obj =
      require_field(t, "objective", path).get<std::string>();
  bool ok = false;
  for (const auto& a : allowed) ok = ok || a == obj;
  std::string allowed_str;
  for (const auto& a : allowed)
    allowed_str += (allowed_str.empty() ? "" : ", ") + a;
  dl::check(ok, path + ".objective: must be one of {" + allowed_str + "}");
  cfg.objective = dl::objective_from_string(obj);
  cfg.steps = t.value("steps", 100);
  cfg.batch = t.value("batch",
                      cfg.objective == dl::Objective::kGem ? 0 : 128);
  cfg.lr = t.value("lr", cfg.objective == dl::Objective::kGem ? 1e-2 : 1e-3);
  cfg.line_search = t.value("line_search", true);
  cfg.seed = t.value("seed", std::uint64_t{0});
  cfg.tape_chunk = t.value("tape_chunk", dl::Index{512});
  cfg.fixed_z = t.value("fixed_z", false);
  try {
    cfg.validate();
  } catch (const std::invalid_argument& e) {
    throw std::invalid_argument(path + ": " + e.what());
  }
  if (cfg.objective == dl::Objective::kRbKl)
    dl::check(cfg.batch >= 1, path + ".batch: rb_kl needs batch >= 1");
  return cfg;
}

struct Split {
  std::vector<dl::Index> train, heldout;
};

// Deterministic 90/10 split by seeded shuffle.
Split split_indices(dl::Index n, std::uint64_t seed) {
  std::vector<dl::Index> idx(n);
  for (dl::Index i = 0; i < n; ++i) idx[i] = i;
  dl::RngStream rng(seed, 3);
  for (dl::Index i = n - 1; i > 0; --i) {
    auto j = static_cast<dl::Index>(rng.integer(i + 1));
    std::swap(idx[i], idx[j]);
  }
  Split s;
  dl::Index held = n / 10;
  s.heldout.assign(idx.begin(), idx.begin() + held);
  s.train.assign(idx.begin() + held, idx.end());
  return s;
}

dl::Matrix take_cols(const dl::Matrix& m, const std::vector<dl::Index>& idx) {
  dl::Matrix out(m.rows(), static_cast<dl::Index>(idx.size()));
  for (std::size_t i = 0; i < idx.size(); ++i) out.col(i) = m.col(idx[i]);
  return out;
}

double mean_loglik(const dl::DifStack& model, const dl::ParameterStore& store,
                   const dl::Matrix& x, dl::Index chunk = 8192) {
  double total = 0.0;
  for (dl::Index start = 0; start < x.cols(); start += chunk) {
    dl::Index len = std::min(chunk, x.cols() - start);
    total += dl::log_density(model, store, x.middleCols(start, len)).sum();
  }
  return total / static_cast<double>(x.cols());
}

void write_trace_and_model(const std::string& out_dir,
                           const dl::ModelBundle& bundle,
                           const dl::TraceRecord& trace, const json& summary) {
  std::filesystem::create_directories(out_dir);
  dl::save_model(out_dir + "/model.json", bundle);
  dl::write_trace_csv(out_dir + "/trace.csv", trace);
  write_json_file(out_dir + "/summary.json", summary);
  std::cout << "wrote " << out_dir << "/summary.json\n";
}

json apply_overrides(json cfg, const std::optional<std::uint64_t>& seed,
                     const std::optional<std::string>& out_dir) {
  if (seed) {
    if (!cfg.contains("train") || !cfg["train"].is_object())
      cfg["train"] = json::object();
    cfg["train"]["seed"] = *seed;
  }
  if (out_dir) cfg["out_dir"] = *out_dir;
  return cfg;
}

std::string out_dir_of(const json& cfg) {
  return require_field(cfg, "out_dir", "config").get<std::string>();
}

// ---------------------------------------------------------------------------
// fit-vde

int run_fit_vde(const json& cfg) {
  const std::string out_dir = out_dir_of(cfg);
  dl::TrainConfig tc =
      parse_train(require_field(cfg, "train", "config"), "train",
                  {"mle", "gem"});

  dl::check(cfg.contains("target") != cfg.contains("dataset"),
            "config: exactly one of 'target' or 'dataset' is required");
  dl::Matrix x;
  if (cfg.contains("target")) {
    dl::Target target = dl::target_from_json(cfg["target"]);
    dl::check(target.can_sample, "target.kind: this target cannot sample");
    auto n = cfg.value("n_train", dl::Index{0});
    dl::check(n >= 10, "n_train: must be >= 10");
    dl::RngStream data_rng(tc.seed, 1);
    x = target.sample(n, data_rng);
  } else {
    x = dl::load_csv_dataset(cfg["dataset"].get<std::string>()).x;
    dl::check(x.cols() >= 10, "dataset: needs at least 10 rows");
  }

  dl::ModelBundle bundle = dl::build_model(require_field(cfg, "model",
                                                         "config"));
  dl::check(!bundle.is_conditional,
            "model.layers: fit-vde needs an unconditional model");
  dl::check(bundle.stack.dim == x.rows(),
            "model.dim: must match the data dimension");

  json warm = cfg.value("warm_start", json());
  int em_iters = 0;
  if (!warm.is_null()) {
    dl::check(warm.is_object(), "warm_start: must be an object");
    em_iters = warm.value("gmm_iters", 100);
    dl::check(em_iters >= 1, "warm_start.gmm_iters: must be >= 1");
    dl::check(bundle.stack.layers.size() == 1 &&
                  std::holds_alternative<dl::DiagonalAffineMap>(
                      bundle.stack.layers[0].maps[0]),
              "warm_start: needs a single dif layer with affine maps");
  }

  Split split = split_indices(x.cols(), tc.seed);
  dl::Matrix x_train = take_cols(x, split.train);
  dl::Matrix x_held = take_cols(x, split.heldout);

  dl::RngStream init_rng(tc.seed, 2);
  dl::init_stack(bundle.stack, bundle.store, init_rng, &x_train);

  json summary;
  if (!warm.is_null()) {
    dl::RngStream em_rng(tc.seed, 4);
    dl::GmmFitResult em = dl::gmm_em_fit(
        x_train, bundle.stack.layers[0].K(), em_iters, em_rng);
    dl::warm_start_from_gmm(bundle.stack.layers[0], bundle.store, em.gmm);
    summary["gmm_baseline"] = {
        {"em_iters", em_iters},
        {"train_mean_loglik", dl::gmm_mean_loglik(em.gmm, x_train)},
        {"heldout_mean_loglik", dl::gmm_mean_loglik(em.gmm, x_held)}};
  }

  dl::TraceRecord trace;
  bool converged = false;
  if (tc.objective == dl::Objective::kGem) {
    dl::GemReport r = dl::fit_gem(bundle.stack, bundle.store, x_train, tc);
    trace = std::move(r.trace);
    converged = r.converged;
  } else {
    trace = dl::fit_mle(bundle.stack, bundle.store, x_train, tc);
  }

  summary["command"] = "fit-vde";
  summary["seed"] = tc.seed;
  summary["config_hash"] = config_hash(cfg);
  summary["dim"] = bundle.stack.dim;
  summary["objective"] = tc.objective == dl::Objective::kGem ? "gem" : "mle";
  summary["n_train"] = x_train.cols();
  summary["n_heldout"] = x_held.cols();
  summary["steps_completed"] = static_cast<int>(trace.size());
  summary["converged"] = converged;
  summary["final_train_mean_loglik"] =
      mean_loglik(bundle.stack, bundle.store, x_train);
  summary["heldout_mean_loglik"] =
      mean_loglik(bundle.stack, bundle.store, x_held);

  write_trace_and_model(out_dir, bundle, trace, summary);
  return 0;
}

// ---------------------------------------------------------------------------
// fit-vi

int run_fit_vi(const json& cfg) {
  const std::string out_dir = out_dir_of(cfg);
  dl::TrainConfig tc = parse_train(require_field(cfg, "train", "config"),
                                   "train", {"rb_kl"});
  dl::Target target = dl::target_from_json(require_field(cfg, "target",
                                                         "config"));
  dl::check(target.can_eval,
            "target.kind: fit-vi needs an evaluable unnormalized density");

  dl::ModelBundle bundle = dl::build_model(require_field(cfg, "model",
                                                         "config"));
  dl::check(!bundle.is_conditional,
            "model.layers: fit-vi needs an unconditional model");
  dl::check(bundle.stack.dim == target.dim,
            "model.dim: must match the target dimension");

  json sir = cfg.value("sir", json::object());
  auto n_prop = sir.value("n_proposals", dl::Index{100000});
  auto n_out = sir.value("n_out", dl::Index{1000});
  dl::check(n_prop >= 1, "sir.n_proposals: must be >= 1");
  dl::check(n_out >= 1 && n_out <= n_prop,
            "sir.n_out: must be in [1, n_proposals]");

  json init = cfg.value("init", json::object());
  dl::check(init.is_object(), "init: must be an object");
  bool identity_init = init.value("identity", false);
  dl::RngStream init_rng(tc.seed, 2);
  // Identity init keeps the freshly built (all-zero) parameters: affine maps
  // are the identity and weight nets are constant, so the model starts at the
  // prior.
  if (!identity_init) dl::init_stack(bundle.stack, bundle.store, init_rng,
                                     nullptr);

  dl::TargetDensity lp = dl::target_density(target);
  dl::TraceRecord trace = dl::fit_rb_kl(bundle.stack, bundle.store, lp, tc);

  dl::RngStream sir_rng(tc.seed, 5);
  dl::SirResult s = dl::sir_resample(bundle.stack, bundle.store, lp, n_prop,
                                     n_out, sir_rng);

  json summary;
  summary["command"] = "fit-vi";
  summary["seed"] = tc.seed;
  summary["config_hash"] = config_hash(cfg);
  summary["dim"] = bundle.stack.dim;
  summary["objective"] = "rb_kl";
  summary["steps_completed"] = static_cast<int>(trace.size());
  summary["final_loss"] = trace.empty() ? 0.0 : trace.back().objective;
  summary["sir_n_proposals"] = n_prop;
  summary["sir_n_out"] = n_out;
  summary["sir_log_const"] = s.log_const;
  summary["sir_const_estimate"] = s.const_estimate;
  summary["sir_const_se"] = s.const_se;

  std::filesystem::create_directories(out_dir);
  dl::save_model(out_dir + "/model.json", bundle);
  dl::write_trace_csv(out_dir + "/trace.csv", trace);
  dl::write_samples_csv(out_dir + "/sir_samples.csv", s.samples);
  write_json_file(out_dir + "/summary.json", summary);
  std::cout << "wrote " << out_dir << "/summary.json\n";
  return 0;
}

// ---------------------------------------------------------------------------
// fit-conditional

int run_fit_conditional(const json& cfg) {
  const std::string out_dir = out_dir_of(cfg);
  dl::TrainConfig tc = parse_train(require_field(cfg, "train", "config"),
                                   "train", {"conditional_mle"});
  std::string data_path =
      require_field(cfg, "dataset", "config").get<std::string>();
  dl::Dataset ds = dl::load_csv_dataset(data_path);
  dl::check(ds.cov_dim() >= 1,
            "dataset: file has no covariate (w_) columns");
  dl::check(ds.size() >= 10, "dataset: needs at least 10 rows");

  dl::ModelBundle bundle = dl::build_model(require_field(cfg, "model",
                                                         "config"));
  dl::check(bundle.is_conditional,
            "model.layers: fit-conditional needs a conditional_dif layer");
  dl::check(bundle.conditional.dim() == ds.dim(),
            "model.dim: must match the data dimension");
  dl::check(bundle.conditional.cov_dim() == ds.cov_dim(),
            "model.layers[0].cov_dim: must match the covariate dimension");

  Split split = split_indices(ds.size(), tc.seed);
  dl::Dataset train{take_cols(ds.x, split.train), take_cols(ds.w, split.train)};
  dl::Dataset held{take_cols(ds.x, split.heldout),
                   take_cols(ds.w, split.heldout)};

  dl::RngStream init_rng(tc.seed, 2);
  bundle.conditional.init(bundle.store, init_rng, &train.x);

  dl::TraceRecord trace =
      dl::fit_conditional(bundle.conditional, bundle.store, train, tc);

  auto mean_cond = [&](const dl::Dataset& d) {
    return dl::conditional_log_density(bundle.conditional, bundle.store, d.x,
                                       d.w)
        .mean();
  };
  json summary;
  summary["command"] = "fit-conditional";
  summary["seed"] = tc.seed;
  summary["config_hash"] = config_hash(cfg);
  summary["dim"] = bundle.conditional.dim();
  summary["cov_dim"] = bundle.conditional.cov_dim();
  summary["objective"] = "conditional_mle";
  summary["n_train"] = train.size();
  summary["n_heldout"] = held.size();
  summary["steps_completed"] = static_cast<int>(trace.size());
  summary["final_train_mean_loglik"] = mean_cond(train);
  summary["heldout_mean_loglik"] = mean_cond(held);

  write_trace_and_model(out_dir, bundle, trace, summary);
  return 0;
}

// ---------------------------------------------------------------------------
// sample / density-grid / loglik

int run_sample(const std::string& model_path, dl::Index n, std::uint64_t seed,
               const std::string& out, bool with_paths) {
  dl::check(n >= 0, "--n: must be >= 0");
  dl::ModelBundle bundle = dl::load_model(model_path);
  dl::check(!bundle.is_conditional,
            "model: sampling needs an unconditional model");
  dl::RngStream rng(seed, 6);
  dl::BackwardSamples s =
      dl::sample_backward(bundle.stack, bundle.store, n, rng);
  dl::write_samples_csv(out, s.x, with_paths ? &s.path : nullptr);

  json summary = {{"command", "sample"},
                  {"model", model_path},
                  {"n", n},
                  {"seed", seed},
                  {"paths", with_paths}};
  summary["config_hash"] = config_hash(summary);
  write_json_file(out + ".summary.json", summary);
  std::cout << "wrote " << out << "\n";
  return 0;
}

int run_density_grid(const std::string& model_path, const std::string& out,
                     double lo, double hi, dl::Index n) {
  dl::check(hi > lo, "--hi: must be greater than --lo");
  dl::check(n >= 2, "--n: must be >= 2");
  dl::ModelBundle bundle = dl::load_model(model_path);
  dl::check(!bundle.is_conditional,
            "model: density-grid needs an unconditional model");
  dl::check(bundle.stack.dim <= 2, "model: density-grid supports dim 1 or 2");

  std::vector<dl::GridAxis> axes(bundle.stack.dim, dl::GridAxis{lo, hi, n});
  dl::DensityGrid grid = dl::evaluate_grid(
      [&](const dl::Matrix& pts) {
        return dl::RowVector(
            dl::log_density(bundle.stack, bundle.store, pts)
                .array()
                .exp()
                .matrix());
      },
      axes);
  double integral = dl::quadrature_integral(grid.values, grid.axes);

  dl::write_density_grid_csv(out, grid);
  json summary = {{"command", "density-grid"},
                  {"model", model_path},
                  {"lo", lo},
                  {"hi", hi},
                  {"n", n},
                  {"integral", integral}};
  summary["config_hash"] = config_hash(summary);
  write_json_file(out + ".summary.json", summary);
  std::cout << "integral " << integral << "\n";
  return 0;
}

int run_loglik(const std::string& model_path, const std::string& data_path,
               const std::string& out) {
  dl::ModelBundle bundle = dl::load_model(model_path);
  dl::Dataset ds = dl::load_csv_dataset(data_path);
  double value = 0.0;
  if (bundle.is_conditional) {
    dl::check(ds.cov_dim() == bundle.conditional.cov_dim(),
              "data: covariate columns must match the model's cov_dim");
    dl::check(ds.dim() == bundle.conditional.dim(),
              "data: dimension must match the model");
    value = dl::conditional_log_density(bundle.conditional, bundle.store,
                                        ds.x, ds.w)
                .mean();
  } else {
    dl::check(ds.cov_dim() == 0,
              "data: has covariate columns but the model is unconditional");
    dl::check(ds.dim() == bundle.stack.dim,
              "data: dimension must match the model");
    value = mean_loglik(bundle.stack, bundle.store, ds.x);
  }
  std::cout << "mean_loglik " << value << "\n";
  if (!out.empty()) {
    json summary = {{"command", "loglik"},
                    {"model", model_path},
                    {"data", data_path},
                    {"n", ds.size()},
                    {"mean_loglik", value}};
    summary["config_hash"] = config_hash(summary);
    write_json_file(out, summary);
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"discretely indexed flows: training, sampling, evaluation"};
  app.require_subcommand(1);

  std::string config_path, model_path, data_path, out_path;
  std::optional<std::uint64_t> seed_override;
  std::optional<std::string> out_dir_override;
  std::uint64_t seed = 0;
  dl::Index n_samples = 1000, n_grid = 401;
  double grid_lo = -8.0, grid_hi = 8.0;
  bool with_paths = false;

  auto add_fit = [&](const char* name, const char* desc) {
    CLI::App* sub = app.add_subcommand(name, desc);
    sub->add_option("--config", config_path, "JSON run configuration")
        ->required();
    sub->add_option("--seed", seed_override, "override train.seed");
    sub->add_option("--out-dir", out_dir_override, "override out_dir");
    return sub;
  };
  CLI::App* vde = add_fit("fit-vde", "density estimation from samples");
  CLI::App* vi = add_fit("fit-vi", "variational inference against log p");
  CLI::App* cond = add_fit("fit-conditional", "conditional density estimation");

  CLI::App* sample = app.add_subcommand("sample", "draw model samples to CSV");
  sample->add_option("--model", model_path, "model JSON file")->required();
  sample->add_option("--n", n_samples, "number of samples");
  sample->add_option("--seed", seed, "RNG seed");
  sample->add_option("--out", out_path, "output CSV path")->required();
  sample->add_flag("--paths", with_paths, "include component-path columns");

  CLI::App* grid = app.add_subcommand("density-grid",
                                      "tabulate exp(log density) on a grid");
  grid->add_option("--model", model_path, "model JSON file")->required();
  grid->add_option("--out", out_path, "output CSV path")->required();
  grid->add_option("--lo", grid_lo, "axis lower bound");
  grid->add_option("--hi", grid_hi, "axis upper bound");
  grid->add_option("--n", n_grid, "points per axis");

  CLI::App* ll = app.add_subcommand("loglik",
                                    "mean log-likelihood of a CSV dataset");
  ll->add_option("--model", model_path, "model JSON file")->required();
  ll->add_option("--data", data_path, "CSV dataset")->required();
  ll->add_option("--out", out_path, "optional summary JSON path");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (vde->parsed() || vi->parsed() || cond->parsed()) {
      json cfg = apply_overrides(read_json_file(config_path), seed_override,
                                 out_dir_override);
      if (vde->parsed()) return run_fit_vde(cfg);
      if (vi->parsed()) return run_fit_vi(cfg);
      return run_fit_conditional(cfg);
    }
    if (sample->parsed())
      return run_sample(model_path, n_samples, seed, out_path, with_paths);
    if (grid->parsed())
      return run_density_grid(model_path, out_path, grid_lo, grid_hi, n_grid);
    if (ll->parsed()) return run_loglik(model_path, data_path, out_path);
  } catch (const dl::NumericError& e) {
    std::cerr << "numeric failure: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 2;
}
