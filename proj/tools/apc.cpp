// Command-line front end: generate artificial datasets, fit one model, run
// the full case-by-model grid, report theory quantities, and export plot
// data.  Exit codes: 0 success (a flagged non-converged fit is success),
// 1 usage error, 2 I/O error, 3 data validation error.

#include <cstdio>
#include <exception>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "apc/report.hpp"

namespace {

std::vector<apc::ModelKind> parse_models(const std::string& list) {
  std::vector<apc::ModelKind> out;
  std::size_t pos = 0;
  while (pos <= list.size()) {
    const std::size_t c = list.find(',', pos);
    const std::string tok =
        list.substr(pos, c == std::string::npos ? std::string::npos : c - pos);
    if (!tok.empty()) out.push_back(apc::model_from_code(tok));
    if (c == std::string::npos) break;
    pos = c + 1;
  }
  if (out.empty()) throw std::invalid_argument("no models in list: " + list);
  return out;
}

std::string sibling_csv_path(const std::string& json_path) {
  const std::string suffix = ".json";
  if (json_path.size() > suffix.size() &&
      json_path.compare(json_path.size() - suffix.size(), suffix.size(),
                        suffix) == 0)
    return json_path.substr(0, json_path.size() - suffix.size()) + ".csv";
  return json_path + ".csv";
}

struct GenerateArgs {
  int case_id = 1;
  apc::GridSpec spec;
  double slope = 0.1;
  double nl = 0.05;
  std::uint64_t seed = 1234;
  std::string out;
  bool stamp = false;
};

struct FitArgs {
  std::string model;
  std::string method = "mcmc";
  std::string data;
  apc::FitConfig cfg;
  std::string out;
  bool stamp = false;
};

struct GridArgs {
  std::string models = "re,rr,rw";
  std::string method = "mcmc";
  std::uint64_t seed = 1234;
  int jobs = 0;
  std::string out;
  bool stamp = false;
};

struct TheoryArgs {
  int I = 10;
  int J = 10;
};

struct PlotArgs {
  int case_id = 0;
  std::string fit_path;
  double slope = 0.1;
  double nl = 0.05;
  std::string out;
};

int run_generate(const GenerateArgs& a) {
  apc::CaseSpec c;
  apc::GridSpec spec = a.spec;
  try {
    c = apc::case_by_id(a.case_id, a.slope, a.nl);
    spec.validate_generation();
  } catch (const std::invalid_argument& e) {
    std::fprintf(stderr, "usage error: %s\n", e.what());
    return 1;
  }
  const apc::EffectSet beta = apc::artificial_effects(c, spec);
  const apc::Dataset data = apc::generate_dataset(beta, spec, a.seed);
  const nlohmann::json manifest = apc::make_manifest(
      "generate", a.seed,
      {{"case", a.case_id},
       {"slope", a.slope},
       {"nl", a.nl},
       {"grid", apc::grid_spec_to_json(spec)},
       {"out", a.out}},
      a.stamp);
  try {
    apc::write_csv_file(data, a.out);
    apc::write_text_file(
        a.out + ".json",
        apc::dump_json(apc::dataset_manifest(data, c, beta, manifest)));
  } catch (const std::exception& e) {
    std::fprintf(stderr, "i/o error: %s\n", e.what());
    return 2;
  }
  return 0;
}

int run_fit(const FitArgs& a) {
  apc::ModelKind kind;
  apc::FitConfig cfg = a.cfg;
  try {
    kind = apc::model_from_code(a.model);
    cfg.method = apc::method_from_code(a.method);
    cfg.validate();
  } catch (const std::invalid_argument& e) {
    std::fprintf(stderr, "usage error: %s\n", e.what());
    return 1;
  }
  apc::Dataset data;
  try {
    data = apc::read_csv_file(a.data);
  } catch (const std::invalid_argument& e) {
    std::fprintf(stderr, "data error: %s\n", e.what());
    return 3;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "i/o error: %s\n", e.what());
    return 2;
  }
  const apc::FitResult fit = apc::fit(kind, data, cfg);
  const nlohmann::json manifest = apc::make_manifest(
      "fit", cfg.seed,
      {{"model", a.model},
       {"data", a.data},
       {"config", apc::fit_config_to_json(cfg)},
       {"out", a.out}},
      a.stamp);
  try {
    apc::write_text_file(a.out,
                         apc::dump_json(apc::fit_report(fit, a.data, manifest)));
  } catch (const std::exception& e) {
    std::fprintf(stderr, "i/o error: %s\n", e.what());
    return 2;
  }
  if (!fit.converged)
    std::fprintf(stderr, "warning: fit not converged (flagged in report)\n");
  return 0;
}

int run_grid(const GridArgs& a) {
  std::vector<apc::ModelKind> models;
  apc::FitConfig cfg;
  apc::GridSpec spec;
  try {
    models = parse_models(a.models);
    cfg.method = apc::method_from_code(a.method);
    cfg.seed = a.seed;
    cfg.validate();
    if (a.jobs < 0) throw std::invalid_argument("--jobs must be >= 0");
  } catch (const std::invalid_argument& e) {
    std::fprintf(stderr, "usage error: %s\n", e.what());
    return 1;
  }
  const std::vector<apc::BiasReport> rows =
      apc::run_grid(spec, apc::enumerate_cases(), models, cfg, a.jobs);
  const nlohmann::json manifest = apc::make_manifest(
      "grid", a.seed,
      {{"models", a.models},
       {"method", a.method},
       {"jobs", a.jobs},
       {"grid", apc::grid_spec_to_json(spec)},
       {"config", apc::fit_config_to_json(cfg)},
       {"out", a.out}},
      a.stamp);
  try {
    apc::write_text_file(a.out, apc::dump_json(apc::grid_report(rows, manifest)));
    apc::write_text_file(sibling_csv_path(a.out), apc::grid_csv(rows));
  } catch (const std::exception& e) {
    std::fprintf(stderr, "i/o error: %s\n", e.what());
    return 2;
  }
  return 0;
}

int run_theory(const TheoryArgs& a) {
  nlohmann::json rep;
  try {
    rep = apc::theory_report(a.I, a.J);
  } catch (const std::invalid_argument& e) {
    std::fprintf(stderr, "usage error: %s\n", e.what());
    return 1;
  }
  std::fputs(apc::dump_json(rep).c_str(), stdout);
  return 0;
}

int run_plotdata(const PlotArgs& a) {
  std::string csv;
  if (a.case_id != 0) {
    apc::GridSpec spec;
    try {
      csv = apc::plot_case_csv(apc::case_by_id(a.case_id, a.slope, a.nl), spec);
    } catch (const std::invalid_argument& e) {
      std::fprintf(stderr, "usage error: %s\n", e.what());
      return 1;
    }
  } else {
    std::string text;
    try {
      text = apc::read_text_file(a.fit_path);
    } catch (const std::exception& e) {
      std::fprintf(stderr, "i/o error: %s\n", e.what());
      return 2;
    }
    try {
      csv = apc::plot_fit_csv(nlohmann::json::parse(text));
    } catch (const std::exception& e) {
      std::fprintf(stderr, "data error: %s\n", e.what());
      return 3;
    }
  }
  try {
    apc::write_text_file(a.out, csv);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "i/o error: %s\n", e.what());
    return 2;
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"age-period-cohort simulation toolkit"};
  app.require_subcommand(1);

  GenerateArgs gen;
  CLI::App* cmd_gen = app.add_subcommand("generate", "write one case dataset");
  cmd_gen->add_option("--case", gen.case_id, "case id, 1..13")->required();
  cmd_gen->add_option("--I", gen.spec.I, "age groups");
  cmd_gen->add_option("--J", gen.spec.J, "periods");
  cmd_gen->add_option("--T", gen.spec.T, "replicates per cell");
  cmd_gen->add_option("--gamma", gen.spec.gamma, "noise sd");
  cmd_gen->add_option("--slope", gen.slope, "linear magnitude");
  cmd_gen->add_option("--nl", gen.nl, "nonlinear magnitude");
  cmd_gen->add_option("--seed", gen.seed, "rng seed");
  cmd_gen->add_option("--out", gen.out, "output csv path")->required();
  cmd_gen->add_flag("--stamp", gen.stamp, "timestamp the manifest");

  FitArgs fit;
  CLI::App* cmd_fit = app.add_subcommand("fit", "fit one model to a dataset");
  cmd_fit->add_option("--model", fit.model, "re|rr|rw")->required();
  cmd_fit->add_option("--method", fit.method, "map|mcmc");
  cmd_fit->add_option("--data", fit.data, "dataset csv path")->required();
  cmd_fit->add_option("--chains", fit.cfg.chains, "mcmc chains");
  cmd_fit->add_option("--iter", fit.cfg.iterations, "iterations per chain");
  cmd_fit->add_option("--warmup", fit.cfg.warmup, "warmup iterations");
  cmd_fit->add_option("--thin", fit.cfg.thin, "thinning stride");
  cmd_fit->add_option("--restarts", fit.cfg.restarts, "map multistarts");
  cmd_fit->add_option("--seed", fit.cfg.seed, "rng seed");
  cmd_fit->add_option("--out", fit.out, "report json path")->required();
  cmd_fit->add_flag("--stamp", fit.stamp, "timestamp the manifest");

  GridArgs grid;
  CLI::App* cmd_grid = app.add_subcommand("grid", "run the case-by-model grid");
  cmd_grid->add_option("--models", grid.models, "comma list of re,rr,rw");
  cmd_grid->add_option("--method", grid.method, "map|mcmc");
  cmd_grid->add_option("--seed", grid.seed, "master seed");
  cmd_grid->add_option("--jobs", grid.jobs, "worker threads, 0 = hardware");
  cmd_grid->add_option("--out", grid.out, "report json path")->required();
  cmd_grid->add_flag("--stamp", grid.stamp, "timestamp the manifest");

  TheoryArgs theory;
  CLI::App* cmd_theory =
      app.add_subcommand("theory", "index weight sums and the penalty gap");
  cmd_theory->add_option("--I", theory.I, "age groups");
  cmd_theory->add_option("--J", theory.J, "periods");

  PlotArgs plot;
  CLI::App* cmd_plot =
      app.add_subcommand("plotdata", "long-format csv for plots");
  CLI::Option* opt_case =
      cmd_plot->add_option("--case", plot.case_id, "case id, 1..13");
  CLI::Option* opt_fit =
      cmd_plot->add_option("--fit", plot.fit_path, "fit report json path");
  opt_case->excludes(opt_fit);
  cmd_plot->add_option("--slope", plot.slope, "linear magnitude");
  cmd_plot->add_option("--nl", plot.nl, "nonlinear magnitude");
  cmd_plot->add_option("--out", plot.out, "output csv path")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  if (cmd_plot->parsed() && plot.case_id == 0 && plot.fit_path.empty()) {
    std::fprintf(stderr, "usage error: plotdata needs --case or --fit\n");
    return 1;
  }

  if (cmd_gen->parsed()) return run_generate(gen);
  if (cmd_fit->parsed()) return run_fit(fit);
  if (cmd_grid->parsed()) return run_grid(grid);
  if (cmd_theory->parsed()) return run_theory(theory);
  if (cmd_plot->parsed()) return run_plotdata(plot);
  return 1;
}
