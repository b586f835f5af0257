#include "apc/report.hpp"

#include <cstdio>
#include <ctime>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace apc {

namespace {

std::string iso_utc_now() {
  const std::time_t t = std::time(nullptr);
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

std::string fmt(const char* pattern, double x) {
  char buf[64];
  std::snprintf(buf, sizeof buf, pattern, x);
  return buf;
}

nlohmann::json vector_to_json(const Eigen::VectorXd& v) {
  nlohmann::json a = nlohmann::json::array();
  for (int i = 0; i < v.size(); ++i) a.push_back(v[i]);
  return a;
}

Eigen::VectorXd vector_from_json(const nlohmann::json& a) {
  Eigen::VectorXd v(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) v[i] = a[i].get<double>();
  return v;
}

}  // namespace

nlohmann::json make_manifest(const std::string& command, std::uint64_t seed,
                             const nlohmann::json& args, bool stamp) {
  return {{"tool", {{"name", kToolName}, {"version", kToolVersion}}},
          {"command", command},
          {"seed", seed},
          {"timestamp", stamp ? iso_utc_now() : std::string()},
          {"args", args}};
}

nlohmann::json grid_spec_to_json(const GridSpec& spec) {
  return {{"I", spec.I}, {"J", spec.J}, {"T", spec.T}, {"gamma", spec.gamma}};
}

nlohmann::json fit_config_to_json(const FitConfig& cfg) {
  return {{"method", method_code(cfg.method)},
          {"chains", cfg.chains},
          {"iterations", cfg.iterations},
          {"warmup", cfg.warmup},
          {"thin", cfg.thin},
          {"seed", cfg.seed},
          {"restarts", cfg.restarts},
          {"rhat_threshold", cfg.rhat_threshold}};
}

nlohmann::json effects_to_json(const EffectSet& e) {
  return {{"b0", e.b0},
          {"age", vector_to_json(e.age)},
          {"period", vector_to_json(e.period)},
          {"cohort", vector_to_json(e.cohort)}};
}

EffectSet effects_from_json(const nlohmann::json& j) {
  EffectSet e;
  e.b0 = j.at("b0").get<double>();
  e.age = vector_from_json(j.at("age"));
  e.period = vector_from_json(j.at("period"));
  e.cohort = vector_from_json(j.at("cohort"));
  return e;
}

nlohmann::json dataset_manifest(const Dataset& data, const CaseSpec& c,
                                const EffectSet& beta,
                                const nlohmann::json& manifest) {
  return {{"schema", kSchemaVersion},
          {"case", c.label()},
          {"slope_mag", c.slope_mag},
          {"nl_mag", c.nl_mag},
          {"grid", grid_spec_to_json(data.spec)},
          {"seed", data.seed},
          {"rows", data.rows.size()},
          {"beta", effects_to_json(beta)},
          {"manifest", manifest}};
}

nlohmann::json fit_report(const FitResult& fit, const std::string& data_path,
                          const nlohmann::json& manifest) {
  nlohmann::json rhat = nlohmann::json::array();
  for (const auto& [name, value] : fit.rhat)
    rhat.push_back({{"name", name}, {"rhat", value}});
  return {{"schema", kSchemaVersion},
          {"model", model_code(fit.kind)},
          {"method", method_code(fit.method)},
          {"data", data_path},
          {"converged", fit.converged},
          {"estimate", effects_to_json(fit.point)},
          {"sigma_hat", fit.sigma_hat},
          {"hyper_hat",
           {{"age", fit.hyper_hat.age},
            {"period", fit.hyper_hat.period},
            {"cohort", fit.hyper_hat.cohort}}},
          {"log_posterior", fit.log_posterior_at_point},
          {"kept_draws", fit.kept_draws},
          {"max_rhat", fit.max_rhat},
          {"rhat", rhat},
          {"manifest", manifest}};
}

nlohmann::json grid_report(const std::vector<BiasReport>& rows,
                           const nlohmann::json& manifest) {
  nlohmann::json out = {{"schema", kSchemaVersion},
                        {"manifest", manifest},
                        {"rows", nlohmann::json::array()}};
  for (const BiasReport& r : rows) {
    out["rows"].push_back(
        {{"case_id", r.case_id},
         {"signs", r.case_label},
         {"model", model_code(r.model)},
         {"s", r.s},
         {"grade", std::string(1, r.grade)},
         {"converged", r.fit_meta.converged},
         {"method", method_code(r.fit_meta.method)},
         {"max_rhat", r.fit_meta.max_rhat},
         {"sigma_hat", r.fit_meta.sigma_hat},
         {"hyper_hat",
          {{"age", r.fit_meta.hyper_hat.age},
           {"period", r.fit_meta.hyper_hat.period},
           {"cohort", r.fit_meta.hyper_hat.cohort}}},
         {"slopes",
          {{"age", r.decomposition.slope_age},
           {"period", r.decomposition.slope_period},
           {"cohort", r.decomposition.slope_cohort}}},
         {"estimate", effects_to_json(r.estimate)}});
  }
  return out;
}

std::string grid_csv(const std::vector<BiasReport>& rows) {
  std::string out = "case,signs,model,s,grade,converged\n";
  for (const BiasReport& r : rows) {
    out += std::to_string(r.case_id);
    out += ',';
    out += r.case_label;
    out += ',';
    out += model_code(r.model);
    out += ',';
    out += fmt("%.6f", r.s);
    out += ',';
    out += r.grade;
    out += ',';
    out += r.fit_meta.converged ? '1' : '0';
    out += '\n';
  }
  return out;
}

nlohmann::json theory_report(int I, int J) {
  GridSpec spec;
  spec.I = I;
  spec.J = J;
  spec.validate_shape();
  const int K = spec.K();
  const double wA = index_weight_sum(I);
  const double wP = index_weight_sum(J);
  const double wC = index_weight_sum(K);
  const double gap = weight_gap(I, J);
  return {{"schema", kSchemaVersion},
          {"I", I},
          {"J", J},
          {"K", K},
          {"sum_v2", {{"age", wA}, {"period", wP}, {"cohort", wC}}},
          {"difference_penalty_ratio", double(K - 1) / double(J - 1)},
          {"level_penalty_ratio", wC / wP},
          {"weight_gap", gap},
          {"gap_positive", gap > 0.0}};
}

std::string plot_case_csv(const CaseSpec& c, const GridSpec& spec) {
  spec.validate_shape();
  const EffectSet beta = artificial_effects(c, spec);
  std::string out = "series,x,y\n";
  // One series per period over the cohort axis; within a period the cohort
  // index runs ascending, so the age index runs I..1.
  for (int j = 1; j <= spec.J; ++j)
    for (int i = spec.I; i >= 1; --i) {
      const int k = cohort_index(i, j, spec);
      const double y =
          beta.b0 + beta.age[i - 1] + beta.period[j - 1] + beta.cohort[k - 1];
      out += std::to_string(j);
      out += ',';
      out += std::to_string(k);
      out += ',';
      out += fmt("%.12f", y);
      out += '\n';
    }
  return out;
}

std::string plot_fit_csv(const nlohmann::json& fit_report_json) {
  const EffectSet e = effects_from_json(fit_report_json.at("estimate"));
  std::string out = "series,x,y\n";
  const auto emit = [&out](const char* name, const Eigen::VectorXd& b) {
    for (int n = 0; n < b.size(); ++n) {
      out += name;
      out += ',';
      out += std::to_string(n + 1);
      out += ',';
      out += fmt("%.12f", b[n]);
      out += '\n';
    }
  };
  emit("age", e.age);
  emit("period", e.period);
  emit("cohort", e.cohort);
  return out;
}

std::string dump_json(const nlohmann::json& j) { return j.dump(2) + "\n"; }

void write_text_file(const std::string& path, const std::string& content) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot open for writing: " + path);
  os << content;
  if (!os) throw std::runtime_error("write failed: " + path);
}

std::string read_text_file(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open: " + path);
  std::ostringstream ss;
  ss << is.rdbuf();
  if (is.bad()) throw std::runtime_error("read failed: " + path);
  return ss.str();
}

}  // namespace apc
