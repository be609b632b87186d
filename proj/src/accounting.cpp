#include "ptune/accounting.hpp"

#include <cmath>
#include <cstdio>
#include <sstream>

#include "ptune/error.hpp"

namespace ptune {

std::string to_string(Method method) {
  switch (method) {
    case Method::kModelTuning:
      return "model-tuning";
    case Method::kPrefixTuning:
      return "prefix-tuning";
    case Method::kWarp:
      return "warp";
    case Method::kPromptTuning:
      return "prompt-tuning";
    case Method::kPromptDesign:
      return "prompt-design";
  }
  return "?";
}

const std::vector<Method>& all_methods() {
  static const std::vector<Method> methods = {Method::kPromptDesign, Method::kPromptTuning, Method::kWarp,
                                              Method::kPrefixTuning, Method::kModelTuning};
  return methods;
}

Method parse_method(std::string_view name) {
  for (Method m : all_methods()) {
    if (to_string(m) == name) return m;
  }
  throw ConfigError("unknown method '" + std::string(name) +
                    "' (expected model-tuning, prefix-tuning, warp, prompt-tuning or prompt-design)");
}

void ArchConfig::validate() const {
  if (name.empty() || d_model == 0 || d_ff == 0 || encoder_layers == 0 || decoder_layers == 0 || vocab_size == 0 ||
      frozen_total == 0) {
    throw ConfigError("architecture '" + name + "' needs positive sizes");
  }
}

const std::vector<ArchConfig>& t5_sizes() {
  static const std::vector<ArchConfig> sizes = {
      {"Small", 512, 1024, 8, 8, 32128, 76'961'152ULL},
      {"Base", 768, 2048, 12, 12, 32128, 247'577'856ULL},
      {"Large", 1024, 2816, 24, 24, 32128, 783'150'080ULL},
      {"XL", 2048, 5120, 24, 24, 32128, 2'849'757'184ULL},
      {"XXL", 4096, 10240, 24, 24, 32128, 11'135'332'352ULL},
  };
  return sizes;
}

const ArchConfig& t5_size(std::string_view name) {
  for (const ArchConfig& a : t5_sizes()) {
    if (a.name == name) return a;
  }
  throw ConfigError("unknown model size '" + std::string(name) + "' (expected Small, Base, Large, XL or XXL)");
}

void MethodSpec::validate() const {
  auto reject = [&](const char* knob) {
    throw ConfigError(std::string(knob) + " does not apply to " + to_string(method));
  };
  if (reparam_width && method != Method::kPrefixTuning) reject("reparameterization width");
  if (classes && method != Method::kWarp) reject("class count");
  if (prompt_ids && method != Method::kPromptDesign) reject("prompt id count");
  if ((reparam_width && *reparam_width == 0) || (classes && *classes == 0) || (prompt_ids && *prompt_ids == 0)) {
    throw ConfigError("method knobs must be positive");
  }
}

ParamCount task_params(const MethodSpec& spec, const ArchConfig& arch, std::uint64_t p) {
  spec.validate();
  arch.validate();
  if (p == 0) throw ConfigError("prompt length must be at least 1");
  const std::uint64_t e = arch.d_model;
  const std::uint64_t layers = arch.encoder_layers + arch.decoder_layers + 1;  // plus the input layer
  switch (spec.method) {
    case Method::kPromptTuning:
      return {p * e, p * e};
    case Method::kModelTuning:
      return {arch.frozen_total, arch.frozen_total};
    case Method::kPromptDesign:
      return {0, spec.prompt_ids.value_or(p)};
    case Method::kPrefixTuning: {
      const std::uint64_t w = spec.reparam_width.value_or(kDefaultReparamWidth);
      const std::uint64_t inference = p * e * layers;
      // MLP reparameterization: p x e input, e x w, w x (e * layers).
      return {inference + p * e + e * w + w * e * layers, inference};
    }
    case Method::kWarp: {
      const std::uint64_t inference = p * e + e * spec.classes.value_or(kDefaultWarpClasses);
      return {inference, inference};
    }
  }
  throw ConfigError("unknown method");
}

double percent_of_total(Method method, std::uint64_t count, const ArchConfig& arch) {
  if (method == Method::kModelTuning) return 100.0 * static_cast<double>(count) / static_cast<double>(arch.frozen_total);
  return 100.0 * static_cast<double>(count) / static_cast<double>(arch.frozen_total + count);
}

double percent_trainable(const MethodSpec& spec, const ArchConfig& arch, std::uint64_t p) {
  return percent_of_total(spec.method, task_params(spec, arch, p).train, arch);
}

std::string format_percent(double percent) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.5f", percent);
  return buf;
}

std::string format_percent_truncated(double percent) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.5f", std::floor(percent * 1e5) / 1e5);
  return buf;
}

const std::vector<PrintedCount>& printed_counts() {
  static const std::vector<PrintedCount> rows = {
      {"Small", 1, 512, 76'961'664ULL, "0.00067"},
      {"Small", 5, 2'560, 76'963'712ULL, "0.00333"},
      {"Small", 20, 10'420, 76'971'572ULL, "0.01330"},
      {"Small", 50, 25'600, 76'986'752ULL, "0.03325"},
      {"Small", 100, 51'200, 77'012'352ULL, "0.06648"},
      {"Small", 150, 76'800, 77'037'952ULL, "0.09969"},
      {"Base", 1, 768, 247'578'624ULL, "0.00031"},
      {"Base", 5, 3'840, 247'581'696ULL, "0.00155"},
      {"Base", 20, 15'360, 247'593'216ULL, "0.00620"},
      {"Base", 50, 38'400, 247'616'256ULL, "0.01551"},
      {"Base", 100, 76'800, 247'654'656ULL, "0.03101"},
      {"Base", 150, 115'200, 247'693'056ULL, "0.04651"},
      {"Large", 1, 1'024, 783'151'104ULL, "0.00013"},
      {"Large", 5, 5'120, 783'155'200ULL, "0.00065"},
      {"Large", 20, 20'480, 783'170'560ULL, "0.00262"},
      {"Large", 50, 51'200, 783'201'280ULL, "0.00654"},
      {"Large", 100, 102'400, 783'252'480ULL, "0.01907", true},
      {"Large", 150, 153'600, 783'303'680ULL, "0.01961"},
      {"XL", 1, 2'048, 2'849'759'232ULL, "0.00007"},
      {"XL", 5, 10'240, 2'849'767'424ULL, "0.00036"},
      {"XL", 20, 40'960, 2'849'798'144ULL, "0.00143"},
      {"XL", 50, 102'400, 2'849'859'584ULL, "0.00359"},
      {"XL", 100, 204'800, 2'849'961'984ULL, "0.00718"},
      {"XL", 150, 307'200, 2'850'064'384ULL, "0.01078"},
      {"XXL", 1, 4'096, 11'135'336'448ULL, "0.00004"},
      {"XXL", 5, 20'480, 11'135'352'832ULL, "0.00018"},
      {"XXL", 20, 81'920, 11'135'414'272ULL, "0.00074"},
      {"XXL", 50, 204'800, 11'137'380'352ULL, "0.00184", true},
      {"XXL", 100, 409'600, 11'135'741'952ULL, "0.00368"},
      {"XXL", 150, 614'400, 11'135'946'752ULL, "0.00552"},
  };
  return rows;
}

std::vector<CountCheck> check_printed_counts(const std::vector<std::uint64_t>& lengths) {
  std::vector<CountCheck> out;
  const MethodSpec prompt_tuning{Method::kPromptTuning};
  for (const ArchConfig& arch : t5_sizes()) {
    for (std::uint64_t p : lengths) {
      CountCheck row;
      row.trainable = task_params(prompt_tuning, arch, p).train;
      row.total = arch.frozen_total + row.trainable;
      row.percent = percent_trainable(prompt_tuning, arch, p);
      row.printed.size = arch.name;
      row.printed.length = p;
      bool found = false;
      for (const PrintedCount& g : printed_counts()) {
        if (g.size == arch.name && g.length == p) {
          row.printed = g;
          found = true;
        }
      }
      if (found) {
        row.trainable_ok = row.trainable == row.printed.trainable;
        row.total_ok = row.total == row.printed.total;
        row.percent_ok = format_percent(row.percent) == row.printed.percent ||
                         format_percent_truncated(row.percent) == row.printed.percent;
        if (!row.trainable_ok) row.discrepancies.push_back("trainable");
        if (!row.total_ok) row.discrepancies.push_back("total");
        if (!row.percent_ok) row.discrepancies.push_back("percent");
      } else {
        row.trainable_ok = row.total_ok = row.percent_ok = true;
      }
      out.push_back(std::move(row));
    }
  }
  return out;
}

std::vector<PrintedCount> inconsistent_printed_totals() {
  std::vector<PrintedCount> out;
  for (const ArchConfig& arch : t5_sizes()) {
    const PrintedCount* first = nullptr;
    for (const PrintedCount& g : printed_counts()) {
      if (g.size != arch.name) continue;
      if (first == nullptr) {
        first = &g;
      } else if (g.total - first->total != (g.length - first->length) * arch.d_model) {
        out.push_back(g);
      }
    }
  }
  return out;
}

Band percent_band(const MethodSpec& spec, const ArchConfig& arch, std::uint64_t lo, std::uint64_t hi, bool train) {
  if (lo == 0 || hi < lo) throw ConfigError("invalid prompt length range");
  std::vector<double> values;
  for (std::uint64_t p = lo; p <= hi; ++p) {
    const ParamCount c = task_params(spec, arch, p);
    values.push_back(percent_of_total(spec.method, train ? c.train : c.inference, arch));
  }
  Band b;
  for (double v : values) b.mean += v;
  b.mean /= static_cast<double>(values.size());
  for (double v : values) b.stddev += (v - b.mean) * (v - b.mean);
  b.stddev = std::sqrt(b.stddev / static_cast<double>(values.size()));
  return b;
}

std::string params_csv_header(bool golden) {
  return golden ? "method,size,length,train,inference,percent,golden\n" : "method,size,length,train,inference,percent\n";
}

std::string params_csv_row(const MethodSpec& spec, const ArchConfig& arch, std::uint64_t p) {
  const ParamCount c = task_params(spec, arch, p);
  std::ostringstream out;
  out << to_string(spec.method) << ',' << arch.name << ',' << p << ',' << c.train << ',' << c.inference << ','
      << format_percent(percent_of_total(spec.method, c.train, arch)) << '\n';
  return out.str();
}

std::string golden_csv(const std::vector<CountCheck>& rows) {
  std::string out = params_csv_header(true);
  for (const CountCheck& r : rows) {
    std::string status = "pass";
    if (!r.ok()) {
      status = "discrepancy(";
      for (std::size_t i = 0; i < r.discrepancies.size(); ++i) status += (i ? ";" : "") + r.discrepancies[i];
      status += ")";
    }
    std::ostringstream line;
    line << to_string(Method::kPromptTuning) << ',' << r.printed.size << ',' << r.printed.length << ','
         << r.trainable << ',' << r.trainable << ',' << format_percent(r.percent) << ',' << status << '\n';
    out += line.str();
  }
  return out;
}

}  // namespace ptune
