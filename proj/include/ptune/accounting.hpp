#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace ptune {

enum class Method { kModelTuning, kPrefixTuning, kWarp, kPromptTuning, kPromptDesign };

std::string to_string(Method method);
Method parse_method(std::string_view name);  // throws ConfigError
const std::vector<Method>& all_methods();

struct ArchConfig {
  std::string name;
  std::uint64_t d_model = 0;
  std::uint64_t d_ff = 0;
  std::uint64_t encoder_layers = 0;
  std::uint64_t decoder_layers = 0;
  std::uint64_t vocab_size = 0;
  std::uint64_t frozen_total = 0;  // parameters of the frozen network

  void validate() const;  // throws ConfigError
};

// Small, Base, Large, XL, XXL. Frozen totals are total(p=1) - d_model.
const std::vector<ArchConfig>& t5_sizes();
const ArchConfig& t5_size(std::string_view name);  // throws ConfigError

struct MethodSpec {
  MethodSpec() = default;
  MethodSpec(Method m) : method(m) {}

  Method method = Method::kPromptTuning;
  std::optional<std::uint64_t> reparam_width;  // prefix tuning, default 512
  std::optional<std::uint64_t> classes;        // WARP, default 2
  std::optional<std::uint64_t> prompt_ids;     // prompt design, default p

  void validate() const;  // knob on the wrong method or a zero knob: ConfigError
};

struct ParamCount {
  std::uint64_t train = 0;
  std::uint64_t inference = 0;
};

inline constexpr std::uint64_t kDefaultReparamWidth = 512;
inline constexpr std::uint64_t kDefaultWarpClasses = 2;
// Prompt-design id band used for plots.
inline constexpr std::uint64_t kPromptDesignMinIds = 500;
inline constexpr std::uint64_t kPromptDesignMaxIds = 2000;

// Throws ConfigError for p == 0.
ParamCount task_params(const MethodSpec& spec, const ArchConfig& arch, std::uint64_t p);

// 100 * count / (frozen + count); model tuning reuses the frozen weights and
// is 100 by definition.
double percent_of_total(Method method, std::uint64_t count, const ArchConfig& arch);
double percent_trainable(const MethodSpec& spec, const ArchConfig& arch, std::uint64_t p);

std::string format_percent(double percent);            // rounded to 5 decimals
std::string format_percent_truncated(double percent);  // cut at 5 decimals

inline const std::vector<std::uint64_t> kPrintedLengths = {1, 5, 20, 50, 100, 150};

struct PrintedCount {
  std::string size;
  std::uint64_t length = 0;
  std::uint64_t trainable = 0;
  std::uint64_t total = 0;
  std::string percent;  // as printed, without '%'
  bool flagged = false; // listed as internally inconsistent
};

const std::vector<PrintedCount>& printed_counts();

struct CountCheck {
  PrintedCount printed;
  std::uint64_t trainable = 0;
  std::uint64_t total = 0;
  double percent = 0.0;
  bool trainable_ok = false;
  bool total_ok = false;
  bool percent_ok = false;  // printed equals the rounded or the truncated value
  std::vector<std::string> discrepancies;  // names of mismatching cells

  bool ok() const { return trainable_ok && total_ok && percent_ok; }
};

std::vector<CountCheck> check_printed_counts(const std::vector<std::uint64_t>& lengths = kPrintedLengths);

// Rows whose printed total breaks total(p) - total(1) == (p - 1) * e.
std::vector<PrintedCount> inconsistent_printed_totals();

struct Band {
  double mean = 0.0;
  double stddev = 0.0;  // population
  bool overlaps(double lo, double hi) const { return mean + stddev >= lo && mean - stddev <= hi; }
};

// Percent of total over p in [lo, hi], inference counts unless `train` is set.
Band percent_band(const MethodSpec& spec, const ArchConfig& arch, std::uint64_t lo, std::uint64_t hi,
                  bool train = false);

// CSV header and rows: method,size,length,train,inference,percent[,golden]
std::string params_csv_header(bool golden);
std::string params_csv_row(const MethodSpec& spec, const ArchConfig& arch, std::uint64_t p);
std::string golden_csv(const std::vector<CountCheck>& rows);

}  // namespace ptune
