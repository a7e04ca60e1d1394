#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "vsgp/predict.hpp"
#include "vsgp/sampler.hpp"
#include "vsgp/vb.hpp"

namespace vsgp {

class FormatError : public std::runtime_error {
 public:
  explicit FormatError(const std::string& what) : std::runtime_error(what) {}
};

/// Checkpoint of a GaussianApprox as whitespace-separated text:
///
///   vsgp-checkpoint 1
///   dims M P D T
///   theta  t_1 ... t_T
///   Z      (M rows of D values)
///   m      (M rows of P values)
///   L p    (M rows of M values), once per latent function p = 0..P-1
///
/// Every number is written with enough digits to round-trip exactly.
void write_checkpoint(const std::filesystem::path& path, const GaussianApprox& approx);
GaussianApprox read_checkpoint(const std::filesystem::path& path);

/// Chain as columnar text. Lines starting with '#' carry the sampler
/// configuration as `# key value`; the first other line is the header
///   iteration log_density accepted accepted_theta <coordinate names>
/// and each following line is one retained sample. accepted_theta is -1 for
/// plain HMC chains.
void write_chain(const std::filesystem::path& path, const Chain& chain,
                 const std::vector<std::string>& coordinate_names);
Chain read_chain(const std::filesystem::path& path);

/// Names for pack()'d coordinates: v[i,p] then the theta names.
std::vector<std::string> coordinate_names(const ModelSpec& model);

/// Columns: id, x_d per input dimension (when `coords` is given), mean_p and
/// var_p per latent function, log_density (if any), then the response
/// columns (`response` for probit and counts, p_k per class).
void write_prediction(const std::filesystem::path& path, const Prediction& prediction,
                      const Eigen::MatrixXd* coords = nullptr);

/// Plain whitespace-separated numeric table with a single header line.
struct Table {
  std::vector<std::string> columns;
  Eigen::MatrixXd values;

  Eigen::Index column(const std::string& name) const;
};

void write_table(const std::filesystem::path& path, const Table& table);
Table read_table(const std::filesystem::path& path);

/// Writes `text` to a sibling temporary file and renames it into place.
void write_atomically(const std::filesystem::path& path, const std::string& text);

std::string format_double(double x);

}  // namespace vsgp
