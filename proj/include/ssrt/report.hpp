// SPDX-License-Identifier: Apache-2.0
//
// Training log plus its CSV and SVG renderings. The CSV round-trips exactly:
// floats are serialized with 17 significant digits.
#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace ssrt {

struct LogRow {
  std::size_t iter = 0;
  double loss_ce = 0.0;
  double loss_d = 0.0;
  double loss_sr = 0.0;
  double r = 0.0;
  std::size_t diversity = 1;
  double acc_src = 0.0;  // latest sampled value, carried between evals
  double acc_tgt = 0.0;
  std::string event;  // "", "restore:T_r=<v>:t_r=<v>", or "nonfinite"

  friend bool operator==(const LogRow&, const LogRow&) = default;
};

struct TrainLog {
  std::vector<LogRow> rows;

  friend bool operator==(const TrainLog&, const TrainLog&) = default;
};

/// %.17g, the shortest form that round-trips every finite double.
std::string format_double(double v);

void write_train_log_csv(const TrainLog& log, const std::string& path);
TrainLog read_train_log_csv(const std::string& path);

/// Writes train_log.csv, diversity.svg (diversity and the ramp r per
/// iteration, restore events as vertical markers), and accuracy.svg
/// (source/target accuracy per iteration) into outdir.
void emit_report(const TrainLog& log, const std::string& outdir);

}  // namespace ssrt
