#pragma once

#include <fstream>
#include <string>
#include <vector>

#include "guiderl/common.hpp"
#include "guiderl/config.hpp"

namespace guiderl {

struct EpisodeRecord {
  double episode_return = 0.0;
  double route_completion = 0.0;
  TerminationEvent event = TerminationEvent::kNone;
  InfractionCounts infractions;
  int steps = 0;
  double mean_speed = 0.0;
  double distance_m = 0.0;
};

// Product of per-type factors raised to their counts; 1.0 with no events.
double infraction_penalty(const InfractionCounts& counts, const InfractionFactors& factors);
double driving_score(const EpisodeRecord& ep, const InfractionFactors& factors);

struct AggregateMetrics {
  int episodes = 0;
  double return_mean = 0.0, return_std = 0.0;
  double driving_score_mean = 0.0, driving_score_std = 0.0;
  double infraction_penalty_mean = 0.0;
  double success_rate = 0.0;
  double route_completion_mean = 0.0, route_completion_std = 0.0;
  double speed_mean = 0.0;
  double collisions_ped_per_km = 0.0;
  double collisions_veh_per_km = 0.0;
  double red_light_per_km = 0.0;
  double stop_sign_per_km = 0.0;

  static AggregateMetrics compute(const std::vector<EpisodeRecord>& episodes,
                                  const InfractionFactors& factors);
  std::string to_json_string() const;
  std::string to_table() const;
};

// Deterministically formatted CSV writer (%.10g values).
class CsvWriter {
 public:
  CsvWriter() = default;
  void open(const std::string& path, const std::vector<std::string>& columns);
  void row(const std::vector<double>& values);
  void close();
  bool is_open() const { return out_.is_open(); }

 private:
  std::ofstream out_;
  size_t n_cols_ = 0;
};

// Minimal CSV reader for the plot/acceptance paths: header + numeric rows.
struct CsvTable {
  std::vector<std::string> columns;
  std::vector<std::vector<double>> rows;

  int column_index(const std::string& name) const;  // -1 when absent
  std::vector<double> column(const std::string& name) const;
  static CsvTable read(const std::string& path);
};

}  // namespace guiderl
