#include "guiderl/metrics.hpp"

#include <cmath>
#include <cstdio>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

namespace guiderl {

double infraction_penalty(const InfractionCounts& c, const InfractionFactors& f) {
  double p = 1.0;
  p *= std::pow(f.collision_pedestrian, c.collision_pedestrian);
  p *= std::pow(f.collision_vehicle, c.collision_vehicle);
  p *= std::pow(f.red_light, c.red_light);
  p *= std::pow(f.stop_sign, c.stop_sign);
  return p;
}

double driving_score(const EpisodeRecord& ep, const InfractionFactors& f) {
  return ep.route_completion * infraction_penalty(ep.infractions, f);
}

namespace {
void mean_std(const std::vector<double>& xs, double& mean, double& sd) {
  mean = 0.0;
  sd = 0.0;
  if (xs.empty()) return;
  for (double x : xs) mean += x;
  mean /= static_cast<double>(xs.size());
  for (double x : xs) sd += (x - mean) * (x - mean);
  sd = std::sqrt(sd / static_cast<double>(xs.size()));
}
}  // namespace

AggregateMetrics AggregateMetrics::compute(const std::vector<EpisodeRecord>& eps,
                                           const InfractionFactors& f) {
  AggregateMetrics m;
  m.episodes = static_cast<int>(eps.size());
  if (eps.empty()) return m;
  std::vector<double> rets, scores, completions;
  double penalty_sum = 0, success = 0, speed_sum = 0;
  double ped_rate = 0, veh_rate = 0, red_rate = 0, stop_rate = 0;
  for (const auto& ep : eps) {
    rets.push_back(ep.episode_return);
    scores.push_back(driving_score(ep, f));
    completions.push_back(ep.route_completion);
    penalty_sum += infraction_penalty(ep.infractions, f);
    if (ep.event == TerminationEvent::kRouteCompleted) success += 1;
    speed_sum += ep.mean_speed;
    double km = std::max(ep.distance_m, 10.0) / 1000.0;
    ped_rate += ep.infractions.collision_pedestrian / km;
    veh_rate += ep.infractions.collision_vehicle / km;
    red_rate += ep.infractions.red_light / km;
    stop_rate += ep.infractions.stop_sign / km;
  }
  const double n = static_cast<double>(eps.size());
  mean_std(rets, m.return_mean, m.return_std);
  mean_std(scores, m.driving_score_mean, m.driving_score_std);
  mean_std(completions, m.route_completion_mean, m.route_completion_std);
  m.infraction_penalty_mean = penalty_sum / n;
  m.success_rate = success / n;
  m.speed_mean = speed_sum / n;
  m.collisions_ped_per_km = ped_rate / n;
  m.collisions_veh_per_km = veh_rate / n;
  m.red_light_per_km = red_rate / n;
  m.stop_sign_per_km = stop_rate / n;
  return m;
}

std::string AggregateMetrics::to_json_string() const {
  nlohmann::json j{{"episodes", episodes},
                   {"return_mean", return_mean},
                   {"return_std", return_std},
                   {"driving_score_mean", driving_score_mean},
                   {"driving_score_std", driving_score_std},
                   {"infraction_penalty_mean", infraction_penalty_mean},
                   {"success_rate", success_rate},
                   {"route_completion_mean", route_completion_mean},
                   {"route_completion_std", route_completion_std},
                   {"speed_mean", speed_mean},
                   {"collisions_ped_per_km", collisions_ped_per_km},
                   {"collisions_veh_per_km", collisions_veh_per_km},
                   {"red_light_per_km", red_light_per_km},
                   {"stop_sign_per_km", stop_sign_per_km}};
  return j.dump(2) + "\n";
}

std::string AggregateMetrics::to_table() const {
  char buf[1024];
  std::snprintf(buf, sizeof(buf),
                "episodes            %8d\n"
                "return              %8.2f +- %.2f\n"
                "driving score       %8.3f +- %.3f\n"
                "infraction penalty  %8.3f\n"
                "success rate        %8.3f\n"
                "route completion    %8.3f +- %.3f\n"
                "mean speed          %8.3f m/s\n"
                "collisions ped/km   %8.3f\n"
                "collisions veh/km   %8.3f\n"
                "red lights /km      %8.3f\n"
                "stop signs /km      %8.3f\n",
                episodes, return_mean, return_std, driving_score_mean, driving_score_std,
                infraction_penalty_mean, success_rate, route_completion_mean, route_completion_std,
                speed_mean, collisions_ped_per_km, collisions_veh_per_km, red_light_per_km,
                stop_sign_per_km);
  return buf;
}

// ---------------------------------------------------------------------------
// CSV

void CsvWriter::open(const std::string& path, const std::vector<std::string>& columns) {
  out_.open(path);
  if (!out_) throw std::runtime_error("csv: cannot write " + path);
  n_cols_ = columns.size();
  for (size_t i = 0; i < columns.size(); ++i) {
    out_ << columns[i] << (i + 1 < columns.size() ? "," : "\n");
  }
}

void CsvWriter::row(const std::vector<double>& values) {
  if (values.size() != n_cols_) throw std::invalid_argument("csv: column count mismatch");
  char buf[32];
  for (size_t i = 0; i < values.size(); ++i) {
    std::snprintf(buf, sizeof(buf), "%.10g", values[i]);
    out_ << buf << (i + 1 < values.size() ? "," : "\n");
  }
}

void CsvWriter::close() {
  if (out_.is_open()) out_.close();
}

int CsvTable::column_index(const std::string& name) const {
  for (size_t i = 0; i < columns.size(); ++i) {
    if (columns[i] == name) return static_cast<int>(i);
  }
  return -1;
}

std::vector<double> CsvTable::column(const std::string& name) const {
  int idx = column_index(name);
  if (idx < 0) throw std::invalid_argument("csv: no column named " + name);
  std::vector<double> out;
  out.reserve(rows.size());
  for (const auto& r : rows) out.push_back(r[static_cast<size_t>(idx)]);
  return out;
}

CsvTable CsvTable::read(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("csv: cannot open " + path);
  CsvTable t;
  std::string line;
  if (!std::getline(in, line)) return t;
  std::stringstream header(line);
  std::string cell;
  while (std::getline(header, cell, ',')) t.columns.push_back(cell);
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<double> row;
    row.reserve(t.columns.size());
    std::stringstream ss(line);
    while (std::getline(ss, cell, ',')) row.push_back(std::strtod(cell.c_str(), nullptr));
    if (row.size() == t.columns.size()) t.rows.push_back(std::move(row));
  }
  return t;
}

}  // namespace guiderl
