#include "mutflow/metrics.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <map>
#include <numeric>

#include <json.hpp>

#include "mutflow/error.hpp"

namespace mutflow {
namespace {

void check_pair(std::span<const double> x, std::span<const double> y, const char* what) {
  if (x.size() != y.size()) throw ContractError(std::string(what) + ": length mismatch");
  if (x.size() < 2) throw UndefinedMetric(std::string(what) + ": need at least two values");
}

}  // namespace

double pearson(std::span<const double> x, std::span<const double> y) {
  check_pair(x, y, "pearson");
  const double n = static_cast<double>(x.size());
  const double mx = std::accumulate(x.begin(), x.end(), 0.0) / n;
  const double my = std::accumulate(y.begin(), y.end(), 0.0) / n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double dx = x[i] - mx, dy = y[i] - my;
    sxy += dx * dy;
    sxx += dx * dx;
    syy += dy * dy;
  }
  if (sxx == 0.0 || syy == 0.0) throw UndefinedMetric("pearson: constant input");
  return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

std::vector<double> average_ranks(std::span<const double> x) {
  std::vector<std::size_t> order(x.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return x[a] < x[b]; });
  std::vector<double> ranks(x.size());
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j + 1 < order.size() && x[order[j + 1]] == x[order[i]]) ++j;
    const double r = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = r;
    i = j + 1;
  }
  return ranks;
}

double spearman(std::span<const double> x, std::span<const double> y) {
  check_pair(x, y, "spearman");
  const auto rx = average_ranks(x), ry = average_ranks(y);
  try {
    return pearson(rx, ry);
  } catch (const UndefinedMetric&) {
    throw UndefinedMetric("spearman: all values tied");
  }
}

ErrorStats rmse_mae(std::span<const double> pred, std::span<const double> truth) {
  if (pred.size() != truth.size()) throw ContractError("rmse_mae: length mismatch");
  if (pred.empty()) throw ContractError("rmse_mae: empty input");
  double se = 0.0, ae = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double e = pred[i] - truth[i];
    se += e * e;
    ae += std::abs(e);
  }
  const double n = static_cast<double>(pred.size());
  return {std::sqrt(se / n), ae / n};
}

double auroc(std::span<const double> scores, std::span<const double> truth) {
  if (scores.size() != truth.size()) throw ContractError("auroc: length mismatch");
  // Mann-Whitney U from average ranks.
  const auto ranks = average_ranks(scores);
  double pos = 0.0, rank_sum = 0.0;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    if (truth[i] > 0.0) {
      pos += 1.0;
      rank_sum += ranks[i];
    }
  }
  const double neg = static_cast<double>(truth.size()) - pos;
  if (pos == 0.0 || neg == 0.0) throw UndefinedMetric("auroc: labels contain a single class");
  return (rank_sum - pos * (pos + 1.0) / 2.0) / (pos * neg);
}

PerStructure per_structure(std::span<const ScoredRecord> records) {
  std::map<std::string, std::pair<std::vector<double>, std::vector<double>>> groups;
  for (const ScoredRecord& r : records) {
    if (!r.truth) continue;
    auto& [p, t] = groups[r.complex_id];
    p.push_back(r.pred);
    t.push_back(*r.truth);
  }
  PerStructure out;
  double sp = 0.0, ss = 0.0;
  for (const auto& [id, pt] : groups) {
    if (pt.first.size() < kMinGroupSize) continue;
    try {
      const double a = pearson(pt.first, pt.second);
      const double b = spearman(pt.first, pt.second);
      sp += a;
      ss += b;
      ++out.groups;
    } catch (const UndefinedMetric&) {
    }
  }
  if (out.groups == 0) throw UndefinedMetric("per_structure: no complex has ten or more labelled records");
  out.pearson = sp / static_cast<double>(out.groups);
  out.spearman = ss / static_cast<double>(out.groups);
  return out;
}

std::vector<double> ranking_ratio(std::span<const double> predictions, std::span<const std::size_t> targets) {
  const auto ranks = average_ranks(predictions);
  std::vector<double> out;
  for (std::size_t t : targets) {
    if (t >= predictions.size()) throw DataError("ranking_ratio: target " + std::to_string(t) + " not in list");
    out.push_back(ranks[t] / static_cast<double>(predictions.size()));
  }
  return out;
}

SubsetSplit subset_split(std::span<const ScoredRecord> records) {
  SubsetSplit s;
  for (const ScoredRecord& r : records) (r.mutation_count == 1 ? s.single : s.multiple).push_back(r);
  return s;
}

namespace {

SubsetReport report_for(const std::string& name, std::span<const ScoredRecord> records) {
  SubsetReport rep;
  rep.subset = name;
  std::vector<double> p, t;
  for (const ScoredRecord& r : records) {
    if (!r.truth) continue;
    p.push_back(r.pred);
    t.push_back(*r.truth);
  }
  rep.count = p.size();
  auto attempt = [](auto&& fn) -> std::optional<double> {
    try {
      return fn();
    } catch (const UndefinedMetric&) {
      return std::nullopt;
    }
  };
  rep.pearson = attempt([&] { return pearson(p, t); });
  rep.spearman = attempt([&] { return spearman(p, t); });
  if (!p.empty()) {
    const ErrorStats e = rmse_mae(p, t);
    rep.rmse = e.rmse;
    rep.mae = e.mae;
  }
  rep.auroc = attempt([&] { return auroc(p, t); });
  try {
    rep.per_structure = per_structure(records);
  } catch (const UndefinedMetric&) {
  }
  return rep;
}

nlohmann::json opt(const std::optional<double>& v) { return v ? nlohmann::json(*v) : nlohmann::json(nullptr); }

}  // namespace

EvalReport evaluate_records(std::span<const ScoredRecord> records) {
  EvalReport r;
  const SubsetSplit split = subset_split(records);
  r.subsets.push_back(report_for("all", records));
  r.subsets.push_back(report_for("single", split.single));
  r.subsets.push_back(report_for("multiple", split.multiple));
  return r;
}

std::string EvalReport::to_json() const {
  nlohmann::ordered_json j;
  for (const SubsetReport& s : subsets) {
    nlohmann::ordered_json o;
    o["count"] = s.count;
    o["pearson"] = opt(s.pearson);
    o["spearman"] = opt(s.spearman);
    o["rmse"] = opt(s.rmse);
    o["mae"] = opt(s.mae);
    o["auroc"] = opt(s.auroc);
    if (s.per_structure) {
      o["per_structure"] = {{"pearson", s.per_structure->pearson},
                            {"spearman", s.per_structure->spearman},
                            {"groups", s.per_structure->groups}};
    } else {
      o["per_structure"] = nullptr;
    }
    j[s.subset] = o;
  }
  return j.dump(2) + "\n";
}

std::string format_double(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, ptr);
}

std::string predictions_csv(std::span<const ScoredRecord> records) {
  const bool labelled = std::any_of(records.begin(), records.end(), [](const auto& r) { return r.truth.has_value(); });
  std::string out = labelled ? "complex_id,mutations,ddg_pred,ddg_true\n" : "complex_id,mutations,ddg_pred\n";
  for (const ScoredRecord& r : records) {
    out += r.complex_id + "," + r.mutations + "," + format_double(r.pred);
    if (labelled) out += "," + (r.truth ? format_double(*r.truth) : std::string());
    out += "\n";
  }
  return out;
}

std::vector<ScoredRecord> parse_predictions_csv(std::string_view text) {
  std::vector<ScoredRecord> out;
  std::size_t pos = 0, line_no = 0;
  bool header = true;
  while (pos < text.size()) {
    std::size_t end = text.find('\n', pos);
    if (end == std::string_view::npos) end = text.size();
    std::string line(text.substr(pos, end - pos));
    pos = end + 1;
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (header) {
      if (!line.starts_with("complex_id,mutations,ddg_pred")) {
        throw DataError("predictions file: header must start with complex_id,mutations,ddg_pred");
      }
      header = false;
      continue;
    }
    std::vector<std::string> f;
    std::size_t s = 0;
    while (true) {
      const std::size_t c = line.find(',', s);
      f.push_back(line.substr(s, c == std::string::npos ? std::string::npos : c - s));
      if (c == std::string::npos) break;
      s = c + 1;
    }
    if (f.size() < 3 || f.size() > 4) throw DataError("predictions file line " + std::to_string(line_no) + ": bad field count");
    ScoredRecord r;
    r.complex_id = f[0];
    r.mutations = f[1];
    r.mutation_count = static_cast<std::size_t>(std::count(f[1].begin(), f[1].end(), ';')) + 1;
    try {
      r.pred = std::stod(f[2]);
      if (f.size() == 4 && !f[3].empty()) r.truth = std::stod(f[3]);
    } catch (const std::exception&) {
      throw DataError("predictions file line " + std::to_string(line_no) + ": bad number");
    }
    out.push_back(std::move(r));
  }
  return out;
}

std::string scatter_csv(std::span<const ScoredRecord> records) {
  std::string out = "subset,complex_id,mutations,ddg_pred,ddg_true\n";
  for (const ScoredRecord& r : records) {
    if (!r.truth) continue;
    const std::string line = "," + r.complex_id + "," + r.mutations + "," + format_double(r.pred) + "," +
                             format_double(*r.truth) + "\n";
    out += "all" + line;
    out += (r.mutation_count == 1 ? "single" : "multiple") + line;
  }
  return out;
}

}  // namespace mutflow
