#include "normlab/experiments.hpp"

#include <algorithm>
#include <cmath>
#include <mutex>
#include <ostream>

#include "normlab/csv.hpp"
#include "normlab/parallel.hpp"

namespace normlab {

std::vector<SweepResult> run_singularity_sweep(const SweepConfig& cfg,
                                               const Cifar10& data,
                                               std::ostream* log) {
  if (cfg.sigma_mu_grid.empty() || cfg.sigma_sigma_grid.empty())
    throw InvalidConfig("sweep: grids must be non-empty");
  if (cfg.seeds_per_cell < 1)
    throw InvalidConfig("sweep: seeds_per_cell must be positive");
  if (!(cfg.failure_threshold > 0 && cfg.failure_threshold < 1))
    throw InvalidConfig("sweep: failure_threshold must be in (0, 1)");

  struct Job {
    double sigma_mu, sigma_sigma;
    std::uint64_t seed;
  };
  std::vector<Job> jobs;
  for (const double smu : cfg.sigma_mu_grid)
    for (const double ssg : cfg.sigma_sigma_grid)
      for (int s = 0; s < cfg.seeds_per_cell; ++s)
        jobs.push_back({smu, ssg, cfg.base.seed + static_cast<std::uint64_t>(s)});

  std::vector<SweepResult> results(jobs.size());
  std::mutex log_mutex;
  const int workers = cfg.workers > 0 ? cfg.workers : hardware_threads();

  parallel_jobs(static_cast<int>(jobs.size()), workers, [&](int i) {
    const Job& job = jobs[static_cast<std::size_t>(i)];
    TrainConfig run_cfg = cfg.base;
    run_cfg.model.norm.kind = NormKind::fixed;
    run_cfg.model.norm.sigma_mu = job.sigma_mu;
    run_cfg.model.norm.sigma_sigma = job.sigma_sigma;
    run_cfg.seed = job.seed;
    run_cfg.threads = 1;  // parallelism lives at the cell level
    const RunResult run = train_run(run_cfg, data);

    SweepResult& r = results[static_cast<std::size_t>(i)];
    r.sigma_mu = job.sigma_mu;
    r.sigma_sigma = job.sigma_sigma;
    r.seed = job.seed;
    r.accuracy = run.final_test_acc;
    r.diverged = run.diverged;
    r.failed = run.diverged || run.final_test_acc < cfg.failure_threshold;
    r.distance = std::sqrt(job.sigma_mu * job.sigma_mu +
                           job.sigma_sigma * job.sigma_sigma);
    if (log) {
      std::lock_guard<std::mutex> lock(log_mutex);
      *log << "sweep cell (" << job.sigma_mu << ", " << job.sigma_sigma
           << ") seed " << job.seed << ": accuracy " << r.accuracy
           << (r.diverged ? " (diverged)" : "") << '\n';
    }
  });
  return results;
}

void write_sweep_csv(std::ostream& os, const std::vector<SweepResult>& rows) {
  os << "sigma_mu,sigma_sigma,seed,accuracy,failed,distance\n";
  for (const SweepResult& r : rows)
    os << format_g9(r.sigma_mu) << ',' << format_g9(r.sigma_sigma) << ','
       << r.seed << ',' << format_g9(r.accuracy) << ',' << (r.failed ? 1 : 0)
       << ',' << format_g9(r.distance) << '\n';
}

namespace {

std::vector<double> fractional_ranks(const std::vector<double>& v) {
  const std::size_t n = v.size();
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
  std::vector<double> ranks(n, 0.0);
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i;
    while (j + 1 < n && v[order[j + 1]] == v[order[i]]) ++j;
    const double avg = (static_cast<double>(i) + j) / 2.0 + 1.0;
    for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = avg;
    i = j + 1;
  }
  return ranks;
}

}  // namespace

double sweep_spearman(const std::vector<SweepResult>& rows) {
  // Pool seeds: one (distance, mean accuracy) point per grid cell.
  struct Cell {
    double distance = 0, acc_sum = 0;
    int count = 0;
  };
  std::vector<std::pair<std::pair<double, double>, Cell>> grid;
  for (const SweepResult& r : rows) {
    bool found = false;
    for (auto& [key, cell] : grid)
      if (key.first == r.sigma_mu && key.second == r.sigma_sigma) {
        cell.acc_sum += r.accuracy;
        ++cell.count;
        found = true;
        break;
      }
    if (!found)
      grid.push_back({{r.sigma_mu, r.sigma_sigma},
                      Cell{r.distance, r.accuracy, 1}});
  }
  if (grid.size() < 2) return 0.0;

  std::vector<double> dist, acc;
  for (const auto& [key, cell] : grid) {
    dist.push_back(cell.distance);
    acc.push_back(cell.acc_sum / cell.count);
  }
  const std::vector<double> rd = fractional_ranks(dist);
  const std::vector<double> ra = fractional_ranks(acc);
  const std::size_t n = rd.size();
  double md = 0, ma = 0;
  for (std::size_t i = 0; i < n; ++i) {
    md += rd[i];
    ma += ra[i];
  }
  md /= n;
  ma /= n;
  double cov = 0, vd = 0, va = 0;
  for (std::size_t i = 0; i < n; ++i) {
    cov += (rd[i] - md) * (ra[i] - ma);
    vd += (rd[i] - md) * (rd[i] - md);
    va += (ra[i] - ma) * (ra[i] - ma);
  }
  if (vd == 0 || va == 0) return 0.0;
  return cov / std::sqrt(vd * va);
}

// ------------------------------------------------------------------ trace

TraceVariant trace_variant_from_name(const std::string& name,
                                     const NormalizerSpec& base) {
  TraceVariant v;
  v.name = name;
  v.norm = base;
  std::string kind = name;
  if (const auto pos = name.find("+ws"); pos != std::string::npos) {
    v.ws = true;
    kind = name.substr(0, pos);
  }
  v.norm.kind = norm_kind_from_string(kind);
  if (v.norm.kind == NormKind::bn) {
    // Control: record normalized (pre-affine) values, which batch statistics
    // pin to zero mean and unit variance.
    v.site = RecordSite::norm_output;
  } else if (v.norm.kind != NormKind::gn && v.norm.kind != NormKind::ln) {
    throw InvalidConfig("statdiff trace supports gn/ln (+ws) and the bn "
                        "control, got: " + name);
  }
  return v;
}

std::vector<TraceResult> run_statdiff_trace(const TraceConfig& cfg,
                                            const Cifar10& data,
                                            std::ostream* log) {
  if (cfg.variants.empty())
    throw InvalidConfig("statdiff trace: no variants");
  std::vector<TraceVariant> variants;
  for (const std::string& name : cfg.variants)
    variants.push_back(trace_variant_from_name(name, cfg.base.model.norm));

  std::vector<TraceResult> results(variants.size());
  std::mutex log_mutex;
  const int workers = cfg.workers > 0 ? cfg.workers : hardware_threads();
  parallel_jobs(static_cast<int>(variants.size()), workers, [&](int i) {
    const TraceVariant& v = variants[static_cast<std::size_t>(i)];
    TrainConfig run_cfg = cfg.base;
    run_cfg.model.norm = v.norm;
    run_cfg.model.ws = v.ws;
    run_cfg.record_stats = true;
    run_cfg.record_site = v.site;
    run_cfg.threads = 1;
    results[static_cast<std::size_t>(i)] =
        TraceResult{v.name, train_run(run_cfg, data)};
    if (log) {
      std::lock_guard<std::mutex> lock(log_mutex);
      *log << "trace variant " << v.name << ": done, final test acc "
           << results[static_cast<std::size_t>(i)].run.final_test_acc << '\n';
    }
  });
  return results;
}

}  // namespace normlab
