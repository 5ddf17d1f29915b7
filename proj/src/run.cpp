#include "svf/run.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <sstream>
#include <thread>
#include <unordered_map>
#include <unordered_set>

#include "svf/compiler.hpp"
#include "svf/grid.hpp"
#include "svf/surrogate.hpp"
#include "svf/util.hpp"

namespace svf {

namespace fs = std::filesystem;

namespace {

std::string read_text(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw FileNotFound(p.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text(const fs::path& p, const std::string& body) {
  std::ofstream f(p, std::ios::binary | std::ios::trunc);
  if (!f) throw Error("run: cannot open " + p.string() + " for writing");
  f << body;
  f.flush();
  if (!f) throw Error("run: write failed: " + p.string());
}

std::string join_values(std::span<const double> a, char sep = ' ') {
  std::string s;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (i) s += sep;
    s += format_double(a[i]);
  }
  return s;
}

const char* status_name(SolveStatus s) {
  switch (s) {
    case SolveStatus::Converged: return "converged";
    case SolveStatus::MaxIter: return "max-iter";
    default: return "degenerate";
  }
}

double eval_poly_1d(std::span<const double> c, double u) {
  double acc = 0.0;
  for (std::size_t k = c.size(); k-- > 0;) acc = acc * u + c[k];
  return acc;
}

double eval_poly_2d(std::span<const double> c,
                    const std::vector<std::pair<int, int>>& mono, double a,
                    double b) {
  double s = 0.0;
  for (std::size_t i = 0; i < mono.size(); ++i)
    s += c[i] * std::pow(a, mono[i].first) * std::pow(b, mono[i].second);
  return s;
}

// One solution table per declared unknown, in layout order. `values` slices
// the full-fit point, so the audit can reassemble the point from the tables.
struct SolutionTable {
  const VarSegment* seg = nullptr;
  std::vector<double> values;
  std::string csv;  // empty for scalars, which share one table
};

std::vector<SolutionTable> build_tables(const ModelCompiler& mc,
                                        const NlpProblem& full,
                                        std::span<const double> point) {
  std::vector<SolutionTable> tables;
  for (const VarSegment& seg : full.layout) {
    SolutionTable t;
    t.seg = &seg;
    t.values.assign(point.begin() + static_cast<std::ptrdiff_t>(seg.offset),
                    point.begin() +
                        static_cast<std::ptrdiff_t>(seg.offset + seg.count));
    std::ostringstream csv;
    switch (seg.kind) {
      case VarSegment::Kind::GridFunction: {
        const Grid& g = mc.grid(seg.grids[0]);
        csv << g.name << ',' << seg.name << '\n';
        for (std::size_t i = 0; i < t.values.size(); ++i)
          csv << format_double(g.node(i)) << ',' << format_double(t.values[i])
              << '\n';
        t.csv = csv.str();
        break;
      }
      case VarSegment::Kind::PolyCoeffs: {
        if (seg.grids.size() == 1) {
          csv << "pow_" << seg.grids[0] << ",coeff\n";
          for (std::size_t k = 0; k < t.values.size(); ++k)
            csv << k << ',' << format_double(t.values[k]) << '\n';
        } else {
          const auto mono = monomials_2d(seg.degree);
          csv << "pow_" << seg.grids[0] << ",pow_" << seg.grids[1]
              << ",coeff\n";
          for (std::size_t i = 0; i < mono.size(); ++i)
            csv << mono[i].first << ',' << mono[i].second << ','
                << format_double(t.values[i]) << '\n';
        }
        t.csv = csv.str();
        break;
      }
      case VarSegment::Kind::Scalar:
        break;  // collected into one shared table by the caller
    }
    tables.push_back(std::move(t));
  }
  return tables;
}

std::string scalars_csv(const std::vector<SolutionTable>& tables) {
  std::ostringstream csv;
  csv << "name,value\n";
  for (const SolutionTable& t : tables)
    if (t.seg->kind == VarSegment::Kind::Scalar)
      csv << t.seg->name << ',' << format_double(t.values[0]) << '\n';
  return csv.str();
}

std::string plot_csv(const ModelCompiler& mc, const SolutionTable& t) {
  std::ostringstream csv;
  if (t.seg->kind == VarSegment::Kind::GridFunction) {
    const Grid& g = mc.grid(t.seg->grids[0]);
    csv << g.name << ',' << t.seg->name << '\n';
    for (std::size_t i = 0; i < t.values.size(); ++i)
      csv << format_double(g.node(i)) << ',' << format_double(t.values[i])
          << '\n';
  } else if (t.seg->grids.size() == 1) {
    const Grid& g = mc.grid(t.seg->grids[0]);
    csv << g.name << ',' << t.seg->name << '\n';
    for (double u : g.nodes)
      csv << format_double(u) << ','
          << format_double(eval_poly_1d(t.values, u)) << '\n';
  } else {
    const Grid& ga = mc.grid(t.seg->grids[0]);
    const Grid& gb = mc.grid(t.seg->grids[1]);
    const auto mono = monomials_2d(t.seg->degree);
    csv << ga.name << ',' << gb.name << ',' << t.seg->name << '\n';
    for (double a : ga.nodes)
      for (double b : gb.nodes)
        csv << format_double(a) << ',' << format_double(b) << ','
            << format_double(eval_poly_2d(t.values, mono, a, b)) << '\n';
  }
  return csv.str();
}

std::string history_csv(const std::vector<CvHistoryEntry>& hist, int n_alpha) {
  std::ostringstream csv;
  csv << "nu,sigma,reliable";
  for (int i = 0; i < n_alpha; ++i) csv << ",alpha_" << i;
  csv << '\n';
  for (std::size_t nu = 0; nu < hist.size(); ++nu) {
    csv << nu << ',' << format_double(hist[nu].sigma) << ','
        << (hist[nu].reliable ? 1 : 0);
    for (double a : hist[nu].alpha) csv << ',' << format_double(a);
    csv << '\n';
  }
  return csv.str();
}

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> cells;
  std::string cell;
  for (char c : line) {
    if (c == ',') {
      cells.push_back(cell);
      cell.clear();
    } else if (c != '\r') {
      cell += c;
    }
  }
  cells.push_back(cell);
  return cells;
}

}  // namespace

RunOutputs run(const std::string& taskfile_path, const RunFlags& flags,
               std::ostream* log) {
  const fs::path tf(taskfile_path);
  TaskSpec spec = parse_taskfile(read_text(tf));

  std::vector<Grid> grids;
  for (const GridDecl& d : spec.grids) {
    std::string warn;
    grids.push_back(build_grid(d, &warn));
    if (!warn.empty() && log) *log << "[grid] " << warn << '\n';
  }

  // Structural diagnostics before touching the data file, so a broken
  // task-file is reported even when the data is missing too.
  if (auto diags = validate(spec, nullptr); !diags.empty()) {
    std::string msg = "task-file invalid:";
    for (const std::string& d : diags) msg += "\n  " + d;
    throw ValidationError(msg);
  }

  fs::path dp(spec.data_path);
  if (dp.is_relative()) dp = tf.parent_path() / dp;
  Dataset data = load_table(dp.string(), spec.data_columns);

  if (auto diags = validate(spec, &data); !diags.empty()) {
    std::string msg = "task-file does not match data:";
    for (const std::string& d : diags) msg += "\n  " + d;
    throw ValidationError(msg);
  }

  std::vector<std::string> notes;
  if (flags.standardize) {
    std::vector<std::vector<double>> cols;
    cols.reserve(data.names().size());
    for (const std::string& name : data.names()) cols.push_back(data.column(name));
    for (std::size_t ci = 0; ci < cols.size(); ++ci) {
      if (!spec.find_var(data.names()[ci])) continue;  // coordinates stay raw
      std::vector<double>& z = cols[ci];
      const double n = static_cast<double>(z.size());
      const double mean = std::accumulate(z.begin(), z.end(), 0.0) / n;
      double var = 0;
      for (double v : z) var += (v - mean) * (v - mean);
      const double sd = std::sqrt(var / n);
      if (!(sd > 0)) {
        notes.push_back("column " + data.names()[ci] +
                        ": zero variance, left unscaled");
        continue;
      }
      for (double& v : z) v = (v - mean) / sd;
      notes.push_back("column " + data.names()[ci] + ": standardized, mean=" +
                      format_double(mean) + " sd=" + format_double(sd));
    }
    data = Dataset(data.names(), std::move(cols));
    if (log)
      for (const std::string& n : notes) *log << "[data] " << n << '\n';
  }

  MeasurementBinding binding = bind_measurements(data, spec, grids);
  ModelCompiler mc(spec, std::move(grids), std::move(binding));

  if (spec.cv_step < 2)
    throw ValidationError("CVstep must be at least 2, got " +
                          std::to_string(spec.cv_step));
  Partition part =
      make_partition(data.rows(), static_cast<std::size_t>(spec.cv_step));

  SolveSettings ss;
  ss.seed = flags.seed;
  ss.restarts = std::max(0, flags.multistart);

  const RunMode rm = flags.mode.value_or(spec.run_solver);
  ExecMode em = ExecMode::local();
  if (rm == RunMode::LocalParallel) {
    const int hw = static_cast<int>(std::thread::hardware_concurrency());
    const int w = flags.workers > 0 ? flags.workers : (hw > 0 ? hw : 1);
    em = ExecMode::local_parallel(w);
  } else if (rm == RunMode::ServerParallel) {
    if (flags.endpoints.empty())
      throw Error("run: ServerParallel requires at least one endpoint");
    em = ExecMode::server_parallel(flags.endpoints);
  }
  em.job_timeout = flags.job_timeout;
  const BatchExecutor exec = make_executor(em);

  CvEngine engine(mc, Partition{part.subsets}, ss);
  const int n_alpha = static_cast<int>(engine.n_alpha());
  if (!flags.alpha0.empty() &&
      flags.alpha0.size() != static_cast<std::size_t>(n_alpha))
    throw Error("run: alpha0 has " + std::to_string(flags.alpha0.size()) +
                " components, model declares " + std::to_string(n_alpha));

  const fs::path out_dir(flags.out_dir.empty() ? "." : flags.out_dir);
  fs::create_directories(out_dir);

  RunOutputs out;
  out.label = tf.stem().string().empty() ? "model" : tf.stem().string();
  out.report.label = out.label;

  if (log)
    *log << "[run] " << out.label << ": " << data.rows() << " rows, "
         << mc.binding().items.size() << " measurements, "
         << engine.subset_count() << " cv subsets, n_alpha=" << n_alpha
         << '\n';

  std::vector<CvEvaluation> evals;
  const SigmaOracle oracle = [&](std::span<const double> a) {
    CvEvaluation ev = engine.cv_error(a, exec);
    if (log)
      *log << "[cv] " << evals.size() << " alpha=(" << join_values(a)
           << ") sigma=" << format_double(ev.sigma)
           << (ev.reliable ? "" : " unreliable") << '\n';
    evals.push_back(std::move(ev));
    return std::pair<double, bool>(evals.back().sigma,
                                   evals.back().reliable);
  };

  SurrogateSettings sg;
  sg.max_iterations =
      static_cast<int>(std::max<std::int64_t>(spec.cv_num_of_iter, 0));
  sg.tol_sigma = flags.tol_sigma;
  sg.alpha0 = flags.alpha0;

  // Anything thrown from here to the end of the final fit is a solve
  // failure: write what we have, flag it, exit code 2.
  const auto fail = [&](const std::string& why,
                        const std::vector<SurrogatePoint>& hist) {
    out.failed = true;
    out.failure = why;
    out.oracle_calls = static_cast<int>(evals.size());
    for (const SurrogatePoint& p : hist)
      out.report.history.push_back({p.alpha, p.sigma, p.reliable});
    std::ostringstream txt;
    txt << "model: " << out.label << "\nstatus: FAILED (partial results)\n"
        << "error: " << why << "\nsigma evaluations: " << evals.size()
        << '\n';
    if (!out.report.history.empty()) {
      txt << "history:\n  nu sigma reliable alpha\n";
      for (std::size_t nu = 0; nu < out.report.history.size(); ++nu) {
        const CvHistoryEntry& h = out.report.history[nu];
        txt << "  " << nu << ' ' << format_double(h.sigma) << ' '
            << (h.reliable ? "yes" : "no") << " (" << join_values(h.alpha)
            << ")\n";
      }
    }
    const fs::path rp = out_dir / (out.label + ".report.txt");
    write_text(rp, txt.str());
    out.files.push_back(rp);
    const fs::path hp = out_dir / (out.label + ".history.csv");
    write_text(hp, history_csv(out.report.history, n_alpha));
    out.files.push_back(hp);
    if (log) *log << "[run] FAILED: " << why << '\n';
    return out;
  };

  SurrogateResult res;
  try {
    res = optimize(oracle, n_alpha, sg);
  } catch (const OracleFailure& e) {
    return fail(e.what(), e.partial.history);
  } catch (const std::exception& e) {
    return fail(e.what(), {});
  }

  std::pair<SolveResult, double> fit;
  try {
    fit = engine.final_fit(res.alpha_star, exec);
  } catch (const std::exception& e) {
    return fail(std::string("final fit: ") + e.what(), res.state.history);
  }

  const SurrogateState& st = res.state;
  out.oracle_calls = static_cast<int>(st.history.size());
  out.main_calls = st.main_calls;

  CvEvaluation star;  // the evaluation behind sigma*
  if (evals.size() == st.history.size() && st.best < evals.size())
    star = std::move(evals[st.best]);
  else
    star = engine.cv_error(res.alpha_star, exec);

  CvReport& rep = out.report;
  rep.alpha_star = res.alpha_star;
  rep.sigma_star = res.sigma_star;
  rep.rmse_star = fit.second;
  rep.full_fit = fit.first;
  for (const SurrogatePoint& p : st.history)
    rep.history.push_back({p.alpha, p.sigma, p.reliable});

  const NlpProblem& full = engine.full_problem();
  const std::vector<SolutionTable> tables =
      build_tables(mc, full, fit.first.point);

  // Self-audit before anything is written: sigma* must reproduce from the
  // per-subset solutions, rmse* from the solution tables (reassembled into a
  // point, so a mis-sliced table would be caught) plus the dataset.
  const std::size_t items = mc.binding().items.size();
  {
    std::vector<double> x_re(full.n_vars(), 0.0);
    for (const SolutionTable& t : tables)
      std::copy(t.values.begin(), t.values.end(),
                x_re.begin() + static_cast<std::ptrdiff_t>(t.seg->offset));
    std::vector<std::size_t> all(data.rows());
    std::iota(all.begin(), all.end(), 0);
    const double rmse_re = std::sqrt(
        evaluate_on_test(full, mc.binding(), all, x_re) /
        static_cast<double>(items));
    double total = 0;
    for (std::size_t i = 0; i < part.subsets.size(); ++i)
      total += evaluate_on_test(engine.subset_problem(i), mc.binding(),
                                part.subsets[i], star.solves[i].point);
    const double sigma_re = std::sqrt(total / static_cast<double>(items));
    if (std::abs(rmse_re - rep.rmse_star) > 1e-9 ||
        std::abs(sigma_re - rep.sigma_star) > 1e-9)
      throw Error("run: self-audit failed: report sigma*/rmse* do not "
                  "reproduce from the solution tables");
  }

  // Held-out predictions behind sigma*, one row per measurement item.
  std::ostringstream cv_csv;
  cv_csv << "subset,item,row,z,prediction\n";
  for (std::size_t i = 0; i < part.subsets.size(); ++i) {
    const NlpProblem& p = engine.subset_problem(i);
    const std::unordered_set<std::size_t> held(part.subsets[i].begin(),
                                               part.subsets[i].end());
    for (std::size_t j = 0; j < mc.binding().items.size(); ++j) {
      const Measurement& m = mc.binding().items[j];
      if (!held.count(m.row)) continue;
      const VarSegment* seg = p.segment(m.var);
      const double pred = MeasurementBinding::apply(
          m, star.solves[i].point.data() + seg->offset);
      cv_csv << i << ',' << j << ',' << m.row << ',' << format_double(m.z)
             << ',' << format_double(pred) << '\n';
    }
  }

  std::ostringstream rcsv;
  rcsv << "label,n_alpha,sigma_star,rmse_star,oracle_calls,main_calls,"
          "full_fit_status";
  for (int i = 0; i < n_alpha; ++i) rcsv << ",alpha_star_" << i;
  rcsv << '\n'
       << rep.label << ',' << n_alpha << ',' << format_double(rep.sigma_star)
       << ',' << format_double(rep.rmse_star) << ',' << out.oracle_calls
       << ',' << out.main_calls << ',' << status_name(rep.full_fit.status);
  for (double a : rep.alpha_star) rcsv << ',' << format_double(a);
  rcsv << '\n';

  std::ostringstream txt;
  txt << "model: " << rep.label << "\ntask-file: " << tf.string()
      << "\ndata: " << dp.string() << " (" << data.rows() << " rows, "
      << items << " measurements)\n";
  for (const Grid& g : mc.grids())
    txt << "grid: " << g.name << " [" << format_double(g.min) << ", "
        << format_double(g.max) << "] h=" << format_double(g.h) << " ("
        << g.size() << " nodes)\n";
  txt << "cv: " << engine.subset_count() << " subsets\nn_alpha: " << n_alpha
      << "\nstatus: ok\n";
  for (const std::string& n : notes) txt << "note: " << n << '\n';
  txt << "alpha*: (" << join_values(rep.alpha_star) << ")\nsigma*: "
      << format_double(rep.sigma_star)
      << "\nrmse*: " << format_double(rep.rmse_star) << "\nfull fit: "
      << status_name(rep.full_fit.status)
      << " objective=" << format_double(rep.full_fit.objective)
      << " violation=" << format_double(rep.full_fit.max_violation)
      << " outer=" << rep.full_fit.outer_iters
      << " inner=" << rep.full_fit.inner_iters << "\nsigma evaluations: "
      << out.oracle_calls << " (main loop " << out.main_calls << ")\n";
  txt << "history:\n  nu sigma reliable alpha\n";
  for (std::size_t nu = 0; nu < rep.history.size(); ++nu) {
    const CvHistoryEntry& h = rep.history[nu];
    txt << "  " << nu << ' ' << format_double(h.sigma) << ' '
        << (h.reliable ? "yes" : "no") << " (" << join_values(h.alpha)
        << ")\n";
  }
  txt << "unknowns:\n";
  for (const SolutionTable& t : tables) {
    txt << "  " << t.seg->name;
    if (t.seg->kind == VarSegment::Kind::Scalar)
      txt << " = " << format_double(t.values[0]);
    else if (t.seg->kind == VarSegment::Kind::GridFunction)
      txt << ": grid function over " << t.seg->grids[0] << ", "
          << t.values.size() << " nodes";
    else
      txt << ": polynomial, degree " << t.seg->degree << ", "
          << t.values.size() << " coefficients";
    txt << '\n';
  }

  const auto emit = [&](const std::string& name, const std::string& body) {
    const fs::path p = out_dir / name;
    write_text(p, body);
    out.files.push_back(p);
  };

  emit(out.label + ".report.txt", txt.str());
  emit(out.label + ".report.csv", rcsv.str());
  emit(out.label + ".history.csv", history_csv(rep.history, n_alpha));
  emit(out.label + ".cv.csv", cv_csv.str());
  bool any_scalar = false;
  for (const SolutionTable& t : tables) {
    if (t.seg->kind == VarSegment::Kind::Scalar) {
      any_scalar = true;
      continue;
    }
    emit(out.label + ".sol." + t.seg->name + ".csv", t.csv);
  }
  if (any_scalar) emit(out.label + ".sol.scalars.csv", scalars_csv(tables));
  if (spec.draw)
    for (const SolutionTable& t : tables)
      if (t.seg->kind != VarSegment::Kind::Scalar)
        emit(out.label + ".plot." + t.seg->name + ".csv", plot_csv(mc, t));

  if (log) {
    *log << "[run] sigma*=" << format_double(rep.sigma_star)
         << " rmse*=" << format_double(rep.rmse_star) << " alpha*=("
         << join_values(rep.alpha_star) << ")\n";
    for (const fs::path& f : out.files) *log << "[out] " << f.string() << '\n';
  }
  return out;
}

Comparison compare_reports(const std::vector<std::string>& paths) {
  Comparison c;
  for (const std::string& path : paths) {
    std::ifstream in(path);
    if (!in) {
      c.warnings.push_back("skipping " + path + ": cannot open");
      continue;
    }
    std::string header_line, value_line;
    if (!std::getline(in, header_line) || !std::getline(in, value_line)) {
      c.warnings.push_back("skipping " + path + ": too short");
      continue;
    }
    const auto header = split_csv_line(header_line);
    const auto values = split_csv_line(value_line);
    const auto col = [&](const std::string& name) {
      const auto it = std::find(header.begin(), header.end(), name);
      return it == header.end() ? header.size()
                                : static_cast<std::size_t>(it - header.begin());
    };
    const std::size_t li = col("label"), si = col("sigma_star"),
                      ri = col("rmse_star");
    if (li >= values.size() || si >= values.size() || ri >= values.size()) {
      c.warnings.push_back("skipping " + path +
                           ": missing label/sigma_star/rmse_star columns");
      continue;
    }
    char* end = nullptr;
    CompareRow row;
    row.label = values[li];
    row.sigma_star = std::strtod(values[si].c_str(), &end);
    const bool ok_s = end == values[si].c_str() + values[si].size() &&
                      !values[si].empty();
    row.rmse_star = std::strtod(values[ri].c_str(), &end);
    const bool ok_r = end == values[ri].c_str() + values[ri].size() &&
                      !values[ri].empty();
    if (!ok_s || !ok_r || !std::isfinite(row.sigma_star) ||
        !std::isfinite(row.rmse_star)) {
      c.warnings.push_back("skipping " + path + ": unparsable numbers");
      continue;
    }
    c.rows.push_back(std::move(row));
  }

  // Duplicate labels get a #k suffix in input order, then sort by sigma*.
  std::unordered_map<std::string, int> seen;
  for (CompareRow& r : c.rows) {
    const int k = ++seen[r.label];
    if (k > 1) r.label += "#" + std::to_string(k);
  }
  std::stable_sort(c.rows.begin(), c.rows.end(),
                   [](const CompareRow& a, const CompareRow& b) {
                     return a.sigma_star < b.sigma_star;
                   });
  return c;
}

std::string comparison_text(const Comparison& c) {
  std::size_t w = 5;
  for (const CompareRow& r : c.rows) w = std::max(w, r.label.size());
  std::ostringstream os;
  os << std::left << std::setw(static_cast<int>(w + 2)) << "model"
     << std::setw(14) << "sigma*" << "rmse*\n";
  for (const CompareRow& r : c.rows)
    os << std::left << std::setw(static_cast<int>(w + 2)) << r.label
       << std::setw(14) << format_double(r.sigma_star)
       << format_double(r.rmse_star) << '\n';
  return os.str();
}

std::string comparison_csv(const Comparison& c) {
  std::string s = "label,sigma_star,rmse_star\n";
  for (const CompareRow& r : c.rows)
    s += r.label + "," + format_double(r.sigma_star) + "," +
         format_double(r.rmse_star) + "\n";
  return s;
}

}  // namespace svf
