#pragma once

// End-to-end driver: parse a task-file, load and bind its data, compile,
// minimize sigma(alpha) through the cross-validation oracle, refit on the
// full dataset, and write the report, solution tables, and plot data.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "svf/cv.hpp"
#include "svf/runtime.hpp"
#include "svf/taskfile.hpp"

namespace svf {

struct ValidationError : Error {
  using Error::Error;
};

struct RunFlags {
  std::uint64_t seed = 0;              // solver restart jitter stream
  std::optional<RunMode> mode;         // overrides the RunSolver directive
  int workers = 0;                     // LocalParallel lanes; 0 = hardware
  std::vector<Endpoint> endpoints;     // ServerParallel workers
  double job_timeout = 600.0;          // seconds per remote job
  double tol_sigma = -1.0;             // sigma stop threshold; <0 = relative
  std::vector<double> alpha0;          // initial alpha; empty = all ones
  int multistart = 0;                  // extra jittered solver starts
  bool standardize = false;            // zero-mean/unit-variance z columns
  std::string out_dir = ".";
};

struct RunOutputs {
  std::string label;          // task-file stem; names every output file
  CvReport report;
  int oracle_calls = 0;
  int main_calls = 0;
  bool failed = false;        // solve failure: partial outputs, exit code 2
  std::string failure;
  std::vector<std::filesystem::path> files;  // everything written

  int exit_code() const { return failed ? 2 : 0; }
};

// Runs the whole pipeline. Throws (FileNotFound, ParseError,
// ValidationError, Error) on configuration problems; solve failures are
// reported through `failed` after the partial report has been written.
// `log` receives one trace line per sigma evaluation; may be null.
RunOutputs run(const std::string& taskfile_path, const RunFlags& flags = {},
               std::ostream* log = nullptr);

struct CompareRow {
  std::string label;
  double sigma_star = 0;
  double rmse_star = 0;
};

struct Comparison {
  std::vector<CompareRow> rows;            // sorted by sigma_star ascending
  std::vector<std::string> warnings;       // one per skipped report
};

// Reads report CSV files written by run(); unreadable ones are skipped with
// a warning. Duplicate labels are suffixed (#2, #3, ...), all rows kept.
Comparison compare_reports(const std::vector<std::string>& paths);

std::string comparison_text(const Comparison& c);
std::string comparison_csv(const Comparison& c);

}  // namespace svf
