#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "svf/demo.hpp"
#include "svf/run.hpp"
#include "svf/runtime.hpp"

namespace {

void write_or_die(const std::filesystem::path& p, const std::string& body) {
  std::ofstream f(p, std::ios::binary | std::ios::trunc);
  f << body;
  f.flush();
  if (!f) throw svf::Error("cannot write " + p.string());
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"svf: balanced identification of models from data"};
  app.require_subcommand(1);

  std::string taskfile;
  svf::RunFlags flags;
  std::string mode_str;
  std::vector<std::string> endpoint_strs;
  CLI::App* cmd_run = app.add_subcommand("run", "run a task-file end to end");
  cmd_run->add_option("taskfile", taskfile, "task-file path")->required();
  cmd_run->add_option("--seed", flags.seed, "solver restart jitter seed");
  cmd_run
      ->add_option("--mode", mode_str,
                   "execution mode, overrides the RunSolver directive")
      ->check(CLI::IsMember({"local", "par", "server"}));
  cmd_run->add_option("--workers", flags.workers,
                      "lane count for --mode par (default: hardware)");
  cmd_run
      ->add_option("--endpoints", endpoint_strs,
                   "worker host:port list for --mode server")
      ->delimiter(',');
  cmd_run->add_option("--job-timeout", flags.job_timeout,
                      "seconds per remote solve");
  cmd_run->add_option("--tol-sigma", flags.tol_sigma,
                      "stop when sigma improves by less than this");
  cmd_run->add_option("--alpha0", flags.alpha0, "initial alpha components")
      ->delimiter(',');
  cmd_run->add_option("--multistart", flags.multistart,
                      "extra jittered solver starts per solve");
  cmd_run->add_flag("--standardize", flags.standardize,
                    "scale measured columns to zero mean, unit variance");
  cmd_run->add_option("--out", flags.out_dir, "output directory");

  svf::DemoOptions demo;
  std::string demo_out = "demo.dat";
  std::string noise_str = "variance";
  CLI::App* cmd_gen =
      app.add_subcommand("gen-demo", "write the damped-oscillator demo data");
  cmd_gen->add_option("--seed", demo.seed, "noise stream seed");
  cmd_gen
      ->add_option("--noise", noise_str,
                   "how --level is read: variance|std|off")
      ->check(CLI::IsMember({"variance", "std", "off"}));
  cmd_gen->add_option("--level", demo.level, "noise variance or std");
  cmd_gen->add_flag("--exact-frequency", demo.exact_frequency,
                    "sample the exact oscillator solution instead of the "
                    "reference series");
  cmd_gen->add_option("--out", demo_out, "output file");

  std::vector<std::string> reports;
  std::string cmp_out;
  CLI::App* cmd_cmp =
      app.add_subcommand("compare", "tabulate run reports by sigma*");
  cmd_cmp->add_option("reports", reports, "report CSV paths")->required();
  cmd_cmp->add_option("--out", cmp_out,
                      "directory for comparison.txt and comparison.csv");

  std::string listen = "127.0.0.1:0";
  int slots = 1;
  CLI::App* cmd_worker =
      app.add_subcommand("worker", "serve solve jobs over TCP");
  cmd_worker->add_option("--listen", listen, "host:port (port 0 picks one)");
  cmd_worker->add_option("--slots", slots, "concurrent solves")
      ->check(CLI::PositiveNumber);

  CLI11_PARSE(app, argc, argv);

  try {
    if (*cmd_run) {
      if (!mode_str.empty())
        flags.mode = mode_str == "local"  ? svf::RunMode::Local
                     : mode_str == "par" ? svf::RunMode::LocalParallel
                                         : svf::RunMode::ServerParallel;
      for (const std::string& e : endpoint_strs)
        flags.endpoints.push_back(svf::parse_endpoint(e));
      const svf::RunOutputs out = svf::run(taskfile, flags, &std::cout);
      if (out.failed) std::cerr << "error: " << out.failure << '\n';
      return out.exit_code();
    }
    if (*cmd_gen) {
      demo.noise = noise_str == "off"   ? svf::DemoNoise::Off
                   : noise_str == "std" ? svf::DemoNoise::StdDev
                                        : svf::DemoNoise::Variance;
      svf::gen_demo(demo_out, demo);
      std::cout << demo_out << '\n';
      return 0;
    }
    if (*cmd_cmp) {
      const svf::Comparison c = svf::compare_reports(reports);
      for (const std::string& w : c.warnings)
        std::cerr << "warning: " << w << '\n';
      if (c.rows.empty()) {
        std::cerr << "error: no readable reports\n";
        return 1;
      }
      std::cout << svf::comparison_text(c);
      if (!cmp_out.empty()) {
        std::filesystem::create_directories(cmp_out);
        write_or_die(std::filesystem::path(cmp_out) / "comparison.txt",
                     svf::comparison_text(c));
        write_or_die(std::filesystem::path(cmp_out) / "comparison.csv",
                     svf::comparison_csv(c));
      }
      return 0;
    }
    // worker
    const svf::Endpoint ep = svf::parse_endpoint(listen);
    svf::Worker worker(ep.host, ep.port, slots);
    std::cout << "listening on " << ep.host << ":" << worker.port()
              << std::endl;
    worker.run();
    return 0;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
}
