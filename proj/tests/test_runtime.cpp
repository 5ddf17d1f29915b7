#include <netinet/in.h>
#include <sys/socket.h>
#include <unistd.h>

#include <string>
#include <thread>
#include <vector>

#include "doctest.h"
#include "svf/runtime.hpp"

using namespace svf;

namespace {

struct Fixture {
  TaskSpec spec;
  std::vector<Grid> grids;
  Dataset data;
  MeasurementBinding binding;
  ModelCompiler compiler;

  Fixture(const std::string& task, std::vector<double> t, std::vector<double> x)
      : spec(parse_taskfile(task)),
        grids(build_all(spec)),
        data({"t", "x"}, {std::move(t), std::move(x)}),
        binding(bind_measurements(data, spec, grids)),
        compiler(spec, grids, binding) {}

  static std::vector<Grid> build_all(const TaskSpec& s) {
    std::vector<Grid> gs;
    for (const auto& d : s.grids) gs.push_back(build_grid(d));
    return gs;
  }
};

// Five-node smoothing spline; one penalty slot.
const char* kTask =
    "CVNumOfIter 1\n"
    "CVstep 2\n"
    "Select x, t from d\n"
    "GRID: t in [0, 2, 0.5]\n"
    "VAR: x(t)\n"
    "OBJ: x.MSD() + x.Complexity(Penal[0])\n"
    "EOF\n";

Fixture make_fixture() {
  return Fixture(kTask, {0.0, 0.5, 1.5, 2.0}, {1.0, 2.0, 0.0, 1.0});
}

// Worker on an ephemeral loopback port, served from a background thread.
struct WorkerHarness {
  Worker w;
  std::thread t;
  explicit WorkerHarness(int slots = 2)
      : w("127.0.0.1", 0, slots), t([this] { w.run(); }) {}
  ~WorkerHarness() {
    w.stop();
    t.join();
  }
  Endpoint ep() const { return {"127.0.0.1", w.port()}; }
};

// A port that refuses connections: bind, note the number, close.
Endpoint dead_endpoint() {
  const int fd = ::socket(AF_INET, SOCK_STREAM, 0);
  REQUIRE(fd >= 0);
  sockaddr_in sa{};
  sa.sin_family = AF_INET;
  sa.sin_addr.s_addr = htonl(INADDR_LOOPBACK);
  REQUIRE(::bind(fd, reinterpret_cast<sockaddr*>(&sa), sizeof sa) == 0);
  socklen_t len = sizeof sa;
  ::getsockname(fd, reinterpret_cast<sockaddr*>(&sa), &len);
  const std::uint16_t port = ntohs(sa.sin_port);
  ::close(fd);
  return {"127.0.0.1", port};
}

}  // namespace

TEST_SUITE_BEGIN("runtime");

TEST_CASE("envelope encoding round-trips and pins the header form") {
  Envelope e;
  e.kind = "job";
  e.id = 123456789;
  e.payload = "line1\nline2\x01 binary-ish";
  const std::string body = encode_envelope(e);
  CHECK(body.substr(0, body.find('\n')) == "svf/1 job 123456789");
  const Envelope d = decode_envelope(body);
  CHECK(d.kind == e.kind);
  CHECK(d.id == e.id);
  CHECK(d.version == "svf/1");
  CHECK(d.payload == e.payload);
}

TEST_CASE("envelope decoding rejects malformed headers") {
  CHECK_THROWS_AS((void)decode_envelope("no newline"), MalformedFrame);
  CHECK_THROWS_AS((void)decode_envelope("svf/1 job\npayload"), MalformedFrame);
  CHECK_THROWS_AS((void)decode_envelope("svf/1 job 1 extra\np"),
                  MalformedFrame);
  CHECK_THROWS_AS((void)decode_envelope("svf/1 blah 1\np"), MalformedFrame);
  CHECK_THROWS_AS((void)decode_envelope("svf/2 job 1\np"), VersionError);
}

TEST_CASE("job payload round-trips bit-exactly") {
  Fixture f = make_fixture();
  const std::vector<std::size_t> rows{0, 1, 2, 3};
  const NlpProblem p = f.compiler.compile(rows);

  SolveJob job;
  job.problem = &p;
  job.alpha = {0.3};
  job.init = f.compiler.initial_point(p);
  job.settings.max_outer = 7;
  job.settings.eps_c = 1e-9;
  job.settings.seed = 42;
  job.settings.jitter = 0.25;
  job.settings.restarts = 2;

  const OwnedJob back = deserialize_job(serialize_job(job));
  CHECK(back.alpha == job.alpha);
  CHECK(back.init == job.init);
  CHECK(back.settings.max_outer == 7);
  CHECK(back.settings.max_inner == job.settings.max_inner);
  CHECK(back.settings.rho0 == job.settings.rho0);
  CHECK(back.settings.rho_growth == job.settings.rho_growth);
  CHECK(back.settings.eps_c == 1e-9);
  CHECK(back.settings.eps_g == job.settings.eps_g);
  CHECK(back.settings.lbfgs_memory == job.settings.lbfgs_memory);
  CHECK(back.settings.restarts == 2);
  CHECK(back.settings.jitter == 0.25);
  CHECK(back.settings.seed == 42);
  CHECK(serialize_problem(back.problem) == serialize_problem(p));

  CHECK_THROWS_AS((void)deserialize_job("garbage"), MalformedFrame);
}

TEST_CASE("result payload round-trips bit-exactly") {
  SolveResult r;
  r.point = {0.1, -2.5e-7, 3.0};
  r.multipliers = {3.0};
  r.objective = 1.5e-3;
  r.max_violation = 1e-12;
  r.status = SolveStatus::Degenerate;
  r.outer_iters = 3;
  r.inner_iters = 77;
  r.wall_time = 0.125;

  const SolveResult back = deserialize_result(serialize_result(r));
  CHECK(back == r);
  CHECK(back.wall_time == 0.125);
  CHECK(back.outer_iters == 3);
  CHECK(back.inner_iters == 77);

  CHECK_THROWS_AS((void)deserialize_result("status nonsense\n"),
                  MalformedFrame);
}

TEST_CASE("worker round trip matches the in-process solve") {
  Fixture f = make_fixture();
  const std::vector<std::size_t> rows{0, 1, 2, 3};
  const NlpProblem p = f.compiler.compile(rows);

  SolveJob job;
  job.problem = &p;
  job.alpha = {1.0};
  job.init = f.compiler.initial_point(p);

  const SolveResult local = solve(p, job.alpha, job.init, job.settings);

  WorkerHarness h;
  const SolveResult remote = submit(h.ep(), job, 9);
  CHECK(remote == local);
  CHECK(remote.point == local.point);
  CHECK(remote.multipliers == local.multipliers);
}

TEST_CASE("malformed payload gets an error reply, connection stays usable") {
  Fixture f = make_fixture();
  const std::vector<std::size_t> rows{0, 1, 2, 3};
  const NlpProblem p = f.compiler.compile(rows);

  SolveJob job;
  job.problem = &p;
  job.alpha = {1.0};
  job.init = f.compiler.initial_point(p);

  WorkerHarness h;
  WireClient c(h.ep(), 60.0);

  Envelope bad;
  bad.kind = "job";
  bad.id = 4;
  bad.payload = "not a job";
  const Envelope err = c.call(bad);
  CHECK(err.kind == "error");
  CHECK(err.id == 4);
  CHECK(err.payload.rfind("MalformedFrame: ", 0) == 0);

  Envelope v2 = bad;
  v2.version = "svf/2";
  v2.id = 5;
  const Envelope verr = c.call(v2);
  CHECK(verr.kind == "error");
  CHECK(verr.payload.rfind("VersionError: ", 0) == 0);

  Envelope good;
  good.kind = "job";
  good.id = 6;
  good.payload = serialize_job(job);
  const Envelope ok = c.call(good);
  CHECK(ok.kind == "result");
  CHECK(ok.id == 6);
  const SolveResult remote = deserialize_result(ok.payload);
  CHECK(remote == solve(p, job.alpha, job.init, job.settings));
}

TEST_CASE("executors agree across modes and preserve order") {
  Fixture f = make_fixture();
  const std::vector<std::size_t> all{0, 1, 2, 3};
  const std::vector<std::size_t> sub{0, 1, 3};
  const NlpProblem p_full = f.compiler.compile(all);
  const NlpProblem p_sub = f.compiler.compile(sub);

  std::vector<SolveJob> jobs;
  for (const double a : {1e-3, 1.0, 10.0}) {
    for (const NlpProblem* p : {&p_full, &p_sub}) {
      SolveJob j;
      j.problem = p;
      j.alpha = {a};
      j.init = f.compiler.initial_point(*p);
      jobs.push_back(std::move(j));
    }
  }

  const std::vector<SolveResult> ref = local_executor()(jobs);
  REQUIRE(ref.size() == jobs.size());
  // Distinguishable outputs, so ordering mistakes cannot cancel out.
  CHECK(ref[0].objective != ref[4].objective);

  WorkerHarness h(2);
  const std::vector<Endpoint> eps{h.ep(), h.ep()};

  const BatchExecutor modes[] = {
      make_executor(ExecMode::local()),
      make_executor(ExecMode::local_parallel(3)),
      make_executor(ExecMode::server_parallel(eps)),
  };
  for (const auto& exec : modes) {
    const std::vector<SolveResult> got = exec(jobs);
    REQUIRE(got.size() == ref.size());
    for (std::size_t i = 0; i < ref.size(); ++i) {
      CHECK(got[i] == ref[i]);
      CHECK(got[i].point == ref[i].point);
    }
    CHECK(exec({}).empty());
  }
}

TEST_CASE("failover: a dead endpoint is skipped, all jobs complete") {
  Fixture f = make_fixture();
  const std::vector<std::size_t> all{0, 1, 2, 3};
  const NlpProblem p = f.compiler.compile(all);

  std::vector<SolveJob> jobs;
  for (const double a : {0.5, 2.0, 8.0}) {
    SolveJob j;
    j.problem = &p;
    j.alpha = {a};
    j.init = f.compiler.initial_point(p);
    jobs.push_back(std::move(j));
  }
  const std::vector<SolveResult> ref = local_executor()(jobs);

  WorkerHarness h;
  ExecMode mode = ExecMode::server_parallel({dead_endpoint(), h.ep()});
  mode.job_timeout = 60.0;
  const std::vector<SolveResult> got = make_executor(mode)(jobs);
  REQUIRE(got.size() == ref.size());
  for (std::size_t i = 0; i < ref.size(); ++i) CHECK(got[i] == ref[i]);
}

TEST_CASE("all endpoints dead raises WorkerUnreachable") {
  Fixture f = make_fixture();
  const std::vector<std::size_t> all{0, 1, 2, 3};
  const NlpProblem p = f.compiler.compile(all);
  SolveJob j;
  j.problem = &p;
  j.alpha = {1.0};
  j.init = f.compiler.initial_point(p);
  const std::vector<SolveJob> jobs{j};

  ExecMode mode = ExecMode::server_parallel({dead_endpoint(), dead_endpoint()});
  mode.job_timeout = 5.0;
  CHECK_THROWS_AS((void)make_executor(mode)(jobs), WorkerUnreachable);

  CHECK_THROWS_AS((void)submit(dead_endpoint(), j, 0, 5.0), ConnectionError);
}

TEST_CASE("a silent server trips the reply deadline") {
  // Listening socket that never accepts: connects succeed via the backlog,
  // then the reply never comes.
  const int fd = ::socket(AF_INET, SOCK_STREAM, 0);
  REQUIRE(fd >= 0);
  sockaddr_in sa{};
  sa.sin_family = AF_INET;
  sa.sin_addr.s_addr = htonl(INADDR_LOOPBACK);
  REQUIRE(::bind(fd, reinterpret_cast<sockaddr*>(&sa), sizeof sa) == 0);
  REQUIRE(::listen(fd, 8) == 0);
  socklen_t len = sizeof sa;
  ::getsockname(fd, reinterpret_cast<sockaddr*>(&sa), &len);
  const Endpoint ep{"127.0.0.1", ntohs(sa.sin_port)};

  Fixture f = make_fixture();
  const std::vector<std::size_t> all{0, 1, 2, 3};
  const NlpProblem p = f.compiler.compile(all);
  SolveJob j;
  j.problem = &p;
  j.alpha = {1.0};
  j.init = f.compiler.initial_point(p);

  CHECK_THROWS_AS((void)submit(ep, j, 0, 0.3), TimeoutError);
  ::close(fd);
}

TEST_CASE("worker holds no state between jobs") {
  Fixture f = make_fixture();
  const std::vector<std::size_t> all{0, 1, 2, 3};
  const NlpProblem p = f.compiler.compile(all);

  SolveJob a;
  a.problem = &p;
  a.alpha = {0.01};
  a.init = f.compiler.initial_point(p);
  SolveJob b = a;
  b.alpha = {50.0};

  SolveResult after_a, alone;
  {
    WorkerHarness h;
    (void)submit(h.ep(), a, 0);
    after_a = submit(h.ep(), b, 1);
  }
  {
    WorkerHarness h;
    alone = submit(h.ep(), b, 0);
  }
  CHECK(after_a == alone);
  CHECK(after_a.point == alone.point);
}

TEST_CASE("endpoint parsing") {
  const Endpoint e = parse_endpoint("localhost:8080");
  CHECK(e.host == "localhost");
  CHECK(e.port == 8080);
  const Endpoint v6 = parse_endpoint("a:b:123");  // last colon splits
  CHECK(v6.host == "a:b");
  CHECK(v6.port == 123);
  CHECK_THROWS_AS((void)parse_endpoint("nocolon"), Error);
  CHECK_THROWS_AS((void)parse_endpoint(":5"), Error);
  CHECK_THROWS_AS((void)parse_endpoint("h:"), Error);
  CHECK_THROWS_AS((void)parse_endpoint("h:0"), Error);
  CHECK_THROWS_AS((void)parse_endpoint("h:99999"), Error);
  CHECK_THROWS_AS((void)parse_endpoint("h:12x"), Error);
}

TEST_CASE("mode construction guards") {
  CHECK(ExecMode::local_parallel(0).workers == 1);
  CHECK_THROWS_AS((void)make_executor(ExecMode::server_parallel({})), Error);
}

TEST_SUITE_END();
