#pragma once

// Batch execution of independent lower-level solves: sequentially in the
// calling thread, across local worker threads, or on remote workers over a
// stream-socket protocol. All three modes produce numerically identical
// results; concurrency only reorders wall-clock completion, never the
// positional reduction.

#include <atomic>
#include <condition_variable>
#include <cstdint>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

#include "svf/cv.hpp"

namespace svf {

struct Endpoint {
  std::string host;
  std::uint16_t port = 0;
};

// "host:port"; the last colon splits, so bracketless IPv6 is not accepted.
Endpoint parse_endpoint(const std::string& text);

struct ExecMode {
  enum class Kind { Local, LocalParallel, ServerParallel };
  Kind kind = Kind::Local;
  int workers = 1;                  // LocalParallel lane count
  std::vector<Endpoint> endpoints;  // ServerParallel; one lane per entry
  double job_timeout = 600.0;       // seconds per remote solve

  static ExecMode local();
  static ExecMode local_parallel(int workers);
  static ExecMode server_parallel(std::vector<Endpoint> endpoints);
};

// Executor for the requested mode. ServerParallel keeps one job in flight
// per listed endpoint (list an endpoint once per worker slot to use more);
// a failed endpoint is skipped per job and the job moves to the next one.
// WorkerUnreachable is raised only when every endpoint fails for some job.
BatchExecutor make_executor(const ExecMode& mode);

// --- wire protocol v1 -------------------------------------------------------
// Frame: 4-byte big-endian length prefix, then a UTF-8 body. Body: one
// header line "svf/1 <kind> <id>\n" with kind in {job, result, error},
// followed by the payload verbatim. Error payloads are
// "<ErrorKind>: <message>".

inline constexpr const char* kWireVersion = "svf/1";

struct Envelope {
  std::string kind;
  std::uint64_t id = 0;
  std::string version = kWireVersion;
  std::string payload;
};

std::string encode_envelope(const Envelope& e);
Envelope decode_envelope(const std::string& body);

// Job payload: alpha, init, and settings in bit-exact text plus the portable
// problem form. A deserialized job owns its problem.
struct OwnedJob {
  NlpProblem problem;
  std::vector<double> alpha;
  std::vector<double> init;
  SolveSettings settings;
};

std::string serialize_job(const SolveJob& job);
OwnedJob deserialize_job(const std::string& payload);

std::string serialize_result(const SolveResult& r);
SolveResult deserialize_result(const std::string& payload);

// One synchronous round trip on a fresh connection. Throws ConnectionError
// (refused/closed), TimeoutError (deadline), WireError (protocol), or
// rebuilds the worker-side error by kind.
SolveResult submit(const Endpoint& ep, const SolveJob& job, std::uint64_t id,
                   double timeout_sec = 600.0);

// Raw envelope round trip; building block for submit and for tests.
Envelope exchange(const Endpoint& ep, const Envelope& request,
                  double timeout_sec);

// One persistent connection, one request/reply in flight at a time.
class WireClient {
 public:
  explicit WireClient(const Endpoint& ep, double timeout_sec = 600.0);
  ~WireClient();
  WireClient(const WireClient&) = delete;
  WireClient& operator=(const WireClient&) = delete;

  Envelope call(const Envelope& request);

 private:
  int fd_ = -1;
  double timeout_ = 600.0;
};

// Serves solve jobs until stop(). Connections are handled concurrently; at
// most `slots` solves run at once. A malformed frame produces an error
// envelope and leaves the connection usable.
class Worker {
 public:
  Worker(const std::string& host, std::uint16_t port, int slots);
  ~Worker();
  Worker(const Worker&) = delete;
  Worker& operator=(const Worker&) = delete;

  std::uint16_t port() const { return port_; }
  void run();   // blocks; returns after stop()
  void stop();  // idempotent, callable from any thread

 private:
  void handle_connection(int fd);
  void acquire_slot();
  void release_slot();

  int listen_fd_ = -1;
  std::uint16_t port_ = 0;
  int slots_ = 1;
  std::atomic<bool> stopping_{false};
  std::mutex mu_;
  std::condition_variable slot_cv_;  // bounds concurrent solves to slots_
  std::condition_variable done_cv_;  // run()/dtor wait for handlers to drain
  int busy_ = 0;                     // solves in flight
  int active_ = 0;                   // live connection handlers
  bool running_ = false;             // accept loop in progress
  std::vector<int> conns_;           // open connection fds, for stop()
};

}  // namespace svf
