#include "svf/runtime.hpp"

#include <arpa/inet.h>
#include <fcntl.h>
#include <netdb.h>
#include <poll.h>
#include <sys/socket.h>
#include <sys/types.h>
#include <unistd.h>

#include <algorithm>
#include <charconv>
#include <chrono>
#include <climits>
#include <cstring>
#include <optional>
#include <sstream>

#include "svf/util.hpp"

namespace svf {

namespace {

using Clock = std::chrono::steady_clock;
using Deadline = Clock::time_point;

Deadline after(double sec) {
  return Clock::now() +
         std::chrono::duration_cast<Clock::duration>(
             std::chrono::duration<double>(sec));
}

int remaining_ms(Deadline dl) {
  if (dl == Deadline::max()) return -1;
  const auto ms = std::chrono::duration_cast<std::chrono::milliseconds>(
                      dl - Clock::now())
                      .count();
  if (ms <= 0) return 0;
  return ms > INT_MAX ? INT_MAX : static_cast<int>(ms);
}

struct Fd {
  int fd = -1;
  Fd() = default;
  explicit Fd(int f) : fd(f) {}
  Fd(Fd&& o) noexcept : fd(o.fd) { o.fd = -1; }
  Fd(const Fd&) = delete;
  Fd& operator=(const Fd&) = delete;
  ~Fd() {
    if (fd >= 0) ::close(fd);
  }
  int release() {
    const int f = fd;
    fd = -1;
    return f;
  }
};

void wait_io(int fd, short events, Deadline dl, const char* what) {
  pollfd p{fd, events, 0};
  for (;;) {
    const int ms = remaining_ms(dl);
    if (ms == 0) throw TimeoutError(std::string("timeout while ") + what);
    const int rc = ::poll(&p, 1, ms);
    if (rc > 0) return;
    if (rc == 0) throw TimeoutError(std::string("timeout while ") + what);
    if (errno == EINTR) continue;
    throw ConnectionError(std::string("poll failed: ") + std::strerror(errno));
  }
}

void write_all(int fd, const void* data, std::size_t n, Deadline dl) {
  const char* p = static_cast<const char*>(data);
  while (n) {
    const ssize_t w = ::send(fd, p, n, MSG_NOSIGNAL);
    if (w > 0) {
      p += w;
      n -= static_cast<std::size_t>(w);
      continue;
    }
    if (w < 0 && (errno == EAGAIN || errno == EWOULDBLOCK)) {
      wait_io(fd, POLLOUT, dl, "sending");
      continue;
    }
    if (w < 0 && errno == EINTR) continue;
    throw ConnectionError(std::string("send failed: ") + std::strerror(errno));
  }
}

// False only on clean EOF before the first byte (and only when allowed).
bool read_exact(int fd, void* data, std::size_t n, Deadline dl, bool eof_ok) {
  char* p = static_cast<char*>(data);
  std::size_t got = 0;
  while (got < n) {
    const ssize_t r = ::recv(fd, p + got, n - got, 0);
    if (r > 0) {
      got += static_cast<std::size_t>(r);
      continue;
    }
    if (r == 0) {
      if (got == 0 && eof_ok) return false;
      throw ConnectionError("connection closed mid-frame");
    }
    if (errno == EAGAIN || errno == EWOULDBLOCK) {
      wait_io(fd, POLLIN, dl, "receiving");
      continue;
    }
    if (errno == EINTR) continue;
    throw ConnectionError(std::string("recv failed: ") + std::strerror(errno));
  }
  return true;
}

constexpr std::size_t kMaxFrame = std::size_t(1) << 30;

void write_frame(int fd, const std::string& body, Deadline dl) {
  if (body.size() > kMaxFrame) throw MalformedFrame("frame too large to send");
  const auto n = static_cast<std::uint32_t>(body.size());
  const unsigned char hdr[4] = {
      static_cast<unsigned char>(n >> 24), static_cast<unsigned char>(n >> 16),
      static_cast<unsigned char>(n >> 8), static_cast<unsigned char>(n)};
  write_all(fd, hdr, 4, dl);
  write_all(fd, body.data(), body.size(), dl);
}

std::optional<std::string> read_frame(int fd, Deadline dl) {
  unsigned char hdr[4];
  if (!read_exact(fd, hdr, 4, dl, true)) return std::nullopt;
  const std::size_t n = (std::size_t(hdr[0]) << 24) |
                        (std::size_t(hdr[1]) << 16) |
                        (std::size_t(hdr[2]) << 8) | std::size_t(hdr[3]);
  if (n > kMaxFrame)
    throw MalformedFrame("frame length " + std::to_string(n) +
                         " exceeds the limit");
  std::string body(n, '\0');
  if (n) read_exact(fd, body.data(), n, dl, false);
  return body;
}

int dial(const Endpoint& ep, Deadline dl) {
  addrinfo hints{};
  hints.ai_family = AF_UNSPEC;
  hints.ai_socktype = SOCK_STREAM;
  hints.ai_flags = AI_NUMERICSERV;
  addrinfo* res = nullptr;
  const std::string service = std::to_string(ep.port);
  if (const int rc =
          ::getaddrinfo(ep.host.c_str(), service.c_str(), &hints, &res))
    throw ConnectionError("cannot resolve " + ep.host + ": " +
                          ::gai_strerror(rc));
  std::string last = "no usable address";
  for (addrinfo* ai = res; ai; ai = ai->ai_next) {
    Fd s(::socket(ai->ai_family, ai->ai_socktype | SOCK_NONBLOCK,
                  ai->ai_protocol));
    if (s.fd < 0) {
      last = std::strerror(errno);
      continue;
    }
    int rc = ::connect(s.fd, ai->ai_addr, ai->ai_addrlen);
    if (rc < 0 && errno == EINPROGRESS) {
      try {
        wait_io(s.fd, POLLOUT, dl, "connecting");
      } catch (const ConnectionError& e) {
        last = e.what();
        continue;
      }
      int err = 0;
      socklen_t len = sizeof err;
      ::getsockopt(s.fd, SOL_SOCKET, SO_ERROR, &err, &len);
      if (err) {
        last = std::strerror(err);
        continue;
      }
      rc = 0;
    } else if (rc < 0) {
      last = std::strerror(errno);
      continue;
    }
    ::freeaddrinfo(res);
    return s.release();
  }
  ::freeaddrinfo(res);
  throw ConnectionError("cannot connect to " + ep.host + ":" + service + ": " +
                        last);
}

double parse_hex_double(const std::string& tok) {
  char* end = nullptr;
  const double v = std::strtod(tok.c_str(), &end);
  if (end != tok.c_str() + tok.size() || tok.empty())
    throw MalformedFrame("bad numeric token '" + tok + "'");
  return v;
}

void put_vec(std::ostream& out, const char* tag, std::span<const double> v) {
  out << tag << " " << v.size();
  for (const double x : v) out << " " << format_hex(x);
  out << "\n";
}

std::vector<double> get_vec(std::istream& in, const char* tag) {
  std::string line;
  if (!std::getline(in, line))
    throw MalformedFrame(std::string("payload truncated before ") + tag);
  std::istringstream ls(line);
  std::string t;
  std::size_t n = 0;
  if (!(ls >> t >> n) || t != tag)
    throw MalformedFrame(std::string("expected a ") + tag + " line");
  std::vector<double> v(n);
  for (double& x : v) {
    std::string h;
    if (!(ls >> h))
      throw MalformedFrame(std::string(tag) + " vector truncated");
    x = parse_hex_double(h);
  }
  return v;
}

const char* status_word(SolveStatus s) {
  switch (s) {
    case SolveStatus::Converged: return "converged";
    case SolveStatus::MaxIter: return "maxiter";
    case SolveStatus::Degenerate: return "degenerate";
  }
  return "?";
}

SolveStatus status_from(const std::string& w) {
  if (w == "converged") return SolveStatus::Converged;
  if (w == "maxiter") return SolveStatus::MaxIter;
  if (w == "degenerate") return SolveStatus::Degenerate;
  throw MalformedFrame("unknown solve status '" + w + "'");
}

// Error payloads carry the kind so the client can rebuild the type.
std::string classify(const std::exception& e) {
  if (dynamic_cast<const VersionError*>(&e))
    return std::string("VersionError: ") + e.what();
  if (dynamic_cast<const MalformedFrame*>(&e))
    return std::string("MalformedFrame: ") + e.what();
  return std::string("SolveFailure: ") + e.what();
}

[[noreturn]] void rethrow_remote(const std::string& payload) {
  const auto with = [&](const char* prefix) -> std::optional<std::string> {
    const std::size_t n = std::strlen(prefix);
    if (payload.compare(0, n, prefix) == 0) return payload.substr(n);
    return std::nullopt;
  };
  if (auto m = with("VersionError: ")) throw VersionError(*m);
  if (auto m = with("MalformedFrame: ")) throw MalformedFrame(*m);
  if (auto m = with("SolveFailure: ")) throw SolveFailure(*m);
  throw Error("worker reported: " + payload);
}

std::vector<SolveResult> run_local_parallel(std::span<const SolveJob> jobs,
                                            int workers) {
  std::vector<SolveResult> out(jobs.size());
  if (jobs.empty()) return out;
  std::vector<std::exception_ptr> errs(jobs.size());
  std::atomic<std::size_t> next{0};
  const std::size_t lanes =
      std::min<std::size_t>(workers < 1 ? 1 : workers, jobs.size());
  std::vector<std::thread> ts;
  ts.reserve(lanes);
  for (std::size_t l = 0; l < lanes; ++l)
    ts.emplace_back([&] {
      for (;;) {
        const std::size_t i = next.fetch_add(1);
        if (i >= jobs.size()) return;
        try {
          const SolveJob& j = jobs[i];
          out[i] = solve(*j.problem, j.alpha, j.init, j.settings);
        } catch (...) {
          errs[i] = std::current_exception();
        }
      }
    });
  for (auto& t : ts) t.join();
  for (auto& e : errs)
    if (e) std::rethrow_exception(e);
  return out;
}

std::vector<SolveResult> run_server_parallel(std::span<const SolveJob> jobs,
                                             const std::vector<Endpoint>& eps,
                                             double timeout) {
  std::vector<SolveResult> out(jobs.size());
  if (jobs.empty()) return out;
  std::vector<std::exception_ptr> errs(jobs.size());
  std::atomic<std::size_t> next{0};
  const std::size_t lanes = std::min(eps.size(), jobs.size());
  std::vector<std::thread> ts;
  ts.reserve(lanes);
  for (std::size_t l = 0; l < lanes; ++l)
    ts.emplace_back([&, l] {
      for (;;) {
        const std::size_t i = next.fetch_add(1);
        if (i >= jobs.size()) return;
        bool done = false;
        std::string attempts;
        for (std::size_t k = 0; k < eps.size() && !done; ++k) {
          const Endpoint& ep = eps[(l + k) % eps.size()];
          try {
            out[i] = submit(ep, jobs[i], i, timeout);
            done = true;
          } catch (const ConnectionError& ce) {
            // Endpoint unusable for this job: move to the next one.
            if (!attempts.empty()) attempts += "; ";
            attempts += ep.host + ":" + std::to_string(ep.port) + ": " +
                        ce.what();
          } catch (...) {
            // The worker answered with an error: the job itself failed.
            errs[i] = std::current_exception();
            done = true;
          }
        }
        if (!done)
          errs[i] = std::make_exception_ptr(WorkerUnreachable(
              "job " + std::to_string(i) + ": all endpoints failed (" +
              attempts + ")"));
      }
    });
  for (auto& t : ts) t.join();
  for (auto& e : errs)
    if (e) std::rethrow_exception(e);
  return out;
}

}  // namespace

Endpoint parse_endpoint(const std::string& text) {
  const auto pos = text.rfind(':');
  if (pos == std::string::npos || pos == 0 || pos + 1 == text.size())
    throw Error("endpoint must be host:port, got '" + text + "'");
  unsigned long port = 0;
  const char* b = text.c_str() + pos + 1;
  const char* e = text.c_str() + text.size();
  const auto [p, ec] = std::from_chars(b, e, port);
  if (ec != std::errc() || p != e || port == 0 || port > 65535)
    throw Error("endpoint port out of range in '" + text + "'");
  return Endpoint{text.substr(0, pos), static_cast<std::uint16_t>(port)};
}

ExecMode ExecMode::local() { return {}; }

ExecMode ExecMode::local_parallel(int workers) {
  ExecMode m;
  m.kind = Kind::LocalParallel;
  m.workers = workers < 1 ? 1 : workers;
  return m;
}

ExecMode ExecMode::server_parallel(std::vector<Endpoint> endpoints) {
  ExecMode m;
  m.kind = Kind::ServerParallel;
  m.endpoints = std::move(endpoints);
  return m;
}

BatchExecutor make_executor(const ExecMode& mode) {
  switch (mode.kind) {
    case ExecMode::Kind::Local:
      return local_executor();
    case ExecMode::Kind::LocalParallel: {
      const int w = mode.workers;
      return [w](std::span<const SolveJob> jobs) {
        return run_local_parallel(jobs, w);
      };
    }
    case ExecMode::Kind::ServerParallel: {
      if (mode.endpoints.empty())
        throw Error("server mode requires at least one endpoint");
      const std::vector<Endpoint> eps = mode.endpoints;
      const double to = mode.job_timeout;
      return [eps, to](std::span<const SolveJob> jobs) {
        return run_server_parallel(jobs, eps, to);
      };
    }
  }
  throw Error("invalid execution mode");
}

std::string encode_envelope(const Envelope& e) {
  return e.version + " " + e.kind + " " + std::to_string(e.id) + "\n" +
         e.payload;
}

Envelope decode_envelope(const std::string& body) {
  const auto nl = body.find('\n');
  if (nl == std::string::npos)
    throw MalformedFrame("missing envelope header line");
  std::istringstream h(body.substr(0, nl));
  Envelope e;
  if (!(h >> e.version >> e.kind >> e.id))
    throw MalformedFrame("bad envelope header");
  std::string extra;
  if (h >> extra) throw MalformedFrame("trailing tokens in envelope header");
  if (e.version != kWireVersion)
    throw VersionError("unsupported protocol version '" + e.version + "'");
  if (e.kind != "job" && e.kind != "result" && e.kind != "error")
    throw MalformedFrame("unknown envelope kind '" + e.kind + "'");
  e.payload = body.substr(nl + 1);
  return e;
}

std::string serialize_job(const SolveJob& job) {
  std::ostringstream out;
  put_vec(out, "alpha", job.alpha);
  put_vec(out, "init", job.init);
  const SolveSettings& s = job.settings;
  out << "settings " << s.max_outer << " " << s.max_inner << " "
      << format_hex(s.rho0) << " " << format_hex(s.rho_growth) << " "
      << format_hex(s.eps_c) << " " << format_hex(s.eps_g) << " "
      << s.lbfgs_memory << " " << s.restarts << " " << format_hex(s.jitter)
      << " " << s.seed << "\n";
  out << "problem\n" << serialize_problem(*job.problem);
  return out.str();
}

OwnedJob deserialize_job(const std::string& payload) {
  std::istringstream in(payload);
  OwnedJob j;
  j.alpha = get_vec(in, "alpha");
  j.init = get_vec(in, "init");
  std::string line;
  if (!std::getline(in, line))
    throw MalformedFrame("payload truncated before settings");
  {
    std::istringstream ls(line);
    std::string tag, rho0, growth, epsc, epsg, jitter;
    SolveSettings& s = j.settings;
    if (!(ls >> tag >> s.max_outer >> s.max_inner >> rho0 >> growth >> epsc >>
          epsg >> s.lbfgs_memory >> s.restarts >> jitter >> s.seed) ||
        tag != "settings")
      throw MalformedFrame("expected a settings line");
    s.rho0 = parse_hex_double(rho0);
    s.rho_growth = parse_hex_double(growth);
    s.eps_c = parse_hex_double(epsc);
    s.eps_g = parse_hex_double(epsg);
    s.jitter = parse_hex_double(jitter);
  }
  if (!std::getline(in, line) || line != "problem")
    throw MalformedFrame("expected a problem section");
  const std::string rest(std::istreambuf_iterator<char>(in), {});
  j.problem = deserialize_problem(rest);
  return j;
}

std::string serialize_result(const SolveResult& r) {
  std::ostringstream out;
  out << "status " << status_word(r.status) << "\n"
      << "objective " << format_hex(r.objective) << "\n"
      << "violation " << format_hex(r.max_violation) << "\n"
      << "iters " << r.outer_iters << " " << r.inner_iters << "\n"
      << "wall " << format_hex(r.wall_time) << "\n";
  put_vec(out, "point", r.point);
  put_vec(out, "multipliers", r.multipliers);
  return out.str();
}

SolveResult deserialize_result(const std::string& payload) {
  std::istringstream in(payload);
  SolveResult r;
  std::string line, tag, tok;
  auto line_in = [&](const char* want) -> std::istringstream {
    if (!std::getline(in, line))
      throw MalformedFrame(std::string("result truncated before ") + want);
    std::istringstream ls(line);
    if (!(ls >> tag) || tag != want)
      throw MalformedFrame(std::string("expected a ") + want + " line");
    return ls;
  };
  {
    auto ls = line_in("status");
    if (!(ls >> tok)) throw MalformedFrame("missing status word");
    r.status = status_from(tok);
  }
  {
    auto ls = line_in("objective");
    if (!(ls >> tok)) throw MalformedFrame("missing objective");
    r.objective = parse_hex_double(tok);
  }
  {
    auto ls = line_in("violation");
    if (!(ls >> tok)) throw MalformedFrame("missing violation");
    r.max_violation = parse_hex_double(tok);
  }
  {
    auto ls = line_in("iters");
    if (!(ls >> r.outer_iters >> r.inner_iters))
      throw MalformedFrame("missing iteration counts");
  }
  {
    auto ls = line_in("wall");
    if (!(ls >> tok)) throw MalformedFrame("missing wall time");
    r.wall_time = parse_hex_double(tok);
  }
  r.point = get_vec(in, "point");
  r.multipliers = get_vec(in, "multipliers");
  return r;
}

Envelope exchange(const Endpoint& ep, const Envelope& request,
                  double timeout_sec) {
  const Deadline dl = after(timeout_sec);
  // Connecting gets a short budget of its own so a dead endpoint is
  // reported quickly instead of burning the whole job timeout.
  const Deadline connect_dl =
      std::min(dl, after(std::min(timeout_sec, 5.0)));
  Fd fd(dial(ep, connect_dl));
  write_frame(fd.fd, encode_envelope(request), dl);
  const auto body = read_frame(fd.fd, dl);
  if (!body) throw ConnectionError("connection closed before the reply");
  return decode_envelope(*body);
}

WireClient::WireClient(const Endpoint& ep, double timeout_sec)
    : timeout_(timeout_sec) {
  fd_ = dial(ep, after(std::min(timeout_sec, 5.0)));
}

WireClient::~WireClient() {
  if (fd_ >= 0) ::close(fd_);
}

Envelope WireClient::call(const Envelope& request) {
  const Deadline dl = after(timeout_);
  write_frame(fd_, encode_envelope(request), dl);
  const auto body = read_frame(fd_, dl);
  if (!body) throw ConnectionError("connection closed before the reply");
  return decode_envelope(*body);
}

SolveResult submit(const Endpoint& ep, const SolveJob& job, std::uint64_t id,
                   double timeout_sec) {
  Envelope req;
  req.kind = "job";
  req.id = id;
  req.payload = serialize_job(job);
  const Envelope rep = exchange(ep, req, timeout_sec);
  if (rep.id != id)
    throw MalformedFrame("reply id " + std::to_string(rep.id) +
                         " does not match job id " + std::to_string(id));
  if (rep.kind == "result") return deserialize_result(rep.payload);
  if (rep.kind == "error") rethrow_remote(rep.payload);
  throw MalformedFrame("unexpected reply kind '" + rep.kind + "'");
}

Worker::Worker(const std::string& host, std::uint16_t port, int slots)
    : slots_(slots < 1 ? 1 : slots) {
  addrinfo hints{};
  hints.ai_family = AF_UNSPEC;
  hints.ai_socktype = SOCK_STREAM;
  hints.ai_flags = AI_PASSIVE | AI_NUMERICSERV;
  addrinfo* res = nullptr;
  const std::string service = std::to_string(port);
  if (const int rc = ::getaddrinfo(host.empty() ? nullptr : host.c_str(),
                                   service.c_str(), &hints, &res))
    throw ConnectionError("cannot resolve " + host + ": " +
                          ::gai_strerror(rc));
  std::string last = "no usable address";
  for (addrinfo* ai = res; ai; ai = ai->ai_next) {
    Fd s(::socket(ai->ai_family, ai->ai_socktype, ai->ai_protocol));
    if (s.fd < 0) {
      last = std::strerror(errno);
      continue;
    }
    const int one = 1;
    ::setsockopt(s.fd, SOL_SOCKET, SO_REUSEADDR, &one, sizeof one);
    if (::bind(s.fd, ai->ai_addr, ai->ai_addrlen) != 0 ||
        ::listen(s.fd, 64) != 0) {
      last = std::strerror(errno);
      continue;
    }
    sockaddr_storage ss{};
    socklen_t sl = sizeof ss;
    ::getsockname(s.fd, reinterpret_cast<sockaddr*>(&ss), &sl);
    port_ = ntohs(ss.ss_family == AF_INET
                      ? reinterpret_cast<sockaddr_in*>(&ss)->sin_port
                      : reinterpret_cast<sockaddr_in6*>(&ss)->sin6_port);
    listen_fd_ = s.release();
    break;
  }
  ::freeaddrinfo(res);
  if (listen_fd_ < 0)
    throw ConnectionError("cannot listen on " + host + ":" + service + ": " +
                          last);
}

Worker::~Worker() {
  stop();
  {
    std::unique_lock lk(mu_);
    done_cv_.wait(lk, [&] { return active_ == 0 && !running_; });
  }
  ::close(listen_fd_);
}

void Worker::run() {
  {
    std::lock_guard lk(mu_);
    running_ = true;
  }
  for (;;) {
    const int c = ::accept4(listen_fd_, nullptr, nullptr, SOCK_NONBLOCK);
    if (c < 0) {
      if (stopping_.load()) break;
      if (errno == EINTR || errno == ECONNABORTED) continue;
      break;
    }
    std::lock_guard lk(mu_);
    if (stopping_.load()) {
      ::close(c);
      break;
    }
    conns_.push_back(c);
    ++active_;
    std::thread([this, c] { handle_connection(c); }).detach();
  }
  std::unique_lock lk(mu_);
  done_cv_.wait(lk, [&] { return active_ == 0; });
  running_ = false;
  done_cv_.notify_all();
}

void Worker::stop() {
  stopping_.store(true);
  ::shutdown(listen_fd_, SHUT_RDWR);
  std::lock_guard lk(mu_);
  for (const int c : conns_) ::shutdown(c, SHUT_RDWR);
  slot_cv_.notify_all();
}

void Worker::acquire_slot() {
  std::unique_lock lk(mu_);
  slot_cv_.wait(lk, [&] { return busy_ < slots_ || stopping_.load(); });
  if (stopping_.load()) throw ConnectionError("worker stopping");
  ++busy_;
}

void Worker::release_slot() {
  {
    std::lock_guard lk(mu_);
    --busy_;
  }
  slot_cv_.notify_one();
}

void Worker::handle_connection(int fd) {
  try {
    for (;;) {
      const auto body = read_frame(fd, Deadline::max());
      if (!body) break;
      Envelope reply;
      try {
        const Envelope e = decode_envelope(*body);
        reply.id = e.id;
        if (e.kind != "job")
          throw MalformedFrame("expected a job envelope, got '" + e.kind +
                               "'");
        acquire_slot();
        try {
          const OwnedJob j = deserialize_job(e.payload);
          const SolveResult r = solve(j.problem, j.alpha, j.init, j.settings);
          reply.kind = "result";
          reply.payload = serialize_result(r);
        } catch (...) {
          release_slot();
          throw;
        }
        release_slot();
      } catch (const std::exception& ex) {
        reply.kind = "error";
        reply.payload = classify(ex);
      }
      write_frame(fd, encode_envelope(reply), Deadline::max());
    }
  } catch (...) {
    // Connection-level failure: nothing to report to; drop it.
  }
  {
    std::lock_guard lk(mu_);
    conns_.erase(std::find(conns_.begin(), conns_.end(), fd));
    --active_;
  }
  ::close(fd);
  done_cv_.notify_all();
}

}  // namespace svf
