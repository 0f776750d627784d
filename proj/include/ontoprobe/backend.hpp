#pragma once

#include <algorithm>
#include <cerrno>
#include <condition_variable>
#include <cstring>
#include <deque>
#include <future>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <thread>
#include <tuple>
#include <unordered_map>
#include <vector>

#include <arpa/inet.h>
#include <netdb.h>
#include <netinet/in.h>
#include <signal.h>
#include <sys/socket.h>
#include <sys/types.h>
#include <sys/wait.h>
#include <unistd.h>

#include "error.hpp"
#include "prompting.hpp"
#include "records.hpp"
#include "util.hpp"

namespace ontoprobe {

struct Handshake {
    std::string backend;
    std::size_t vocab_size = 0;
    std::size_t dimension = 0;
    bool uncased = false;
    bool complete = false;
};

inline json to_json(const Handshake& h) {
    return json{{"type", "handshake"},          {"backend", h.backend},
                {"vocab_size", h.vocab_size},   {"dimension", h.dimension},
                {"casing", h.uncased ? "uncased" : "cased"}, {"complete", h.complete}};
}

inline Handshake handshake_from_json(const json& j) {
    try {
        if (j.value("type", std::string{}) != "handshake") throw ValidationError("expected a handshake message");
        auto casing = j.at("casing").get<std::string>();
        if (casing != "cased" && casing != "uncased") throw ValidationError("handshake casing must be cased or uncased");
        return {j.at("backend").get<std::string>(), j.at("vocab_size").get<std::size_t>(),
                j.at("dimension").get<std::size_t>(), casing == "uncased", j.value("complete", false)};
    } catch (const json::exception& e) {
        throw ValidationError(std::string("malformed handshake: ") + e.what());
    }
}

using Vector = std::vector<double>;

/// One masked-prompt query: the prompt, the vectors bound to its pseudoword
/// (and optionally soft) placeholders, and the tokens to read at each mask.
struct LogprobRequest {
    ClozePrompt prompt;
    std::map<std::string, Vector> pseudowords;
    std::map<std::string, Vector> soft;
    std::vector<std::vector<std::string>> queries;
};

/// Per-mask token -> log-prob, or an error.
struct LogprobReply {
    std::vector<std::map<std::string, double>> values;
    std::optional<std::string> error;
    bool retryable = false;
    std::string request_id;

    bool ok() const { return !error.has_value(); }
};

inline json to_json(const LogprobRequest& r) {
    json pw = json::object(), soft = json::object();
    for (const auto& [k, v] : r.pseudowords) pw[k] = v;
    for (const auto& [k, v] : r.soft) soft[k] = v;
    return json{{"prompt", to_json(r.prompt.segments)}, {"pseudowords", pw}, {"soft", soft}, {"queries", r.queries}};
}

inline LogprobRequest logprob_request_from_json(const json& j) {
    LogprobRequest r;
    r.prompt.segments = segments_from_json(j.at("prompt"));
    for (const auto& [k, v] : j.value("pseudowords", json::object()).items()) r.pseudowords[k] = v.get<Vector>();
    for (const auto& [k, v] : j.value("soft", json::object()).items()) r.soft[k] = v.get<Vector>();
    r.queries = j.at("queries").get<std::vector<std::vector<std::string>>>();
    return r;
}

/// Mask-filling scorer contract. Tokens are identified by their piece
/// strings throughout.
class Backend {
public:
    virtual ~Backend() = default;

    virtual Handshake handshake() = 0;
    virtual std::vector<std::vector<std::string>> tokenize(const std::vector<std::string>& surfaces) = 0;
    virtual LogprobReply logprobs(const LogprobRequest& req) = 0;
    virtual std::vector<Vector> embeddings(const std::vector<std::string>& tokens) = 0;
    virtual std::string complete(const std::string& prompt) {
        (void)prompt;
        throw BackendError("backend does not support complete", {}, false);
    }

    /// Replies in request order. Remote backends pipeline the batch.
    virtual std::vector<LogprobReply> logprobs_batch(const std::vector<LogprobRequest>& reqs) {
        std::vector<LogprobReply> out;
        out.reserve(reqs.size());
        for (const auto& r : reqs) out.push_back(logprobs(r));
        return out;
    }
};

/// Pre-flight checks shared by all backends.
inline void check_logprob_request(const LogprobRequest& req, std::size_t dimension) {
    if (req.queries.size() != req.prompt.mask_count())
        throw ValidationError("prompt has " + std::to_string(req.prompt.mask_count()) + " masks but " +
                              std::to_string(req.queries.size()) + " query lists");
    for (const auto& s : req.prompt.segments)
        if (s.kind == Segment::Kind::Pseudo) {
            auto it = req.pseudowords.find(s.value);
            if (it == req.pseudowords.end()) throw ValidationError("unbound pseudoword [" + s.value + "]");
            if (dimension && it->second.size() != dimension)
                throw ValidationError("pseudoword [" + s.value + "] has dimension " + std::to_string(it->second.size()) +
                                      ", backend expects " + std::to_string(dimension));
        }
}

/// Deterministic in-process backend. Log-probs come from a table keyed by
/// (prompt fingerprint, mask position, token); position -1 matches any
/// position. Everything else sits at the floor value. Tokenization splits
/// on whitespace.
class MockOracle : public Backend {
public:
    static constexpr int kAnyPosition = -1;

    explicit MockOracle(double floor = -5.0, std::size_t dimension = 8, bool uncased = false)
        : floor_(floor), dimension_(dimension), uncased_(uncased) {
        if (floor > 0) throw ValidationError("floor log-prob must be <= 0");
    }

    void set(const std::string& fingerprint, int position, const std::string& token, double logprob) {
        if (!(logprob <= 0)) throw ValidationError("oracle log-prob must be <= 0 for token '" + token + "'");
        table_[key(fingerprint, position, token)] = logprob;
        vocab_.insert(token);
    }

    double floor() const { return floor_; }
    std::size_t size() const { return table_.size(); }
    void set_complete_answers(std::map<std::string, std::string> answers) { answers_ = std::move(answers); }

    Handshake handshake() override {
        return {"mock-oracle", vocab_.size(), dimension_, uncased_, !answers_.empty()};
    }

    std::vector<std::vector<std::string>> tokenize(const std::vector<std::string>& surfaces) override {
        std::vector<std::vector<std::string>> out;
        for (const auto& s : surfaces) {
            std::vector<std::string> toks;
            for (const auto& t : split(uncased_ ? to_lower(s) : s, ' '))
                if (!t.empty()) toks.push_back(t);
            if (toks.empty()) throw ValidationError("cannot tokenize empty surface");
            out.push_back(std::move(toks));
        }
        return out;
    }

    LogprobReply logprobs(const LogprobRequest& req) override {
        check_logprob_request(req, dimension_);
        const std::string fp = prompt_fingerprint(req.prompt);
        LogprobReply r;
        for (std::size_t i = 0; i < req.queries.size(); ++i) {
            std::map<std::string, double> m;
            for (const auto& tok : req.queries[i]) m[tok] = lookup(fp, static_cast<int>(i), tok);
            r.values.push_back(std::move(m));
        }
        return r;
    }

    /// Pseudo-random normal rows seeded by the token text.
    std::vector<Vector> embeddings(const std::vector<std::string>& tokens) override {
        std::vector<Vector> out;
        for (const auto& t : tokens) {
            Rng rng(fnv1a64(t));
            Vector v(dimension_);
            for (auto& x : v) x = rng.normal();
            out.push_back(std::move(v));
        }
        return out;
    }

    std::string complete(const std::string& prompt) override {
        auto it = answers_.find(fingerprint(prompt));
        if (it != answers_.end()) return it->second;
        if (answers_.empty()) return Backend::complete(prompt);
        return "(a)";
    }

private:
    static std::string key(const std::string& fp, int pos, const std::string& tok) {
        return fp + '\t' + std::to_string(pos) + '\t' + tok;
    }

    double lookup(const std::string& fp, int pos, const std::string& tok) const {
        if (auto it = table_.find(key(fp, pos, tok)); it != table_.end()) return it->second;
        if (auto it = table_.find(key(fp, kAnyPosition, tok)); it != table_.end()) return it->second;
        return floor_;
    }

    double floor_;
    std::size_t dimension_;
    bool uncased_;
    std::unordered_map<std::string, double> table_;
    std::set<std::string> vocab_;
    std::map<std::string, std::string> answers_;
};

/// Oracle table file: `fingerprint<TAB>position|*<TAB>token<TAB>logprob`.
inline void load_oracle_spec(MockOracle& oracle, std::string_view text, const std::string& source) {
    std::size_t lineno = 0;
    for (const auto& raw : split(text, '\n')) {
        ++lineno;
        auto line = trim(raw);
        if (line.empty() || line.front() == '#') continue;
        auto f = split(line, '\t');
        if (f.size() != 4) throw ParseError(source, lineno, "expected 4 tab-separated fields");
        int pos = MockOracle::kAnyPosition;
        double lp = 0;
        try {
            if (f[1] != "*") pos = std::stoi(f[1]);
            lp = std::stod(f[3]);
        } catch (const std::exception&) {
            throw ParseError(source, lineno, "bad position or log-prob");
        }
        oracle.set(f[0], pos, f[2], lp);
    }
}

inline std::string dump_oracle_spec(const std::vector<std::tuple<std::string, int, std::string, double>>& rows) {
    std::string out;
    for (const auto& [fp, pos, tok, lp] : rows) {
        char buf[32];
        std::snprintf(buf, sizeof buf, "%.17g", lp);
        out += fp + '\t' + (pos < 0 ? std::string("*") : std::to_string(pos)) + '\t' + tok + '\t' + buf + '\n';
    }
    return out;
}

enum class MaskMode { Multiple, Single };

/// Registers gold tokens at `gold_logprob` for every prompt the scorer will
/// issue for `items`: in multiple mode the n-mask prompt gets token i of each
/// n-token gold at position i; in single mode the 1-mask prompt gets every
/// gold token at position 0.
inline void favor_golds(MockOracle& oracle, const std::vector<ProbeItem>& items, MaskMode mode,
                        double gold_logprob = -0.1) {
    for (const auto& it : items)
        for (const auto& gold : it.golds) {
            auto toks = oracle.tokenize({gold}).front();
            if (mode == MaskMode::Multiple) {
                auto fp = prompt_fingerprint(it.prompt.with_mask_count(toks.size()));
                for (std::size_t i = 0; i < toks.size(); ++i) oracle.set(fp, static_cast<int>(i), toks[i], gold_logprob);
            } else {
                auto fp = prompt_fingerprint(it.prompt.with_mask_count(1));
                for (const auto& t : toks) oracle.set(fp, 0, t, gold_logprob);
            }
        }
}

// ---------------------------------------------------------------------------
// Wire protocol

/// Bidirectional newline-delimited text channel.
class LineChannel {
public:
    virtual ~LineChannel() = default;
    virtual void send_line(const std::string& line) = 0;
    /// nullopt on end of stream.
    virtual std::optional<std::string> recv_line() = 0;
    /// Unblocks a pending recv_line() in another thread.
    virtual void interrupt() {}
    virtual void close() {}
};

class FdChannel : public LineChannel {
public:
    FdChannel(int in_fd, int out_fd, bool owns = false) : in_(in_fd), out_(out_fd), owns_(owns) {}
    ~FdChannel() override { FdChannel::close(); }

    void send_line(const std::string& line) override {
        std::lock_guard lock(write_mu_);
        std::string buf = line + '\n';
        const char* p = buf.data();
        std::size_t left = buf.size();
        while (left > 0) {
            ssize_t n = ::write(out_, p, left);
            if (n < 0 && errno == EINTR) continue;
            if (n <= 0) throw TransportError(std::string("write failed: ") + std::strerror(errno));
            p += n;
            left -= static_cast<std::size_t>(n);
        }
    }

    std::optional<std::string> recv_line() override {
        for (;;) {
            if (auto nl = buf_.find('\n'); nl != std::string::npos) {
                std::string line = buf_.substr(0, nl);
                buf_.erase(0, nl + 1);
                return line;
            }
            char chunk[65536];
            ssize_t n = ::read(in_, chunk, sizeof chunk);
            if (n < 0 && errno == EINTR) continue;
            if (n < 0) throw TransportError(std::string("read failed: ") + std::strerror(errno));
            if (n == 0) {
                if (buf_.empty()) return std::nullopt;
                std::string line = std::move(buf_);
                buf_.clear();
                return line;
            }
            buf_.append(chunk, static_cast<std::size_t>(n));
        }
    }

    void close() override {
        if (!owns_) return;
        if (in_ >= 0) ::close(in_);
        if (out_ >= 0 && out_ != in_) ::close(out_);
        in_ = out_ = -1;
        owns_ = false;
    }

    void interrupt() override {
        if (in_ >= 0 && in_ == out_) ::shutdown(in_, SHUT_RDWR);
        else shutdown_write();
    }

    /// Half-close the writing side so the peer sees end of stream.
    void shutdown_write() {
        if (owns_ && out_ >= 0 && out_ != in_) {
            ::close(out_);
            out_ = -1;
        } else if (owns_ && out_ >= 0) {
            ::shutdown(out_, SHUT_WR);
        }
    }

private:
    int in_, out_;
    bool owns_;
    std::string buf_;
    std::mutex write_mu_;
};

/// Child process started with `/bin/sh -c command`, talking over its stdio.
class SubprocessChannel : public LineChannel {
public:
    explicit SubprocessChannel(const std::string& command) {
        ::signal(SIGPIPE, SIG_IGN);
        int to_child[2], from_child[2];
        if (::pipe(to_child) != 0 || ::pipe(from_child) != 0) throw TransportError("pipe() failed");
        pid_ = ::fork();
        if (pid_ < 0) throw TransportError("fork() failed");
        if (pid_ == 0) {
            ::dup2(to_child[0], 0);
            ::dup2(from_child[1], 1);
            ::close(to_child[0]);
            ::close(to_child[1]);
            ::close(from_child[0]);
            ::close(from_child[1]);
            ::execl("/bin/sh", "sh", "-c", command.c_str(), static_cast<char*>(nullptr));
            ::_exit(127);
        }
        ::close(to_child[0]);
        ::close(from_child[1]);
        fd_ = std::make_unique<FdChannel>(from_child[0], to_child[1], true);
    }

    ~SubprocessChannel() override { SubprocessChannel::close(); }

    void send_line(const std::string& line) override { fd_->send_line(line); }
    std::optional<std::string> recv_line() override { return fd_->recv_line(); }
    void interrupt() override { fd_->shutdown_write(); }

    void close() override {
        if (pid_ <= 0) return;
        fd_->shutdown_write();
        int status = 0;
        ::waitpid(pid_, &status, 0);
        fd_->close();
        pid_ = -1;
    }

private:
    pid_t pid_ = -1;
    std::unique_ptr<FdChannel> fd_;
};

inline int tcp_connect(const std::string& host, const std::string& port) {
    ::signal(SIGPIPE, SIG_IGN);
    addrinfo hints{};
    hints.ai_family = AF_UNSPEC;
    hints.ai_socktype = SOCK_STREAM;
    addrinfo* res = nullptr;
    if (int rc = ::getaddrinfo(host.c_str(), port.c_str(), &hints, &res); rc != 0)
        throw TransportError("cannot resolve " + host + ":" + port + ": " + ::gai_strerror(rc));
    int fd = -1;
    for (auto* ai = res; ai; ai = ai->ai_next) {
        fd = ::socket(ai->ai_family, ai->ai_socktype, ai->ai_protocol);
        if (fd < 0) continue;
        if (::connect(fd, ai->ai_addr, ai->ai_addrlen) == 0) break;
        ::close(fd);
        fd = -1;
    }
    ::freeaddrinfo(res);
    if (fd < 0) throw TransportError("cannot connect to " + host + ":" + port);
    return fd;
}

/// Listening socket on 127.0.0.1; port 0 picks a free one.
class TcpListener {
public:
    explicit TcpListener(int port) {
        fd_ = ::socket(AF_INET, SOCK_STREAM, 0);
        if (fd_ < 0) throw TransportError("socket() failed");
        int one = 1;
        ::setsockopt(fd_, SOL_SOCKET, SO_REUSEADDR, &one, sizeof one);
        sockaddr_in addr{};
        addr.sin_family = AF_INET;
        addr.sin_addr.s_addr = htonl(INADDR_LOOPBACK);
        addr.sin_port = htons(static_cast<uint16_t>(port));
        if (::bind(fd_, reinterpret_cast<sockaddr*>(&addr), sizeof addr) != 0 || ::listen(fd_, 8) != 0)
            throw TransportError("cannot listen on port " + std::to_string(port));
        socklen_t len = sizeof addr;
        ::getsockname(fd_, reinterpret_cast<sockaddr*>(&addr), &len);
        port_ = ntohs(addr.sin_port);
    }
    ~TcpListener() {
        if (fd_ >= 0) ::close(fd_);
    }
    TcpListener(const TcpListener&) = delete;
    TcpListener& operator=(const TcpListener&) = delete;

    int port() const { return port_; }

    std::unique_ptr<FdChannel> accept() {
        int c = ::accept(fd_, nullptr, nullptr);
        if (c < 0) throw TransportError("accept() failed");
        return std::make_unique<FdChannel>(c, c, true);
    }

private:
    int fd_ = -1;
    int port_ = 0;
};

/// Server side of the protocol: sends the handshake, then answers requests
/// in arrival order until end of stream. Bad requests get an error reply and
/// the session continues.
inline void serve_session(Backend& backend, LineChannel& ch) {
    ch.send_line(to_json(backend.handshake()).dump());
    while (auto line = ch.recv_line()) {
        if (trim(*line).empty()) continue;
        json reply;
        try {
            auto req = json::parse(*line);
            reply["id"] = req.at("id");
            const auto kind = req.at("kind").get<std::string>();
            const auto& payload = req.at("payload");
            if (kind == "tokenize") {
                reply["result"] = {{"tokens", backend.tokenize(payload.at("surfaces").get<std::vector<std::string>>())}};
            } else if (kind == "logprobs") {
                auto r = backend.logprobs(logprob_request_from_json(payload));
                if (r.error) {
                    reply["error"] = *r.error;
                    reply["retryable"] = r.retryable;
                } else {
                    reply["result"] = {{"logprobs", r.values}};
                }
            } else if (kind == "embeddings") {
                reply["result"] = {{"rows", backend.embeddings(payload.at("tokens").get<std::vector<std::string>>())}};
            } else if (kind == "complete") {
                reply["result"] = {{"text", backend.complete(payload.at("prompt").get<std::string>())}};
            } else {
                throw ValidationError("unknown request kind: " + kind);
            }
        } catch (const BackendError& e) {
            reply["error"] = e.what();
            reply["retryable"] = e.retryable();
        } catch (const std::exception& e) {
            reply["error"] = e.what();
            reply["retryable"] = false;
        }
        if (!reply.contains("id")) reply["id"] = nullptr;
        ch.send_line(reply.dump());
    }
}

/// Client side. A reader thread routes responses to waiting requests by id,
/// so responses may arrive in any order; at most `window` requests are in
/// flight at once.
class WireClient : public Backend {
public:
    WireClient(std::unique_ptr<LineChannel> ch, std::size_t window = 8) : ch_(std::move(ch)), window_(std::max<std::size_t>(1, window)) {
        auto first = ch_->recv_line();
        if (!first) throw TransportError("backend closed before handshake");
        try {
            hs_ = handshake_from_json(json::parse(*first));
        } catch (const json::exception& e) {
            throw TransportError(std::string("bad handshake line: ") + e.what());
        }
        reader_ = std::thread([this] { read_loop(); });
    }

    ~WireClient() override {
        ch_->interrupt();
        if (reader_.joinable()) reader_.join();
        ch_->close();
    }

    Handshake handshake() override { return hs_; }

    std::vector<std::vector<std::string>> tokenize(const std::vector<std::string>& surfaces) override {
        auto r = call("tokenize", {{"surfaces", surfaces}});
        return r.at("tokens").get<std::vector<std::vector<std::string>>>();
    }

    LogprobReply logprobs(const LogprobRequest& req) override { return logprobs_batch({req}).front(); }

    std::vector<LogprobReply> logprobs_batch(const std::vector<LogprobRequest>& reqs) override {
        std::vector<std::pair<std::string, std::future<json>>> pending;
        for (const auto& r : reqs) {
            check_logprob_request(r, hs_.dimension);
            pending.push_back(submit("logprobs", to_json(r)));
        }
        std::vector<LogprobReply> out;
        for (auto& [id, fut] : pending) {
            json msg = fut.get();
            LogprobReply rep;
            rep.request_id = id;
            if (msg.contains("error") && !msg["error"].is_null()) {
                rep.error = msg["error"].get<std::string>();
                rep.retryable = msg.value("retryable", false);
            } else {
                try {
                    rep.values = msg.at("result").at("logprobs").get<std::vector<std::map<std::string, double>>>();
                    for (const auto& m : rep.values)
                        for (const auto& [tok, lp] : m)
                            if (!(lp <= 0)) throw ValidationError("backend returned log-prob > 0 for '" + tok + "'");
                } catch (const json::exception& e) {
                    rep.error = std::string("malformed logprobs response: ") + e.what();
                }
            }
            out.push_back(std::move(rep));
        }
        return out;
    }

    std::vector<Vector> embeddings(const std::vector<std::string>& tokens) override {
        return call("embeddings", {{"tokens", tokens}}).at("rows").get<std::vector<Vector>>();
    }

    std::string complete(const std::string& prompt) override {
        if (!hs_.complete) return Backend::complete(prompt);
        return call("complete", {{"prompt", prompt}}).at("text").get<std::string>();
    }

    std::size_t window() const { return window_; }

private:
    std::pair<std::string, std::future<json>> submit(const std::string& kind, json payload) {
        std::unique_lock lock(mu_);
        cv_.wait(lock, [&] { return in_flight_ < window_ || dead_; });
        if (dead_) throw TransportError("backend connection lost: " + dead_reason_);
        std::string id = "r" + std::to_string(++next_id_);
        auto& slot = waiting_[id];
        auto fut = slot.get_future();
        ++in_flight_;
        lock.unlock();
        ch_->send_line(json{{"id", id}, {"kind", kind}, {"payload", std::move(payload)}}.dump());
        return {id, std::move(fut)};
    }

    json call(const std::string& kind, json payload) {
        auto [id, fut] = submit(kind, std::move(payload));
        json msg = fut.get();
        if (msg.contains("error") && !msg["error"].is_null())
            throw BackendError(msg["error"].get<std::string>(), id, msg.value("retryable", false));
        return msg.at("result");
    }

    void read_loop() {
        std::string reason = "end of stream";
        try {
            while (auto line = ch_->recv_line()) {
                if (trim(*line).empty()) continue;
                json msg = json::parse(*line);
                std::string id = msg.at("id").is_string() ? msg["id"].get<std::string>() : std::string{};
                std::lock_guard lock(mu_);
                auto it = waiting_.find(id);
                if (it == waiting_.end()) continue; // stray or duplicate id
                it->second.set_value(std::move(msg));
                waiting_.erase(it);
                --in_flight_;
                cv_.notify_all();
            }
        } catch (const std::exception& e) {
            reason = e.what();
        }
        std::lock_guard lock(mu_);
        dead_ = true;
        dead_reason_ = reason;
        for (auto& [id, p] : waiting_)
            p.set_exception(std::make_exception_ptr(TransportError("backend connection lost before reply to " + id + ": " + reason)));
        waiting_.clear();
        in_flight_ = 0;
        cv_.notify_all();
    }

    std::unique_ptr<LineChannel> ch_;
    std::size_t window_;
    Handshake hs_;
    std::thread reader_;
    std::mutex mu_;
    std::condition_variable cv_;
    std::unordered_map<std::string, std::promise<json>> waiting_;
    std::size_t in_flight_ = 0;
    std::uint64_t next_id_ = 0;
    bool dead_ = false;
    std::string dead_reason_;
};

/// Backend from a spec string: `cmd:<shell command>` or `tcp:<host>:<port>`.
inline std::unique_ptr<WireClient> connect_backend(const std::string& spec, std::size_t window) {
    if (spec.rfind("cmd:", 0) == 0) return std::make_unique<WireClient>(std::make_unique<SubprocessChannel>(spec.substr(4)), window);
    if (spec.rfind("tcp:", 0) == 0) {
        auto rest = spec.substr(4);
        auto colon = rest.rfind(':');
        if (colon == std::string::npos) throw ValidationError("tcp backend needs host:port");
        int fd = tcp_connect(rest.substr(0, colon), rest.substr(colon + 1));
        return std::make_unique<WireClient>(std::make_unique<FdChannel>(fd, fd, true), window);
    }
    throw ValidationError("unknown backend spec: " + spec);
}

} // namespace ontoprobe
