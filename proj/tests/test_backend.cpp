#include <gtest/gtest.h>

#include <poll.h>

#include <thread>

#include "support.hpp"

using namespace ontoprobe;
using namespace testsupport;

namespace {

/// Two pipes: the client end and the raw server fds.
struct PipePair {
    int client_in, client_out, server_in, server_out;
    PipePair() {
        int a[2], b[2];
        if (::pipe(a) != 0 || ::pipe(b) != 0) throw std::runtime_error("pipe");
        server_in = a[0];
        client_out = a[1];
        client_in = b[0];
        server_out = b[1];
    }
    std::unique_ptr<FdChannel> client() { return std::make_unique<FdChannel>(client_in, client_out, true); }
};

ClozePrompt prompt(std::size_t masks = 1) {
    return ClozePrompt{{Segment::text("The "), Segment::mask(masks), Segment::text(" sat .")}};
}

LogprobRequest request(std::size_t masks, std::vector<std::string> toks) {
    LogprobRequest r;
    r.prompt = prompt(masks);
    for (std::size_t i = 0; i < masks; ++i) r.queries.push_back(toks);
    return r;
}

/// Raw server that holds requests until the client goes quiet, then answers
/// them newest first. Records the largest number held at once.
struct ReversingServer {
    int in, out;
    std::size_t max_held = 0;
    std::size_t answered = 0;

    void write_line(const std::string& s) {
        std::string b = s + "\n";
        ASSERT_EQ(::write(out, b.data(), b.size()), static_cast<ssize_t>(b.size()));
    }

    void run(const Handshake& hs) {
        write_line(to_json(hs).dump());
        std::string buf;
        std::vector<json> held;
        for (;;) {
            pollfd p{in, POLLIN, 0};
            int rc = ::poll(&p, 1, 100);
            if (rc == 0) {
                max_held = std::max(max_held, held.size());
                for (auto it = held.rbegin(); it != held.rend(); ++it) {
                    // echo the request's first query token back with a value tied to the id
                    auto tok = (*it)["payload"]["queries"][0][0].get<std::string>();
                    double lp = -static_cast<double>(std::stoi((*it)["id"].get<std::string>().substr(1)));
                    json values = json::array({json{{tok, lp}}});
                    write_line(json{{"id", (*it)["id"]}, {"result", {{"logprobs", values}}}}.dump());
                    ++answered;
                }
                held.clear();
                continue;
            }
            char chunk[4096];
            ssize_t n = ::read(in, chunk, sizeof chunk);
            if (n <= 0) break;
            buf.append(chunk, static_cast<std::size_t>(n));
            for (auto nl = buf.find('\n'); nl != std::string::npos; nl = buf.find('\n')) {
                held.push_back(json::parse(buf.substr(0, nl)));
                buf.erase(0, nl + 1);
            }
        }
        ::close(out);
        ::close(in);
    }
};

} // namespace

TEST(Backend, HandshakeJson) {
    Handshake h{"x", 10, 4, true, false};
    auto back = handshake_from_json(to_json(h));
    EXPECT_EQ(back.backend, "x");
    EXPECT_EQ(back.dimension, 4u);
    EXPECT_TRUE(back.uncased);
    auto j = to_json(h);
    j["casing"] = "mixed";
    EXPECT_THROW(handshake_from_json(j), ValidationError);
    EXPECT_THROW(handshake_from_json(json{{"type", "hello"}}), ValidationError);
}

TEST(Backend, OracleLookupOrder) {
    MockOracle o(-7);
    auto fp = prompt_fingerprint(prompt(2));
    o.set(fp, MockOracle::kAnyPosition, "cat", -2);
    o.set(fp, 1, "cat", -1);
    auto r = o.logprobs(request(2, {"cat", "dog"}));
    ASSERT_TRUE(r.ok());
    EXPECT_DOUBLE_EQ(r.values[0].at("cat"), -2);
    EXPECT_DOUBLE_EQ(r.values[1].at("cat"), -1);
    EXPECT_DOUBLE_EQ(r.values[0].at("dog"), -7);
    // a different mask count is a different prompt
    EXPECT_DOUBLE_EQ(o.logprobs(request(1, {"cat"})).values[0].at("cat"), -7);
    EXPECT_THROW(o.set(fp, 0, "x", 0.1), ValidationError);
    EXPECT_THROW(MockOracle(1.0), ValidationError);
}

TEST(Backend, OracleTokenizerAndEmbeddings) {
    MockOracle o(-5, 6, true);
    EXPECT_EQ(o.tokenize({"Sports  Team"}).front(), (std::vector<std::string>{"sports", "team"}));
    EXPECT_THROW(o.tokenize({" "}), ValidationError);
    auto e = o.embeddings({"a", "b", "a"});
    EXPECT_EQ(e[0].size(), 6u);
    EXPECT_EQ(e[0], e[2]);
    EXPECT_NE(e[0], e[1]);
}

TEST(Backend, RequestChecks) {
    auto r = request(2, {"a"});
    r.queries.pop_back();
    EXPECT_THROW(check_logprob_request(r, 4), ValidationError);
    LogprobRequest p;
    p.prompt = ClozePrompt{{Segment::pseudo("X"), Segment::text(" is a "), Segment::mask()}};
    p.queries = {{"a"}};
    EXPECT_THROW(check_logprob_request(p, 4), ValidationError);
    p.pseudowords["X"] = Vector(3, 0.0);
    EXPECT_THROW(check_logprob_request(p, 4), ValidationError);
    p.pseudowords["X"] = Vector(4, 0.0);
    EXPECT_NO_THROW(check_logprob_request(p, 4));
}

TEST(Backend, OracleSpecRoundTrip) {
    auto text = dump_oracle_spec({{"abc", 0, "cat", -0.25}, {"abc", -1, "dog", -1.5}});
    MockOracle o;
    load_oracle_spec(o, "# comment\n" + text, "spec");
    EXPECT_EQ(o.size(), 2u);
    EXPECT_THROW(load_oracle_spec(o, "abc\t0\tcat\n", "spec"), ParseError);
    EXPECT_THROW(load_oracle_spec(o, "abc\tzero\tcat\t-1\n", "spec"), ParseError);
    EXPECT_THROW(load_oracle_spec(o, "abc\t0\tcat\t0.5\n", "spec"), ValidationError);
}

TEST(Backend, FavorGoldsPositions) {
    MockOracle o;
    ProbeItem it{"i", prompt(), {"big cat"}, {"big cat", "dog"}, {}, std::nullopt};
    favor_golds(o, {it}, MaskMode::Multiple);
    auto r = o.logprobs(request(2, {"big", "cat"}));
    EXPECT_DOUBLE_EQ(r.values[0].at("big"), -0.1);
    EXPECT_DOUBLE_EQ(r.values[0].at("cat"), -5);
    EXPECT_DOUBLE_EQ(r.values[1].at("cat"), -0.1);
    MockOracle s;
    favor_golds(s, {it}, MaskMode::Single);
    auto r1 = s.logprobs(request(1, {"big", "cat"}));
    EXPECT_DOUBLE_EQ(r1.values[0].at("big"), -0.1);
    EXPECT_DOUBLE_EQ(r1.values[0].at("cat"), -0.1);
}

TEST(Wire, PipeSessionMatchesInProcess) {
    MockOracle o(-5, 4);
    auto fp = prompt_fingerprint(prompt(2));
    o.set(fp, 0, "a", -0.5);
    o.set(fp, 1, "b", -0.75);
    PipePair pp;
    std::thread server([&] {
        FdChannel ch(pp.server_in, pp.server_out, true);
        serve_session(o, ch);
    });
    {
        WireClient client(pp.client(), 3);
        EXPECT_EQ(client.handshake().backend, "mock-oracle");
        EXPECT_EQ(client.handshake().dimension, 4u);
        EXPECT_EQ(client.tokenize({"x y", "z"}), o.tokenize({"x y", "z"}));
        std::vector<LogprobRequest> reqs;
        for (int i = 0; i < 20; ++i) reqs.push_back(request(1 + i % 3, {"a", "b", "c"}));
        auto remote = client.logprobs_batch(reqs);
        ASSERT_EQ(remote.size(), reqs.size());
        for (std::size_t i = 0; i < reqs.size(); ++i) {
            ASSERT_TRUE(remote[i].ok());
            EXPECT_EQ(remote[i].values, o.logprobs(reqs[i]).values);
        }
        EXPECT_EQ(client.embeddings({"q"}), o.embeddings({"q"}));
        EXPECT_THROW(client.complete("anything"), BackendError);
    }
    server.join();
}

TEST(Wire, OutOfOrderRepliesRoutedById) {
    PipePair pp;
    ReversingServer srv{pp.server_in, pp.server_out};
    std::thread server([&] { srv.run({"reverser", 10, 0, false, false}); });
    {
        WireClient client(pp.client(), 4);
        std::vector<LogprobRequest> reqs;
        for (int i = 0; i < 10; ++i) reqs.push_back(request(1, {"tok" + std::to_string(i)}));
        auto out = client.logprobs_batch(reqs);
        for (std::size_t i = 0; i < out.size(); ++i) {
            ASSERT_TRUE(out[i].ok()) << *out[i].error;
            // the server encodes the id it answered into the value
            EXPECT_DOUBLE_EQ(out[i].values[0].at("tok" + std::to_string(i)), -static_cast<double>(i + 1));
            EXPECT_EQ(out[i].request_id, "r" + std::to_string(i + 1));
        }
    }
    server.join();
    EXPECT_EQ(srv.answered, 10u);
    EXPECT_LE(srv.max_held, 4u);
    EXPECT_GE(srv.max_held, 2u);
}

TEST(Wire, ErrorRepliesAndConnectionLoss) {
    PipePair pp;
    std::thread server([&] {
        FdChannel ch(pp.server_in, pp.server_out, true);
        ch.send_line(to_json(Handshake{"flaky", 1, 0, false, false}).dump());
        auto a = json::parse(*ch.recv_line());
        ch.send_line(json{{"id", a["id"]}, {"error", "overloaded"}, {"retryable", true}}.dump());
        ch.send_line(json{{"id", "bogus"}, {"result", {}}}.dump());
        ch.recv_line(); // read one more request, then hang up
    });
    WireClient client(pp.client(), 2);
    auto first = client.logprobs(request(1, {"x"}));
    EXPECT_FALSE(first.ok());
    EXPECT_TRUE(first.retryable);
    EXPECT_EQ(*first.error, "overloaded");
    EXPECT_THROW(client.logprobs(request(1, {"x"})), TransportError);
    EXPECT_THROW(client.tokenize({"x"}), TransportError);
    server.join();
}

TEST(Wire, ServerSurvivesBadRequests) {
    MockOracle o;
    PipePair pp;
    std::thread server([&] {
        FdChannel ch(pp.server_in, pp.server_out, true);
        serve_session(o, ch);
    });
    FdChannel raw(pp.client_in, pp.client_out, true);
    auto hs = handshake_from_json(json::parse(*raw.recv_line()));
    EXPECT_EQ(hs.backend, "mock-oracle");
    raw.send_line("not json");
    auto r1 = json::parse(*raw.recv_line());
    EXPECT_TRUE(r1["id"].is_null());
    EXPECT_FALSE(r1["retryable"].get<bool>());
    raw.send_line(json{{"id", "q"}, {"kind", "dance"}, {"payload", json::object()}}.dump());
    auto r2 = json::parse(*raw.recv_line());
    EXPECT_EQ(r2["id"], "q");
    EXPECT_NE(r2["error"].get<std::string>().find("unknown request kind"), std::string::npos);
    raw.send_line(json{{"id", "t"}, {"kind", "tokenize"}, {"payload", {{"surfaces", {"a b"}}}}}.dump());
    auto r3 = json::parse(*raw.recv_line());
    EXPECT_EQ(r3["result"]["tokens"], json::array({json::array({"a", "b"})}));
    raw.shutdown_write();
    server.join();
}

TEST(Wire, BadHandshakeIsATransportError) {
    PipePair pp;
    std::thread server([&] {
        FdChannel ch(pp.server_in, pp.server_out, true);
        ch.send_line("{\"hello\": 1}");
    });
    EXPECT_THROW(WireClient(pp.client(), 1), std::exception);
    server.join();
}

TEST(Wire, TcpTransport) {
    MockOracle o;
    TcpListener listener(0);
    std::thread server([&] {
        auto ch = listener.accept();
        serve_session(o, *ch);
    });
    {
        auto client = connect_backend("tcp:127.0.0.1:" + std::to_string(listener.port()), 4);
        EXPECT_EQ(client->tokenize({"p q"}).front().size(), 2u);
        EXPECT_TRUE(client->logprobs(request(1, {"z"})).ok());
    }
    server.join();
    EXPECT_THROW(connect_backend("udp:x", 1), ValidationError);
    EXPECT_THROW(connect_backend("tcp:nohostport", 1), ValidationError);
}

TEST(Wire, SubprocessTransport) {
    auto client = connect_backend("cmd:" + cli() + " serve-oracle", 2);
    EXPECT_EQ(client->handshake().backend, "mock-oracle");
    EXPECT_EQ(client->tokenize({"one two"}).front(), (std::vector<std::string>{"one", "two"}));
}
