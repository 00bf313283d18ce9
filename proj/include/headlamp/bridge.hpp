#pragma once

#include <nlohmann/json.hpp>

#include <functional>
#include <memory>
#include <mutex>
#include <string>
#include <utility>
#include <vector>

#include "headlamp/model.hpp"

namespace headlamp {

/// Client side of the "hlb/1" wire protocol: newline-delimited JSON, one
/// response per request, over a child process's stdio or local HTTP.
namespace bridge {

inline constexpr const char* kProtocol = "hlb/1";

struct Want {
    bool all_rows = true;
    std::vector<HeadId> rows;  // used when all_rows is false
    bool hidden = true;
    int logits_top_n = 32;  // -1 asks for every vocabulary entry
};

struct Request {
    std::string id;
    Tokens tokens;
    Intervention intervention;
    Want want;
};

struct RowEntry {
    HeadId head;
    std::vector<double> row;
    bool masked = false;
    bool degenerate = false;
};

struct Response {
    std::string id;
    ModelShape shape;
    std::vector<std::pair<Token, double>> logits;  // descending by value
    std::vector<RowEntry> rows;
    std::vector<double> hidden;
};

nlohmann::json encode_request(const Request& r);
/// Throws FormatError on schema violations.
Request decode_request(const nlohmann::json& j);

nlohmann::json encode_response(const Response& r);
/// Throws BridgeError for error objects and FormatError for schema violations.
Response decode_response(const nlohmann::json& j);

nlohmann::json encode_error(const std::string& id, const std::string& code, const std::string& message);

/// Reference responder over any in-process backend.
Response respond(const Backend& backend, const Request& request);
/// One protocol exchange; failures become error objects rather than exceptions.
std::string handle_line(const Backend& backend, const std::string& line);

/// Expands a response into the engine's per-step record. Logits missing from
/// a top-n response are -inf; rows not requested stay empty.
StepOutput to_step_output(const Response& r);

}  // namespace bridge

class BridgeError : public Error {
public:
    BridgeError(std::string code, const std::string& message)
        : Error("bridge error [" + code + "]: " + message), code_(std::move(code)) {}
    const std::string& code() const { return code_; }

private:
    std::string code_;
};

class Transport {
public:
    virtual ~Transport() = default;
    /// Sends one request line and returns one response line (no newline).
    virtual std::string exchange(const std::string& line) = 0;
};

/// Spawns `argv` and talks to it over its stdin/stdout.
class StdioTransport final : public Transport {
public:
    explicit StdioTransport(const std::vector<std::string>& argv);
    ~StdioTransport() override;
    StdioTransport(const StdioTransport&) = delete;
    StdioTransport& operator=(const StdioTransport&) = delete;
    std::string exchange(const std::string& line) override;

private:
    int pid_ = -1;
    int to_child_ = -1;
    int from_child_ = -1;
    std::string buffer_;
};

/// POSTs each line to http://host:port/hlb (or the path given in the URL).
class HttpTransport final : public Transport {
public:
    explicit HttpTransport(const std::string& url);
    std::string exchange(const std::string& line) override;

private:
    std::string origin_;
    std::string path_;
};

/// In-process transport, mainly for tests.
class LoopbackTransport final : public Transport {
public:
    explicit LoopbackTransport(std::function<std::string(const std::string&)> handler) : handler_(std::move(handler)) {}
    std::string exchange(const std::string& line) override { return handler_(line); }

private:
    std::function<std::string(const std::string&)> handler_;
};

struct BridgeOptions {
    int max_context = 4096;
    int logits_top_n = -1;
    Token eos_token = -1;
};

/// A Backend whose forward passes run on the far side of a transport. The
/// model descriptor is fetched with a one-token handshake on construction.
class BridgeBackend final : public Backend {
public:
    BridgeBackend(std::unique_ptr<Transport> transport, BridgeOptions options = {});

    ModelShape shape() const override { return shape_; }
    int max_context() const override { return options_.max_context; }
    Token eos_token() const override { return options_.eos_token; }
    StepOutput forward(std::span<const Token> tokens, const Intervention& intervention) const override;

private:
    bridge::Response call(const bridge::Request& request) const;

    std::unique_ptr<Transport> transport_;
    BridgeOptions options_;
    ModelShape shape_;
    mutable std::mutex mutex_;
    mutable std::uint64_t next_id_ = 0;
};

}  // namespace headlamp
