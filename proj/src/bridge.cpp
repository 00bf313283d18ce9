#include "headlamp/bridge.hpp"

#include <httplib.h>

#include <sys/types.h>
#include <sys/wait.h>
#include <unistd.h>

#include <algorithm>
#include <cerrno>
#include <csignal>
#include <cstring>
#include <limits>
#include <numeric>

namespace headlamp {
namespace bridge {
namespace {

using nlohmann::json;

json head_json(HeadId h) { return json::array({h.layer, h.head}); }

HeadId head_from(const json& j) {
    if (!j.is_array() || j.size() != 2 || !j[0].is_number_integer() || !j[1].is_number_integer())
        throw FormatError("head must be [layer, head]");
    return {j[0].get<int>(), j[1].get<int>()};
}

const json& field(const json& j, const char* key) {
    if (!j.contains(key)) throw FormatError(std::string("missing field '") + key + "'");
    return j.at(key);
}

void check_version(const json& j) {
    if (!j.is_object()) throw FormatError("message must be a JSON object");
    const auto& v = field(j, "v");
    if (!v.is_string()) throw FormatError("field 'v' must be a string");
    if (v.get<std::string>() != kProtocol)
        throw FormatError("unsupported protocol version '" + v.get<std::string>() + "' (expected " + kProtocol + ")");
}

template <class T>
T as(const json& j, const char* what) {
    try {
        return j.get<T>();
    } catch (const json::exception&) {
        throw FormatError(std::string("field '") + what + "' has the wrong type");
    }
}

}  // namespace

json encode_request(const Request& r) {
    json masked = json::array();
    for (const auto& h : r.intervention.masked_heads) masked.push_back(head_json(h));
    json want{{"hidden", r.want.hidden}};
    if (r.want.all_rows) {
        want["attn_rows"] = "all";
    } else {
        json rows = json::array();
        for (const auto& h : r.want.rows) rows.push_back(head_json(h));
        want["attn_rows"] = rows;
    }
    want["logits"] = r.want.logits_top_n < 0 ? json("all") : json(r.want.logits_top_n);
    json j{{"v", kProtocol}, {"id", r.id}, {"type", "forward"}, {"tokens", r.tokens}, {"masked_heads", masked},
           {"want", want}};
    if (r.intervention.visible_positions) j["visible_positions"] = *r.intervention.visible_positions;
    return j;
}

Request decode_request(const json& j) {
    check_version(j);
    Request r;
    r.id = as<std::string>(field(j, "id"), "id");
    if (as<std::string>(field(j, "type"), "type") != "forward") throw FormatError("unsupported request type");
    r.tokens = as<Tokens>(field(j, "tokens"), "tokens");
    if (j.contains("masked_heads")) {
        if (!j.at("masked_heads").is_array()) throw FormatError("field 'masked_heads' must be an array");
        for (const auto& h : j.at("masked_heads")) r.intervention.masked_heads.insert(head_from(h));
    }
    if (j.contains("visible_positions") && !j.at("visible_positions").is_null())
        r.intervention.visible_positions = as<std::vector<int>>(j.at("visible_positions"), "visible_positions");
    const auto& want = field(j, "want");
    if (!want.is_object()) throw FormatError("field 'want' must be an object");
    const auto& rows = field(want, "attn_rows");
    if (rows.is_string()) {
        if (rows.get<std::string>() != "all") throw FormatError("want.attn_rows must be \"all\" or a head list");
        r.want.all_rows = true;
    } else if (rows.is_array()) {
        r.want.all_rows = false;
        for (const auto& h : rows) r.want.rows.push_back(head_from(h));
    } else {
        throw FormatError("want.attn_rows must be \"all\" or a head list");
    }
    r.want.hidden = as<bool>(field(want, "hidden"), "want.hidden");
    const auto& logits = field(want, "logits");
    if (logits.is_string() && logits.get<std::string>() == "all") r.want.logits_top_n = -1;
    else if (logits.is_number_integer() && logits.get<int>() >= 0) r.want.logits_top_n = logits.get<int>();
    else throw FormatError("want.logits must be a non-negative integer or \"all\"");
    for (const auto& item : j.items()) {
        static const char* known[] = {"v", "id", "type", "tokens", "masked_heads", "visible_positions", "want"};
        if (std::none_of(std::begin(known), std::end(known), [&](const char* k) { return item.key() == k; }))
            throw FormatError("unknown request field '" + item.key() + "'");
    }
    return r;
}

json encode_response(const Response& r) {
    json logits = json::array();
    for (const auto& [id, value] : r.logits) logits.push_back(json::array({id, value}));
    json rows = json::array();
    for (const auto& e : r.rows)
        rows.push_back({{"head", head_json(e.head)}, {"row", e.row}, {"masked", e.masked}, {"degenerate", e.degenerate}});
    return {{"v", kProtocol},
            {"id", r.id},
            {"ok", true},
            {"model",
             {{"n_layers", r.shape.n_layers},
              {"n_heads", r.shape.heads_per_layer},
              {"d_model", r.shape.d_model},
              {"vocab_size", r.shape.vocab_size}}},
            {"logits", logits},
            {"attn", rows},
            {"hidden", r.hidden}};
}

Response decode_response(const json& j) {
    check_version(j);
    const bool ok = as<bool>(field(j, "ok"), "ok");
    if (!ok) {
        const auto& err = field(j, "error");
        throw BridgeError(as<std::string>(field(err, "code"), "error.code"),
                          as<std::string>(field(err, "message"), "error.message"));
    }
    Response r;
    r.id = as<std::string>(field(j, "id"), "id");
    const auto& m = field(j, "model");
    r.shape = {as<int>(field(m, "n_layers"), "model.n_layers"), as<int>(field(m, "n_heads"), "model.n_heads"),
               as<int>(field(m, "d_model"), "model.d_model"), as<int>(field(m, "vocab_size"), "model.vocab_size")};
    if (r.shape.n_layers <= 0 || r.shape.heads_per_layer <= 0 || r.shape.vocab_size <= 0)
        throw FormatError("model descriptor has non-positive sizes");
    for (const auto& p : field(j, "logits")) {
        if (!p.is_array() || p.size() != 2) throw FormatError("logits entries must be [id, value]");
        const Token id = as<Token>(p[0], "logits.id");
        if (id < 0 || id >= r.shape.vocab_size) throw FormatError("logit id out of range");
        r.logits.emplace_back(id, as<double>(p[1], "logits.value"));
    }
    for (const auto& e : field(j, "attn")) {
        RowEntry row;
        row.head = head_from(field(e, "head"));
        if (!r.shape.contains(row.head)) throw FormatError("attention row for unknown head " + row.head.str());
        row.row = as<std::vector<double>>(field(e, "row"), "attn.row");
        row.masked = as<bool>(field(e, "masked"), "attn.masked");
        row.degenerate = e.contains("degenerate") ? as<bool>(e.at("degenerate"), "attn.degenerate") : false;
        for (double w : row.row)
            if (!(w >= 0.0)) throw FormatError("attention weights must be non-negative");
        r.rows.push_back(std::move(row));
    }
    r.hidden = as<std::vector<double>>(field(j, "hidden"), "hidden");
    return r;
}

json encode_error(const std::string& id, const std::string& code, const std::string& message) {
    return {{"v", kProtocol}, {"id", id}, {"ok", false}, {"error", {{"code", code}, {"message", message}}}};
}

Response respond(const Backend& backend, const Request& request) {
    const auto shape = backend.shape();
    for (const auto& h : request.intervention.masked_heads)
        if (!shape.contains(h)) throw InputError("masked head " + h.str() + " outside the model");
    if (!request.want.all_rows)
        for (const auto& h : request.want.rows)
            if (!shape.contains(h)) throw InputError("requested head " + h.str() + " outside the model");
    const StepOutput out = backend.forward(request.tokens, request.intervention);

    Response r;
    r.id = request.id;
    r.shape = shape;
    std::vector<Token> order(out.logits.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](Token a, Token b) { return out.logits[a] > out.logits[b]; });
    const std::size_t n = request.want.logits_top_n < 0
                              ? order.size()
                              : std::min<std::size_t>(order.size(), static_cast<std::size_t>(request.want.logits_top_n));
    for (std::size_t i = 0; i < n; ++i) r.logits.emplace_back(order[i], out.logits[order[i]]);

    auto add_row = [&](HeadId h) {
        const int f = shape.flat(h);
        r.rows.push_back({h, out.attn_rows[f], request.intervention.masked_heads.count(h) > 0, out.degenerate_rows[f]});
    };
    if (request.want.all_rows) {
        for (int f = 0; f < shape.total_heads(); ++f) add_row(shape.head_at(f));
    } else {
        for (const auto& h : request.want.rows) add_row(h);
    }
    if (request.want.hidden) r.hidden = out.final_hidden;
    return r;
}

std::string handle_line(const Backend& backend, const std::string& line) {
    std::string id;
    try {
        const json j = json::parse(line);
        if (j.is_object() && j.contains("id") && j.at("id").is_string()) id = j.at("id").get<std::string>();
        return encode_response(respond(backend, decode_request(j))).dump();
    } catch (const json::parse_error& e) {
        return encode_error(id, "parse_error", e.what()).dump();
    } catch (const FormatError& e) {
        return encode_error(id, "bad_request", e.what()).dump();
    } catch (const InputError& e) {
        return encode_error(id, "invalid_input", e.what()).dump();
    } catch (const std::exception& e) {
        return encode_error(id, "internal", e.what()).dump();
    }
}

StepOutput to_step_output(const Response& r) {
    StepOutput out;
    out.heads_per_layer = r.shape.heads_per_layer;
    out.logits.assign(r.shape.vocab_size, -std::numeric_limits<double>::infinity());
    for (const auto& [id, v] : r.logits) out.logits[id] = v;
    out.attn_rows.assign(r.shape.total_heads(), {});
    out.degenerate_rows.assign(r.shape.total_heads(), false);
    for (const auto& e : r.rows) {
        const int f = r.shape.flat(e.head);
        out.attn_rows[f] = e.row;
        out.degenerate_rows[f] = e.degenerate;
    }
    out.final_hidden = r.hidden;
    out.predicted_token = r.logits.empty() ? -1 : static_cast<Token>(argmax(out.logits));
    return out;
}

}  // namespace bridge

StdioTransport::StdioTransport(const std::vector<std::string>& argv) {
    if (argv.empty()) throw ConfigError("bridge command is empty");
    int in_pipe[2], out_pipe[2];
    if (pipe(in_pipe) != 0 || pipe(out_pipe) != 0) throw Error(std::string("pipe: ") + std::strerror(errno));
    std::vector<char*> args;
    for (const auto& a : argv) args.push_back(const_cast<char*>(a.c_str()));
    args.push_back(nullptr);
    pid_ = fork();
    if (pid_ < 0) throw Error(std::string("fork: ") + std::strerror(errno));
    if (pid_ == 0) {
        dup2(in_pipe[0], STDIN_FILENO);
        dup2(out_pipe[1], STDOUT_FILENO);
        close(in_pipe[0]);
        close(in_pipe[1]);
        close(out_pipe[0]);
        close(out_pipe[1]);
        execvp(args[0], args.data());
        _exit(127);
    }
    close(in_pipe[0]);
    close(out_pipe[1]);
    to_child_ = in_pipe[1];
    from_child_ = out_pipe[0];
    std::signal(SIGPIPE, SIG_IGN);
}

StdioTransport::~StdioTransport() {
    if (to_child_ >= 0) close(to_child_);
    if (from_child_ >= 0) close(from_child_);
    if (pid_ > 0) {
        int status = 0;
        waitpid(pid_, &status, 0);
    }
}

std::string StdioTransport::exchange(const std::string& line) {
    const std::string msg = line + "\n";
    std::size_t sent = 0;
    while (sent < msg.size()) {
        const ssize_t n = write(to_child_, msg.data() + sent, msg.size() - sent);
        if (n < 0) {
            if (errno == EINTR) continue;
            throw Error(std::string("bridge write failed: ") + std::strerror(errno));
        }
        sent += static_cast<std::size_t>(n);
    }
    for (;;) {
        const auto nl = buffer_.find('\n');
        if (nl != std::string::npos) {
            std::string out = buffer_.substr(0, nl);
            buffer_.erase(0, nl + 1);
            return out;
        }
        char chunk[65536];
        const ssize_t n = read(from_child_, chunk, sizeof chunk);
        if (n < 0) {
            if (errno == EINTR) continue;
            throw Error(std::string("bridge read failed: ") + std::strerror(errno));
        }
        if (n == 0) throw Error("bridge process closed its output");
        buffer_.append(chunk, static_cast<std::size_t>(n));
    }
}

HttpTransport::HttpTransport(const std::string& url) {
    const std::string scheme = "http://";
    if (url.rfind(scheme, 0) != 0) throw ConfigError("bridge url must start with http://");
    const auto slash = url.find('/', scheme.size());
    origin_ = slash == std::string::npos ? url : url.substr(0, slash);
    path_ = slash == std::string::npos || slash + 1 == url.size() ? "/hlb" : url.substr(slash);
}

std::string HttpTransport::exchange(const std::string& line) {
    httplib::Client client(origin_);
    client.set_read_timeout(600, 0);
    auto res = client.Post(path_, line + "\n", "application/x-ndjson");
    if (!res) throw Error("bridge http request failed: " + httplib::to_string(res.error()));
    if (res->status != 200 && res->body.empty())
        throw Error("bridge http status " + std::to_string(res->status));
    std::string body = res->body;
    while (!body.empty() && (body.back() == '\n' || body.back() == '\r')) body.pop_back();
    return body;
}

BridgeBackend::BridgeBackend(std::unique_ptr<Transport> transport, BridgeOptions options)
    : transport_(std::move(transport)), options_(options) {
    if (!transport_) throw ConfigError("bridge backend needs a transport");
    bridge::Request hello;
    hello.tokens = {0};
    hello.want.all_rows = false;
    hello.want.hidden = false;
    hello.want.logits_top_n = 0;
    shape_ = call(hello).shape;
}

bridge::Response BridgeBackend::call(const bridge::Request& request) const {
    std::lock_guard lock(mutex_);
    bridge::Request r = request;
    r.id = "req-" + std::to_string(next_id_++);
    const std::string reply = transport_->exchange(bridge::encode_request(r).dump());
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(reply);
    } catch (const nlohmann::json::parse_error& e) {
        throw FormatError(std::string("bridge reply is not JSON: ") + e.what());
    }
    auto resp = bridge::decode_response(j);
    if (resp.id != r.id) throw FormatError("bridge reply id '" + resp.id + "' does not match request '" + r.id + "'");
    return resp;
}

StepOutput BridgeBackend::forward(std::span<const Token> tokens, const Intervention& intervention) const {
    if (tokens.empty()) throw InputError("forward: empty input");
    if (static_cast<int>(tokens.size()) > options_.max_context) throw InputError("forward: input exceeds max_context");
    bridge::Request r;
    r.tokens.assign(tokens.begin(), tokens.end());
    r.intervention = intervention;
    r.want.logits_top_n = options_.logits_top_n;
    auto resp = call(r);
    if (resp.shape != shape_) throw FormatError("bridge model descriptor changed between calls");
    for (const auto& e : resp.rows)
        if (e.row.size() != tokens.size()) throw FormatError("bridge attention row length does not match the input");
    return bridge::to_step_output(resp);
}

}  // namespace headlamp
