#pragma once

// HTTP service for interactive steered chat.
//
//   POST /sessions                  -> 201 {session_id, created_at, model_id}
//   GET  /sessions/{id}             -> {session_id, created_at, transcript, plan, busy}
//   PUT  /sessions/{id}/plan        body [{trait, layers?, gamma}] -> {session_id, plan}
//   POST /sessions/{id}/messages    body {text, max_new?} -> text/event-stream
//   GET  /traits                    -> [{trait, layers, norms, pair_count, hidden_dim}]
//   GET  /health                    -> {status, model_id}
//
// The message stream sends one `data: {"t", "i", "id"}` event per generated
// token and ends with `data: {"done": true, ...}`. `t` is the text completed
// by that token (possibly empty while a multi-byte character is pending) and
// `id` the raw token id. Errors are JSON {error, ...} with a 4xx/5xx status.

#include "steer/model.hpp"
#include "steer/steering.hpp"

#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace steer::service {

struct Turn {
    std::string role;  // "user" or "assistant"
    std::string text;
};

/// Prior turns as "User: {u}\nAssistant:{a}\n" followed by "User: {next}\nAssistant:".
std::string format_transcript(const std::vector<Turn>& turns, std::string_view next_user);

struct Options {
    std::string cors_origin = "*";
    std::optional<std::filesystem::path> static_dir;
    // Pause after each streamed token; only useful for exercising concurrency.
    int stream_delay_ms = 0;
    int default_max_new = 64;
    int max_new_limit = 4096;
};

class Server {
public:
    /// `model` may be null; session creation then answers 503.
    Server(ModelHandle model, std::filesystem::path hub_path, Options options = {});
    ~Server();
    Server(const Server&) = delete;
    Server& operator=(const Server&) = delete;

    /// Binds to host:port (port 0 picks a free port) and returns the port.
    int bind(const std::string& host, int port);
    /// Serves until stop(); call after bind().
    void listen();
    /// bind() + listen() on a background thread; returns the port once ready.
    int start(const std::string& host = "127.0.0.1", int port = 0);
    void stop();

private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
};

}  // namespace steer::service
