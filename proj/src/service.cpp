#include "steer/service.hpp"

#include "steer/errors.hpp"
#include "steer/eval.hpp"
#include "steer/hub.hpp"
#include "steer/text_util.hpp"

#include "httplib.h"
#include "json.hpp"

#include <boost/uuid/uuid_generators.hpp>
#include <boost/uuid/uuid_io.hpp>

#include <chrono>
#include <cmath>
#include <ctime>
#include <map>
#include <mutex>
#include <thread>

namespace steer::service {

using nlohmann::ordered_json;

std::string format_transcript(const std::vector<Turn>& turns, std::string_view next_user) {
    std::string out;
    for (const auto& t : turns) {
        if (t.role == "user") {
            out += "User: " + t.text + "\n";
        } else {
            out += "Assistant:" + t.text + "\n";
        }
    }
    return out + eval::user_turn(next_user);
}

namespace {

std::string iso_now() {
    const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&now, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

std::string dump(const ordered_json& j) { return j.dump(-1, ' ', false, ordered_json::error_handler_t::replace); }

void send_json(httplib::Response& res, int status, const ordered_json& body) {
    res.status = status;
    res.set_content(dump(body), "application/json");
}

void send_error(httplib::Response& res, int status, const std::string& message, ordered_json extra = {}) {
    ordered_json body{{"error", message}};
    if (extra.is_object()) body.update(extra);
    send_json(res, status, body);
}

ordered_json norms_of(const ControlVector& v, const std::vector<int>& layers) {
    ordered_json out = ordered_json::object();
    for (int l : layers) out[std::to_string(l)] = v.norm(l);
    return out;
}

struct Session {
    std::string id;
    std::string created_at;
    std::mutex mu;
    std::vector<Turn> transcript;
    std::shared_ptr<const SteeringPlan> plan = std::make_shared<SteeringPlan>();
    ordered_json plan_json = ordered_json::array();
    // Id of the generation in flight, 0 when idle.
    std::uint64_t active = 0;
    std::uint64_t last_generation = 0;

    void release(std::uint64_t generation) {
        if (active == generation) active = 0;
    }
};

// Rejected plan request: HTTP status plus body.
struct PlanRejection {
    int status;
    std::string message;
    ordered_json extra;
};

}  // namespace

struct Server::Impl {
    ModelHandle model;
    std::filesystem::path hub_path;
    Options options;
    httplib::Server http;
    std::thread thread;

    std::mutex sessions_mu;
    std::map<std::string, std::shared_ptr<Session>> sessions;
    boost::uuids::random_generator uuid_gen;

    Impl(ModelHandle m, std::filesystem::path hub, Options o)
        : model(std::move(m)), hub_path(std::move(hub)), options(std::move(o)) {
        routes();
    }

    std::shared_ptr<Session> find(const std::string& id) {
        std::lock_guard lock(sessions_mu);
        auto it = sessions.find(id);
        return it == sessions.end() ? nullptr : it->second;
    }

    void routes() {
        http.set_default_headers({
            {"Access-Control-Allow-Origin", options.cors_origin},
            {"Access-Control-Allow-Methods", "GET, POST, PUT, OPTIONS"},
            {"Access-Control-Allow-Headers", "Content-Type"},
        });
        http.Options(R"(/.*)", [](const httplib::Request&, httplib::Response& res) { res.status = 204; });
        http.set_exception_handler([](const httplib::Request&, httplib::Response& res, std::exception_ptr ep) {
            std::string what = "internal error";
            try {
                std::rethrow_exception(ep);
            } catch (const std::exception& e) {
                what = e.what();
            } catch (...) {
            }
            send_error(res, 500, what);
        });
        if (options.static_dir) http.set_mount_point("/", options.static_dir->string());

        http.Get("/health", [this](const httplib::Request&, httplib::Response& res) {
            send_json(res, 200,
                      {{"status", "ok"}, {"model_id", model ? ordered_json(model->id().hex()) : ordered_json(nullptr)}});
        });
        http.Post("/sessions", [this](const httplib::Request&, httplib::Response& res) { create_session(res); });
        http.Get("/sessions/:id", [this](const httplib::Request& req, httplib::Response& res) {
            get_session(req.path_params.at("id"), res);
        });
        http.Put("/sessions/:id/plan", [this](const httplib::Request& req, httplib::Response& res) {
            put_plan(req.path_params.at("id"), req.body, res);
        });
        http.Post("/sessions/:id/messages", [this](const httplib::Request& req, httplib::Response& res) {
            post_message(req.path_params.at("id"), req.body, res);
        });
        http.Get("/traits", [this](const httplib::Request&, httplib::Response& res) { list_traits(res); });
    }

    void create_session(httplib::Response& res) {
        if (!model) return send_error(res, 503, "no model loaded");
        auto s = std::make_shared<Session>();
        s->created_at = iso_now();
        {
            std::lock_guard lock(sessions_mu);
            s->id = boost::uuids::to_string(uuid_gen());
            sessions[s->id] = s;
        }
        send_json(res, 201, {{"session_id", s->id}, {"created_at", s->created_at}, {"model_id", model->id().hex()}});
    }

    void get_session(const std::string& id, httplib::Response& res) {
        auto s = find(id);
        if (!s) return send_error(res, 404, "unknown session '" + id + "'");
        std::lock_guard lock(s->mu);
        ordered_json transcript = ordered_json::array();
        for (const auto& t : s->transcript) transcript.push_back({{"role", t.role}, {"text", t.text}});
        send_json(res, 200,
                  {{"session_id", s->id},
                   {"created_at", s->created_at},
                   {"transcript", transcript},
                   {"plan", s->plan_json},
                   {"busy", s->active != 0}});
    }

    // Resolves [{trait, layers?, gamma}] against the hub. Throws PlanRejection.
    std::pair<SteeringPlan, ordered_json> resolve_plan(const nlohmann::json& body) {
        if (!body.is_array()) throw PlanRejection{400, "plan must be a JSON array", {}};
        Hub hub(hub_path);
        SteeringPlan plan;
        ordered_json echo = ordered_json::array();
        for (const auto& e : body) {
            if (!e.is_object() || !e.contains("trait") || !e["trait"].is_string() || !e.contains("gamma") ||
                !e["gamma"].is_number()) {
                throw PlanRejection{400, "each plan entry needs a string trait and a numeric gamma", {}};
            }
            const auto trait = e["trait"].get<std::string>();
            const double gamma = e["gamma"].get<double>();
            if (!std::isfinite(gamma)) throw PlanRejection{422, "gamma must be finite", {{"trait", trait}}};
            std::shared_ptr<const ControlVector> v;
            try {
                v = std::make_shared<const ControlVector>(hub.load(trait, model->id()));
            } catch (const NotFoundError&) {
                throw PlanRejection{422, "unknown trait '" + trait + "' for this model", {{"trait", trait}}};
            }
            std::vector<int> layers = v->layers();
            if (e.contains("layers") && !e["layers"].is_null()) {
                if (!e["layers"].is_array()) throw PlanRejection{400, "layers must be an array of integers", {}};
                try {
                    layers = e["layers"].get<std::vector<int>>();
                } catch (const nlohmann::json::exception&) {
                    throw PlanRejection{400, "layers must be an array of integers", {}};
                }
            }
            PlanEntry entry{v, layers, gamma};
            try {
                SteeringPlan{{entry}}.validate(*model);
            } catch (const Error& err) {
                throw PlanRejection{422, err.what(), {{"trait", trait}}};
            }
            plan.entries.push_back(entry);
            echo.push_back({{"trait", trait}, {"layers", layers}, {"gamma", gamma}, {"norms", norms_of(*v, layers)}});
        }
        return {std::move(plan), std::move(echo)};
    }

    void put_plan(const std::string& id, const std::string& body, httplib::Response& res) {
        auto s = find(id);
        if (!s) return send_error(res, 404, "unknown session '" + id + "'");
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(body);
        } catch (const nlohmann::json::exception& e) {
            return send_error(res, 400, std::string("invalid JSON: ") + e.what());
        }
        try {
            auto [plan, echo] = resolve_plan(j);
            std::lock_guard lock(s->mu);
            s->plan = std::make_shared<const SteeringPlan>(std::move(plan));
            s->plan_json = echo;
            send_json(res, 200, {{"session_id", s->id}, {"plan", echo}});
        } catch (const PlanRejection& r) {
            send_error(res, r.status, r.message, r.extra);
        }
    }

    void post_message(const std::string& id, const std::string& body, httplib::Response& res) {
        auto s = find(id);
        if (!s) return send_error(res, 404, "unknown session '" + id + "'");
        std::string text;
        int max_new = options.default_max_new;
        try {
            auto j = nlohmann::json::parse(body);
            text = j.at("text").get<std::string>();
            if (j.contains("max_new")) max_new = j.at("max_new").get<int>();
        } catch (const nlohmann::json::exception&) {
            return send_error(res, 400, "body must be {\"text\": string, \"max_new\"?: integer}");
        }
        if (max_new < 0 || max_new > options.max_new_limit) {
            return send_error(res, 400, "max_new must be in [0, " + std::to_string(options.max_new_limit) + "]");
        }

        std::shared_ptr<const SteeringPlan> plan;
        std::string prompt;
        std::uint64_t generation = 0;
        {
            std::lock_guard lock(s->mu);
            if (s->active != 0) return send_error(res, 409, "a generation is already in progress for this session");
            generation = s->active = ++s->last_generation;
            plan = s->plan;  // later PUTs do not affect this generation
            prompt = format_transcript(s->transcript, text);
        }

        res.set_header("Cache-Control", "no-cache");
        res.set_chunked_content_provider(
            "text/event-stream",
            [this, s, plan, prompt, text, max_new, generation](std::size_t, httplib::DataSink& sink) {
                stream_generation(*s, generation, *plan, prompt, text, max_new, sink);
                return true;
            },
            // Covers dropped connections; a finished stream has already released itself.
            [s, generation](bool) {
                std::lock_guard lock(s->mu);
                s->release(generation);
            });
    }

    // The session is released before the final event is written, so a client
    // may send its next message as soon as it sees `done`.
    void stream_generation(Session& s, std::uint64_t generation, const SteeringPlan& plan, const std::string& prompt,
                           const std::string& user, int max_new, httplib::DataSink& sink) {
        auto event = [&sink](const ordered_json& j) {
            const std::string line = "data: " + dump(j) + "\n\n";
            return sink.write(line.data(), line.size());
        };
        const auto& tok = model->tokenizer();
        detail::Utf8Accumulator utf8;
        std::string raw;
        bool connected = true;
        try {
            auto hooks = make_hooks(*model, plan);
            auto ids = tok.encode(prompt);
            DecodeOptions opts;
            opts.on_token = [&](TokenId t, std::size_t i) {
                const std::string bytes = tok.token_text(t);
                raw += bytes;
                connected = event({{"t", utf8.push(bytes)}, {"i", i}, {"id", t}});
                if (connected && options.stream_delay_ms > 0) {
                    std::this_thread::sleep_for(std::chrono::milliseconds(options.stream_delay_ms));
                }
                return connected;
            };
            greedy_decode(model, ids, max_new, hooks, opts);
        } catch (const std::exception& e) {
            {
                std::lock_guard lock(s.mu);
                s.release(generation);
            }
            event({{"error", e.what()}, {"done", true}});
            sink.done();
            return;
        }
        if (!connected) return;  // client went away; transcript stays unchanged
        auto tail = utf8.finish();
        if (!tail.empty()) event({{"t", tail}, {"i", nullptr}, {"id", nullptr}});
        {
            std::lock_guard lock(s.mu);
            s.transcript.push_back({"user", user});
            s.transcript.push_back({"assistant", raw});
            s.release(generation);
        }
        event({{"done", true}});
        sink.done();
    }

    void list_traits(httplib::Response& res) {
        ordered_json out = ordered_json::array();
        if (model) {
            Hub hub(hub_path);
            for (const auto& e : hub.list_for(model->id())) {
                auto v = hub.load(e.trait, e.model_id);
                out.push_back({{"trait", e.trait},
                               {"layers", e.layers},
                               {"norms", norms_of(v, e.layers)},
                               {"pair_count", e.meta.pair_count},
                               {"hidden_dim", e.hidden_dim}});
            }
        }
        send_json(res, 200, out);
    }
};

Server::Server(ModelHandle model, std::filesystem::path hub_path, Options options)
    : impl_(std::make_unique<Impl>(std::move(model), std::move(hub_path), std::move(options))) {}

Server::~Server() { stop(); }

int Server::bind(const std::string& host, int port) {
    if (port == 0) {
        const int p = impl_->http.bind_to_any_port(host);
        if (p < 0) throw Error("cannot bind " + host);
        return p;
    }
    if (!impl_->http.bind_to_port(host, port)) throw Error("cannot bind " + host + ":" + std::to_string(port));
    return port;
}

void Server::listen() { impl_->http.listen_after_bind(); }

int Server::start(const std::string& host, int port) {
    const int bound = bind(host, port);
    impl_->thread = std::thread([this] { listen(); });
    impl_->http.wait_until_ready();
    return bound;
}

void Server::stop() {
    if (!impl_) return;
    impl_->http.stop();
    if (impl_->thread.joinable()) impl_->thread.join();
}

}  // namespace steer::service
