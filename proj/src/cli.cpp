#include "steer/cli.hpp"

#include "steer/aca.hpp"
#include "steer/errors.hpp"
#include "steer/eval.hpp"
#include "steer/hub.hpp"
#include "steer/model.hpp"
#include "steer/service.hpp"
#include "steer/steering.hpp"
#include "steer/synth.hpp"
#include "steer/text_util.hpp"

#include "CLI11.hpp"
#include "json.hpp"

#include <pthread.h>
#include <signal.h>

#include <chrono>
#include <ctime>
#include <filesystem>
#include <functional>
#include <iostream>
#include <thread>

namespace steer {

std::string tool_version() { return STEER_VERSION; }

namespace {

namespace fs = std::filesystem;
using nlohmann::ordered_json;

// Bad flags, missing input files and unparseable inputs: exit code 2.
class UsageError : public Error {
public:
    using Error::Error;
};

std::string dump(const ordered_json& j, int indent = 2) {
    return j.dump(indent, ' ', false, ordered_json::error_handler_t::replace);
}

void require_file(const std::string& path, const std::string& what) {
    if (path.empty()) throw UsageError(what + " path is required");
    if (!fs::exists(path)) throw UsageError(what + " not found: " + path);
}

// Runs `parse` on an input file, reporting malformed contents as usage errors.
template <class F>
auto parse_input(const std::string& path, const std::string& what, F&& parse) -> decltype(parse()) {
    require_file(path, what);
    try {
        return parse();
    } catch (const FormatError& e) {
        throw UsageError(what + " " + path + ": " + e.what());
    } catch (const PreconditionError& e) {
        throw UsageError(what + " " + path + ": " + e.what());
    }
}

std::string iso_now() {
    const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&now, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

std::int64_t unix_now() {
    return std::chrono::duration_cast<std::chrono::seconds>(std::chrono::system_clock::now().time_since_epoch())
        .count();
}

struct ModelArgs {
    std::string config;
    std::string weights;
    std::string vocab;

    void add(CLI::App* app, bool required = true) {
        auto* m = app->add_option("--model", config, "Model config file (key=value)");
        auto* w = app->add_option("--weights", weights, "Model weights file");
        if (required) {
            m->required();
            w->required();
        }
        app->add_option("--vocab", vocab, "Vocabulary file (default: byte-level)");
    }

    bool given() const { return !config.empty() || !weights.empty(); }

    void check() const {
        require_file(config, "model config");
        require_file(weights, "weights file");
        if (!vocab.empty()) require_file(vocab, "vocab file");
    }

    ModelHandle load() const {
        check();
        return load_model(config, weights, vocab.empty() ? std::nullopt : std::optional<fs::path>(vocab));
    }
};

// Repeatable --trait/--gamma/--layers triples, zipped by position.
struct PlanArgs {
    std::vector<std::string> traits;
    std::vector<double> gammas;
    std::vector<std::string> layers;
    bool with_gamma = true;

    void add(CLI::App* app, bool gamma = true) {
        with_gamma = gamma;
        app->add_option("--trait", traits, "Trait to steer with (repeatable)")->allow_extra_args(false);
        if (gamma) app->add_option("--gamma", gammas, "Steering strength for the matching --trait")->allow_extra_args(false);
        app->add_option("--layers", layers, "Layers for the matching --trait, e.g. 2,3 or 1-4 (default: all stored)")
            ->allow_extra_args(false);
    }

    void check() const {
        if (with_gamma && gammas.size() != traits.size()) {
            throw UsageError("--trait and --gamma must be given the same number of times");
        }
        if (!layers.empty() && layers.size() != traits.size()) {
            throw UsageError("--layers must be given once per --trait or not at all");
        }
        for (const auto& l : layers) {
            try {
                detail::parse_int_list(l);
            } catch (const Error& e) {
                throw UsageError(std::string("--layers: ") + e.what());
            }
        }
    }

    SteeringPlan build(const ModelHandle& model, const std::string& hub_path) const {
        if (traits.empty()) return {};
        require_file(hub_path, "hub");
        Hub hub(hub_path);
        std::vector<SteeringPlan> plans;
        for (std::size_t i = 0; i < traits.size(); ++i) {
            std::shared_ptr<const ControlVector> v;
            try {
                v = std::make_shared<const ControlVector>(hub.load(traits[i], model->id()));
            } catch (const NotFoundError&) {
                throw NotFoundError("unknown trait '" + traits[i] + "' for model " + model->id().hex());
            }
            PlanEntry e{v, layers.empty() ? v->layers() : detail::parse_int_list(layers[i]),
                        with_gamma ? gammas[i] : 1.0};
            plans.push_back(SteeringPlan{{e}});
        }
        auto plan = compose(plans);
        plan.validate(*model);
        return plan;
    }
};

ordered_json meta_block(const ModelHandle& model, const SteeringPlan& plan) {
    return {{"tool_version", tool_version()},
            {"model_id", model ? ordered_json(model->id().hex()) : ordered_json(nullptr)},
            {"plan", eval::describe_plan(plan)},
            {"created_at", iso_now()}};
}

// Inputs shared by `eval` and `sweep`.
struct TaskArgs {
    std::string task;
    std::string corpus;
    std::string mpi_template;
    int max_new = 32;
    int threads = 1;

    void add(CLI::App* app, const std::vector<std::string>& tasks) {
        app->add_option("--task", task, "Task")->required()->check(CLI::IsMember(tasks));
        app->add_option("--corpus", corpus, "Task input: MPI CSV, LM text JSONL or QA JSONL");
        app->add_option("--template", mpi_template, "MPI prompt template (default: shipped template)");
        app->add_option("--max-new", max_new, "Tokens generated per answer")->check(CLI::NonNegativeNumber);
        app->add_option("--threads", threads, "Items evaluated in parallel")->check(CLI::PositiveNumber);
    }
};

// A loaded task ready to run under any plan.
using TaskRunner = std::function<eval::EvalReport(const SteeringPlan&)>;

TaskRunner prepare_task(const TaskArgs& args, const ModelHandle& model) {
    eval::EvalOptions opts;
    opts.max_new_tokens = args.max_new;
    opts.threads = args.threads;
    if (args.task == "mpi") {
        auto items = parse_input(args.corpus, "MPI item file", [&] { return eval::read_mpi_items(args.corpus); });
        std::string tmpl = eval::default_mpi_template();
        if (!args.mpi_template.empty()) {
            require_file(args.mpi_template, "MPI template");
            tmpl = detail::read_text_file(args.mpi_template);
            while (!tmpl.empty() && (tmpl.back() == '\n' || tmpl.back() == '\r')) tmpl.pop_back();
        }
        return [=](const SteeringPlan& plan) {
            auto run = eval::run_mpi(model, items, tmpl, plan, opts);
            return eval::mpi_report(run, items, plan);
        };
    }
    if (args.task == "lm") {
        auto texts = parse_input(args.corpus, "LM corpus", [&] { return eval::read_text_corpus(args.corpus); });
        std::vector<TokenSequence> corpus;
        for (const auto& t : texts) corpus.push_back(model->tokenizer().encode(t));
        return [=](const SteeringPlan& plan) {
            return eval::lm_report(eval::eval_language_modeling(model, corpus, plan, opts), plan);
        };
    }
    auto items = parse_input(args.corpus, "QA corpus", [&] { return eval::read_qa_items(args.corpus); });
    if (args.task == "reason") {
        return [=](const SteeringPlan& plan) { return eval::run_reasoning(model, items, plan, opts); };
    }
    return [=](const SteeringPlan& plan) { return eval::run_sycophancy(model, items, plan, opts); };
}

// ---------------------------------------------------------------------------

struct Context {
    std::ostream& out;
    std::ostream& err;
};

void cmd_model_init(Context& ctx, const std::string& config_out, const std::string& weights_out, ModelConfig cfg,
                    std::uint64_t seed, float scale) {
    cfg.validate();
    auto model = random_model(cfg, seed, scale);
    save_model(*model, config_out, weights_out);
    ctx.out << "model_id: " << model->id().hex() << "\n";
}

void cmd_model_info(Context& ctx, const ModelArgs& margs, bool json) {
    auto model = margs.load();
    const auto& c = model->config();
    if (json) {
        ctx.out << dump({{"model_id", model->id().hex()},
                         {"n_layers", c.n_layers},
                         {"hidden_dim", c.hidden_dim},
                         {"n_heads", c.n_heads},
                         {"vocab_size", c.vocab_size},
                         {"max_seq_len", c.max_seq_len},
                         {"positional_scheme", std::string(to_string(c.positional_scheme))},
                         {"default_layer", default_injection_layer(c)}})
                << "\n";
        return;
    }
    ctx.out << c.serialize() << "model_id=" << model->id().hex() << "\n";
}

struct ExtractArgs {
    ModelArgs model;
    std::string hub, pairs, trait, layers, read_position = "last_token";
    bool replace = false, json = false;
};

void cmd_extract(Context& ctx, const ExtractArgs& a) {
    std::vector<int> layers;
    if (!a.layers.empty()) {
        try {
            layers = detail::parse_int_list(a.layers);
        } catch (const Error& e) {
            throw UsageError(std::string("--layers: ") + e.what());
        }
    }
    ReadPosition rp;
    try {
        rp = parse_read_position(a.read_position);
    } catch (const Error& e) {
        throw UsageError(e.what());
    }
    auto set = parse_input(a.pairs, "pairs file", [&] { return read_pairs_jsonl(a.pairs); });
    if (set.pairs.empty()) throw UsageError("pairs file " + a.pairs + " has no pairs");
    if (!a.trait.empty()) {
        set.trait = a.trait;
        for (auto& p : set.pairs) p.trait = a.trait;
    }
    a.model.check();
    auto model = a.model.load();
    if (layers.empty()) layers.push_back(default_injection_layer(model->config()));

    ControlVector v;
    try {
        v = extract_control_vector(model, set, layers, rp, unix_now());
    } catch (const Error& e) {
        throw StageError("extract", e.what(), std::current_exception());
    }
    std::uint32_t id = 0;
    try {
        id = Hub(a.hub).save(v, a.replace);
    } catch (const Error& e) {
        throw StageError("save", e.what(), std::current_exception());
    }
    if (a.json) {
        ordered_json norms = ordered_json::object();
        for (int l : v.layers()) norms[std::to_string(l)] = v.norm(l);
        ctx.out << dump({{"entry_id", id},
                         {"trait", v.trait},
                         {"pair_count", v.meta.pair_count},
                         {"layers", v.layers()},
                         {"norms", norms},
                         {"meta", meta_block(model, {})}})
                << "\n";
        return;
    }
    ctx.out << "trait: " << v.trait << "\n"
            << "pairs: " << v.meta.pair_count << "\n"
            << "entry: " << id << "\n";
    for (int l : v.layers()) ctx.out << "layer " << l << " norm " << detail::format_double(v.norm(l)) << "\n";
}

void cmd_hub_list(Context& ctx, const std::string& hub_path, const ModelArgs& margs, bool json) {
    Hub hub(hub_path);
    auto entries = hub.list();
    std::optional<ModelId> filter;
    if (margs.given()) filter = margs.load()->id();
    ordered_json arr = ordered_json::array();
    if (!json) ctx.out << "id\ttrait\tmodel_id\thidden_dim\tlayers\tpairs\ttimestamp\n";
    for (std::size_t i = 0; i < entries.size(); ++i) {
        const auto& e = entries[i];
        if (filter && e.model_id != *filter) continue;
        if (json) {
            arr.push_back({{"id", i},
                           {"trait", e.trait},
                           {"model_id", e.model_id.hex()},
                           {"hidden_dim", e.hidden_dim},
                           {"layers", e.layers},
                           {"pair_count", e.meta.pair_count},
                           {"read_position", std::string(to_string(e.meta.read_position))},
                           {"timestamp", e.meta.timestamp},
                           {"checksum", e.checksum}});
            continue;
        }
        std::string layers;
        for (std::size_t k = 0; k < e.layers.size(); ++k) layers += (k ? "," : "") + std::to_string(e.layers[k]);
        ctx.out << i << "\t" << e.trait << "\t" << e.model_id.hex() << "\t" << e.hidden_dim << "\t" << layers << "\t"
                << e.meta.pair_count << "\t" << e.meta.timestamp << "\n";
    }
    if (json) ctx.out << dump(arr) << "\n";
}

void cmd_hub_export(Context& ctx, const std::string& hub_path, const std::string& out_path) {
    require_file(hub_path, "hub");
    auto text = dump(Hub(hub_path).export_json()) + "\n";
    if (out_path.empty()) {
        ctx.out << text;
    } else {
        detail::write_text_file(out_path, text);
    }
}

struct GenerateArgs {
    ModelArgs model;
    PlanArgs plan;
    std::string hub, prompt;
    int max_new = 32;
    bool chat = false, json = false;
};

void cmd_generate(Context& ctx, const GenerateArgs& a) {
    a.plan.check();
    a.model.check();
    auto model = a.model.load();
    auto plan = a.plan.build(model, a.hub);
    const std::string prompt = a.chat ? eval::user_turn(a.prompt) : a.prompt;
    const auto& tok = model->tokenizer();
    auto ids = tok.encode(prompt);
    auto out = greedy_decode(model, ids, a.max_new, make_hooks(*model, plan));
    std::span<const TokenId> cont = std::span<const TokenId>(out).subspan(ids.size());
    const std::string text = tok.decode(cont);
    if (a.json) {
        ctx.out << dump({{"prompt", a.prompt},
                         {"continuation", detail::sanitize_utf8(text)},
                         {"tokens", std::vector<TokenId>(cont.begin(), cont.end())},
                         {"plan", eval::describe_plan(plan)},
                         {"meta", meta_block(model, plan)}})
                << "\n";
        return;
    }
    ctx.out << text << "\n";
}

struct EvalArgs {
    ModelArgs model;
    PlanArgs plan;
    TaskArgs task;
    std::string hub, out_dir;
};

void cmd_eval(Context& ctx, const EvalArgs& a) {
    a.plan.check();
    require_file(a.task.corpus, "corpus");
    a.model.check();
    auto model = a.model.load();
    auto plan = a.plan.build(model, a.hub);
    auto run = prepare_task(a.task, model);
    auto report = run(plan);

    fs::create_directories(a.out_dir);
    ordered_json j{{"meta", meta_block(model, plan)}};
    const auto body = report.to_json();
    for (const auto& [k, v] : body.items()) j[k] = v;
    const fs::path dir(a.out_dir);
    detail::write_text_file(dir / (a.task.task + "_report.json"), dump(j) + "\n");
    detail::write_text_file(dir / (a.task.task + "_metrics.csv"), report.metrics_csv());
    detail::write_text_file(dir / (a.task.task + "_items.csv"), report.items_csv());
    for (const auto& [name, value] : report.metrics) ctx.out << name << ": " << detail::format_double(value) << "\n";
}

struct SweepArgs {
    ModelArgs model;
    PlanArgs plan;
    TaskArgs task;
    std::string hub, gammas, metric, prompt, out;
    int token = -1;
    bool chat = false;
};

int cmd_sweep(Context& ctx, const SweepArgs& a) {
    std::vector<double> gammas;
    try {
        gammas = detail::parse_double_list(a.gammas);
    } catch (const Error& e) {
        throw UsageError(std::string("--gamma-values: ") + e.what());
    }
    if (gammas.empty()) throw UsageError("--gamma-values is empty");
    if (a.plan.traits.empty()) throw UsageError("sweep needs at least one --trait");
    a.plan.check();
    if (a.task.task == "logit") {
        if (a.token < 0) throw UsageError("--task logit needs --token");
        if (a.prompt.empty()) throw UsageError("--task logit needs --prompt");
    } else {
        require_file(a.task.corpus, "corpus");
    }
    a.model.check();
    auto model = a.model.load();
    auto tmpl = a.plan.build(model, a.hub);

    std::function<double(const SteeringPlan&)> metric;
    if (a.task.task == "logit") {
        if (a.token >= model->config().vocab_size) throw UsageError("--token is outside the vocabulary");
        auto ids = model->tokenizer().encode(a.chat ? eval::user_turn(a.prompt) : a.prompt);
        metric = [=](const SteeringPlan& p) {
            auto rec = forward(model, ids, make_hooks(*model, p));
            return static_cast<double>(rec.row(rec.seq_len - 1)[static_cast<std::size_t>(a.token)]);
        };
    } else {
        auto run = prepare_task(a.task, model);
        static const std::map<std::string, std::string> defaults{
            {"mpi", "score_O"}, {"lm", "perplexity"}, {"reason", "accuracy"}, {"sycophancy", "flip_rate"}};
        const std::string name = a.metric.empty() ? defaults.at(a.task.task) : a.metric;
        metric = [=](const SteeringPlan& p) {
            auto report = run(p);
            auto v = report.metric(name);
            if (!v) throw Error("metric '" + name + "' is not reported by task " + a.task.task);
            return *v;
        };
    }
    auto rows = gamma_sweep(model, tmpl, gammas, metric);
    const auto csv = sweep_to_csv(rows);
    if (a.out.empty()) {
        ctx.out << csv;
    } else {
        detail::write_text_file(a.out, csv);
    }
    for (const auto& r : rows) {
        if (!r.ok) ctx.err << "gamma " << detail::format_double(r.gamma) << " failed: " << r.error << "\n";
    }
    const bool any_ok = std::any_of(rows.begin(), rows.end(), [](const SweepRow& r) { return r.ok; });
    return any_ok ? kExitOk : kExitRuntime;
}

struct AcaArgs {
    ModelArgs model;
    std::string trait, backend, hub, layers, pairs_out, api_model = "default", templates;
    int count = 8, concurrency = 4, max_tokens = 256;
    double temperature = 0.7;
    bool completion = false, replace = false;
};

void cmd_aca(Context& ctx, const AcaArgs& a) {
    std::vector<int> layers;
    if (!a.layers.empty()) {
        try {
            layers = detail::parse_int_list(a.layers);
        } catch (const Error& e) {
            throw UsageError(std::string("--layers: ") + e.what());
        }
    }
    std::unique_ptr<aca::LlmBackend> backend;
    aca::Options opts;
    a.model.check();
    auto model = a.model.load();
    if (a.backend.rfind("fixture:", 0) == 0) {
        const auto path = a.backend.substr(8);
        backend = parse_input(path, "fixture", [&] { return aca::FixtureBackend::from_file(path); });
    } else if (a.backend == "local") {
        backend = std::make_unique<aca::ModelBackend>(model);
        opts.temperature = 0.0;
    } else if (a.backend.rfind("http://", 0) == 0 || a.backend.rfind("https://", 0) == 0) {
        backend = std::make_unique<aca::HttpChatBackend>(
            a.backend, a.api_model, aca::HttpChatBackend::api_key_from_env(),
            a.completion ? aca::HttpChatBackend::Mode::completion : aca::HttpChatBackend::Mode::chat);
        opts.temperature = a.temperature;
    } else {
        throw UsageError("--backend must be fixture:PATH, local, or an http(s) URL");
    }
    if (!a.templates.empty()) {
        require_file(a.templates, "template directory");
        opts.templates = aca::Templates::load(a.templates);
    }
    opts.concurrency = a.concurrency;
    opts.max_tokens = a.max_tokens;
    if (layers.empty()) layers.push_back(default_injection_layer(model->config()));

    auto result = aca::build_and_save(a.trait, *backend, model, layers, a.hub, a.count, opts, unix_now(), a.replace);
    if (!a.pairs_out.empty()) write_pairs_jsonl(result.pairs, a.pairs_out);
    ctx.out << "trait: " << a.trait << "\n"
            << "pairs: " << result.pairs.pairs.size() << "\n"
            << "entry: " << result.entry_id << "\n";
    for (int l : result.vector.layers()) {
        ctx.out << "layer " << l << " norm " << detail::format_double(result.vector.norm(l)) << "\n";
    }
}

struct ServeArgs {
    ModelArgs model;
    std::string hub, host = "127.0.0.1", static_dir;
    int port = 8080;
    service::Options options;
};

void cmd_serve(Context& ctx, const ServeArgs& a) {
    ModelHandle model;
    if (a.model.given()) model = a.model.load();
    if (!a.static_dir.empty()) require_file(a.static_dir, "static directory");
    auto opts = a.options;
    if (!a.static_dir.empty()) opts.static_dir = a.static_dir;

    // Route SIGINT/SIGTERM to a waiter thread that stops the server.
    sigset_t set;
    sigemptyset(&set);
    sigaddset(&set, SIGINT);
    sigaddset(&set, SIGTERM);
    pthread_sigmask(SIG_BLOCK, &set, nullptr);

    service::Server server(model, a.hub, opts);
    const int port = server.bind(a.host, a.port);
    ctx.out << "listening on http://" << a.host << ":" << port << std::endl;
    std::thread waiter([&] {
        int sig = 0;
        sigwait(&set, &sig);
        server.stop();
    });
    server.listen();
    pthread_kill(waiter.native_handle(), SIGTERM);  // no-op if it already stopped the server
    waiter.join();
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Activation steering toolkit: extract, store and apply control vectors"};
    app.name("steer");
    app.set_version_flag("--version", tool_version());
    app.require_subcommand(1);
    Context ctx{out, err};
    std::function<int()> action;

    // model
    auto* model_cmd = app.add_subcommand("model", "Create or inspect a model")->require_subcommand(1);
    std::string init_config, init_weights;
    ModelConfig init_cfg;
    init_cfg.max_seq_len = 512;  // the inventory prompt alone is ~280 byte tokens
    std::uint64_t init_seed = 1;
    float init_scale = 1.0f;
    std::string init_scheme = "rotary";
    auto* init = model_cmd->add_subcommand("init", "Write a randomly initialised model");
    init->add_option("--config", init_config, "Output config path")->required();
    init->add_option("--weights", init_weights, "Output weights path")->required();
    init->add_option("--layers", init_cfg.n_layers, "Number of layers")->capture_default_str();
    init->add_option("--hidden", init_cfg.hidden_dim, "Hidden size")->capture_default_str();
    init->add_option("--heads", init_cfg.n_heads, "Attention heads")->capture_default_str();
    init->add_option("--vocab-size", init_cfg.vocab_size, "Vocabulary size")->capture_default_str();
    init->add_option("--max-seq-len", init_cfg.max_seq_len, "Context length")->capture_default_str();
    init->add_option("--positional", init_scheme, "rotary or learned-absolute")->capture_default_str();
    init->add_option("--seed", init_seed, "Random seed")->capture_default_str();
    init->add_option("--scale", init_scale, "Initialisation scale")->capture_default_str();
    init->callback([&] {
        action = [&] {
            try {
                init_cfg.positional_scheme = parse_positional_scheme(init_scheme);
                init_cfg.validate();
            } catch (const ConfigError& e) {
                throw UsageError(e.what());
            }
            cmd_model_init(ctx, init_config, init_weights, init_cfg, init_seed, init_scale);
            return kExitOk;
        };
    });
    ModelArgs info_model;
    bool info_json = false;
    auto* info = model_cmd->add_subcommand("info", "Print a model's config and id");
    info_model.add(info);
    info->add_flag("--json", info_json, "JSON output");
    info->callback([&] {
        action = [&] {
            cmd_model_info(ctx, info_model, info_json);
            return kExitOk;
        };
    });

    // extract
    ExtractArgs ex;
    auto* extract = app.add_subcommand("extract", "Extract a control vector from prompt pairs into the hub");
    ex.model.add(extract);
    extract->add_option("--hub", ex.hub, "Hub file")->required();
    extract->add_option("--pairs", ex.pairs, "Prompt pairs (JSON Lines)")->required();
    extract->add_option("--trait", ex.trait, "Override the trait name from the pairs file");
    extract->add_option("--layers", ex.layers, "Layers to extract (default: floor(2n/3))");
    extract->add_option("--read-position", ex.read_position, "last_token or mean_over_tokens")->capture_default_str();
    extract->add_flag("--replace", ex.replace, "Overwrite an existing entry");
    extract->add_flag("--json", ex.json, "JSON output");
    extract->callback([&] {
        action = [&] {
            cmd_extract(ctx, ex);
            return kExitOk;
        };
    });

    // hub
    auto* hub_cmd = app.add_subcommand("hub", "Inspect a hub file")->require_subcommand(1);
    std::string list_hub, export_hub, export_out;
    ModelArgs list_model;
    bool list_json = false;
    auto* list = hub_cmd->add_subcommand("list", "List entries");
    list->add_option("--hub", list_hub, "Hub file")->required();
    list_model.add(list, false);
    list->add_flag("--json", list_json, "JSON output");
    list->callback([&] {
        action = [&] {
            cmd_hub_list(ctx, list_hub, list_model, list_json);
            return kExitOk;
        };
    });
    auto* exp = hub_cmd->add_subcommand("export", "Dump entries and vectors as JSON");
    exp->add_option("--hub", export_hub, "Hub file")->required();
    exp->add_option("--out", export_out, "Output file (default: stdout)");
    exp->callback([&] {
        action = [&] {
            cmd_hub_export(ctx, export_hub, export_out);
            return kExitOk;
        };
    });

    // generate
    GenerateArgs gen;
    auto* generate = app.add_subcommand("generate", "Greedy generation with optional steering");
    gen.model.add(generate);
    gen.plan.add(generate);
    generate->add_option("--hub", gen.hub, "Hub file (needed with --trait)");
    generate->add_option("--prompt", gen.prompt, "Prompt text")->required();
    generate->add_option("--max-new", gen.max_new, "Maximum new tokens")->check(CLI::NonNegativeNumber);
    generate->add_flag("--chat", gen.chat, "Wrap the prompt as a chat turn, as the service does");
    generate->add_flag("--json", gen.json, "JSON output");
    generate->callback([&] {
        action = [&] {
            cmd_generate(ctx, gen);
            return kExitOk;
        };
    });

    // eval
    EvalArgs ev;
    auto* eval_cmd = app.add_subcommand("eval", "Run an evaluation task and write JSON/CSV reports");
    ev.model.add(eval_cmd);
    ev.plan.add(eval_cmd);
    ev.task.add(eval_cmd, {"mpi", "lm", "reason", "sycophancy"});
    eval_cmd->add_option("--hub", ev.hub, "Hub file (needed with --trait)");
    eval_cmd->add_option("--out", ev.out_dir, "Output directory")->required();
    eval_cmd->callback([&] {
        action = [&] {
            cmd_eval(ctx, ev);
            return kExitOk;
        };
    });

    // sweep
    SweepArgs sw;
    auto* sweep = app.add_subcommand("sweep", "Evaluate a metric over a list of gamma values");
    sw.model.add(sweep);
    sw.plan.add(sweep, false);
    sw.task.add(sweep, {"logit", "mpi", "lm", "reason", "sycophancy"});
    sweep->add_option("--hub", sw.hub, "Hub file")->required();
    sweep->add_option("--gamma-values", sw.gammas, "Comma-separated gamma values")->required();
    sweep->add_option("--metric", sw.metric, "Report metric to record (default depends on the task)");
    sweep->add_option("--prompt", sw.prompt, "Prompt for --task logit");
    sweep->add_option("--token", sw.token, "Token id whose final-position logit is recorded (--task logit)");
    sweep->add_flag("--chat", sw.chat, "Wrap the --prompt as a chat turn");
    sweep->add_option("--out", sw.out, "CSV output file (default: stdout)");
    sweep->callback([&] { action = [&] { return cmd_sweep(ctx, sw); }; });

    // aca
    AcaArgs ac;
    auto* aca_cmd = app.add_subcommand("aca", "Generate prompt pairs for a trait with an LLM and extract a vector");
    ac.model.add(aca_cmd);
    aca_cmd->add_option("--trait", ac.trait, "Trait name")->required();
    aca_cmd->add_option("--backend", ac.backend, "fixture:PATH, local, or an http(s) chat endpoint URL")->required();
    aca_cmd->add_option("--hub", ac.hub, "Hub file")->required();
    aca_cmd->add_option("--layers", ac.layers, "Layers to extract (default: floor(2n/3))");
    aca_cmd->add_option("--count", ac.count, "Number of pairs")->check(CLI::PositiveNumber);
    aca_cmd->add_option("--pairs-out", ac.pairs_out, "Also write the generated pairs (JSON Lines)");
    aca_cmd->add_option("--concurrency", ac.concurrency, "Concurrent backend requests")->check(CLI::PositiveNumber);
    aca_cmd->add_option("--temperature", ac.temperature, "Sampling temperature for remote backends");
    aca_cmd->add_option("--max-tokens", ac.max_tokens, "Tokens per backend response")->check(CLI::PositiveNumber);
    aca_cmd->add_option("--api-model", ac.api_model, "Model name sent to a remote backend");
    aca_cmd->add_flag("--completion", ac.completion, "Use the completion request shape instead of chat");
    aca_cmd->add_option("--templates", ac.templates, "Template directory (default: shipped v1 templates)");
    aca_cmd->add_flag("--replace", ac.replace, "Overwrite an existing hub entry");
    aca_cmd->callback([&] {
        action = [&] {
            cmd_aca(ctx, ac);
            return kExitOk;
        };
    });

    // serve
    ServeArgs sv;
    auto* serve = app.add_subcommand("serve", "Run the HTTP steering service");
    sv.model.add(serve, false);
    serve->add_option("--hub", sv.hub, "Hub file")->required();
    serve->add_option("--host", sv.host, "Bind address")->capture_default_str();
    serve->add_option("--port", sv.port, "Port (0 picks a free one)")->capture_default_str();
    serve->add_option("--cors-origin", sv.options.cors_origin, "Access-Control-Allow-Origin value")
        ->capture_default_str();
    serve->add_option("--static-dir", sv.static_dir, "Serve static files (the control panel) from here");
    serve->add_option("--stream-delay-ms", sv.options.stream_delay_ms, "Pause after each streamed token");
    serve->add_option("--default-max-new", sv.options.default_max_new, "max_new when a message omits it");
    serve->callback([&] {
        action = [&] {
            cmd_serve(ctx, sv);
            return kExitOk;
        };
    });

    std::vector<std::string> argv_storage;
    argv_storage.reserve(args.size() + 1);
    argv_storage.push_back("steer");
    argv_storage.insert(argv_storage.end(), args.begin(), args.end());
    std::vector<char*> argv;
    for (auto& s : argv_storage) argv.push_back(s.data());

    try {
        app.parse(static_cast<int>(argv.size()), argv.data());
    } catch (const CLI::CallForHelp&) {
        out << app.help();
        return kExitOk;
    } catch (const CLI::CallForAllHelp&) {
        out << app.help("", CLI::AppFormatMode::All);
        return kExitOk;
    } catch (const CLI::CallForVersion&) {
        out << tool_version() << "\n";
        return kExitOk;
    } catch (const CLI::ParseError& e) {
        err << "error: " << e.what() << "\n";
        return kExitUsage;
    }
    if (!action) {
        err << "error: no command given\n";
        return kExitUsage;
    }
    try {
        return action();
    } catch (const UsageError& e) {
        err << "error: " << e.what() << "\n";
        return kExitUsage;
    } catch (const StageError& e) {
        err << "error: " << e.what() << "\n";
        return kExitRuntime;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return kExitRuntime;
    }
}

}  // namespace steer
