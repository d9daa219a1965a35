#include "meta/llm.hpp"

#include <charconv>
#include <cstdlib>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "httplib.h"
#include "json.hpp"

namespace meta {

using nlohmann::json;

namespace {

// shortest round-trip decimal, matching how fitnesses appear in transcripts
std::string format_double(double v) {
    char buf[64];
    auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, ptr);
}

constexpr int kMaxSizeDrift = 40;
constexpr int kMaxSizeOptimizer = 60;

std::string history_entry(const ProposalRecord& rec) {
    json j;
    j["name"] = rec.name;
    j["code"] = rec.code;
    std::string out = j.dump();
    // fitness appended outside the JSON dump to keep its plain decimal form
    out.insert(out.size() - 1, ", \"fitness\": " + format_double(rec.fitness));
    return out;
}

} // namespace

std::string build_prompt(ProposalKind kind, const dsl::Signature& sig,
                         const std::vector<ProposalRecord>& history) {
    if (history.empty()) throw std::invalid_argument("build_prompt: empty history (no warm start)");
    std::ostringstream os;
    const bool drift = kind == ProposalKind::Drift;
    os << "You are a machine learning researcher who is designing a new "
       << (drift ? "drift function" : "optimisation algorithm")
       << " for reinforcement learning. When you respond, output a JSON where the first key "
          "(\"thought\") corresponds to your thought process when designing the next function. "
          "The second key (\"name\") corresponds to the name of your next function. Finally, the "
          "last key (\"code\") corresponds to the exact expression that you would like to try. "
          "Here is an example:\n\n";
    if (drift) {
        os << "{\"thought\": \"Based on the previous outputs, I should try to tanh the "
              "function.\",\n\"name\": \"tanh_clip\",\n\"code\": \"tanh(relu((r - clip(r, 1 - "
              "eps, 1 + eps)) * A))\"}\n\n";
    } else {
        os << "{\"thought\": \"Based on the previous outputs, I should try replacing the gradient "
              "with m_0_99 to incorporate momentum.\",\n\"name\": \"SGD_mom_0_99\",\n\"code\": "
              "\"lr * m_0_99\"}\n\n";
    }
    os << "You are deeply familiar with "
       << (drift ? "drift functions" : "optimisation algorithms")
       << " for reinforcement learning from the literature. Be creative and reference prior "
          "literature when possible.\n\n";
    os << "Your code must be a single expression in the following language, not general Python. "
          "Unary functions: neg, abs, log, exp, tanh, relu, sin, cos, sgn, square. Binary "
          "operators: +, -, *, /, ^, and the functions min(a, b), max(a, b). Ternary functions: "
          "clip(x, lo, hi), where(cond, a, b). Constants are plain numbers. Do not define helper "
          "functions, do not use any names other than the inputs listed below. The expression may "
          "use at most "
       << (drift ? kMaxSizeDrift : kMaxSizeOptimizer) << " nodes.\n\n";
    if (drift) {
        os << "Drift functions use the ratio and advantage to limit changes to the policy after "
              "updating. To be a valid drift function, the function must be non-negative "
              "everywhere, zero at identity (when r=1) and have a gradient of zero with respect "
              "to r at r=1. It can be easier to guarantee this by using functions of (r-1) or "
              "log(r).\n";
    } else {
        os << "Your expression computes the update that will be subtracted from each parameter "
              "of the policy network at every optimisation step.\n";
    }
    os << "The inputs are:\n";
    for (const auto& [name, desc] : sig.vars)
        os << "`" << name << "' is " << desc << ".\n";
    os << "You may also use branching functions such as where or take the maximum of two "
          "values.\n\n";
    os << "The user will then return to you a fitness that corresponds to the performance of the "
          "resulting model on a downstream task. Your goal is to maximize performance.\n\n";
    os << "Here are the functions tried so far, and their fitness:\n";
    for (const auto& rec : history) os << history_entry(rec) << "\n";
    os << "\nPlease generate the next one.";
    return os.str();
}

ProposalRecord parse_response(const std::string& text, const dsl::Signature& sig, int max_size) {
    ProposalRecord rec;
    // locate the outermost JSON object, tolerating surrounding prose
    const std::size_t start = text.find('{');
    if (start == std::string::npos) {
        rec.error = "format error: no JSON object found in response";
        return rec;
    }
    std::size_t depth = 0, end = std::string::npos;
    bool in_string = false, escaped = false;
    for (std::size_t i = start; i < text.size(); ++i) {
        const char c = text[i];
        if (in_string) {
            if (escaped) escaped = false;
            else if (c == '\\') escaped = true;
            else if (c == '"') in_string = false;
        } else if (c == '"') {
            in_string = true;
        } else if (c == '{') {
            ++depth;
        } else if (c == '}') {
            if (--depth == 0) { end = i; break; }
        }
    }
    if (end == std::string::npos) {
        rec.error = "format error: unterminated JSON object";
        return rec;
    }
    json j;
    try {
        j = json::parse(text.substr(start, end - start + 1));
    } catch (const json::exception& e) {
        rec.error = std::string("format error: ") + e.what();
        return rec;
    }
    for (const char* key : {"thought", "name", "code"}) {
        if (!j.contains(key) || !j[key].is_string()) {
            rec.error = std::string("format error: missing key \"") + key + "\"";
            return rec;
        }
    }
    rec.thought = j["thought"].get<std::string>();
    rec.name = j["name"].get<std::string>();
    rec.code = j["code"].get<std::string>();
    try {
        rec.parsed = dsl::parse(rec.code, sig, max_size);
    } catch (const dsl::ParseError& e) {
        rec.error = std::string("validation error at position ") +
                    std::to_string(e.position) + ": " + e.what();
    } catch (const std::exception& e) {
        rec.error = std::string("validation error: ") + e.what();
    }
    return rec;
}

std::string check_drift_validity(const dsl::ExprPtr& expr, RngStream& rng) {
    // zero at identity on sampled advantages
    for (int i = 0; i < 16; ++i) {
        const double a = rng.normal();
        const double v = dsl::eval_expr(expr, {{"r", 1.0}, {"A", a}, {"eps", 0.2}});
        if (std::fabs(v) > 1e-6)
            return "the drift is not zero at identity: D(r=1, A=" + format_double(a) +
                   ") = " + format_double(v);
    }
    // non-negative on a sampled (r, A) grid
    for (int i = 0; i < 256; ++i) {
        const double r = std::exp(rng.uniform(-2.0, 2.0));
        const double a = rng.normal(0.0, 2.0);
        const double v = dsl::eval_expr(expr, {{"r", r}, {"A", a}, {"eps", 0.2}});
        if (v < -1e-9)
            return "the drift is negative: D(r=" + format_double(r) +
                   ", A=" + format_double(a) + ") = " + format_double(v);
    }
    return {};
}

ProposeResult propose_loop(LlmClient& client, ProposalKind kind, const dsl::Signature& sig,
                           const ProposalRecord& warm_start, const ProposalFitnessFn& fitness_fn,
                           int budget, RngStream& rng) {
    if (!warm_start.has_fitness)
        throw std::invalid_argument("propose_loop: warm start fitness must be measured");
    const int max_size = kind == ProposalKind::Drift ? kMaxSizeDrift : kMaxSizeOptimizer;

    ProposeResult result;
    result.best = warm_start;
    result.conversation.budget = budget;
    result.conversation.warm_start = warm_start;

    std::vector<ProposalRecord> history = {warm_start};
    auto& messages = result.conversation.messages;
    messages.push_back({"user", build_prompt(kind, sig, history)});

    int evaluated = 0;
    int consecutive_failures = 0;
    while (evaluated < budget) {
        std::string reply;
        try {
            reply = client.complete(messages);
        } catch (const std::exception&) {
            result.aborted = true;
            break;
        }
        messages.push_back({"model", reply});
        ProposalRecord rec = parse_response(reply, sig, max_size);
        if (rec.parsed && kind == ProposalKind::Drift) {
            std::string why = check_drift_validity(rec.parsed, rng);
            if (!why.empty()) {
                rec.parsed = nullptr;
                rec.error = "validation error: " + why;
            }
        }
        if (!rec.parsed) {
            if (++consecutive_failures > 3) {
                result.aborted = true;
                break;
            }
            messages.push_back({"user", "Code not valid. Error:\n" + rec.error +
                                            "\nPlease generate the next one."});
            continue;
        }
        consecutive_failures = 0;
        rec.fitness = fitness_fn(rec.parsed);
        rec.has_fitness = true;
        ++evaluated;
        history.push_back(rec);
        result.evaluated.push_back(rec);
        if (rec.fitness > result.best.fitness) result.best = rec;
        messages.push_back({"user", "Fitness: " + format_double(rec.fitness) +
                                        ".\nPlease generate the next one."});
    }
    return result;
}

MockLlmClient::MockLlmClient(std::vector<std::string> responses)
    : responses_(std::move(responses)) {}

MockLlmClient MockLlmClient::from_file(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("MockLlmClient: cannot open " + path);
    json j = json::parse(is);
    return MockLlmClient(j.get<std::vector<std::string>>());
}

MockLlmClient MockLlmClient::from_transcript(const Conversation& conv) {
    std::vector<std::string> replies;
    for (const auto& m : conv.messages)
        if (m.role == "model") replies.push_back(m.content);
    return MockLlmClient(std::move(replies));
}

std::string MockLlmClient::complete(const std::vector<ChatMessage>&) {
    if (calls_ >= static_cast<int>(responses_.size()))
        throw std::runtime_error("MockLlmClient: script exhausted");
    return responses_[calls_++];
}

HttpLlmClient::HttpLlmClient(LlmEndpoint endpoint) : endpoint_(std::move(endpoint)) {
    const char* key = std::getenv(endpoint_.api_key_env.c_str());
    if (!key || !*key)
        throw std::runtime_error("HttpLlmClient: environment variable " + endpoint_.api_key_env +
                                 " is not set");
    api_key_ = key;
}

std::string HttpLlmClient::complete(const std::vector<ChatMessage>& messages) {
    // split base_url into host part and path prefix
    std::string url = endpoint_.base_url;
    std::size_t scheme = url.find("://");
    std::size_t path_start = url.find('/', scheme == std::string::npos ? 0 : scheme + 3);
    std::string host = path_start == std::string::npos ? url : url.substr(0, path_start);
    std::string prefix = path_start == std::string::npos ? "" : url.substr(path_start);

    json body;
    body["model"] = endpoint_.model;
    body["temperature"] = endpoint_.temperature;
    body["messages"] = json::array();
    for (const auto& m : messages)
        body["messages"].push_back(
            {{"role", m.role == "model" ? "assistant" : "user"}, {"content", m.content}});

    httplib::Client cli(host);
    cli.set_connection_timeout(endpoint_.timeout_s);
    cli.set_read_timeout(endpoint_.timeout_s);
    httplib::Headers headers = {{"Authorization", "Bearer " + api_key_}};

    std::string last_error;
    for (int attempt = 0; attempt <= endpoint_.retries; ++attempt) {
        auto res = cli.Post(prefix + "/chat/completions", headers, body.dump(),
                            "application/json");
        if (!res) {
            last_error = "transport error: " + httplib::to_string(res.error());
            continue;
        }
        if (res->status != 200) {
            last_error = "HTTP " + std::to_string(res->status) + ": " + res->body;
            continue;
        }
        try {
            json j = json::parse(res->body);
            return j.at("choices").at(0).at("message").at("content").get<std::string>();
        } catch (const json::exception& e) {
            last_error = std::string("malformed completion response: ") + e.what();
        }
    }
    throw std::runtime_error("HttpLlmClient: " + last_error);
}

void save_transcript(const Conversation& conv, const std::string& path) {
    json j;
    j["budget"] = conv.budget;
    j["warm_start"] = {{"thought", conv.warm_start.thought},
                       {"name", conv.warm_start.name},
                       {"code", conv.warm_start.code},
                       {"fitness", conv.warm_start.fitness}};
    j["messages"] = json::array();
    for (const auto& m : conv.messages)
        j["messages"].push_back({{"role", m.role}, {"content", m.content}});
    std::ofstream os(path);
    if (!os) throw std::runtime_error("save_transcript: cannot open " + path);
    os << j.dump(2) << "\n";
}

Conversation load_transcript(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("load_transcript: cannot open " + path);
    json j = json::parse(is);
    Conversation conv;
    conv.budget = j.at("budget").get<int>();
    conv.warm_start.thought = j.at("warm_start").at("thought").get<std::string>();
    conv.warm_start.name = j.at("warm_start").at("name").get<std::string>();
    conv.warm_start.code = j.at("warm_start").at("code").get<std::string>();
    conv.warm_start.fitness = j.at("warm_start").at("fitness").get<double>();
    conv.warm_start.has_fitness = true;
    for (const auto& m : j.at("messages"))
        conv.messages.push_back(
            {m.at("role").get<std::string>(), m.at("content").get<std::string>()});
    return conv;
}

} // namespace meta
