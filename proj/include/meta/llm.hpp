#pragma once

#include <functional>
#include <string>
#include <vector>

#include "meta/rng.hpp"
#include "meta/symdsl.hpp"

namespace meta {

struct ProposalRecord {
    std::string thought;
    std::string name;
    std::string code;
    dsl::ExprPtr parsed;       // null on parse/validation failure
    std::string error;         // set iff parsed is null
    double fitness = 0.0;
    bool has_fitness = false;  // set iff parsed and evaluation completed
};

struct ChatMessage {
    std::string role; // "user" or "model"
    std::string content;
};

struct Conversation {
    std::vector<ChatMessage> messages;
    int budget = 0;
    ProposalRecord warm_start;
};

struct LlmEndpoint {
    std::string base_url;      // e.g. http://host:port/v1
    std::string model;
    std::string api_key_env = "METARL_API_KEY"; // key is read from the environment only
    double temperature = 0.7;
    int timeout_s = 120;
    int retries = 3;
};

class LlmClient {
public:
    virtual ~LlmClient() = default;
    // Returns the model's reply text; throws std::runtime_error on transport failure.
    virtual std::string complete(const std::vector<ChatMessage>& messages) = 0;
};

// Replays scripted responses in order; throws when the script is exhausted.
class MockLlmClient : public LlmClient {
public:
    explicit MockLlmClient(std::vector<std::string> responses);
    static MockLlmClient from_file(const std::string& path); // JSON array of strings
    static MockLlmClient from_transcript(const Conversation& conv);

    std::string complete(const std::vector<ChatMessage>& messages) override;
    int calls() const { return calls_; }

private:
    std::vector<std::string> responses_;
    int calls_ = 0;
};

// OpenAI-style chat completions over HTTP.
class HttpLlmClient : public LlmClient {
public:
    explicit HttpLlmClient(LlmEndpoint endpoint);
    std::string complete(const std::vector<ChatMessage>& messages) override;

private:
    LlmEndpoint endpoint_;
    std::string api_key_;
};

enum class ProposalKind { Drift, OptimizerFf };

// The first user message: task description, DSL constraints, every input
// description from the signature, the proposal history with fitnesses.
std::string build_prompt(ProposalKind kind, const dsl::Signature& sig,
                         const std::vector<ProposalRecord>& history);

// Extracts thought/name/code from the outermost JSON object in `text`
// (tolerating surrounding prose) and parses code against sig. On failure the
// record's `error` names the missing key or carries the parser's message.
ProposalRecord parse_response(const std::string& text, const dsl::Signature& sig, int max_size);

using ProposalFitnessFn = std::function<double(const dsl::ExprPtr&)>;

struct ProposeResult {
    ProposalRecord best;
    Conversation conversation;
    std::vector<ProposalRecord> evaluated; // excludes the warm start
    bool aborted = false;                  // transport failure or repeated invalid proposals
};

// Sequential propose-evaluate loop. Parse/validation failures get a
// "Code not valid. Error: ..." message and consume a retry (max 3 consecutive),
// not a budget unit; successes get "Fitness: <value>." feedback. Drift
// proposals are additionally checked empirically for validity. Returns the
// argmax-fitness record, warm start included.
ProposeResult propose_loop(LlmClient& client, ProposalKind kind, const dsl::Signature& sig,
                           const ProposalRecord& warm_start, const ProposalFitnessFn& fitness_fn,
                           int budget, RngStream& rng);

// Empirical drift validity: |D(1,A)| <= 1e-6 on sampled A and D >= -1e-9 on a
// sampled (r, A) grid. Returns an explanatory message, empty when valid.
std::string check_drift_validity(const dsl::ExprPtr& expr, RngStream& rng);

void save_transcript(const Conversation& conv, const std::string& path);
Conversation load_transcript(const std::string& path);

} // namespace meta
