#pragma once

#include <limits>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "evoserve/evolve.hpp"

namespace evoserve {

class LlmError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Transport-level failure: endpoint unreachable, timed out, or answering
// outside the protocol. Retryable, unlike a content rejection.
class LlmUnavailable : public LlmError {
 public:
  using LlmError::LlmError;
};

struct ModelWeight {
  std::string model;
  double weight = 1.0;
};

struct LlmEndpointConfig {
  std::string base_url;  // scheme://host[:port], plain HTTP
  std::string completion_path = "/v1/chat/completions";
  // Sampled once per proposal; an ensemble lists several entries.
  std::vector<ModelWeight> models = {{"default", 1.0}};
  double temperature = 0.7;
  long max_tokens = 16384;  // prompt budget and per-request generation cap
  // Name of the environment variable holding the key. The value goes into
  // the Authorization header and nowhere else, never into errors or logs.
  std::string api_key_env = "EVOSERVE_LLM_API_KEY";
  double request_timeout_seconds = 30.0;
  int retry_budget = 2;  // extra attempts after the first, transport errors only
};

void validate_endpoint(const LlmEndpointConfig& cfg);

struct MutationPrompt {
  std::string system;  // fixed: cost structure, trade-offs, schema, protocol
  std::string user;    // situational: parent, feedback, population context
  long token_estimate = 0;  // chars/4, rounded up, across both sections
};

struct PopulationContext {
  double best_fitness = std::numeric_limits<double>::infinity();
  std::vector<std::string> recent_strategies;  // oldest first
};

// Deterministic text for one mutation request. Over the token budget the
// situational items drop oldest first; the fixed section and the parent block
// never drop, and a budget too small for even those throws.
MutationPrompt assemble_prompt(const Candidate& parent,
                               const std::vector<FeedbackDelta>& deltas,
                               const PopulationContext& pop,
                               long max_prompt_tokens = 16384);

// One field edit: a dotted path into the genome document and the replacement
// value as JSON text, e.g. {"trigger.period_steps", "3"}.
struct GenomeEdit {
  std::string path;
  std::string value_json;
};

std::string edit_summary(const std::vector<GenomeEdit>& edits);

// Extracts the fenced genome-edit block from a raw model reply and parses it
// into edits. Anything off-protocol throws LlmError naming what was wrong.
std::vector<GenomeEdit> parse_genome_edits(const std::string& reply);

// Applies edits to a copy of base and revalidates the result. Paths must hit
// existing fields under trigger, scheduler, or migration; anything else, any
// type mismatch, and any violated genome invariant throws LlmError. Only
// genomes that pass the full validation ever come back.
PolicyGenome apply_genome_edits(const PolicyGenome& base,
                                const std::vector<GenomeEdit>& edits);

struct ChatRequest {
  std::string model;
  std::string system;
  std::string user;
  double temperature = 0.7;
  long max_tokens = 16384;
};

// Seam between the mutator and the wire. Implementations return the first
// choice's text and throw LlmUnavailable on anything else.
struct LlmTransport {
  virtual ~LlmTransport() = default;
  virtual std::string complete(const ChatRequest& rq) = 0;
};

// Chat-completion client over plain HTTP. Stateless per request; safe to
// call from several evaluation threads at once.
class HttpChatTransport final : public LlmTransport {
 public:
  explicit HttpChatTransport(LlmEndpointConfig cfg);
  std::string complete(const ChatRequest& rq) override;

 private:
  LlmEndpointConfig cfg_;
};

// Sends one completion request for the prompt, retrying transport failures
// up to the retry budget, and parses the reply into edits. The model is
// sampled from the configured weights once per call; model_used, when given,
// receives the pick. Content errors never retry.
std::vector<GenomeEdit> propose_mutation(const MutationPrompt& prompt,
                                         const LlmEndpointConfig& cfg,
                                         LlmTransport& transport,
                                         std::mt19937_64& rng,
                                         std::string* model_used = nullptr);

// Drop-in mutator for the evolution loop. Each call prompts the endpoint and
// applies the edits; any rejection falls back to the rule table for that
// candidate, and a transport failure (after retries) sticks: the endpoint is
// not asked again for the rest of the run. Calls arrive serially from the
// evolution loop, so the internal tallies need no locks.
class LlmGenomeMutator final : public GenomeMutator {
 public:
  LlmGenomeMutator(LlmEndpointConfig cfg, LlmTransport& transport);

  PolicyGenome mutate(const Candidate& parent, const FeedbackDelta* delta,
                      std::mt19937_64& rng) override;

  long proposals() const { return proposals_; }
  long accepted() const { return accepted_; }
  long fallbacks() const { return fallbacks_; }
  bool unavailable() const { return down_; }
  const std::string& last_error() const { return last_error_; }

 private:
  LlmEndpointConfig cfg_;
  LlmTransport& transport_;
  bool down_ = false;
  long proposals_ = 0;
  long accepted_ = 0;
  long fallbacks_ = 0;
  double best_seen_ = std::numeric_limits<double>::infinity();
  std::vector<std::string> recent_;
  std::string last_error_;
};

}  // namespace evoserve
