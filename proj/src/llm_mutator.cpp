#include "evoserve/llm_mutator.hpp"

#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <sstream>
#include <utility>

#include <httplib.h>
#include <nlohmann/json.hpp>

namespace evoserve {

namespace {

using ojson = nlohmann::ordered_json;

std::string num(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.12g", v);
  return buf;
}

long estimate_tokens(const std::string& system, const std::string& user) {
  return static_cast<long>((system.size() + user.size() + 3) / 4);
}

// Fixed instruction text. Everything the model needs that does not depend on
// the candidate at hand: what the cost is made of, which levers exist, and
// the exact reply format.
const std::string& system_text() {
  static const std::string text = R"(You tune serving policies for a cluster that hosts many LLMs at once. A policy decides when to recompute the placement of models onto GPUs and how the scheduler may move things; its cost over a workload trace is measured in seconds:

  T_total = t_sched of the first plan (computing and staging it while the cluster idles)
          + every interval's t_stale (serving under the outgoing plan while its successor is computed and staged)
          + every interval's t_reconfig (moving weights to enact the new plan)
          + every interval's t_serve (working off the demand with the plan in place).

Later intervals' t_sched overlaps serving and is reported separately, but it still feeds t_stale, so slow solvers are not free. Lower T_total is better. A policy fails outright when its scheduler cannot place the demand; a failed policy is infinitely bad.

The levers trade off against each other:
- Rescheduling often tracks the workload closely but pays t_stale and t_reconfig each time; rescheduling rarely lets the deployed plan drift from the demand and inflates t_serve.
- exact finds the best plans but can run long; greedy is fast and crude; local_search sits between. A larger time budget buys plan quality at the price of staleness.
- migration mode full repacks from scratch (best plans, heavy weight movement), penalized charges w per moved byte inside the objective (tempers movement), minimal only places displaced demand (cheap moves, can fail when capacity is tight).
- Larger batch sizes raise throughput per replica but cost memory; the curated ladder bounds what the scheduler may try.

You may edit exactly these fields:
  trigger.variant: string, one of "periodic", "workload_delta", "cost_benefit"
  trigger.period_steps: integer >= 1 (periodic: fire every k monitoring steps)
  trigger.delta: number >= 0 (workload_delta: relative change threshold)
  trigger.margin_seconds: number >= 0 (cost_benefit: required surplus over reconfiguration cost)
  trigger.mandatory_on_cluster_change: boolean
  scheduler.algorithm: string, one of "greedy", "local_search", "exact"
  scheduler.time_budget_seconds: number > 0
  scheduler.batch_policy: string, one of "curated", "exhaustive_up_to_cap"
  scheduler.curated_set: array of integers >= 1, nonempty when batch_policy is "curated"
  scheduler.tp_floor_rules: array of {"min_weight_bytes": number, "min_tp": integer}, min_tp a power of two in [1, 8]
  scheduler.secondary_objective_epsilon: number >= 0
  scheduler.relative_gap: number in [0, 1)
  scheduler.node_limit: integer >= 1
  scheduler.seed: integer >= 0
  scheduler.loose_variable_bounds: boolean
  migration.mode: string, one of "full", "penalized", "minimal"
  migration.w: number >= 0; must be 0 when migration.mode is "full"

Reply with exactly one fenced block tagged genome-edit holding a JSON array of edits, each an object with exactly the keys "path" and "value":

```genome-edit
[{"path": "trigger.period_steps", "value": 3}]
```

Propose one to three edits that should lower T_total for the situation described below, and keep the genome valid. Any reply without such a block, or with edits outside the fields above, is discarded.)";
  return text;
}

std::string parent_block(const Candidate& parent) {
  std::ostringstream os;
  const EvalReport& r = parent.report;
  if (r.failed)
    os << "Current policy (failed: " << r.failure_note << "):\n";
  else
    os << "Current policy (T_total " << num(r.t_total) << " seconds):\n";
  os << genome_to_json(parent.genome) << "\n";
  os << "N " << r.n << ", sum t_sched " << num(r.sum_sched) << ", sum t_stale "
     << num(r.sum_stale) << ", sum t_reconfig " << num(r.sum_reconfig)
     << ", sum t_serve " << num(r.sum_serve) << ", T_total " << num(r.t_total);
  return os.str();
}

}  // namespace

void validate_endpoint(const LlmEndpointConfig& cfg) {
  if (cfg.base_url.empty()) throw LlmError("llm endpoint: base_url is empty");
  if (cfg.completion_path.empty() || cfg.completion_path[0] != '/')
    throw LlmError("llm endpoint: completion_path must start with /");
  if (cfg.models.empty()) throw LlmError("llm endpoint: no models configured");
  double sum = 0;
  for (const auto& mw : cfg.models) {
    if (mw.model.empty()) throw LlmError("llm endpoint: model name is empty");
    if (!(mw.weight >= 0))
      throw LlmError("llm endpoint: model weight for " + mw.model +
                     " is negative");
    sum += mw.weight;
  }
  if (std::abs(sum - 1.0) > 1e-9)
    throw LlmError("llm endpoint: model weights sum to " + num(sum) +
                   ", expected 1");
  if (!(cfg.temperature >= 0))
    throw LlmError("llm endpoint: temperature is negative");
  if (cfg.max_tokens < 1) throw LlmError("llm endpoint: max_tokens below 1");
  if (!(cfg.request_timeout_seconds > 0))
    throw LlmError("llm endpoint: request timeout must be positive");
  if (cfg.retry_budget < 0)
    throw LlmError("llm endpoint: retry budget is negative");
}

MutationPrompt assemble_prompt(const Candidate& parent,
                               const std::vector<FeedbackDelta>& deltas,
                               const PopulationContext& pop,
                               long max_prompt_tokens) {
  const std::string& system = system_text();

  // Droppable context, oldest first, so trimming forgets the stalest fact.
  std::vector<std::string> items;
  for (const auto& s : pop.recent_strategies)
    items.push_back("Recently tried elsewhere: " + s);
  for (const auto& d : deltas) items.push_back(d.text);
  if (std::isfinite(pop.best_fitness))
    items.push_back("Best T_total seen so far: " + num(pop.best_fitness) +
                    " seconds.");
  const std::string anchor = parent_block(parent);

  size_t from = 0;
  std::string user;
  for (;;) {
    user.clear();
    for (size_t i = from; i < items.size(); ++i) {
      user += items[i];
      user += "\n\n";
    }
    user += anchor;
    if (estimate_tokens(system, user) <= max_prompt_tokens) break;
    if (from == items.size())
      throw LlmError("prompt budget of " + std::to_string(max_prompt_tokens) +
                     " tokens cannot fit the instructions and the policy");
    ++from;
  }
  return {system, user, estimate_tokens(system, user)};
}

std::string edit_summary(const std::vector<GenomeEdit>& edits) {
  std::string s;
  for (const auto& e : edits) {
    if (!s.empty()) s += ", ";
    s += e.path + "=" + e.value_json;
  }
  return s;
}

std::vector<GenomeEdit> parse_genome_edits(const std::string& reply) {
  const std::string fence = "```genome-edit";
  const size_t open = reply.find(fence);
  if (open == std::string::npos)
    throw LlmError("reply has no genome-edit block");
  const size_t body = reply.find('\n', open);
  const size_t close =
      body == std::string::npos ? std::string::npos : reply.find("```", body);
  if (close == std::string::npos)
    throw LlmError("genome-edit block never closes");

  ojson arr;
  try {
    arr = ojson::parse(reply.substr(body + 1, close - body - 1));
  } catch (const ojson::parse_error& e) {
    throw LlmError(std::string("genome-edit block is not JSON: ") + e.what());
  }
  if (!arr.is_array())
    throw LlmError("genome-edit block must hold a JSON array");
  if (arr.empty()) throw LlmError("genome-edit block holds no edits");

  std::vector<GenomeEdit> edits;
  for (const auto& el : arr) {
    if (!el.is_object() || el.size() != 2 || !el.contains("path") ||
        !el.contains("value"))
      throw LlmError(
          "each edit carries exactly the keys \"path\" and \"value\"");
    const ojson& p = el.at("path");
    if (!p.is_string() || p.get<std::string>().empty())
      throw LlmError("edit path must be a nonempty string");
    edits.push_back({p.get<std::string>(), el.at("value").dump()});
  }
  return edits;
}

PolicyGenome apply_genome_edits(const PolicyGenome& base,
                                const std::vector<GenomeEdit>& edits) {
  if (edits.empty()) throw LlmError("no edits to apply");

  ojson doc = ojson::parse(genome_to_json(base));
  for (const auto& e : edits) {
    std::vector<std::string> parts;
    std::string part;
    std::istringstream ps(e.path);
    while (std::getline(ps, part, '.')) parts.push_back(part);

    // Editable surface: existing leaves under the three behaviour sections.
    // Whole-section swaps, new keys, and array interiors all stay off limits.
    const bool rooted =
        parts.size() >= 2 && (parts[0] == "trigger" || parts[0] == "scheduler" ||
                              parts[0] == "migration");
    if (!rooted) throw LlmError("unknown or non-editable path: " + e.path);
    ojson* node = &doc[parts[0]];
    for (size_t i = 1; i + 1 < parts.size(); ++i) {
      if (!node->is_object() || !node->contains(parts[i]))
        throw LlmError("unknown or non-editable path: " + e.path);
      node = &(*node)[parts[i]];
    }
    if (!node->is_object() || !node->contains(parts.back()))
      throw LlmError("unknown or non-editable path: " + e.path);

    ojson value;
    try {
      value = ojson::parse(e.value_json);
    } catch (const ojson::parse_error&) {
      throw LlmError("edit value for " + e.path + " is not JSON");
    }
    (*node)[parts.back()] = std::move(value);
  }

  // The stored id belongs to the base genome; blank it so the reparse
  // recomputes instead of rejecting the mismatch.
  doc["genome_id"] = "";
  PolicyGenome g;
  try {
    g = genome_from_json(doc.dump());
  } catch (const GenomeError& err) {
    throw LlmError(std::string("edit rejected: ") + err.what());
  }
  g.lineage.parent = base.genome_id;
  g.lineage.mutation = "llm " + edit_summary(edits);
  return finalize_genome(std::move(g));
}

HttpChatTransport::HttpChatTransport(LlmEndpointConfig cfg)
    : cfg_(std::move(cfg)) {}

std::string HttpChatTransport::complete(const ChatRequest& rq) {
  ojson body;
  body["model"] = rq.model;
  body["messages"] = ojson::array({ojson{{"role", "system"}, {"content", rq.system}},
                                   ojson{{"role", "user"}, {"content", rq.user}}});
  body["temperature"] = rq.temperature;
  body["max_tokens"] = rq.max_tokens;

  httplib::Client cli(cfg_.base_url);
  const auto sec = static_cast<time_t>(cfg_.request_timeout_seconds);
  const auto usec =
      static_cast<long>((cfg_.request_timeout_seconds - sec) * 1e6);
  cli.set_connection_timeout(sec, usec);
  cli.set_read_timeout(sec, usec);
  cli.set_write_timeout(sec, usec);

  // The key value goes into the header and nowhere else; errors and logs
  // must never carry it.
  httplib::Headers headers;
  if (!cfg_.api_key_env.empty()) {
    const char* key = std::getenv(cfg_.api_key_env.c_str());
    if (key && *key)
      headers.emplace("Authorization", std::string("Bearer ") + key);
  }

  auto res = cli.Post(cfg_.completion_path, headers, body.dump(),
                      "application/json");
  if (!res)
    throw LlmUnavailable("endpoint request failed: " +
                         httplib::to_string(res.error()));
  if (res->status != 200)
    throw LlmUnavailable("endpoint returned HTTP " +
                         std::to_string(res->status));
  try {
    const ojson reply = ojson::parse(res->body);
    return reply.at("choices").at(0).at("message").at("content")
        .get<std::string>();
  } catch (const std::exception& e) {
    throw LlmUnavailable(std::string("endpoint reply envelope unreadable: ") +
                         e.what());
  }
}

std::vector<GenomeEdit> propose_mutation(const MutationPrompt& prompt,
                                         const LlmEndpointConfig& cfg,
                                         LlmTransport& transport,
                                         std::mt19937_64& rng,
                                         std::string* model_used) {
  validate_endpoint(cfg);

  // One model per proposal; retries stay on the same pick so an ensemble
  // member's flakiness is charged to that member.
  double r = std::uniform_real_distribution<double>(0.0, 1.0)(rng);
  const std::string* pick = &cfg.models.back().model;
  double acc = 0;
  for (const auto& mw : cfg.models) {
    acc += mw.weight;
    if (r < acc) {
      pick = &mw.model;
      break;
    }
  }
  if (model_used) *model_used = *pick;

  ChatRequest rq{*pick, prompt.system, prompt.user, cfg.temperature,
                 cfg.max_tokens};
  const int attempts = 1 + std::max(0, cfg.retry_budget);
  std::string reply;
  std::string last;
  bool got = false;
  for (int a = 0; a < attempts && !got; ++a) {
    try {
      reply = transport.complete(rq);
      got = true;
    } catch (const LlmUnavailable& e) {
      last = e.what();
    }
  }
  if (!got)
    throw LlmUnavailable("endpoint unavailable after " +
                         std::to_string(attempts) + " attempts: " + last);

  // A readable transport answer with unusable content is not retried; the
  // caller falls back instead of burning the budget on a confused model.
  return parse_genome_edits(reply);
}

LlmGenomeMutator::LlmGenomeMutator(LlmEndpointConfig cfg,
                                   LlmTransport& transport)
    : cfg_(std::move(cfg)), transport_(transport) {
  validate_endpoint(cfg_);
}

PolicyGenome LlmGenomeMutator::mutate(const Candidate& parent,
                                      const FeedbackDelta* delta,
                                      std::mt19937_64& rng) {
  best_seen_ = std::min(best_seen_, parent.fitness());

  if (!down_) {
    ++proposals_;
    try {
      std::vector<FeedbackDelta> deltas;
      if (delta) deltas.push_back(*delta);
      const MutationPrompt prompt = assemble_prompt(
          parent, deltas, PopulationContext{best_seen_, recent_},
          cfg_.max_tokens);
      std::string model;
      const auto edits =
          propose_mutation(prompt, cfg_, transport_, rng, &model);
      PolicyGenome g = apply_genome_edits(parent.genome, edits);
      g.lineage.mutation = "llm(" + model + ") " + edit_summary(edits);
      ++accepted_;
      recent_.push_back(g.lineage.mutation);
      if (recent_.size() > 5) recent_.erase(recent_.begin());
      return g;
    } catch (const LlmUnavailable& e) {
      // Transport failure after retries: stop asking for the rest of the
      // run rather than stalling every candidate on a dead endpoint.
      down_ = true;
      last_error_ = e.what();
      ++fallbacks_;
    } catch (const LlmError& e) {
      last_error_ = e.what();
      ++fallbacks_;
    }
  } else {
    ++fallbacks_;
  }

  PolicyGenome g = mutate_rule_based(parent, delta, rng);
  recent_.push_back(g.lineage.mutation);
  if (recent_.size() > 5) recent_.erase(recent_.begin());
  return g;
}

}  // namespace evoserve
