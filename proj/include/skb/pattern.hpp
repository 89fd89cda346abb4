#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>

namespace skb {

enum class Provenance { fixed_seed, vlm_learned, expert_edited };

std::string_view to_string(Provenance p);
Provenance provenance_from_string(std::string_view s);

enum class GateOutcome { accepted, low_quality, low_novelty };

std::string_view to_string(GateOutcome g);
GateOutcome gate_outcome_from_string(std::string_view s);

/// Who decided on a pattern outside the automatic gate, and what the gate said.
struct DecisionRecord {
  std::string decided_by;
  std::int64_t decided_at = 0;  // seconds since epoch
  GateOutcome gate_verdict = GateOutcome::accepted;
  std::string action;  // accept | edit

  bool operator==(const DecisionRecord&) const = default;
};

struct PatternDescription {
  std::string id;
  std::string text;
  std::string species;
  Provenance provenance = Provenance::vlm_learned;
  double quality = 0.0;
  int created_iteration = 0;
  std::optional<double> admission_novelty;
  std::optional<std::string> source_digest;
  std::optional<DecisionRecord> decision;

  bool operator==(const PatternDescription&) const = default;
};

}  // namespace skb
