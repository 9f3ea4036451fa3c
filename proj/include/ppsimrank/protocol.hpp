#pragma once

#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ppsimrank/graph.hpp"
#include "ppsimrank/transport.hpp"

namespace ppsr {

enum class Role { cryptographer, calculator, contributor };
Role role_named(const std::string& name);
const char* role_name(Role r);

struct PartySpec {
  std::string id;
  Role role;
};

struct ProtocolConfig {
  double d_in = 0.8;
  double d_out = 0.8;
  int iterations = 5;
  int frac_bits = 16;
  int width = 0;  // 0: derived from the joint graph sizes
  std::string scheme = "integer";
  SchemeParams params = SchemeParams::for_preset(Preset::desk);
  std::vector<PartySpec> roster;
  bool record_transcript = false;
  std::uint64_t seed = 1;
  std::size_t table_refill = 64;

  void validate() const;  // exactly one cryptographer and one calculator
  const PartySpec& party(const std::string& id) const;
  std::string cryptographer_id() const;
  std::string calculator_id() const;
  std::vector<std::string> contributor_ids() const;
  std::vector<std::string> others(const std::string& id) const;
};

// Encrypted node-pair adjacency, V-pairs x U-pairs, diagonals included.
struct PairMatrix {
  PairIndex rows{0};  // V side
  PairIndex cols{0};  // U side
  std::vector<Cipher> pi;

  const Cipher& at(std::size_t x, std::size_t y) const { return pi[x * cols.size() + y]; }
  Cipher& at(std::size_t x, std::size_t y) { return pi[x * cols.size() + y]; }
};

struct ScoreVector {
  std::vector<CipherString> v_scores;  // PairIndex(v) order
  std::vector<CipherString> u_scores;  // PairIndex(u) order
};

struct Normalizers {
  std::vector<CipherString> v;  // off-diagonal V-pairs
  std::vector<CipherString> u;  // off-diagonal U-pairs
};

// --- calculator-side building blocks ---------------------------------------

PairMatrix build_pair_matrix(CircuitContext& ctx, const std::vector<std::vector<Cipher>>& cipher_rows);

// raw integer degree as a W-bit string: sum of zero-extended single-bit strings
CipherString degree_string(CircuitContext& ctx, std::span<const Cipher> bits, const FixedLayout& layout);

// enc_decay / (deg1 * deg2); decrypts to 0 when either degree is zero
CipherString compute_normalizer(CircuitContext& ctx, const CipherString& deg1, const CipherString& deg2,
                                const CipherString& enc_decay);

Normalizers compute_all_normalizers(CircuitContext& ctx, const std::vector<std::vector<Cipher>>& cipher_rows,
                                    const FixedLayout& layout, double d_in, double d_out);

ScoreVector initial_scores(CircuitContext& ctx, const PairIndex& pv, const PairIndex& pu,
                           const FixedLayout& layout);

// K rounds; each updates V-pair scores from U-pair scores, then U-pair
// scores from the updated V-pair scores; diagonals re-pinned to enc(1.0)
void iterate_scores(CircuitContext& ctx, const PairMatrix& m, ScoreVector& theta, const Normalizers& norm,
                    int rounds);

std::pair<std::vector<CipherString>, std::vector<std::uint64_t>> mask_scores(
    CircuitContext& ctx, std::span<const CipherString> u_offdiag, Rng& rng);

// blocking re-encryption round trip through the cryptographer
Cipher recrypt_remote(Endpoint& ep, const std::string& cryptographer, const Cipher& c, int assumed_noise_bits);

// --- protocol runs -----------------------------------------------------------

struct RunReport {
  std::string scheme;
  std::string preset;
  int width = 0;
  int frac_bits = 0;
  int iterations = 0;
  std::size_t m = 0, n = 0, parties = 0;
  nlohmann::json op_counters;  // calculator's per-class counters
  std::map<std::string, double> phase_seconds;
  std::map<std::string, std::uint64_t> phase_hom_mul;
  std::map<std::string, std::uint64_t> phase_hom_add;
  std::uint64_t recrypt_round_trips = 0;
  nlohmann::json traffic = nlohmann::json::object();  // party -> peer -> counts
  bool oracle_checked = false;
  bool oracle_match = false;

  nlohmann::json to_json() const;
};

struct RunOutcome {
  std::vector<std::string> u_ids;
  FixedLayout layout{0, 0};
  std::vector<std::uint64_t> u_raw;  // PairIndex(u) order, diagonals included
  RunReport report;
  std::map<std::string, std::string> transcripts;  // party -> jsonl (when recorded)

  ScoreTable table() const;
};

// one party's state machine over an endpoint; `own` must carry this party's id
RunOutcome run_party(const ProtocolConfig& cfg, const std::string& party_id, const BipartiteGraph& own,
                     Endpoint& ep);

RunOutcome run_two_party(const ProtocolConfig& cfg, const BipartiteGraph& alice, const BipartiteGraph& bob,
                         InProcNetwork& net);

RunOutcome run_multi_party(const ProtocolConfig& cfg, std::span<const BipartiteGraph> graphs, InProcNetwork& net);

// default roster: first graph is the cryptographer, second the calculator
std::vector<PartySpec> default_roster(std::span<const BipartiteGraph> graphs);

// --- privacy checks -----------------------------------------------------------

struct PrivacyScan {
  bool ok = true;
  std::vector<std::string> violations;
};

// scans each party's received-message transcript against the protocol's
// privacy invariants; sk_hex is the serialized secret integer
PrivacyScan scan_transcripts(const ProtocolConfig& cfg, const std::map<std::string, std::string>& transcripts,
                             const std::string& sk_hex);

}  // namespace ppsr
