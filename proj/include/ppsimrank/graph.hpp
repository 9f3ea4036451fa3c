#pragma once

#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "ppsimrank/circuits.hpp"

namespace ppsr {

// One party's half of the bipartite network: exclusive vertices `v_nodes`,
// the shared vertex set `u_nodes` (ordering identical across parties), and
// an unweighted |V| x |U| edge bit matrix.
struct BipartiteGraph {
  std::string party_id;
  std::vector<std::string> v_nodes;
  std::vector<std::string> u_nodes;
  std::vector<std::vector<std::uint8_t>> edges;

  std::size_t v_count() const { return v_nodes.size(); }
  std::size_t u_count() const { return u_nodes.size(); }
  void validate() const;
};

// Edge-list text format:
//   #party <id>
//   #u <id1> <id2> ...
//   #v <id1> <id2> ...        (optional; declares isolated v nodes / ordering)
//   v_id<TAB>u_id             (one edge per line; duplicates tolerated)
BipartiteGraph parse_edge_list(std::istream& in, const std::string& source_name);
BipartiteGraph parse_edge_list_text(const std::string& text, const std::string& source_name);
BipartiteGraph load_edges(const std::string& path);
std::string edge_list_text(const BipartiteGraph& g);

// joint graph: rows concatenated in the given order; u orderings must agree
BipartiteGraph merge_graphs(std::span<const BipartiteGraph> parts);

// one n-bit row per v node (connections and disconnections both encoded)
std::vector<std::vector<std::uint8_t>> encode_bitvectors(const BipartiteGraph& g);

// Unordered pairs over k ordered nodes: first the C(k,2) pairs <a,b> with
// a < b in lexicographic order, then the k diagonal pairs <a,a>.
struct PairIndex {
  int k = 0;

  explicit PairIndex(int nodes = 0) : k(nodes) {}
  std::size_t offdiag_count() const { return static_cast<std::size_t>(k) * (k - 1) / 2; }
  std::size_t size() const { return offdiag_count() + static_cast<std::size_t>(k); }
  bool is_diagonal(std::size_t idx) const { return idx >= offdiag_count(); }
  std::size_t index_of(int a, int b) const;     // unordered; O(1)
  std::pair<int, int> pair_at(std::size_t idx) const;
};

struct ScoreTable {
  std::vector<std::string> u_ids;
  std::vector<double> u_scores;  // PairIndex(u) order
  std::vector<std::string> v_ids;
  std::vector<double> v_scores;  // PairIndex(v) order; empty when withheld
};

enum class SimrankVariant { classic, matrix };
SimrankVariant variant_named(const std::string& name);

// Plaintext SimRank on the joint graph. Each round updates V-pair scores
// from U-pair scores, then U-pair scores from the updated V-pair scores;
// diagonals are pinned to 1 and zero-degree pairs score 0. The classic
// variant evaluates the full double sum over ordered neighbor pairs; the
// matrix variant weighs each unordered node pair once via the pair matrix,
// which differs from classic exactly when a pair is matched both ways.
ScoreTable simrank_plain(const BipartiteGraph& joint, double d_in, double d_out, int iters, SimrankVariant variant);

// Node-pair adjacency of the derived pair graph, V-pairs x U-pairs:
// eps = (e[x1][y1] & e[x2][y2]) | (e[x1][y2] & e[x2][y1]); a diagonal pair
// contributes its single AND term.
std::vector<std::vector<std::uint8_t>> pair_matrix_plain(const BipartiteGraph& joint);

// Fixed-point shadow of the encrypted pipeline: identical truncation at
// every step, so a correct protocol run reproduces it bit for bit.
struct FixedScores {
  FixedLayout layout;
  std::vector<std::uint64_t> u_raw;  // PairIndex(u) order
  std::vector<std::uint64_t> v_raw;  // PairIndex(v) order
};
FixedScores simrank_fixed(const BipartiteGraph& joint, double d_in, double d_out, int iters,
                          const FixedLayout& layout);

// W = frac + headroom so per-round sums can never wrap
FixedLayout pipeline_layout(int frac_bits, std::size_t m, std::size_t n);

void write_scores_tsv(std::ostream& out, const std::vector<std::string>& u_ids,
                      std::span<const std::uint64_t> u_raw, const FixedLayout& layout);
void write_scores_tsv(std::ostream& out, const ScoreTable& table, int frac_bits);

}  // namespace ppsr
