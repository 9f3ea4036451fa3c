#include "ppsimrank/graph.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <ostream>
#include <sstream>

namespace ppsr {

void BipartiteGraph::validate() const {
  if (edges.size() != v_nodes.size()) fail(Errc::invalid_params, "edge matrix row count mismatch");
  for (const auto& row : edges) {
    if (row.size() != u_nodes.size()) fail(Errc::invalid_params, "edge matrix column count mismatch");
    for (auto e : row)
      if (e > 1) fail(Errc::invalid_params, "edge entries must be bits");
  }
}

namespace {

std::vector<std::string> split_ws(const std::string& s) {
  std::istringstream iss(s);
  std::vector<std::string> out;
  std::string tok;
  while (iss >> tok) out.push_back(tok);
  return out;
}

}  // namespace

BipartiteGraph parse_edge_list(std::istream& in, const std::string& source_name) {
  BipartiteGraph g;
  std::map<std::string, std::size_t> u_index, v_index;
  std::string line;
  int lineno = 0;
  auto err = [&](const std::string& what) {
    fail(Errc::parse_error, source_name + ":" + std::to_string(lineno) + ": " + what);
  };

  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (line[0] == '#') {
      auto toks = split_ws(line.substr(1));
      if (toks.empty()) err("empty directive");
      if (toks[0] == "party") {
        if (toks.size() != 2) err("#party expects one id");
        g.party_id = toks[1];
      } else if (toks[0] == "u") {
        if (!g.u_nodes.empty()) err("duplicate #u header");
        for (std::size_t i = 1; i < toks.size(); ++i) {
          if (!u_index.emplace(toks[i], g.u_nodes.size()).second) err("duplicate u id '" + toks[i] + "'");
          g.u_nodes.push_back(toks[i]);
        }
        if (g.u_nodes.empty()) err("#u header declares no nodes");
        for (auto& row : g.edges) row.resize(g.u_nodes.size(), 0);
      } else if (toks[0] == "v") {
        for (std::size_t i = 1; i < toks.size(); ++i) {
          if (v_index.count(toks[i])) err("duplicate v id '" + toks[i] + "'");
          v_index.emplace(toks[i], g.v_nodes.size());
          g.v_nodes.push_back(toks[i]);
          g.edges.emplace_back(g.u_nodes.size(), 0);
        }
      } else {
        err("unknown directive '#" + toks[0] + "'");
      }
      continue;
    }
    // edge line: v_id <TAB> u_id
    auto tab = line.find('\t');
    if (tab == std::string::npos) err("expected v_id<TAB>u_id");
    std::string v = line.substr(0, tab);
    std::string u = line.substr(tab + 1);
    if (v.empty() || u.empty()) err("empty vertex id");
    if (g.u_nodes.empty()) err("edge before #u header");
    auto uit = u_index.find(u);
    if (uit == u_index.end()) err("edge names undeclared u id '" + u + "'");
    auto vit = v_index.find(v);
    if (vit == v_index.end()) {
      vit = v_index.emplace(v, g.v_nodes.size()).first;
      g.v_nodes.push_back(v);
      g.edges.emplace_back(g.u_nodes.size(), 0);
    }
    g.edges[vit->second][uit->second] = 1;  // duplicates are idempotent
  }
  if (g.u_nodes.empty()) fail(Errc::parse_error, source_name + ": missing #u header");
  if (g.party_id.empty()) fail(Errc::parse_error, source_name + ": missing #party header");
  for (auto& row : g.edges) row.resize(g.u_nodes.size(), 0);
  g.validate();
  return g;
}

BipartiteGraph parse_edge_list_text(const std::string& text, const std::string& source_name) {
  std::istringstream iss(text);
  return parse_edge_list(iss, source_name);
}

BipartiteGraph load_edges(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail(Errc::io_error, "cannot open edge file '" + path + "'");
  return parse_edge_list(in, path);
}

std::string edge_list_text(const BipartiteGraph& g) {
  std::ostringstream out;
  out << "#party " << g.party_id << "\n#u";
  for (const auto& u : g.u_nodes) out << ' ' << u;
  out << "\n#v";
  for (const auto& v : g.v_nodes) out << ' ' << v;
  out << "\n";
  for (std::size_t i = 0; i < g.v_nodes.size(); ++i)
    for (std::size_t j = 0; j < g.u_nodes.size(); ++j)
      if (g.edges[i][j]) out << g.v_nodes[i] << '\t' << g.u_nodes[j] << "\n";
  return out.str();
}

BipartiteGraph merge_graphs(std::span<const BipartiteGraph> parts) {
  if (parts.empty()) fail(Errc::invalid_params, "no graphs to merge");
  BipartiteGraph joint;
  joint.party_id = "joint";
  joint.u_nodes = parts[0].u_nodes;
  for (const auto& g : parts) {
    if (g.u_nodes != joint.u_nodes) fail(Errc::invalid_params, "parties disagree on the shared u ordering");
    for (std::size_t i = 0; i < g.v_count(); ++i) {
      joint.v_nodes.push_back(g.party_id + ":" + g.v_nodes[i]);
      joint.edges.push_back(g.edges[i]);
    }
  }
  joint.validate();
  return joint;
}

std::vector<std::vector<std::uint8_t>> encode_bitvectors(const BipartiteGraph& g) { return g.edges; }

std::size_t PairIndex::index_of(int a, int b) const {
  if (a == b) return offdiag_count() + static_cast<std::size_t>(a);
  if (a > b) std::swap(a, b);
  // pairs <a,*> start after all pairs with smaller first element
  std::size_t base = static_cast<std::size_t>(a) * static_cast<std::size_t>(k) -
                     static_cast<std::size_t>(a) * (a + 1) / 2;
  return base + static_cast<std::size_t>(b - a - 1);
}

std::pair<int, int> PairIndex::pair_at(std::size_t idx) const {
  if (is_diagonal(idx)) {
    int a = static_cast<int>(idx - offdiag_count());
    return {a, a};
  }
  int a = 0;
  std::size_t remaining = idx;
  while (remaining >= static_cast<std::size_t>(k - a - 1)) {
    remaining -= static_cast<std::size_t>(k - a - 1);
    ++a;
  }
  return {a, a + 1 + static_cast<int>(remaining)};
}

SimrankVariant variant_named(const std::string& name) {
  if (name == "classic") return SimrankVariant::classic;
  if (name == "matrix") return SimrankVariant::matrix;
  fail(Errc::invalid_params, "unknown variant '" + name + "' (expected classic or matrix)");
}

namespace {

struct PairWeights {
  // weight of (v-pair x, u-pair y): matrix variant counts an unordered match
  // once; classic counts both orientations of the double sum
  std::vector<std::vector<std::uint8_t>> matrix;
  std::vector<std::vector<std::uint8_t>> classic;
};

PairWeights pair_weights(const BipartiteGraph& g) {
  const int m = static_cast<int>(g.v_count()), n = static_cast<int>(g.u_count());
  PairIndex pv(m), pu(n);
  PairWeights w;
  w.matrix.assign(pv.size(), std::vector<std::uint8_t>(pu.size(), 0));
  w.classic = w.matrix;
  for (std::size_t x = 0; x < pv.size(); ++x) {
    auto [v1, v2] = pv.pair_at(x);
    for (std::size_t y = 0; y < pu.size(); ++y) {
      auto [u1, u2] = pu.pair_at(y);
      std::uint8_t case1 = g.edges[static_cast<std::size_t>(v1)][static_cast<std::size_t>(u1)] &
                           g.edges[static_cast<std::size_t>(v2)][static_cast<std::size_t>(u2)];
      std::uint8_t case2 = g.edges[static_cast<std::size_t>(v1)][static_cast<std::size_t>(u2)] &
                           g.edges[static_cast<std::size_t>(v2)][static_cast<std::size_t>(u1)];
      if (v1 == v2 || u1 == u2) {
        // degenerate: the two cases coincide, a single AND term
        w.matrix[x][y] = case1;
        w.classic[x][y] = case1;
      } else {
        w.matrix[x][y] = case1 | case2;
        w.classic[x][y] = static_cast<std::uint8_t>(case1 + case2);
      }
    }
  }
  return w;
}

std::vector<std::uint64_t> degrees_v(const BipartiteGraph& g) {
  std::vector<std::uint64_t> d(g.v_count(), 0);
  for (std::size_t i = 0; i < g.v_count(); ++i)
    for (std::size_t j = 0; j < g.u_count(); ++j) d[i] += g.edges[i][j];
  return d;
}

std::vector<std::uint64_t> degrees_u(const BipartiteGraph& g) {
  std::vector<std::uint64_t> d(g.u_count(), 0);
  for (std::size_t j = 0; j < g.u_count(); ++j)
    for (std::size_t i = 0; i < g.v_count(); ++i) d[j] += g.edges[i][j];
  return d;
}

}  // namespace

ScoreTable simrank_plain(const BipartiteGraph& joint, double d_in, double d_out, int iters,
                         SimrankVariant variant) {
  if (!(d_in > 0.0 && d_in < 1.0 && d_out > 0.0 && d_out < 1.0))
    fail(Errc::invalid_params, "decay factors must lie in (0,1)");
  if (iters < 0) fail(Errc::invalid_params, "iteration count must be nonnegative");
  joint.validate();

  const int m = static_cast<int>(joint.v_count()), n = static_cast<int>(joint.u_count());
  PairIndex pv(m), pu(n);
  PairWeights w = pair_weights(joint);
  const auto& weights = variant == SimrankVariant::matrix ? w.matrix : w.classic;
  auto dv = degrees_v(joint), du = degrees_u(joint);

  std::vector<double> sv(pv.size(), 0.0), su(pu.size(), 0.0);
  for (std::size_t i = pv.offdiag_count(); i < pv.size(); ++i) sv[i] = 1.0;
  for (std::size_t i = pu.offdiag_count(); i < pu.size(); ++i) su[i] = 1.0;

  for (int round = 0; round < iters; ++round) {
    for (std::size_t x = 0; x < pv.offdiag_count(); ++x) {
      auto [v1, v2] = pv.pair_at(x);
      double denom = static_cast<double>(dv[static_cast<std::size_t>(v1)]) *
                     static_cast<double>(dv[static_cast<std::size_t>(v2)]);
      if (denom == 0.0) {
        sv[x] = 0.0;
        continue;
      }
      double sum = 0.0;
      for (std::size_t y = 0; y < pu.size(); ++y) sum += weights[x][y] * su[y];
      sv[x] = d_out / denom * sum;
    }
    for (std::size_t y = 0; y < pu.offdiag_count(); ++y) {
      auto [u1, u2] = pu.pair_at(y);
      double denom = static_cast<double>(du[static_cast<std::size_t>(u1)]) *
                     static_cast<double>(du[static_cast<std::size_t>(u2)]);
      if (denom == 0.0) {
        su[y] = 0.0;
        continue;
      }
      double sum = 0.0;
      for (std::size_t x = 0; x < pv.size(); ++x) sum += weights[x][y] * sv[x];
      su[y] = d_in / denom * sum;
    }
  }

  ScoreTable table;
  table.u_ids = joint.u_nodes;
  table.u_scores = std::move(su);
  table.v_ids = joint.v_nodes;
  table.v_scores = std::move(sv);
  return table;
}

std::vector<std::vector<std::uint8_t>> pair_matrix_plain(const BipartiteGraph& joint) {
  return pair_weights(joint).matrix;
}

FixedLayout pipeline_layout(int frac_bits, std::size_t m, std::size_t n) {
  std::size_t k = std::max({m, n, std::size_t{1}});
  std::size_t cap = 2 * k * k;
  int h = 0;
  while ((std::size_t{1} << h) < cap) ++h;
  FixedLayout layout{frac_bits + h + 2, frac_bits};
  layout.validate();
  return layout;
}

FixedScores simrank_fixed(const BipartiteGraph& joint, double d_in, double d_out, int iters,
                          const FixedLayout& layout) {
  layout.validate();
  joint.validate();
  const int m = static_cast<int>(joint.v_count()), n = static_cast<int>(joint.u_count());
  PairIndex pv(m), pu(n);
  auto eps = pair_matrix_plain(joint);
  auto dv = degrees_v(joint), du = degrees_u(joint);

  const std::uint64_t mask = layout.raw_limit() - 1;
  const std::uint64_t one = 1ULL << layout.frac;
  const std::uint64_t enc_dout = raw_from_bits(encode_fixed(d_out, layout));
  const std::uint64_t enc_din = raw_from_bits(encode_fixed(d_in, layout));

  // normalizers: floor(enc(d) / (D1*D2)), zero when the product is zero
  auto normalizers = [&](const PairIndex& p, const std::vector<std::uint64_t>& deg, std::uint64_t enc_d) {
    std::vector<std::uint64_t> out(p.offdiag_count(), 0);
    for (std::size_t i = 0; i < p.offdiag_count(); ++i) {
      auto [a, b] = p.pair_at(i);
      std::uint64_t prod = (deg[static_cast<std::size_t>(a)] * deg[static_cast<std::size_t>(b)]) & mask;
      out[i] = prod == 0 ? 0 : (enc_d / prod) & mask;
    }
    return out;
  };
  auto dv_norm = normalizers(pv, dv, enc_dout);
  auto du_norm = normalizers(pu, du, enc_din);

  std::vector<std::uint64_t> sv(pv.size(), 0), su(pu.size(), 0);
  for (std::size_t i = pv.offdiag_count(); i < pv.size(); ++i) sv[i] = one;
  for (std::size_t i = pu.offdiag_count(); i < pu.size(); ++i) su[i] = one;

  auto fixed_mul = [&](std::uint64_t a, std::uint64_t b) {
    return static_cast<std::uint64_t>((static_cast<unsigned __int128>(a) * b) >> layout.frac) & mask;
  };

  for (int round = 0; round < iters; ++round) {
    for (std::size_t x = 0; x < pv.offdiag_count(); ++x) {
      std::uint64_t sum = 0;
      for (std::size_t y = 0; y < pu.size(); ++y)
        if (eps[x][y]) sum = (sum + su[y]) & mask;
      sv[x] = fixed_mul(dv_norm[x], sum);
    }
    for (std::size_t y = 0; y < pu.offdiag_count(); ++y) {
      std::uint64_t sum = 0;
      for (std::size_t x = 0; x < pv.size(); ++x)
        if (eps[x][y]) sum = (sum + sv[x]) & mask;
      su[y] = fixed_mul(du_norm[y], sum);
    }
  }

  FixedScores out;
  out.layout = layout;
  out.u_raw = std::move(su);
  out.v_raw = std::move(sv);
  return out;
}

void write_scores_tsv(std::ostream& out, const std::vector<std::string>& u_ids,
                      std::span<const std::uint64_t> u_raw, const FixedLayout& layout) {
  PairIndex pu(static_cast<int>(u_ids.size()));
  if (u_raw.size() != pu.size()) fail(Errc::invalid_params, "score vector size does not match pair index");
  for (std::size_t i = 0; i < pu.size(); ++i) {
    auto [a, b] = pu.pair_at(i);
    out << u_ids[static_cast<std::size_t>(a)] << '\t' << u_ids[static_cast<std::size_t>(b)] << '\t'
        << fixed_to_decimal(u_raw[i], layout) << "\n";
  }
}

void write_scores_tsv(std::ostream& out, const ScoreTable& table, int frac_bits) {
  FixedLayout layout{frac_bits + 2, frac_bits};
  PairIndex pu(static_cast<int>(table.u_ids.size()));
  std::vector<std::uint64_t> raw(pu.size());
  for (std::size_t i = 0; i < pu.size(); ++i)
    raw[i] = raw_from_bits(encode_fixed(table.u_scores[i], layout));
  write_scores_tsv(out, table.u_ids, raw, layout);
}

}  // namespace ppsr
